// Uploads are resized in the browser before POSTing: the service works at a
// fixed square resolution and there is no point shipping camera-sized files.
export const MODEL_RESOLUTION = 64;

export interface CropBox {
    sx: number;
    sy: number;
    size: number;
}

/** Largest centered square inside a width × height image. */
export function centerCropBox(width: number, height: number): CropBox {
    const size = Math.min(width, height);
    return {
        sx: Math.floor((width - size) / 2),
        sy: Math.floor((height - size) / 2),
        size,
    };
}

export function dataUrlToBase64(dataUrl: string): string {
    const comma = dataUrl.indexOf(',');
    return comma >= 0 ? dataUrl.slice(comma + 1) : dataUrl;
}

/** Center-crop and resize an uploaded file to the model resolution, returning
 * base64 PNG bytes ready for the JSON body. */
export async function fileToModelPng(file: Blob, resolution: number = MODEL_RESOLUTION): Promise<string> {
    const bitmap = await createImageBitmap(file);
    try {
        const box = centerCropBox(bitmap.width, bitmap.height);
        const canvas = document.createElement('canvas');
        canvas.width = resolution;
        canvas.height = resolution;
        const ctx = canvas.getContext('2d');
        if (!ctx) {
            throw new Error('canvas 2d context unavailable');
        }
        ctx.drawImage(bitmap, box.sx, box.sy, box.size, box.size, 0, 0, resolution, resolution);
        return dataUrlToBase64(canvas.toDataURL('image/png'));
    } finally {
        bitmap.close();
    }
}
