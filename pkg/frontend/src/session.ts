import type { PinnedStyle, StylizeMode, StylizeRequest } from './types.js';

export interface SessionSnapshot {
    sourceImage: string | null;
    activeModelId: string;
    pins: PinnedStyle[];
    mode: StylizeMode;
    alpha: number;
    jobIds: string[];
}

// Subset of the Storage interface we actually use, so tests can pass a Map.
export interface StorageLike {
    getItem(key: string): string | null;
    setItem(key: string, value: string): void;
}

const STORAGE_KEY = 'mmfs-studio-session';

function defaultSnapshot(): SessionSnapshot {
    return {
        sourceImage: null,
        activeModelId: 'base',
        pins: [],
        mode: 'random',
        alpha: 1.0,
        jobIds: [],
    };
}

/** Local session state: the uploaded source, the active model, pinned styles,
 * current mode, slider position, and submitted job ids.  Everything here is
 * either a local input or a handle the server returned, so a page refresh
 * restores the session from storage and re-fetches the rest. */
export class SessionStore {
    private state: SessionSnapshot;
    private storage: StorageLike | null;
    private listeners: Array<(s: SessionSnapshot) => void> = [];

    constructor(storage?: StorageLike | null) {
        this.storage = storage ?? null;
        this.state = this.load();
    }

    private load(): SessionSnapshot {
        if (this.storage) {
            const raw = this.storage.getItem(STORAGE_KEY);
            if (raw) {
                try {
                    return { ...defaultSnapshot(), ...JSON.parse(raw) };
                } catch {
                    // corrupt entry; start fresh
                }
            }
        }
        return defaultSnapshot();
    }

    private commit(): void {
        if (this.storage) {
            this.storage.setItem(STORAGE_KEY, JSON.stringify(this.state));
        }
        for (const listener of this.listeners) {
            listener(this.snapshot());
        }
    }

    subscribe(listener: (s: SessionSnapshot) => void): () => void {
        this.listeners.push(listener);
        return () => {
            this.listeners = this.listeners.filter((l) => l !== listener);
        };
    }

    snapshot(): SessionSnapshot {
        return JSON.parse(JSON.stringify(this.state));
    }

    setSourceImage(image: string | null): void {
        this.state.sourceImage = image;
        this.commit();
    }

    setActiveModelId(modelId: string): void {
        this.state.activeModelId = modelId;
        this.commit();
    }

    setMode(mode: StylizeMode): void {
        this.state.mode = mode;
        this.commit();
    }

    setAlpha(alpha: number): void {
        this.state.alpha = alpha;
        this.commit();
    }

    /** Pin a style; handles already pinned are ignored. */
    pinStyle(pin: PinnedStyle): void {
        if (this.state.pins.some((p) => p.wplusId === pin.wplusId)) {
            return;
        }
        this.state.pins.push(pin);
        this.commit();
    }

    unpinStyle(wplusId: string): void {
        this.state.pins = this.state.pins.filter((p) => p.wplusId !== wplusId);
        this.commit();
    }

    addJob(jobId: string): void {
        if (!this.state.jobIds.includes(jobId)) {
            this.state.jobIds.push(jobId);
            this.commit();
        }
    }

    canInterpolate(): boolean {
        return this.state.pins.length >= 2;
    }
}

/** Build the /stylize body for the current panel inputs.  Each mode sends
 * exactly the fields the service accepts for it; anything else is a client
 * bug the service would reject with a 400. */
export function buildStylizeRequest(
    mode: StylizeMode,
    sourceImage: string,
    opts: { seed?: number; modelId?: string; prompt?: string; referenceImage?: string; wplusId?: string } = {},
): StylizeRequest {
    const req: StylizeRequest = { image: sourceImage, mode };
    if (opts.modelId !== undefined) {
        req.model_id = opts.modelId;
    }
    switch (mode) {
        case 'random':
            req.seed = opts.seed ?? 0;
            break;
        case 'text':
            if (!opts.prompt) {
                throw new Error('text mode needs a prompt');
            }
            req.prompt = opts.prompt;
            break;
        case 'image':
            if (!opts.referenceImage) {
                throw new Error('image mode needs a reference image');
            }
            req.reference_image = opts.referenceImage;
            break;
        case 'wplus':
            if (!opts.wplusId) {
                throw new Error('wplus mode needs a style handle');
            }
            req.wplus_id = opts.wplusId;
            break;
    }
    return req;
}
