"""Image IO, dataset iteration, and a procedural face synthesizer.

Images live in [-1, 1] float tensors (C, H, W) inside the pipeline and as
8-bit PNG on disk.  The synthesizer draws soft ellipse "portraits" with a
natural or a vivid painterly palette so the pipeline can be trained and
evaluated without shipping any real data.
"""

import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InvalidArgumentError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def tensor_to_image(tensor):
    """(C, H, W) or (B, C, H, W) in [-1, 1] -> uint8 HWC array(s)."""
    if tensor.dim() == 4:
        return np.stack([tensor_to_image(t) for t in tensor])
    arr = tensor.detach().clamp(-1, 1).add(1).mul(127.5).round()
    return arr.to(torch.uint8).permute(1, 2, 0).numpy()


def image_to_tensor(arr):
    """uint8 HWC array -> (C, H, W) float tensor in [-1, 1]."""
    t = torch.from_numpy(np.ascontiguousarray(arr).copy()).float()
    if t.dim() == 2:
        t = t.unsqueeze(-1).expand(-1, -1, 3)
    return t.permute(2, 0, 1) / 127.5 - 1.0


def save_image(tensor, path):
    Image.fromarray(tensor_to_image(tensor)).save(path)


def load_image(path, resolution=None):
    """Load an image file; optionally center-crop to square then resize."""
    img = Image.open(path).convert("RGB")
    if resolution is not None:
        img = center_crop_resize(img, resolution)
    return image_to_tensor(np.asarray(img))


def center_crop_resize(img, resolution):
    """Crop the largest centered square, then bilinear-resize."""
    w, h = img.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    return img.resize((resolution, resolution), Image.BILINEAR)


class DatasetSource:
    """Deterministic loader over a directory of images.

    Files are enumerated in sorted order; ``batches`` yields an endless
    stream of (B, C, R, R) tensors with a seeded shuffle per epoch, so a
    given (directory, seed) pair always produces the same sequence.
    """

    def __init__(self, root, resolution, hflip=False):
        self.root = Path(root)
        if not self.root.is_dir():
            raise InvalidArgumentError(f"dataset directory {root} not found")
        self.paths = sorted(p for p in self.root.iterdir()
                            if p.suffix.lower() in IMAGE_EXTENSIONS)
        if not self.paths:
            raise InvalidArgumentError(f"no images under {root}")
        self.resolution = resolution
        self.hflip = hflip
        self._cache = {}

    def __len__(self):
        return len(self.paths)

    def get(self, index):
        if index not in self._cache:
            self._cache[index] = load_image(self.paths[index], self.resolution)
        return self._cache[index]

    def batches(self, batch_size, seed=0):
        gen = torch.Generator().manual_seed(seed)
        while True:
            order = torch.randperm(len(self.paths), generator=gen)
            for start in range(0, len(order) - batch_size + 1, batch_size):
                idx = order[start:start + batch_size]
                imgs = torch.stack([self.get(int(i)) for i in idx])
                if self.hflip:
                    flip = torch.rand(batch_size, generator=gen) < 0.5
                    imgs[flip] = torch.flip(imgs[flip], dims=[-1])
                yield imgs


# ---- procedural portraits ---------------------------------------------------

REAL_PALETTES = [
    ((0.82, 0.66, 0.52), (0.35, 0.22, 0.12)),   # skin / hair
    ((0.74, 0.55, 0.42), (0.12, 0.10, 0.08)),
    ((0.92, 0.78, 0.66), (0.55, 0.38, 0.18)),
    ((0.60, 0.44, 0.32), (0.08, 0.07, 0.06)),
]

STYLE_PALETTES = [
    ((0.95, 0.35, 0.55), (0.10, 0.70, 0.85)),   # pop pinks / cyans
    ((0.98, 0.80, 0.15), (0.60, 0.15, 0.75)),
    ((0.20, 0.90, 0.45), (0.95, 0.45, 0.10)),
    ((0.25, 0.45, 0.95), (0.95, 0.85, 0.30)),
]


def _ellipse_mask(res, cx, cy, rx, ry, softness=1.5):
    ys = torch.arange(res).float().unsqueeze(1)
    xs = torch.arange(res).float().unsqueeze(0)
    d = (((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2).sqrt()
    return torch.sigmoid((1.0 - d) * softness * res / 8)


def synth_face(resolution, seed, style=False):
    """Render one procedural portrait: background, head ellipse, two eyes,
    a mouth, and hair, with colors jittered per seed.

    style=True uses vivid palettes and heavier color jitter, standing in
    for an artistic-style domain.
    """
    gen = torch.Generator().manual_seed(seed)
    def u(a, b):
        return a + (b - a) * torch.rand((), generator=gen).item()
    palettes = STYLE_PALETTES if style else REAL_PALETTES
    skin, hair = palettes[seed % len(palettes)]
    jitter = 0.25 if style else 0.08
    def col(base):
        return torch.tensor([min(max(c + u(-jitter, jitter), 0.0), 1.0)
                             for c in base]).view(3, 1, 1)
    res = resolution
    bg_shade = u(0.2, 0.9) if style else u(0.55, 0.85)
    img = torch.full((3, res, res), bg_shade)
    if style:
        img = img * col((u(0, 1), u(0, 1), u(0, 1)))
    cx, cy = res * u(0.44, 0.56), res * u(0.46, 0.58)
    rx, ry = res * u(0.24, 0.33), res * u(0.30, 0.40)
    head = _ellipse_mask(res, cx, cy, rx, ry)
    img = img * (1 - head) + col(skin) * head
    hair_mask = _ellipse_mask(res, cx, cy - ry * 0.75, rx * 1.05, ry * 0.55)
    img = img * (1 - hair_mask) + col(hair) * hair_mask
    eye_dy = ry * u(0.05, 0.2)
    eye_dx = rx * u(0.35, 0.5)
    eye_r = res * u(0.02, 0.035)
    dark = col((0.05, 0.05, 0.08))
    for sign in (-1, 1):
        eye = _ellipse_mask(res, cx + sign * eye_dx, cy - eye_dy,
                            eye_r, eye_r, softness=3.0)
        img = img * (1 - eye) + dark * eye
    mouth = _ellipse_mask(res, cx, cy + ry * u(0.35, 0.5),
                          rx * u(0.3, 0.45), res * u(0.012, 0.03), softness=3.0)
    mouth_col = col((0.75, 0.25, 0.3)) if not style else col((u(0, 1), u(0, 1), u(0, 1)))
    img = img * (1 - mouth) + mouth_col * mouth
    return img * 2.0 - 1.0


def synth_batch(batch, resolution, seed, style=False):
    return torch.stack([synth_face(resolution, seed * 100003 + i, style)
                        for i in range(batch)])


def write_synth_dataset(root, count, resolution, seed=0, style=False):
    """Materialize a procedural dataset as PNGs; returns the directory."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        save_image(synth_face(resolution, seed * 100003 + i, style),
                   root / f"{'style' if style else 'face'}_{i:05d}.png")
    return root
