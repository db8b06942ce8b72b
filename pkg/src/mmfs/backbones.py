"""Frozen feature backbones supplying tokens, keys and joint embeddings.

All guidance signals (structure keys, directional embeddings, projection
tokens) come from one frozen vision transformer so they live in consistent
spaces.  The bundled ToyBackbone is a small seeded random ViT with a
deterministic hashed text head; externally exported pretrained weights can
be attached through ``import_backbone_weights``.

Dimension conventions (declared on every backbone):
    d_c — joint embedding width (embed_image / embed_text outputs)
    d_t — token feature width (tokens() / keys() outputs)
    n_t — patch token count
"""

import hashlib
import json
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelProfile
from .errors import (CheckpointCorruptionError, CheckpointFormatError,
                     InvalidArgumentError)
from .layers import TransformerBlock

BACKBONE_FORMAT_VERSION = 1


class FeatureBackbone(nn.Module):
    """Interface every guidance backbone must provide.

    Implementations are frozen feature extractors over images at a declared
    resolution.  ``tokens``/``keys`` return (B, n_t, d_t) patch-token
    matrices (no class token); ``embed_image``/``embed_text`` return
    unit-norm (…, d_c) embeddings in a shared image/text space.  Layer
    indices are 1-based.
    """

    d_c: int
    d_t: int
    n_t: int
    num_layers: int
    resolution: int

    def tokens(self, image, layer=None):
        raise NotImplementedError

    def keys(self, image, layer=None, per_head=False):
        raise NotImplementedError

    def embed_image(self, image):
        raise NotImplementedError

    def embed_text(self, text):
        raise NotImplementedError


def resize_for_backbone(image, side):
    """Bilinear-resize a (B, C, H, W) image batch to (side, side).

    The single resize policy for every backbone input, so different
    backbone resolutions never drift apart in calling code."""
    if image.shape[-1] == side and image.shape[-2] == side:
        return image
    return F.interpolate(image, size=(side, side), mode="bilinear",
                         align_corners=False)


class ToyBackbone(FeatureBackbone):
    """Patch-embedding ViT with a joint image/text embedding head.

    Frozen at construction; every weight is drawn from a seeded generator so
    two backbones built with the same (profile, seed) are identical.  The
    text path hashes word uni/bi-grams into a seeded bucket table, giving
    stable prompt embeddings with no vocabulary file.
    """

    def __init__(self, profile: ModelProfile, seed=0):
        super().__init__()
        self.profile = profile
        self.seed = seed
        self.d_c = profile.backbone_embed
        self.d_t = profile.backbone_dim
        self.n_t = profile.backbone_tokens
        self.num_layers = profile.backbone_layers
        self.resolution = profile.resolution
        gen = torch.Generator().manual_seed(seed)
        p = profile.backbone_patch
        self.patch = nn.Conv2d(profile.img_channels, self.d_c, kernel_size=p,
                               stride=p)
        with torch.no_grad():
            self.patch.weight.copy_(
                torch.randn(self.patch.weight.shape, generator=gen) * 0.05)
            self.patch.bias.zero_()
        self.pos = nn.Parameter(torch.randn((1, self.n_t, self.d_c),
                                            generator=gen) * 0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(self.d_c, profile.backbone_heads,
                             qk_dim=self.d_t, generator=gen)
            for _ in range(self.num_layers))
        self.norm = nn.LayerNorm(self.d_c)
        # per-token projection into the d_t token space
        self.token_head = nn.Linear(self.d_c, self.d_t)
        # pooled projection into the joint d_c embedding space
        self.img_head = nn.Linear(self.d_c, self.d_c)
        for head in (self.token_head, self.img_head):
            with torch.no_grad():
                head.weight.copy_(torch.randn(head.weight.shape, generator=gen) * 0.05)
                head.bias.zero_()
        # hashed-bucket text table
        self.text_table = nn.Parameter(
            torch.randn((4096, self.d_c), generator=gen) * 0.05)
        for param in self.parameters():
            param.requires_grad_(False)
        self.eval()

    # ---- internals -------------------------------------------------------

    def _check_image(self, image):
        p = self.profile
        if image.dim() != 4 or image.shape[1] != p.img_channels \
                or image.shape[2] != self.resolution or image.shape[3] != self.resolution:
            raise InvalidArgumentError(
                f"backbone expects (B, {p.img_channels}, {self.resolution}, "
                f"{self.resolution}) images, got {tuple(image.shape)}; resize "
                "with resize_for_backbone first")

    def _resolve_layer(self, layer):
        layer = self.num_layers if layer is None else layer
        if not 1 <= layer <= self.num_layers:
            raise InvalidArgumentError(
                f"layer must be in 1..{self.num_layers}, got {layer}")
        return layer

    def _embed_patches(self, image):
        x = self.patch(image)                       # (B, d_c, g, g)
        x = x.flatten(2).transpose(1, 2)            # (B, n_t, d_c)
        return x + self.pos

    def _hidden(self, image, layer):
        x = self._embed_patches(image)
        for block in self.blocks[:layer]:
            x = block(x)
        return x

    # ---- public API ------------------------------------------------------

    def tokens(self, image, layer=None):
        """Patch tokens after transformer layer `layer` (1-based; default:
        last), projected per-token into the d_t space: (B, n_t, d_t)."""
        self._check_image(image)
        layer = self._resolve_layer(layer)
        return self.token_head(self.norm(self._hidden(image, layer)))

    def keys(self, image, layer=None, per_head=False):
        """Attention key projections at layer `layer` (1-based; default:
        last): (B, n_t, d_t), or (B, heads, n_t, d_t/heads) per head."""
        self._check_image(image)
        layer = self._resolve_layer(layer)
        x = self._hidden(image, layer - 1)
        k = self.blocks[layer - 1].keys(x)           # (B, n_t, d_t)
        if per_head:
            b, n, d = k.shape
            h = self.profile.backbone_heads
            return k.reshape(b, n, h, d // h).transpose(1, 2)
        return k

    def embed_image(self, image):
        """Joint-space image embedding, (B, d_c): LN -> mean -> linear -> L2."""
        self._check_image(image)
        hidden = self._hidden(image, self.num_layers)
        pooled = self.norm(hidden).mean(dim=1)
        return F.normalize(self.img_head(pooled), dim=-1)

    def embed_text(self, text):
        """Joint-space text embedding, (d_c,), from hashed word uni/bi-grams."""
        if not isinstance(text, str) or not text.strip():
            raise InvalidArgumentError("text must be a non-empty string")
        words = text.lower().split()
        grams = words + [" ".join(pair) for pair in zip(words, words[1:])]
        total = torch.zeros(self.d_c)
        for gram in grams:
            digest = hashlib.sha256(gram.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:8], "little") % self.text_table.shape[0]
            total = total + self.text_table[bucket]
        return F.normalize(total, dim=-1)


# ---- weight import/export --------------------------------------------------

def export_backbone_weights(backbone, path):
    """Serialize backbone weights: JSON manifest + raw f32 tensor files."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": BACKBONE_FORMAT_VERSION,
                "profile": backbone.profile.name, "seed": backbone.seed,
                "dims": {"d_c": backbone.d_c, "d_t": backbone.d_t,
                         "n_t": backbone.n_t, "num_layers": backbone.num_layers},
                "tensors": {}}
    state = backbone.state_dict()
    for name in sorted(state):
        tensor = state[name].detach().to(torch.float32).contiguous()
        blob = tensor.numpy().astype("<f4", copy=False).tobytes()
        fname = name.replace(".", "_") + ".bin"
        (path / fname).write_bytes(blob)
        manifest["tensors"][name] = {
            "file": fname, "shape": list(tensor.shape),
            "sha256": hashlib.sha256(blob).hexdigest()}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                   sort_keys=True))
    return manifest


def import_backbone_weights(backbone, path):
    """Load weights exported by ``export_backbone_weights`` into `backbone`.

    Raises CheckpointFormatError / CheckpointCorruptionError naming the
    offending tensor when files, shapes or digests do not match."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointFormatError(f"no manifest.json under {path}")
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("format_version")
    if version != BACKBONE_FORMAT_VERSION:
        raise CheckpointFormatError(
            f"unsupported backbone format version {version!r}")
    state = backbone.state_dict()
    expected = set(state)
    provided = set(manifest.get("tensors", {}))
    if expected != provided:
        missing = sorted(expected - provided)
        extra = sorted(provided - expected)
        raise CheckpointFormatError(
            f"tensor set mismatch: missing {missing}, unexpected {extra}")
    new_state = {}
    for name, meta in manifest["tensors"].items():
        blob_path = path / meta["file"]
        if not blob_path.exists():
            raise CheckpointFormatError(
                f"missing blob file for tensor {name}: {meta['file']}")
        blob = blob_path.read_bytes()
        digest = hashlib.sha256(blob).hexdigest()
        if digest != meta["sha256"]:
            raise CheckpointCorruptionError(
                name, f"digest mismatch for tensor {name}")
        tensor = torch.frombuffer(bytearray(blob), dtype=torch.float32)
        shape = tuple(meta["shape"])
        if tensor.numel() != state[name].numel():
            raise CheckpointCorruptionError(
                name, f"size mismatch for tensor {name}: file has "
                f"{tensor.numel()} values, model expects {state[name].numel()}")
        if shape != tuple(state[name].shape):
            raise CheckpointFormatError(
                f"shape mismatch for tensor {name}: {shape} vs "
                f"{tuple(state[name].shape)}")
        new_state[name] = tensor.reshape(shape)
    backbone.load_state_dict(new_state)
    for param in backbone.parameters():
        param.requires_grad_(False)
    return backbone
