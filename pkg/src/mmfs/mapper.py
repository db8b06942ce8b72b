"""Transformer mapper from a joint-space embedding to per-layer styles.

A single d_c image/text embedding is broadcast-added to a learnable
positional embedding (one row per decoder style slot), run through a small
pre-norm transformer, and read out per-token into w+ — enabling text- and
image-conditioned stylization in one forward pass.  Trained by
self-reconstruction: styles predicted from a generated image should
reproduce that image.
"""

import torch
import torch.nn.functional as F
from torch import nn

from .adversarial import perceptual_loss
from .config import ModelProfile
from .errors import InvalidArgumentError
from .layers import TransformerBlock, seeded_randn


class StyleMapper(nn.Module):
    """Maps a (B, d_c) embedding to (B, n_l, d_w) styles.

    The output head is a zero-initialized linear layer whose bias can be
    set to a base style, so the untrained mapper emits a known-good w for
    every input (a stable starting point for training)."""

    def __init__(self, profile: ModelProfile, generator=None):
        super().__init__()
        self.profile = profile
        d_c = profile.backbone_embed
        self.n_l = profile.num_style_slots
        self.pos_embed = nn.Parameter(seeded_randn((self.n_l, d_c), generator) * 0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(d_c, profile.mapper_heads, generator=generator)
            for _ in range(profile.mapper_layers))
        self.norm = nn.LayerNorm(d_c)
        self.head = nn.Linear(d_c, profile.d_w)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def set_base_style(self, w):
        """Bias the output head so an untrained mapper emits `w` (d_w,)."""
        if w.dim() != 1 or w.shape[0] != self.profile.d_w:
            raise InvalidArgumentError(
                f"base style must be ({self.profile.d_w},), got {tuple(w.shape)}")
        with torch.no_grad():
            self.head.bias.copy_(w)

    def forward(self, f):
        return self.map_feature(f)

    def map_feature(self, f):
        """f: (d_c,) or (B, d_c) joint embedding -> (B, n_l, d_w) w+.

        f is unit-normalized (idempotent for backbone embeddings, which
        arrive normalized) and added to every positional-embedding row."""
        if f.dim() == 1:
            f = f.unsqueeze(0)
        if f.dim() != 2 or f.shape[-1] != self.pos_embed.shape[-1]:
            raise InvalidArgumentError(
                f"embedding must be (B, {self.pos_embed.shape[-1]}), "
                f"got {tuple(f.shape)}")
        x = F.normalize(f, dim=-1).unsqueeze(1) + self.pos_embed.unsqueeze(0)
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x))


def mapper_reconstruction_loss(mapper, backbone, prior, encoder, decoder, disc,
                               real_images, z, lambda_perc):
    """Self-reconstruction objective for mapper training.

    Builds the style target I_ref = decode(E(I_r), w(z)) from a random
    style code, then reconstructs it from the mapper's prediction on
    I_ref's own embedding: I_rec = decode(E(I_r), M(F(I_ref))).  Returns
    (loss, parts) where loss = L1 + lambda_perc * perceptual, both against
    I_ref, using the provided (frozen) discriminator.
    """
    from .backbones import resize_for_backbone
    from .generator import map_z_to_w

    with torch.no_grad():
        w = map_z_to_w(prior.mapping, z)
        grid = encoder(real_images)
        ref = decoder.decode(grid, w)
        embed = backbone.embed_image(
            resize_for_backbone(ref, backbone.resolution))
    wplus = mapper.map_feature(embed)
    recon = decoder.decode(grid, wplus)
    l1 = F.l1_loss(recon, ref)
    perc = perceptual_loss(disc, recon, ref)
    total = l1 + lambda_perc * perc
    return total, {"l1": float(l1.detach()), "perceptual": float(perc.detach())}
