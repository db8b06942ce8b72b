"""Latent sampling, mapping network, and the style-conditioned decoder.

The decoder starts from a spatial feature grid (either produced by the
image encoder or by the prior's low-resolution stack) and synthesizes an
image 16x the grid side through four upsampling stages, each driven by
per-layer style vectors with skip-accumulated RGB output.
"""

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelProfile
from .errors import InvalidArgumentError, UnavailableStateError
from .layers import (EqualizedLinear, StyledConv, ToRGB, act, pixel_norm,
                     seeded_randn)


def sample_z(batch, d_z, generator):
    """Draw latent codes from the standard normal prior."""
    if batch < 1:
        raise InvalidArgumentError("batch must be >= 1")
    return seeded_randn((batch, d_z), generator)


class MappingNetwork(nn.Module):
    """Pixel-norm + n_map equalized FC layers with gained leaky-rectifier."""

    def __init__(self, d_z, d_w, n_layers, generator=None):
        super().__init__()
        dims = [d_z] + [d_w] * n_layers
        self.layers = nn.ModuleList(
            EqualizedLinear(dims[i], dims[i + 1], generator=generator)
            for i in range(n_layers))

    def forward(self, z):
        w = pixel_norm(z)
        for layer in self.layers:
            w = act(layer(w))
        return w


def map_z_to_w(mapping, z):
    """Run the mapping network; validates latent dimensionality."""
    expected = mapping.layers[0].weight.shape[1]
    if z.dim() != 2 or z.shape[1] != expected:
        raise InvalidArgumentError(
            f"latent must be (B, {expected}), got {tuple(z.shape)}")
    return mapping(z)


def expand_styles(w, num_slots):
    """Broadcast a single w (B, d) to per-slot styles (B, n_l, d), or
    validate an already-expanded (B, n_l, d) tensor."""
    if w.dim() == 2:
        return w.unsqueeze(1).expand(-1, num_slots, -1)
    if w.dim() == 3:
        if w.shape[1] != num_slots:
            raise InvalidArgumentError(
                f"expected {num_slots} style slots, got {w.shape[1]}")
        return w
    raise InvalidArgumentError("styles must be (B, d) or (B, n_l, d)")


class Decoder(nn.Module):
    """Grid-to-image synthesis network.

    Layout (14 style slots for 4 upsampling stages):
      slot 0: conv at the grid resolution
      slot 1: ToRGB at the grid resolution
      then per stage i in 0..3: up-conv, conv, ToRGB  (slots 2+3i .. 4+3i)
    """

    def __init__(self, profile: ModelProfile, generator=None):
        super().__init__()
        chans = profile.decoder_channels
        d_w = profile.d_w
        res = profile.align
        self.profile = profile
        self.input_conv = StyledConv(profile.grid_channels, chans[0], 3, d_w,
                                     res, generator=generator)
        self.input_rgb = ToRGB(chans[0], d_w, profile.img_channels, generator=generator)
        self.up_convs = nn.ModuleList()
        self.convs = nn.ModuleList()
        self.rgbs = nn.ModuleList()
        for i in range(4):
            res *= 2
            self.up_convs.append(StyledConv(chans[i], chans[i + 1], 3, d_w, res,
                                            upsample=True, generator=generator))
            self.convs.append(StyledConv(chans[i + 1], chans[i + 1], 3, d_w, res,
                                         generator=generator))
            self.rgbs.append(ToRGB(chans[i + 1], d_w, profile.img_channels,
                                   generator=generator))

    @property
    def num_style_slots(self):
        return 2 + 3 * len(self.up_convs)

    def forward(self, grid, styles):
        return self.decode(grid, styles)

    def decode(self, grid, styles):
        p = self.profile
        if grid.dim() != 4 or grid.shape[1] != p.grid_channels \
                or grid.shape[2] != p.align or grid.shape[3] != p.align:
            raise InvalidArgumentError(
                f"grid must be (B, {p.grid_channels}, {p.align}, {p.align}), "
                f"got {tuple(grid.shape)}")
        styles = expand_styles(styles, self.num_style_slots)
        if styles.shape[0] != grid.shape[0]:
            raise InvalidArgumentError("style batch does not match grid batch")
        x = self.input_conv(grid, styles[:, 0])
        rgb = self.input_rgb(x, styles[:, 1])
        slot = 2
        for up, conv, to_rgb in zip(self.up_convs, self.convs, self.rgbs):
            x = up(x, styles[:, slot])
            x = conv(x, styles[:, slot + 1])
            rgb = F.interpolate(rgb, scale_factor=2, mode="bilinear",
                                align_corners=False)
            rgb = rgb + to_rgb(x, styles[:, slot + 2])
            slot += 3
        return rgb


class LowResStack(nn.Module):
    """Learned-constant + styled convs producing the prior's feature grid."""

    def __init__(self, profile: ModelProfile, generator=None):
        super().__init__()
        c = profile.grid_channels
        self.const = nn.Parameter(seeded_randn((1, c, profile.align, profile.align),
                                               generator))
        self.conv1 = StyledConv(c, c, 3, profile.d_w, profile.align,
                                generator=generator)
        self.conv2 = StyledConv(c, c, 3, profile.d_w, profile.align,
                                generator=generator)

    def forward(self, w):
        x = self.const.expand(w.shape[0], -1, -1, -1)
        x = self.conv1(x, w)
        return self.conv2(x, w)


class PriorGenerator(nn.Module):
    """Unconditional face generator: mapping + low-res stack + decoder.

    `synthesize` refuses to run until the generator has been marked as
    pretrained, so downstream stages never consume an untrained prior by
    accident."""

    def __init__(self, profile: ModelProfile, generator=None):
        super().__init__()
        self.profile = profile
        self.mapping = MappingNetwork(profile.d_z, profile.d_w, profile.n_map,
                                      generator=generator)
        self.lowres = LowResStack(profile, generator=generator)
        self.decoder = Decoder(profile, generator=generator)
        self.register_buffer("pretrained_flag", torch.zeros((), dtype=torch.bool))

    def mark_pretrained(self):
        self.pretrained_flag.fill_(True)

    @property
    def is_pretrained(self):
        return bool(self.pretrained_flag.item())

    def grid_and_w(self, z):
        w = map_z_to_w(self.mapping, z)
        return self.lowres(w), w

    def synthesize(self, z, require_pretrained=True):
        """Generate images from latents; (images, grid, w)."""
        if require_pretrained and not self.is_pretrained:
            raise UnavailableStateError(
                "prior generator has not been pretrained; run the prior "
                "pretraining stage (or load a pretrained checkpoint) first")
        grid, w = self.grid_and_w(z)
        return self.decoder.decode(grid, w), grid, w


def interpolate_styles(w_a, w_b, alpha):
    """Affine blend alpha * w_a + (1 - alpha) * w_b; alpha in [0, 1]."""
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must be in [0, 1], got {alpha}")
    if w_a.shape != w_b.shape:
        raise InvalidArgumentError(
            f"shape mismatch: {tuple(w_a.shape)} vs {tuple(w_b.shape)}")
    return alpha * w_a + (1.0 - alpha) * w_b
