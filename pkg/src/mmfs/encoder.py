"""Image encoder: maps an input image to the style feature grid consumed by
the decoder (the spatial content representation the stylizer preserves)."""

import math

import torch.nn.functional as F
from torch import nn

from .config import ModelProfile
from .errors import InvalidArgumentError
from .layers import EqualizedConv2d, act


class ResBlock(nn.Module):
    """Residual downsampling block: (conv-act-conv + 1x1 skip), both paths
    average-pooled, summed and scaled by 1/sqrt(2)."""

    def __init__(self, in_ch, out_ch, generator=None):
        super().__init__()
        self.conv1 = EqualizedConv2d(in_ch, in_ch, 3, padding=1, generator=generator)
        self.conv2 = EqualizedConv2d(in_ch, out_ch, 3, padding=1, generator=generator)
        self.skip = EqualizedConv2d(in_ch, out_ch, 1, bias=False, generator=generator)

    def forward(self, x):
        y = self.conv2(act(self.conv1(x)))
        y = F.avg_pool2d(y, 2)
        s = F.avg_pool2d(self.skip(x), 2)
        return (y + s) / math.sqrt(2.0)


class Encoder(nn.Module):
    """Stem conv + four downsampling residual blocks + output conv.

    Input: (B, 3, R, R) image in [-1, 1]; output: (B, C, R/16, R/16) grid.
    """

    def __init__(self, profile: ModelProfile, generator=None):
        super().__init__()
        self.profile = profile
        blocks = profile.encoder_block_channels
        self.stem = EqualizedConv2d(profile.img_channels,
                                    profile.encoder_stem_channels, 3,
                                    padding=1, generator=generator)
        chans = (profile.encoder_stem_channels,) + blocks
        self.blocks = nn.ModuleList(
            ResBlock(chans[i], chans[i + 1], generator=generator)
            for i in range(len(blocks)))
        self.out = EqualizedConv2d(blocks[-1], profile.encoder_out_channels, 3,
                                   padding=1, generator=generator)

    def forward(self, image):
        p = self.profile
        if image.dim() != 4 or image.shape[1] != p.img_channels \
                or image.shape[2] != p.resolution or image.shape[3] != p.resolution:
            raise InvalidArgumentError(
                f"encoder expects (B, {p.img_channels}, {p.resolution}, "
                f"{p.resolution}), got {tuple(image.shape)}")
        x = act(self.stem(image))
        for block in self.blocks:
            x = block(x)
        return self.out(x)
