"""Primitive layers shared by the generator, encoder and discriminator.

Convolutions and linears use the equalized learning-rate convention (unit
normal init, fan-in rescale at call time).  Leaky-rectifier activations carry
a sqrt(2) gain.
"""

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidArgumentError

LEAKY_SLOPE = 0.2
ACT_GAIN = math.sqrt(2.0)
DEMOD_EPS = 1e-8
RMS_EPS = 1e-8


def act(x):
    return F.leaky_relu(x, LEAKY_SLOPE) * ACT_GAIN


def pixel_norm(z, eps=RMS_EPS):
    """Normalize each vector to unit RMS along the last dimension."""
    return z * torch.rsqrt(z.pow(2).mean(dim=-1, keepdim=True) + eps)


def seeded_randn(shape, generator, dtype=torch.float32):
    return torch.randn(*shape, generator=generator, dtype=dtype)


class EqualizedLinear(nn.Module):
    def __init__(self, in_dim, out_dim, bias=True, bias_init=0.0, generator=None):
        super().__init__()
        self.weight = nn.Parameter(seeded_randn((out_dim, in_dim), generator))
        self.bias = nn.Parameter(torch.full((out_dim,), float(bias_init))) if bias else None
        self.scale = 1.0 / math.sqrt(in_dim)

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


class EqualizedConv2d(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=True,
                 generator=None):
        super().__init__()
        self.weight = nn.Parameter(seeded_randn((out_ch, in_ch, kernel, kernel), generator))
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias,
                        stride=self.stride, padding=self.padding)


def modulate_weights(weight, style_scale, demodulate=True, eps=DEMOD_EPS):
    """Per-sample modulated (and optionally demodulated) conv weights.

    weight: (out, in, k, k); style_scale: (batch, in) or (in,).
    Returns (batch, out, in, k, k).
    """
    if style_scale.dim() == 1:
        style_scale = style_scale.unsqueeze(0)
    if style_scale.shape[-1] != weight.shape[1]:
        raise InvalidArgumentError(
            f"style scale has {style_scale.shape[-1]} channels, "
            f"conv expects {weight.shape[1]}")
    w = weight.unsqueeze(0) * style_scale[:, None, :, None, None]
    if demodulate:
        w = w * torch.rsqrt(w.pow(2).sum(dim=(2, 3, 4), keepdim=True) + eps)
    return w


def modulated_conv2d(x, weight, style_scale, demodulate=True, eps=DEMOD_EPS):
    """Convolution with per-input-channel style scaling.

    Equivalent to convolving sample b with weights style[b, i] * weight[o, i],
    demodulated so each output channel's effective kernel has unit L2 norm.
    """
    if x.dim() != 4:
        raise InvalidArgumentError("modulated_conv2d expects a (B, C, H, W) input")
    batch, in_ch, height, width = x.shape
    if weight.shape[1] != in_ch:
        raise InvalidArgumentError(
            f"input has {in_ch} channels, conv expects {weight.shape[1]}")
    if style_scale.dim() == 1:
        style_scale = style_scale.unsqueeze(0).expand(batch, -1)
    if style_scale.shape[0] != batch:
        raise InvalidArgumentError("style batch does not match input batch")
    w = modulate_weights(weight, style_scale, demodulate, eps)
    out_ch, _, kh, kw = weight.shape
    # grouped convolution: one weight set per sample
    x = x.reshape(1, batch * in_ch, height, width)
    w = w.reshape(batch * out_ch, in_ch, kh, kw)
    out = F.conv2d(x, w, padding=kh // 2, groups=batch)
    return out.reshape(batch, out_ch, out.shape[-2], out.shape[-1])


class ModulatedConv2d(nn.Module):
    """Style-modulated convolution; the style vector w is mapped to
    per-channel scales by a learned affine with bias 1."""

    def __init__(self, in_ch, out_ch, kernel, style_dim, demodulate=True,
                 upsample=False, generator=None):
        super().__init__()
        self.weight = nn.Parameter(seeded_randn((out_ch, in_ch, kernel, kernel), generator))
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.affine = EqualizedLinear(style_dim, in_ch, bias_init=1.0, generator=generator)
        self.demodulate = demodulate
        self.upsample = upsample

    def forward(self, x, w):
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        style = self.affine(w)
        return modulated_conv2d(x, self.weight * self.scale, style, self.demodulate)


class NoiseInjection(nn.Module):
    """Adds a frozen per-instance noise map scaled by a learned scalar.

    The buffer is drawn once at construction; outputs stay bit-identical
    across calls and across save/load."""

    def __init__(self, resolution, generator=None):
        super().__init__()
        self.register_buffer("noise", seeded_randn((1, 1, resolution, resolution), generator))
        self.strength = nn.Parameter(torch.zeros(()))

    def forward(self, x):
        return x + self.strength * self.noise


class StyledConv(nn.Module):
    """Modulated conv + fixed noise + bias + gained leaky-rectifier."""

    def __init__(self, in_ch, out_ch, kernel, style_dim, resolution,
                 upsample=False, generator=None):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, out_ch, kernel, style_dim,
                                    demodulate=True, upsample=upsample,
                                    generator=generator)
        self.noise = NoiseInjection(resolution, generator=generator)
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x, w):
        x = self.conv(x, w)
        x = self.noise(x)
        return act(x + self.bias[None, :, None, None])


class ToRGB(nn.Module):
    """1x1 modulated projection to image channels (no demodulation)."""

    def __init__(self, in_ch, style_dim, img_channels=3, generator=None):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, img_channels, 1, style_dim,
                                    demodulate=False, generator=generator)
        self.bias = nn.Parameter(torch.zeros(img_channels))

    def forward(self, x, w):
        return self.conv(x, w) + self.bias[None, :, None, None]


class SelfAttention(nn.Module):
    """Multi-head self-attention that can expose its key projections.

    Queries/keys may live in a narrower space than values (qk_dim), which
    lets key tokens carry a different feature dimension than the residual
    stream."""

    def __init__(self, dim, heads, qk_dim=None, generator=None):
        super().__init__()
        qk_dim = dim if qk_dim is None else qk_dim
        if dim % heads or qk_dim % heads:
            raise InvalidArgumentError(
                f"dims ({dim}, {qk_dim}) not divisible by {heads} heads")
        self.heads = heads
        self.qk_head = qk_dim // heads
        self.v_head = dim // heads
        self.to_q = EqualizedLinear(dim, qk_dim, generator=generator)
        self.to_k = EqualizedLinear(dim, qk_dim, generator=generator)
        self.to_v = EqualizedLinear(dim, dim, generator=generator)
        self.to_out = EqualizedLinear(dim, dim, generator=generator)

    def keys(self, x):
        # concatenated-head key projections, (B, n, qk_dim)
        return self.to_k(x)

    def forward(self, x):
        b, n, d = x.shape
        def split(t, head_dim):
            return t.reshape(b, n, self.heads, head_dim).transpose(1, 2)
        q = split(self.to_q(x), self.qk_head)
        k = split(self.to_k(x), self.qk_head)
        v = split(self.to_v(x), self.v_head)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.qk_head), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.to_out(out)


class TransformerBlock(nn.Module):
    """Pre-norm attention + MLP block."""

    def __init__(self, dim, heads, qk_dim=None, ff_mult=4, generator=None):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, qk_dim=qk_dim, generator=generator)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = EqualizedLinear(dim, dim * ff_mult, generator=generator)
        self.fc2 = EqualizedLinear(dim * ff_mult, dim, generator=generator)

    def keys(self, x):
        return self.attn.keys(self.norm1(x))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))
