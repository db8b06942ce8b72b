"""Oracles for the styled-convolution primitives."""

import math

import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from mmfs.errors import InvalidArgumentError
from mmfs.layers import (ACT_GAIN, LEAKY_SLOPE, EqualizedConv2d,
                         EqualizedLinear, ModulatedConv2d, NoiseInjection,
                         SelfAttention, StyledConv, ToRGB, TransformerBlock,
                         act, modulate_weights, modulated_conv2d, pixel_norm)


def test_act_matches_leaky_relu_with_gain():
    x = torch.linspace(-3, 3, 13)
    expected = torch.where(x >= 0, x, LEAKY_SLOPE * x) * math.sqrt(2.0)
    assert torch.allclose(act(x), expected)
    assert ACT_GAIN == pytest.approx(math.sqrt(2.0))


def test_pixel_norm_unit_rms():
    torch.manual_seed(0)
    z = torch.randn(5, 16) * 7.0
    out = pixel_norm(z)
    rms = out.pow(2).mean(dim=-1).sqrt()
    assert torch.allclose(rms, torch.ones(5), atol=1e-4)


@given(scale=st.floats(min_value=0.1, max_value=100.0))
@settings(max_examples=25, deadline=None)
def test_pixel_norm_scale_invariant(scale):
    z = torch.arange(1.0, 9.0).reshape(2, 4)
    assert torch.allclose(pixel_norm(z * scale), pixel_norm(z), atol=1e-5)


def test_equalized_linear_is_scaled_matmul():
    torch.manual_seed(1)
    layer = EqualizedLinear(6, 3, bias_init=0.5)
    x = torch.randn(4, 6)
    expected = x @ (layer.weight * (1.0 / math.sqrt(6))).t() + 0.5
    assert torch.allclose(layer(x), expected, atol=1e-6)


def test_equalized_linear_zero_bias_homogeneous():
    layer = EqualizedLinear(4, 4, bias=False)
    x = torch.randn(2, 4)
    assert torch.allclose(layer(2 * x), 2 * layer(x), atol=1e-5)


def test_equalized_conv_matches_functional():
    torch.manual_seed(2)
    conv = EqualizedConv2d(3, 5, 3, padding=1)
    x = torch.randn(2, 3, 8, 8)
    expected = F.conv2d(x, conv.weight / math.sqrt(3 * 9), conv.bias, padding=1)
    assert torch.allclose(conv(x), expected, atol=1e-6)


# -- modulated convolution -----------------------------------------------------


def test_modulate_weights_unit_output_norm():
    torch.manual_seed(3)
    weight = torch.randn(4, 3, 3, 3)
    style = torch.rand(2, 3) + 0.5
    w = modulate_weights(weight, style, demodulate=True)
    norms = w.pow(2).sum(dim=(2, 3, 4)).sqrt()
    assert torch.allclose(norms, torch.ones(2, 4), atol=1e-3)


def test_modulate_weights_scalar_demod_cancels():
    # 1x1 conv, one channel: weight 2 modulated by style 3 then demodulated
    # divides by |6|, so the effective kernel is exactly 1.
    weight = torch.full((1, 1, 1, 1), 2.0)
    style = torch.full((1, 1), 3.0)
    w = modulate_weights(weight, style, demodulate=True)
    assert w.item() == pytest.approx(1.0, abs=1e-6)


def test_modulated_conv_per_sample_oracle():
    """Batch grouped-conv path must agree with an explicit per-sample loop."""
    torch.manual_seed(4)
    weight = torch.randn(5, 3, 3, 3)
    style = torch.rand(4, 3) + 0.5
    x = torch.randn(4, 3, 8, 8)
    out = modulated_conv2d(x, weight, style, demodulate=True)
    w = modulate_weights(weight, style, demodulate=True)
    for b in range(4):
        ref = F.conv2d(x[b:b + 1], w[b], padding=1)
        assert (out[b:b + 1] - ref).abs().max().item() <= 1e-5


def test_modulated_conv_no_demod_is_plain_conv_times_style():
    weight = torch.randn(2, 3, 1, 1)
    x = torch.randn(1, 3, 4, 4)
    style = torch.tensor([[2.0, 0.5, 1.5]])
    out = modulated_conv2d(x, weight, style, demodulate=False)
    ref = F.conv2d(x * style[:, :, None, None], weight)
    assert torch.allclose(out, ref, atol=1e-5)


def test_modulated_conv_channel_mismatch():
    weight = torch.randn(2, 3, 3, 3)
    with pytest.raises(InvalidArgumentError):
        modulated_conv2d(torch.randn(1, 4, 8, 8), weight, torch.ones(1, 4))
    with pytest.raises(InvalidArgumentError):
        modulate_weights(weight, torch.ones(1, 5))
    with pytest.raises(InvalidArgumentError):
        modulated_conv2d(torch.randn(2, 3, 8, 8), weight, torch.ones(3, 3))


def test_modulated_conv_module_upsamples():
    conv = ModulatedConv2d(4, 6, 3, style_dim=8, upsample=True)
    out = conv(torch.randn(2, 4, 8, 8), torch.randn(2, 8))
    assert out.shape == (2, 6, 16, 16)


def test_noise_injection_identity_at_init_and_frozen():
    noise = NoiseInjection(8)
    x = torch.randn(2, 3, 8, 8)
    assert torch.equal(noise(x), x)  # strength starts at zero
    noise.strength.data.fill_(0.7)
    a, b = noise(x), noise(x)
    assert torch.equal(a, b)


def test_styled_conv_and_torgb_shapes():
    sc = StyledConv(4, 8, 3, style_dim=16, resolution=8)
    rgb = ToRGB(8, style_dim=16)
    x = torch.randn(2, 4, 8, 8)
    w = torch.randn(2, 16)
    h = sc(x, w)
    assert h.shape == (2, 8, 8, 8)
    assert rgb(h, w).shape == (2, 3, 8, 8)
    assert rgb.conv.demodulate is False


def test_self_attention_key_dim_and_shapes():
    attn = SelfAttention(dim=16, heads=4, qk_dim=8)
    x = torch.randn(2, 10, 16)
    assert attn(x).shape == (2, 10, 16)
    assert attn.keys(x).shape == (2, 10, 8)
    with pytest.raises(InvalidArgumentError):
        SelfAttention(dim=16, heads=5)


def test_transformer_block_prenorm_keys():
    block = TransformerBlock(dim=16, heads=4, qk_dim=8)
    x = torch.randn(2, 10, 16)
    assert block(x).shape == (2, 10, 16)
    # keys are taken on the normalized residual stream
    assert torch.allclose(block.keys(x), block.attn.keys(block.norm1(x)))
