"""Encoder and residual block behaviour."""

import math

import pytest
import torch
import torch.nn.functional as F

from mmfs.config import NANO, TOY
from mmfs.encoder import Encoder, ResBlock
from mmfs.errors import InvalidArgumentError
from mmfs.layers import act


def test_resblock_decomposition_oracle():
    """Forward must equal the hand-assembled conv/pool/skip composition."""
    torch.manual_seed(0)
    block = ResBlock(4, 6)
    x = torch.randn(2, 4, 16, 16)
    y = block.conv2(act(block.conv1(x)))
    y = F.avg_pool2d(y, 2)
    s = F.avg_pool2d(block.skip(x), 2)
    ref = (y + s) / math.sqrt(2.0)
    assert (block(x) - ref).abs().max().item() <= 1e-5


def test_resblock_halves_resolution():
    block = ResBlock(3, 8)
    assert block(torch.randn(1, 3, 32, 32)).shape == (1, 8, 16, 16)


def test_encoder_grid_shape():
    for profile in (TOY, NANO):
        enc = Encoder(profile)
        img = torch.randn(2, 3, profile.resolution, profile.resolution)
        grid = enc(img)
        # four halvings: output side is 1/16 of the input side
        assert grid.shape == (2, profile.encoder_out_channels,
                              profile.resolution // 16,
                              profile.resolution // 16)
        assert grid.shape[-1] == profile.align


def test_encoder_rejects_wrong_shapes():
    enc = Encoder(TOY)
    with pytest.raises(InvalidArgumentError):
        enc(torch.randn(1, 3, 32, 32))
    with pytest.raises(InvalidArgumentError):
        enc(torch.randn(1, 1, TOY.resolution, TOY.resolution))
    with pytest.raises(InvalidArgumentError):
        enc(torch.randn(3, TOY.resolution, TOY.resolution))


def test_encoder_batch_equivariance():
    torch.manual_seed(1)
    enc = Encoder(NANO)
    imgs = torch.randn(3, 3, NANO.resolution, NANO.resolution)
    batched = enc(imgs)
    for i in range(3):
        single = enc(imgs[i:i + 1])
        assert torch.allclose(batched[i:i + 1], single, atol=1e-5)


def test_encoder_grid_feeds_decoder():
    from mmfs.generator import Decoder
    enc, dec = Encoder(NANO), Decoder(NANO)
    img = torch.randn(2, 3, NANO.resolution, NANO.resolution)
    out = dec.decode(enc(img), torch.randn(2, NANO.d_w))
    assert out.shape == img.shape
