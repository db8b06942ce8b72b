"""Discriminator with feature taps, GAN losses, R1 penalty, and the
discriminator-feature perceptual loss."""

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelProfile
from .encoder import ResBlock
from .errors import InvalidArgumentError
from .layers import EqualizedConv2d, EqualizedLinear, act


class Discriminator(nn.Module):
    """Residual conv discriminator over full-resolution images.

    ``discriminate`` returns the scalar logits together with the
    activations after each residual block (ascending depth order); these
    taps feed the feature-matching perceptual loss.
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
        final_res = profile.resolution // (2 ** len(blocks))
        self.final_conv = EqualizedConv2d(blocks[-1], blocks[-1], 3, padding=1,
                                          generator=generator)
        self.fc = EqualizedLinear(blocks[-1] * final_res * final_res,
                                  blocks[-1], generator=generator)
        self.out = EqualizedLinear(blocks[-1], 1, generator=generator)

    @property
    def num_taps(self):
        return len(self.blocks)

    def discriminate(self, image):
        """(logits (B,), taps [ascending-depth feature tensors])."""
        p = self.profile
        if image.dim() != 4 or image.shape[1] != p.img_channels \
                or image.shape[2] != p.resolution or image.shape[3] != p.resolution:
            raise InvalidArgumentError(
                f"discriminator expects (B, {p.img_channels}, {p.resolution}, "
                f"{p.resolution}), got {tuple(image.shape)}")
        x = act(self.stem(image))
        taps = []
        for block in self.blocks:
            x = block(x)
            taps.append(x)
        x = act(self.final_conv(x))
        x = act(self.fc(x.flatten(1)))
        return self.out(x).squeeze(1), taps

    def forward(self, image):
        logits, _ = self.discriminate(image)
        return logits


def perceptual_loss(disc, image_a, image_b):
    """Sum over discriminator taps of the mean-absolute feature difference.

    Each tap contributes mean(|D_l(a) - D_l(b)|); contributions are summed
    across taps.  Symmetric, nonnegative, zero on identical inputs."""
    _, taps_a = disc.discriminate(image_a)
    _, taps_b = disc.discriminate(image_b)
    total = image_a.new_zeros(())
    for fa, fb in zip(taps_a, taps_b):
        total = total + (fa - fb).abs().mean()
    return total


def gan_losses(real_logits, fake_logits):
    """Non-saturating softplus GAN losses: (d_loss, g_loss).

    d_loss = mean softplus(-real) + mean softplus(fake)
    g_loss = mean softplus(-fake)
    """
    if real_logits.numel() == 0 or fake_logits.numel() == 0:
        raise InvalidArgumentError("logit batches must be non-empty")
    d = F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
    return d, generator_loss(fake_logits)


def generator_loss(fake_logits):
    """The generator half of gan_losses, for generator-only steps."""
    if fake_logits.numel() == 0:
        raise InvalidArgumentError("logit batch must be non-empty")
    return F.softplus(-fake_logits).mean()


def r1_penalty(disc, real_images, gamma):
    """R1 gradient penalty: (gamma / 2) * E[ ||d logit / d input||^2 ].

    Applied lazily every k-th discriminator step with a *k compensation by
    the training loop."""
    if gamma == 0:
        return real_images.new_zeros(())
    real = real_images.detach().requires_grad_(True)
    logits = disc(real)
    (grads,) = torch.autograd.grad(outputs=logits.sum(), inputs=real,
                                   create_graph=True)
    return 0.5 * gamma * grads.pow(2).sum(dim=(1, 2, 3)).mean()
