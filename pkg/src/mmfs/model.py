"""The full stylizer bundle: prior, encoder, decoder, discriminator, mapper
and guidance backbone, with one-call stylization paths and persistence.

Component roles across the training phases:
  prior          — frozen unconditional generator (pretrained first)
  prior_disc     — the prior's discriminator; frozen after pretraining,
                   used for Stage-I perceptual features
  encoder        — trained in Stage I, refined in Stage II
  decoder        — warm-started from the prior's decoder for Stage II;
                   the only trainable part during fine-tuning
  discriminator  — Stage-II adversary, warm-started from prior_disc;
                   provides mapper-training perceptual features afterwards
  mapper         — embedding -> w+ transformer (trained last)
  backbone       — frozen feature extractor for all guidance signals
"""

import torch
from torch import nn

from .adversarial import Discriminator
from .backbones import ToyBackbone, resize_for_backbone
from .checkpoint import load_checkpoint, save_checkpoint
from .config import get_profile
from .encoder import Encoder
from .errors import InvalidArgumentError
from .generator import Decoder, PriorGenerator, map_z_to_w, sample_z
from .mapper import StyleMapper

CHECKPOINT_KIND = "stylizer"


class StylizerModel(nn.Module):

    def __init__(self, profile, seed=0, backbone_seed=0):
        super().__init__()
        self.profile = profile
        self.seed = seed
        self.backbone_seed = backbone_seed
        gen = torch.Generator().manual_seed(seed)
        self.prior = PriorGenerator(profile, generator=gen)
        self.prior_disc = Discriminator(profile, generator=gen)
        self.encoder = Encoder(profile, generator=gen)
        self.decoder = Decoder(profile, generator=gen)
        self.discriminator = Discriminator(profile, generator=gen)
        self.mapper = StyleMapper(profile, generator=gen)
        self.backbone = ToyBackbone(profile, seed=backbone_seed)
        if self.mapper.n_l != self.decoder.num_style_slots:
            raise InvalidArgumentError(
                f"mapper emits {self.mapper.n_l} style rows but decoder has "
                f"{self.decoder.num_style_slots} slots")

    # ---- stylization paths -------------------------------------------------

    def encode(self, images):
        return self.encoder(images)

    def stylize(self, images, wplus):
        """Apply a w or w+ style to content images."""
        return self.decoder.decode(self.encode(images), wplus)

    def wplus_from_z(self, z):
        """(B, d_z) latents -> (B, n_l, d_w) via the prior's mapping."""
        w = map_z_to_w(self.prior.mapping, z)
        return w.unsqueeze(1).expand(-1, self.decoder.num_style_slots, -1)

    def wplus_from_text(self, prompt):
        """Text prompt -> (1, n_l, d_w) through the mapper."""
        return self.mapper.map_feature(self.backbone.embed_text(prompt))

    def wplus_from_image(self, reference):
        """Reference image(s) -> (B, n_l, d_w) through the mapper."""
        if reference.dim() == 3:
            reference = reference.unsqueeze(0)
        embed = self.backbone.embed_image(
            resize_for_backbone(reference, self.backbone.resolution))
        return self.mapper.map_feature(embed)

    def stylize_random(self, images, generator):
        """Stylize each image with a fresh random style code."""
        z = sample_z(images.shape[0], self.profile.d_z, generator)
        return self.stylize(images, self.wplus_from_z(z))

    # ---- persistence ---------------------------------------------------------

    def save(self, path, extra=None):
        config = {"profile": self.profile.name, "seed": self.seed,
                  "backbone_seed": self.backbone_seed}
        return save_checkpoint(self.state_dict(), path, kind=CHECKPOINT_KIND,
                               config=config, extra=extra)

    @classmethod
    def load(cls, path):
        state, manifest = load_checkpoint(path, kind=CHECKPOINT_KIND)
        cfg = manifest.get("config", {})
        profile = get_profile(cfg.get("profile", "toy"))
        model = cls(profile, seed=cfg.get("seed", 0),
                    backbone_seed=cfg.get("backbone_seed", 0))
        model.load_state_dict(state)
        return model


def clone_model(model):
    """Independent deep copy sharing no storage with the original."""
    copy = StylizerModel(model.profile, seed=model.seed,
                         backbone_seed=model.backbone_seed)
    copy.load_state_dict({k: v.clone() for k, v in model.state_dict().items()})
    return copy
