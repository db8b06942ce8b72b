"""Model profiles and per-phase training configuration.

The reference profile mirrors the full-scale architecture (512x512 output,
32x32 style feature grid).  The toy profile shrinks every channel count by 8
and the grid to 4x4 so a complete pipeline trains on a laptop CPU; nano is an
even smaller profile used by fast tests.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .errors import InvalidArgumentError

# Reference channel schedule: decoder rows are
# (StyledConv+ToRGB, then four 2xStyledConv+ToRGB blocks).
DECODER_CHANNELS = (512, 512, 256, 128, 64)
ENCODER_STEM = 64
ENCODER_BLOCKS = (64, 128, 256, 512)
ENCODER_OUT = 512

STAGES = ("prior", "stage1", "stage2", "mapper", "finetune_zero", "finetune_one")


@dataclass(frozen=True)
class ModelProfile:
    """Static architecture description shared by every component."""

    name: str
    d_z: int
    d_w: int
    align: int            # spatial side of the style feature grid
    n_map: int            # mapping network depth
    channel_div: int      # divisor applied to the reference channel schedule
    img_channels: int = 3
    # feature backbone geometry (patch ViT)
    backbone_patch: int = 8
    backbone_dim: int = 32     # token dimension d_t
    backbone_embed: int = 64   # global embedding dimension d_c
    backbone_layers: int = 4
    backbone_heads: int = 4
    mapper_layers: int = 4
    mapper_heads: int = 4

    @property
    def resolution(self):
        # five decoder rows, four of them upsampling: fixed x16 over the grid
        return self.align * 16

    @property
    def decoder_channels(self):
        return tuple(max(c // self.channel_div, 4) for c in DECODER_CHANNELS)

    @property
    def encoder_stem_channels(self):
        return max(ENCODER_STEM // self.channel_div, 4)

    @property
    def encoder_block_channels(self):
        return tuple(max(c // self.channel_div, 4) for c in ENCODER_BLOCKS)

    @property
    def encoder_out_channels(self):
        return max(ENCODER_OUT // self.channel_div, 4)

    @property
    def grid_channels(self):
        # encoder output and decoder input share the alignment layer width
        return self.encoder_out_channels

    @property
    def num_style_slots(self):
        # decoder rows: (conv, torgb) + 4 x (up conv, conv, torgb)
        return 2 + 3 * 4

    @property
    def backbone_tokens(self):
        side = self.resolution // self.backbone_patch
        return side * side


REFERENCE = ModelProfile(
    name="reference", d_z=512, d_w=512, align=32, n_map=8, channel_div=1,
    backbone_dim=64, backbone_embed=512,
)
TOY = ModelProfile(name="toy", d_z=64, d_w=64, align=4, n_map=4, channel_div=8)
NANO = ModelProfile(
    name="nano", d_z=16, d_w=16, align=2, n_map=2, channel_div=32,
    backbone_dim=24, backbone_embed=32, backbone_layers=2, backbone_heads=2,
    mapper_layers=2, mapper_heads=2,
)

PROFILES = {p.name: p for p in (REFERENCE, TOY, NANO)}


def get_profile(name=None):
    """Resolve a profile by name, falling back to the MMFS_PROFILE env var."""
    if name is None:
        name = os.environ.get("MMFS_PROFILE", "toy")
    try:
        return PROFILES[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown profile '{name}' (choose from {sorted(PROFILES)})") from None


@dataclass
class StageConfig:
    """Hyperparameters of one training phase."""

    stage: str
    iterations: int
    batch_size: int = 8
    learning_rate: float = 1e-3
    adam_beta1: float = 0.1
    adam_beta2: float = 0.999
    ema_decay: float = 0.999
    lambda_perc: float = 4.0
    lambda_st: float = 0.5
    lambda_c: float = 1.0
    lambda_proj: float = 1.0
    r1_gamma: float = 10.0
    r1_interval: int = 16
    seed: int = 0
    real_dir: str | None = None
    style_dir: str | None = None
    hflip: bool = False
    # one-shot basis construction: optionally subsample reference tokens so the
    # token count stays below the token dimension (otherwise the projector is
    # complete and the projection residual is identically zero)
    projection_token_subsample: int | None = None
    eval_batches: int = 4

    def __post_init__(self):
        if self.stage not in STAGES:
            raise InvalidArgumentError(
                f"unknown stage '{self.stage}' (choose from {STAGES})")
        if self.iterations < 0 or self.batch_size < 1:
            raise InvalidArgumentError("iterations must be >= 0, batch_size >= 1")


_STAGE_DEFAULTS = {
    "prior": dict(iterations=2000, learning_rate=1e-3, adam_beta1=0.1, ema_decay=0.999),
    "stage1": dict(iterations=10000, learning_rate=1e-3, adam_beta1=0.1, ema_decay=0.999),
    "stage2": dict(iterations=90000, learning_rate=1e-3, adam_beta1=0.1, ema_decay=0.999),
    "mapper": dict(iterations=60000, learning_rate=2e-4, adam_beta1=0.9, ema_decay=0.999),
    "finetune_zero": dict(iterations=200, learning_rate=2e-4, adam_beta1=0.9, ema_decay=0.99),
    "finetune_one": dict(iterations=200, learning_rate=2e-4, adam_beta1=0.9, ema_decay=0.99),
}


def stage_defaults(stage, **overrides):
    """StageConfig with the documented per-phase defaults applied."""
    if stage not in _STAGE_DEFAULTS:
        raise InvalidArgumentError(
            f"unknown stage '{stage}' (choose from {STAGES})")
    kwargs = dict(_STAGE_DEFAULTS[stage])
    kwargs.update(overrides)
    return StageConfig(stage=stage, **kwargs)


_RUN_CONFIG_EXTRA_KEYS = {"stage", "profile", "backbone_seed"}


def load_run_config(path_or_dict):
    """Parse a JSON run configuration.

    Returns (profile, StageConfig, raw dict).  Unknown keys are rejected so a
    typo never silently falls back to a default.
    """
    if isinstance(path_or_dict, dict):
        raw = dict(path_or_dict)
    else:
        with open(path_or_dict, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    if "stage" not in raw:
        raise InvalidArgumentError("run config must declare a 'stage'")
    known = {f.name for f in dataclasses.fields(StageConfig)} | _RUN_CONFIG_EXTRA_KEYS
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InvalidArgumentError(f"unknown run-config keys: {unknown}")
    profile = get_profile(raw.get("profile"))
    overrides = {k: v for k, v in raw.items() if k not in _RUN_CONFIG_EXTRA_KEYS}
    config = stage_defaults(raw["stage"], **overrides)
    return profile, config, raw


def config_as_dict(config):
    return dataclasses.asdict(config)
