"""Training phases: prior pretraining, Stage I/II, mapper stage, and the
zero-/one-shot fine-tunes, with EMA tracking, freeze contracts, and
JSON-lines loss histories."""

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .adversarial import (gan_losses, generator_loss, perceptual_loss,
                          r1_penalty)
from .backbones import resize_for_backbone
from .config import StageConfig
from .data import DatasetSource, synth_batch
from .errors import InvalidArgumentError, UnavailableStateError
from .generator import map_z_to_w, sample_z
from .guidance import (GuidancePrompt, build_token_basis, one_shot_objective,
                       zero_shot_objective)
from .mapper import mapper_reconstruction_loss
from .model import StylizerModel, clone_model
from .structure import structure_loss

# components that must stay byte-identical during each phase
FROZEN_GROUPS = {
    "prior": ("encoder", "decoder", "discriminator", "mapper", "backbone"),
    "stage1": ("prior", "prior_disc", "decoder", "discriminator", "mapper",
               "backbone"),
    "stage2": ("prior", "prior_disc", "mapper", "backbone"),
    "mapper": ("prior", "prior_disc", "encoder", "decoder", "backbone"),
    "finetune_zero": ("prior", "prior_disc", "encoder", "discriminator",
                      "mapper", "backbone"),
    "finetune_one": ("prior", "prior_disc", "encoder", "discriminator",
                     "mapper", "backbone"),
}

COMPONENTS = ("prior", "prior_disc", "encoder", "decoder", "discriminator",
              "mapper", "backbone")


@dataclass
class TrainReport:
    stage: str
    iterations: int
    history: list = field(default_factory=list)
    initial: float = float("nan")
    final: float = float("nan")
    warnings: list = field(default_factory=list)
    wall_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def record(self, step, wall_ms, **components):
        self.history.append({"step": step, "wall_ms": round(wall_ms, 3),
                             **components})

    def write_history(self, path):
        """One JSON object per line: {step, loss components, wall_ms}."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for row in self.history:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def summary(self):
        return {"stage": self.stage, "iterations": self.iterations,
                "initial": self.initial, "final": self.final,
                "warnings": self.warnings, "wall_s": round(self.wall_s, 3)}


def params_hash(module):
    """sha256 over the module's state dict (sorted names, raw f32 bytes)."""
    digest = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].detach().to(torch.float32)
                      .contiguous().numpy().tobytes())
    return digest.hexdigest()


def component_hashes(model, names=COMPONENTS):
    return {name: params_hash(getattr(model, name)) for name in names}


def ema_update(ema_state, params, decay):
    """ema <- decay * ema + (1 - decay) * params, elementwise in place.

    `params` is a {name: tensor} mapping (e.g. dict(module.named_parameters())).
    """
    if not 0.0 <= decay <= 1.0:
        raise InvalidArgumentError(f"decay must be in [0, 1], got {decay}")
    for name, tensor in params.items():
        if name not in ema_state:
            raise InvalidArgumentError(f"EMA state missing tensor {name}")
        if ema_state[name].shape != tensor.shape:
            raise InvalidArgumentError(
                f"EMA shape mismatch for {name}: "
                f"{tuple(ema_state[name].shape)} vs {tuple(tensor.shape)}")
        ema_state[name].mul_(decay).add_(tensor.detach(), alpha=1.0 - decay)
    return ema_state


def init_ema(module):
    return {name: p.detach().clone() for name, p in module.named_parameters()}


def set_trainable(model, trainable):
    """Enable gradients only for the named components (backbone never)."""
    for name in COMPONENTS:
        flag = name in trainable and name != "backbone"
        for p in getattr(model, name).parameters():
            p.requires_grad_(flag)


def _trainable_params(model, names):
    params = []
    for name in names:
        params.extend(getattr(model, name).parameters())
    return params


def _adam(params, config):
    return torch.optim.Adam(params, lr=config.learning_rate,
                            betas=(config.adam_beta1, config.adam_beta2))


def content_batches(model, config, seed_offset=0):
    """Endless content batches: the real-image dataset when configured,
    otherwise samples from the frozen prior (documented fallback)."""
    if config.real_dir:
        source = DatasetSource(config.real_dir, model.profile.resolution,
                               hflip=config.hflip)
        yield from source.batches(config.batch_size,
                                  seed=config.seed + seed_offset)
    else:
        gen = torch.Generator().manual_seed(config.seed + 7919 + seed_offset)
        while True:
            z = sample_z(config.batch_size, model.profile.d_z, gen)
            with torch.no_grad():
                images, _, _ = model.prior.synthesize(z)
            yield images


# ---- prior pretraining -------------------------------------------------------


def pretrain_prior(model, config: StageConfig):
    """Adversarially pretrain the unconditional prior on procedural faces.

    Trains prior (mapping + low-res stack + decoder) against prior_disc
    with non-saturating losses and lazy R1, then marks the prior usable.
    """
    t0 = time.monotonic()
    report = TrainReport(stage="prior", iterations=config.iterations)
    set_trainable(model, ("prior", "prior_disc"))
    opt_g = _adam(model.prior.parameters(), config)
    opt_d = _adam(model.prior_disc.parameters(), config)
    gen = torch.Generator().manual_seed(config.seed)
    ema = init_ema(model.prior)
    res = model.profile.resolution
    for step in range(config.iterations):
        step_t = time.monotonic()
        real = synth_batch(config.batch_size, res,
                           seed=config.seed * 1000003 + step)
        z = sample_z(config.batch_size, model.profile.d_z, gen)
        # discriminator step
        with torch.no_grad():
            fake, _, _ = model.prior.synthesize(z, require_pretrained=False)
        d_loss, _ = gan_losses(model.prior_disc(real), model.prior_disc(fake))
        row = {}
        if config.r1_interval and step % config.r1_interval == 0:
            r1 = r1_penalty(model.prior_disc, real, config.r1_gamma)
            d_loss = d_loss + r1 * config.r1_interval
            row["r1"] = float(r1.detach())
        opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        opt_d.step()
        # generator step
        z = sample_z(config.batch_size, model.profile.d_z, gen)
        fake, _, _ = model.prior.synthesize(z, require_pretrained=False)
        g_loss = generator_loss(model.prior_disc(fake))
        opt_g.zero_grad(set_to_none=True)
        g_loss.backward()
        opt_g.step()
        ema_update(ema, dict(model.prior.named_parameters()), config.ema_decay)
        report.record(step, (time.monotonic() - step_t) * 1000,
                      d_loss=float(d_loss.detach()),
                      g_loss=float(g_loss.detach()), **row)
    model.prior.mark_pretrained()
    report.extra["ema"] = {"prior": ema}
    report.wall_s = time.monotonic() - t0
    return report


# ---- Stage I ------------------------------------------------------------------


def _stage1_loss(model, images, w, config):
    grid = model.encoder(images)
    recon = model.prior.decoder.decode(grid, w)
    l1 = F.l1_loss(recon, images)
    perc = perceptual_loss(model.prior_disc, recon, images)
    return l1 + config.lambda_perc * perc, l1, perc


def _stage1_eval(model, config, n_batches=None):
    n_batches = config.eval_batches if n_batches is None else n_batches
    gen = torch.Generator().manual_seed(config.seed + 99991)
    total = 0.0
    with torch.no_grad():
        for _ in range(n_batches):
            z = sample_z(config.batch_size, model.profile.d_z, gen)
            images, _, w = model.prior.synthesize(z)
            recon = model.prior.decoder.decode(model.encoder(images), w)
            total += float(F.l1_loss(recon, images))
    return total / n_batches


def run_stage1(model, config: StageConfig):
    """Train the encoder to invert the frozen prior in image space."""
    if not model.prior.is_pretrained:
        raise UnavailableStateError("prior must be pretrained before Stage I")
    t0 = time.monotonic()
    report = TrainReport(stage="stage1", iterations=config.iterations)
    set_trainable(model, ("encoder",))
    opt = _adam(model.encoder.parameters(), config)
    gen = torch.Generator().manual_seed(config.seed)
    ema = init_ema(model.encoder)
    report.initial = _stage1_eval(model, config)
    for step in range(config.iterations):
        step_t = time.monotonic()
        z = sample_z(config.batch_size, model.profile.d_z, gen)
        with torch.no_grad():
            images, _, w = model.prior.synthesize(z)
        loss, l1, perc = _stage1_loss(model, images, w, config)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        ema_update(ema, dict(model.encoder.named_parameters()), config.ema_decay)
        report.record(step, (time.monotonic() - step_t) * 1000,
                      loss=float(loss.detach()), l1=float(l1.detach()),
                      perceptual=float(perc.detach()))
    report.final = _stage1_eval(model, config)
    report.extra["ema"] = {"encoder": ema}
    report.wall_s = time.monotonic() - t0
    return report


# ---- Stage II -----------------------------------------------------------------


def run_stage2(model, config: StageConfig, *, warm_start=True):
    """Adversarial stylization training against a style dataset.

    Alternates one discriminator step and one generator step; the generator
    side (encoder + decoder) minimizes adversarial loss plus the weighted
    structure loss against the content input.  R1 is applied lazily with
    interval compensation.  EMA copies of encoder and decoder are
    maintained throughout.
    """
    if not model.prior.is_pretrained:
        raise UnavailableStateError("prior must be pretrained before Stage II")
    if not config.style_dir:
        raise InvalidArgumentError("stage2 requires a style dataset (style_dir)")
    style = DatasetSource(config.style_dir, model.profile.resolution,
                          hflip=config.hflip)
    t0 = time.monotonic()
    report = TrainReport(stage="stage2", iterations=config.iterations)
    if warm_start:
        model.decoder.load_state_dict(model.prior.decoder.state_dict())
        model.discriminator.load_state_dict(model.prior_disc.state_dict())
    set_trainable(model, ("encoder", "decoder", "discriminator"))
    opt_g = _adam(_trainable_params(model, ("encoder", "decoder")), config)
    opt_d = _adam(model.discriminator.parameters(), config)
    gen = torch.Generator().manual_seed(config.seed)
    ema = {"encoder": init_ema(model.encoder), "decoder": init_ema(model.decoder)}
    style_iter = style.batches(config.batch_size, seed=config.seed)
    content_iter = content_batches(model, config)
    d_steps = 0
    for step in range(config.iterations):
        step_t = time.monotonic()
        content = next(content_iter)
        real_style = next(style_iter)
        z = sample_z(config.batch_size, model.profile.d_z, gen)
        with torch.no_grad():
            w = map_z_to_w(model.prior.mapping, z)
        # discriminator step
        with torch.no_grad():
            fake = model.decoder.decode(model.encoder(content), w)
        d_loss, _ = gan_losses(model.discriminator(real_style),
                               model.discriminator(fake))
        row = {}
        if config.r1_interval and d_steps % config.r1_interval == 0:
            r1 = r1_penalty(model.discriminator, real_style, config.r1_gamma)
            d_loss = d_loss + r1 * config.r1_interval
            row["r1"] = float(r1.detach())
        opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        opt_d.step()
        d_steps += 1
        # generator step
        stylized = model.decoder.decode(model.encoder(content), w)
        adv = generator_loss(model.discriminator(stylized))
        if config.lambda_st:
            st = structure_loss(
                resize_for_backbone(stylized, model.backbone.resolution),
                resize_for_backbone(content, model.backbone.resolution),
                model.backbone)
            g_total = adv + config.lambda_st * st
            row["structure"] = float(st.detach())
        else:
            g_total = adv
        opt_g.zero_grad(set_to_none=True)
        g_total.backward()
        opt_g.step()
        ema_update(ema["encoder"], dict(model.encoder.named_parameters()),
                   config.ema_decay)
        ema_update(ema["decoder"], dict(model.decoder.named_parameters()),
                   config.ema_decay)
        report.record(step, (time.monotonic() - step_t) * 1000,
                      d_loss=float(d_loss.detach()), adv=float(adv.detach()),
                      g_loss=float(g_total.detach()), **row)
    report.extra["ema"] = ema
    report.wall_s = time.monotonic() - t0
    return report


# ---- mapper stage ---------------------------------------------------------------


def _mapper_eval(model, config, eval_images, eval_z):
    with torch.no_grad():
        loss, _ = mapper_reconstruction_loss(
            model.mapper, model.backbone, model.prior, model.encoder,
            model.decoder, model.discriminator, eval_images, eval_z,
            config.lambda_perc)
    return float(loss)


def run_mapper_stage(model, config: StageConfig, *, init_base_style=True):
    """Train the mapper by self-reconstruction against frozen Stage-II models."""
    if not model.prior.is_pretrained:
        raise UnavailableStateError(
            "prior must be pretrained before mapper training")
    t0 = time.monotonic()
    report = TrainReport(stage="mapper", iterations=config.iterations)
    set_trainable(model, ("mapper",))
    if init_base_style:
        with torch.no_grad():
            z = sample_z(256, model.profile.d_z,
                         torch.Generator().manual_seed(config.seed + 31337))
            model.mapper.set_base_style(
                map_z_to_w(model.prior.mapping, z).mean(dim=0))
    opt = _adam(model.mapper.parameters(), config)
    gen = torch.Generator().manual_seed(config.seed)
    content_iter = content_batches(model, config)
    eval_gen = torch.Generator().manual_seed(config.seed + 99991)
    eval_images = next(content_batches(model, config, seed_offset=5))
    eval_z = sample_z(config.batch_size, model.profile.d_z, eval_gen)
    report.initial = _mapper_eval(model, config, eval_images, eval_z)
    for step in range(config.iterations):
        step_t = time.monotonic()
        images = next(content_iter)
        z = sample_z(config.batch_size, model.profile.d_z, gen)
        loss, parts = mapper_reconstruction_loss(
            model.mapper, model.backbone, model.prior, model.encoder,
            model.decoder, model.discriminator, images, z, config.lambda_perc)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        report.record(step, (time.monotonic() - step_t) * 1000,
                      loss=float(loss.detach()), **parts)
    report.final = _mapper_eval(model, config, eval_images, eval_z)
    report.wall_s = time.monotonic() - t0
    return report


# ---- fine-tuning ----------------------------------------------------------------


def _finetune_objective(model, config, content, z, prompt, basis, stage):
    with torch.no_grad():
        w = map_z_to_w(model.prior.mapping, z)
    stylized = model.decoder.decode(model.encoder(content), w)
    if stage == "finetune_one":
        return one_shot_objective(content, stylized, prompt, model.backbone,
                                  config.lambda_c, config.lambda_proj, basis)
    return zero_shot_objective(content, stylized, prompt, model.backbone,
                               config.lambda_c)


def finetune(model, config: StageConfig, prompt: GuidancePrompt,
             progress_cb=None):
    """Decoder-only guided fine-tune; returns (new model, report).

    The input model is untouched: all updates apply to a deep copy whose
    non-decoder components stay byte-identical.  One-shot mode builds the
    reference-token basis once up front; a vacuous-projection warning (when
    the reference has at least as many tokens as feature dims) is recorded
    in the report.  `progress_cb(step, total)` fires after every step."""
    if config.stage not in ("finetune_zero", "finetune_one"):
        raise InvalidArgumentError(f"not a finetune config: {config.stage}")
    if not model.prior.is_pretrained:
        raise UnavailableStateError("prior must be pretrained before fine-tuning")
    if config.stage == "finetune_one" and prompt.kind != "image":
        raise InvalidArgumentError("one-shot fine-tuning requires an image prompt")
    t0 = time.monotonic()
    report = TrainReport(stage=config.stage, iterations=config.iterations)
    tuned = clone_model(model)
    set_trainable(tuned, ("decoder",))
    opt = _adam(tuned.decoder.parameters(), config)
    gen = torch.Generator().manual_seed(config.seed)
    ema = init_ema(tuned.decoder)
    basis = None
    if config.stage == "finetune_one":
        ref = prompt.image
        if ref.dim() == 3:
            ref = ref.unsqueeze(0)
        ref = resize_for_backbone(ref, tuned.backbone.resolution)
        layer = min(4, tuned.backbone.num_layers)
        ref_tokens = tuned.backbone.tokens(ref, layer)[0]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            basis = build_token_basis(
                ref_tokens, subsample=config.projection_token_subsample,
                generator=torch.Generator().manual_seed(config.seed))
        report.warnings.extend(str(w.message) for w in caught)
    content_iter = content_batches(tuned, config)
    eval_content = next(content_batches(tuned, config, seed_offset=5))
    eval_z = sample_z(config.batch_size, tuned.profile.d_z,
                      torch.Generator().manual_seed(config.seed + 99991))
    with torch.no_grad():
        obj, _ = _finetune_objective(tuned, config, eval_content, eval_z,
                                     prompt, basis, config.stage)
    report.initial = float(obj)
    for step in range(config.iterations):
        step_t = time.monotonic()
        content = next(content_iter)
        z = sample_z(config.batch_size, tuned.profile.d_z, gen)
        loss, parts = _finetune_objective(tuned, config, content, z, prompt,
                                          basis, config.stage)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        ema_update(ema, dict(tuned.decoder.named_parameters()), config.ema_decay)
        report.record(step, (time.monotonic() - step_t) * 1000,
                      loss=float(loss.detach()), **parts)
        if progress_cb is not None:
            progress_cb(step, config.iterations)
    with torch.no_grad():
        obj, _ = _finetune_objective(tuned, config, eval_content, eval_z,
                                     prompt, basis, config.stage)
    report.final = float(obj)
    report.extra["ema"] = {"decoder": ema}
    report.wall_s = time.monotonic() - t0
    return tuned, report
