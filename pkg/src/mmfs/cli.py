"""Command-line entry points for every training phase and tool.

The CLI is a thin shell: each subcommand loads/saves bundles and calls the
corresponding library operation with a StageConfig.  Exit codes: 0 success,
2 usage error, 1 runtime error.  All randomness is controlled by --seed.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import torch

from . import checkpoint as ckpt
from .config import get_profile, load_run_config, stage_defaults
from .data import load_image, save_image
from .errors import InvalidArgumentError
from .evaluation import (ToyPerceptualEmbedder, eval_random_stylization)
from .generator import interpolate_styles, sample_z
from .guidance import GuidancePrompt
from .model import StylizerModel
from . import training


def _add_common(parser):
    parser.add_argument("--profile", choices=("toy", "reference", "nano"),
                        default=None,
                        help="model profile (default: $MMFS_PROFILE or toy)")
    parser.add_argument("--seed", type=int, default=0)


def _add_train_args(parser, needs_checkpoint=True):
    _add_common(parser)
    if needs_checkpoint:
        parser.add_argument("--checkpoint", required=True,
                            help="input model bundle directory")
    parser.add_argument("--out", required=True,
                        help="output bundle directory (must be a new path)")
    parser.add_argument("--config", help="run-config JSON path")
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--real-dir")
    parser.add_argument("--style-dir")


def _stage_config(args, stage):
    if args.config:
        profile, config, raw = load_run_config(args.config)
        if raw["stage"] != stage:
            raise InvalidArgumentError(
                f"config is for stage {raw['stage']!r}, expected {stage!r}")
    else:
        profile = get_profile(args.profile)
        config = stage_defaults(stage)
    overrides = {"seed": args.seed}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.real_dir:
        overrides["real_dir"] = args.real_dir
    if args.style_dir:
        overrides["style_dir"] = args.style_dir
    config = stage_defaults(stage, **{**_config_dict(config), **overrides})
    if args.profile:
        profile = get_profile(args.profile)
    return profile, config


def _config_dict(config):
    from .config import config_as_dict
    d = config_as_dict(config)
    d.pop("stage", None)
    return d


def _check_new_out(args):
    out = Path(args.out).resolve()
    src = getattr(args, "checkpoint", None)
    if src and out == Path(src).resolve():
        raise UsageError("--out must differ from --checkpoint "
                         "(checkpoints are never modified in place)")
    return out


class UsageError(Exception):
    pass


def _save_run(model, report, out, extra=None):
    out = Path(out)
    model.save(out, extra={"stage": report.stage, **(extra or {})})
    report.write_history(out / "history.jsonl")
    (out / "report.json").write_text(
        json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    ema = report.extra.get("ema")
    if ema:
        flat = {f"{comp}.{name}": tensor
                for comp, state in ema.items()
                for name, tensor in state.items()}
        ckpt.save_checkpoint(flat, out / "ema", kind="ema",
                             config={"stage": report.stage})


# ---- subcommand handlers ----------------------------------------------------


def cmd_init(args):
    profile = get_profile(args.profile)
    model = StylizerModel(profile, seed=args.seed)
    model.save(_check_new_out(args), extra={"stage": "init"})
    print(f"initialized {profile.name} bundle at {args.out}")
    return 0


def cmd_pretrain_prior(args):
    profile, config = _stage_config(args, "prior")
    if args.checkpoint:
        model = StylizerModel.load(args.checkpoint)
    else:
        model = StylizerModel(profile, seed=args.seed)
    _check_new_out(args)
    report = training.pretrain_prior(model, config)
    _save_run(model, report, args.out)
    print(json.dumps(report.summary()))
    return 0


def cmd_train_stage1(args):
    _, config = _stage_config(args, "stage1")
    model = StylizerModel.load(args.checkpoint)
    _check_new_out(args)
    report = training.run_stage1(model, config)
    _save_run(model, report, args.out)
    print(json.dumps(report.summary()))
    return 0


def cmd_train_stage2(args):
    _, config = _stage_config(args, "stage2")
    model = StylizerModel.load(args.checkpoint)
    _check_new_out(args)
    report = training.run_stage2(model, config)
    _save_run(model, report, args.out)
    print(json.dumps(report.summary()))
    return 0


def cmd_train_mapper(args):
    _, config = _stage_config(args, "mapper")
    model = StylizerModel.load(args.checkpoint)
    _check_new_out(args)
    report = training.run_mapper_stage(model, config)
    _save_run(model, report, args.out)
    print(json.dumps(report.summary()))
    return 0


def cmd_finetune(args):
    stage = "finetune_zero" if args.mode == "zero" else "finetune_one"
    _, config = _stage_config(args, stage)
    model = StylizerModel.load(args.checkpoint)
    _check_new_out(args)
    if args.prompt_image:
        prompt = GuidancePrompt(
            kind="image",
            image=load_image(args.prompt_image, model.profile.resolution))
    elif args.prompt:
        if args.mode == "one":
            raise UsageError("one-shot mode requires --prompt-image")
        prompt = GuidancePrompt(kind="text", text=args.prompt)
    else:
        raise UsageError("finetune requires --prompt or --prompt-image")
    tuned, report = training.finetune(model, config, prompt)
    _save_run(tuned, report, args.out, extra={"mode": args.mode})
    print(json.dumps(report.summary()))
    return 0


def _load_wplus(model, args, which, seed):
    if which == "text":
        return model.wplus_from_text(args.prompt)
    if which == "image":
        ref = load_image(args.reference, model.profile.resolution)
        return model.wplus_from_image(ref)
    z = sample_z(1, model.profile.d_z, torch.Generator().manual_seed(seed))
    return model.wplus_from_z(z)


def cmd_stylize(args):
    model = StylizerModel.load(args.checkpoint)
    image = load_image(args.input, model.profile.resolution).unsqueeze(0)
    if args.mode == "text" and not args.prompt:
        raise UsageError("mode=text requires --prompt")
    if args.mode == "image" and not args.reference:
        raise UsageError("mode=image requires --reference")
    wplus = _load_wplus(model, args, args.mode, args.seed)
    with torch.no_grad():
        out = model.stylize(image, wplus)
    save_image(out[0], args.out)
    print(args.out)
    return 0


def cmd_interpolate(args):
    model = StylizerModel.load(args.checkpoint)
    image = load_image(args.input, model.profile.resolution).unsqueeze(0)
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --alphas: {exc}")
    if not alphas:
        raise UsageError("--alphas must list at least one value")
    gen_a = torch.Generator().manual_seed(args.seed)
    gen_b = torch.Generator().manual_seed(args.seed + 1)
    w_a = model.wplus_from_z(sample_z(1, model.profile.d_z, gen_a))
    w_b = model.wplus_from_z(sample_z(1, model.profile.d_z, gen_b))
    frames = []
    with torch.no_grad():
        grid = model.encode(image)
        for alpha in alphas:
            blend = interpolate_styles(w_a, w_b, alpha)
            frames.append(model.decoder.decode(grid, blend)[0])
    strip = torch.cat(frames, dim=-1)
    save_image(strip, args.out)
    print(args.out)
    return 0


def cmd_eval(args):
    model = StylizerModel.load(args.checkpoint)
    from .data import DatasetSource
    real = DatasetSource(args.real_dir, model.profile.resolution)
    style = DatasetSource(args.style_dir, model.profile.resolution)
    real_images = torch.stack([real.get(i) for i in range(len(real))])
    style_images = torch.stack([style.get(i) for i in range(len(style))])
    n = args.n_samples or len(real_images)
    embedder = ToyPerceptualEmbedder()
    def identity_fn(images):
        from .backbones import resize_for_backbone
        return model.backbone.embed_image(
            resize_for_backbone(images, model.backbone.resolution))
    metrics = eval_random_stylization(model, real_images, style_images, n,
                                      args.seed, embedder=embedder,
                                      identity_fn=identity_fn)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_export_grid(args):
    model = StylizerModel.load(args.checkpoint)
    image = load_image(args.input, model.profile.resolution).unsqueeze(0)
    with torch.no_grad():
        grid = model.encode(image)[0]
    ckpt.save_checkpoint({"grid": grid}, args.out, kind="feature-grid",
                         config={"profile": model.profile.name,
                                 "source": os.path.basename(args.input)})
    print(args.out)
    return 0


def cmd_serve(args):
    import uvicorn
    from .service import create_app
    app = create_app(args.checkpoint, seed=args.seed)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmfs", description="Multi-modal face stylization pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a fresh untrained bundle")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("pretrain-prior",
                       help="adversarially pretrain the face prior")
    _add_train_args(p, needs_checkpoint=False)
    p.add_argument("--checkpoint", help="optional bundle to start from")
    p.set_defaults(func=cmd_pretrain_prior)

    p = sub.add_parser("train-stage1", help="train the encoder (Stage I)")
    _add_train_args(p)
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2",
                       help="adversarial stylization training (Stage II)")
    _add_train_args(p)
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("train-mapper", help="train the embedding-to-w+ mapper")
    _add_train_args(p)
    p.set_defaults(func=cmd_train_mapper)

    p = sub.add_parser("finetune", help="guided decoder-only fine-tune")
    _add_train_args(p)
    p.add_argument("--mode", choices=("zero", "one"), required=True)
    p.add_argument("--prompt", help="text prompt (zero-shot)")
    p.add_argument("--prompt-image", help="reference image path")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("stylize", help="stylize one image")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("random", "text", "image"),
                   default="random")
    p.add_argument("--prompt")
    p.add_argument("--reference")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("interpolate",
                       help="render a style-interpolation strip")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alphas", default="1.0,0.8,0.6,0.4,0.2,0.0")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("eval", help="random-stylization metrics")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--real-dir", required=True)
    p.add_argument("--style-dir", required=True)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-grid",
                       help="export an image's style feature grid")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_grid)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures -> exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
