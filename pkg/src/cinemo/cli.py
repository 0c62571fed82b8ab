"""Command-line front end.

Commands: `cinemo dataset gen`, `cinemo train`, `cinemo animate`,
`cinemo invert`, `cinemo eval`, `cinemo dct-demo`. Every command is
reproducible from (config file, seed) and writes a JSON sidecar with the
effective merged configuration. Exit codes: 0 ok, 2 config error,
3 runtime/NaN error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import eval_metrics
from .config import ConfigError, RunConfig, load_run_config, write_sidecar
from .dctinit import low_band_energy_fraction
from .denoiser import init_params, load_checkpoint, param_count, save_checkpoint
from .diffusion import SamplerConfig
from .eval_metrics import EvalReport, bucket_response, first_frame_error, jump_score
from .pipeline import AnimatePipeline
from .training import train
from .video_io import (VideoClip, export_clip, generate_clip, generate_dataset,
                       load_dataset, load_image, save_dataset)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override file values")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output path")


def _add_refine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dctinit", choices=["on", "off"], help="noise refinement switch")
    p.add_argument("--dct-tau", type=int, help="forward-noising step for the image latent")
    p.add_argument("--dct-cutoff-t", type=float, help="temporal low-pass cutoff in (0, 1]")
    p.add_argument("--dct-cutoff-s", type=float, help="spatial low-pass cutoff in (0, 1]")
    p.add_argument("--dct-filter", choices=["ideal", "gaussian"])
    p.add_argument("--freq-mode", choices=["dct", "fft"])


def _add_sampler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, help="DDIM steps (default 50)")
    p.add_argument("--guidance-scale", type=float, help="CFG scale (default 7.5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cinemo",
                                     description="Desk-scale image animation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ds = sub.add_parser("dataset", help="corpus commands")
    ds_sub = p_ds.add_subparsers(dest="subcommand", required=True)
    p_gen = ds_sub.add_parser("gen", help="generate a synthetic clip shard")
    _add_common(p_gen)
    p_gen.set_defaults(func=cmd_dataset_gen)

    p_train = sub.add_parser("train", help="train the residual denoiser")
    _add_common(p_train)
    p_train.add_argument("--data", required=True, help="clip shard from `dataset gen`")
    p_train.add_argument("--train-steps", type=int, help="override train.n_steps")
    p_train.set_defaults(func=cmd_train)

    p_anim = sub.add_parser("animate", help="animate a still image")
    _add_common(p_anim)
    p_anim.add_argument("--ckpt", required=True)
    p_anim.add_argument("--image", required=True, help="input PNG")
    p_anim.add_argument("--class", dest="class_name", required=True,
                        help="motion class name, e.g. move_right")
    p_anim.add_argument("--bucket", type=int, required=True, help="motion bucket 0-19")
    p_anim.add_argument("--init-noise", help=".npz noise file from `invert`")
    _add_sampler_flags(p_anim)
    _add_refine_flags(p_anim)
    p_anim.set_defaults(func=cmd_animate)

    p_inv = sub.add_parser("invert", help="recover the initial noise of a clip")
    _add_common(p_inv)
    p_inv.add_argument("--ckpt", required=True)
    p_inv.add_argument("--video", required=True, help="raw clip shard (one clip)")
    p_inv.add_argument("--class", dest="class_name", required=True)
    p_inv.add_argument("--bucket", type=int, required=True)
    p_inv.add_argument("--guidance-scale", type=float, default=1.0,
                       help="inversion guidance (default 1: faithful round trip)")
    p_inv.add_argument("--steps", type=int)
    p_inv.set_defaults(func=cmd_invert)

    p_eval = sub.add_parser("eval", help="quantitative report on a checkpoint")
    _add_common(p_eval)
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--image", help="input PNG (default: a synthetic frame)")
    p_eval.add_argument("--class", dest="class_name", default="move_right")
    p_eval.add_argument("--buckets", default="0,9,18", help="comma-separated buckets")
    p_eval.add_argument("--n-seeds", type=int, default=20)
    _add_sampler_flags(p_eval)
    _add_refine_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_demo = sub.add_parser("dct-demo", help="DCT vs FFT vs no refinement, side by side")
    _add_common(p_demo)
    p_demo.add_argument("--ckpt", required=True)
    p_demo.add_argument("--image", required=True)
    p_demo.add_argument("--class", dest="class_name", default="move_right")
    p_demo.add_argument("--bucket", type=int, default=12)
    _add_sampler_flags(p_demo)
    p_demo.set_defaults(func=cmd_dct_demo)

    return parser


def _load_config(args) -> RunConfig:
    cfg = load_run_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "steps", None) is not None:
        cfg.sampler.steps = args.steps
    if getattr(args, "guidance_scale", None) is not None:
        cfg.sampler.guidance_scale = args.guidance_scale
    if getattr(args, "train_steps", None) is not None:
        cfg.train.n_steps = args.train_steps
    if getattr(args, "dctinit", None) is not None:
        cfg.refine.enabled = args.dctinit == "on"
    for flag, attr in (("dct_tau", "tau"), ("dct_cutoff_t", "cutoff_t"),
                       ("dct_cutoff_s", "cutoff_s"), ("dct_filter", "filter_kind"),
                       ("freq_mode", "freq_mode")):
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg.refine, attr, val)
    cfg.validate()
    return cfg


def _load_pipeline(args, cfg: RunConfig):
    """Build an AnimatePipeline from a checkpoint; sampler/refine come from cfg."""
    try:
        params, model_cfg, extra = load_checkpoint(args.ckpt)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.ckpt}")
    sched = cfg.schedule.build()
    pipe = AnimatePipeline(
        params, model_cfg, sched,
        sampler=SamplerConfig(n_steps=cfg.sampler.steps),
        guidance_scale=cfg.sampler.guidance_scale,
        refine=cfg.refine,
        n_frames=extra.get("n_frames", cfg.train.n_frames),
        pixel_channels=extra.get("channels", cfg.dataset.channels),
    )
    return pipe, extra


def _resolve_class(cfg: RunConfig, extra: dict, name: str) -> int:
    names = extra.get("class_names") or [mc.name for mc in cfg.dataset.motion_classes]
    if name not in names:
        raise ConfigError(f"unknown motion class {name!r}; trained classes: {names}")
    return names.index(name)


def _check_image(image: np.ndarray, extra: dict) -> None:
    res = extra.get("resolution")
    if res and list(image.shape[1:]) != list(res):
        raise ConfigError(
            f"image is {image.shape[1:]}, checkpoint was trained at {tuple(res)}")


def _check_bucket(b: int) -> None:
    if not (0 <= b <= 19):
        raise ConfigError(f"bucket {b} outside [0, 19]")


# -- commands -----------------------------------------------------------------


def cmd_dataset_gen(args) -> None:
    cfg = _load_config(args)
    clips = generate_dataset(cfg.dataset, seed=cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(clips, out)
    write_sidecar(out.with_suffix(out.suffix + ".json"), "dataset gen", cfg,
                  {"n_clips": len(clips), "shard": str(out)})
    print(f"wrote {len(clips)} clips to {out}")


def cmd_train(args) -> None:
    cfg = _load_config(args)
    try:
        dataset = load_dataset(args.data)
    except FileNotFoundError:
        raise ConfigError(f"data shard not found: {args.data}")
    if not dataset:
        raise ConfigError(f"data shard {args.data} is empty")

    cfg.train.seed = cfg.seed
    params = init_params(cfg.model, seed=cfg.seed)
    sched = cfg.schedule.build()
    params, history = train(params, dataset, cfg.train, cfg.model, sched,
                            log_every=200)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    extra = {
        "n_frames": cfg.train.n_frames,
        "channels": cfg.dataset.channels,
        "resolution": list(cfg.dataset.resolution),
        "class_names": [mc.name for mc in cfg.dataset.motion_classes],
        "train_steps": len(history),
        "final_loss": history[-1] if history else None,
    }
    save_checkpoint(out, params, cfg.model, extra)
    csv_path = out.with_suffix(out.suffix + ".loss.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        writer.writerows((i + 1, v) for i, v in enumerate(history))
    write_sidecar(out.with_suffix(out.suffix + ".json"), "train", cfg,
                  {"data": str(args.data), "checkpoint": str(out),
                   "parameters": param_count(params)})
    print(f"trained {len(history)} steps ({param_count(params)} params) -> {out}")


def _write_animation(out_dir: Path, clip: VideoClip) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    export_clip(clip, out_dir / "animation.gif", "gif")
    export_clip(clip, out_dir / "frames", "png_dir")
    export_clip(clip, out_dir / "clip.cnmo", "raw")


def cmd_animate(args) -> None:
    cfg = _load_config(args)
    pipe, extra = _load_pipeline(args, cfg)
    image = _load_image_arg(args.image)
    _check_image(image, extra)
    _check_bucket(args.bucket)
    class_id = _resolve_class(cfg, extra, args.class_name)

    init_noise = None
    if args.init_noise:
        with np.load(args.init_noise) as z:
            init_noise = z["noise"]
    clip = pipe.animate(image, class_id, args.bucket, cfg.seed, init_noise=init_noise)

    out_dir = Path(args.out)
    _write_animation(out_dir, clip)
    write_sidecar(out_dir / "run.json", "animate", cfg, {
        "image": str(args.image), "class": args.class_name, "bucket": args.bucket,
        "init_noise": args.init_noise, "checkpoint": str(args.ckpt),
    })
    print(f"animated {clip.n_frames} frames -> {out_dir}")


def _load_image_arg(path) -> np.ndarray:
    try:
        return load_image(path)
    except FileNotFoundError:
        raise ConfigError(f"image not found: {path}")


def cmd_invert(args) -> None:
    cfg = _load_config(args)
    pipe, extra = _load_pipeline(args, cfg)
    _check_bucket(args.bucket)
    class_id = _resolve_class(cfg, extra, args.class_name)
    try:
        clips = load_dataset(args.video)
    except FileNotFoundError:
        raise ConfigError(f"video shard not found: {args.video}")
    if len(clips) != 1:
        raise ConfigError(f"expected a single-clip shard, got {len(clips)} clips")
    clip = clips[0]
    _check_image(clip.frames[0], extra)

    noise = pipe.invert(clip, class_id, args.bucket, guidance=args.guidance_scale)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, noise=noise, class_id=class_id, bucket=args.bucket)
    write_sidecar(out.with_suffix(out.suffix + ".json"), "invert", cfg, {
        "video": str(args.video), "class": args.class_name, "bucket": args.bucket,
        "guidance_scale": args.guidance_scale, "checkpoint": str(args.ckpt),
    })
    print(f"wrote initial noise {noise.shape} -> {out}")


def cmd_eval(args) -> None:
    cfg = _load_config(args)
    pipe, extra = _load_pipeline(args, cfg)
    class_id = _resolve_class(cfg, extra, args.class_name)
    try:
        buckets = [int(tok) for tok in args.buckets.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"bad bucket list {args.buckets!r}")
    for b in buckets:
        _check_bucket(b)

    if args.image:
        image = _load_image_arg(args.image)
        _check_image(image, extra)
    else:  # deterministic synthetic first frame
        probe = generate_clip(cfg.dataset, 0, 0.0, seed=cfg.seed)
        image = probe.frames[0]

    def animate_fn(bucket, seeds):
        return pipe.animate_batch(image, class_id, bucket, seeds)

    table = bucket_response(animate_fn, buckets, args.n_seeds, base_seed=cfg.seed)
    probe_clip = pipe.animate(image, class_id, buckets[len(buckets) // 2], cfg.seed)
    report = EvalReport(
        first_frame_psnr=first_frame_error(probe_clip, image),
        measured_intensity=table,
        jump_score=jump_score(probe_clip),
        n_seeds=args.n_seeds,
        extras={"class": args.class_name, "buckets": buckets},
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    write_sidecar(out.with_suffix(out.suffix + ".run.json"), "eval", cfg,
                  {"checkpoint": str(args.ckpt)})
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def cmd_dct_demo(args) -> None:
    from dataclasses import replace

    cfg = _load_config(args)
    pipe, extra = _load_pipeline(args, cfg)
    image = _load_image_arg(args.image)
    _check_image(image, extra)
    _check_bucket(args.bucket)
    class_id = _resolve_class(cfg, extra, args.class_name)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    variants = {
        "dct": replace(cfg.refine, enabled=True, freq_mode="dct"),
        "fft": replace(cfg.refine, enabled=True, freq_mode="fft"),
        "off": replace(cfg.refine, enabled=False),
    }
    diagnostics: dict = {"bucket": args.bucket, "seed": cfg.seed, "jump_scores": {}}
    for name, refine_cfg in variants.items():
        pipe.refine = refine_cfg
        clip = pipe.animate(image, class_id, args.bucket, cfg.seed)
        export_clip(clip, out_dir / f"{name}.gif", "gif")
        diagnostics["jump_scores"][name] = jump_score(clip)

    # spectral-leakage digest: energy concentration of a non-periodic ramp
    n = max(pipe.n_frames - 1, 3)
    ramp = np.broadcast_to(
        np.linspace(0.0, 1.0, n)[:, None, None, None], (n, 1, 8, 8)).copy()
    diagnostics["ramp_low_band_energy"] = {
        "dct": low_band_energy_fraction(ramp, 0.1, "dct"),
        "fft": low_band_energy_fraction(ramp, 0.1, "fft"),
    }
    with open(out_dir / "diagnostics.json", "w") as f:
        json.dump(diagnostics, f, indent=2, sort_keys=True)
        f.write("\n")
    write_sidecar(out_dir / "run.json", "dct-demo", cfg,
                  {"image": str(args.image), "checkpoint": str(args.ckpt)})
    print(f"wrote {', '.join(sorted(variants))} demos -> {out_dir}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except RuntimeError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
