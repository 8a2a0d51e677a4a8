"""Command line surface: one thin subcommand per pipeline stage.

Exit codes: 0 success, 1 domain error (stable ``E_*`` code on stderr),
2 usage error. Every randomized subcommand takes ``--seed`` and replays
identically.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import hgfg
from .entropy import DEFAULT_THETA
from .errors import ConfigError, EngineError
from .oracle import SyntheticOracleConfig, SyntheticSegmenter, SubprocessSegmenter, generate_pseudo_label
from .augment import sample_augs
from .pipeline import (
    PipelineConfig,
    apply_oracle_env_override,
    evaluate,
    load_manifest,
    run_simulation,
)
from .pool import load_pool, save_pool, snapshot, update_pool
from .prompts import extract_prompts, load_prompts, save_prompts
from .raster import DEFAULT_HI, DEFAULT_LO, GrayMask, load_mask, save_mask
from .supervise import (
    SelectionThresholds,
    ema_update,
    load_pvec,
    loss_semi,
    loss_weak,
    partial_ce,
    pseudo_label_loss,
    save_pvec,
    select,
    weight_map,
)
from .raster import SparseAnnotation


def _write_pgm(mask: GrayMask, path) -> None:
    data = np.round(mask.values * 255.0).astype(np.uint8)
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def _maybe_dump_pgm(args, mask: GrayMask, out_path) -> None:
    if getattr(args, "dump_pgm", False):
        _write_pgm(mask, Path(out_path).with_suffix(".pgm"))


def _emit(obj, out_path=None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1)
    if out_path:
        Path(out_path).write_text(text)
    else:
        print(text)


def cmd_fuse(args) -> int:
    from .augment import fuse

    masks = [load_mask(p) for p in args.masks]
    fused = fuse(masks)
    save_mask(fused, args.out)
    _maybe_dump_pgm(args, fused, args.out)
    return 0


def cmd_prompts(args) -> int:
    coarse = load_mask(args.coarse)
    ps = extract_prompts(coarse, args.lo, args.hi)
    mask_out = args.mask_out or str(Path(args.out).with_suffix(".mask.mskf"))
    save_prompts(ps, args.out, mask_out)
    return 0


def _build_oracle(cfg_path: str, env_override: bool = True):
    obj = json.loads(Path(cfg_path).read_text())
    kind = obj.get("kind", "synthetic")
    if kind == "synthetic":
        return SyntheticSegmenter(
            SyntheticOracleConfig(
                ground_truth=load_mask(obj["ground_truth"]),
                base_quality=float(obj.get("base_quality", 0.5)),
                prompt_gain=float(obj.get("prompt_gain", 0.0)),
                noise_sigma=float(obj.get("noise_sigma", 0.0)),
                seed=int(obj.get("seed", 0)),
            )
        )
    if kind == "subprocess":
        import os

        command = obj.get("command")
        if env_override and os.environ.get("SEE_ORACLE_CMD"):
            command = os.environ["SEE_ORACLE_CMD"].split()
        if not command:
            raise ConfigError("subprocess oracle requires a command")
        return SubprocessSegmenter(command, timeout_ms=int(obj.get("timeout_ms", 30_000)))
    raise ConfigError(f"unknown oracle kind {kind!r}")


def cmd_pseudo(args) -> int:
    image = load_mask(args.image)
    prompts = load_prompts(args.prompts)
    oracle = _build_oracle(args.oracle)
    augs = sample_augs(args.k, args.seed)
    pseudo = generate_pseudo_label(image, augs, prompts, oracle)
    save_mask(pseudo, args.out)
    _maybe_dump_pgm(args, pseudo, args.out)
    return 0


def cmd_pool_update(args) -> int:
    candidate = load_mask(args.candidate)
    prev = load_mask(args.prev)
    pool = load_pool(args.pool_dir, args.image_id, capacity=args.capacity)
    pool = update_pool(
        pool, candidate, prev,
        rng_seed=args.seed, epoch=args.epoch, theta=args.theta,
        always_replace=args.always_replace,
    )
    save_pool(pool, args.pool_dir, args.image_id)
    print(f"pool size {len(pool)}")
    return 0


def cmd_weight(args) -> int:
    mask = load_mask(args.mask)
    thresholds = SelectionThresholds(tau_a=args.tau_a, tau_r=args.tau_r)
    verdict = select(mask, thresholds, args.theta)
    w = weight_map(mask, thresholds, args.theta)
    save_mask(w, args.out)
    _maybe_dump_pgm(args, w, args.out)
    print("selected" if verdict else "rejected")
    return 0


def cmd_loss(args) -> int:
    pred = load_mask(args.pred)
    pool = load_pool(args.pool_dir, args.image_id, capacity=args.capacity)
    snap = snapshot(pool)
    thresholds = SelectionThresholds(tau_a=args.tau_a, tau_r=args.tau_r)
    terms = {
        "pseudo": pseudo_label_loss(pred, snap, thresholds, args.theta),
        "pool_size": len(snap),
    }
    if args.mode == "weak":
        if not args.annotation:
            raise ConfigError("weak mode requires --annotation")
        ann = SparseAnnotation.from_mask(load_mask(args.annotation), args.lo, args.hi)
        terms["partial_ce"] = partial_ce(pred, ann)
        terms["total"] = loss_weak(pred, snap, ann, thresholds, args.theta)
    else:
        label = load_mask(args.label) if args.label else None
        terms["total"] = loss_semi(pred, snap, label, thresholds, args.theta)
        terms["has_label"] = label is not None
    _emit(terms, args.out)
    return 0


def cmd_ema(args) -> int:
    teacher = load_pvec(args.teacher)
    student = load_pvec(args.student)
    save_pvec(ema_update(teacher, student, args.eta), args.out)
    return 0


def cmd_hgfg_check(args) -> int:
    try:
        h, w, c = (int(d) for d in args.dims.lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"bad --dims {args.dims!r}, expected HxWxC") from exc
    report = hgfg.check_gradients(
        args.seed, (h, w, c),
        granularities=(args.n1, args.n2),
        iterations=args.iterations,
    )
    payload = {
        "dims": [h, w, c],
        "seed": args.seed,
        "max_relative_error": max(report.values()),
        "groups": report,
    }
    _emit(payload, args.out)
    return 0


def cmd_simulate(args) -> int:
    obj = json.loads(Path(args.config).read_text())
    manifest = obj.get("manifest")
    if not manifest:
        raise ConfigError("simulate config requires a 'manifest' path")
    if args.workers is not None:
        obj["workers"] = args.workers
    config = apply_oracle_env_override(PipelineConfig.from_json(obj))
    dataset = load_manifest(manifest)
    reports = run_simulation(config, dataset)
    last = reports[-1]["aggregate"]
    print(json.dumps({"epochs": len(reports), "final": last}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    names = sorted(p.name for p in pred_dir.glob("*.mskf"))
    if not names:
        raise ConfigError(f"no .mskf files in {pred_dir}")
    preds, gts = [], []
    for name in names:
        gt_path = gt_dir / name
        if not gt_path.exists():
            raise ConfigError(f"missing ground truth for {name}")
        preds.append(load_mask(pred_dir / name))
        gts.append(load_mask(gt_path))
    result = evaluate(preds, gts)
    result["names"] = names
    _emit(result, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="see", description="pseudo-label engineering engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_thresholds(p, selection=True):
        p.add_argument("--theta", type=float, default=DEFAULT_THETA)
        if selection:
            p.add_argument("--tau-a", type=float, default=0.1)
            p.add_argument("--tau-r", type=float, default=0.5)

    p = sub.add_parser("fuse", help="average masks into one")
    p.add_argument("masks", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--dump-pgm", action="store_true")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("prompts", help="extract prompts from a coarse mask")
    p.add_argument("coarse")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--mask-out")
    p.add_argument("--lo", type=float, default=DEFAULT_LO)
    p.add_argument("--hi", type=float, default=DEFAULT_HI)
    p.set_defaults(func=cmd_prompts)

    p = sub.add_parser("pseudo", help="prompted pseudo-label via an oracle")
    p.add_argument("image")
    p.add_argument("--prompts", required=True)
    p.add_argument("--oracle", required=True, help="oracle config JSON")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--k", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-pgm", action="store_true")
    p.set_defaults(func=cmd_pseudo)

    p = sub.add_parser("pool-update", help="update a stored label pool")
    p.add_argument("candidate")
    p.add_argument("--pool-dir", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--prev", required=True)
    p.add_argument("--capacity", type=int, default=3)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--always-replace", action="store_true")
    p.add_argument("--theta", type=float, default=DEFAULT_THETA)
    p.set_defaults(func=cmd_pool_update)

    p = sub.add_parser("weight", help="selection verdict and weight map")
    p.add_argument("mask")
    p.add_argument("-o", "--out", required=True)
    add_thresholds(p)
    p.add_argument("--dump-pgm", action="store_true")
    p.set_defaults(func=cmd_weight)

    p = sub.add_parser("loss", help="loss terms for a prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--pool-dir", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--capacity", type=int, default=3)
    p.add_argument("--annotation")
    p.add_argument("--label")
    p.add_argument("--mode", choices=("weak", "semi"), default="weak")
    p.add_argument("--lo", type=float, default=DEFAULT_LO)
    p.add_argument("--hi", type=float, default=DEFAULT_HI)
    add_thresholds(p)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("ema", help="EMA-combine two parameter vectors")
    p.add_argument("teacher")
    p.add_argument("student")
    p.add_argument("--eta", type=float, default=0.996)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_ema)

    p = sub.add_parser("hgfg-check", help="gradient-check the grouping kernel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="3x3x4")
    p.add_argument("--n1", type=int, default=2)
    p.add_argument("--n2", type=int, default=4)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_hgfg_check)

    p = sub.add_parser("simulate", help="run the epoch driver from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="MAE/IoU of predictions against labels")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"E_IO: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"E_CONFIG: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
