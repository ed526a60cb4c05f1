"""Command-line interface.

Verbs: ``verify`` (property/equivalence suite), ``train`` (single config),
``sweep`` (multi-size scaling runs), ``fit`` (power-law fit of a sweep
CSV), ``report`` (re-emit CSV/SVG from a sweep CSV).

Exit codes: 0 success, 2 configuration error, 3 verification failure,
4 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, backends
from .checkpoint import save_model
from .config import AppConfig, load_config, parse_config
from .datasets import generate_synthetic, split_train_heldout
from .errors import ConfigError, PreconditionError, TrainingDivergedError
from .model import build_model
from .scaling import (SweepConfig, count_flops, count_params, emit_report,
                      fit_power_law, parse_report_csv, run_sweep)
from .training import AnnealSchedule, train
from .verification import run_all

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_DIVERGED = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unimixer",
        description="Feature-mixing blocks for recommendation-model scaling: "
                    "verification, training and scaling sweeps.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_verify = sub.add_parser("verify", help="run the property/equivalence suite")
    p_verify.add_argument("--seed", type=int, default=0)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="YAML config file (defaults apply if omitted)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", type=Path, default=Path("out"))
    common.add_argument("--variant", choices=["self-attn", "hetero-attn",
                                              "tokenmixer", "fm", "unimixing",
                                              "unimixing-lite"], default=None)
    common.add_argument("--tau-start", type=float, default=None)
    common.add_argument("--tau-end", type=float, default=None)
    common.add_argument("--anneal-steps", type=int, default=None)

    p_train = sub.add_parser("train", parents=[common],
                             help="train one model and save a checkpoint")
    p_sweep = sub.add_parser("sweep", parents=[common],
                             help="train a grid of sizes and emit a report")
    p_sweep.add_argument("--baseline-auc", type=float, default=None)

    p_fit = sub.add_parser("fit", help="fit a power law to a sweep CSV")
    p_fit.add_argument("--csv", type=Path, required=True)
    p_fit.add_argument("--x-kind", choices=["params", "flops"], default="params")
    p_fit.add_argument("--baseline-auc", type=float, default=0.5)

    p_report = sub.add_parser("report", help="re-emit report files from a CSV")
    p_report.add_argument("--csv", type=Path, required=True)
    p_report.add_argument("--out-dir", type=Path, default=Path("out"))
    p_report.add_argument("--baseline-auc", type=float, default=0.5)
    return parser


def _load_app_config(args) -> AppConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    if args.variant is not None:
        cfg = dataclasses.replace(
            cfg, model_cfg=dataclasses.replace(cfg.model_cfg, variant=args.variant)
        )
        if cfg.sweep is not None:
            cfg = dataclasses.replace(cfg, sweep=dataclasses.replace(
                cfg.sweep, sizes=tuple(
                    dataclasses.replace(s, variant=args.variant)
                    for s in cfg.sweep.sizes
                )))
    if any(v is not None for v in (args.tau_start, args.tau_end,
                                   args.anneal_steps)):
        base = cfg.train_cfg.schedule or AnnealSchedule()
        sched = AnnealSchedule(
            tau_start=args.tau_start if args.tau_start is not None else base.tau_start,
            tau_end=args.tau_end if args.tau_end is not None else base.tau_end,
            steps=args.anneal_steps if args.anneal_steps is not None else base.steps,
        )
        cfg = dataclasses.replace(cfg, train_cfg=dataclasses.replace(
            cfg.train_cfg, schedule=sched, warm_restart=None))
    return cfg


def _cmd_verify(args) -> int:
    backends.warmup()
    results = run_all(args.seed)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"[{mark}] {r.name:<{width}}  {r.detail} ({r.seconds:.2f}s)")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} checks passed "
          f"(backend: {backends.ACTIVE_BACKEND})")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def _cmd_train(args) -> int:
    cfg = _load_app_config(args)
    data = generate_synthetic(cfg.data_spec)
    train_data, heldout = split_train_heldout(data, cfg.train_cfg.heldout_frac,
                                              cfg.train_cfg.split_seed)
    model = build_model(cfg.data_spec.fields, cfg.model_cfg,
                        np.random.default_rng(args.seed))
    pc = count_params(model)
    fc = count_flops(model)
    print(f"variant={cfg.model_cfg.variant} dense_params={pc.dense_total} "
          f"embeddings={pc.embedding_total} flops/sample={fc.total_flops}")
    result = train(model, train_data, cfg.train_cfg, seed=args.seed,
                   heldout=heldout)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = args.out_dir / "model.umx"
    save_model(ckpt, model)
    metrics = {
        "final_loss": result.final_loss,
        "heldout_auc": result.heldout_auc,
        "heldout_uauc": result.heldout_uauc,
        "steps": cfg.train_cfg.steps,
        "seed": args.seed,
        "variant": cfg.model_cfg.variant,
        "dense_params": pc.dense_total,
    }
    (args.out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2))
    print(f"final loss {result.final_loss:.4f}  heldout AUC "
          f"{result.heldout_auc:.4f}  UAUC {result.heldout_uauc:.4f}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _load_app_config(args)
    if cfg.sweep is None:
        raise ConfigError("config has no [sweep] section")
    baseline = (args.baseline_auc if args.baseline_auc is not None
                else cfg.sweep.baseline_auc)
    sweep_cfg = SweepConfig(
        data_spec=cfg.data_spec,
        sizes=cfg.sweep.sizes,
        train_cfg=cfg.train_cfg,
        seeds=cfg.sweep.seeds,
        heldout_frac=cfg.train_cfg.heldout_frac,
        split_seed=cfg.train_cfg.split_seed,
    )

    def progress(size_idx, point):
        print(f"  size {size_idx}: seed={point.seed} params={point.params} "
              f"auc={point.auc:.4f} ({point.status})")

    points = run_sweep(sweep_cfg, progress=progress)
    fits = []
    ok_points = [p for p in points if p.status == "ok" and p.auc > baseline]
    for kind in ("params", "flops"):
        if len(ok_points) >= 3:
            try:
                fits.append(fit_power_law(ok_points, kind, baseline))
            except PreconditionError:
                pass
    files = emit_report(points, fits, args.out_dir)
    for f in fits:
        print(f"fit[{f.x_kind}]: delta_auc = {f.a:.6f} * x^{f.b:.6f} "
              f"(log-RMSE {f.residual:.4f}, baseline {f.baseline_auc})")
    print(f"report: {files['csv']}, {files['svg']}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    points = [p for p in parse_report_csv(args.csv) if p.status == "ok"]
    usable = [p for p in points if p.auc > args.baseline_auc]
    dropped = len(points) - len(usable)
    if dropped:
        print(f"note: {dropped} point(s) at or below baseline excluded")
    fit = fit_power_law(usable, args.x_kind, args.baseline_auc)
    print(f"delta_auc = {fit.a:.6f} * {fit.x_kind}(millions)^{fit.b:.6f}")
    print(f"log-space RMSE {fit.residual:.4f} on {fit.n_points} points")
    return EXIT_OK


def _cmd_report(args) -> int:
    points = parse_report_csv(args.csv)
    usable = [p for p in points if p.status == "ok" and p.auc > args.baseline_auc]
    fits = []
    for kind in ("params", "flops"):
        if len(usable) >= 3:
            fits.append(fit_power_law(usable, kind, args.baseline_auc))
    files = emit_report(points, fits, args.out_dir)
    print(f"report: {files['csv']}, {files['svg']}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verb == "verify":
            return _cmd_verify(args)
        if args.verb == "train":
            return _cmd_train(args)
        if args.verb == "sweep":
            return _cmd_sweep(args)
        if args.verb == "fit":
            return _cmd_fit(args)
        if args.verb == "report":
            return _cmd_report(args)
        raise ConfigError(f"unknown verb {args.verb!r}")
    except (ConfigError, PreconditionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
