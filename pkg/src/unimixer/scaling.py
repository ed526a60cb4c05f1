"""Parameter/FLOP accounting, scaling sweeps, power-law fits, reports.

FLOP conventions: one multiply-accumulate is counted as 2 FLOPs; the
per-sample multiply counts (1 per MAC) are reported alongside so both
conventions are in the CSV. Activation/normalization bookkeeping counts
a squaring, a scale or an elementwise transcendental as one multiply
each; these conventions are mirrored by the instrumented forward so the
analytic totals can be cross-checked against runtime tallies.

Parameter accounting follows the dense-count convention: embedding
tables (the sparse part in a production serving stack) are reported in
the breakdown but excluded from the headline count that scaling fits
use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .datasets import SyntheticSpec, generate_synthetic, split_train_heldout
from .errors import ConfigError, PreconditionError, TrainingDivergedError
from .metrics import auc, uauc
from .mixing import mult_counter
from .model import (MixerBlock, ModelConfig, UniMixerModel, build_model,
                    block_body, embed_features, model_forward, named_parameters,
                    siamese_finalize, siamese_step, tokenize, SiameseState)
from .training import TrainConfig, train

__all__ = [
    "ParamCounts",
    "count_params",
    "FlopCounts",
    "count_flops",
    "instrumented_forward_counts",
    "ScalingPoint",
    "PowerLawFit",
    "fit_power_law",
    "fit_power_law_xy",
    "SweepConfig",
    "run_sweep",
    "emit_report",
    "parse_report_csv",
    "CSV_HEADER",
]


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamCounts:
    by_module: dict[str, int]
    dense_total: int
    embedding_total: int

    @property
    def total(self) -> int:
        return self.dense_total + self.embedding_total


def count_params(model: UniMixerModel) -> ParamCounts:
    """Per-module breakdown of stored trainable scalars."""
    by_module: dict[str, int] = {}
    dense = 0
    emb = 0
    for name, arr in named_parameters(model).items():
        if name.startswith("tokenizer.emb."):
            module = "embeddings"
            emb += arr.size
        else:
            parts = name.split(".")
            module = ".".join(parts[:-1]) if parts[0] == "blocks" else parts[0]
            dense += arr.size
        by_module[module] = by_module.get(module, 0) + arr.size
    return ParamCounts(by_module=by_module, dense_total=dense, embedding_total=emb)


# ---------------------------------------------------------------------------
# FLOP accounting
# ---------------------------------------------------------------------------

def _rms_norm_mults(n: int) -> int:
    # n squarings + n scalings + mean and inverse-sqrt bookkeeping
    return 2 * n + 2


def _swiglu_mults(k: int, width: int, hidden: int) -> int:
    # up/gate projections, swish (sigmoid + product), gating, down projection
    return k * (2 * width * hidden + 3 * hidden + hidden * width)


def _mixing_mults(blk: MixerBlock) -> int:
    length, b = blk.length, blk.block_size
    k = length // b
    if blk.kind in ("unimixing", "unimixing-lite"):
        return k * k * b + length * b
    if blk.kind == "tokenmixer":
        return k * k * b
    if blk.kind in ("self-attn", "hetero-attn"):
        # q/k/v projections, scaled scores, softmax (exp + divide), apply
        return 3 * k * b * b + k * k * b + k * k + 2 * k * k + k * k * b
    if blk.kind == "fm":
        return 2 * k * k * b
    raise ConfigError(f"unknown block kind {blk.kind!r}")


@dataclass(frozen=True)
class FlopCounts:
    per_sample_by_category: dict[str, int]
    batch_size: int

    @property
    def per_sample_mults(self) -> int:
        return sum(self.per_sample_by_category.values())

    @property
    def total_mults(self) -> int:
        return self.per_sample_mults * self.batch_size

    @property
    def total_flops(self) -> int:
        return 2 * self.total_mults

    @property
    def mixing_mults(self) -> int:
        return self.per_sample_by_category["mixing"]


def count_flops(model: UniMixerModel, batch_size: int = 1) -> FlopCounts:
    """Analytic multiply counts (x2 for FLOPs) of one forward pass."""
    tok = model.tokenizer
    length = model.length
    cats: dict[str, int] = {
        "tokenize": tok.n_tokens * tok.token_dim * tok.chunk,
        "mixing": 0,
        "norm": 0,
        "swiglu": 0,
        "head": length,
    }
    for blk in model.blocks:
        k = blk.length // blk.block_size
        cats["mixing"] += _mixing_mults(blk)
        # block-internal residual norm + the two stream norms
        cats["norm"] += 3 * _rms_norm_mults(length)
        cats["swiglu"] += _swiglu_mults(k, blk.block_size, blk.ffn.hidden)
    cats["norm"] += _rms_norm_mults(length)  # stream fusion
    return FlopCounts(per_sample_by_category=cats, batch_size=batch_size)


def instrumented_forward_counts(batch, model: UniMixerModel,
                                tau: Optional[float] = None
                                ) -> tuple[np.ndarray, FlopCounts]:
    """Run the forward pass tallying multiplies from the shapes actually seen.

    Composes the same public ops as ``model_forward`` (the logits are
    returned for an exactness check); the mixing tally comes from the
    runtime multiply counter, everything else from runtime shapes under
    the module's conventions.
    """
    n = batch.labels.shape[0] if hasattr(batch, "labels") else next(
        iter(batch.cats.values())).shape[0]
    tok = model.tokenizer
    cats: dict[str, int] = {"tokenize": 0, "mixing": 0, "norm": 0,
                            "swiglu": 0, "head": 0}
    e = embed_features(batch, tok)
    tokens = tokenize(e, tok)
    cats["tokenize"] += tokens.shape[1] * tokens.shape[2] * tok.chunk
    z = tokens.reshape(n, -1)
    length = z.shape[1]
    state = SiameseState.init(z)
    for blk in model.blocks:
        before = mult_counter.total
        samples_before = mult_counter.calls

        def body(zz, b=blk):
            out = block_body(b, zz, tau)
            return out

        state = siamese_step(state, body)
        delta = mult_counter.total - before
        if mult_counter.calls > samples_before:
            cats["mixing"] += delta // n
        else:
            cats["mixing"] += _mixing_mults(blk)
        k = blk.length // blk.block_size
        cats["norm"] += 3 * _rms_norm_mults(length)
        cats["swiglu"] += _swiglu_mults(k, blk.block_size, blk.ffn.hidden)
    fused = siamese_finalize(state)
    cats["norm"] += _rms_norm_mults(length)
    cats["head"] += length
    logits = fused @ model.head_w + model.head_b[0]
    return logits, FlopCounts(per_sample_by_category=cats, batch_size=n)


# ---------------------------------------------------------------------------
# sweep + fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingPoint:
    variant: str
    params: int
    flops: int
    mults: int
    auc: float
    uauc: float
    seed: int
    status: str = "ok"


@dataclass(frozen=True)
class PowerLawFit:
    """auc = baseline + a * x^b fitted by least squares in log-log space."""

    a: float
    b: float
    residual: float
    x_kind: str
    x_units: str
    baseline_auc: float
    n_points: int


def fit_power_law_xy(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least squares for log y = log a + b log x; returns (a, b, rmse)."""
    lx = np.log(np.asarray(x, dtype=np.float64))
    ly = np.log(np.asarray(y, dtype=np.float64))
    b, log_a = np.polyfit(lx, ly, 1)
    resid = ly - (log_a + b * lx)
    return float(np.exp(log_a)), float(b), float(np.sqrt(np.mean(resid**2)))


def fit_power_law(points: list[ScalingPoint], x_kind: str = "params",
                  baseline_auc: float = 0.5) -> PowerLawFit:
    """Fit delta-AUC against params or flops (in millions)."""
    if x_kind not in ("params", "flops"):
        raise ConfigError(f"x_kind must be 'params' or 'flops', got {x_kind!r}")
    rejected = [p for p in points if not (p.auc > baseline_auc)]
    if rejected:
        desc = ", ".join(
            f"{p.variant}/seed{p.seed} auc={p.auc:.4f}" for p in rejected
        )
        raise PreconditionError(
            f"points with auc <= baseline ({baseline_auc}) rejected: {desc}"
        )
    if len(points) < 3:
        raise PreconditionError(f"need >= 3 points to fit, got {len(points)}")
    xs = np.array([getattr(p, x_kind) for p in points], dtype=np.float64) / 1e6
    ys = np.array([p.auc - baseline_auc for p in points])
    a, b, rmse = fit_power_law_xy(xs, ys)
    return PowerLawFit(a=a, b=b, residual=rmse, x_kind=x_kind,
                       x_units="millions", baseline_auc=baseline_auc,
                       n_points=len(points))


@dataclass(frozen=True)
class SweepConfig:
    data_spec: SyntheticSpec
    sizes: tuple[ModelConfig, ...]
    train_cfg: TrainConfig
    seeds: tuple[int, ...] = (0,)
    heldout_frac: float = 0.1
    split_seed: int = 0

    def __post_init__(self):
        if len(self.sizes) < 1:
            raise ConfigError("sweep needs at least one model size")
        if len(self.seeds) < 1:
            raise ConfigError("sweep needs at least one seed")


def run_sweep(cfg: SweepConfig, progress=None) -> list[ScalingPoint]:
    """Train every (size, seed) pair on one dataset and shared held-out split.

    Diverged runs are recorded with status ``diverged`` and NaN metrics;
    the sweep continues. Deterministic per (config, seed).
    """
    data = generate_synthetic(cfg.data_spec)
    train_data, heldout = split_train_heldout(data, cfg.heldout_frac,
                                              cfg.split_seed)
    points: list[ScalingPoint] = []
    for size_idx, mcfg in enumerate(cfg.sizes):
        for seed in cfg.seeds:
            model = build_model(cfg.data_spec.fields, mcfg,
                                np.random.default_rng(seed))
            pc = count_params(model)
            fc = count_flops(model, batch_size=1)
            try:
                result = train(model, train_data, cfg.train_cfg, seed=seed,
                               heldout=heldout)
                point = ScalingPoint(
                    variant=mcfg.variant, params=pc.dense_total,
                    flops=fc.total_flops, mults=fc.total_mults,
                    auc=result.heldout_auc, uauc=result.heldout_uauc,
                    seed=seed, status="ok",
                )
            except TrainingDivergedError as exc:
                point = ScalingPoint(
                    variant=mcfg.variant, params=pc.dense_total,
                    flops=fc.total_flops, mults=fc.total_mults,
                    auc=math.nan, uauc=math.nan, seed=seed,
                    status=f"diverged@{exc.step}",
                )
            points.append(point)
            if progress is not None:
                progress(size_idx, point)
    return points


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

CSV_HEADER = "variant,params,flops,auc,uauc,seed,mults,status"


def emit_report(points: list[ScalingPoint], fits: list[PowerLawFit],
                out_dir) -> dict[str, Path]:
    """Write ``scaling.csv`` and ``scaling.svg`` under out_dir."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "scaling.csv"
        lines = [CSV_HEADER]
        for p in points:
            lines.append(
                f"{p.variant},{p.params},{p.flops},{p.auc!r},{p.uauc!r},"
                f"{p.seed},{p.mults},{p.status}"
            )
        csv_path.write_text("\n".join(lines) + "\n")
        svg_path = out_dir / "scaling.svg"
        _plot_svg(points, fits, svg_path)
    except OSError as exc:
        raise OSError(f"cannot write report under {out_dir}: {exc}") from exc
    return {"csv": csv_path, "svg": svg_path}


def parse_report_csv(path) -> list[ScalingPoint]:
    """Inverse of the CSV emitted by :func:`emit_report`."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigError(f"unexpected CSV header in {path}")
    points = []
    for line in lines[1:]:
        v, params, flops, a, u, seed, mults, status = line.split(",")
        points.append(ScalingPoint(
            variant=v, params=int(params), flops=int(flops), auc=float(a),
            uauc=float(u), seed=int(seed), mults=int(mults), status=status,
        ))
    return points


def _plot_svg(points: list[ScalingPoint], fits: list[PowerLawFit],
              path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    variants = sorted({p.variant for p in points})
    for v in variants:
        pts = [p for p in points if p.variant == v and p.status == "ok"]
        if not pts:
            continue
        xs = [p.params / 1e6 for p in pts]
        ys = [p.auc for p in pts]
        ax.scatter(xs, ys, label=v, s=24)
    for f in fits:
        if f.x_kind != "params":
            continue
        ok = [p for p in points if p.status == "ok" and p.auc > f.baseline_auc]
        if not ok:
            continue
        xs = np.array([p.params / 1e6 for p in ok])
        grid = np.geomspace(xs.min(), xs.max(), 64)
        ax.plot(grid, f.baseline_auc + f.a * grid**f.b, "--",
                label=f"fit a={f.a:.4g} b={f.b:.4g}")
    ax.set_xscale("log")
    ax.set_xlabel("dense parameters (millions, log scale)")
    ax.set_ylabel("held-out AUC")
    if points:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
