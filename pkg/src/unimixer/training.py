"""Desk-scale supervised training and gradient verification.

Training runs Adam on every raw parameter with the loss taken from the
autodiff twin of the forward pass. The mixing temperature either
follows a linear annealing schedule, or a two-phase warm restart: train
hot, then reinitialize the optimizer moments and continue cold from the
learned weights. Runs are bit-reproducible given (seed, config) on one
thread.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .datasets import Dataset, split_train_heldout
from .errors import DimensionError, TrainingDivergedError
from .graph import TRAIN_SINKHORN_ITERS, build_loss, wrap_parameters
from .metrics import auc, uauc
from .model import UniMixerModel, model_forward, named_parameters

__all__ = [
    "bce_loss",
    "AnnealSchedule",
    "anneal_tau",
    "WarmRestart",
    "TrainConfig",
    "Adam",
    "StepRecord",
    "TrainResult",
    "train",
    "analytic_gradients",
    "FDReport",
    "finite_diff_grad_check",
]


def bce_loss(logits, labels) -> float:
    """Mean binary cross-entropy on logits, log-sum-exp stabilized."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape:
        raise DimensionError(
            f"logits {logits.shape} and labels {labels.shape} differ in length"
        )
    return float(np.mean(np.maximum(logits, 0.0) - logits * labels
                         + np.log1p(np.exp(-np.abs(logits)))))


@dataclass(frozen=True)
class AnnealSchedule:
    """Linear temperature decay clamped at tau_end over ``steps`` iterations."""

    tau_start: float = 1.0
    tau_end: float = 0.05
    steps: int = 1

    def __post_init__(self):
        if not (self.tau_start >= self.tau_end > 0):
            raise ValueError("need tau_start >= tau_end > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def anneal_tau(j: int, s: AnnealSchedule) -> float:
    """max(tau_start - (tau_start - tau_end) * j / steps, tau_end).

    For j >= steps the linear term equals tau_end analytically, so the
    clamp is applied there outright rather than through the (roundoff-
    afflicted) subtraction.
    """
    if j < 0:
        raise ValueError("iteration index must be >= 0")
    if j >= s.steps:
        return s.tau_end
    return max(s.tau_start - (s.tau_start - s.tau_end) * j / s.steps, s.tau_end)


@dataclass(frozen=True)
class WarmRestart:
    """Phase 1 at tau_high, then reset optimizer moments and run at tau_low."""

    phase1_steps: int
    tau_high: float = 1.0
    tau_low: float = 0.05


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    steps: int = 500
    schedule: Optional[AnnealSchedule] = None
    warm_restart: Optional[WarmRestart] = None
    sinkhorn_iters: int = TRAIN_SINKHORN_ITERS
    heldout_frac: float = 0.1
    split_seed: int = 0
    eval_every: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.schedule is not None and self.warm_restart is not None:
            raise ValueError("choose either an anneal schedule or a warm restart")


class Adam:
    """Standard Adam with bias correction; updates arrays in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.reset_moments()

    def reset_moments(self) -> None:
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    tau: Optional[float]
    heldout_auc: Optional[float] = None


@dataclass
class TrainResult:
    model: UniMixerModel
    trace: list[StepRecord]
    final_loss: float
    heldout_auc: float
    heldout_uauc: float


def _tau_for_step(j: int, cfg: TrainConfig) -> Optional[float]:
    if cfg.warm_restart is not None:
        wr = cfg.warm_restart
        return wr.tau_high if j < wr.phase1_steps else wr.tau_low
    if cfg.schedule is not None:
        return anneal_tau(j, cfg.schedule)
    return None


def train(model: UniMixerModel, data: Dataset, cfg: TrainConfig, seed: int = 0,
          heldout: Optional[Dataset] = None) -> TrainResult:
    """Adam-train the model in place; returns the per-step trace and metrics.

    When ``heldout`` is None a stratified slice is carved from ``data`` for
    evaluation; pass one explicitly to share a split across runs.
    """
    if heldout is None:
        data, heldout = split_train_heldout(data, cfg.heldout_frac, cfg.split_seed)
    rng = np.random.default_rng(seed)
    params = named_parameters(model)
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    trace: list[StepRecord] = []
    loss_value = math.nan
    restart_at = cfg.warm_restart.phase1_steps if cfg.warm_restart else None
    for j in range(cfg.steps):
        if restart_at is not None and j == restart_at:
            opt.reset_moments()
        tau = _tau_for_step(j, cfg)
        idx = rng.integers(0, data.n, size=min(cfg.batch_size, data.n))
        batch = data.take(idx)
        pvars = wrap_parameters(model)
        loss = build_loss(model, batch, pvars, tau, cfg.sinkhorn_iters)
        loss_value = float(loss.value)
        if not np.isfinite(loss_value):
            raise TrainingDivergedError(j)
        ad.backward(loss)
        opt.step({k: v.grad for k, v in pvars.items()})
        heldout_auc = None
        if cfg.eval_every and (j + 1) % cfg.eval_every == 0:
            heldout_auc = auc(model_forward(heldout, model, tau), heldout.labels)
        trace.append(StepRecord(step=j, loss=loss_value, tau=tau,
                                heldout_auc=heldout_auc))
    final_tau = _tau_for_step(cfg.steps - 1, cfg) if cfg.steps else None
    scores = model_forward(heldout, model, final_tau)
    return TrainResult(
        model=model,
        trace=trace,
        final_loss=loss_value,
        heldout_auc=auc(scores, heldout.labels),
        heldout_uauc=uauc(scores, heldout.labels, heldout.groups),
    )


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def analytic_gradients(model: UniMixerModel, batch, tau: Optional[float] = None,
                       sinkhorn_iters: int = TRAIN_SINKHORN_ITERS
                       ) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and d(loss)/d(param) for every parameter, via the tape."""
    pvars = wrap_parameters(model)
    loss = build_loss(model, batch, pvars, tau, sinkhorn_iters)
    ad.backward(loss)
    grads = {
        k: (v.grad if v.grad is not None else np.zeros_like(v.value))
        for k, v in pvars.items()
    }
    return float(loss.value), grads


def _family(name: str) -> str:
    return re.sub(r"\.\d+\.", ".*.", re.sub(r"emb\..*", "emb.*", name))


@dataclass(frozen=True)
class FDReport:
    max_rel_error: float
    by_family: dict[str, float]
    n_checked: int


def finite_diff_grad_check(model: UniMixerModel, batch, eps: float = 1e-5,
                           tau: Optional[float] = None, n_params: int = 200,
                           seed: int = 0,
                           sinkhorn_iters: int = TRAIN_SINKHORN_ITERS,
                           grads: Optional[dict[str, np.ndarray]] = None
                           ) -> FDReport:
    """Central differences vs analytic gradients on sampled parameters.

    At least ``n_params`` coordinates are drawn, spread over every
    parameter family (each distinct weight role is one family). Relative
    error uses max(|fd|, |analytic|, 1e-8) as denominator. Pass ``grads``
    to check externally supplied (e.g. deliberately corrupted) gradients.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    params = named_parameters(model)
    if grads is None:
        _, grads = analytic_gradients(model, batch, tau, sinkhorn_iters)

    def loss_at() -> float:
        pvars = wrap_parameters(model)
        return float(build_loss(model, batch, pvars, tau, sinkhorn_iters).value)

    families: dict[str, list[str]] = {}
    for name in params:
        families.setdefault(_family(name), []).append(name)
    per_family = max(1, math.ceil(n_params / len(families)))
    rng = np.random.default_rng(seed)
    worst = 0.0
    by_family: dict[str, float] = {}
    n_checked = 0
    for fam, names in sorted(families.items()):
        fam_worst = 0.0
        for _ in range(per_family):
            name = names[int(rng.integers(len(names)))]
            arr = params[name]
            flat_idx = int(rng.integers(arr.size))
            orig = arr.flat[flat_idx]
            arr.flat[flat_idx] = orig + eps
            lp = loss_at()
            arr.flat[flat_idx] = orig - eps
            lm = loss_at()
            arr.flat[flat_idx] = orig
            fd = (lp - lm) / (2.0 * eps)
            an = grads[name].flat[flat_idx]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            fam_worst = max(fam_worst, rel)
            n_checked += 1
        by_family[fam] = fam_worst
        worst = max(worst, fam_worst)
    return FDReport(max_rel_error=worst, by_family=by_family, n_checked=n_checked)
