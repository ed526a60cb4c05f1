"""Doubly-stochastic, sparsity and symmetry constraints on mixing weights.

A raw weight matrix is made positive with a temperature-scaled exponent,
``exp(w / tau)``, then alternately row- and column-normalized until both
sets of sums are within tolerance of 1. Lower temperatures sharpen the
resulting distribution. Symmetric inputs stay symmetric: the alternating
scaling preserves symmetry up to the final half-step, and a trailing
symmetrization makes it exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backends
from .errors import DimensionError, PreconditionError, RangeError
from .tensor_ops import as_matrix

__all__ = ["ConstraintConfig", "SinkhornInfo", "symmetrize", "sinkhorn_knopp",
           "SparsityStats", "sparsity_stats"]

# exp overflows float64 slightly above exp(709)
_EXP_OVERFLOW = 700.0


@dataclass(frozen=True)
class ConstraintConfig:
    """Temperature and convergence settings for the Sinkhorn projection."""

    tau: float = 1.0
    max_iters: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass(frozen=True)
class SinkhornInfo:
    converged: bool
    iterations: int


def symmetrize(w) -> np.ndarray:
    """(w + w^T) / 2. Idempotent; exactly symmetric output."""
    w = as_matrix(w, "w")
    if w.shape[0] != w.shape[1]:
        raise DimensionError(f"symmetrize needs a square matrix, got {w.shape}")
    return (w + w.T) / 2.0


def sinkhorn_knopp(w, cfg: ConstraintConfig, return_info: bool = False):
    """Project ``exp(w / cfg.tau)`` onto the doubly stochastic set.

    Alternates row then column normalization until max |row_sum - 1| and
    max |col_sum - 1| are both <= cfg.tol, or cfg.max_iters is reached.
    Non-convergence is not an error: the best iterate is returned and
    flagged via ``return_info`` so training loops can proceed.

    Output entries are strictly positive. If the input was exactly
    symmetric a trailing symmetrization is applied, so symmetry holds
    exactly rather than to iteration tolerance.
    """
    w = as_matrix(w, "w")
    if w.shape[0] != w.shape[1]:
        raise DimensionError(f"sinkhorn_knopp needs a square matrix, got {w.shape}")
    scaled = w / cfg.tau
    if scaled.max() > _EXP_OVERFLOW:
        raise RangeError(
            f"entry/tau = {scaled.max():.3g} would overflow exp; "
            "rescale the raw weights or raise the temperature"
        )
    a = np.exp(scaled)
    if (a.sum(axis=1) == 0.0).any() or (a.sum(axis=0) == 0.0).any():
        raise RangeError(
            "exp(w/tau) underflowed an entire row or column to zero; "
            "rescale the raw weights or raise the temperature"
        )
    symmetric = np.array_equal(w, w.T)
    balanced, iters, converged = backends.sinkhorn_balance(a, cfg.tol, cfg.max_iters)
    if symmetric:
        balanced = (balanced + balanced.T) / 2.0
    if return_info:
        return balanced, SinkhornInfo(bool(converged), int(iters))
    return balanced


@dataclass(frozen=True)
class SparsityStats:
    row_entropy_mean: float
    top1_mass_mean: float


def sparsity_stats(w) -> SparsityStats:
    """Mean Shannon entropy and mean max entry of the rows of ``w``.

    Rows must already sum to 1 (within 1e-6); lower entropy / higher
    top-1 mass means a sharper mixing pattern.
    """
    w = as_matrix(w, "w")
    row_sums = w.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6:
        raise PreconditionError(
            f"rows must sum to 1 within 1e-6 (worst deviation "
            f"{np.abs(row_sums - 1.0).max():.3g})"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(w > 0, w * np.log(np.where(w > 0, w, 1.0)), 0.0)
    entropy = -plogp.sum(axis=1)
    return SparsityStats(
        row_entropy_mean=float(entropy.mean()),
        top1_mass_mean=float(w.max(axis=1).mean()),
    )
