"""Learnable block-factored feature mixing.

The mixing map on a length-L embedding is a block matrix whose (i, j)
block is w_g[i, j] * w_b[j]: a Kronecker product with a distinct local
factor per block column. Two equivalent routes compute it:

  * ``mix_naive``    - materialize the full L x L matrix and multiply
                       (L^2 scalar multiplications per sample);
  * ``mix_pipeline`` - per-chunk local products then one global product
                       (L^2/B + L*B multiplications, no L x L
                       intermediate).

Both are instrumented with exact multiply counters so the cost claim is
checkable, and their outputs agree to roundoff once the weights have
been through the symmetrize + Sinkhorn constraint pipeline. The Lite
parameterization replaces the per-block weights with combinations of a
small shared basis and the global map with a low-rank factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import backends
from .errors import ConfigError, DimensionError
from .reference_mixers import PermSpec, recover_global_matrix, build_perm_matrix
from .sinkhorn import ConstraintConfig, sinkhorn_knopp, symmetrize
from .tensor_ops import as_matrix, generalized_kron, rms_norm_rows, softmax_rows

__all__ = [
    "MultCounter",
    "mult_counter",
    "mix_mult_costs",
    "UniMixingParams",
    "LiteParams",
    "constrained_weights",
    "lite_materialize",
    "mix_naive",
    "mix_pipeline",
    "unimixing_naive",
    "unimixing_forward",
    "unimixing_block",
    "unimixing_lite_forward",
    "unimixing_lite_block",
    "MixVariant",
    "unified_mixing",
    "check_value_projection_equivalence",
    "check_attention_fm_degeneracy",
    "attention_fm_softmax_gap",
]


class MultCounter:
    """Tally of scalar multiplications spent applying mixing maps.

    Counts only the input-dependent arithmetic (the map applied to the
    embedding), not weight materialization, and reports per-sample costs:
    a batched call adds batch_size * per_sample. Not thread-safe; reset
    before a measurement.
    """

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.total = 0
        self.last_per_sample = 0
        self.calls = 0

    def add(self, per_sample: int, samples: int) -> None:
        self.total += per_sample * samples
        self.last_per_sample = per_sample
        self.calls += 1


mult_counter = MultCounter()


def mix_mult_costs(length: int, block: int) -> dict[str, int]:
    """Closed-form per-sample multiply counts of the two routes."""
    if length % block != 0:
        raise DimensionError(f"block {block} must divide length {length}")
    k = length // block
    return {"naive": length * length, "pipeline": k * k * block + length * block}


def _as_batch(x, length: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
        single = True
    elif a.ndim == 2:
        single = False
    else:
        raise DimensionError(f"expected a vector or batch of vectors, got {a.shape}")
    if a.shape[1] != length:
        raise DimensionError(f"embedding length {a.shape[1]} != expected {length}")
    return a, single


@dataclass(frozen=True)
class UniMixingParams:
    """Raw (pre-constraint) mixing weights for embedding length L, block B.

    w_g_raw: (L/B, L/B) global map; w_b_raw: (L/B, B, B), one local map
    per block. Constrained weights are obtained by symmetrizing each
    matrix and projecting with Sinkhorn at the configured temperature.
    """

    length: int
    block: int
    w_g_raw: np.ndarray
    w_b_raw: np.ndarray
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)

    def __post_init__(self):
        if self.length % self.block != 0:
            raise DimensionError(
                f"block {self.block} must divide length {self.length}"
            )
        k = self.n_blocks
        if self.w_g_raw.shape != (k, k):
            raise DimensionError(
                f"w_g_raw shape {self.w_g_raw.shape} != ({k}, {k})"
            )
        if self.w_b_raw.shape != (k, self.block, self.block):
            raise DimensionError(
                f"w_b_raw shape {self.w_b_raw.shape} != "
                f"({k}, {self.block}, {self.block})"
            )

    @property
    def n_blocks(self) -> int:
        return self.length // self.block

    def param_count(self) -> int:
        return self.w_g_raw.size + self.w_b_raw.size

    def param_count_closed_form(self) -> int:
        k = self.n_blocks
        return k * k + k * self.block * self.block

    @classmethod
    def random(cls, length: int, block: int, rng: np.random.Generator,
               constraint: Optional[ConstraintConfig] = None, scale: float = 0.02):
        k = length // block
        return cls(
            length=length,
            block=block,
            w_g_raw=rng.normal(0.0, scale, (k, k)),
            w_b_raw=rng.normal(0.0, scale, (k, block, block)),
            constraint=constraint or ConstraintConfig(),
        )


@dataclass(frozen=True)
class LiteParams:
    """Lightweight mixing weights: low-rank global map, shared local basis.

    The global map is Sinkhorn(a_g @ b_g) with rank r; block i's local map
    is Sinkhorn(sum_l omega[i, l] * basis[l]). No symmetrization is
    applied on this route.
    """

    length: int
    block: int
    a_g: np.ndarray
    b_g: np.ndarray
    basis: np.ndarray
    omega: np.ndarray
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)

    def __post_init__(self):
        if self.length % self.block != 0:
            raise DimensionError(
                f"block {self.block} must divide length {self.length}"
            )
        k = self.n_blocks
        if self.a_g.ndim != 2 or self.a_g.shape[0] != k:
            raise DimensionError(f"a_g shape {self.a_g.shape} != ({k}, r)")
        r = self.a_g.shape[1]
        if r < 1 or self.b_g.shape != (r, k):
            raise DimensionError(f"b_g shape {self.b_g.shape} != ({r}, {k})")
        if self.basis.ndim != 3 or self.basis.shape[1:] != (self.block, self.block):
            raise DimensionError(
                f"basis shape {self.basis.shape} != (b, {self.block}, {self.block})"
            )
        b = self.basis.shape[0]
        if b < 1 or self.omega.shape != (k, b):
            raise DimensionError(f"omega shape {self.omega.shape} != ({k}, {b})")

    @property
    def n_blocks(self) -> int:
        return self.length // self.block

    @property
    def rank(self) -> int:
        return self.a_g.shape[1]

    @property
    def n_basis(self) -> int:
        return self.basis.shape[0]

    def param_count(self) -> int:
        return self.a_g.size + self.b_g.size + self.basis.size + self.omega.size

    def param_count_closed_form(self) -> int:
        k = self.n_blocks
        return 2 * self.rank * k + self.n_basis * self.block * self.block \
            + self.n_basis * k

    @classmethod
    def random(cls, length: int, block: int, rank: int, n_basis: int,
               rng: np.random.Generator,
               constraint: Optional[ConstraintConfig] = None, scale: float = 0.02):
        k = length // block
        return cls(
            length=length,
            block=block,
            a_g=rng.normal(0.0, scale, (k, rank)),
            b_g=rng.normal(0.0, scale, (rank, k)),
            basis=rng.normal(0.0, scale, (n_basis, block, block)),
            omega=rng.normal(0.0, scale, (k, n_basis)),
            constraint=constraint or ConstraintConfig(),
        )


def constrained_weights(p: UniMixingParams) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrize then Sinkhorn-project the global and local raw weights."""
    w_g = sinkhorn_knopp(symmetrize(p.w_g_raw), p.constraint)
    w_bs = np.stack(
        [sinkhorn_knopp(symmetrize(p.w_b_raw[i]), p.constraint)
         for i in range(p.n_blocks)]
    )
    return w_g, w_bs


def lite_materialize(p: LiteParams) -> tuple[np.ndarray, np.ndarray]:
    """Materialize the low-rank global map and basis-composed local maps."""
    w_r = sinkhorn_knopp(p.a_g @ p.b_g, p.constraint)
    raw_blocks = np.einsum("ib,bxy->ixy", p.omega, p.basis)
    w_bs = np.stack(
        [sinkhorn_knopp(raw_blocks[i], p.constraint) for i in range(p.n_blocks)]
    )
    return w_r, w_bs


def mix_naive(x, w_g: np.ndarray, w_bs: np.ndarray) -> np.ndarray:
    """Apply the mixing map by materializing the full L x L matrix.

    Costs L^2 multiplications per sample (instrumented); the O(L^2)
    reference route for the pipeline equivalence test.
    """
    w_g = as_matrix(w_g, "w_g")
    w_bs = np.asarray(w_bs, dtype=np.float64)
    k, block = w_bs.shape[0], w_bs.shape[1]
    length = k * block
    xb, single = _as_batch(x, length)
    big = generalized_kron(w_g, [w_bs[j] for j in range(k)])
    out = xb @ big.T
    mult_counter.add(length * length, xb.shape[0])
    return out[0] if single else out


def mix_pipeline(x, w_g: np.ndarray, w_bs: np.ndarray) -> np.ndarray:
    """Apply the mixing map chunk-wise: h_i = x_i @ w_b[i], out = w_g @ H.

    Costs L^2/B + L*B multiplications per sample (instrumented) and never
    materializes an L x L intermediate.
    """
    w_g = as_matrix(w_g, "w_g")
    w_bs = np.asarray(w_bs, dtype=np.float64)
    k, block = w_bs.shape[0], w_bs.shape[1]
    length = k * block
    if w_g.shape != (k, k):
        raise DimensionError(f"w_g shape {w_g.shape} != ({k}, {k})")
    xb, single = _as_batch(x, length)
    chunks = xb.reshape(xb.shape[0], k, block)
    mixed = backends.mix_apply_batch(chunks, w_g, w_bs)
    out = mixed.reshape(xb.shape[0], length)
    mult_counter.add(k * k * block + length * block, xb.shape[0])
    return out[0] if single else out


def unimixing_naive(x, p: UniMixingParams) -> np.ndarray:
    w_g, w_bs = constrained_weights(p)
    return mix_naive(x, w_g, w_bs)


def unimixing_forward(x, p: UniMixingParams) -> np.ndarray:
    w_g, w_bs = constrained_weights(p)
    return mix_pipeline(x, w_g, w_bs)


def _residual_norm_block(x, forward_out: np.ndarray, length: int) -> np.ndarray:
    xb, single = _as_batch(x, length)
    fb = forward_out if forward_out.ndim == 2 else forward_out[None, :]
    out = rms_norm_rows(xb + fb)
    return out[0] if single else out


def unimixing_block(x, p: UniMixingParams) -> np.ndarray:
    """Residual + RMS-norm wrapper around the mixing map."""
    return _residual_norm_block(x, unimixing_forward(x, p), p.length)


def unimixing_lite_forward(x, p: LiteParams) -> np.ndarray:
    w_r, w_bs = lite_materialize(p)
    return mix_pipeline(x, w_r, w_bs)


def unimixing_lite_block(x, p: LiteParams) -> np.ndarray:
    return _residual_norm_block(x, unimixing_lite_forward(x, p), p.length)


# ---------------------------------------------------------------------------
# unified framework: every paradigm as (global pattern) @ (local pattern)
# ---------------------------------------------------------------------------

VARIANT_TAGS = ("self-attn", "hetero-attn", "tokenmixer", "fm",
                "unimixing", "unimixing-lite")


@dataclass(frozen=True)
class MixVariant:
    """Tagged payload selecting one row of the unified-framework table.

    Payload by tag:
      self-attn      - dict(w_q, w_k, w_v), each model_dim x head_dim
      hetero-attn    - dict(w_q, w_k, w_v), each (tokens, model_dim, head_dim)
      tokenmixer     - PermSpec
      fm             - dict(y) with y tokens x r
      unimixing      - UniMixingParams
      unimixing-lite - LiteParams
    """

    tag: str
    payload: Union[dict, PermSpec, UniMixingParams, LiteParams]

    def __post_init__(self):
        if self.tag not in VARIANT_TAGS:
            raise ConfigError(f"unknown variant tag {self.tag!r}; "
                              f"expected one of {VARIANT_TAGS}")


def unified_mixing(x, v: MixVariant) -> np.ndarray:
    """Compute reshape(global_pattern @ local_pattern, 1, L) for a variant.

    The global pattern measures block-to-block interaction strength; the
    local pattern stacks per-block projections. Attention variants derive
    the global pattern from the input by inner-product similarity, the
    rule-based mixer uses a constant permutation-derived map, the FM row
    uses the raw Gram matrix, and the learnable variants use the
    Sinkhorn-constrained weights.
    """
    x = as_matrix(x, "x")
    tag, payload = v.tag, v.payload
    try:
        if tag == "self-attn":
            d = payload["w_q"].shape[1]
            g = softmax_rows((x @ payload["w_q"]) @ (x @ payload["w_k"]).T
                             / np.sqrt(d))
            local = x @ payload["w_v"]
        elif tag == "hetero-attn":
            d = payload["w_q"].shape[2]
            q = np.einsum("td,tde->te", x, payload["w_q"])
            k = np.einsum("td,tde->te", x, payload["w_k"])
            g = softmax_rows(q @ k.T / np.sqrt(d))
            local = np.einsum("td,tde->te", x, payload["w_v"])
        elif tag == "tokenmixer":
            spec: PermSpec = payload
            if x.shape != (spec.tokens, spec.dim):
                raise DimensionError(
                    f"input {x.shape} does not match spec {spec}"
                )
            g = recover_global_matrix(build_perm_matrix(spec), spec.head_dim)
            local = x.reshape(-1, spec.head_dim)
        elif tag == "fm":
            g = x @ x.T
            local = payload["y"]
            if local.shape[0] != x.shape[0]:
                raise DimensionError(
                    f"y rows {local.shape[0]} != tokens {x.shape[0]}"
                )
        elif tag == "unimixing":
            p: UniMixingParams = payload
            w_g, w_bs = constrained_weights(p)
            return mix_pipeline(x.reshape(-1), w_g, w_bs)[None, :]
        elif tag == "unimixing-lite":
            lp: LiteParams = payload
            w_r, w_bs = lite_materialize(lp)
            return mix_pipeline(x.reshape(-1), w_r, w_bs)[None, :]
        else:  # pragma: no cover - guarded by MixVariant
            raise ConfigError(f"unknown tag {tag!r}")
    except (KeyError, AttributeError, TypeError) as exc:
        raise ConfigError(f"variant {tag!r} payload mismatch: {exc}") from exc
    return (g @ local).reshape(1, -1)


def check_value_projection_equivalence(w_v: np.ndarray, w_b: np.ndarray,
                                       n_trials: int = 10, seed: int = 0,
                                       tol: float = 1e-12) -> bool:
    """Local mixing stack vs single-head token-specific value projection.

    With one chunk per token and matching chunk/head dims, the per-block
    local products equal the value rows whenever w_b[i] == w_v[i]. Both
    stacks are computed on random inputs and compared entrywise.
    """
    w_v = np.asarray(w_v, dtype=np.float64)
    w_b = np.asarray(w_b, dtype=np.float64)
    if w_v.ndim != 3 or w_v.shape[1] != w_v.shape[2]:
        raise ConfigError(f"w_v must be (tokens, d, d), got {w_v.shape}")
    if w_b.shape != w_v.shape:
        raise ConfigError(
            f"w_b shape {w_b.shape} must equal w_v shape {w_v.shape} "
            "(requires n_blocks == tokens and block == head dim)"
        )
    t, d = w_v.shape[0], w_v.shape[1]
    rng = np.random.default_rng(seed)
    for _ in range(n_trials):
        x = rng.normal(size=(t, d))
        value_rows = np.einsum("td,tde->te", x, w_v)
        local_rows = np.einsum("td,tde->te", x, w_b)
        if np.abs(value_rows - local_rows).max() > tol:
            return False
    return True


def check_attention_fm_degeneracy(x, y) -> bool:
    """Attention with identity Q/K, constant value y and no softmax == FM.

    Runs the attention-shaped pipeline (Q = xI, K = xI, scores = QK^T,
    out = scores @ y) and the FM product x x^T y; returns exact equality.
    The softmax-on discrepancy is reported separately by
    :func:`attention_fm_softmax_gap`, not asserted.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    eye = np.eye(x.shape[1])
    q = x @ eye
    k = x @ eye
    att_out = (q @ k.T) @ y
    fm_out = (x @ x.T) @ y
    return np.array_equal(att_out, fm_out)


def attention_fm_softmax_gap(x, y) -> float:
    """Max-abs gap between softmaxed attention scores applied to y and FM."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    att = softmax_rows(x @ x.T) @ y
    fm = (x @ x.T) @ y
    return float(np.abs(att - fm).max())
