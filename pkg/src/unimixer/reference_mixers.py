"""Reference implementations of the baseline mixing paradigms.

Covers the rule-based token mixer and its exact permutation-matrix
form, attention with token-specific projections, plain self-attention,
and the Wukong-style factorization-machine layer. These are executable
baselines and oracles; the learnable mixing lives in ``mixing``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConstraintError, DimensionError
from .tensor_ops import as_matrix, flatten_row_major, kron, rms_norm, softmax_rows, swish

__all__ = [
    "PermSpec",
    "PropertyReport",
    "token_mixer",
    "head_regroup",
    "build_perm_matrix",
    "recover_global_matrix",
    "verify_perm_properties",
    "HeteroAttentionParams",
    "hetero_attention",
    "self_attention",
    "WukongParams",
    "wukong_layer",
]


@dataclass(frozen=True)
class PermSpec:
    """Token count, token dim and head count of a rule-based mixer."""

    tokens: int
    dim: int
    heads: int

    def __post_init__(self):
        if self.tokens < 1 or self.dim < 1 or self.heads < 1:
            raise DimensionError(f"all of (tokens, dim, heads) must be >= 1: {self}")
        if self.dim % self.heads != 0:
            raise DimensionError(
                f"dim {self.dim} must be divisible by heads {self.heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def flat_len(self) -> int:
        return self.tokens * self.dim


def head_regroup(x: np.ndarray, heads: int) -> np.ndarray:
    """Split each token into ``heads`` slices and regroup head-major.

    Output row h is the concatenation over tokens of each token's h-th
    slice. This is the rule-based mixing step generalized to any head
    count dividing the token dim; with heads == tokens it is the
    classic token mixer. A pure permutation of entries.
    """
    x = as_matrix(x, "x")
    t, d = x.shape
    if d % heads != 0:
        raise DimensionError(f"dim {d} must be divisible by heads {heads}")
    m = d // heads
    # (t, heads, m) -> (heads, t, m) -> (heads, t*m)
    return np.ascontiguousarray(x.reshape(t, heads, m).transpose(1, 0, 2)).reshape(
        heads, t * m
    )


def token_mixer(x: np.ndarray, spec: PermSpec) -> np.ndarray:
    """Rule-based token mixing; requires head count == token count."""
    x = as_matrix(x, "x")
    if spec.heads != spec.tokens:
        raise ConstraintError(
            f"token_mixer requires heads == tokens, got heads={spec.heads} "
            f"tokens={spec.tokens}"
        )
    if x.shape != (spec.tokens, spec.dim):
        raise DimensionError(f"input shape {x.shape} does not match spec {spec}")
    return head_regroup(x, spec.heads)


def build_perm_matrix(spec: PermSpec) -> np.ndarray:
    """The TD x TD 0/1 matrix realizing :func:`head_regroup` on flatten(x).

    reshape(P @ flatten(x), heads, T*D/heads) equals head_regroup(x, heads)
    for every x; with heads == tokens that is token_mixer(x, spec).
    """
    t, d, h = spec.tokens, spec.dim, spec.heads
    m = d // h
    n = t * d
    p = np.zeros((n, n), dtype=np.float64)
    for hh in range(h):
        for tt in range(t):
            for k in range(m):
                p[hh * (t * m) + tt * m + k, tt * d + hh * m + k] = 1.0
    return p


def recover_global_matrix(p: np.ndarray, block: int) -> Optional[np.ndarray]:
    """Recover g with p == kron(g, I_block), or None if no such g exists.

    Each block x block sub-block of p must be a scalar multiple of the
    identity; the scalars form g.
    """
    p = as_matrix(p, "p")
    n = p.shape[0]
    if p.shape[1] != n or n % block != 0:
        return None
    side = n // block
    g = np.empty((side, side), dtype=np.float64)
    eye = np.eye(block)
    for a in range(side):
        for b in range(side):
            sub = p[a * block : (a + 1) * block, b * block : (b + 1) * block]
            c = sub[0, 0]
            if not np.array_equal(sub, c * eye):
                return None
            g[a, b] = c
    return g


@dataclass(frozen=True)
class PropertyReport:
    """Structural checks of a rule-based permutation matrix."""

    compressible: bool
    doubly_stochastic: bool
    one_nonzero_per_row_and_col: bool
    symmetric: bool
    global_mixing: Optional[np.ndarray] = None


def verify_perm_properties(spec: PermSpec) -> PropertyReport:
    """Check the four structural properties of the mixing permutation.

    The factor g is recovered from the matrix itself by block analysis
    (block size dim/heads) rather than assumed, and symmetry is expected
    to hold exactly when heads == tokens.
    """
    p = build_perm_matrix(spec)
    g = recover_global_matrix(p, spec.head_dim)
    compressible = g is not None and np.array_equal(p, kron(g, np.eye(spec.head_dim)))
    row_sums = p.sum(axis=1)
    col_sums = p.sum(axis=0)
    doubly = np.array_equal(row_sums, np.ones_like(row_sums)) and np.array_equal(
        col_sums, np.ones_like(col_sums)
    )
    one_nz = ((p != 0).sum(axis=1) == 1).all() and ((p != 0).sum(axis=0) == 1).all()
    symmetric = np.array_equal(p, p.T)
    return PropertyReport(
        compressible=bool(compressible),
        doubly_stochastic=bool(doubly),
        one_nonzero_per_row_and_col=bool(one_nz),
        symmetric=bool(symmetric),
        global_mixing=g,
    )


@dataclass(frozen=True)
class HeteroAttentionParams:
    """Token-specific Q/K/V projections plus a shared output projection.

    w_q, w_k, w_v: (tokens, heads, model_dim, head_dim); the row for
    token i uses slice [i]. w_o: (heads * head_dim, model_dim).
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    def __post_init__(self):
        if self.w_q.ndim != 4 or not (
            self.w_q.shape == self.w_k.shape == self.w_v.shape
        ):
            raise DimensionError("w_q, w_k, w_v must share shape (T, H, D, d)")
        t, h, dm, dh = self.w_q.shape
        if self.w_o.shape != (h * dh, dm):
            raise DimensionError(
                f"w_o shape {self.w_o.shape} != ({h * dh}, {dm}) implied by q/k/v"
            )

    @property
    def tokens(self) -> int:
        return self.w_q.shape[0]

    @property
    def heads(self) -> int:
        return self.w_q.shape[1]

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[3]

    @classmethod
    def random(cls, tokens: int, model_dim: int, head_dim: int, heads: int,
               rng: np.random.Generator, scale: float = 0.1):
        shape = (tokens, heads, model_dim, head_dim)
        return cls(
            w_q=rng.normal(0.0, scale, shape),
            w_k=rng.normal(0.0, scale, shape),
            w_v=rng.normal(0.0, scale, shape),
            w_o=rng.normal(0.0, scale, (heads * head_dim, model_dim)),
        )


def hetero_attention(x: np.ndarray, p: HeteroAttentionParams) -> np.ndarray:
    """Attention with token-specific projections; output is tokens x model_dim."""
    x = as_matrix(x, "x")
    t, h, dm, dh = p.w_q.shape
    if x.shape != (t, dm):
        raise DimensionError(f"input shape {x.shape} does not match params ({t}, {dm})")
    heads_out = []
    scale = np.sqrt(dh)
    for hh in range(h):
        q = np.einsum("td,tde->te", x, p.w_q[:, hh])
        k = np.einsum("td,tde->te", x, p.w_k[:, hh])
        v = np.einsum("td,tde->te", x, p.w_v[:, hh])
        attn = softmax_rows(q @ k.T / scale)
        heads_out.append(attn @ v)
    return np.concatenate(heads_out, axis=1) @ p.w_o


def self_attention(x: np.ndarray, w_q: np.ndarray, w_k: np.ndarray,
                   w_v: np.ndarray) -> np.ndarray:
    """Single mixing map with shared projections: softmax(QK^T/sqrt(d)) V."""
    x = as_matrix(x, "x")
    w_q = as_matrix(w_q, "w_q")
    w_k = as_matrix(w_k, "w_k")
    w_v = as_matrix(w_v, "w_v")
    if x.shape[1] != w_q.shape[0] or w_q.shape != w_k.shape or w_q.shape != w_v.shape:
        raise DimensionError(
            f"projection shapes {w_q.shape}/{w_k.shape}/{w_v.shape} do not "
            f"conform with input {x.shape}"
        )
    d = w_q.shape[1]
    q, k, v = x @ w_q, x @ w_k, x @ w_v
    return softmax_rows(q @ k.T / np.sqrt(d)) @ v


@dataclass(frozen=True)
class WukongParams:
    """FM-block + linear-compression-block weights.

    y: (tokens, r) compresses the interaction matrix; w_lcb: (n_lcb, tokens).
    The FMB head is a single hidden-layer MLP (identity-sized hidden,
    swish) over the normalized flattened FM output; ``mlp=None`` selects
    the identity MLP/LN stub used in degeneracy tests, in which case the
    FMB output is FM(x) itself (requires r == model_dim to concatenate).
    """

    y: np.ndarray
    w_lcb: np.ndarray
    mlp: Optional[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = None
    fmb_tokens: int = 0

    @classmethod
    def random(cls, tokens: int, model_dim: int, r: int, n_lcb: int,
               rng: np.random.Generator, fmb_tokens: Optional[int] = None,
               scale: float = 0.1):
        fmb_tokens = tokens if fmb_tokens is None else fmb_tokens
        flat = tokens * r
        return cls(
            y=rng.normal(0.0, scale, (tokens, r)),
            w_lcb=rng.normal(0.0, scale, (n_lcb, tokens)),
            mlp=(
                rng.normal(0.0, scale, (flat, flat)),
                rng.normal(0.0, scale, flat),
                rng.normal(0.0, scale, (flat, fmb_tokens * model_dim)),
                rng.normal(0.0, scale, fmb_tokens * model_dim),
            ),
            fmb_tokens=fmb_tokens,
        )


def wukong_fm(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Core pairwise interaction: x @ x^T @ y."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if y.shape[0] != x.shape[0]:
        raise DimensionError(f"y rows {y.shape[0]} != tokens {x.shape[0]}")
    return x @ x.T @ y


def wukong_layer(x: np.ndarray, p: WukongParams) -> np.ndarray:
    """Concatenate the FM block and the linear compression block token-wise."""
    x = as_matrix(x, "x")
    t, dm = x.shape
    if p.w_lcb.shape[1] != t:
        raise DimensionError(f"w_lcb shape {p.w_lcb.shape} does not match tokens {t}")
    fm = wukong_fm(x, p.y)
    if p.mlp is None:
        if fm.shape[1] != dm:
            raise DimensionError(
                f"identity-stub FMB needs r == model_dim, got r={fm.shape[1]} "
                f"model_dim={dm}"
            )
        fmb = fm
    else:
        w1, b1, w2, b2 = p.mlp
        hidden = swish(rms_norm(flatten_row_major(fm)) @ w1 + b1)
        fmb = (hidden @ w2 + b2).reshape(p.fmb_tokens, dm)
    lcb = p.w_lcb @ x
    return np.concatenate([fmb, lcb], axis=0)
