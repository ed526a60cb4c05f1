"""Hot numeric kernels: numba-jitted with a pure-numpy fallback.

Backend selection is decided once at import time from the environment
variable ``UNIMIXER_BACKEND``:

  * ``numba`` - require the jitted kernels (raise if numba is missing)
  * ``numpy`` - force the pure-numpy implementations
  * unset    - use numba when importable, else numpy

Both implementations of each kernel are exported (``*_numpy`` /
``*_numba``) so the test suite and ``benchmarks/bench_backends.py`` can
compare them; the unsuffixed names are the selected ones. Results agree
to floating-point roundoff; kernel choice never changes semantics.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "ACTIVE_BACKEND",
    "HAS_NUMBA",
    "sinkhorn_balance",
    "mix_apply_batch",
    "pswiglu_batch",
    "warmup",
]

_REQUESTED = os.environ.get("UNIMIXER_BACKEND", "").strip().lower()
if _REQUESTED not in ("", "numba", "numpy"):
    raise ValueError(
        f"UNIMIXER_BACKEND must be 'numba' or 'numpy', got {_REQUESTED!r}"
    )

HAS_NUMBA = False
if _REQUESTED != "numpy":
    try:
        import numba

        HAS_NUMBA = True
    except ImportError:
        if _REQUESTED == "numba":
            raise


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def sinkhorn_balance_numpy(a: np.ndarray, tol: float, max_iters: int):
    """Alternately rescale rows then columns of a positive matrix to sum to 1.

    Returns (balanced, iterations_used, converged). Convergence is checked
    after each full round: max |row_sum - 1| <= tol (column sums are exactly
    1 right after the column step).
    """
    a = a.copy()
    for it in range(max_iters):
        a /= a.sum(axis=1, keepdims=True)
        a /= a.sum(axis=0, keepdims=True)
        if np.abs(a.sum(axis=1) - 1.0).max() <= tol:
            return a, it + 1, True
    return a, max_iters, False


def mix_apply_batch_numpy(chunks: np.ndarray, w_g: np.ndarray, w_bs: np.ndarray):
    """Blockwise mixing pipeline on a batch.

    chunks: (N, k, B) split embeddings; w_g: (k, k); w_bs: (k, B, B).
    Computes h[n,i] = chunks[n,i] @ w_bs[i] then out[n] = w_g @ h[n].
    """
    h = np.einsum("nib,ibc->nic", chunks, w_bs)
    return np.matmul(w_g, h)


def pswiglu_batch_numpy(
    o: np.ndarray,
    w_up: np.ndarray,
    b_up: np.ndarray,
    w_gate: np.ndarray,
    b_gate: np.ndarray,
    w_down: np.ndarray,
    b_down: np.ndarray,
):
    """Per-token gated feed-forward on a batch.

    o: (N, k, B); w_up/w_gate: (k, B, nB); w_down: (k, nB, B);
    b_up/b_gate: (k, nB); b_down: (k, B). Row i of each sample uses
    weight set i.
    """
    up = np.einsum("nib,ibh->nih", o, w_up) + b_up
    gate = np.einsum("nib,ibh->nih", o, w_gate) + b_gate
    sg = np.where(
        gate >= 0,
        1.0 / (1.0 + np.exp(-np.abs(gate))),
        np.exp(-np.abs(gate)) / (1.0 + np.exp(-np.abs(gate))),
    )
    gated = up * gate * sg
    return np.einsum("nih,ihb->nib", gated, w_down) + b_down


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _sinkhorn_balance_nb(a, tol, max_iters):
        n, m = a.shape
        it = 0
        for it in range(max_iters):
            for i in range(n):
                s = 0.0
                for j in range(m):
                    s += a[i, j]
                for j in range(m):
                    a[i, j] /= s
            for j in range(m):
                s = 0.0
                for i in range(n):
                    s += a[i, j]
                for i in range(n):
                    a[i, j] /= s
            dev = 0.0
            for i in range(n):
                s = 0.0
                for j in range(m):
                    s += a[i, j]
                d = abs(s - 1.0)
                if d > dev:
                    dev = d
            if dev <= tol:
                return a, it + 1, True
        return a, max_iters, False

    def sinkhorn_balance_numba(a: np.ndarray, tol: float, max_iters: int):
        return _sinkhorn_balance_nb(np.ascontiguousarray(a, dtype=np.float64),
                                    tol, max_iters)

    @numba.njit(cache=True)
    def _mix_apply_batch_nb(chunks, w_g, w_bs):
        n, k, b = chunks.shape
        h = np.empty((n, k, b))
        for s in range(n):
            for i in range(k):
                for c in range(b):
                    acc = 0.0
                    for p in range(b):
                        acc += chunks[s, i, p] * w_bs[i, p, c]
                    h[s, i, c] = acc
        out = np.empty((n, k, b))
        for s in range(n):
            for g in range(k):
                for c in range(b):
                    acc = 0.0
                    for j in range(k):
                        acc += w_g[g, j] * h[s, j, c]
                    out[s, g, c] = acc
        return out

    def mix_apply_batch_numba(chunks, w_g, w_bs):
        return _mix_apply_batch_nb(
            np.ascontiguousarray(chunks, dtype=np.float64),
            np.ascontiguousarray(w_g, dtype=np.float64),
            np.ascontiguousarray(w_bs, dtype=np.float64),
        )

    @numba.njit(cache=True)
    def _pswiglu_batch_nb(o, w_up, b_up, w_gate, b_gate, w_down, b_down):
        n, k, b = o.shape
        nb_ = w_up.shape[2]
        out = np.empty((n, k, b))
        for s in range(n):
            for i in range(k):
                gated = np.empty(nb_)
                for h in range(nb_):
                    up = b_up[i, h]
                    gt = b_gate[i, h]
                    for p in range(b):
                        up += o[s, i, p] * w_up[i, p, h]
                        gt += o[s, i, p] * w_gate[i, p, h]
                    if gt >= 0.0:
                        sg = 1.0 / (1.0 + np.exp(-gt))
                    else:
                        e = np.exp(gt)
                        sg = e / (1.0 + e)
                    gated[h] = up * gt * sg
                for c in range(b):
                    acc = b_down[i, c]
                    for h in range(nb_):
                        acc += gated[h] * w_down[i, h, c]
                    out[s, i, c] = acc
        return out

    def pswiglu_batch_numba(o, w_up, b_up, w_gate, b_gate, w_down, b_down):
        return _pswiglu_batch_nb(
            np.ascontiguousarray(o, dtype=np.float64),
            np.ascontiguousarray(w_up, dtype=np.float64),
            np.ascontiguousarray(b_up, dtype=np.float64),
            np.ascontiguousarray(w_gate, dtype=np.float64),
            np.ascontiguousarray(b_gate, dtype=np.float64),
            np.ascontiguousarray(w_down, dtype=np.float64),
            np.ascontiguousarray(b_down, dtype=np.float64),
        )


if HAS_NUMBA:
    ACTIVE_BACKEND = "numba"
    sinkhorn_balance = sinkhorn_balance_numba
    mix_apply_batch = mix_apply_batch_numba
    pswiglu_batch = pswiglu_batch_numba
else:
    ACTIVE_BACKEND = "numpy"
    sinkhorn_balance = sinkhorn_balance_numpy
    mix_apply_batch = mix_apply_batch_numpy
    pswiglu_batch = pswiglu_batch_numpy


def warmup() -> None:
    """Trigger jit compilation of all kernels (no-op on the numpy backend)."""
    a = np.full((2, 2), 0.5)
    sinkhorn_balance(a, 1e-6, 2)
    chunks = np.ones((1, 2, 2))
    w = np.ones((2, 2, 2))
    mix_apply_batch(chunks, np.ones((2, 2)), w)
    pswiglu_batch(chunks, w, np.ones((2, 2)), w, np.ones((2, 2)), w, np.ones((2, 2)))
