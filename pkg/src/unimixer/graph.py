"""Differentiable twin of the plain model forward.

Builds the same computation as ``model.model_forward`` on autodiff
``Var`` nodes so training gets analytic gradients for every raw
parameter, including through a fixed-depth unroll of the Sinkhorn
projection. Tests pin the twin to the plain path at tight tolerance and
verify its gradients by central differences.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError
from .model import MixerBlock, UniMixerModel, named_parameters

__all__ = ["wrap_parameters", "build_logits", "build_loss"]

TRAIN_SINKHORN_ITERS = 20


def wrap_parameters(model: UniMixerModel) -> dict[str, Var]:
    """One leaf Var per trainable array, keyed like ``named_parameters``."""
    return {name: Var(arr, name=name) for name, arr in named_parameters(model).items()}


def _sinkhorn_unroll(w: Var, tau: float, iters: int, symmetric: bool) -> Var:
    """exp(w/tau) then ``iters`` rounds of row/col normalization.

    Works on (n, n) or batched (k, n, n) inputs. ``symmetric`` selects the
    pre/post symmetrization used by the non-Lite route; the branch is
    structural (decided by parameterization), keeping the graph smooth.
    """
    if symmetric:
        axes = (1, 0) if len(w.shape) == 2 else (0, 2, 1)
        w = (w + ad.transpose(w, axes)) * 0.5
    a = ad.exp(w / tau)
    for _ in range(iters):
        a = a / ad.vsum(a, axis=-1, keepdims=True)
        a = a / ad.vsum(a, axis=-2, keepdims=True)
    if symmetric:
        axes = (1, 0) if len(a.shape) == 2 else (0, 2, 1)
        a = (a + ad.transpose(a, axes)) * 0.5
    return a


def _block_weights(blk: MixerBlock, params: dict[str, Var], prefix: str,
                   tau: Optional[float], iters: int) -> tuple[Var, Var]:
    t = blk.mix.constraint.tau if tau is None else tau
    if blk.kind == "unimixing":
        w_g = _sinkhorn_unroll(params[f"{prefix}.mix.w_g_raw"], t, iters, True)
        w_bs = _sinkhorn_unroll(params[f"{prefix}.mix.w_b_raw"], t, iters, True)
        return w_g, w_bs
    if blk.kind == "unimixing-lite":
        low_rank = ad.matmul(params[f"{prefix}.mix.a_g"], params[f"{prefix}.mix.b_g"])
        w_r = _sinkhorn_unroll(low_rank, t, iters, False)
        raw_blocks = ad.basis_combine(params[f"{prefix}.mix.omega"],
                                      params[f"{prefix}.mix.basis"])
        w_bs = _sinkhorn_unroll(raw_blocks, t, iters, False)
        return w_r, w_bs
    raise ConfigError(f"block kind {blk.kind!r} has no constrained weights")


def _mix_forward(blk: MixerBlock, z: Var, params: dict[str, Var], prefix: str,
                 tau: Optional[float], iters: int) -> Var:
    n = z.shape[0]
    k = blk.length // blk.block_size
    chunks = ad.reshape(z, (n, k, blk.block_size))
    if blk.kind in ("unimixing", "unimixing-lite"):
        w_g, w_bs = _block_weights(blk, params, prefix, tau, iters)
        h = ad.per_token_linear(chunks, w_bs)
        out = ad.matmul(w_g, h)
    elif blk.kind == "tokenmixer":
        out = ad.matmul(blk.mix.g, chunks)
    elif blk.kind == "self-attn":
        q = ad.matmul(chunks, params[f"{prefix}.mix.w_q"])
        kk = ad.matmul(chunks, params[f"{prefix}.mix.w_k"])
        v = ad.matmul(chunks, params[f"{prefix}.mix.w_v"])
        scores = ad.matmul(q, ad.transpose(kk, (0, 2, 1))) / np.sqrt(blk.block_size)
        out = ad.matmul(ad.softmax_last(scores), v)
    elif blk.kind == "hetero-attn":
        q = ad.per_token_linear(chunks, params[f"{prefix}.mix.w_q"])
        kk = ad.per_token_linear(chunks, params[f"{prefix}.mix.w_k"])
        v = ad.per_token_linear(chunks, params[f"{prefix}.mix.w_v"])
        scores = ad.matmul(q, ad.transpose(kk, (0, 2, 1))) / np.sqrt(blk.block_size)
        out = ad.matmul(ad.softmax_last(scores), v)
    elif blk.kind == "fm":
        gram = ad.matmul(chunks, ad.transpose(chunks, (0, 2, 1)))
        out = ad.matmul(gram, params[f"{prefix}.mix.y"])
    else:  # pragma: no cover
        raise ConfigError(f"unknown block kind {blk.kind!r}")
    return ad.reshape(out, (n, blk.length))


def _block_body(blk: MixerBlock, z: Var, params: dict[str, Var], prefix: str,
                tau: Optional[float], iters: int) -> Var:
    n = z.shape[0]
    k = blk.length // blk.block_size
    mixed = _mix_forward(blk, z, params, prefix, tau, iters)
    u = ad.rms_norm_rows(z + mixed)
    o = ad.reshape(u, (n, k, blk.block_size))
    up = ad.per_token_linear(o, params[f"{prefix}.ffn.w_up"]) \
        + params[f"{prefix}.ffn.b_up"]
    gate = ad.per_token_linear(o, params[f"{prefix}.ffn.w_gate"]) \
        + params[f"{prefix}.ffn.b_gate"]
    gated = up * ad.swish(gate)
    down = ad.per_token_linear(gated, params[f"{prefix}.ffn.w_down"]) \
        + params[f"{prefix}.ffn.b_down"]
    return ad.reshape(down, (n, blk.length))


def build_logits(model: UniMixerModel, batch, params: dict[str, Var],
                 tau: Optional[float] = None,
                 sinkhorn_iters: int = TRAIN_SINKHORN_ITERS) -> Var:
    """Differentiable logits for a feature batch."""
    tok = model.tokenizer
    parts = []
    for d in tok.domains:
        if d.is_categorical:
            parts.append(ad.embedding_gather(params[f"tokenizer.emb.{d.name}"],
                                             batch.cats[d.name]))
        else:
            parts.append(Var(batch.denses[d.name]))
    e = ad.concat(parts, axis=-1)
    n = e.shape[0]
    chunks = ad.reshape(e, (n, tok.n_tokens, tok.chunk))
    tokens = ad.per_token_linear(
        chunks, ad.transpose(params["tokenizer.w_proj"], (0, 2, 1))
    ) + params["tokenizer.b_proj"]
    z = ad.reshape(tokens, (n, model.length))

    x_bar, y_bar = z, z
    for i, blk in enumerate(model.blocks):
        y_tilde = ad.rms_norm_rows(y_bar)
        o = _block_body(blk, x_bar + y_tilde, params, f"blocks.{i}", tau,
                        sinkhorn_iters)
        x_bar = ad.rms_norm_rows(x_bar + o)
        y_bar = y_bar + o
    fused = x_bar + ad.rms_norm_rows(y_bar)
    return ad.matmul(fused, params["head.w"]) + params["head.b"]


def build_loss(model: UniMixerModel, batch, params: dict[str, Var],
               tau: Optional[float] = None,
               sinkhorn_iters: int = TRAIN_SINKHORN_ITERS) -> Var:
    """Mean BCE loss graph over the batch's labels."""
    logits = build_logits(model, batch, params, tau, sinkhorn_iters)
    return ad.bce_with_logits(logits, batch.labels)
