"""Full-model assembly: tokenization, mixer blocks, dual-stream norm, head.

A model maps a batch of multi-field features to scalar logits:

    embed -> tokenize -> M mixer blocks under the dual-stream norm -> head

Each block body is ``per-token SwiGLU(rms_norm(z + mix(z)))`` where the
mixing map is one of the supported variants (learnable block-factored
mixing, its Lite form, or a baseline: fixed rule-based mixing,
self/token-specific attention, FM). Two forward implementations exist:
the plain numpy path here (fast, used for evaluation and verification)
and an autodiff twin in ``graph.py`` used for training gradients; tests
hold them to 1e-12 agreement.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import backends
from .datasets import Dataset, DomainSpec
from .errors import ConfigError, DimensionError
from .mixing import (LiteParams, UniMixingParams, constrained_weights,
                     lite_materialize, mix_pipeline)
from .sinkhorn import ConstraintConfig
from .tensor_ops import rms_norm_rows, sigmoid

__all__ = [
    "TokenizerParams",
    "PSwiGLUParams",
    "SiameseState",
    "MixerBlock",
    "UniMixerModel",
    "embed_features",
    "tokenize",
    "pertoken_swiglu",
    "siamese_step",
    "siamese_finalize",
    "block_body",
    "model_forward",
    "named_parameters",
    "ModelConfig",
    "build_model",
    "balanced_grid",
    "grid_transpose_matrix",
]


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenizerParams:
    """Embedding tables plus per-chunk projections.

    The concatenated domain embeddings (length sum of domain dims) are
    split into chunks of size ``chunk``; chunk i is projected to a token
    by w_proj[i] @ chunk + b_proj[i]. w_proj: (T, D, chunk), b_proj: (T, D).
    """

    domains: tuple[DomainSpec, ...]
    embeddings: dict[str, np.ndarray]
    chunk: int
    w_proj: np.ndarray
    b_proj: np.ndarray

    def __post_init__(self):
        total = self.embed_len
        if total % self.chunk != 0:
            raise ConfigError(
                f"concatenated embedding length {total} is not divisible by "
                f"chunk size {self.chunk}"
            )
        t = total // self.chunk
        if self.w_proj.shape[0] != t or self.w_proj.shape[2] != self.chunk:
            raise DimensionError(
                f"w_proj shape {self.w_proj.shape} != ({t}, D, {self.chunk})"
            )
        if self.b_proj.shape != (t, self.w_proj.shape[1]):
            raise DimensionError(
                f"b_proj shape {self.b_proj.shape} != ({t}, {self.w_proj.shape[1]})"
            )
        for d in self.domains:
            if d.is_categorical and self.embeddings[d.name].shape != (d.cardinality, d.dim):
                raise DimensionError(f"embedding table for {d.name} has wrong shape")

    @property
    def embed_len(self) -> int:
        return sum(d.dim for d in self.domains)

    @property
    def n_tokens(self) -> int:
        return self.embed_len // self.chunk

    @property
    def token_dim(self) -> int:
        return self.w_proj.shape[1]

    @classmethod
    def random(cls, domains: tuple[DomainSpec, ...], chunk: int, token_dim: int,
               rng: np.random.Generator):
        embeddings = {
            d.name: rng.normal(0.0, 0.01, (d.cardinality, d.dim))
            for d in domains if d.is_categorical
        }
        total = sum(d.dim for d in domains)
        if total % chunk != 0:
            raise ConfigError(
                f"embedding length {total} not divisible by chunk {chunk}"
            )
        t = total // chunk
        w = rng.normal(0.0, 1.0 / np.sqrt(chunk), (t, token_dim, chunk))
        b = np.zeros((t, token_dim))
        return cls(domains=domains, embeddings=embeddings, chunk=chunk,
                   w_proj=w, b_proj=b)


def embed_features(batch, p: TokenizerParams) -> np.ndarray:
    """Concatenate per-domain embeddings into (N, embed_len)."""
    parts = []
    for d in p.domains:
        if d.is_categorical:
            parts.append(p.embeddings[d.name][batch.cats[d.name]])
        else:
            parts.append(batch.denses[d.name])
    return np.concatenate(parts, axis=-1)


def tokenize(e, p: TokenizerParams) -> np.ndarray:
    """Project embedding chunks to tokens: (E_len,) -> (T, D), batched too."""
    e = np.asarray(e, dtype=np.float64)
    single = e.ndim == 1
    eb = e[None, :] if single else e
    if eb.shape[1] != p.embed_len:
        raise DimensionError(
            f"embedding length {eb.shape[1]} != tokenizer expectation {p.embed_len}"
        )
    chunks = eb.reshape(eb.shape[0], p.n_tokens, p.chunk)
    tokens = np.einsum("ntc,tdc->ntd", chunks, p.w_proj) + p.b_proj
    return tokens[0] if single else tokens


# ---------------------------------------------------------------------------
# per-token SwiGLU
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PSwiGLUParams:
    """Gated feed-forward with a distinct weight set per token row."""

    w_up: np.ndarray
    b_up: np.ndarray
    w_gate: np.ndarray
    b_gate: np.ndarray
    w_down: np.ndarray
    b_down: np.ndarray

    def __post_init__(self):
        k, b, h = self.w_up.shape
        if self.w_gate.shape != (k, b, h) or self.w_down.shape != (k, h, b):
            raise DimensionError("pSwiGLU weight shapes are inconsistent")
        if self.b_up.shape != (k, h) or self.b_gate.shape != (k, h) \
                or self.b_down.shape != (k, b):
            raise DimensionError("pSwiGLU bias shapes are inconsistent")

    @property
    def n_tokens(self) -> int:
        return self.w_up.shape[0]

    @property
    def width(self) -> int:
        return self.w_up.shape[1]

    @property
    def hidden(self) -> int:
        return self.w_up.shape[2]

    def param_count(self) -> int:
        return (self.w_up.size + self.b_up.size + self.w_gate.size
                + self.b_gate.size + self.w_down.size + self.b_down.size)

    @classmethod
    def random(cls, n_tokens: int, width: int, expansion: int,
               rng: np.random.Generator):
        h = expansion * width
        s_in = 1.0 / np.sqrt(width)
        s_out = 1.0 / np.sqrt(h)
        return cls(
            w_up=rng.normal(0.0, s_in, (n_tokens, width, h)),
            b_up=np.zeros((n_tokens, h)),
            w_gate=rng.normal(0.0, s_in, (n_tokens, width, h)),
            b_gate=np.zeros((n_tokens, h)),
            w_down=rng.normal(0.0, s_out, (n_tokens, h, width)),
            b_down=np.zeros((n_tokens, width)),
        )


def pertoken_swiglu(o, p: PSwiGLUParams) -> np.ndarray:
    """Apply row i's weight set to row i: (k, B) -> (k, B), batched too."""
    o = np.asarray(o, dtype=np.float64)
    single = o.ndim == 2
    ob = o[None] if single else o
    if ob.shape[1:] != (p.n_tokens, p.width):
        raise DimensionError(
            f"input shape {o.shape} does not match pSwiGLU ({p.n_tokens}, {p.width})"
        )
    out = backends.pswiglu_batch(ob, p.w_up, p.b_up, p.w_gate, p.b_gate,
                                 p.w_down, p.b_down)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# dual-stream (pre+post norm) wrapper
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SiameseState:
    """The two coupled streams; both are (L,) vectors or (N, L) batches."""

    x_bar: np.ndarray
    y_bar: np.ndarray

    def __post_init__(self):
        if self.x_bar.shape != self.y_bar.shape:
            raise DimensionError(
                f"stream shapes differ: {self.x_bar.shape} vs {self.y_bar.shape}"
            )

    @classmethod
    def init(cls, x: np.ndarray) -> "SiameseState":
        return cls(x_bar=np.array(x, dtype=np.float64),
                   y_bar=np.array(x, dtype=np.float64))


def siamese_step(state: SiameseState, block_output_fn) -> SiameseState:
    """One block update:

    y_tilde = rms_norm(y_bar); o = block(x_bar + y_tilde);
    x_bar'  = rms_norm(x_bar + o); y_bar' = y_bar + o.
    """
    y_tilde = rms_norm_rows(state.y_bar)
    o = block_output_fn(state.x_bar + y_tilde)
    return SiameseState(
        x_bar=rms_norm_rows(state.x_bar + o),
        y_bar=state.y_bar + o,
    )


def siamese_finalize(state: SiameseState) -> np.ndarray:
    """Fuse the streams: x_bar + rms_norm(y_bar)."""
    return state.x_bar + rms_norm_rows(state.y_bar)


# ---------------------------------------------------------------------------
# mixer block variants
# ---------------------------------------------------------------------------

def balanced_grid(k: int) -> tuple[int, int]:
    """Factor k = t * h with t the largest divisor <= sqrt(k)."""
    t = 1
    for cand in range(1, int(np.sqrt(k)) + 1):
        if k % cand == 0:
            t = cand
    return t, k // t


def grid_transpose_matrix(t: int, h: int) -> np.ndarray:
    """Permutation matrix swapping the (token, head) grid axes.

    Row h*t + i maps from column i*h + h: the constant global pattern of
    the rule-based mixer.
    """
    k = t * h
    g = np.zeros((k, k))
    for hh in range(h):
        for tt in range(t):
            g[hh * t + tt, tt * h + hh] = 1.0
    return g


@dataclass(frozen=True)
class TokenMixerMix:
    """Fixed (non-trainable) rule-based global pattern; identity local maps."""

    length: int
    block: int
    grid_t: int
    grid_h: int

    @property
    def n_blocks(self) -> int:
        return self.length // self.block

    @property
    def g(self) -> np.ndarray:
        return grid_transpose_matrix(self.grid_t, self.grid_h)

    def param_count(self) -> int:
        return 0


@dataclass(frozen=True)
class SelfAttnMix:
    """Shared Q/K/V maps over the block rows."""

    length: int
    block: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def param_count(self) -> int:
        return self.w_q.size + self.w_k.size + self.w_v.size


@dataclass(frozen=True)
class HeteroAttnMix:
    """Row-specific Q/K/V maps: (k, B, B) each."""

    length: int
    block: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def param_count(self) -> int:
        return self.w_q.size + self.w_k.size + self.w_v.size


@dataclass(frozen=True)
class FMMix:
    """Gram-matrix global pattern with a constant local projection y."""

    length: int
    block: int
    y: np.ndarray

    def param_count(self) -> int:
        return self.y.size


MixParams = Union[UniMixingParams, LiteParams, TokenMixerMix, SelfAttnMix,
                  HeteroAttnMix, FMMix]

_KIND_TO_TYPE = {
    "unimixing": UniMixingParams,
    "unimixing-lite": LiteParams,
    "tokenmixer": TokenMixerMix,
    "self-attn": SelfAttnMix,
    "hetero-attn": HeteroAttnMix,
    "fm": FMMix,
}


@dataclass(frozen=True)
class MixerBlock:
    kind: str
    mix: MixParams
    ffn: PSwiGLUParams

    def __post_init__(self):
        expected = _KIND_TO_TYPE.get(self.kind)
        if expected is None:
            raise ConfigError(f"unknown block kind {self.kind!r}")
        if not isinstance(self.mix, expected):
            raise ConfigError(
                f"block kind {self.kind!r} expects {expected.__name__}, "
                f"got {type(self.mix).__name__}"
            )
        if self.ffn.width != self.mix.block \
                or self.ffn.n_tokens * self.ffn.width != self.length:
            raise DimensionError("ffn token layout does not match block length")

    @property
    def length(self) -> int:
        return self.mix.length

    @property
    def block_size(self) -> int:
        return self.mix.block


def _with_tau(p, tau: Optional[float], sinkhorn_iters: Optional[int]):
    if tau is None and sinkhorn_iters is None:
        return p
    cfg: ConstraintConfig = p.constraint
    new = ConstraintConfig(
        tau=cfg.tau if tau is None else tau,
        max_iters=cfg.max_iters if sinkhorn_iters is None else sinkhorn_iters,
        tol=cfg.tol if sinkhorn_iters is None else 1e-300,
    )
    return dataclasses.replace(p, constraint=new)


def mix_forward(block: MixerBlock, z: np.ndarray, tau: Optional[float] = None,
                sinkhorn_iters: Optional[int] = None) -> np.ndarray:
    """Apply a block's mixing map to (N, L) embeddings.

    tau / sinkhorn_iters override the stored constraint config (annealing
    and fixed-depth parity with the training graph); with
    ``sinkhorn_iters`` set the projection runs exactly that many rounds.
    """
    mix = block.mix
    k = mix.length // mix.block
    if block.kind == "unimixing":
        w_g, w_bs = constrained_weights(_with_tau(mix, tau, sinkhorn_iters))
        return mix_pipeline(z, w_g, w_bs)
    if block.kind == "unimixing-lite":
        w_r, w_bs = lite_materialize(_with_tau(mix, tau, sinkhorn_iters))
        return mix_pipeline(z, w_r, w_bs)
    chunks = z.reshape(z.shape[0], k, mix.block)
    if block.kind == "tokenmixer":
        out = np.matmul(mix.g, chunks)
    elif block.kind == "self-attn":
        q = chunks @ mix.w_q
        kk = chunks @ mix.w_k
        v = chunks @ mix.w_v
        scores = np.matmul(q, kk.transpose(0, 2, 1)) / np.sqrt(mix.block)
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        p = e / e.sum(axis=-1, keepdims=True)
        out = np.matmul(p, v)
    elif block.kind == "hetero-attn":
        q = np.einsum("nkb,kbc->nkc", chunks, mix.w_q)
        kk = np.einsum("nkb,kbc->nkc", chunks, mix.w_k)
        v = np.einsum("nkb,kbc->nkc", chunks, mix.w_v)
        scores = np.matmul(q, kk.transpose(0, 2, 1)) / np.sqrt(mix.block)
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        p = e / e.sum(axis=-1, keepdims=True)
        out = np.matmul(p, v)
    elif block.kind == "fm":
        gram = np.matmul(chunks, chunks.transpose(0, 2, 1))
        out = np.matmul(gram, mix.y)
    else:  # pragma: no cover - MixerBlock validates kinds
        raise ConfigError(f"unknown block kind {block.kind!r}")
    return out.reshape(z.shape[0], mix.length)


def block_body(block: MixerBlock, z: np.ndarray, tau: Optional[float] = None,
               sinkhorn_iters: Optional[int] = None) -> np.ndarray:
    """Mixing + residual norm, then the per-token feed-forward."""
    u = rms_norm_rows(z + mix_forward(block, z, tau, sinkhorn_iters))
    k = block.length // block.block_size
    o = pertoken_swiglu(u.reshape(u.shape[0], k, block.block_size), block.ffn)
    return o.reshape(u.shape[0], block.length)


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UniMixerModel:
    tokenizer: TokenizerParams
    blocks: tuple[MixerBlock, ...]
    head_w: np.ndarray
    head_b: np.ndarray

    def __post_init__(self):
        length = self.tokenizer.n_tokens * self.tokenizer.token_dim
        for i, blk in enumerate(self.blocks):
            if blk.length != length:
                raise DimensionError(
                    f"block {i} length {blk.length} != tokenized length {length}"
                )
        if self.head_w.shape != (length,) or self.head_b.shape != (1,):
            raise DimensionError("head shapes must be (L,) and (1,)")
        sizes = {blk.block_size for blk in self.blocks}
        if len(sizes) > 1:
            raise ConfigError(f"all blocks must share one block size, got {sizes}")

    @property
    def length(self) -> int:
        return self.tokenizer.n_tokens * self.tokenizer.token_dim


def model_forward(batch, model: UniMixerModel, tau: Optional[float] = None,
                  sinkhorn_iters: Optional[int] = None) -> np.ndarray:
    """Logits for a feature batch (returns (N,); pass a 1-sample batch for one)."""
    e = embed_features(batch, model.tokenizer)
    tokens = tokenize(e, model.tokenizer)
    z = tokens.reshape(tokens.shape[0], -1)
    state = SiameseState.init(z)
    for blk in model.blocks:
        state = siamese_step(
            state, lambda zz, b=blk: block_body(b, zz, tau, sinkhorn_iters)
        )
    fused = siamese_finalize(state)
    return fused @ model.head_w + model.head_b[0]


def predict_proba(batch, model: UniMixerModel, tau: Optional[float] = None,
                  sinkhorn_iters: Optional[int] = None) -> np.ndarray:
    return sigmoid(model_forward(batch, model, tau, sinkhorn_iters))


def named_parameters(model: UniMixerModel) -> dict[str, np.ndarray]:
    """Flat name -> array view of every trainable tensor (stable order).

    Embedding tables are included (they are trained) but reported
    separately by the parameter accounting, which follows the dense-count
    convention.
    """
    params: dict[str, np.ndarray] = {}
    tok = model.tokenizer
    for d in tok.domains:
        if d.is_categorical:
            params[f"tokenizer.emb.{d.name}"] = tok.embeddings[d.name]
    params["tokenizer.w_proj"] = tok.w_proj
    params["tokenizer.b_proj"] = tok.b_proj
    for i, blk in enumerate(model.blocks):
        pre = f"blocks.{i}"
        m = blk.mix
        if blk.kind == "unimixing":
            params[f"{pre}.mix.w_g_raw"] = m.w_g_raw
            params[f"{pre}.mix.w_b_raw"] = m.w_b_raw
        elif blk.kind == "unimixing-lite":
            params[f"{pre}.mix.a_g"] = m.a_g
            params[f"{pre}.mix.b_g"] = m.b_g
            params[f"{pre}.mix.basis"] = m.basis
            params[f"{pre}.mix.omega"] = m.omega
        elif blk.kind in ("self-attn", "hetero-attn"):
            params[f"{pre}.mix.w_q"] = m.w_q
            params[f"{pre}.mix.w_k"] = m.w_k
            params[f"{pre}.mix.w_v"] = m.w_v
        elif blk.kind == "fm":
            params[f"{pre}.mix.y"] = m.y
        # tokenmixer has no trainable mixing weights
        ffn = blk.ffn
        params[f"{pre}.ffn.w_up"] = ffn.w_up
        params[f"{pre}.ffn.b_up"] = ffn.b_up
        params[f"{pre}.ffn.w_gate"] = ffn.w_gate
        params[f"{pre}.ffn.b_gate"] = ffn.b_gate
        params[f"{pre}.ffn.w_down"] = ffn.w_down
        params[f"{pre}.ffn.b_down"] = ffn.b_down
    params["head.w"] = model.head_w
    params["head.b"] = model.head_b
    return params


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (data layout comes from the domains)."""

    variant: str = "unimixing-lite"
    token_dim: int = 8
    chunk: int = 8
    block: int = 4
    n_blocks: int = 2
    rank: int = 4
    n_basis: int = 2
    expansion: int = 2
    tau: float = 1.0
    sinkhorn_max_iters: int = 100
    sinkhorn_tol: float = 1e-6

    def __post_init__(self):
        if self.variant not in _KIND_TO_TYPE:
            raise ConfigError(f"unknown variant {self.variant!r}; "
                              f"expected one of {tuple(_KIND_TO_TYPE)}")
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be >= 1")


def _build_mix(kind: str, length: int, block: int, cfg: ModelConfig,
               rng: np.random.Generator) -> MixParams:
    k = length // block
    constraint = ConstraintConfig(tau=cfg.tau, max_iters=cfg.sinkhorn_max_iters,
                                  tol=cfg.sinkhorn_tol)
    if kind == "unimixing":
        return UniMixingParams.random(length, block, rng, constraint)
    if kind == "unimixing-lite":
        return LiteParams.random(length, block, cfg.rank, cfg.n_basis, rng,
                                 constraint)
    if kind == "tokenmixer":
        t, h = balanced_grid(k)
        return TokenMixerMix(length=length, block=block, grid_t=t, grid_h=h)
    scale = 1.0 / np.sqrt(block)
    if kind == "self-attn":
        return SelfAttnMix(length, block,
                           rng.normal(0.0, scale, (block, block)),
                           rng.normal(0.0, scale, (block, block)),
                           rng.normal(0.0, scale, (block, block)))
    if kind == "hetero-attn":
        return HeteroAttnMix(length, block,
                             rng.normal(0.0, scale, (k, block, block)),
                             rng.normal(0.0, scale, (k, block, block)),
                             rng.normal(0.0, scale, (k, block, block)))
    if kind == "fm":
        return FMMix(length, block, rng.normal(0.0, 1.0 / np.sqrt(k), (k, block)))
    raise ConfigError(f"unknown variant {kind!r}")


def build_model(domains: tuple[DomainSpec, ...], cfg: ModelConfig,
                rng: np.random.Generator) -> UniMixerModel:
    """Assemble a model with random initialization for the given data layout."""
    tokenizer = TokenizerParams.random(domains, cfg.chunk, cfg.token_dim, rng)
    length = tokenizer.n_tokens * tokenizer.token_dim
    if length % cfg.block != 0:
        raise ConfigError(
            f"embedding length {length} (= {tokenizer.n_tokens} tokens x "
            f"{cfg.token_dim}) is not divisible by block size {cfg.block}"
        )
    k = length // cfg.block
    blocks = []
    for _ in range(cfg.n_blocks):
        mix = _build_mix(cfg.variant, length, cfg.block, cfg, rng)
        ffn = PSwiGLUParams.random(k, cfg.block, cfg.expansion, rng)
        blocks.append(MixerBlock(kind=cfg.variant, mix=mix, ffn=ffn))
    head_w = rng.normal(0.0, 1.0 / np.sqrt(length), length)
    head_b = np.zeros(1)
    return UniMixerModel(tokenizer=tokenizer, blocks=tuple(blocks),
                         head_w=head_w, head_b=head_b)
