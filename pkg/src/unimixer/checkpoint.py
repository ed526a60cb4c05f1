"""Model checkpoint file: self-describing flat binary container.

Layout (documented here and in the README):

  bytes 0..7    magic ``UMIXMODL``
  bytes 8..15   header length ``H`` as little-endian uint64
  bytes 16..16+H  UTF-8 JSON header
  remainder     array payload

The JSON header holds ``format_version``, a ``config`` record (domains,
chunk size, token dim, block kinds and constraint settings, grid factors
for rule-based blocks) and an ``arrays`` directory of
``{name, shape, offset, nbytes}`` entries. Every array is float64,
little-endian, row-major, stored at ``offset`` bytes into the payload.
Weights round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .datasets import DomainSpec
from .errors import ConfigError
from .mixing import LiteParams, UniMixingParams
from .model import (FMMix, HeteroAttnMix, MixerBlock, PSwiGLUParams,
                    SelfAttnMix, TokenMixerMix, TokenizerParams, UniMixerModel,
                    named_parameters)
from .sinkhorn import ConstraintConfig

__all__ = ["save_model", "load_model", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"UMIXMODL"
FORMAT_VERSION = 1


def _block_meta(blk: MixerBlock) -> dict:
    meta = {"kind": blk.kind, "length": blk.length, "block": blk.block_size}
    if blk.kind in ("unimixing", "unimixing-lite"):
        c = blk.mix.constraint
        meta["constraint"] = {"tau": c.tau, "max_iters": c.max_iters, "tol": c.tol}
    if blk.kind == "tokenmixer":
        meta["grid_t"] = blk.mix.grid_t
        meta["grid_h"] = blk.mix.grid_h
    return meta


def save_model(path, model: UniMixerModel) -> None:
    params = named_parameters(model)
    arrays = []
    offset = 0
    payload = bytearray()
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        arrays.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(data),
        })
        payload.extend(data)
        offset += len(data)
    config = {
        "domains": [
            {"name": d.name, "cardinality": d.cardinality, "dim": d.dim}
            for d in model.tokenizer.domains
        ],
        "chunk": model.tokenizer.chunk,
        "token_dim": model.tokenizer.token_dim,
        "blocks": [_block_meta(b) for b in model.blocks],
    }
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "config": config,
        "arrays": arrays,
    }).encode("utf-8")
    with open(Path(path), "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(bytes(payload))


def _read_arrays(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[:8] != MAGIC:
        raise ConfigError("not a model checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {header.get('format_version')}")
    payload = raw[16 + hlen :]
    arrays = {}
    for ent in header["arrays"]:
        start, n = ent["offset"], ent["nbytes"]
        arr = np.frombuffer(payload[start : start + n], dtype="<f8").astype(np.float64)
        arrays[ent["name"]] = arr.reshape(ent["shape"])
    return header["config"], arrays


def _build_mix_from_meta(meta: dict, pre: str, arrays: dict):
    kind = meta["kind"]
    length, block = meta["length"], meta["block"]
    if kind == "unimixing":
        c = meta["constraint"]
        return UniMixingParams(
            length=length, block=block,
            w_g_raw=arrays[f"{pre}.mix.w_g_raw"],
            w_b_raw=arrays[f"{pre}.mix.w_b_raw"],
            constraint=ConstraintConfig(**c),
        )
    if kind == "unimixing-lite":
        c = meta["constraint"]
        return LiteParams(
            length=length, block=block,
            a_g=arrays[f"{pre}.mix.a_g"], b_g=arrays[f"{pre}.mix.b_g"],
            basis=arrays[f"{pre}.mix.basis"], omega=arrays[f"{pre}.mix.omega"],
            constraint=ConstraintConfig(**c),
        )
    if kind == "tokenmixer":
        return TokenMixerMix(length=length, block=block,
                             grid_t=meta["grid_t"], grid_h=meta["grid_h"])
    if kind == "self-attn":
        return SelfAttnMix(length, block, arrays[f"{pre}.mix.w_q"],
                           arrays[f"{pre}.mix.w_k"], arrays[f"{pre}.mix.w_v"])
    if kind == "hetero-attn":
        return HeteroAttnMix(length, block, arrays[f"{pre}.mix.w_q"],
                             arrays[f"{pre}.mix.w_k"], arrays[f"{pre}.mix.w_v"])
    if kind == "fm":
        return FMMix(length, block, arrays[f"{pre}.mix.y"])
    raise ConfigError(f"unknown block kind {kind!r} in checkpoint")


def load_model(path) -> UniMixerModel:
    raw = Path(path).read_bytes()
    config, arrays = _read_arrays(raw)
    domains = tuple(
        DomainSpec(d["name"], d["cardinality"], d["dim"]) for d in config["domains"]
    )
    tokenizer = TokenizerParams(
        domains=domains,
        embeddings={
            d.name: arrays[f"tokenizer.emb.{d.name}"]
            for d in domains if d.is_categorical
        },
        chunk=config["chunk"],
        w_proj=arrays["tokenizer.w_proj"],
        b_proj=arrays["tokenizer.b_proj"],
    )
    blocks = []
    for i, meta in enumerate(config["blocks"]):
        pre = f"blocks.{i}"
        mix = _build_mix_from_meta(meta, pre, arrays)
        ffn = PSwiGLUParams(
            w_up=arrays[f"{pre}.ffn.w_up"], b_up=arrays[f"{pre}.ffn.b_up"],
            w_gate=arrays[f"{pre}.ffn.w_gate"], b_gate=arrays[f"{pre}.ffn.b_gate"],
            w_down=arrays[f"{pre}.ffn.w_down"], b_down=arrays[f"{pre}.ffn.b_down"],
        )
        blocks.append(MixerBlock(kind=meta["kind"], mix=mix, ffn=ffn))
    return UniMixerModel(tokenizer=tokenizer, blocks=tuple(blocks),
                         head_w=arrays["head.w"], head_b=arrays["head.b"])
