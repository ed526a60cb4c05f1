"""YAML run configuration: nested sections, strict keys, documented defaults.

Sections (all optional; defaults below):

  data:      n_samples (20000), n_user_groups (40), seed (7),
             noise_rate (0.05), bias (0.0),
             fields: list of {name, kind: categorical|dense,
                              cardinality (categorical only), dim}
             terms:  list of {fields: [names], coef}
  model:     variant (unimixing-lite), token_dim (8), chunk (8), block (4),
             n_blocks (2), rank (4), n_basis (2), expansion (2), tau (1.0),
             sinkhorn_max_iters (100), sinkhorn_tol (1e-6)
  training:  steps (800), batch_size (256), lr (0.001), beta1 (0.9),
             beta2 (0.999), adam_eps (1e-8), sinkhorn_iters (20),
             heldout_frac (0.1), split_seed (0), eval_every (0),
             tau_start (1.0), tau_end (0.05), anneal_steps (0; > 0 turns
             linear annealing on), warm_restart: {phase1_steps,
             tau_high (1.0), tau_low (0.05)} (mutually exclusive with
             annealing)
  sweep:     seeds ([0]), baseline_auc (0.5), sizes: list of model
             overrides (each a partial model section)

Unknown keys anywhere are configuration errors. When ``data.fields`` is
omitted a default planted-interaction layout is used (six categorical
fields of cardinality 24 and one 8-wide dense field, with three planted
pair terms).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import yaml

from .datasets import DomainSpec, PlantedTerm, SyntheticSpec
from .errors import ConfigError
from .model import ModelConfig
from .training import AnnealSchedule, TrainConfig, WarmRestart

__all__ = ["AppConfig", "SweepSettings", "load_config", "parse_config",
           "DEFAULT_FIELDS", "DEFAULT_TERMS"]

DEFAULT_FIELDS = tuple(
    [DomainSpec(f"c{i}", 24, 8) for i in range(6)] + [DomainSpec("d0", None, 8)]
)
DEFAULT_TERMS = (
    PlantedTerm(("c0", "c1"), 2.2),
    PlantedTerm(("c2", "c3"), 1.8),
    PlantedTerm(("c4", "d0"), 1.5),
)

_DATA_KEYS = {"n_samples", "n_user_groups", "seed", "noise_rate", "bias",
              "fields", "terms"}
_MODEL_KEYS = {"variant", "token_dim", "chunk", "block", "n_blocks", "rank",
               "n_basis", "expansion", "tau", "sinkhorn_max_iters",
               "sinkhorn_tol"}
_TRAIN_KEYS = {"steps", "batch_size", "lr", "beta1", "beta2", "adam_eps",
               "sinkhorn_iters", "heldout_frac", "split_seed", "eval_every",
               "tau_start", "tau_end", "anneal_steps", "warm_restart"}
_SWEEP_KEYS = {"seeds", "baseline_auc", "sizes"}
_FIELD_KEYS = {"name", "kind", "cardinality", "dim"}
_TERM_KEYS = {"fields", "coef"}
_WR_KEYS = {"phase1_steps", "tau_high", "tau_low"}


def _reject_unknown(section: str, given: dict, allowed: set[str]) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{section}]: {sorted(unknown)}; "
            f"allowed: {sorted(allowed)}"
        )


@dataclass(frozen=True)
class SweepSettings:
    sizes: tuple[ModelConfig, ...]
    seeds: tuple[int, ...]
    baseline_auc: float


@dataclass(frozen=True)
class AppConfig:
    data_spec: SyntheticSpec
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    sweep: Optional[SweepSettings]


def _parse_fields(raw) -> tuple[DomainSpec, ...]:
    fields = []
    for f in raw:
        _reject_unknown("data.fields[]", f, _FIELD_KEYS)
        kind = f.get("kind", "categorical")
        if kind == "categorical":
            fields.append(DomainSpec(f["name"], int(f.get("cardinality", 24)),
                                     int(f.get("dim", 8))))
        elif kind == "dense":
            if "cardinality" in f:
                raise ConfigError(f"dense field {f['name']} takes no cardinality")
            fields.append(DomainSpec(f["name"], None, int(f.get("dim", 8))))
        else:
            raise ConfigError(f"field kind must be categorical|dense, got {kind!r}")
    return tuple(fields)


def _parse_terms(raw) -> tuple[PlantedTerm, ...]:
    terms = []
    for t in raw:
        _reject_unknown("data.terms[]", t, _TERM_KEYS)
        terms.append(PlantedTerm(tuple(t["fields"]), float(t["coef"])))
    return tuple(terms)


def _parse_data(raw: dict) -> SyntheticSpec:
    _reject_unknown("data", raw, _DATA_KEYS)
    fields = _parse_fields(raw["fields"]) if "fields" in raw else DEFAULT_FIELDS
    terms = _parse_terms(raw["terms"]) if "terms" in raw else DEFAULT_TERMS
    return SyntheticSpec(
        n_samples=int(raw.get("n_samples", 20000)),
        n_user_groups=int(raw.get("n_user_groups", 40)),
        fields=fields,
        terms=terms,
        noise_rate=float(raw.get("noise_rate", 0.05)),
        seed=int(raw.get("seed", 7)),
        bias=float(raw.get("bias", 0.0)),
    )


def _parse_model(raw: dict, base: Optional[ModelConfig] = None) -> ModelConfig:
    _reject_unknown("model", raw, _MODEL_KEYS)
    base = base or ModelConfig()
    kwargs = {}
    for key in _MODEL_KEYS:
        if key in raw:
            kwargs[key] = raw[key]
    try:
        return replace(base, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad model config: {exc}") from exc


def _parse_training(raw: dict) -> TrainConfig:
    _reject_unknown("training", raw, _TRAIN_KEYS)
    schedule = None
    anneal_steps = int(raw.get("anneal_steps", 0))
    if anneal_steps > 0:
        schedule = AnnealSchedule(
            tau_start=float(raw.get("tau_start", 1.0)),
            tau_end=float(raw.get("tau_end", 0.05)),
            steps=anneal_steps,
        )
    warm = None
    if raw.get("warm_restart") is not None:
        wr = raw["warm_restart"]
        _reject_unknown("training.warm_restart", wr, _WR_KEYS)
        warm = WarmRestart(
            phase1_steps=int(wr["phase1_steps"]),
            tau_high=float(wr.get("tau_high", 1.0)),
            tau_low=float(wr.get("tau_low", 0.05)),
        )
    try:
        return TrainConfig(
            lr=float(raw.get("lr", 0.001)),
            beta1=float(raw.get("beta1", 0.9)),
            beta2=float(raw.get("beta2", 0.999)),
            adam_eps=float(raw.get("adam_eps", 1e-8)),
            batch_size=int(raw.get("batch_size", 256)),
            steps=int(raw.get("steps", 800)),
            schedule=schedule,
            warm_restart=warm,
            sinkhorn_iters=int(raw.get("sinkhorn_iters", 20)),
            heldout_frac=float(raw.get("heldout_frac", 0.1)),
            split_seed=int(raw.get("split_seed", 0)),
            eval_every=int(raw.get("eval_every", 0)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad training config: {exc}") from exc


def parse_config(raw: dict) -> AppConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping of sections")
    _reject_unknown("<root>", raw, {"data", "model", "training", "sweep"})
    data_spec = _parse_data(raw.get("data", {}) or {})
    model_cfg = _parse_model(raw.get("model", {}) or {})
    train_cfg = _parse_training(raw.get("training", {}) or {})
    sweep = None
    if "sweep" in raw and raw["sweep"] is not None:
        sw = raw["sweep"]
        _reject_unknown("sweep", sw, _SWEEP_KEYS)
        sizes_raw = sw.get("sizes")
        if not sizes_raw:
            raise ConfigError("sweep.sizes must list at least one model override")
        sizes = tuple(_parse_model(s, base=model_cfg) for s in sizes_raw)
        sweep = SweepSettings(
            sizes=sizes,
            seeds=tuple(int(s) for s in sw.get("seeds", [0])),
            baseline_auc=float(sw.get("baseline_auc", 0.5)),
        )
    return AppConfig(data_spec=data_spec, model_cfg=model_cfg,
                     train_cfg=train_cfg, sweep=sweep)


def load_config(path) -> AppConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw)
