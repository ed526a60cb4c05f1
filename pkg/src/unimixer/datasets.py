"""Synthetic planted-interaction CTR data and its on-disk format.

Each feature field is either categorical (an integer id per sample) or
dense (a small float vector per sample). The label probability is
sigmoid of a sum of planted interaction terms; a term multiplies one
scalar signal per referenced field (a fixed random +/-1 latent per
category, or the first dense coordinate) by its coefficient. Models
must discover these interactions to beat AUC 0.5.

The file format is columnar text: a comma-separated header then one
sample per line with the group id, categorical indices, dense values
(full-precision ``repr``) and the label. No quoting or escaping is
needed because all values are numeric; files round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError

__all__ = [
    "DomainSpec",
    "PlantedTerm",
    "SyntheticSpec",
    "Dataset",
    "generate_synthetic",
    "save_dataset",
    "load_dataset",
    "split_train_heldout",
]


@dataclass(frozen=True)
class DomainSpec:
    """One feature field / embedding domain.

    cardinality is None for dense fields; ``dim`` is the embedding dim
    for categorical fields and the raw vector length for dense ones
    (dense fields pass through an identity embedding).
    """

    name: str
    cardinality: Optional[int]
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"field {self.name}: dim must be >= 1")
        if self.cardinality is not None and self.cardinality < 2:
            raise ConfigError(f"field {self.name}: cardinality must be >= 2")

    @property
    def is_categorical(self) -> bool:
        return self.cardinality is not None


@dataclass(frozen=True)
class PlantedTerm:
    """coef * product of the referenced fields' scalar signals."""

    fields: tuple[str, ...]
    coef: float


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int
    n_user_groups: int
    fields: tuple[DomainSpec, ...]
    terms: tuple[PlantedTerm, ...]
    noise_rate: float = 0.0
    seed: int = 0
    bias: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.noise_rate < 0.5:
            raise ConfigError(f"noise_rate must be in [0, 0.5), got {self.noise_rate}")
        if self.n_user_groups < 1:
            raise ConfigError("n_user_groups must be >= 1")
        names = {f.name for f in self.fields}
        if len(names) != len(self.fields):
            raise ConfigError("field names must be unique")
        for t in self.terms:
            for name in t.fields:
                if name not in names:
                    raise ConfigError(f"planted term references unknown field {name!r}")


@dataclass
class Dataset:
    """Column-major sample store; arrays share a common leading length."""

    fields: tuple[DomainSpec, ...]
    cats: dict[str, np.ndarray]
    denses: dict[str, np.ndarray]
    labels: np.ndarray
    groups: np.ndarray
    true_probs: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.labels)

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            fields=self.fields,
            cats={k: v[idx] for k, v in self.cats.items()},
            denses={k: v[idx] for k, v in self.denses.items()},
            labels=self.labels[idx],
            groups=self.groups[idx],
            true_probs=None if self.true_probs is None else self.true_probs[idx],
        )


def _field_signals(spec: SyntheticSpec, rng: np.random.Generator,
                   cats: dict, denses: dict) -> dict[str, np.ndarray]:
    """Per-sample scalar signal for every field referenced by a term."""
    used = {name for t in spec.terms for name in t.fields}
    signals = {}
    for f in spec.fields:
        if f.name not in used:
            continue
        if f.is_categorical:
            latent = rng.choice(np.array([-1.0, 1.0]), size=f.cardinality)
            signals[f.name] = latent[cats[f.name]]
        else:
            signals[f.name] = denses[f.name][:, 0]
    return signals


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset deterministically from the spec's seed."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    cats = {}
    denses = {}
    for f in spec.fields:
        if f.is_categorical:
            cats[f.name] = rng.integers(0, f.cardinality, size=n)
        else:
            denses[f.name] = rng.normal(0.0, 1.0, size=(n, f.dim))
    groups = rng.integers(0, spec.n_user_groups, size=n)
    signals = _field_signals(spec, rng, cats, denses)
    logit = np.full(n, spec.bias, dtype=np.float64)
    for t in spec.terms:
        term = np.full(n, t.coef, dtype=np.float64)
        for name in t.fields:
            term = term * signals[name]
        logit += term
    probs = 1.0 / (1.0 + np.exp(-logit))
    labels = (rng.random(n) < probs).astype(np.float64)
    if spec.noise_rate > 0:
        flip = rng.random(n) < spec.noise_rate
        labels = np.where(flip, 1.0 - labels, labels)
    return Dataset(
        fields=spec.fields,
        cats=cats,
        denses=denses,
        labels=labels,
        groups=groups,
        true_probs=probs,
    )


def save_dataset(path, ds: Dataset) -> None:
    """Write the documented columnar text format (see module docstring)."""
    path = Path(path)
    cols = ["group"]
    for f in ds.fields:
        if f.is_categorical:
            cols.append(f"cat_{f.name}")
        else:
            cols.extend(f"dense_{f.name}_{i}" for i in range(ds.denses[f.name].shape[1]))
    cols.append("label")
    lines = [",".join(cols)]
    for i in range(ds.n):
        row = [str(int(ds.groups[i]))]
        for f in ds.fields:
            if f.is_categorical:
                row.append(str(int(ds.cats[f.name][i])))
            else:
                row.extend(repr(float(v)) for v in ds.denses[f.name][i])
        row.append(str(int(ds.labels[i])))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def load_dataset(path, fields: tuple[DomainSpec, ...]) -> Dataset:
    """Read the columnar text format back; exact float round trip."""
    path = Path(path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    expected = ["group"]
    for f in fields:
        if f.is_categorical:
            expected.append(f"cat_{f.name}")
        else:
            expected.extend(f"dense_{f.name}_{i}" for i in range(f.dim))
    expected.append("label")
    if header != expected:
        raise DimensionError(
            f"dataset header {header[:4]}... does not match fields {expected[:4]}..."
        )
    n = len(lines) - 1
    cats = {f.name: np.empty(n, dtype=np.int64) for f in fields if f.is_categorical}
    denses = {f.name: np.empty((n, f.dim)) for f in fields if not f.is_categorical}
    labels = np.empty(n)
    groups = np.empty(n, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        groups[i] = int(parts[0])
        j = 1
        for f in fields:
            if f.is_categorical:
                cats[f.name][i] = int(parts[j])
                j += 1
            else:
                denses[f.name][i] = [float(p) for p in parts[j : j + f.dim]]
                j += f.dim
        labels[i] = float(parts[j])
    return Dataset(fields=fields, cats=cats, denses=denses, labels=labels,
                   groups=groups)


def split_train_heldout(ds: Dataset, heldout_frac: float = 0.1,
                        seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic 90/10-style split, stratified by group."""
    rng = np.random.default_rng(seed)
    held_mask = np.zeros(ds.n, dtype=bool)
    for g in np.unique(ds.groups):
        idx = np.flatnonzero(ds.groups == g)
        idx = idx[rng.permutation(len(idx))]
        n_held = max(1, int(round(len(idx) * heldout_frac)))
        held_mask[idx[:n_held]] = True
    return ds.take(np.flatnonzero(~held_mask)), ds.take(np.flatnonzero(held_mask))
