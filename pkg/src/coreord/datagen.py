"""Synthetic ordinal datasets and CSV ingestion.

The synthetic generator places each sample on a smooth curve at a position
driven by its rank (plus uniform jitter along the curve), then adds
isotropic Gaussian noise.  The default curve is a helix that wraps a few
times across the rank range, so raw input distances are deliberately not
monotone in label distance: classes far apart in rank can sit close in
input space, which is what makes the alignment objective earn its keep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DatasetIOError, InputError

__all__ = ["SyntheticSpec", "Dataset", "generate", "load_csv", "save_csv"]

#: Turns of the default helix across the whole rank range.
HELIX_TURNS = 2.5
#: Axial rise per turn, relative to the unit radius.
HELIX_PITCH = 0.8


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a synthetic ordinal dataset; fully determines it with the seed."""

    class_count: int = 10
    samples_per_class: int = 60
    input_dim: int = 16
    noise: float = 0.3
    jitter: float = 0.5
    nonlinearity: str = "helix"
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise ConfigError("class_count must be >= 2")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if self.noise < 0 or self.jitter < 0:
            raise ConfigError("noise and jitter must be >= 0")
        if self.nonlinearity not in ("helix", "line"):
            raise ConfigError(f"unknown nonlinearity {self.nonlinearity!r}")


@dataclass(frozen=True)
class Dataset:
    """Feature rows, aligned labels, and the sorted rank vocabulary."""

    features: np.ndarray
    labels: np.ndarray
    class_ranks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.float64).reshape(-1))
        object.__setattr__(
            self, "class_ranks", np.asarray(self.class_ranks, dtype=np.float64).reshape(-1)
        )
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.size:
            raise InputError("features and labels are misaligned")
        missing = np.setdiff1d(np.unique(self.labels), self.class_ranks)
        if missing.size:
            raise InputError(f"labels {missing.tolist()} missing from the rank vocabulary")

    @property
    def size(self) -> int:
        return int(self.labels.size)

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def class_count(self) -> int:
        return int(self.class_ranks.size)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_ranks)


def _curve(t: np.ndarray, dim: int, kind: str) -> np.ndarray:
    """Lift curve positions t (in rank units, range about [1, C]) into R^dim."""
    span = max(t.max() - t.min(), 1.0)
    out = np.zeros((t.size, dim))
    if kind == "line":
        out[:, 0] = t
        return out
    phase = 2.0 * np.pi * HELIX_TURNS * t / span
    parts = [np.cos(phase), np.sin(phase), HELIX_PITCH * HELIX_TURNS * t / span]
    # Fixed low-amplitude harmonics fill the remaining dimensions so every
    # coordinate carries some signal; constants do not depend on the seed.
    for d in range(3, dim):
        freq = 2.0 + 0.5 * (d - 3)
        amp = 0.35 / np.sqrt(d - 1)
        shift = 0.7 * d
        trig = np.cos if d % 2 == 0 else np.sin
        parts.append(amp * trig(2.0 * np.pi * freq * t / span + shift))
    for d in range(min(dim, len(parts))):
        out[:, d] = parts[d]
    return out


def generate(spec: SyntheticSpec) -> Dataset:
    """Deterministically draw a synthetic dataset from its spec."""
    rng = np.random.default_rng(spec.seed)
    ranks = np.arange(1.0, spec.class_count + 1.0)
    labels = np.repeat(ranks, spec.samples_per_class)
    t = labels + rng.uniform(-spec.jitter, spec.jitter, size=labels.size)
    features = _curve(t, spec.input_dim, spec.nonlinearity)
    if spec.noise > 0:
        features = features + rng.normal(0.0, spec.noise, size=features.shape)
    return Dataset(features, labels, ranks)


def load_csv(path, header: bool = False) -> Dataset:
    """Parse a comma-separated dataset: one sample per line, label last.

    UTF-8, '.' decimals.  Raises :class:`DatasetIOError` with the offending
    line number on parse failures, and rejects files with fewer than two
    distinct labels (no order to learn from).
    """
    rows = []
    n_cols = None
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc

    start = 1 if header else 0
    for lineno, line in enumerate(lines[start:], start=start + 1):
        text = line.strip()
        if not text:
            continue
        cells = text.split(",")
        if n_cols is None:
            n_cols = len(cells)
            if n_cols < 2:
                raise DatasetIOError(f"line {lineno}: need at least one feature and a label")
        elif len(cells) != n_cols:
            raise DatasetIOError(
                f"line {lineno}: expected {n_cols} columns, found {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise DatasetIOError(f"line {lineno}: non-numeric cell ({exc})") from exc

    if not rows:
        raise DatasetIOError(f"{path} holds no data rows")
    data = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise DatasetIOError(f"{path} contains non-finite values")
    labels = data[:, -1]
    ranks = np.unique(labels)
    if ranks.size < 2:
        raise DatasetIOError(f"{path} has a single distinct label; need at least 2")
    return Dataset(data[:, :-1], labels, ranks)


def save_csv(dataset: Dataset, path, header: bool = False) -> None:
    """Write a dataset in the format :func:`load_csv` reads (label last)."""
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            cols = [f"x{i}" for i in range(dataset.input_dim)] + ["label"]
            fh.write(",".join(cols) + "\n")
        for row, label in zip(dataset.features, dataset.labels):
            cells = [repr(float(v)) for v in row] + [repr(float(label))]
            fh.write(",".join(cells) + "\n")
