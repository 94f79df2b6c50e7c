"""Evaluation measures and manifold diagnostics.

Prediction quality: MAE, accuracy, cumulative score, Spearman/Pearson
correlations.  Representation quality: the ordinal triple satisfaction
rate, the manifold order score (Spearman correlation between pairwise
feature distances and pairwise label distances over all unordered pairs),
and the mean row KL between the label and feature neighbor distributions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import baselines, dualcore, encoder, otd
from .datagen import Dataset
from .errors import InputError, UndefinedCorrelationError

__all__ = [
    "mae",
    "cumulative_score",
    "rank_correlations",
    "manifold_order_score",
    "pca_project",
    "EvalReport",
    "evaluate_model",
]

#: Cumulative-score threshold used by reports unless overridden.
DEFAULT_CS_THRESHOLD = 5.0
#: Sample cap for the triple-enumeration diagnostic inside reports.
TRIPLE_SAMPLE_CAP = 128


def _aligned(predictions, labels):
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise InputError("empty prediction vector")
    if p.size != y.size:
        raise InputError(f"{p.size} predictions but {y.size} labels")
    return p, y


def mae(predictions, labels) -> float:
    """Mean absolute error between predictions and labels."""
    p, y = _aligned(predictions, labels)
    return float(np.abs(p - y).mean())


def cumulative_score(predictions, labels, threshold: float = DEFAULT_CS_THRESHOLD,
                     inclusive: bool = True) -> float:
    """Fraction of samples whose absolute error is within the threshold.

    Boundary errors count as correct by default; ``inclusive=False``
    switches to a strict inequality.
    """
    if threshold < 0:
        raise InputError("threshold must be >= 0")
    p, y = _aligned(predictions, labels)
    err = np.abs(p - y)
    hits = err <= threshold if inclusive else err < threshold
    return float(np.mean(hits))


def _rank(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based); ties share the mean of their rank positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = np.arange(1, values.size + 1)
    sorted_vals = values[order]
    start = 0
    for i in range(1, values.size + 1):
        if i == values.size or sorted_vals[i] != sorted_vals[start]:
            if i - start > 1:
                ranks[order[start:i]] = 0.5 * (start + 1 + i)
            start = i
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("correlation of a constant vector is undefined")
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def rank_correlations(predictions, labels) -> tuple[float, float]:
    """(Spearman, Pearson) between predictions and labels; ties get mean ranks."""
    p, y = _aligned(predictions, labels)
    if p.size < 2:
        raise InputError("need at least 2 samples for a correlation")
    return _pearson(_rank(p), _rank(y)), _pearson(p, y)


def manifold_order_score(features, labels) -> float:
    """Spearman correlation between feature distances and label distances.

    Taken over all unordered sample pairs; +1 means the embedding orders
    every pair exactly as the labels do.
    """
    z = np.asarray(features, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if z.shape[0] != y.size:
        raise InputError("features and labels are misaligned")
    if y.size < 3:
        raise InputError("need at least 3 samples for pairwise rank correlation")
    iu = np.triu_indices(y.size, k=1)
    dz = otd.pairwise_distance(z)[iu]
    dy = np.abs(y[:, None] - y[None, :])[iu]
    score, _ = rank_correlations(dz, dy)
    return score


def pca_project(features, k: int = 2):
    """Project centered features onto the top-k principal directions.

    Sign convention: each component is flipped so its largest-magnitude
    coordinate is positive (first occurrence wins ties).  Returns
    ``(coordinates, explained_variance)``.
    """
    z = np.asarray(features, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise InputError("need a 2-d feature matrix with at least 2 rows")
    if k < 1 or k > z.shape[1]:
        raise InputError(f"k must be in [1, {z.shape[1]}]")
    centered = z - z.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    coords = centered @ vt[:k].T
    for j in range(coords.shape[1]):
        pivot = int(np.argmax(np.abs(coords[:, j])))
        if coords[pivot, j] < 0:
            coords[:, j] = -coords[:, j]
    explained = (svals[:k] ** 2) / max(z.shape[0] - 1, 1)
    return coords, explained


@dataclass(frozen=True)
class EvalReport:
    """One model's scores on one dataset; correlation fields are NaN when undefined."""

    mae: float
    accuracy: float
    cumulative_score: float
    cs_threshold: float
    srcc: float
    plcc: float
    ordinal_constraint_rate: float
    manifold_order_score: float
    raw_kl: float

    def to_dict(self) -> dict:
        return {key: (None if isinstance(v, float) and np.isnan(v) else v)
                for key, v in asdict(self).items()}


def _subsample(n: int, cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, cap).astype(np.int64))


def evaluate_model(params: encoder.EncoderParams, dataset: Dataset,
                   cs_threshold: float = DEFAULT_CS_THRESHOLD) -> EvalReport:
    """Score a trained encoder on a dataset.

    Expectation-mode predictions feed MAE/CS/SRCC/PLCC; argmax predictions
    feed accuracy.  The triple-enumeration rate runs on an evenly strided
    subsample of at most ``TRIPLE_SAMPLE_CAP`` label-sorted samples to keep
    the cubic enumeration bounded.
    """
    z, logits = encoder.forward(params, dataset.features)
    ranks = dataset.class_ranks
    pred_exp = baselines.predict(logits, ranks, mode="expectation")
    pred_arg = baselines.predict(logits, ranks, mode="argmax")

    try:
        srcc, plcc = rank_correlations(pred_exp, dataset.labels)
    except UndefinedCorrelationError:
        srcc, plcc = float("nan"), float("nan")
    try:
        order_score = manifold_order_score(z, dataset.labels)
    except UndefinedCorrelationError:
        order_score = float("nan")

    sort = np.argsort(dataset.labels, kind="stable")
    sub = sort[_subsample(dataset.size, TRIPLE_SAMPLE_CAP)]
    triple_rate = otd.ordinal_constraint_rate(z[sub], dataset.labels[sub])

    raw_kl = dualcore.batch_kl(otd.label_otd(dataset.labels), otd.feature_otd(z))

    return EvalReport(
        mae=mae(pred_exp, dataset.labels),
        accuracy=float(np.mean(pred_arg == dataset.labels)),
        cumulative_score=cumulative_score(pred_exp, dataset.labels, cs_threshold),
        cs_threshold=float(cs_threshold),
        srcc=srcc,
        plcc=plcc,
        ordinal_constraint_rate=triple_rate,
        manifold_order_score=order_score,
        raw_kl=raw_kl,
    )
