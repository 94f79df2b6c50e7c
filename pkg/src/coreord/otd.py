"""Ordinal toset distributions (OTDs) over label and feature batches.

An OTD converts a batch of mutually comparable items into a row-stochastic
neighbor-probability matrix: entry (i, j) is the probability that item i
picks item j as its neighbor, computed as a softmax of negative pairwise
Euclidean distances over the off-diagonal of row i.  Rows built from labels
inherit the total order of the label values (closer rank implies strictly
larger probability); rows built from features only reflect geometric
proximity, which is exactly the gap the training objective closes.

All math is double precision.  Every function is pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DegenerateBatchError, InputError

__all__ = [
    "pairwise_distance",
    "label_otd",
    "feature_otd",
    "feature_otd_backward",
    "neighbor_softmax",
    "check_toset",
    "ordinal_constraint_rate",
    "validate_otd",
    "PropertyCheck",
    "TosetReport",
]

#: Row-sum slack tolerated by :func:`validate_otd`.
ROW_SUM_TOL = 1e-9


def _as_matrix(vectors, name: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise InputError(f"{name} must be a nonempty 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


def pairwise_distance(vectors) -> np.ndarray:
    """Euclidean distance matrix of a list of equal-dimension vectors.

    Returns an N x N symmetric matrix with an exactly zero diagonal.
    Ragged input raises :class:`InputError` (numpy would otherwise build an
    object array), as do non-finite entries.
    """
    if isinstance(vectors, (list, tuple)):
        lengths = {np.size(v) for v in vectors}
        if len(lengths) > 1:
            raise InputError(f"vectors have mismatched dimensions: {sorted(lengths)}")
    z = _as_matrix(vectors, "vectors")
    diff = z[:, None, :] - z[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, 0.0)
    return dist


def neighbor_softmax(distances: np.ndarray, exclude_diagonal: bool = True) -> np.ndarray:
    """Row-stochastic exp(-distance) softmax, stabilized by the row max.

    With ``exclude_diagonal`` the diagonal carries no mass and the
    normalization runs over the off-diagonal only; otherwise all columns
    participate (used for virtual prototype rows that are not batch
    members).  Subtracting the row maximum of -distance keeps the result
    finite for arbitrarily large finite distances.
    """
    d = np.asarray(distances, dtype=np.float64)
    neg = -d
    if exclude_diagonal:
        n = d.shape[0]
        if n < 2:
            raise DegenerateBatchError(
                f"need at least 2 items to normalize over neighbors, got {n}"
            )
        off = ~np.eye(n, dtype=bool)
        shift = np.where(off, neg, -np.inf).max(axis=1, keepdims=True)
        w = np.exp(neg - shift)
        w[~off] = 0.0
    else:
        if d.size == 0:
            raise DegenerateBatchError("cannot normalize an empty row")
        shift = neg.max(axis=-1, keepdims=True)
        w = np.exp(neg - shift)
    return w / w.sum(axis=-1, keepdims=True)


def label_otd(labels) -> np.ndarray:
    """Neighbor distribution of a label batch.

    Row i is the softmax of -|y_i - y_j| over j != i.  Within a row,
    entries are strictly decreasing in label distance; equal distances get
    equal probability, so duplicated labels share the row maximum.
    """
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.size < 2:
        raise DegenerateBatchError(f"label batch of size {y.size} has no neighbors")
    if not np.all(np.isfinite(y)):
        raise InputError("labels contain non-finite entries")
    return neighbor_softmax(pairwise_distance(y[:, None]))


def feature_otd(features) -> np.ndarray:
    """Neighbor distribution of a feature batch (rows of equal dimension)."""
    z = _as_matrix(features, "features")
    if z.shape[0] < 2:
        raise DegenerateBatchError(f"feature batch of size {z.shape[0]} has no neighbors")
    return neighbor_softmax(pairwise_distance(z))


def feature_otd_backward(features, upstream) -> np.ndarray:
    """Gradient of a scalar loss through :func:`feature_otd` to the features.

    ``upstream`` is dL/dQ with the same shape as the OTD matrix (diagonal
    entries are ignored).  Coincident rows (zero distance off the diagonal)
    contribute nothing through the norm, keeping the gradient finite.
    """
    z = _as_matrix(features, "features")
    n = z.shape[0]
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (n, n):
        raise InputError(f"upstream shape {g.shape} does not match OTD shape {(n, n)}")
    q = feature_otd(z)
    # Softmax backward per row: dL/d(-dist) restricted to the off-diagonal.
    inner = (g * q).sum(axis=1, keepdims=True)
    t = q * (g - inner)
    # dL/dDist entry (i, j) collects row i and row j softmax contributions.
    dist = pairwise_distance(z)
    w = -(t + t.T)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(dist > 0.0, w / dist, 0.0)
    return r.sum(axis=1, keepdims=True) * z - r @ z


def validate_otd(matrix: np.ndarray, zero_diagonal: bool = True, tol: float = ROW_SUM_TOL) -> None:
    """Assert the simplex invariants of an OTD matrix; raises InputError."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise InputError(f"OTD matrix must be 2-d, got shape {m.shape}")
    if np.any(m < 0.0) or np.any(m > 1.0):
        raise InputError("OTD entries must lie in [0, 1]")
    if np.abs(m.sum(axis=1) - 1.0).max() > tol:
        raise InputError(f"OTD rows must sum to 1 within {tol}")
    if zero_diagonal and m.shape[0] == m.shape[1] and np.any(np.diag(m) != 0.0):
        raise InputError("per-sample OTD diagonal must be exactly 0")


@dataclass(frozen=True)
class PropertyCheck:
    """Outcome of one order axiom: pass flag plus the first counterexample."""

    passed: bool
    counterexample: tuple | None = None


@dataclass(frozen=True)
class TosetReport:
    """Axiom-by-axiom verdict for a label set and its induced distance sets."""

    reflexive: PropertyCheck
    antisymmetric: PropertyCheck
    transitive: PropertyCheck
    comparable: PropertyCheck
    distance_sets_ordinal: PropertyCheck

    @property
    def passed(self) -> bool:
        return all(
            check.passed
            for check in (
                self.reflexive,
                self.antisymmetric,
                self.transitive,
                self.comparable,
                self.distance_sets_ordinal,
            )
        )


def _first_false(mask: np.ndarray) -> tuple | None:
    bad = np.argwhere(~mask)
    return tuple(int(i) for i in bad[0]) if bad.size else None


def check_toset(labels) -> TosetReport:
    """Verify the total-order axioms on a label batch.

    Checks reflexivity, antisymmetry, transitivity and comparability of <=
    on the label values, then the ordinal triple inequality
    ``|p - r| >= max(|p - q|, |q - r|)`` on every ordered triple of each
    sample's induced distance set {|y_i - y_j|}_j.  Report-only: never
    raises on content, only on malformed input.
    """
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.size < 1:
        raise InputError("label set must be nonempty")
    if not np.all(np.isfinite(y)):
        raise InputError("labels contain non-finite entries")
    n = y.size

    le = y[:, None] <= y[None, :]

    reflexive = PropertyCheck(bool(np.all(np.diag(le))), _first_false(np.diag(le)))

    anti_ok = ~(le & le.T) | (y[:, None] == y[None, :])
    antisymmetric = PropertyCheck(bool(np.all(anti_ok)), _first_false(anti_ok))

    # Transitivity: no pair (i, k) may be reachable through some j without
    # i <= k holding directly.
    reach = (le.astype(np.int64) @ le.astype(np.int64)) > 0
    trans_ok = ~reach | le
    transitive = PropertyCheck(bool(np.all(trans_ok)), _first_false(trans_ok))

    comp_ok = le | le.T
    comparable = PropertyCheck(bool(np.all(comp_ok)), _first_false(comp_ok))

    distance_sets_ordinal = _check_distance_sets(y)

    return TosetReport(reflexive, antisymmetric, transitive, comparable, distance_sets_ordinal)


def _triple_indices(n: int) -> np.ndarray:
    idx = np.array(list(combinations(range(n), 3)), dtype=np.int64)
    return idx.reshape(-1, 3)


def _check_distance_sets(y: np.ndarray) -> PropertyCheck:
    n = y.size
    if n < 3:
        return PropertyCheck(True, None)  # no triples: vacuously ordinal
    dist = np.abs(y[:, None] - y[None, :])
    triples = _triple_indices(n)
    for i in range(n):
        row = np.sort(dist[i])
        a, b, c = row[triples[:, 0]], row[triples[:, 1]], row[triples[:, 2]]
        span = c - a
        ok = (span >= (b - a)) & (span >= (c - b))
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            return PropertyCheck(False, (i, *map(int, triples[bad])))
    return PropertyCheck(True, None)


def ordinal_constraint_rate(features, labels) -> float:
    """Fraction of label-ordered triples whose feature distances respect the order.

    Indices are arranged by (label, index) so every unordered triple is
    counted exactly once with y_a <= y_b <= y_c; the triple is satisfied
    when ``|z_a - z_c| >= max(|z_a - z_b|, |z_b - z_c|)``.
    """
    z = _as_matrix(features, "features")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    n = z.shape[0]
    if y.size != n:
        raise InputError(f"{n} feature rows but {y.size} labels")
    if n < 3:
        raise DegenerateBatchError(f"need at least 3 samples for triples, got {n}")

    order = np.argsort(y, kind="stable")
    d = pairwise_distance(z[order])

    satisfied = 0
    for j in range(1, n - 1):
        left = d[:j, j]            # d(a, b) for a < b = j
        right = d[j, j + 1:]       # d(b, c) for c > b = j
        span = d[:j, j + 1:]       # d(a, c)
        needed = np.maximum(left[:, None], right[None, :])
        satisfied += int(np.count_nonzero(span >= needed))
    total = n * (n - 1) * (n - 2) // 6
    return satisfied / total
