"""Prototype-constrained alignment of feature and label neighbor distributions.

The training objective asks each class's label-prototype row to equal the
mean of its members' feature rows.  Enforcing that equality directly is
brittle because the two distributions come from different domains, so the
constrained KL program is decomposed: one scalar multiplier per class
reweights both sides in closed form,

    p~[k, j] = p[k, j] * exp(-lam[c(j)]) / sum_s p[k, s] * exp(-lam[c(s)])
    q~[u, j] = q[u, j] * exp(+lam[c(j)]) / sum_s q[u, s] * exp(+lam[c(s)])

where c(j) is the class of batch column j.  These are exactly the
minimizers of the decomposed program's Lagrangian for fixed multipliers;
because one scalar per class cannot pin every column, the constraint the
dual optimum enforces is the class-mass aggregate (total probability each
row places on each class's columns, summed over prototype rows).  When an
instance admits a multiplier vector making the full per-column constraint
hold -- e.g. anything produced by :func:`random_dual_instance` with
``feasible=True`` -- the dual optimum recovers it and the per-column
residual vanishes as well.

:func:`oracle_solve` maximizes the dual by ascent with a Newton polish;
:func:`independent_solve` solves the same convex program with a
general-purpose constrained solver that never sees the closed forms.
Agreement between the two validates the column-class multiplier indexing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import (
    ConfigError,
    DegenerateBatchError,
    DivergenceOverflowError,
    InputError,
    NonFiniteLossError,
    OracleFailureError,
)
from .otd import neighbor_softmax, pairwise_distance, validate_otd

__all__ = [
    "ClassPartition",
    "DualVariables",
    "prototype_label_otd",
    "prototype_matrix",
    "reparam_p",
    "reparam_q",
    "batch_kl",
    "batch_kl_grad_q",
    "dual_kl_loss",
    "entropy_reg",
    "total_loss",
    "dual_backward",
    "DualGradients",
    "constraint_residual",
    "aggregate_gap",
    "oracle_solve",
    "independent_solve",
    "OracleSolution",
    "random_dual_instance",
    "DualInstance",
]


# ---------------------------------------------------------------------------
# Partition and multiplier containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassPartition:
    """Grouping of batch columns into the classes present in the batch.

    ``column_classes[j]`` is the global class index (0-based, < class_count)
    of batch column j; ``class_ids`` lists the distinct classes present in
    ascending order and ``groups`` the member columns of each.
    """

    column_classes: np.ndarray
    class_ids: np.ndarray = field(init=False)
    groups: tuple = field(init=False)

    def __post_init__(self):
        cols = np.asarray(self.column_classes, dtype=np.int64).reshape(-1)
        if cols.size < 1:
            raise InputError("partition needs at least one column")
        if np.any(cols < 0):
            raise ConfigError("column class ids must be nonnegative")
        object.__setattr__(self, "column_classes", cols)
        ids = np.unique(cols)
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(
            self, "groups", tuple(np.flatnonzero(cols == c) for c in ids)
        )

    @classmethod
    def from_labels(cls, labels, class_ranks) -> "ClassPartition":
        """Map labels onto the global rank vocabulary (exact match required)."""
        y = np.asarray(labels, dtype=np.float64).reshape(-1)
        ranks = np.asarray(class_ranks, dtype=np.float64).reshape(-1)
        idx = np.searchsorted(ranks, y)
        idx = np.clip(idx, 0, ranks.size - 1)
        if np.any(ranks[idx] != y):
            bad = y[ranks[idx] != y][0]
            raise ConfigError(f"label {bad} is not in the rank vocabulary")
        return cls(idx)

    @property
    def batch_size(self) -> int:
        return int(self.column_classes.size)

    @property
    def n_classes(self) -> int:
        """Number of distinct classes present in the batch."""
        return len(self.groups)

    def indicator(self) -> np.ndarray:
        """(batch_size, n_classes) 0/1 matrix: column j belongs to present class t."""
        e = np.zeros((self.batch_size, self.n_classes))
        for t, idx in enumerate(self.groups):
            e[idx, t] = 1.0
        return e


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass
class DualVariables:
    """One positive multiplier per global class, via softplus of a raw parameter."""

    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64).reshape(-1)
        if self.raw.size < 1:
            raise InputError("need at least one dual variable")

    @classmethod
    def initial(cls, class_count: int) -> "DualVariables":
        """All multipliers start at exactly 1."""
        if class_count < 1:
            raise InputError("class_count must be >= 1")
        return cls(np.full(class_count, float(np.log(np.expm1(1.0)))))

    @property
    def class_count(self) -> int:
        return int(self.raw.size)

    def values(self) -> np.ndarray:
        return _softplus(self.raw)

    def values_grad_raw(self) -> np.ndarray:
        """d(softplus)/d(raw), the chain factor for raw-parameter gradients."""
        return 1.0 / (1.0 + np.exp(-self.raw))


def _column_values(duals: DualVariables, partition: ClassPartition) -> np.ndarray:
    cols = partition.column_classes
    if np.any(cols >= duals.class_count):
        bad = int(cols[cols >= duals.class_count][0])
        raise ConfigError(
            f"column class {bad} outside the {duals.class_count} configured classes"
        )
    return duals.values()[cols]


# ---------------------------------------------------------------------------
# Prototype rows and closed-form reparameterizations
# ---------------------------------------------------------------------------


def prototype_label_otd(class_rank: float, batch_labels) -> np.ndarray:
    """Neighbor distribution of a virtual class representative over the batch.

    The prototype is not a batch element, so every one of the N_B columns
    participates in the normalization and no diagonal is zeroed.
    """
    y = np.asarray(batch_labels, dtype=np.float64).reshape(-1)
    if y.size < 2:
        raise DegenerateBatchError(f"prototype needs a batch of >= 2, got {y.size}")
    if not np.isfinite(class_rank) or not np.all(np.isfinite(y)):
        raise InputError("non-finite rank or labels")
    dist = np.abs(float(class_rank) - y)
    return neighbor_softmax(dist[None, :], exclude_diagonal=False)[0]


def prototype_matrix(partition: ClassPartition, class_ranks, batch_labels) -> np.ndarray:
    """Stack one prototype row per class present in the batch (partition order)."""
    ranks = np.asarray(class_ranks, dtype=np.float64).reshape(-1)
    return np.stack(
        [prototype_label_otd(ranks[c], batch_labels) for c in partition.class_ids]
    )


def _reweight_rows(matrix: np.ndarray, log_w: np.ndarray) -> np.ndarray:
    """Multiply columns by exp(log_w - max) and renormalize each row."""
    m = np.asarray(matrix, dtype=np.float64)
    w = np.exp(log_w - log_w.max())
    out = m * w
    sums = out.sum(axis=1, keepdims=True)
    if np.any(sums <= 0.0):
        raise InputError("reweighting annihilated a row; input row had no support")
    return out / sums


def reparam_p(prototype_rows, duals: DualVariables, partition: ClassPartition) -> np.ndarray:
    """Closed-form prototype reparameterization: columns scaled by exp(-lam[c(j)])."""
    p = np.asarray(prototype_rows, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.shape[1] != partition.batch_size:
        raise InputError(
            f"prototype rows have {p.shape[1]} columns, partition has {partition.batch_size}"
        )
    return _reweight_rows(p, -_column_values(duals, partition))


def reparam_q(q, duals: DualVariables, partition: ClassPartition) -> np.ndarray:
    """Closed-form feature reparameterization: columns scaled by exp(+lam[c(j)]).

    Zero entries (including the per-sample diagonal) stay exactly zero.
    """
    qm = np.asarray(q, dtype=np.float64)
    if qm.ndim != 2 or qm.shape[1] != partition.batch_size:
        raise InputError(
            f"feature OTD shape {qm.shape} does not match partition size {partition.batch_size}"
        )
    return _reweight_rows(qm, _column_values(duals, partition))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _row_kl(p: np.ndarray, q: np.ndarray) -> float:
    support = p > 0.0
    if np.any(q[support] <= 0.0):
        raise DivergenceOverflowError(
            "positive reference mass faces zero candidate mass (KL is infinite)"
        )
    ps = p[support]
    return float(np.sum(ps * np.log(ps / q[support])))


def batch_kl(p, q) -> float:
    """Mean KL divergence between matched rows of two row-stochastic matrices.

    Zero reference entries contribute nothing; a positive reference entry
    over a zero candidate entry raises :class:`DivergenceOverflowError`.
    """
    pm = np.asarray(p, dtype=np.float64)
    qm = np.asarray(q, dtype=np.float64)
    if pm.shape != qm.shape:
        raise InputError(f"shape mismatch {pm.shape} vs {qm.shape}")
    return float(np.mean([_row_kl(pm[i], qm[i]) for i in range(pm.shape[0])]))


def batch_kl_grad_q(p, q) -> np.ndarray:
    """Gradient of :func:`batch_kl` with respect to the candidate matrix."""
    pm = np.asarray(p, dtype=np.float64)
    qm = np.asarray(q, dtype=np.float64)
    if pm.shape != qm.shape:
        raise InputError(f"shape mismatch {pm.shape} vs {qm.shape}")
    support = pm > 0.0
    if np.any(qm[support] <= 0.0):
        raise DivergenceOverflowError("candidate matrix has zero mass on the reference support")
    grad = np.zeros_like(qm)
    np.divide(pm, qm, out=grad, where=support)
    return -grad / pm.shape[0]


def dual_kl_loss(
    p_tilde, q_tilde, partition: ClassPartition, exclude_self: bool = False
) -> float:
    """Class-averaged KL between each prototype row and its members' rows.

    ``exclude_self`` drops the member's own column from the pairing and
    renormalizes the prototype row over the remaining columns.  Training
    uses this form: a member's feature row carries no self-probability, so
    the raw pairing would always hit infinite divergence on that column.
    """
    pt = np.asarray(p_tilde, dtype=np.float64)
    qt = np.asarray(q_tilde, dtype=np.float64)
    if pt.ndim == 1:
        pt = pt[None, :]
    n_k = partition.n_classes
    if pt.shape != (n_k, partition.batch_size) or qt.shape[1] != partition.batch_size:
        raise InputError("matrices do not line up with the partition")

    total = 0.0
    for k, members in enumerate(partition.groups):
        inner = 0.0
        for u in members:
            if exclude_self:
                keep = np.ones(partition.batch_size, dtype=bool)
                keep[u] = False
                scale = 1.0 - pt[k, u]
                if scale <= 0.0:
                    raise DivergenceOverflowError(
                        "prototype row has all its mass on the excluded column"
                    )
                inner += _row_kl(pt[k, keep] / scale, qt[u, keep])
            else:
                inner += _row_kl(pt[k], qt[u])
        total += inner / len(members)
    return total / n_k


def entropy_reg(duals: DualVariables, present_classes) -> float:
    """Negative entropy -sum lam log lam over the classes present in the batch."""
    ids = np.unique(np.asarray(present_classes, dtype=np.int64).reshape(-1))
    if np.any(ids < 0) or np.any(ids >= duals.class_count):
        raise ConfigError("present class id outside the configured classes")
    lam = duals.values()[ids]
    return float(-np.sum(lam * np.log(lam)))


def total_loss(l_or: float, l_dual: float, l_ent: float, alpha: float, beta: float) -> float:
    """Combine the base ordinal loss with the weighted alignment terms."""
    value = float(l_or) + float(alpha) * float(l_dual) + float(beta) * float(l_ent)
    if not np.isfinite(value):
        raise NonFiniteLossError(
            f"total loss is not finite (l_or={l_or}, l_dual={l_dual}, l_ent={l_ent})"
        )
    return value


# ---------------------------------------------------------------------------
# Analytic gradients for the alignment terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualGradients:
    """Gradients of alpha*L_dual + beta*L_ent, plus the loss values themselves."""

    features: np.ndarray
    raw: np.ndarray
    loss_dual: float
    loss_entropy: float


def dual_backward(
    prototype_rows,
    features,
    duals: DualVariables,
    partition: ClassPartition,
    alpha: float,
    beta: float,
) -> DualGradients:
    """Gradient of ``alpha * dual_kl_loss(exclude_self=True) + beta * entropy_reg``.

    Differentiates through the feature OTD, its reparameterization and the
    prototype reparameterization; the entropy term touches only the raw
    dual parameters.  Matches central finite differences.
    """
    from .otd import feature_otd, feature_otd_backward

    z = np.asarray(features, dtype=np.float64)
    p = np.asarray(prototype_rows, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    n_b = partition.batch_size
    if z.shape[0] != n_b or p.shape != (partition.n_classes, n_b):
        raise InputError("prototype rows, features and partition do not line up")

    q = feature_otd(z)
    pt = reparam_p(p, duals, partition)
    qt = reparam_q(q, duals, partition)
    lam_cols = _column_values(duals, partition)
    n_k = partition.n_classes

    loss_dual = dual_kl_loss(pt, qt, partition, exclude_self=True)
    loss_ent = entropy_reg(duals, partition.class_ids)

    # Upstream gradients on the reparameterized matrices.
    g_pt = np.zeros_like(pt)
    g_qt = np.zeros_like(qt)
    for k, members in enumerate(partition.groups):
        coeff = 1.0 / (n_k * len(members))
        for u in members:
            keep = np.ones(n_b, dtype=bool)
            keep[u] = False
            scale = 1.0 - pt[k, u]
            p_hat = pt[k, keep] / scale
            support = p_hat > 0.0
            log_ratio = np.zeros_like(p_hat)
            log_ratio[support] = np.log(p_hat[support]) - np.log(qt[u, keep][support])
            kl_u = float(np.sum(p_hat[support] * log_ratio[support]))
            g_pt[k, keep] += coeff * (log_ratio - kl_u) / scale
            dq = np.zeros_like(p_hat)
            dq[support] = -p_hat[support] / qt[u, keep][support]
            g_qt[u, keep] += coeff * dq

    e = partition.indicator()  # (n_b, n_k): column j in present class t

    # Through reparam_q: column reweighting by w = exp(+lam) with row renorm.
    w_q = np.exp(lam_cols - lam_cols.max())
    zq = (q * w_q).sum(axis=1, keepdims=True)
    inner_q = (g_qt * qt).sum(axis=1, keepdims=True)
    g_q = (w_q / zq) * (g_qt - inner_q)
    # d qt[u, j] / d lam_t = qt[u, j] * (1[c(j) = t] - mass_t(qt[u]))
    h_q = g_qt * qt
    grad_lam_present = (h_q @ e).sum(axis=0)
    grad_lam_present -= (h_q.sum(axis=1)[:, None] * (qt @ e)).sum(axis=0)

    # Through reparam_p: column reweighting by exp(-lam) flips the sign.
    h_p = g_pt * pt
    grad_lam_present -= (h_p @ e).sum(axis=0)
    grad_lam_present += (h_p.sum(axis=1)[:, None] * (pt @ e)).sum(axis=0)

    grad_z = feature_otd_backward(z, g_q) * alpha
    grad_lam = np.zeros(duals.class_count)
    grad_lam[partition.class_ids] += alpha * grad_lam_present
    if beta != 0.0:
        lam_present = duals.values()[partition.class_ids]
        grad_lam[partition.class_ids] += beta * (-(np.log(lam_present) + 1.0))
    grad_raw = grad_lam * duals.values_grad_raw()

    return DualGradients(grad_z, grad_raw, loss_dual, loss_ent)


# ---------------------------------------------------------------------------
# Constraint diagnostics
# ---------------------------------------------------------------------------


def class_mass(matrix, partition: ClassPartition) -> np.ndarray:
    """Per-row probability mass on each present class's columns: (rows, n_classes)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    return m @ partition.indicator()


def constraint_residual(p_tilde, q_tilde, partition: ClassPartition) -> float:
    """Worst-class L1 gap between a prototype row and its members' mean row."""
    pt = np.asarray(p_tilde, dtype=np.float64)
    qt = np.asarray(q_tilde, dtype=np.float64)
    if pt.ndim == 1:
        pt = pt[None, :]
    if pt.shape != (partition.n_classes, partition.batch_size):
        raise InputError("prototype matrix does not line up with the partition")
    worst = 0.0
    for k, members in enumerate(partition.groups):
        gap = np.abs(pt[k] - qt[members].mean(axis=0)).sum()
        worst = max(worst, float(gap))
    return worst


def aggregate_gap(p_tilde, q_tilde, partition: ClassPartition) -> np.ndarray:
    """Class-mass form of the prototype constraint, summed over prototype rows.

    Component t is ``sum_k [mass_t(p~_k) - mean_{u in U(k)} mass_t(q~_u)]``;
    this is the constraint a single multiplier per class can enforce, and
    the dual gradient of :func:`oracle_solve` up to the 1/N_K scale.
    """
    mp = class_mass(p_tilde, partition)
    mq = class_mass(q_tilde, partition)
    gap = np.zeros(partition.n_classes)
    for k, members in enumerate(partition.groups):
        gap += mp[k] - mq[members].mean(axis=0)
    return gap


# ---------------------------------------------------------------------------
# Numerical oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleSolution:
    """Primal/dual solution of the decomposed program on one instance."""

    p_tilde: np.ndarray
    q_tilde: np.ndarray
    lam: np.ndarray
    objective: float
    aggregate_residual: float
    column_residual: float
    iterations: int


def _closed_forms(p: np.ndarray, q: np.ndarray, lam_cols: np.ndarray):
    pt = _reweight_rows(p, -lam_cols)
    qt = _reweight_rows(q, lam_cols)
    return pt, qt


def _program_objective(pt, qt, p, q, partition: ClassPartition) -> float:
    total = 0.0
    for k, members in enumerate(partition.groups):
        total += _row_kl(pt[k], p[k])
        total += float(np.mean([_row_kl(qt[u], q[u]) for u in members]))
    return total / partition.n_classes


def _dual_value(lam, p, q, partition: ClassPartition) -> tuple[float, np.ndarray]:
    lam_cols = lam[_local_index(partition)]
    pt, qt = _closed_forms(p, q, lam_cols)
    g = aggregate_gap(pt, qt, partition) / partition.n_classes
    value = _program_objective(pt, qt, p, q, partition) + float(lam @ g)
    return value, g


def _local_index(partition: ClassPartition) -> np.ndarray:
    """Map each column to the index of its class within ``partition.class_ids``."""
    lookup = {int(c): t for t, c in enumerate(partition.class_ids)}
    return np.array([lookup[int(c)] for c in partition.column_classes], dtype=np.int64)


def _dual_hessian(lam, p, q, partition: ClassPartition) -> np.ndarray:
    lam_cols = lam[_local_index(partition)]
    pt, qt = _closed_forms(p, q, lam_cols)
    mp = class_mass(pt, partition)
    mq = class_mass(qt, partition)
    n_k = partition.n_classes
    h = np.zeros((n_k, n_k))
    for k, members in enumerate(partition.groups):
        h += np.outer(mp[k], mp[k]) - np.diag(mp[k])
        mk = mq[members]
        h -= np.mean(
            [np.diag(row) - np.outer(row, row) for row in mk], axis=0
        )
    return h / n_k


def oracle_solve(
    prototype_rows,
    q,
    partition: ClassPartition,
    tol: float = 1e-10,
    max_iter: int = 5000,
) -> OracleSolution:
    """Solve the decomposed program by dual ascent with closed-form primal updates.

    Gradient ascent with backtracking brings the aggregate constraint gap
    near zero, then Newton steps on the (analytic) dual Hessian polish it to
    ``tol``.  The reported multipliers are shifted so their minimum is 1
    (shifting every multiplier by a constant leaves the primal unchanged).
    Raises :class:`OracleFailureError` when the gap is still above 1e-6
    after ``max_iter`` iterations.
    """
    p = np.asarray(prototype_rows, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    qm = np.asarray(q, dtype=np.float64)
    validate_otd(p, zero_diagonal=False)
    validate_otd(qm, zero_diagonal=False)
    if p.shape != (partition.n_classes, partition.batch_size):
        raise InputError("prototype matrix does not line up with the partition")
    if qm.shape != (partition.batch_size, partition.batch_size):
        raise InputError("feature OTD must be square over the batch")

    n_k = partition.n_classes
    lam = np.zeros(n_k)
    value, grad = _dual_value(lam, p, qm, partition)
    step = 1.0
    iters = 0

    while np.abs(grad).max() > tol and iters < max_iter:
        iters += 1
        newton_used = False
        if np.abs(grad).max() < 1e-3:
            h = _dual_hessian(lam, p, qm, partition)
            delta = -np.linalg.pinv(h, rcond=1e-12) @ grad
            cand = lam + delta
            cand_value, cand_grad = _dual_value(cand, p, qm, partition)
            if np.abs(cand_grad).max() < np.abs(grad).max():
                lam, value, grad = cand, cand_value, cand_grad
                newton_used = True
        if not newton_used:
            cand = lam + step * grad
            cand_value, cand_grad = _dual_value(cand, p, qm, partition)
            if cand_value >= value:
                lam, value, grad = cand, cand_value, cand_grad
                step *= 1.5
            else:
                step *= 0.5
                if step < 1e-16:
                    break

    gap = aggregate_gap(*_closed_forms(p, qm, lam[_local_index(partition)]), partition)
    if np.abs(gap).max() > 1e-6:
        raise OracleFailureError(
            f"dual ascent stalled after {iters} iterations",
            residual=float(np.abs(gap).max()),
        )

    lam_shifted = lam - lam.min() + 1.0
    pt, qt = _closed_forms(p, qm, lam_shifted[_local_index(partition)])
    return OracleSolution(
        p_tilde=pt,
        q_tilde=qt,
        lam=lam_shifted,
        objective=_program_objective(pt, qt, p, qm, partition),
        aggregate_residual=float(np.abs(gap).max()),
        column_residual=constraint_residual(pt, qt, partition),
        iterations=iters,
    )


def independent_solve(prototype_rows, q, partition: ClassPartition):
    """Solve the same program with scipy's constrained SLSQP solver.

    Works on the raw probability entries (over the support of the inputs)
    with explicit simplex and class-mass equality constraints, starting
    from uniform rows.  Returns ``(p_tilde, q_tilde, objective)``.
    """
    p = np.asarray(prototype_rows, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    qm = np.asarray(q, dtype=np.float64)
    mask_p = p > 0.0
    mask_q = qm > 0.0
    n_p = int(mask_p.sum())
    n_k = partition.n_classes

    def unpack(x):
        pt = np.zeros_like(p)
        qt = np.zeros_like(qm)
        pt[mask_p] = x[:n_p]
        qt[mask_q] = x[n_p:]
        return pt, qt

    def fun(x):
        pt, qt = unpack(x)
        return _program_objective(pt, qt, p, qm, partition)

    def jac(x):
        pt, qt = unpack(x)
        gp = np.zeros_like(p)
        gp[mask_p] = (np.log(pt[mask_p] / p[mask_p]) + 1.0) / n_k
        gq = np.zeros_like(qm)
        for members in partition.groups:
            rows = np.zeros(qm.shape[0], dtype=bool)
            rows[members] = True
            sel = mask_q & rows[:, None]
            gq[sel] = (np.log(qt[sel] / qm[sel]) + 1.0) / (n_k * len(members))
        return np.concatenate([gp[mask_p], gq[mask_q]])

    constraints = []
    for r in range(p.shape[0]):
        constraints.append(
            {"type": "eq", "fun": (lambda x, r=r: unpack(x)[0][r].sum() - 1.0)}
        )
    for r in range(qm.shape[0]):
        constraints.append(
            {"type": "eq", "fun": (lambda x, r=r: unpack(x)[1][r].sum() - 1.0)}
        )
    for t in range(n_k - 1):  # the gaps sum to zero, so one is redundant
        constraints.append(
            {"type": "eq", "fun": (lambda x, t=t: aggregate_gap(*unpack(x), partition)[t])}
        )

    p0 = mask_p / mask_p.sum(axis=1, keepdims=True)
    q0 = mask_q / mask_q.sum(axis=1, keepdims=True)
    x0 = np.concatenate([p0[mask_p], q0[mask_q]])
    bounds = [(1e-12, 1.0)] * x0.size

    result = optimize.minimize(
        fun,
        x0,
        jac=jac,
        method="SLSQP",
        bounds=bounds,
        constraints=constraints,
        options={"maxiter": 1500, "ftol": 1e-14},
    )
    if not result.success:
        raise OracleFailureError(f"independent solver failed: {result.message}")
    pt, qt = unpack(result.x)
    return pt, qt, float(result.fun)


# ---------------------------------------------------------------------------
# Instance generation for oracle validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualInstance:
    """A tiny alignment program instance, optionally with its known optimum."""

    prototype_rows: np.ndarray
    q: np.ndarray
    partition: ClassPartition
    expected_p_tilde: np.ndarray | None = None
    expected_q_tilde: np.ndarray | None = None
    expected_lam: np.ndarray | None = None


def _random_partition(rng: np.random.Generator, batch_size: int, class_count: int):
    cols = rng.integers(0, class_count, size=batch_size)
    cols[rng.permutation(batch_size)[:class_count]] = np.arange(class_count)
    return ClassPartition(cols)


def random_dual_instance(
    rng: np.random.Generator,
    batch_size: int,
    class_count: int,
    feasible: bool = True,
) -> DualInstance:
    """Draw a random tiny instance of the decomposed program.

    ``feasible=True`` builds the instance backwards from a target primal
    satisfying the full per-column prototype constraint and a random
    multiplier vector, so the dual optimum is known to recover both.  With
    ``feasible=False`` the rows are label/feature neighbor distributions of
    random draws, where only the class-mass constraint is enforceable.
    """
    if not (2 <= class_count <= batch_size):
        raise InputError("need 2 <= class_count <= batch_size")
    partition = _random_partition(rng, batch_size, class_count)

    if feasible:
        q_target = rng.uniform(0.2, 1.0, size=(batch_size, batch_size))
        np.fill_diagonal(q_target, 0.0)
        q_target /= q_target.sum(axis=1, keepdims=True)
        p_target = np.stack([q_target[g].mean(axis=0) for g in partition.groups])
        lam0 = rng.uniform(0.3, 2.0, size=class_count)
        lam_cols = lam0[_local_index(partition)]
        p = _reweight_rows(p_target, +lam_cols)
        q = _reweight_rows(q_target, -lam_cols)
        return DualInstance(p, q, partition, p_target, q_target, lam0)

    ranks = np.arange(1.0, class_count + 1.0)
    labels = ranks[partition.column_classes]
    features = rng.normal(size=(batch_size, 3)) + labels[:, None]
    dist = pairwise_distance(features)
    q = neighbor_softmax(dist)
    p = np.stack([prototype_label_otd(ranks[c], labels) for c in partition.class_ids])
    return DualInstance(p, q, partition)
