"""Sinkhorn solver for entropy-regularized transport between two discrete
measures, stabilized in the log domain and finished by Newton steps on the
target potential.

The plan is parameterized by dual potentials as::

    pi[s, i] = a[s] * b[i] * exp((alpha[s] + beta[i] - G[s, i]) / zeta)

and potentials are returned in the gauge ``beta[-1] == 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scipy import linalg

from .errors import ConvergenceError, InputError

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
WEIGHT_SUM_TOL = 1e-12
# scalings outside [1/SCALE_LIMIT, SCALE_LIMIT] are folded into the potentials
SCALE_LIMIT = 1e30
# Sinkhorn sweeps before switching to Newton steps, and the largest target
# size for which the (m-1) x (m-1) Newton system is formed
NEWTON_AFTER = 50
NEWTON_MAX_DIM = 3000
NEWTON_MAX_STEPS = 300
NEWTON_MAX_STEP = 100.0


@dataclass
class DiscreteMeasure:
    """Weighted atoms ``sum_i weights[i] * delta(positions[i])``."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.positions.shape[0] != self.weights.shape[0]:
            raise InputError(
                f"{self.positions.shape[0]} positions but {self.weights.shape[0]} weights"
            )

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def validate(self, chart=None, tol: float = WEIGHT_SUM_TOL) -> "DiscreteMeasure":
        if not np.all(np.isfinite(self.positions)):
            raise InputError("non-finite atom position")
        if np.any(~(self.weights > 0)):
            raise InputError("atom weights must be strictly positive")
        if abs(self.weights.sum() - 1.0) > tol:
            raise InputError(f"weights sum to {self.weights.sum():.17g}, expected 1")
        if chart is not None:
            chart.check(self.positions)
        return self

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))


@dataclass
class SampleBatch:
    """``N`` i.i.d. samples standing for the continuous measure, weight ``1/N`` each."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] < 1:
            raise InputError("a sample batch needs at least one point")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)

    def as_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.points, self.weights)


@dataclass
class DualPotentials:
    alpha: np.ndarray
    beta: np.ndarray


@dataclass
class TransportPlan:
    """Nonnegative coupling with its prescribed marginals.

    ``violation`` is the L1 marginal error at exit and ``history`` the
    per-iteration violations (only when the solver was asked to record them).
    """

    masses: np.ndarray
    source_weights: np.ndarray
    target_weights: np.ndarray
    violation: float = 0.0
    n_iter: int = 0
    history: list | None = field(default=None, repr=False)

    def marginal_violation(self) -> float:
        rows = np.abs(self.masses.sum(axis=1) - self.source_weights).sum()
        cols = np.abs(self.masses.sum(axis=0) - self.target_weights).sum()
        return float(max(rows, cols))


def _check_weights(w, name) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InputError(f"{name} must be a nonempty vector")
    if np.any(~(w > 0)):
        raise InputError(f"{name} must be strictly positive")
    if abs(w.sum() - 1.0) > 1e-9:
        raise InputError(f"{name} sums to {w.sum():.17g}, expected 1")
    return w


def _lse_rows(x):
    mx = x.max(axis=1)
    return mx + np.log(np.exp(x - mx[:, None]).sum(axis=1))


def _lse_cols(x):
    mx = x.max(axis=0)
    return mx + np.log(np.exp(x - mx[None, :]).sum(axis=0))


def _iterate_log(K, log_a, log_b, g, tol, max_iter, history):
    f = -_lse_rows(K + (log_b + g)[None, :])
    violation = np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        # rows are exact after each f-update; the column error of the current
        # iterate falls out of the next g-update for free
        g_next = -_lse_cols(K + (log_a + f)[:, None])
        violation = float(np.sum(np.exp(log_b) * np.abs(np.expm1(g - g_next))))
        if history is not None:
            history.append(violation)
        if violation <= tol:
            break
        g = g_next
        f = -_lse_rows(K + (log_b + g)[None, :])
    return f, g, violation, n_iter


def _out_of_range(x) -> bool:
    # NaN fails both comparisons, inf fails the first
    return not (x.max() < SCALE_LIMIT and x.min() > 1.0 / SCALE_LIMIT)


def _iterate_scaling(K, log_a, log_b, g, tol, max_iter, history):
    """Same recursion as :func:`_iterate_log`, run as matrix-vector scalings.

    The kernel is ``exp(K + f + g)`` for the last absorbed potentials, and
    ``u = exp(df)``, ``v = exp(dg)`` carry the updates since then.  When a
    scaling leaves the safe range it is folded into ``f``/``g`` with an exact
    log-domain step and the kernel is rebuilt.
    """
    a, b = np.exp(log_a), np.exp(log_b)

    def rebuild(g):
        f = -_lse_rows(K + (log_b + g)[None, :])
        return f, np.exp(K + f[:, None] + g[None, :])

    f, E = rebuild(g)
    u, v = np.ones(a.size), np.ones(b.size)
    violation = np.inf
    n_iter = 0
    with np.errstate(divide="ignore", over="ignore"):
        for n_iter in range(1, max_iter + 1):
            v_next = 1.0 / (E.T @ (a * u))
            if _out_of_range(v_next):
                f, g = f + np.log(u), g + np.log(v)
                g_next = -_lse_cols(K + (log_a + f)[:, None])
                violation = float(np.sum(b * np.abs(np.expm1(g - g_next))))
                u, v = np.ones(a.size), np.ones(b.size)
                if history is not None:
                    history.append(violation)
                if violation <= tol:
                    break
                f, E = rebuild(g_next)
                g = g_next
                continue
            violation = float(np.sum(b * np.abs(v / v_next - 1.0)))
            if history is not None:
                history.append(violation)
            if violation <= tol:
                break
            v = v_next
            u = 1.0 / (E @ (b * v))
            if _out_of_range(u):
                g = g + np.log(v)
                f, E = rebuild(g)
                u, v = np.ones(a.size), np.ones(b.size)
    return f + np.log(u), g + np.log(v), violation, n_iter


def schur_complement(P, row_mass=None):
    """``F = diag(D) - B^T diag(1/A) B`` for the dual Hessian of a plan.

    ``A``/``D`` are the plan's row and column sums and ``B`` drops the pinned
    last column.  With ``W = P^T diag(1/A) P`` the same matrix is
    ``F[j, k] = -W[j, k]`` off the diagonal and ``F[j, j] = sum_{k != j}
    W[j, k]`` (the pinned column included), which avoids the cancellation
    in ``D - diag(W)`` when rows are concentrated on one atom.  Returns ``F``
    and its dominance margin ``W[:-1, -1]``.
    """
    A = P.sum(axis=1) if row_mass is None else row_mass
    W = P.T @ (P / A[:, None])
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    F = -W[:-1, :-1]
    F[np.diag_indices_from(F)] = W[:-1].sum(axis=1)
    return F, W[:-1, -1].copy()


def _newton(K, log_a, log_b, g, tol, max_steps, history):
    """Newton iteration on the target potential with the source side eliminated.

    The Jacobian of the target marginal with respect to ``g`` (last entry
    pinned) is the matrix of :func:`schur_complement`.  Steps are clipped to
    ``NEWTON_MAX_STEP`` in every coordinate and halved until the combined
    row and column L1 error drops; counting the rows guards against steps that
    only look good because ``f + g`` lost precision.  Stops early, at the
    best point reached, when no step makes progress.
    """
    a, b = np.exp(log_a), np.exp(log_b)

    def state(g):
        f = -_lse_rows(K + (log_b + g)[None, :])
        P = np.exp(K + (f + log_a)[:, None] + (g + log_b)[None, :])
        c = P.sum(axis=0)
        err = float(np.abs(c - b).sum() + np.abs(P.sum(axis=1) - a).sum())
        return f, P, c, err if np.isfinite(err) else np.inf

    f, P, c, violation = state(g)
    steps = 0
    while violation > tol and steps < max_steps:
        F, _ = schur_complement(P)
        try:
            delta = linalg.cho_solve(linalg.cho_factor(F, lower=True), b[:-1] - c[:-1])
        except (linalg.LinAlgError, ValueError):
            break
        # clipping per coordinate keeps nearly decoupled atoms from
        # swamping the step of the others
        delta = np.clip(np.append(delta, 0.0), -NEWTON_MAX_STEP, NEWTON_MAX_STEP)
        t = 1.0
        while True:
            trial = state(g + t * delta)
            if trial[3] < violation:
                break
            t *= 0.5
            if t < 1e-8:
                return f, g, violation, steps
        g = g + t * delta
        f, P, c, violation = trial
        steps += 1
        if history is not None:
            history.append(violation)
    return f, g, violation, steps


def sinkhorn_solve(
    cost_matrix,
    src_w,
    tgt_w,
    zeta: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init_beta=None,
    record: bool = False,
):
    """Solve the entropic transport problem between two weight vectors.

    Parameters
    ----------
    cost_matrix : (N, m) array
        Ground cost between source and target atoms.
    src_w, tgt_w : arrays of shape (N,) and (m,)
        Strictly positive weights, each summing to one.
    zeta : float
        Entropic regularization strength.
    tol : float
        Target L1 violation of the target marginal (the source marginal is
        matched to rounding after every sweep).
    init_beta : array of shape (m,), optional
        Warm start for the target potential.
    record : bool
        Keep the per-iteration violation history on the returned plan.

    Returns
    -------
    (DualPotentials, TransportPlan)
    """
    G = np.asarray(cost_matrix, dtype=float)
    if G.ndim != 2:
        raise InputError(f"cost matrix must be 2-D, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        raise InputError("cost matrix has non-finite entries")
    a = _check_weights(src_w, "source weights")
    b = _check_weights(tgt_w, "target weights")
    if G.shape != (a.size, b.size):
        raise InputError(f"cost matrix shape {G.shape} does not match weights {(a.size, b.size)}")
    if not zeta > 0:
        raise InputError(f"zeta must be positive, got {zeta}")

    log_a = np.log(a)
    log_b = np.log(b)
    K = -G / zeta
    beta = np.zeros(b.size) if init_beta is None else np.array(init_beta, dtype=float)
    history = [] if record else None

    # alpha/zeta and beta/zeta are carried as f and g to avoid repeated scaling
    g = beta / zeta
    g = g - g.max()
    first = min(max_iter, NEWTON_AFTER) if b.size <= NEWTON_MAX_DIM else max_iter
    f, g, violation, n_iter = _iterate_scaling(K, log_a, log_b, g, tol, first, history)
    if violation > tol and n_iter < max_iter:
        f, g, violation, steps = _newton(K, log_a, log_b, g, tol, NEWTON_MAX_STEPS, history)
        n_iter += steps
        if violation > tol and n_iter < max_iter:
            # Newton stalled; fall back to plain sweeps from the best point so far
            f, g, violation, more = _iterate_scaling(K, log_a, log_b, g, tol, max_iter - n_iter, history)
            n_iter += more
    if not violation <= tol:
        raise ConvergenceError(
            f"Sinkhorn did not reach tol={tol:g} in {max_iter} iterations "
            f"(violation {violation:.3e})",
            violation=violation,
            n_iter=max_iter,
        )

    shift = g[-1]
    f = f + shift
    g = g - shift
    potentials = DualPotentials(alpha=f * zeta, beta=g * zeta)
    potentials.beta[-1] = 0.0
    masses = np.exp(K + f[:, None] + g[None, :] + log_a[:, None] + log_b[None, :])
    plan = TransportPlan(masses, a, b, violation=violation, n_iter=n_iter, history=history)
    return potentials, plan


def eot_cost(plan: TransportPlan, cost_matrix) -> float:
    """Transport cost ``<G, pi>`` of a plan, excluding the entropy term."""
    G = np.asarray(cost_matrix, dtype=float)
    if G.shape != plan.masses.shape:
        raise InputError(f"cost shape {G.shape} != plan shape {plan.masses.shape}")
    return float(np.sum(plan.masses * G))


def entropic_cost(chart, source: DiscreteMeasure, target: DiscreteMeasure, zeta: float, **kw) -> float:
    """``W_{k,zeta}^k`` between two discrete measures on ``chart``."""
    G = chart.cost_matrix(source.positions, target.positions)
    _, plan = sinkhorn_solve(G, source.weights, target.weights, zeta, **kw)
    return eot_cost(plan, G)
