"""Transport plans between two discretized measures, and tools to score them.

Plans are compared as measures on the product space ``X x Y`` with the
additive cost ``d_X^k + d_Y^k``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputError, UnsupportedChartError
from .sinkhorn import DiscreteMeasure, TransportPlan, eot_cost, sinkhorn_solve

logger = logging.getLogger(__name__)

DROP_MASS = 1e-12


@dataclass(frozen=True)
class ProductChart:
    """``X x Y`` with cost ``d_X^k(x1, x2) + d_Y^k(y1, y2)``.

    Points are concatenated coordinates ``(x..., y...)``.
    """

    x_chart: object
    y_chart: object

    @property
    def split(self) -> int:
        return self.x_chart.dim

    @property
    def dim(self) -> int:
        return self.x_chart.dim + self.y_chart.dim

    def cost(self, z1, z2) -> np.ndarray:
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        s = self.split
        return self.x_chart.cost(z1[..., :s], z2[..., :s]) + self.y_chart.cost(z1[..., s:], z2[..., s:])

    def cost_matrix(self, zs, zt) -> np.ndarray:
        zs = np.atleast_2d(np.asarray(zs, dtype=float))
        zt = np.atleast_2d(np.asarray(zt, dtype=float))
        s = self.split
        return self.x_chart.cost_matrix(zs[:, :s], zt[:, :s]) + self.y_chart.cost_matrix(zs[:, s:], zt[:, s:])


def product_cost(pc: ProductChart, p1, p2) -> float:
    """Cost between ``p1 = (x1, y1)`` and ``p2 = (x2, y2)`` given as pairs."""
    (x1, y1), (x2, y2) = p1, p2
    pc.x_chart.check(np.atleast_2d(x1))
    pc.x_chart.check(np.atleast_2d(x2))
    pc.y_chart.check(np.atleast_2d(y1))
    pc.y_chart.check(np.atleast_2d(y2))
    return float(pc.x_chart.cost(np.asarray(x1, float), np.asarray(x2, float))
                 + pc.y_chart.cost(np.asarray(y1, float), np.asarray(y2, float)))


@dataclass
class PlanProblem:
    """Two discrete measures and the regularizers used to couple and score them.

    ``lam`` regularizes the plan itself, ``zeta`` the transport costs used to
    score it, and ``rho`` weighs the plan term in :func:`omega`.  ``lam``
    defaults to ``zeta``.  ``cost(xs, ys)`` returns the coupling cost matrix;
    when omitted both measures must share a chart and its cost is used.
    """

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    x_chart: object
    y_chart: object
    zeta: float = 0.01
    lam: float | None = None
    rho: float = 1.0
    cost: object | None = None

    def __post_init__(self):
        if self.lam is None:
            self.lam = self.zeta
        if not self.lam > 0 or not self.zeta > 0:
            raise InputError("lam and zeta must be positive")
        if not self.rho >= 0:
            raise InputError("rho must be nonnegative")

    @property
    def product(self) -> ProductChart:
        return ProductChart(self.x_chart, self.y_chart)


def eot_plan(prob: PlanProblem, **kw) -> TransportPlan:
    """Entropic plan between ``prob.mu`` and ``prob.nu`` at regularizer ``prob.lam``.

    Plans between few atoms at small ``lam`` can need many sweeps, so the
    iteration cap defaults to 100000.
    """
    kw.setdefault("max_iter", 100_000)
    prob.mu.validate(prob.x_chart, tol=1e-9)
    prob.nu.validate(prob.y_chart, tol=1e-9)
    if prob.cost is not None:
        G = np.asarray(prob.cost(prob.mu.positions, prob.nu.positions), dtype=float)
    else:
        G = _cross_cost(prob.x_chart, prob.y_chart, prob.mu.positions, prob.nu.positions)
    _, plan = sinkhorn_solve(G, prob.mu.weights, prob.nu.weights, prob.lam, **kw)
    return plan


def _cross_cost(x_chart, y_chart, xs, ys):
    # coupling cost between the two marginals: they live on the same space here
    if x_chart != y_chart:
        raise InputError("plan cost needs both measures on the same chart")
    return x_chart.cost_matrix(xs, ys)


def plan_measure(plan: TransportPlan, xs, ys, max_atoms: int | None = None, seed: int = 0) -> DiscreteMeasure:
    """View a plan as a measure on the product space.

    Entries of mass below ``DROP_MASS`` (relative to the largest one) are
    discarded.  If more than ``max_atoms`` remain, the plan is replaced by
    ``max_atoms`` multinomial draws from it with duplicate atoms merged; the
    seed makes this deterministic.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    P = plan.masses
    keep = np.flatnonzero(P.ravel() > DROP_MASS * P.max())
    mass = P.ravel()[keep]
    if max_atoms is not None and keep.size > max_atoms:
        rng = np.random.default_rng(seed)
        counts = rng.multinomial(max_atoms, mass / mass.sum())
        sel = counts > 0
        keep, mass = keep[sel], counts[sel].astype(float)
    i, j = np.unravel_index(keep, P.shape)
    Z = np.concatenate([xs[i], ys[j]], axis=1)
    return DiscreteMeasure(Z, mass / mass.sum())


def product_distance(pc: ProductChart, a: DiscreteMeasure, b: DiscreteMeasure, zeta: float, **kw) -> float:
    """Sharp entropic cost between two measures on the product chart."""
    kw.setdefault("max_iter", 100_000)
    G = pc.cost_matrix(a.positions, b.positions)
    _, plan = sinkhorn_solve(G, a.weights, b.weights, zeta, **kw)
    return eot_cost(plan, G)


def _marginal_cost(chart, ref: DiscreteMeasure, m: DiscreteMeasure, zeta: float, **kw) -> float:
    G = chart.cost_matrix(ref.positions, m.positions)
    _, plan = sinkhorn_solve(G, ref.weights, m.weights, zeta, **kw)
    return eot_cost(plan, G)


@dataclass
class OmegaReport:
    mu_term: float
    nu_term: float
    plan_term: float
    rho: float

    @property
    def value(self) -> float:
        if self.rho == 0:
            return self.mu_term + self.nu_term
        return self.mu_term + self.nu_term + self.rho * self.plan_term

    def to_dict(self) -> dict:
        return {"mu_term": self.mu_term, "nu_term": self.nu_term, "plan_term": self.plan_term,
                "rho": self.rho, "omega": self.value}


def omega(prob: PlanProblem, ref_mu: DiscreteMeasure, ref_nu: DiscreteMeasure, ref_plan: TransportPlan,
          plan: TransportPlan | None = None, max_ref_atoms: int | None = 20_000, seed: int = 0,
          **kw) -> OmegaReport:
    """Marginal costs plus ``rho`` times the plan-to-plan cost.

    ``ref_plan`` couples ``ref_mu`` and ``ref_nu`` and stands in for the plan
    between the continuous marginals.  With ``rho == 0`` the plan term is
    skipped and reported as ``nan``.
    """
    mu_term = _marginal_cost(prob.x_chart, ref_mu, prob.mu, prob.zeta, **kw)
    nu_term = _marginal_cost(prob.y_chart, ref_nu, prob.nu, prob.zeta, **kw)
    if prob.rho == 0:
        return OmegaReport(mu_term, nu_term, float("nan"), 0.0)
    plan = eot_plan(prob, **kw) if plan is None else plan
    ref = plan_measure(ref_plan, ref_mu.positions, ref_nu.positions, max_ref_atoms, seed)
    ours = plan_measure(plan, prob.mu.positions, prob.nu.positions)
    plan_term = product_distance(prob.product, ref, ours, prob.zeta, **kw)
    return OmegaReport(mu_term, nu_term, plan_term, prob.rho)


@dataclass
class Prop1Report:
    """Outcome of the lower-bound check.

    ``lhs_max`` is the larger of the two (nearly unregularized) marginal
    costs, ``middle`` the entropic cost between the reference plan and the
    plan of the discretizations, and ``rhs_sum`` the sum of the entropic
    marginal costs.  ``ratio = middle / rhs_sum`` is an empirical lower
    estimate of the constant in the matching upper bound, which is not
    checked.
    """

    lhs_max: float
    middle: float
    rhs_sum: float
    holds: bool

    @property
    def ratio(self) -> float:
        return self.middle / self.rhs_sum if self.rhs_sum > 0 else float("inf")

    def to_dict(self) -> dict:
        return {"lhs_max": self.lhs_max, "middle": self.middle, "rhs_sum": self.rhs_sum,
                "ratio": self.ratio, "holds": self.holds}


def prop1_check(ref_mu: DiscreteMeasure, ref_nu: DiscreteMeasure, mu_m: DiscreteMeasure, nu_n: DiscreteMeasure,
                chart, lam: float, zeta: float, zeta_sharp: float = 1e-3, rtol: float = 1e-8,
                **kw) -> Prop1Report:
    """Check that the plan cost dominates both marginal transport costs.

    The marginal costs on the left are sharp costs at the small regularizer
    ``zeta_sharp``.  ``holds`` allows a relative slack ``rtol`` for the
    solver's marginal tolerance.
    """
    kw.setdefault("max_iter", 100_000)
    left = max(_marginal_cost(chart, ref_mu, mu_m, zeta_sharp, **kw),
               _marginal_cost(chart, ref_nu, nu_n, zeta_sharp, **kw))
    pc = ProductChart(chart, chart)
    big = eot_plan(PlanProblem(ref_mu, ref_nu, chart, chart, zeta, lam), **kw)
    small = eot_plan(PlanProblem(mu_m, nu_n, chart, chart, zeta, lam), **kw)
    middle = product_distance(pc, plan_measure(big, ref_mu.positions, ref_nu.positions),
                              plan_measure(small, mu_m.positions, nu_n.positions), zeta, **kw)
    rhs = (_marginal_cost(chart, ref_mu, mu_m, zeta, **kw) + _marginal_cost(chart, ref_nu, nu_n, zeta, **kw))
    return Prop1Report(left, middle, rhs, bool(left <= middle * (1 + rtol) + 1e-15))


def mccann_interpolate(plan: TransportPlan, mu_m: DiscreteMeasure, nu_n: DiscreteMeasure, t: float,
                       chart=None) -> DiscreteMeasure:
    """Displacement interpolation: mass ``pi_ij`` placed at ``(1-t) x_i + t y_j``.

    Entries below ``DROP_MASS`` are dropped and the rest renormalized;
    coinciding atoms are merged.
    """
    if chart is not None and not getattr(chart, "is_flat", False):
        raise UnsupportedChartError(f"displacement interpolation needs a flat chart, got {chart.kind}")
    if not 0.0 <= t <= 1.0:
        raise InputError(f"t must lie in [0, 1], got {t}")
    P = plan.masses
    x = mu_m.positions
    y = nu_n.positions
    i, j = np.nonzero(P >= DROP_MASS)
    mass = P[i, j]
    lost = float(P.sum() - mass.sum())
    if lost > 0:
        logger.debug("McCann slice dropped %.3e of mass", lost)
    pts = (1.0 - t) * x[i] + t * y[j]
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    w = np.bincount(inv.ravel(), weights=mass, minlength=uniq.shape[0])
    return DiscreteMeasure(uniq, w / w.sum())
