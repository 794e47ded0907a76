"""Adaptive kd-style cell refinement.

A sample set is split recursively at box midpoints until every cell's atom
budget is at most ``m_star``.  Each cell is then discretized independently
(optionally in parallel) and the per-cell measures are recombined with the
cell masses as weights.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import CellFailures, InputError, OTDiscError, PathologicalInputError
from .geometry import EuclideanBox, HemisphereChart
from .sgd import SgdConfig, discretize, resampling_sampler
from .sinkhorn import DiscreteMeasure

logger = logging.getLogger(__name__)

MAX_DEPTH = 64
MASS_TOL = 1e-12


@dataclass
class Subproblem:
    """One refinement cell.

    ``mass`` is kept as an exact fraction so budget and mass bookkeeping can
    be checked without rounding; ``p`` is its float value.
    """

    samples: np.ndarray
    m: int
    mass: Fraction
    lower: np.ndarray
    upper: np.ndarray
    zeta: float
    index: int = 0
    depth: int = 0
    chart: object | None = field(default=None, repr=False)

    @property
    def p(self) -> float:
        return float(self.mass)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "depth": self.depth,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "n_samples": int(self.samples.shape[0]),
            "m": self.m,
            "mass": str(self.mass),
            "p": self.p,
            "zeta": self.zeta,
        }


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _round_half_down(x: float) -> int:
    return math.ceil(x - 0.5)


def split_budget(n1: int, n2: int, m: int, d: int, k: float) -> tuple[int, int]:
    """Share ``m`` atoms between two sibling cells holding ``n1`` and ``n2`` samples.

    The share of each child grows like ``N^(d/(k+d))``.  Rounding half up for
    the first child and half down for the second keeps ``m1 + m2 == m``.
    """
    if n1 + n2 == 0:
        raise InputError("cannot split budget between two empty cells")
    e = d / (k + d)
    a, b = float(n1) ** e, float(n2) ** e
    f = a / (a + b)
    m1 = _round_half_up(m * f)
    m2 = _round_half_down(m * (1.0 - f))
    # guard against a representable-but-unlucky m*f landing on both sides of .5
    if m1 + m2 != m:
        m2 = m - m1
    return m1, m2


def _cell_chart(chart, lower, upper, k):
    if chart is None:
        return EuclideanBox(tuple(lower), tuple(upper), k)
    return chart.restrict(tuple(lower), tuple(upper))


def refine(
    samples,
    m: int,
    m_star: int,
    lower,
    upper,
    k: float = 2.0,
    zeta0: float = 0.01,
    chart=None,
    splits: list | None = None,
) -> list[Subproblem]:
    """Depth-first midpoint refinement of a sample set.

    Parameters
    ----------
    samples : (N0, d) array
    m : total atom budget
    m_star : largest budget allowed in an emitted cell
    lower, upper : bounds of the root box
    k : cost exponent (sets both the budget rule and the cell regularizer)
    zeta0 : regularizer for a unit-diameter cell; a cell of diameter D gets
        ``zeta0 * D**k``
    chart : optional box-like chart; cells are ``chart.restrict(a, b)``
    splits : optional list; every split appends a dict with the parent and
        child sample counts, budgets and masses

    Returns
    -------
    list of Subproblem in emission order.  A root with ``m <= m_star`` is
    returned as a single unsplit cell.
    """
    S = np.atleast_2d(np.asarray(samples, dtype=float))
    lo = np.asarray(lower, dtype=float).ravel()
    hi = np.asarray(upper, dtype=float).ravel()
    if S.shape[0] == 0 or S.size == 0:
        raise InputError("refine needs a nonempty sample set")
    if S.shape[1] != lo.size or lo.shape != hi.shape:
        raise InputError(f"samples are {S.shape[1]}-D but bounds are {lo.size}-D")
    if np.any(lo >= hi):
        raise InputError("lower bounds must be strictly below upper bounds")
    if int(m) != m or m < 1 or int(m_star) != m_star or m_star < 1:
        raise InputError("m and m_star must be positive integers")
    if S.shape[0] < m:
        raise InputError(f"need at least m={m} samples, got {S.shape[0]}")
    if np.any(S < lo) or np.any(S > hi):
        raise InputError("samples fall outside the root bounds")
    d = lo.size
    N0 = S.shape[0]
    out: list[Subproblem] = []

    def emit(S_i, m_i, mass, a, b, depth):
        cell_chart = _cell_chart(chart, a, b, k)
        zeta = cell_chart.diameter() ** k * zeta0
        out.append(Subproblem(S_i, int(m_i), mass, a, b, zeta, len(out), depth, cell_chart))

    if m <= m_star:
        emit(S, m, Fraction(1), lo, hi, 0)
        return out

    stack = [(S, int(m), Fraction(1), lo, hi, 0)]
    while stack:
        S_p, m_p, mass, a, b, depth = stack.pop()
        if depth >= MAX_DEPTH:
            raise PathologicalInputError(
                f"refinement exceeded depth {MAX_DEPTH}; samples are too concentrated to split"
            )
        if S_p.shape[0] == 0 or np.all(S_p == S_p[0]):
            raise PathologicalInputError(
                f"a cell with budget {m_p} > {m_star} holds {S_p.shape[0]} distinct sample(s) and cannot be split"
                if S_p.shape[0] <= 1 else
                f"a cell with budget {m_p} > {m_star} holds only coincident samples and cannot be split"
            )
        width = b - a
        l = int(np.argmax(width))  # first maximal axis on ties
        mid = 0.5 * (a[l] + b[l])
        left = S_p[:, l] <= mid
        S1, S2 = S_p[left], S_p[~left]
        n1, n2 = S1.shape[0], S2.shape[0]
        m1, m2 = split_budget(n1, n2, m_p, d, k)
        if m1 == 0:
            p1, p2 = Fraction(0), mass
        elif m2 == 0:
            p1, p2 = mass, Fraction(0)
        else:
            p1, p2 = mass * Fraction(n1, n1 + n2), mass * Fraction(n2, n1 + n2)
        if splits is not None:
            splits.append({"axis": l, "n": (S_p.shape[0], n1, n2), "m": (m_p, m1, m2), "mass": (mass, p1, p2)})
        a1, b1 = a.copy(), b.copy()
        b1[l] = mid
        a2, b2 = a.copy(), b.copy()
        a2[l] = mid
        children = ((S1, m1, p1, a1, b1), (S2, m2, p2, a2, b2))
        # pushing in reverse keeps the left child first in depth-first order
        for S_i, m_i, p_i, a_i, b_i in children[::-1]:
            if m_i > m_star:
                stack.append((S_i, m_i, p_i, a_i, b_i, depth + 1))
        for S_i, m_i, p_i, a_i, b_i in children:
            if 0 < m_i <= m_star:
                emit(S_i, m_i, p_i, a_i, b_i, depth + 1)
    # emission order above interleaves depths; renumber by position
    for i, sub in enumerate(out):
        sub.index = i
    logger.debug("refined %d samples into %d cells", N0, len(out))
    return out


def cell_seed(master_seed: int, index: int) -> int:
    """Stable per-cell seed, independent of scheduling."""
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _solve_cell(sub: Subproblem, cfg: SgdConfig, master_seed: int):
    cell_cfg = dataclasses.replace(cfg, m=sub.m, zeta=sub.zeta, seed=cell_seed(master_seed, sub.index))
    chart = sub.chart if sub.chart is not None else EuclideanBox(tuple(sub.lower), tuple(sub.upper), cfg.k)
    try:
        measure, _ = discretize(resampling_sampler(sub.samples), chart, cell_cfg)
    except OTDiscError as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return measure, None


def solve_all(subproblems: list[Subproblem], cfg: SgdConfig, master_seed: int = 0, workers: int = 1):
    """Discretize every cell; returns ``[(Subproblem, DiscreteMeasure), ...]`` in input order.

    Cells resample from their own sample set with ``zeta = cell.zeta``.  If
    any cell fails, :class:`CellFailures` is raised after all cells finish,
    carrying both the failures and the successful results.
    """
    if workers < 1:
        raise InputError("workers must be >= 1")
    if workers == 1 or len(subproblems) <= 1:
        outcomes = [_solve_cell(s, cfg, master_seed) for s in subproblems]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_solve_cell, s, cfg, master_seed) for s in subproblems]
            outcomes = [f.result() for f in futures]

    results, failures = [], []
    for sub, (measure, err) in zip(subproblems, outcomes):
        if err is None:
            results.append((sub, measure))
        else:
            failures.append((sub.index, err))
    if failures:
        raise CellFailures(failures, results)
    return results


def combine(solved) -> DiscreteMeasure:
    """Concatenate per-cell measures, weighting cell ``i`` by its mass."""
    if not solved:
        raise InputError("nothing to combine")
    total = sum(float(sub.mass) for sub, _ in solved)
    if abs(total - 1.0) > MASS_TOL:
        raise InputError(f"cell masses sum to {total:.17g}, expected 1")
    positions = np.concatenate([mu.positions for _, mu in solved], axis=0)
    weights = np.concatenate([float(sub.mass) * mu.weights for sub, mu in solved])
    return DiscreteMeasure(positions, weights)


def split_sphere(points) -> list[tuple[str, np.ndarray, Fraction]]:
    """Assign unit vectors to the two hemisphere charts.

    Points with ``z <= 0`` go to the chart centred on ``(0, 0, -1)``
    (``pole='north'``), the rest to the other one.  Returns
    ``[(pole, disc_coordinates, mass), ...]`` for nonempty hemispheres.
    """
    from .geometry import stereo_inverse

    P = np.atleast_2d(np.asarray(points, dtype=float))
    n = P.shape[0]
    out = []
    for pole, sel in (("north", P[:, 2] <= 0), ("south", P[:, 2] > 0)):
        cnt = int(sel.sum())
        if cnt:
            disc = stereo_inverse(P[sel], pole)
            # points on the equator map to r = 1 up to rounding; pull them onto the disc
            r = np.linalg.norm(disc, axis=1)
            disc[r > 1] /= r[r > 1, None]
            out.append((pole, disc, Fraction(cnt, n)))
    return out


def discretize_sphere(points, m: int, cfg: SgdConfig, master_seed: int = 0, workers: int = 1):
    """Discretize a spherical sample with one subproblem per hemisphere chart.

    The budget is shared with :func:`split_budget` (``d = 2``).  Returns the
    combined measure as unit vectors in R^3 and the per-hemisphere results.
    """
    parts = split_sphere(points)
    if len(parts) == 1:
        budgets = [m]
    else:
        budgets = list(split_budget(parts[0][1].shape[0], parts[1][1].shape[0], m, 2, cfg.k))
    subs = []
    for (pole, disc, mass), mi in zip(parts, budgets):
        chart = HemisphereChart(pole=pole, exponent=cfg.k)
        if mi == 0:
            continue
        subs.append(Subproblem(disc, mi, mass, chart.lo, chart.hi, cfg.zeta, len(subs), 0, chart))
    if sum(s.m for s in subs) != m:
        raise InputError("hemisphere budgets do not add up")
    # a dropped hemisphere hands its mass to the other one
    if len(subs) == 1:
        subs[0].mass = Fraction(1)
    solved = solve_all(subs, cfg, master_seed, workers)
    lifted = [(sub, DiscreteMeasure(sub.chart.to_sphere(mu.positions), mu.weights)) for sub, mu in solved]
    return combine(lifted), solved
