"""Scoring discretizations: grid-based extrapolated transport costs, naive
i.i.d. baselines and percentile comparisons.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError
from .geometry import EuclideanBox
from .sinkhorn import DiscreteMeasure, eot_cost, sinkhorn_solve

GRID_TOL = 1e-13
DEFAULT_LADDER = (200, 400, 800, 1600)
PERCENTILES = (5, 25, 50, 75, 95)


def grid_measure(density, lower, upper, n: int) -> DiscreteMeasure:
    """Cell-midpoint grid on a box, weighted by the normalized density.

    ``n`` is the total number of points; in ``d`` dimensions each axis gets
    ``round(n ** (1/d))`` of them.
    """
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lo.size
    per_axis = int(round(n ** (1.0 / d)))
    if per_axis < 1:
        raise InputError(f"grid size {n} too small")
    axes = [lo[l] + (np.arange(per_axis) + 0.5) * (hi[l] - lo[l]) / per_axis for l in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    dens = np.asarray(density(pts), dtype=float).reshape(-1)
    if np.any(dens < 0) or not np.all(np.isfinite(dens)):
        raise InputError("density must be finite and nonnegative")
    total = dens.sum()
    if not total > 1e-300:
        raise InputError("density integrates to zero on the box")
    keep = dens > 0
    return DiscreteMeasure(pts[keep], dens[keep] / total)


def sharp_cost(chart, source: DiscreteMeasure, target: DiscreteMeasure, zeta: float,
               tol: float = GRID_TOL, max_iter: int = 100_000) -> float:
    G = chart.cost_matrix(source.positions, target.positions)
    _, plan = sinkhorn_solve(G, source.weights, target.weights, zeta, tol=tol, max_iter=max_iter)
    return eot_cost(plan, G)


def richardson_extrapolate(w_n: float, w_rn: float, r: float, h: float) -> float:
    """Remove the leading ``N^-h`` error term from two grid estimates."""
    q = r**h
    return (q * w_rn - w_n) / (q - 1.0)


@dataclass
class RichardsonEstimate:
    w_star: float
    h: float
    slope_hat: float
    N: int
    r: int
    w_n: float
    w_rn: float
    ladder: list = field(default_factory=list)
    differences: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _fit_slope(ns, diffs) -> float:
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.abs(np.asarray(diffs, dtype=float)))
    if x.size < 2 or not np.all(np.isfinite(y)):
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def richardson(density, target: DiscreteMeasure, chart, zeta: float, k: float | None = None,
               N: int = 400, r: int = 2, ladder=DEFAULT_LADDER, tol: float = GRID_TOL) -> RichardsonEstimate:
    """Extrapolated ``W_{k,zeta}^k`` between a density on ``chart`` and ``target``.

    The estimate uses grids of ``N`` and ``r*N`` points.  ``slope_hat`` is the
    fitted exponent of ``|W(rN') - W(N')|`` against ``N'`` over ``ladder``;
    it should be close to ``-k/d``.
    """
    if int(r) != r or r < 2:
        raise InputError(f"r must be an integer >= 2, got {r}")
    k = chart.exponent if k is None else k
    d = chart.dim
    h = k / d
    cache: dict[int, float] = {}

    def w_at(n):
        if n not in cache:
            cache[n] = sharp_cost(chart, grid_measure(density, chart.lo, chart.hi, n), target, zeta, tol)
        return cache[n]

    w_n, w_rn = w_at(N), w_at(r * N)
    ladder = list(ladder or [])
    diffs = [w_at(r * n) - w_at(n) for n in ladder]
    slope = _fit_slope(ladder, diffs) if len(ladder) >= 2 else float("nan")
    return RichardsonEstimate(richardson_extrapolate(w_n, w_rn, r, h), h, slope, N, int(r), w_n, w_rn, ladder, diffs)


@dataclass
class RichardsonEvaluator:
    """Callable scoring a measure by the extrapolated cost to a density.

    Grid measures are built once and reused across calls.
    """

    density: object
    chart: object
    zeta: float
    N: int = 400
    r: int = 2
    tol: float = GRID_TOL

    def __post_init__(self):
        self._grids = None

    def _ensure(self):
        if self._grids is None:
            self._grids = (grid_measure(self.density, self.chart.lo, self.chart.hi, self.N),
                           grid_measure(self.density, self.chart.lo, self.chart.hi, self.r * self.N))
        return self._grids

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_grids"] = None
        return state

    def __call__(self, measure: DiscreteMeasure) -> float:
        g1, g2 = self._ensure()
        w_n = sharp_cost(self.chart, g1, measure, self.zeta, self.tol)
        w_rn = sharp_cost(self.chart, g2, measure, self.zeta, self.tol)
        return richardson_extrapolate(w_n, w_rn, self.r, self.chart.exponent / self.chart.dim)


@dataclass
class ReferenceEvaluator:
    """Callable scoring a measure by its sharp cost to a fixed reference measure."""

    reference: DiscreteMeasure
    chart: object
    zeta: float
    tol: float = 1e-10

    def __call__(self, measure: DiscreteMeasure) -> float:
        return sharp_cost(self.chart, self.reference, measure, self.zeta, self.tol)


def nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile: the smallest value with at least ``q``% of data at or below it."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise InputError("no values")
    idx = max(int(math.ceil(q / 100.0 * v.size)) - 1, 0)
    return float(v[idx])


@dataclass
class BaselineSummary:
    sizes: list
    values: dict
    seed: int = 0

    @property
    def trials(self) -> int:
        return min(len(v) for v in self.values.values())

    def percentiles(self, size: int) -> dict:
        vals = self._get(size)
        return {q: nearest_rank(vals, q) for q in PERCENTILES}

    def _get(self, size):
        if size not in self.values:
            raise InputError(f"size {size} not in baseline (have {sorted(self.values)})")
        return self.values[size]

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "seed": self.seed,
            "values": {str(s): list(map(float, v)) for s, v in self.values.items()},
            "percentiles": {str(s): {f"p{q}": x for q, x in self.percentiles(s).items()} for s in self.sizes},
        }

    def percentile_rows(self):
        """``(size, p5, p25, p50, p75, p95)`` rows for plotting."""
        return [(s, *self.percentiles(s).values()) for s in self.sizes]


def trial_seed(seed: int, size: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(size), int(trial)])


def _run_trial(sampler, size, ss, evaluator):
    rng = np.random.default_rng(ss)
    pts = np.atleast_2d(np.asarray(sampler(size, rng), dtype=float))
    if pts.shape[0] != size:
        pts = pts.reshape(size, -1)
    return evaluator(DiscreteMeasure.uniform(pts))


def _run_chunk(sampler, evaluator, jobs):
    return [_run_trial(sampler, size, ss, evaluator) for size, ss in jobs]


def naive_baseline(sampler, sizes, trials: int, evaluator, seed: int = 0, min_trials: int = 30,
                   workers: int = 1) -> BaselineSummary:
    """Score ``trials`` equal-weight i.i.d. samples of every size in ``sizes``.

    Trial ``t`` of size ``s`` uses its own seed derived from ``(seed, s, t)``
    so results do not depend on ``workers``.
    """
    if trials < 1:
        raise InputError("trials must be >= 1")
    if trials < min_trials:
        raise InputError(f"{trials} trials is below the minimum of {min_trials} (lower min_trials to allow)")
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes):
        raise InputError("sizes must be positive")
    jobs = [(s, trial_seed(seed, s, t)) for s in sizes for t in range(trials)]
    if workers <= 1:
        flat = _run_chunk(sampler, evaluator, jobs)
    else:
        chunks = [jobs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [sampler] * workers, [evaluator] * workers, chunks))
        flat = [None] * len(jobs)
        for i, part in enumerate(parts):
            flat[i::workers] = part
    values = {s: flat[i * trials:(i + 1) * trials] for i, s in enumerate(sizes)}
    return BaselineSummary(sizes, values, seed)


def compare(edot_w: float, baseline: BaselineSummary, size: int) -> float:
    """Fraction of baseline trials of ``size`` whose cost exceeds ``edot_w``."""
    vals = np.asarray(baseline._get(int(size)), dtype=float)
    return float(np.mean(vals > edot_w))


def moving_average(values, window: int = 50) -> np.ndarray:
    """Trailing-window means (``len(values) - window + 1`` entries)."""
    v = np.asarray(values, dtype=float)
    if window < 1 or window > v.size:
        raise InputError(f"window {window} invalid for {v.size} values")
    c = np.cumsum(np.r_[0.0, v])
    return (c[window:] - c[:-window]) / window


def convergence_curve(trace, window: int = 50) -> np.ndarray:
    """Smoothed batch cost against step index from an SGD trace."""
    return moving_average([rec.w for rec in trace], window)


def default_box_chart(lower, upper, k: float = 2.0) -> EuclideanBox:
    return EuclideanBox(tuple(np.atleast_1d(lower)), tuple(np.atleast_1d(upper)), k)
