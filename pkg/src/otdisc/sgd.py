"""Minibatch SGD with heavy-ball momentum over atom positions and weights."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConvergenceError, DegenerateInputError, InputError, OTDiscError
from .gradient import compute_gradient
from .sinkhorn import DiscreteMeasure

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-6
DEGENERATE_PATIENCE = 50
SOLVER_FAILURE_PATIENCE = 20
EQUATOR_PATIENCE = 100


@dataclass
class SgdConfig:
    m: int
    k: float = 2.0
    zeta: float = 0.01
    batch_size: int = 100
    eps: float = 1e-4
    momentum: float = 0.2
    lr_decay: float = 0.2
    lr0: float = 0.5
    position_lr_ratio: float = 3.0
    max_steps: int = 6000
    seed: int = 0
    sinkhorn_tol: float = 1e-9
    sinkhorn_max_iter: int = 10_000

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise InputError(f"m must be a positive integer, got {self.m}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise InputError(f"batch_size must be a positive integer, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise InputError(f"momentum must lie in [0, 1), got {self.momentum}")
        for name in ("zeta", "eps", "lr0", "position_lr_ratio", "sinkhorn_tol"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr_decay < 0:
            raise InputError(f"lr_decay must be nonnegative, got {self.lr_decay}")
        if not self.k >= 1:
            raise InputError(f"k must be >= 1, got {self.k}")
        if self.max_steps < 1:
            raise InputError(f"max_steps must be positive, got {self.max_steps}")
        self.m = int(self.m)
        self.batch_size = int(self.batch_size)


@dataclass
class TraceRecord:
    step: int
    w: float
    grad_x: float
    grad_w: float
    wall_time: float

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(t: int, lr0: float = 0.5, decay: float = 0.2) -> float:
    return lr0 / math.sqrt(1.0 + decay * t)


def simplex_project(w, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Euclidean projection onto ``{w >= floor, sum(w) = 1}``."""
    w = np.asarray(w, dtype=float)
    m = w.size
    if m == 1:
        return np.ones(1)
    if floor * m >= 1:
        raise InputError(f"floor {floor} infeasible for {m} weights")
    if np.all(w >= floor) and abs(w.sum() - 1.0) <= 1e-15:
        return w.copy()
    total = 1.0 - m * floor
    v = w - floor
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, m + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0) + floor


def _draw(sampler, n, rng, chart) -> np.ndarray:
    try:
        pts = np.asarray(sampler(n, rng), dtype=float)
    except OTDiscError:
        raise
    except Exception as exc:
        raise InputError(f"sampler failed: {exc}") from exc
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] != n:
        raise InputError(f"sampler returned {pts.shape[0]} points, expected {n}")
    return chart.check(pts)


def init_measure(sampler, m: int, seed, chart=None) -> DiscreteMeasure:
    """``m`` atoms drawn from the sampler itself, uniform weights."""
    if m < 1:
        raise InputError("m must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if chart is None:
        pts = np.atleast_2d(np.asarray(sampler(m, rng), dtype=float))
        if pts.shape[0] != m:
            pts = pts.reshape(m, -1)
    else:
        pts = _draw(sampler, m, rng, chart)
    return DiscreteMeasure(pts, np.full(m, 1.0 / m))


def discretize(sampler, chart, cfg: SgdConfig, init: DiscreteMeasure | None = None, check_invariants: bool = False):
    """Optimize an ``m``-atom measure against fresh minibatches from ``sampler``.

    ``sampler(n, rng)`` must return ``n`` chart points as an ``(n, d)`` array.
    Returns the final :class:`DiscreteMeasure` and the list of
    :class:`TraceRecord` (one per step).
    """
    if abs(cfg.k - chart.exponent) > 0:
        raise InputError(f"config exponent {cfg.k} differs from chart exponent {chart.exponent}")
    rng = np.random.default_rng(cfg.seed)
    measure = init_measure(sampler, cfg.m, rng, chart)
    if init is not None:
        measure = DiscreteMeasure(chart.check(init.positions).copy(), simplex_project(init.weights))
    y = measure.positions.copy()
    w = measure.weights.copy()
    m, d = y.shape

    Dx = np.zeros_like(y)
    Dw = np.zeros_like(w)
    beta = None
    degenerate_run = 0
    any_healthy = m == 1
    failures = 0
    boundary_run = np.zeros(m, dtype=int)
    watch_boundary = getattr(chart, "kind", "") == "sphere-hemisphere"
    trace = []
    t0 = time.perf_counter()

    for t in range(1, cfg.max_steps + 1):
        batch = _draw(sampler, cfg.batch_size, rng, chart)
        if m > 1 and np.unique(batch, axis=0).shape[0] < m:
            degenerate_run += 1
            if degenerate_run >= DEGENERATE_PATIENCE:
                raise DegenerateInputError(
                    f"{DEGENERATE_PATIENCE} consecutive batches had fewer than m={m} distinct points"
                )
        else:
            degenerate_run = 0
            any_healthy = True

        try:
            report, potentials, _ = compute_gradient(
                chart, batch, y, w, cfg.zeta,
                tol=cfg.sinkhorn_tol, max_iter=cfg.sinkhorn_max_iter, init_beta=beta,
            )
        except ConvergenceError as exc:
            failures += 1
            logger.warning("step %d: skipping batch, %s", t, exc)
            beta = None
            if failures >= SOLVER_FAILURE_PATIENCE:
                raise
            continue
        failures = 0
        beta = potentials.beta

        gx, gw = report.dW_dy, report.dW_dw
        Dx = cfg.momentum * Dx + gx
        Dw = cfg.momentum * Dw + gw
        eta = learning_rate(t, cfg.lr0, cfg.lr_decay)
        y = chart.step(y, -eta * cfg.position_lr_ratio * Dx)
        w = simplex_project(w - eta * Dw)

        if watch_boundary:
            boundary_run = np.where(chart.on_boundary(y), boundary_run + 1, 0)
            for i in np.nonzero(boundary_run == EQUATOR_PATIENCE + 1)[0]:
                logger.warning("atom %d has sat on the equator for %d steps", i, EQUATOR_PATIENCE)

        if check_invariants:
            DiscreteMeasure(y, w).validate(chart)

        nx = float(np.linalg.norm(gx))
        nw = float(np.linalg.norm(gw))
        trace.append(TraceRecord(t, report.w_value, nx, nw, time.perf_counter() - t0))
        if math.hypot(nx, nw) < cfg.eps:
            break

    if not any_healthy:
        raise DegenerateInputError(f"every batch had fewer than m={m} distinct points")
    return DiscreteMeasure(y, w), trace


def resampling_sampler(points):
    """Sampler drawing with replacement from a fixed point set."""
    points = np.atleast_2d(np.asarray(points, dtype=float))

    def sample(n, rng):
        return points[rng.integers(0, points.shape[0], size=n)]

    return sample
