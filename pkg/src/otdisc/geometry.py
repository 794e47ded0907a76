"""Domain charts: the ground cost ``g = d^k``, its gradient in the second
argument, and the projected point update used by the optimizer.

All cost/gradient routines broadcast over leading axes, so ``cost(x, y)``
works for single points as well as for ``(N, 1, d)`` against ``(1, m, d)``
stacks.  Three charts are provided:

* :class:`EuclideanBox` -- an axis-aligned box with the Euclidean metric.
* :class:`SwissRollStrip` -- the flat ``(s, z)`` strip isometric to a Swiss
  roll, where ``s`` is arc length along the spiral ``r = theta``.
* :class:`HemisphereChart` -- one hemisphere of the unit sphere seen through
  a stereographic projection onto the closed unit disc, carrying the
  great-circle metric.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SingularityError

MEMBER_TOL = 1e-12
_ANTIPODAL_TOL = 1e-9


def _as_tuple(v) -> tuple:
    return tuple(float(x) for x in np.atleast_1d(np.asarray(v, dtype=float)))


@dataclass(frozen=True)
class EuclideanBox:
    """Axis-aligned box ``[lower, upper]`` with cost ``|x - y|^exponent``.

    Bounds may be infinite, which gives an unbounded Euclidean chart.
    """

    lower: tuple
    upper: tuple
    exponent: float = 2.0
    kind = "euclidean-box"
    is_flat = True

    def __post_init__(self):
        object.__setattr__(self, "lower", _as_tuple(self.lower))
        object.__setattr__(self, "upper", _as_tuple(self.upper))
        if len(self.lower) != len(self.upper) or not self.lower:
            raise DomainError("lower and upper bounds must have the same, nonzero length")
        if any(not a < b for a, b in zip(self.lower, self.upper)):
            raise DomainError(f"degenerate box: lower={self.lower} upper={self.upper}")
        if not self.exponent >= 1:
            raise DomainError(f"exponent must be >= 1, got {self.exponent}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        ok = np.all((p >= self.lo - MEMBER_TOL) & (p <= self.hi + MEMBER_TOL), axis=-1)
        return ok & np.all(np.isfinite(p), axis=-1)

    def check(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if p.shape[-1] != self.dim:
            raise DomainError(f"expected points of dimension {self.dim}, got shape {p.shape}")
        bad = ~self.contains(p)
        if np.any(bad):
            raise DomainError(f"{int(np.sum(bad))} point(s) outside {self.kind} chart")
        return p

    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def restrict(self, lower, upper) -> "EuclideanBox":
        return EuclideanBox(lower, upper, self.exponent)

    def cost(self, x, y) -> np.ndarray:
        diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        r2 = np.sum(diff * diff, axis=-1)
        if self.exponent == 2.0:
            return r2
        return r2 ** (self.exponent / 2.0)

    def cost_grad_y(self, x, y) -> np.ndarray:
        diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        k = self.exponent
        if k == 2.0:
            return 2.0 * diff
        r = np.sqrt(np.sum(diff * diff, axis=-1, keepdims=True))
        if k == 1.0 and np.any(r == 0):
            raise SingularityError("gradient of |x - y| is undefined at x == y")
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(r > 0, k * r ** (k - 2.0), 0.0)
        return factor * diff

    def cost_matrix(self, xs, ys) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        return self.cost(xs[:, None, :], ys[None, :, :])

    def cost_grad_matrix(self, xs, ys) -> np.ndarray:
        """``(N, m, d)`` array of gradients of ``cost(xs[s], .)`` at ``ys[i]``."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        return self.cost_grad_y(xs[:, None, :], ys[None, :, :])

    def step(self, y, v) -> np.ndarray:
        """Apply displacement ``v`` to ``y`` and clamp into the box."""
        return np.clip(np.asarray(y, dtype=float) + np.asarray(v, dtype=float), self.lo, self.hi)

    def on_boundary(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.any((y <= self.lo) | (y >= self.hi), axis=-1)


# ---------------------------------------------------------------------------
# Swiss roll


def _arc_primitive(theta):
    theta = np.asarray(theta, dtype=float)
    return 0.5 * (theta * np.sqrt(1.0 + theta * theta) + np.arcsinh(theta))


def arc_length(theta, theta_min: float = math.pi) -> np.ndarray:
    """Arc length of the spiral ``r = theta`` measured from ``theta_min``."""
    return _arc_primitive(theta) - _arc_primitive(theta_min)


@functools.lru_cache(maxsize=32)
def _arc_table(theta_min: float, theta_max: float, size: int = 4097):
    thetas = np.linspace(theta_min, theta_max, size)
    return thetas, arc_length(thetas, theta_min)


def arc_length_inverse(s, theta_min: float = math.pi, theta_max: float = 4 * math.pi, tol: float = 1e-10):
    """Invert :func:`arc_length` by bisection inside a monotone lookup table."""
    s = np.asarray(s, dtype=float)
    thetas, table = _arc_table(float(theta_min), float(theta_max))
    if np.any(s < -MEMBER_TOL) or np.any(s > table[-1] + MEMBER_TOL):
        raise DomainError(f"arc length outside [0, {table[-1]:.6g}]")
    s = np.clip(s, 0.0, table[-1])
    idx = np.clip(np.searchsorted(table, s), 1, len(table) - 1)
    lo = thetas[idx - 1].copy()
    hi = thetas[idx].copy()
    while np.max(hi - lo, initial=0.0) > tol:
        mid = 0.5 * (lo + hi)
        below = arc_length(mid, theta_min) < s
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def swiss_embed(s, z, theta_min: float = math.pi, theta_max: float = 4 * math.pi) -> np.ndarray:
    """Map strip coordinates ``(s, z)`` to the Swiss roll in R^3."""
    theta = arc_length_inverse(s, theta_min, theta_max)
    z = np.broadcast_to(np.asarray(z, dtype=float), theta.shape)
    return np.stack([theta * np.cos(theta), theta * np.sin(theta), z], axis=-1)


@dataclass(frozen=True)
class SwissRollStrip(EuclideanBox):
    """Flat ``(s, z)`` chart of a Swiss roll.

    ``lower``/``upper`` are in strip coordinates; ``theta_min``/``theta_max``
    fix the roll parameter range used when embedding into R^3.
    """

    theta_min: float = math.pi
    theta_max: float = 4 * math.pi
    kind = "swiss-roll-strip"

    @classmethod
    def from_ranges(cls, theta_range=(math.pi, 4 * math.pi), z_range=(0.0, 1.0), exponent: float = 2.0):
        t0, t1 = (float(t) for t in theta_range)
        s_max = float(arc_length(t1, t0))
        return cls((0.0, z_range[0]), (s_max, z_range[1]), exponent, t0, t1)

    def restrict(self, lower, upper) -> "SwissRollStrip":
        return SwissRollStrip(lower, upper, self.exponent, self.theta_min, self.theta_max)

    def embed(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return swiss_embed(p[..., 0], p[..., 1], self.theta_min, self.theta_max)


# ---------------------------------------------------------------------------
# Sphere


def _pole_sign(pole: str) -> float:
    if pole == "north":
        return 1.0
    if pole == "south":
        return -1.0
    raise DomainError(f"pole must be 'north' or 'south', got {pole!r}")


def stereo_project(disc_points, pole: str = "north") -> np.ndarray:
    """Stereographic image of disc coordinates on the unit sphere.

    ``pole="north"`` projects from the north pole, so the disc covers the
    southern hemisphere and the origin maps to ``(0, 0, -1)``.
    """
    sign = _pole_sign(pole)
    p = np.asarray(disc_points, dtype=float)
    X, Y = p[..., 0], p[..., 1]
    r2 = X * X + Y * Y
    q = 1.0 + r2
    return np.stack([2 * X / q, 2 * Y / q, sign * (r2 - 1.0) / q], axis=-1)


def stereo_inverse(sphere_points, pole: str = "north") -> np.ndarray:
    """Inverse of :func:`stereo_project`; undefined at the projection pole."""
    sign = _pole_sign(pole)
    p = np.asarray(sphere_points, dtype=float)
    denom = 1.0 - sign * p[..., 2]
    return p[..., :2] / denom[..., None]


def _stereo_jacobian(disc_points, sign: float) -> np.ndarray:
    """``(..., 3, 2)`` Jacobian of the stereographic map."""
    p = np.asarray(disc_points, dtype=float)
    X, Y = p[..., 0], p[..., 1]
    q = 1.0 + X * X + Y * Y
    q2 = q * q
    J = np.empty(p.shape[:-1] + (3, 2))
    J[..., 0, 0] = 2 * (q - 2 * X * X) / q2
    J[..., 0, 1] = -4 * X * Y / q2
    J[..., 1, 0] = -4 * X * Y / q2
    J[..., 1, 1] = 2 * (q - 2 * Y * Y) / q2
    J[..., 2, 0] = sign * 4 * X / q2
    J[..., 2, 1] = sign * 4 * Y / q2
    return J


def sphere_distance(p, q) -> np.ndarray:
    """Great-circle distance between unit vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    for v in (p, q):
        if np.any(np.abs(np.linalg.norm(v, axis=-1) - 1.0) > 1e-9):
            raise DomainError("sphere_distance expects unit vectors")
    return np.arccos(np.clip(np.sum(p * q, axis=-1), -1.0, 1.0))


def _geodesic(p, q):
    """Stable great-circle distance plus the tangent of ``p`` at ``q``."""
    u = np.sum(p * q, axis=-1)
    cross = np.linalg.norm(np.cross(p, q), axis=-1)
    return np.arctan2(cross, u), u


@dataclass(frozen=True)
class HemisphereChart:
    """One open hemisphere viewed in stereographic disc coordinates.

    The chart domain is the closed unit disc intersected with the box
    ``[lower, upper]`` (the whole disc by default); the cost is the
    great-circle distance raised to ``exponent``.
    """

    pole: str = "north"
    lower: tuple = (-1.0, -1.0)
    upper: tuple = (1.0, 1.0)
    exponent: float = 2.0
    kind = "sphere-hemisphere"
    is_flat = False
    dim = 2

    def __post_init__(self):
        _pole_sign(self.pole)
        object.__setattr__(self, "lower", _as_tuple(self.lower))
        object.__setattr__(self, "upper", _as_tuple(self.upper))
        if len(self.lower) != 2 or len(self.upper) != 2:
            raise DomainError("hemisphere chart bounds must be 2-dimensional")
        if any(not a < b for a, b in zip(self.lower, self.upper)):
            raise DomainError(f"degenerate box: lower={self.lower} upper={self.upper}")
        if not self.exponent >= 1:
            raise DomainError(f"exponent must be >= 1, got {self.exponent}")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def sign(self) -> float:
        return _pole_sign(self.pole)

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        in_disc = np.sum(p * p, axis=-1) <= 1.0 + MEMBER_TOL
        in_box = np.all((p >= self.lo - MEMBER_TOL) & (p <= self.hi + MEMBER_TOL), axis=-1)
        return in_disc & in_box & np.all(np.isfinite(p), axis=-1)

    check = EuclideanBox.check

    def restrict(self, lower, upper) -> "HemisphereChart":
        return HemisphereChart(self.pole, lower, upper, self.exponent)

    def to_sphere(self, points) -> np.ndarray:
        return stereo_project(points, self.pole)

    def diameter(self) -> float:
        corners = np.array([[x, y] for x in (self.lower[0], self.upper[0]) for y in (self.lower[1], self.upper[1])])
        norms = np.linalg.norm(corners, axis=1, keepdims=True)
        corners = np.where(norms > 1.0, corners / np.maximum(norms, 1e-300), corners)
        pts = self.to_sphere(corners)
        d, _ = _geodesic(pts[:, None, :], pts[None, :, :])
        return float(np.max(d))

    def cost(self, x, y) -> np.ndarray:
        d, _ = _geodesic(self.to_sphere(x), self.to_sphere(y))
        return d**self.exponent

    def cost_grad_y(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        k = self.exponent
        p = self.to_sphere(x)
        q = self.to_sphere(y)
        p, q = np.broadcast_arrays(p, q)
        d, u = _geodesic(p, q)
        if k == 1.0 and np.any(d == 0):
            raise SingularityError("gradient of the geodesic distance is undefined at x == y")
        tangent = p - u[..., None] * q
        sin_d = np.sin(d)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(sin_d > 0, d / sin_d, 1.0)
            scale = np.where(d > 0, k * d ** (k - 2.0), 0.0 if k < 2 else k) * ratio
        J = _stereo_jacobian(np.broadcast_to(y, q.shape[:-1] + (2,)), self.sign)
        grad = -scale[..., None] * np.einsum("...ij,...i->...j", J, tangent)

        antipodal = (math.pi - d) < _ANTIPODAL_TOL
        if np.any(antipodal):
            # every direction descends at the same rate here; use the radial one
            yb = np.broadcast_to(y, grad.shape)
            r = np.linalg.norm(yb, axis=-1, keepdims=True)
            radial = np.where(r > 0, yb / np.where(r > 0, r, 1.0), np.array([1.0, 0.0]))
            conformal = 2.0 / (1.0 + r * r)
            special = k * math.pi ** (k - 1.0) * conformal * radial
            grad = np.where(antipodal[..., None], special, grad)
        return grad

    def cost_matrix(self, xs, ys) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        return self.cost(xs[:, None, :], ys[None, :, :])

    def cost_grad_matrix(self, xs, ys) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        return self.cost_grad_y(xs[:, None, :], ys[None, :, :])

    def step(self, y, v) -> np.ndarray:
        """Apply ``v`` then project onto the disc-and-box domain.

        Radial clamping to the disc is tried first; if the subsequent box clip
        pushes the point back outside the disc (possible only for restricted
        cells) the move is shortened along the segment from ``y`` instead.
        """
        y = np.asarray(y, dtype=float)
        target = y + np.asarray(v, dtype=float)
        norm = np.linalg.norm(target, axis=-1, keepdims=True)
        cand = np.where(norm > 1.0, target / np.maximum(norm, 1e-300), target)
        cand = np.clip(cand, self.lo, self.hi)
        bad = np.sum(cand * cand, axis=-1) > 1.0
        if np.any(bad):
            seg_end = np.clip(target, self.lo, self.hi)
            delta = seg_end - y
            a = np.sum(delta * delta, axis=-1)
            b = 2 * np.sum(y * delta, axis=-1)
            c = np.sum(y * y, axis=-1) - 1.0
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(a > 0, (-b + np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))) / (2 * a), 0.0)
            t = np.clip(t, 0.0, 1.0)
            fallback = y + t[..., None] * delta
            fnorm = np.linalg.norm(fallback, axis=-1, keepdims=True)
            fallback = np.where(fnorm > 1.0, fallback / fnorm, fallback)
            cand = np.where(bad[..., None], fallback, cand)
        return cand

    def on_boundary(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.sum(y * y, axis=-1) >= 1.0 - 1e-12


def chart_from_dict(cfg: dict):
    """Build a chart from a plain mapping (as found in run configs)."""
    kind = cfg.get("kind", "euclidean-box")
    k = float(cfg.get("exponent", 2.0))
    if kind == "euclidean-box":
        return EuclideanBox(cfg.get("lower", (0.0,)), cfg.get("upper", (1.0,)), k)
    if kind == "swiss-roll-strip":
        return SwissRollStrip.from_ranges(
            cfg.get("theta_range", (math.pi, 4 * math.pi)), cfg.get("z_range", (0.0, 1.0)), k
        )
    if kind == "sphere-hemisphere":
        return HemisphereChart(cfg.get("pole", "north"), exponent=k)
    raise DomainError(f"unknown chart kind {kind!r}")
