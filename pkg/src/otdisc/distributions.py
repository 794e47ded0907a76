"""Seedable benchmark distributions: samplers and normalized densities.

Truncated normals use the mean/std of the *parent* normal; the truncation
constant is the Gaussian CDF mass of the box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import InputError, PathologicalInputError
from .geometry import arc_length, arc_length_inverse, stereo_inverse, stereo_project
from .sinkhorn import SampleBatch

KINDS = (
    "uniform-box",
    "truncnorm-mixture-1d",
    "truncnorm-mixture-2d",
    "swiss-roll-mixture",
    "sphere-stereo-mixture",
    "point-mass",
)
MIN_ACCEPTANCE = 1e-3


@dataclass
class DistributionSpec:
    """Parameters of one distribution.

    ``means``/``stds`` are ``(components, d)`` arrays.  For the Swiss roll the
    mixture lives on the ``(theta, z)`` plane with ``lower``/``upper`` its box;
    samples are returned in arc-length strip coordinates ``(s, z)``.  The
    sphere mixture is an untruncated planar mixture pushed through the
    north-pole stereographic map; samples are unit vectors in R^3.
    """

    kind: str
    weights: list = field(default_factory=lambda: [1.0])
    means: list = field(default_factory=list)
    stds: list = field(default_factory=list)
    lower: list = field(default_factory=lambda: [0.0])
    upper: list = field(default_factory=lambda: [1.0])
    point: list | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown distribution kind {self.kind!r}")
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.kind == "point-mass":
            if self.point is None:
                raise InputError("point-mass needs a point")
            self.point = np.atleast_1d(np.asarray(self.point, dtype=float))
            return
        if self.lower.shape != self.upper.shape or np.any(self.lower >= self.upper):
            if self.kind != "sphere-stereo-mixture":
                raise InputError("invalid box bounds")
        if self.kind == "uniform-box":
            return
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InputError("mixture weights must be positive and sum to 1")
        c = self.weights.size
        self.means = np.asarray(self.means, dtype=float).reshape(c, -1)
        self.stds = np.asarray(self.stds, dtype=float).reshape(c, -1)
        if self.means.shape != self.stds.shape:
            raise InputError("means and stds must have the same shape")
        if np.any(self.stds <= 0):
            raise InputError("standard deviations must be positive")
        expected = {"truncnorm-mixture-1d": 1}.get(self.kind, 2)
        if self.means.shape[1] != expected:
            raise InputError(f"{self.kind} needs {expected}-dimensional components")

    @property
    def dim(self) -> int:
        if self.kind == "point-mass":
            return self.point.size
        if self.kind == "sphere-stereo-mixture":
            return 3
        if self.kind == "uniform-box":
            return self.lower.size
        return self.means.shape[1]

    @classmethod
    def from_dict(cls, cfg: dict) -> "DistributionSpec":
        cfg = dict(cfg)
        preset = cfg.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise InputError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            base = dict(PRESETS[preset])
            base.update(cfg)
            cfg = base
        return cls(**cfg)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in ("weights", "means", "stds", "lower", "upper", "point"):
            v = getattr(self, name)
            if v is not None:
                out[name] = np.asarray(v).tolist()
        return out

    # -- densities ---------------------------------------------------------

    def _truncation_mass(self):
        lo = (self.lower[None, :] - self.means) / self.stds
        hi = (self.upper[None, :] - self.means) / self.stds
        return ndtr(hi) - ndtr(lo)

    def _mixture_pdf(self, p):
        """Density of the truncated mixture on its own ``(lower, upper)`` box."""
        mass = np.prod(self._truncation_mass(), axis=1)
        z = (p[..., None, :] - self.means) / self.stds
        comp = np.exp(-0.5 * np.sum(z * z, axis=-1)) / np.prod(self.stds * math.sqrt(2 * math.pi), axis=1)
        dens = np.sum(self.weights * comp / mass, axis=-1)
        inside = np.all((p >= self.lower) & (p <= self.upper), axis=-1)
        return np.where(inside, dens, 0.0)

    def pdf(self, x) -> np.ndarray:
        """Normalized density; zero outside the support box."""
        p = np.asarray(x, dtype=float)
        if self.kind == "point-mass":
            raise InputError("a point mass has no density")
        if self.kind in ("truncnorm-mixture-1d",) and (p.ndim == 0 or p.shape[-1] != 1):
            p = p[..., None]
        if self.kind == "uniform-box":
            if p.ndim == 0 or p.shape[-1] != self.lower.size:
                p = p[..., None]
            inside = np.all((p >= self.lower) & (p <= self.upper), axis=-1)
            return np.where(inside, 1.0 / np.prod(self.upper - self.lower), 0.0)
        if self.kind in ("truncnorm-mixture-1d", "truncnorm-mixture-2d"):
            return self._mixture_pdf(p)
        if self.kind == "swiss-roll-mixture":
            # strip coordinates (s, z): pull back the (theta, z) density by d theta / d s
            t0, t1 = self.lower[0], self.upper[0]
            s = p[..., 0]
            smax = float(arc_length(t1, t0))
            inside = (s >= 0) & (s <= smax)
            theta = arc_length_inverse(np.clip(s, 0, smax), t0, t1)
            q = np.stack([theta, p[..., 1]], axis=-1)
            return np.where(inside, self._mixture_pdf(q) / np.sqrt(1 + theta * theta), 0.0)
        # sphere: planar density times the area distortion of the projection
        plane = stereo_inverse(p, "north")
        r2 = np.sum(plane * plane, axis=-1)
        z = (plane[..., None, :] - self.means) / self.stds
        comp = np.exp(-0.5 * np.sum(z * z, axis=-1)) / (2 * math.pi * np.prod(self.stds, axis=1))
        return np.sum(self.weights * comp, axis=-1) * (1 + r2) ** 2 / 4.0

    # -- sampling ----------------------------------------------------------

    def _sample_truncated(self, n, rng, lower, upper):
        acc = np.prod(self._truncation_mass(), axis=1)
        if np.any(acc < MIN_ACCEPTANCE):
            raise PathologicalInputError(
                f"rejection acceptance {acc.min():.2e} below {MIN_ACCEPTANCE:g}"
            )
        comp = rng.choice(self.weights.size, size=n, p=self.weights)
        out = np.empty((n, self.means.shape[1]))
        for c in range(self.weights.size):
            idx = np.nonzero(comp == c)[0]
            filled = 0
            while filled < idx.size:
                need = idx.size - filled
                draw = rng.normal(self.means[c], self.stds[c], size=(int(need / acc[c]) + 16, self.means.shape[1]))
                ok = draw[np.all((draw >= lower) & (draw <= upper), axis=1)][:need]
                out[idx[filled:filled + ok.shape[0]]] = ok
                filled += ok.shape[0]
        return out

    def sample(self, n: int, rng) -> np.ndarray:
        if n < 1:
            raise InputError("n must be >= 1")
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        if self.kind == "point-mass":
            return np.tile(self.point, (n, 1))
        if self.kind == "uniform-box":
            return rng.uniform(self.lower, self.upper, size=(n, self.lower.size))
        if self.kind in ("truncnorm-mixture-1d", "truncnorm-mixture-2d"):
            return self._sample_truncated(n, rng, self.lower, self.upper)
        if self.kind == "swiss-roll-mixture":
            q = self._sample_truncated(n, rng, self.lower, self.upper)
            s = arc_length(q[:, 0], self.lower[0])
            return np.stack([s, q[:, 1]], axis=1)
        comp = rng.choice(self.weights.size, size=n, p=self.weights)
        plane = rng.normal(self.means[comp], self.stds[comp])
        return stereo_project(plane, "north")

    __call__ = sample

    def mean(self) -> np.ndarray:
        """Analytic mean of box-supported mixtures (per axis)."""
        if self.kind == "uniform-box":
            return 0.5 * (self.lower + self.upper)
        if self.kind == "point-mass":
            return self.point.copy()
        if self.kind not in ("truncnorm-mixture-1d", "truncnorm-mixture-2d"):
            raise InputError(f"no closed-form mean for {self.kind}")
        a = (self.lower - self.means) / self.stds
        b = (self.upper - self.means) / self.stds
        phi = lambda t: np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
        comp_mean = self.means + self.stds * (phi(a) - phi(b)) / (ndtr(b) - ndtr(a))
        return np.sum(self.weights[:, None] * comp_mean, axis=0)


def sample(spec: DistributionSpec, n: int, seed) -> SampleBatch:
    return SampleBatch(spec.sample(n, np.random.default_rng(seed)))


def pdf(spec: DistributionSpec, x) -> np.ndarray:
    return spec.pdf(x)


PRESETS = {
    "uniform": {"kind": "uniform-box", "lower": [0.0], "upper": [1.0]},
    "example-2": {
        "kind": "truncnorm-mixture-1d",
        "weights": [0.3, 0.7],
        "means": [[0.2], [0.7]],
        "stds": [[0.1], [0.2]],
        "lower": [0.0],
        "upper": [1.0],
    },
    "example-3": {
        "kind": "truncnorm-mixture-2d",
        "weights": [0.3, 0.7],
        "means": [[0.2, 0.3], [0.7, 0.6]],
        "stds": [[0.1, 0.2], [0.2, 0.15]],
        "lower": [0.0, 0.0],
        "upper": [1.0, 1.0],
    },
    # stand-ins below are not published parameters; they only exercise the code paths
    "swiss-standin": {
        "kind": "swiss-roll-mixture",
        "weights": [0.4, 0.6],
        "means": [[2.0 * math.pi, 4.0], [3.2 * math.pi, 12.0]],
        "stds": [[1.0, 3.0], [1.5, 4.0]],
        "lower": [math.pi, 0.0],
        "upper": [4.0 * math.pi, 20.0],
    },
    "sphere-standin": {
        "kind": "sphere-stereo-mixture",
        "weights": [0.5, 0.5],
        "means": [[0.3, -0.2], [-1.5, 1.0]],
        "stds": [[0.4, 0.4], [0.8, 0.6]],
        "lower": [-1.0, -1.0],
        "upper": [1.0, 1.0],
    },
    "plan-target-standin": {
        "kind": "truncnorm-mixture-1d",
        "weights": [1.0],
        "means": [[0.45]],
        "stds": [[0.15]],
        "lower": [0.0],
        "upper": [1.0],
    },
}


def preset(name: str) -> DistributionSpec:
    return DistributionSpec.from_dict({"preset": name})


def rotate90(spec: DistributionSpec) -> DistributionSpec:
    """Rotate a 2-D truncated mixture a quarter turn about the centre of its square box.

    The map is ``(x, y) -> (cx + cy - y, cy - cx + x)``, which sends
    ``[0, 1]^2`` to itself via ``(x, y) -> (1 - y, x)``.
    """
    if spec.kind != "truncnorm-mixture-2d":
        raise InputError(f"rotate90 needs a truncnorm-mixture-2d, got {spec.kind}")
    width = spec.upper - spec.lower
    if not np.isclose(width[0], width[1]):
        raise InputError("rotate90 needs a square box")
    cx, cy = 0.5 * (spec.lower + spec.upper)
    means = np.c_[cx + cy - spec.means[:, 1], cy - cx + spec.means[:, 0]]
    return DistributionSpec(spec.kind, spec.weights.copy(), means, spec.stds[:, ::-1].copy(),
                            spec.lower.copy(), spec.upper.copy())
