"""Command-line drivers.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, load_config
from .distributions import DistributionSpec
from .errors import ConfigError, ConvergenceError, InputError, OTDiscError
from .evaluate import ReferenceEvaluator, RichardsonEvaluator, compare, naive_baseline, richardson
from .geometry import EuclideanBox, HemisphereChart, SwissRollStrip
from .plan import PlanProblem, eot_plan, mccann_interpolate, omega
from .refine import combine, discretize_sphere, refine, solve_all
from .sgd import SgdConfig, discretize
from .sinkhorn import DiscreteMeasure

logger = logging.getLogger("otdisc")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


class _Setup:
    """Objects resolved from a config before any computation starts."""

    def __init__(self, cfg: RunConfig, args):
        self.cfg = cfg
        self.seed = cfg.seed if args.seed is None else args.seed
        self.workers = cfg.workers if args.workers is None else args.workers
        self.out = Path(args.out or cfg.out or "out")
        self.chart = cfg.chart.build()
        self.spec = cfg.distribution.build() if cfg.distribution is not None else None
        sgd = cfg.sgd.model_dump()
        self.sgd = SgdConfig(k=self.chart.exponent, seed=self.seed, **sgd)

    def need_spec(self) -> DistributionSpec:
        if self.spec is None:
            raise ConfigError("this command needs a 'distribution' section")
        return self.spec

    @property
    def is_sphere(self) -> bool:
        return self.spec is not None and self.spec.kind == "sphere-stereo-mixture"

    def evaluator(self, zeta: float):
        spec = self.need_spec()
        ev = self.cfg.evaluate
        if spec.kind not in ("sphere-stereo-mixture", "point-mass") and self.chart.is_flat:
            return RichardsonEvaluator(spec.pdf, self.chart, zeta, ev.N, ev.r)
        n = 1 if spec.kind == "point-mass" else ev.reference_size
        ref = spec.sample(n, np.random.default_rng([self.seed, 0xE7A1]))
        if self.is_sphere:
            return ReferenceEvaluator(DiscreteMeasure.uniform(ref), _SphereChart(self.chart.exponent), zeta)
        return ReferenceEvaluator(DiscreteMeasure.uniform(ref), self.chart, zeta)


@dataclasses.dataclass(frozen=True)
class _SphereChart:
    """Great-circle cost on unit vectors, used to score sphere outputs."""

    exponent: float = 2.0

    def cost_matrix(self, xs, ys):
        from .geometry import _geodesic

        d, _ = _geodesic(np.asarray(xs)[:, None, :], np.asarray(ys)[None, :, :])
        return d**self.exponent


def _check_sampler_chart(setup: _Setup):
    spec = setup.need_spec()
    if setup.is_sphere:
        if not isinstance(setup.chart, HemisphereChart):
            raise ConfigError("a sphere distribution needs a sphere-hemisphere chart")
        return
    if isinstance(setup.chart, HemisphereChart):
        raise ConfigError("a sphere-hemisphere chart needs a sphere-stereo-mixture distribution")
    if spec.dim != setup.chart.dim:
        raise ConfigError(f"distribution is {spec.dim}-D but chart is {setup.chart.dim}-D")


def _write_measure(setup: _Setup, measure: DiscreteMeasure, name: str = "measure.csv"):
    setup.out.mkdir(parents=True, exist_ok=True)
    io.write_measure_csv(setup.out / name, measure)
    if isinstance(setup.chart, SwissRollStrip):
        io.write_measure_csv(setup.out / name.replace(".csv", "_embedded.csv"),
                             DiscreteMeasure(setup.chart.embed(measure.positions), measure.weights))


def _score(setup: _Setup, measure: DiscreteMeasure) -> dict:
    try:
        ev = setup.evaluator(setup.cfg.evaluate.zeta)
    except OTDiscError:
        return {}
    out = {"evaluator": type(ev).__name__, "eval_zeta": setup.cfg.evaluate.zeta}
    try:
        out["w"] = ev(measure)
    except ConvergenceError as exc:
        # the measure is already written; a failed score should not sink the run
        logger.warning("scoring skipped: %s (scale evaluate.zeta with the chart)", exc)
        out["w"] = None
        out["score_error"] = str(exc)
    return out


def cmd_discretize(setup: _Setup) -> int:
    _check_sampler_chart(setup)
    spec = setup.spec
    summary = {"command": "discretize", "seed": setup.seed, "m": setup.sgd.m, "zeta": setup.sgd.zeta}
    if setup.is_sphere:
        pts = spec.sample(setup.cfg.refine.n_samples, np.random.default_rng(setup.seed))
        measure, solved = discretize_sphere(pts, setup.sgd.m, setup.sgd, setup.seed, setup.workers)
        summary["hemispheres"] = [s.to_dict() for s, _ in solved]
    else:
        measure, trace = discretize(spec, setup.chart, setup.sgd)
        setup.out.mkdir(parents=True, exist_ok=True)
        io.write_trace_ndjson(setup.out / "trace.ndjson", trace)
        summary["steps"] = len(trace)
        summary["final_batch_w"] = trace[-1].w if trace else None
    _write_measure(setup, measure)
    summary.update(_score(setup, measure))
    io.write_json(setup.out / "summary.json", summary)
    return EXIT_OK


def cmd_refine(setup: _Setup) -> int:
    _check_sampler_chart(setup)
    if setup.is_sphere:
        raise ConfigError("refine works on box-like charts; use 'discretize' for sphere distributions")
    rc = setup.cfg.refine
    samples = setup.spec.sample(rc.n_samples, np.random.default_rng(setup.seed))
    subs = refine(samples, setup.sgd.m, rc.m_star, setup.chart.lo, setup.chart.hi,
                  k=setup.chart.exponent, zeta0=rc.zeta0, chart=setup.chart)
    setup.out.mkdir(parents=True, exist_ok=True)
    io.write_json(setup.out / "partition.json", {"cells": [s.to_dict() for s in subs]})
    measure = combine(solve_all(subs, setup.sgd, setup.seed, setup.workers))
    _write_measure(setup, measure)
    summary = {"command": "refine", "seed": setup.seed, "m": setup.sgd.m, "cells": len(subs)}
    summary.update(_score(setup, measure))
    io.write_json(setup.out / "summary.json", summary)
    return EXIT_OK


def cmd_plan(setup: _Setup) -> int:
    pc = setup.cfg.plan
    if pc is None:
        raise ConfigError("plan needs a 'plan' section")
    chart = setup.chart
    if isinstance(chart, HemisphereChart):
        raise ConfigError("plan supports box-like charts only")
    mu_spec, nu_spec = pc.mu.build(), pc.nu.build()
    for spec in (mu_spec, nu_spec):
        if spec.dim != chart.dim:
            raise ConfigError(f"plan marginal is {spec.dim}-D but chart is {chart.dim}-D")
    mu, _ = discretize(mu_spec, chart, dataclasses.replace(setup.sgd, m=pc.m, zeta=pc.zeta, seed=setup.seed))
    nu, _ = discretize(nu_spec, chart, dataclasses.replace(setup.sgd, m=pc.n, zeta=pc.zeta, seed=setup.seed + 1))
    prob = PlanProblem(mu, nu, chart, chart, zeta=pc.zeta, lam=pc.lam, rho=pc.rho)
    plan = eot_plan(prob)
    rng = np.random.default_rng([setup.seed, 0xB1A2])
    ref_mu = DiscreteMeasure.uniform(mu_spec.sample(pc.reference_size, rng))
    ref_nu = DiscreteMeasure.uniform(nu_spec.sample(pc.reference_size, rng))
    ref_plan = eot_plan(PlanProblem(ref_mu, ref_nu, chart, chart, zeta=pc.zeta, lam=pc.lam), max_iter=100_000)
    rep = omega(prob, ref_mu, ref_nu, ref_plan, plan=plan, max_ref_atoms=pc.max_reference_atoms, seed=setup.seed)

    out = setup.out
    out.mkdir(parents=True, exist_ok=True)
    _write_measure(setup, mu, "mu.csv")
    _write_measure(setup, nu, "nu.csv")
    io.write_plan_csv(out / "plan.csv", plan, mu.positions, nu.positions)
    report = rep.to_dict()
    report.update({"lam": prob.lam, "zeta": prob.zeta, "marginal_violation": plan.marginal_violation()})
    io.write_json(out / "omega.json", report)
    if pc.t_list:
        io.write_mccann_slices(out, [(t, mccann_interpolate(plan, mu, nu, t, chart)) for t in pc.t_list])
    return EXIT_OK


def _load_measure(setup: _Setup) -> DiscreteMeasure:
    path = setup.cfg.evaluate.measure
    if path is None:
        raise ConfigError("evaluate.measure must name a measure CSV")
    if not Path(path).is_file():
        raise ConfigError(f"measure file not found: {path}")
    return io.read_measure_csv(path)


def cmd_evaluate(setup: _Setup) -> int:
    spec = setup.need_spec()
    ev = setup.cfg.evaluate
    measure = _load_measure(setup)
    setup.out.mkdir(parents=True, exist_ok=True)
    if spec.kind in ("sphere-stereo-mixture", "point-mass") or not setup.chart.is_flat:
        value = setup.evaluator(ev.zeta)(measure)
        io.write_json(setup.out / "evaluation.json", {"w": value, "zeta": ev.zeta, "method": "reference"})
        return EXIT_OK
    est = richardson(spec.pdf, measure, setup.chart, ev.zeta, N=ev.N, r=ev.r, ladder=ev.ladder)
    io.write_json(setup.out / "richardson.json", est.to_dict())
    return EXIT_OK


def cmd_compare(setup: _Setup) -> int:
    spec = setup.need_spec()
    _check_sampler_chart(setup)
    ev = setup.cfg.evaluate
    measure = _load_measure(setup)
    evaluator = setup.evaluator(ev.zeta)
    sizes = ev.sizes if ev.size is None or ev.size in ev.sizes else list(ev.sizes) + [ev.size]
    base = naive_baseline(spec, sizes, ev.trials, evaluator, setup.seed, ev.min_trials, setup.workers)
    w = evaluator(measure)
    setup.out.mkdir(parents=True, exist_ok=True)
    io.write_json(setup.out / "baseline.json", base.to_dict())
    io.write_percentiles_csv(setup.out / "percentiles.csv", base)
    ranks = {str(s): compare(w, base, s) for s in ([ev.size] if ev.size is not None else sizes)}
    io.write_json(setup.out / "compare.json", {"w": w, "rank": ranks, "trials": ev.trials})
    return EXIT_OK


COMMANDS = {
    "discretize": cmd_discretize,
    "refine": cmd_refine,
    "plan": cmd_plan,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otdisc", description="Entropic-OT discretization of distributions.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        setup = _Setup(cfg, args)
    except (ConfigError, InputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](setup)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OTDiscError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
