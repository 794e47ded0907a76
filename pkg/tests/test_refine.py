import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otdisc.distributions import preset
from otdisc.errors import CellFailures, InputError, PathologicalInputError
from otdisc.geometry import EuclideanBox, HemisphereChart, SwissRollStrip
from otdisc.refine import (
    Subproblem,
    cell_seed,
    combine,
    discretize_sphere,
    refine,
    solve_all,
    split_budget,
    split_sphere,
)
from otdisc.sgd import SgdConfig, discretize, resampling_sampler
from otdisc.sinkhorn import DiscreteMeasure


def test_split_budget_examples():
    assert split_budget(10, 10, 5, 1, 2) == (3, 2)
    assert split_budget(400, 100, 6, 2, 2) == (4, 2)
    assert split_budget(7, 0, 5, 1, 2) == (5, 0)
    assert split_budget(0, 7, 5, 1, 2) == (0, 5)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(1, 500), st.integers(1, 3), st.floats(1, 4))
def test_split_budget_conserves(n1, n2, m, d, k):
    if n1 + n2 == 0:
        return
    m1, m2 = split_budget(n1, n2, m, d, k)
    assert m1 + m2 == m and m1 >= 0 and m2 >= 0


def check_partition(samples, subs, m, lo, hi):
    assert sum(s.m for s in subs) == m
    assert sum(s.mass for s in subs) == Fraction(1)
    assert all(s.m >= 1 and s.mass > 0 for s in subs)
    for s in subs:
        assert np.all(s.samples >= s.lower) and np.all(s.samples <= s.upper)
        assert np.all(s.lower >= lo) and np.all(s.upper <= hi)
    # every retained sample belongs to exactly one cell
    got = np.concatenate([s.samples for s in subs])
    assert got.shape[0] <= samples.shape[0]
    rows = {tuple(r) for r in samples}
    assert all(tuple(r) in rows for r in got)
    assert len({tuple(r) for r in got}) == got.shape[0]


@settings(max_examples=100, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.integers(1, 3),
    st.integers(50, 400),
    st.integers(1, 40),
    st.integers(1, 6),
)
def test_refine_invariants_fuzzed(seed, d, n, m, m_star):
    rng = np.random.default_rng(seed)
    m = max(1, min(m, n // 10))
    samples = rng.random((n, d)) ** rng.uniform(1, 3, d)  # skewed toward the lower corner
    lo, hi = np.zeros(d), np.ones(d)
    subs = refine(samples, m, m_star, lo, hi)
    assert all(s.m <= m_star for s in subs) or len(subs) == 1
    check_partition(samples, subs, m, lo, hi)


def test_clustered_samples_invariants_or_pathological():
    rng = np.random.default_rng(4)
    ok = 0
    for _ in range(50):
        centers = rng.random((3, 2))
        samples = np.clip(centers[rng.integers(0, 3, 300)] + 0.02 * rng.normal(size=(300, 2)), 0, 1)
        try:
            subs = refine(samples, 20, 3, [0, 0], [1, 1])
        except PathologicalInputError as exc:
            assert "cannot be split" in str(exc)
            continue
        ok += 1
        check_partition(samples, subs, 20, np.zeros(2), np.ones(2))
    assert ok > 0


def test_zero_budget_sibling_mass_moves():
    # all samples on the left half: the right child gets no atoms and no mass
    samples = np.linspace(0.01, 0.4, 50)[:, None]
    subs = refine(samples, 4, 3, [0.0], [1.0])
    assert sum(s.m for s in subs) == 4
    assert sum(s.mass for s in subs) == 1
    assert all(s.upper[0] <= 0.5 for s in subs)


def test_root_within_budget_unsplit():
    samples = np.random.default_rng(0).random((30, 2))
    subs = refine(samples, 4, 4, [0, 0], [1, 1])
    assert len(subs) == 1 and subs[0].mass == 1 and subs[0].samples.shape[0] == 30


def test_split_rule_and_zeta():
    samples = np.array([[1.0, 0.1], [1.5, 0.9]])
    subs = refine(samples, 2, 1, [0, 0], [2, 1], zeta0=0.01)
    # longest axis is x; the sample exactly on the midpoint goes left
    assert subs[0].upper[0] == 1.0 and subs[0].samples.tolist() == [[1.0, 0.1]]
    assert subs[1].lower[0] == 1.0
    for s in subs:
        diam2 = float(np.sum((s.upper - s.lower) ** 2))
        assert s.zeta == pytest.approx(diam2 * 0.01)


def test_refine_errors():
    with pytest.raises(InputError):
        refine(np.zeros((0, 1)), 1, 1, [0], [1])
    with pytest.raises(InputError):
        refine(np.array([[2.0]]), 1, 1, [0], [1])
    with pytest.raises(PathologicalInputError):
        refine(np.full((10, 1), 0.3), 4, 1, [0], [1])


def test_sorted_vs_shuffled_runtime():
    rng = np.random.default_rng(1)
    samples = preset("example-3").sample(20_000, rng)
    shuffled = samples[rng.permutation(samples.shape[0])]
    srt = samples[np.lexsort(samples.T[::-1])]

    def timed(s):
        t = time.perf_counter()
        for _ in range(3):
            refine(s, 200, 4, [0, 0], [1, 1])
        return time.perf_counter() - t

    timed(srt)
    a, b = timed(srt), timed(shuffled)
    assert max(a, b) / min(a, b) < 2.0


def test_combine_examples():
    cells = [Subproblem(np.zeros((1, 1)), 1, Fraction(3, 10), np.zeros(1), np.ones(1), 0.01),
             Subproblem(np.zeros((1, 1)), 1, Fraction(7, 10), np.zeros(1), np.ones(1), 0.01)]
    out = combine([(cells[0], DiscreteMeasure([[0.1]], [1.0])), (cells[1], DiscreteMeasure([[0.9]], [1.0]))])
    np.testing.assert_allclose(out.weights, [0.3, 0.7])
    with pytest.raises(InputError):
        combine([(cells[0], DiscreteMeasure([[0.1]], [1.0]))])


def test_combine_total_weight(rng):
    for _ in range(50):
        k = rng.integers(1, 8)
        cuts = np.sort(rng.integers(1, 1000, k - 1))
        counts = np.diff(np.r_[0, cuts, 1000])
        counts = counts[counts > 0]
        solved = []
        for c in counts:
            mi = rng.integers(1, 4)
            w = rng.random(mi) + 0.1
            sub = Subproblem(np.zeros((1, 1)), mi, Fraction(int(c), 1000), np.zeros(1), np.ones(1), 0.01)
            solved.append((sub, DiscreteMeasure(rng.random((mi, 1)), w / w.sum())))
        assert abs(combine(solved).weights.sum() - 1) < 1e-12


def test_single_cell_matches_plain_discretize():
    samples = preset("example-2").sample(500, 0)
    cfg = SgdConfig(m=3, max_steps=30)
    subs = refine(samples, 3, 3, [0.0], [1.0])
    (sub, mu), = solve_all(subs, cfg, master_seed=5)
    chart = EuclideanBox((0.0,), (1.0,))
    cell_cfg = SgdConfig(m=3, max_steps=30, zeta=sub.zeta, seed=cell_seed(5, 0))
    ref, _ = discretize(resampling_sampler(samples), chart, cell_cfg)
    np.testing.assert_array_equal(mu.positions, ref.positions)


def test_cells_stay_in_bounds():
    rng = np.random.default_rng(2)
    samples = np.r_[rng.uniform(0.05, 0.2, (200, 1)), rng.uniform(0.7, 0.95, (200, 1))]
    subs = refine(samples, 6, 3, [0.0], [1.0])
    for sub, mu in solve_all(subs, SgdConfig(m=1, max_steps=50)):
        assert np.all(mu.positions >= sub.lower) and np.all(mu.positions <= sub.upper)


def test_worker_independence():
    samples = preset("example-3").sample(1500, 3)
    subs = refine(samples, 12, 4, [0, 0], [1, 1])
    cfg = SgdConfig(m=1, max_steps=40)
    a = combine(solve_all(subs, cfg, 9, workers=1))
    b = combine(solve_all(subs, cfg, 9, workers=3))
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_cell_failures_collected():
    good = Subproblem(np.random.default_rng(0).random((50, 1)), 2, Fraction(1, 2), np.zeros(1), np.ones(1), 0.01, 0)
    bad = Subproblem(np.full((50, 1), 0.5), 3, Fraction(1, 2), np.zeros(1), np.ones(1), 0.01, 1)
    with pytest.raises(CellFailures) as err:
        solve_all([good, bad], SgdConfig(m=1, max_steps=60))
    assert [i for i, _ in err.value.failures] == [1]
    assert len(err.value.results) == 1


def test_swiss_chart_cells():
    strip = SwissRollStrip.from_ranges(z_range=(0.0, 20.0))
    samples = preset("swiss-standin").sample(3000, 0)
    subs = refine(samples, 8, 4, strip.lo, strip.hi, chart=strip)
    assert all(isinstance(s.chart, SwissRollStrip) for s in subs)
    check_partition(samples, subs, 8, strip.lo, strip.hi)


def test_sphere_split_and_lift():
    pts = preset("sphere-standin").sample(2000, 0)
    parts = split_sphere(pts)
    assert sum(p[2] for p in parts) == 1
    for pole, disc, _ in parts:
        assert np.all(HemisphereChart(pole=pole).contains(disc))
    mu, solved = discretize_sphere(pts, 5, SgdConfig(m=1, max_steps=40))
    np.testing.assert_allclose(np.linalg.norm(mu.positions, axis=1), 1.0, atol=1e-12)
    assert mu.size == 5 and abs(mu.weights.sum() - 1) < 1e-12
