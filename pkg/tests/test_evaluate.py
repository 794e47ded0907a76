import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otdisc.distributions import preset
from otdisc.errors import InputError
from otdisc.evaluate import (
    BaselineSummary,
    ReferenceEvaluator,
    RichardsonEvaluator,
    compare,
    convergence_curve,
    grid_measure,
    moving_average,
    naive_baseline,
    nearest_rank,
    richardson,
    richardson_extrapolate,
    sharp_cost,
)
from otdisc.geometry import EuclideanBox
from otdisc.sgd import TraceRecord
from otdisc.sinkhorn import DiscreteMeasure

BOX1 = EuclideanBox((0.0,), (1.0,))


@settings(max_examples=50)
@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(10, 1000), st.integers(2, 4), st.floats(0.5, 3))
def test_extrapolation_exact_on_power_model(a, b, n, r, h):
    w = lambda N: a + b * N ** (-h)
    assert richardson_extrapolate(w(n), w(r * n), r, h) == pytest.approx(a, abs=1e-9)


def test_grid_weights_normalized():
    spec = preset("example-2")
    g = grid_measure(spec.pdf, [0.0], [1.0], 100)
    assert g.size == 100
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(g.positions[:3, 0], [0.005, 0.015, 0.025])


def test_grid_2d_per_axis_count():
    g = grid_measure(lambda p: np.ones(len(p)), [0.0, 0.0], [1.0, 2.0], 400)
    assert g.size == 400
    np.testing.assert_allclose(g.weights, 1 / 400)


def test_grid_zero_density():
    with pytest.raises(InputError):
        grid_measure(lambda p: np.zeros(len(p)), [0.0], [1.0], 50)
    with pytest.raises(InputError):
        grid_measure(lambda p: -np.ones(len(p)), [0.0], [1.0], 50)


def test_richardson_uniform_grid_target():
    # target equal to the midpoint grid of size 5: the fine grids converge to
    # the continuous cost 1/(12*25) as zeta -> 0
    target = grid_measure(lambda p: np.ones(len(p)), [0.0], [1.0], 5)
    est = richardson(lambda p: np.ones(len(p)), target, BOX1, 1e-3, ladder=(200, 400, 800))
    assert est.h == 2.0
    assert est.w_star == pytest.approx(1 / 300, rel=0.01)
    assert est.slope_hat == pytest.approx(-2.0, abs=0.05)


def test_richardson_rejects_bad_r():
    with pytest.raises(InputError):
        richardson(lambda p: np.ones(len(p)), grid_measure(lambda p: np.ones(len(p)), [0.0], [1.0], 3),
                   BOX1, 0.01, r=1)


def test_ladder_differences_shrink():
    spec = preset("example-2")
    target = DiscreteMeasure(np.array([[0.15], [0.3], [0.5], [0.65], [0.8]]), np.full(5, 0.2))
    est = richardson(spec.pdf, target, BOX1, 0.01, ladder=(100, 200, 400, 800))
    mags = np.abs(est.differences)
    assert np.all(np.diff(mags) < 0)


def test_evaluator_matches_function():
    spec = preset("example-2")
    target = DiscreteMeasure(np.array([[0.2], [0.7]]), np.array([0.4, 0.6]))
    ev = RichardsonEvaluator(spec.pdf, BOX1, 0.01, N=100)
    est = richardson(spec.pdf, target, BOX1, 0.01, N=100, ladder=())
    assert ev(target) == pytest.approx(est.w_star, rel=1e-12)


def test_reference_evaluator_zero_for_identical():
    m = DiscreteMeasure(np.array([[0.1], [0.9]]), np.array([0.5, 0.5]))
    ev = ReferenceEvaluator(m, BOX1, 1e-3)
    assert ev(m) == pytest.approx(0.0, abs=1e-12)
    assert sharp_cost(BOX1, m, m, 1e-3) == pytest.approx(0.0, abs=1e-12)


def test_nearest_rank():
    v = [15, 20, 35, 40, 50]
    assert nearest_rank(v, 5) == 15
    assert nearest_rank(v, 30) == 20
    assert nearest_rank(v, 40) == 20
    assert nearest_rank(v, 50) == 35
    assert nearest_rank(v, 100) == 50
    with pytest.raises(InputError):
        nearest_rank([], 50)


def _point_sampler(n, rng):
    return np.full((n, 1), 0.4)


def test_point_mass_baseline_is_zero():
    target = DiscreteMeasure(np.array([[0.4]]), np.array([1.0]))
    ev = ReferenceEvaluator(target, BOX1, 1e-3)
    b = naive_baseline(_point_sampler, [3, 7], 30, ev)
    for s in (3, 7):
        assert np.allclose(b.values[s], 0.0, atol=1e-12)


def _uniform_sampler(n, rng):
    return rng.random((n, 1))


def test_baseline_percentiles_ordered_and_worker_independent():
    ref = grid_measure(lambda p: np.ones(len(p)), [0.0], [1.0], 200)
    ev = ReferenceEvaluator(ref, BOX1, 0.01)
    b1 = naive_baseline(_uniform_sampler, [5, 20], 30, ev, seed=4)
    b2 = naive_baseline(_uniform_sampler, [5, 20], 30, ev, seed=4, workers=2)
    assert b1.values == b2.values
    for s in (5, 20):
        p = list(b1.percentiles(s).values())
        assert p == sorted(p)
    assert b1.percentiles(20)[50] < b1.percentiles(5)[50]
    rows = b1.percentile_rows()
    assert [r[0] for r in rows] == [5, 20]
    assert b1.to_dict()["percentiles"]["5"]["p50"] == b1.percentiles(5)[50]


def test_baseline_trial_floor():
    ev = ReferenceEvaluator(DiscreteMeasure(np.array([[0.5]]), np.array([1.0])), BOX1, 0.01)
    with pytest.raises(InputError):
        naive_baseline(_uniform_sampler, [5], 10, ev)
    b = naive_baseline(_uniform_sampler, [5], 10, ev, min_trials=5)
    assert b.trials == 10


def test_compare_fractions():
    b = BaselineSummary([10], {10: [float(x) for x in range(1, 101)]})
    assert compare(0.0, b, 10) == 1.0
    assert compare(1000.0, b, 10) == 0.0
    assert abs(compare(nearest_rank(b.values[10], 50), b, 10) - 0.5) <= 1 / 100
    with pytest.raises(InputError):
        compare(1.0, b, 40)


def test_moving_average_and_curve():
    np.testing.assert_allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    with pytest.raises(InputError):
        moving_average([1, 2], 3)
    trace = [TraceRecord(t, float(t), None, None, 0.0) for t in range(10)]
    np.testing.assert_allclose(convergence_curve(trace, 5), np.arange(2, 8))
