import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference
from otdisc.errors import DomainError, SingularityError
from otdisc.geometry import (
    EuclideanBox,
    HemisphereChart,
    SwissRollStrip,
    arc_length,
    arc_length_inverse,
    chart_from_dict,
    sphere_distance,
    stereo_inverse,
    stereo_project,
    swiss_embed,
)


def random_disc(rng, n, radius=0.95):
    r = radius * np.sqrt(rng.random(n))
    t = rng.uniform(0, 2 * math.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)


class TestEuclideanBox:
    def test_squared_distance(self):
        box = EuclideanBox((0, 0), (5, 5))
        assert box.cost(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == 25.0

    def test_identity_and_symmetry(self, rng):
        box = EuclideanBox((0, 0), (1, 1), exponent=1.5)
        x, y = rng.random((2, 50, 2))
        assert np.all(box.cost(x, x) == 0)
        np.testing.assert_allclose(box.cost(x, y), box.cost(y, x))

    def test_grad_k2(self):
        box = EuclideanBox((0, 0), (1, 1))
        np.testing.assert_array_equal(box.cost_grad_y(np.array([0.0, 0.0]), np.array([1.0, 0.0])), [2.0, 0.0])

    @pytest.mark.parametrize("k", [1.0, 1.5, 2.0, 3.0])
    def test_grad_matches_finite_differences(self, rng, k):
        box = EuclideanBox((0, 0, 0), (1, 1, 1), exponent=k)
        for _ in range(100):
            x, y = rng.random((2, 3))
            g = box.cost_grad_y(x, y)
            fd = central_difference(lambda v: box.cost(x, v), y)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)

    def test_k1_singular_at_coincidence(self):
        box = EuclideanBox((0,), (1,), exponent=1.0)
        with pytest.raises(SingularityError):
            box.cost_grad_y(np.array([0.5]), np.array([0.5]))

    def test_check_rejects_outside(self):
        box = EuclideanBox((0,), (1,))
        with pytest.raises(DomainError):
            box.check(np.array([[1.5]]))

    def test_degenerate_bounds(self):
        with pytest.raises(DomainError):
            EuclideanBox((0, 1), (1, 1))

    def test_step_clamps(self):
        box = EuclideanBox((0, 0), (1, 1))
        out = box.step(np.array([[0.9, 0.1]]), np.array([[0.5, -0.5]]))
        np.testing.assert_array_equal(out, [[1.0, 0.0]])

    def test_cost_matrix_shapes(self, rng):
        box = EuclideanBox((0, 0), (1, 1))
        xs, ys = rng.random((7, 2)), rng.random((3, 2))
        assert box.cost_matrix(xs, ys).shape == (7, 3)
        assert box.cost_grad_matrix(xs, ys).shape == (7, 3, 2)

    def test_diameter(self):
        assert EuclideanBox((0, 0), (3, 4)).diameter() == 5.0


class TestSwissRoll:
    def test_arc_length_matches_quadrature(self):
        from scipy.integrate import quad

        for t in (4.0, 7.5, 4 * math.pi):
            ref = quad(lambda u: math.sqrt(1 + u * u), math.pi, t)[0]
            assert arc_length(t, math.pi) == pytest.approx(ref, rel=1e-12)

    def test_inverse_roundtrip(self, rng):
        th = rng.uniform(math.pi, 4 * math.pi, 200)
        np.testing.assert_allclose(arc_length_inverse(arc_length(th)), th, atol=1e-9)

    def test_inverse_out_of_range(self):
        with pytest.raises(DomainError):
            arc_length_inverse(-1.0)

    def test_strip_is_isometric_locally(self, rng):
        # short chord in R^3 ~ strip distance
        strip = SwissRollStrip.from_ranges((math.pi, 4 * math.pi), (0, 10))
        s = rng.uniform(1, strip.upper[0] - 1, 20)
        z = rng.uniform(1, 9, 20)
        ds = 1e-4
        a = swiss_embed(s, z)
        b = swiss_embed(s + ds, z)
        np.testing.assert_allclose(np.linalg.norm(b - a, axis=1), ds, rtol=1e-3)

    def test_embed_on_roll(self, rng):
        strip = SwissRollStrip.from_ranges((math.pi, 4 * math.pi), (0, 1))
        pts = np.stack([rng.uniform(0, strip.upper[0], 50), rng.random(50)], axis=1)
        e = strip.embed(pts)
        theta = np.hypot(e[:, 0], e[:, 1])
        np.testing.assert_allclose(np.cos(theta) * theta, e[:, 0], atol=1e-9)

    def test_chart_from_dict(self):
        c = chart_from_dict({"kind": "swiss-roll-strip", "z_range": [0, 2]})
        assert isinstance(c, SwissRollStrip) and c.upper[1] == 2


class TestSphere:
    def test_projection_on_unit_sphere(self, rng):
        for pole in ("north", "south"):
            q = stereo_project(random_disc(rng, 500, 1.0), pole)
            np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)

    def test_origin_maps_to_pole(self):
        np.testing.assert_allclose(stereo_project(np.zeros(2), "north"), [0, 0, -1])
        np.testing.assert_allclose(stereo_project(np.zeros(2), "south"), [0, 0, 1])

    def test_inverse(self, rng):
        p = random_disc(rng, 100)
        for pole in ("north", "south"):
            np.testing.assert_allclose(stereo_inverse(stereo_project(p, pole), pole), p, atol=1e-12)

    def test_antipodal_cost(self):
        chart = HemisphereChart()
        x = np.array([1.0, 0.0])  # equator
        y = np.array([-1.0, 0.0])
        assert chart.cost(x, y) == pytest.approx(math.pi**2, rel=1e-12)

    def test_distance_rejects_non_unit(self):
        with pytest.raises(DomainError):
            sphere_distance(np.array([1.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))

    def test_grad_zero_at_coincidence(self):
        chart = HemisphereChart()
        y = np.array([0.3, -0.2])
        np.testing.assert_allclose(chart.cost_grad_y(y, y), 0.0, atol=1e-15)

    @pytest.mark.parametrize("pole", ["north", "south"])
    @pytest.mark.parametrize("k", [1.0, 2.0, 3.0])
    def test_grad_matches_finite_differences(self, rng, pole, k):
        chart = HemisphereChart(pole=pole, exponent=k)
        xs, ys = random_disc(rng, 100), random_disc(rng, 100)
        for x, y in zip(xs, ys):
            g = chart.cost_grad_y(x, y)
            fd = central_difference(lambda v: chart.cost(x, v), y)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)

    def test_antipodal_radial_convention(self):
        chart = HemisphereChart()
        y = np.array([0.6, 0.8])  # on the equator
        x = -y
        g = chart.cost_grad_y(x, y)
        # points outward; a descent step moves the atom inward
        assert np.dot(g, y) > 0
        np.testing.assert_allclose(g / np.linalg.norm(g), y)

    def test_step_stays_in_disc(self, rng):
        chart = HemisphereChart()
        y = random_disc(rng, 200)
        v = rng.normal(scale=2.0, size=(200, 2))
        assert np.all(chart.contains(chart.step(y, v)))

    def test_restricted_step_stays_in_cell(self, rng):
        chart = HemisphereChart(lower=(0.5, 0.5), upper=(1.0, 1.0))
        y = np.array([[0.6, 0.6]] * 200)
        v = rng.normal(scale=1.0, size=(200, 2))
        assert np.all(chart.contains(chart.step(y, v)))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 0.99), st.floats(0, 2 * math.pi), st.floats(0, 0.99), st.floats(0, 2 * math.pi))
    def test_geodesic_symmetric_bounded(self, r1, t1, r2, t2):
        chart = HemisphereChart()
        x = np.array([r1 * math.cos(t1), r1 * math.sin(t1)])
        y = np.array([r2 * math.cos(t2), r2 * math.sin(t2)])
        c = chart.cost(x, y)
        assert c == pytest.approx(chart.cost(y, x), abs=1e-14)
        # both in one closed hemisphere
        assert 0 <= c <= math.pi**2 + 1e-12
