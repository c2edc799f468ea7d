import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import ChartRangeError, DeterminantError, NonFiniteCoordinateError, TooFewFixedPointsError, WeakExpansionError
from torus import (
    Point2,
    Point3,
    apply_base,
    base_step,
    chart_from,
    cone_image,
    cs_area,
    lattice_fixed_points,
    local_chart,
    make_anosov,
    make_chart,
    normalize,
    plane_leak,
    torus_delta,
    torus_distance,
    wrap,
)

coords = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


class TestNormalize:
    @given(x1=coords, x2=coords, t=coords)
    def test_coordinates_land_in_unit_interval(self, x1, x2, t):
        p = Point3.of(x1, x2, t)
        for v in (p.x1, p.x2, p.t):
            assert 0.0 <= v < 1.0

    def test_seam_maps_to_zero(self):
        assert Point3.of(1 - 1e-17, 0.5, 0.5).x1 == 0.0
        assert normalize((-0.25, 1.25, 3.0)) == Point3.of(0.75, 0.25, 0.0)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteCoordinateError):
            Point2(math.nan, 0.0)
        with pytest.raises(NonFiniteCoordinateError):
            Point3.of(0.0, 0.0, math.inf)

    def test_wrap_matches_normalize(self):
        a = np.array([[-0.25, 1.5, 2.0], [1 - 1e-17, 0.3, -1e-20]])
        w = wrap(a)
        for row, p in zip(w, (normalize(tuple(r)) for r in a)):
            assert tuple(row) == (p.x1, p.x2, p.t)


class TestAnosov:
    def test_default_matrix(self, base):
        assert base.lambda_u == pytest.approx((9 + math.sqrt(77)) / 2)
        assert base.lambda_u * base.lambda_s == pytest.approx(1.0)
        assert [p.as_array().tolist() for p in base.fixed_pts] == [[0.0, j / 7] for j in range(7)]

    def test_eigenvectors(self, base):
        vu, vs = np.array(base.v_u), np.array(base.v_s)
        np.testing.assert_allclose(base.matrix @ vu, base.lambda_u * vu, atol=1e-12)
        np.testing.assert_allclose(base.matrix @ vs, base.lambda_s * vs, atol=1e-12)
        assert np.linalg.norm(vu) == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "matrix, error",
        [
            ((2, 1, 1, 2), DeterminantError),
            ((2, 1, 1, 1), WeakExpansionError),
            ((1, 1, 0, 1), WeakExpansionError),
            ((5, 4, 1, 1), TooFewFixedPointsError),
        ],
    )
    def test_rejects(self, matrix, error):
        with pytest.raises(error):
            make_anosov(*matrix)

    @pytest.mark.parametrize("matrix", [(8, 7, 1, 1), (6, 1, 5, 1), (7, 6, 1, 1), (4, 3, 5, 4), (2, 3, 3, 5)])
    def test_fixed_points_are_fixed(self, matrix):
        base = make_anosov(*matrix)
        assert len(base.fixed_pts) == abs(matrix[0] + matrix[3] - 2)
        for p in base.fixed_pts:
            assert torus_distance(np.array([*apply_base(base, p).as_array(), 0.0]), np.array([*p.as_array(), 0.0])) < 1e-12

    def test_fixed_points_sorted_and_distinct(self):
        pts = lattice_fixed_points(4, 3, 5, 4)
        keys = [(p.x1, p.x2) for p in pts]
        assert keys == sorted(set(keys))

    def test_base_step_is_elementwise(self, base, rng):
        xy = rng.uniform(0, 1, (64, 2))
        whole = base_step(base, xy)
        parts = np.concatenate([base_step(base, xy[:10]), base_step(base, xy[10:])])
        assert np.array_equal(whole, parts)


class TestCharts:
    def test_round_trip(self, base):
        chart = make_chart(base, Point3.of(0.0, 2 / 7, 0.5))
        p = chart_from(chart, 0.01, -0.02, 0.003)
        u, s, w = local_chart(chart, p)
        assert (u, s, w) == pytest.approx((0.01, -0.02, 0.003), abs=1e-12)

    def test_across_the_seam(self, base):
        chart = make_chart(base, Point3.of(0.0, 0.0, 0.0))
        p = chart_from(chart, -0.01, 0.0, -0.002)
        assert p.t == pytest.approx(0.998)
        assert local_chart(chart, p) == pytest.approx((-0.01, 0.0, -0.002), abs=1e-12)

    def test_out_of_range(self, base):
        chart = make_chart(base, Point3.of(0.0, 0.0, 0.0))
        with pytest.raises(ChartRangeError):
            local_chart(chart, Point3.of(0.5, 0.5, 0.5))

    def test_distance_uses_nearest_lift(self):
        assert torus_distance(np.array([0.99, 0.0, 0.0]), np.array([0.01, 0.0, 0.0])) == pytest.approx(0.02)
        np.testing.assert_allclose(torus_delta(np.array([0.0, 0.9]), np.array([0.95, 0.1])), [0.05, -0.2])


class TestCsPlane:
    def test_block_triangular_jacobian_has_no_leak(self, base, rng):
        jac = np.zeros((32, 3, 3))
        jac[:, :2, :2] = base.matrix
        jac[:, 2, :2] = rng.normal(size=(32, 2))
        jac[:, 2, 2] = rng.uniform(0.5, 1.5, 32)
        assert plane_leak(base, jac).max() <= 1e-12
        np.testing.assert_allclose(cs_area(base, jac), base.lambda_s * jac[:, 2, 2], rtol=1e-10)

    def test_cone_of_the_linear_map(self, base):
        jac = np.eye(3)
        jac[:2, :2] = base.matrix
        growth, ratio = cone_image(base, jac[None], 0.2)
        assert growth[0] > 3.0
        assert ratio[0] < 0.2 * base.lambda_s * 2
