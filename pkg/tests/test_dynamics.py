import numpy as np
import pytest

from dynamics import (
    ClassifyParams,
    classify_basin,
    classify_points,
    cone_check,
    cs_area_jacobian,
    cs_exponent_batch,
    fd_jacobian,
    grow_unstable_curve,
    iterate_orbit,
    iterate_points,
    lyapunov_batch,
    lyapunov_spectrum,
    sample_on_curve,
)
from errors import ClassifyParamsError, ProbeParameterError, UnstableDiskError
from surgery import Stage, sample_for
from torus import Point3

SMALL = ClassifyParams(n_transient=200, window=400, majority=0.9, t_tol=1 / 24, n_max=2_000)


class TestOrbits:
    def test_orbit_matches_batch(self, f, rng):
        p = Point3.from_array(rng.uniform(0, 1, 3))
        orbit = iterate_orbit(f, p, 5, keep_orbit=True)
        assert len(orbit) == 6 and orbit[0] == p
        end = iterate_points(f, p.as_array()[None, :], 5)[0]
        assert orbit[-1] == Point3.from_array(end)
        assert iterate_orbit(f, p, 5) == orbit[-1]

    def test_negative_length(self, f):
        with pytest.raises(ProbeParameterError):
            iterate_orbit(f, Point3.of(0.1, 0.2, 0.3), -1)


class TestJacobians:
    @pytest.mark.parametrize("stage", list(Stage))
    def test_analytic_matches_finite_differences(self, layered, stage, rng):
        fmap = layered.with_stage(stage)
        pts = sample_for(fmap, 60, rng)
        _, jac = fmap.step(pts, want_jacobian=True)
        fd = fd_jacobian(fmap, pts)
        err = np.linalg.norm(jac - fd, axis=(1, 2)) / np.maximum(np.linalg.norm(jac, axis=(1, 2)), 1.0)
        assert err.max() <= 1e-6


class TestCsArea:
    def test_contracting_away_from_bumps(self, f0):
        area = cs_area_jacobian(f0, Point3.of(0.5, 0.5, 0.0))
        assert area == pytest.approx(f0.base.lambda_s * np.exp(-f0.skew.profile.nu), rel=1e-9)


class TestLyapunov:
    def test_top_exponent_is_log_lambda_u(self, f, rng):
        mean, err, iters = lyapunov_batch(f, rng.uniform(0, 1, (4, 3)), 2_000, rng_seed=1)
        assert iters == 2_000
        np.testing.assert_allclose(mean[:, 0], f.base.log_lambda_u, rtol=1e-2)
        assert (np.diff(mean, axis=-1) <= 0).all()
        assert err.shape == (4, 3)

    def test_single_point_wrapper(self, f0):
        est = lyapunov_spectrum(f0, Point3.of(0.3, 0.6, 0.1), 1_000)
        assert est.exponents[0] == pytest.approx(f0.base.log_lambda_u, rel=1e-2)
        assert est.exponents[0] >= est.exponents[1] >= est.exponents[2]

    def test_budget_checked(self, f):
        with pytest.raises(ProbeParameterError):
            lyapunov_batch(f, np.zeros((1, 3)), 50, reorth_period=10)

    def test_cs_exponent_negative_on_circles(self, f0, rng):
        pts = rng.uniform(0, 1, (20, 3))
        pts[:, 2] = rng.integers(0, f0.k, 20) / f0.k
        assert (cs_exponent_batch(f0, pts, 500) < 0).all()


class TestCones:
    @pytest.mark.parametrize("stage", [Stage.F0, Stage.F1])
    def test_cone_invariant(self, layered, stage):
        report = cone_check(layered.with_stage(stage), samples=2_000, rng_seed=5)
        assert report.passed, (report.min_growth, report.max_ratio)
        assert report.min_growth >= 3.0

    def test_aperture_range(self, f):
        with pytest.raises(ProbeParameterError):
            cone_check(f, samples=10, aperture=1.5)


class TestUnstableCurves:
    def test_grows_to_target(self, f0):
        curve, gaps, it = grow_unstable_curve(f0, np.array([0.3, 0.6, 0.1]))
        assert gaps.sum() >= 1.0
        assert gaps.max() <= 0.02
        assert it == 4
        assert len(curve) == len(gaps) + 1

    def test_budget_exhausted(self, f0):
        with pytest.raises(UnstableDiskError):
            grow_unstable_curve(f0, np.array([0.3, 0.6, 0.1]), max_grow=1)

    def test_sample_on_curve_stays_on_segments(self, rng):
        curve = np.array([[0.1, 0.1, 0.1], [0.2, 0.1, 0.1], [0.2, 0.3, 0.1]])
        gaps = np.array([0.1, 0.2])
        pts = sample_on_curve(curve, gaps, 200, rng)
        on_first = np.isclose(pts[:, 1], 0.1) & (pts[:, 0] >= 0.1 - 1e-12) & (pts[:, 0] <= 0.2 + 1e-12)
        on_second = np.isclose(pts[:, 0], 0.2) & (pts[:, 1] >= 0.1 - 1e-12) & (pts[:, 1] <= 0.3 + 1e-12)
        assert (on_first | on_second).all()


class TestClassify:
    def test_params_validation(self):
        with pytest.raises(ClassifyParamsError):
            ClassifyParams(window=10)
        with pytest.raises(ClassifyParamsError):
            ClassifyParams(n_transient=100, window=400, n_max=300)
        with pytest.raises(ClassifyParamsError):
            ClassifyParams(majority=0.5)
        with pytest.raises(ClassifyParamsError):
            ClassifyParams(t_tol=0.1).check_k(6)
        assert ClassifyParams.for_k(12).t_tol == pytest.approx(1 / 48)

    def test_points_on_circles_settle_there(self, f0, rng):
        pts = rng.uniform(0, 1, (12, 3))
        circles = np.arange(12) % f0.k
        pts[:, 2] = circles / f0.k
        labels, settle = classify_points(f0, pts, SMALL)
        np.testing.assert_array_equal(labels, circles + 1)
        assert (settle == SMALL.n_transient + SMALL.window).all()

    def test_basin_label(self, f0):
        label = classify_basin(f0, Point3.of(0.3, 0.6, 2 / 6), SMALL)
        assert label.attractor == 3 and label.circle == 2 and label.code == 3
        assert label.settle_time == 600

    def test_unresolved_when_budget_too_short(self, f0):
        # mid-interval fibers only move while the base visits a bump
        params = ClassifyParams(n_transient=0, window=400, majority=0.9, t_tol=1 / 24, n_max=400)
        labels, settle = classify_points(f0, np.array([[0.3, 0.6, 0.5 / 6]]), params)
        assert labels[0] == 0
        assert settle[0] == params.n_max

    def test_labels_independent_of_batch(self, f, rng):
        pts = rng.uniform(0, 1, (16, 3))
        whole, _ = classify_points(f, pts, SMALL)
        halves = np.concatenate([classify_points(f, pts[:5], SMALL)[0], classify_points(f, pts[5:], SMALL)[0]])
        np.testing.assert_array_equal(whole, halves)
