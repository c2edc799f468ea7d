import numpy as np
import pytest

from errors import (
    BumpRadiusError,
    DivisibilityError,
    DuplicateSpecialPointError,
    GainCeilingError,
    PropertyViolationError,
    SpecialPointIndexError,
)
from kan import SkewMap, apply_f0, circle_gap, field_G, field_U, make_profile, sample_points, validate_P
from surgery import sample_for
from torus import Point2, Point3, torus_delta, torus_distance


class TestProfile:
    def test_defaults(self, skew):
        prof = skew.profile
        assert prof.k == 6
        assert [prof.point(m).as_array().tolist() for m in range(5)] == [[0.0, j / 7] for j in range(5)]

    def test_chain_indices(self, skew):
        prof = skew.profile
        assert [int(prof.p_hat(i)) for i in range(6)] == [0, 1, 0, 1, 0, 1]
        assert [int(prof.q_hat(i)) for i in range(6)] == [1, 0, 1, 0, 1, 0]
        # hole at circle i sits over b_(i-1 mod 3)
        assert [int(prof.r_hat(i, 0)) for i in range(6)] == [4, 2, 3, 4, 2, 3]
        assert [int(prof.r_hat(i, 1)) for i in range(6)] == [2, 3, 4, 2, 3, 4]

    @pytest.mark.parametrize(
        "kwargs, error",
        [
            ({"k": 4}, DivisibilityError),
            ({"k": 9}, DivisibilityError),
            ({"special_indices": (0, 1, 2, 3, 3)}, DuplicateSpecialPointError),
            ({"special_indices": (0, 1, 2, 3, 7)}, SpecialPointIndexError),
            ({"special_indices": (0, 1, 2, 3)}, SpecialPointIndexError),
            ({"g_plus": 0.06}, GainCeilingError),
            ({"rho_b": 0.08}, BumpRadiusError),
        ],
    )
    def test_rejects(self, base, kwargs, error):
        with pytest.raises(error):
            make_profile(base, **kwargs)

    def test_k_twelve_builds(self, base):
        assert make_profile(base, k=12).k == 12


class TestFields:
    def test_log_rate_at_special_points(self, skew):
        prof = skew.profile
        nu, g = prof.nu, prof.g_plus
        for i in range(prof.k):
            assert field_G(prof, i, prof.point(prof.p_hat(i))) == pytest.approx(g)
            assert field_G(prof, i, prof.point(prof.r_hat(i, 1))) == pytest.approx(g)
            assert field_G(prof, i, prof.point(prof.r_hat(i, 0))) == pytest.approx(0.0, abs=1e-15)
            assert field_G(prof, i, prof.point(prof.q_hat(i))) == pytest.approx(-nu)
            assert field_G(prof, i, prof.point(prof.r_hat(i, -1))) == pytest.approx(-nu)
        assert field_G(prof, 0, Point2(0.5, 0.5)) == pytest.approx(-nu)

    def test_mid_drift_signs(self, skew):
        prof = skew.profile
        for i in range(prof.k):
            assert field_U(prof, i, prof.point(prof.p_hat(i))) > 0
            assert field_U(prof, i, prof.point(prof.q_hat(i))) < 0
        assert field_U(prof, 0, Point2(0.5, 0.5)) == 0.0

    def test_fiber_derivative_on_circles(self, skew, rng):
        prof = skew.profile
        xy = sample_points(prof, 200, rng)[:, :2]
        for i in range(prof.k):
            pts = np.column_stack([xy, np.full(len(xy), i / prof.k)])
            _, jac = skew.step(pts, want_jacobian=True)
            np.testing.assert_allclose(jac[:, 2, 2], np.exp(field_G(prof, i, xy)), rtol=1e-12)


class TestSkewMap:
    def test_circles_invariant(self, skew, rng):
        prof = skew.profile
        xy = sample_points(prof, 500, rng)[:, :2]
        for i in range(prof.k):
            img, _ = skew.step(np.column_stack([xy, np.full(len(xy), i / prof.k)]))
            assert circle_gap(img[:, 2], i / prof.k).max() <= 1e-12

    def test_base_is_the_linear_map(self, skew, rng):
        pts = rng.uniform(0, 1, (100, 3))
        img, jac = skew.step(pts, want_jacobian=True)
        expected = (pts[:, :2] @ skew.base.matrix.T) % 1.0
        assert np.abs(torus_delta(img[:, :2], expected)).max() < 1e-12
        np.testing.assert_array_equal(jac[:, :2, 2], 0.0)

    def test_special_fibers_fixed_on_holes(self, skew):
        prof = skew.profile
        for i in range(prof.k):
            hole = Point3(prof.hole_base(i), i / prof.k)
            img, _ = apply_f0(skew, hole)
            assert torus_distance(img, hole) < 1e-12

    def test_upward_drift_over_hole_bases(self, skew):
        prof = skew.profile
        for i in range(prof.k):
            for j in (0, 1):
                x = prof.point(prof.r_hat(i, j)).as_array()
                t = (i + np.linspace(0.05, 0.95, 19)) / prof.k
                img, _ = skew.step(np.column_stack([np.repeat(x[None], len(t), axis=0), t]))
                assert (torus_delta(img[:, 2], t) > 0).all()

    def test_validate_p_passes(self, skew):
        report = validate_P(skew, samples=2_000, rng_seed=1)
        assert report.passed, [(c.name, c.observed) for c in report.failures()]
        assert {c.name for c in report.checks} >= {"P1", "P2", "V0", "PH", "P3", "P4", "P5"}

    def test_broken_profile_fails_construction(self, base):
        # exp(-0.8) < 1/2 near every circle
        prof = make_profile(base, nu=0.8)
        report = validate_P(SkewMap(base, prof, validate=False), samples=500)
        assert not report.get("P2").passed
        with pytest.raises(PropertyViolationError):
            SkewMap(base, prof)

    def test_sample_for_covers_specials(self, skew, rng):
        pts = sample_for(skew, 1_000, rng)
        d = np.linalg.norm(torus_delta(pts[:, None, :2], skew.profile.specials[None]), axis=-1).min(axis=-1)
        assert (d < skew.profile.rho_b).mean() >= 0.5
