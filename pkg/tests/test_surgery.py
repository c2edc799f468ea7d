import logging
import re

import numpy as np
import pytest

from dynamics import cs_area_jacobian
from errors import PushStrengthError, StageError, SupportOverlapError, ZetaError
from surgery import (
    DAParams,
    EscapeReport,
    PushParams,
    Stage,
    apply_stage,
    assemble_certificate,
    calibrate_zeta,
    check_axis_structure,
    default_da,
    default_push,
    escape_run,
    make_layered,
    sample_ball,
    sample_for,
    scan_saddle_structure,
    track_visits,
    validate_M,
    validate_R,
    volume_certificate,
    with_hole_cores,
)
from torus import plane_leak, torus_delta


class TestParams:
    def test_defaults(self):
        da = default_da(0.02)
        assert da.s0 == pytest.approx(0.54 * 0.02 / 12)
        assert (da.theta_inner, da.theta_outer, da.zeta) == pytest.approx((0.02 / 16, 0.02, 0.016))
        assert da.diffeo_margin >= 0.1
        push = default_push(0.02)
        assert (push.delta, push.inner, push.outer) == pytest.approx((0.0025, 0.005, 0.01))

    def test_zeta_must_lie_inside_eps(self):
        with pytest.raises(ZetaError, match=r"0 < zeta < eps = 0.02"):
            default_da(0.02, zeta=0.02)

    def test_cutoff_order(self):
        with pytest.raises(SupportOverlapError):
            DAParams(eps=0.02, delta_DA=12, s0=1e-3, theta_inner=0.01, theta_outer=0.005, zeta=0.01)

    def test_push_rejects_negative(self):
        with pytest.raises(PushStrengthError):
            PushParams(-0.001, 0.005, 0.01)

    def test_stage_needs_parameters(self, skew):
        with pytest.raises(StageError):
            make_layered(skew, None, None, Stage.F1)
        with pytest.raises(StageError):
            make_layered(skew, default_da(), None, "F")
        assert make_layered(skew, None, None, "F0").stage is Stage.F0

    def test_strict_push_strength(self, skew):
        with pytest.raises(PushStrengthError):
            make_layered(skew, default_da(), PushParams(0.01, 0.005, 0.01))

    def test_lenient_mode_warns(self, skew, caplog):
        with caplog.at_level(logging.WARNING, logger="surgery"):
            fmap = make_layered(skew, default_da(), PushParams(0.01, 0.005, 0.01), strict=False)
        assert fmap.push.delta == 0.01
        assert "PushStrengthError" in caplog.text


class TestLayers:
    def test_stages_agree_away_from_holes(self, f0, f1, f, rng):
        pts = rng.uniform(0, 1, (500, 3))
        far = f.hole_radii(pts).min(axis=-1) > 0.03
        img0, _ = f0.step(pts[far])
        # f0 images of far points can still land in a hole ball; compare where they do not
        clear = f.hole_radii(img0).min(axis=-1) > 0.03
        for fmap in (f1, f):
            img, _ = fmap.step(pts[far])
            assert np.array_equal(img[clear], img0[clear])

    def test_hole_centers(self, f0, f1, f):
        eps = f.da.eps
        for i, hole in enumerate(f.holes):
            assert np.abs(torus_delta(apply_stage(f0, hole)[0].as_array(), hole.as_array())).max() < 1e-12
            assert np.abs(torus_delta(apply_stage(f1, hole)[0].as_array(), hole.as_array())).max() < 1e-12
            lifted = apply_stage(f, hole)[0].as_array()
            np.testing.assert_allclose(torus_delta(lifted, hole.as_array()), [0.0, 0.0, eps / 8], atol=1e-12)

    def test_surgery_moves_only_along_stable_leaves(self, f, rng):
        pts = sample_for(f, 2_000, rng)
        y0, _ = f.skew.step(pts)
        y, _ = f.step(pts)
        d = torus_delta(y, y0)
        u = d[:, :2] @ f.base.frame_inv[0]
        assert np.abs(u).max() <= 1e-12

    @pytest.mark.parametrize("stage", list(Stage))
    def test_plane_invariant(self, layered, stage, rng):
        fmap = layered.with_stage(stage)
        pts = sample_for(fmap, 2_000, rng)
        _, jac = fmap.step(pts, want_jacobian=True)
        assert plane_leak(fmap.base, jac).max() <= 1e-12

    def test_sample_ball(self, f, rng):
        pts = sample_ball(f, 2, 200, 0.01, rng)
        r = f.hole_radii(pts)[:, 2]
        assert r[0] == pytest.approx(0.0, abs=1e-15)
        assert (r < 0.01 + 1e-12).all()


class TestAxisStructure:
    def test_source_between_two_saddles(self, f1):
        eps = f1.da.eps
        for i in range(f1.k):
            points = scan_saddle_structure(f1, i)
            ok, msg = check_axis_structure(points, eps)
            assert ok, msg
            assert points[1].derivative == pytest.approx(13 * f1.base.lambda_s, abs=1e-6)
            assert points[0].s == pytest.approx(-points[2].s, rel=1e-6)

    def test_needs_f1(self, f):
        with pytest.raises(StageError):
            scan_saddle_structure(f, 0)

    def test_structure_checker(self):
        from surgery import AxisFixedPoint

        ok, _ = check_axis_structure([AxisFixedPoint(0.0, 1.5, "source")], 0.02)
        assert not ok
        inside = [AxisFixedPoint(-0.005, 0.5, "sink"), AxisFixedPoint(0.0, 1.5, "source"), AxisFixedPoint(0.005, 0.5, "sink")]
        ok, msg = check_axis_structure(inside, 0.02)
        assert not ok and "inside" in msg


class TestValidators:
    def test_validate_m(self, f1):
        report = validate_M(f1, samples=2_000, rng_seed=3)
        for name in ("M1", "M1-plane", "M2", "M3", "M4"):
            assert report.get(name).passed, report.get(name).observed
        assert not report.get("M3-L").gating
        dilatation = float(re.search(r"1\+xi = ([0-9.]+)", report.get("M5").observed).group(1))
        assert dilatation >= round(cs_area_jacobian(f1, f1.holes[0]), 4) - 1e-4

    def test_hole_cores_join_the_samples(self, f1, rng):
        pts = sample_for(f1, 50, rng)
        both = with_hole_cores(f1, pts)
        assert len(both) == 50 + 11 * f1.k
        radii = f1.hole_radii(both[50:]).min(axis=-1)
        assert (radii[:: 11] <= 1e-12).all()
        assert (radii <= f1.da.theta_inner / 2 / f1.base.lambda_s + 1e-9).all()

    def test_calibrate_zeta_far_ladder(self, f1):
        # beyond the DA ball only the linear contraction remains
        zeta, factor = calibrate_zeta(f1, samples=500, rng_seed=2, ladder=(5.0,))
        assert zeta == pytest.approx(5 * f1.da.eps)
        assert factor <= 0.5

    def test_validate_m_needs_f1(self, f):
        with pytest.raises(StageError):
            validate_M(f)

    def test_no_push_never_escapes(self, skew):
        da = default_da()
        fmap = make_layered(skew, da, PushParams(0.0, da.eps / 4, da.eps / 2), Stage.F)
        report = validate_R(fmap, samples=60, rng_seed=0, max_iters=40, gap_horizon=40)
        assert not report.passed
        np.testing.assert_allclose(report.witness, fmap.hole_arr[0], atol=1e-12)

    def test_hole_center_escape_times(self, skew):
        da = default_da()
        fmap = make_layered(skew, da, PushParams(0.0, da.eps / 4, da.eps / 2), Stage.F)
        stats = track_visits(fmap, fmap.hole_arr, np.arange(fmap.k), da.eps / 2, da.zeta, 30)
        assert (stats.escape_times == -1).all()
        assert stats.n0 == 31
        assert stats.n1_censored and stats.n1 == 30

    def test_escape_run_starts_at_centers(self, f, rng):
        stats, starts = escape_run(f, 12, rng, 5)
        assert len(starts) == 12
        np.testing.assert_allclose(torus_delta(starts[0], f.hole_arr[0]), 0.0, atol=1e-15)
        assert stats.escape_times.shape == (12,)


class TestCertificate:
    def test_assemble(self):
        cert = assemble_certificate(2, 10, 1.5, 0.4)
        assert cert.passed and cert.status == "pass"
        assert not assemble_certificate(10, 1, 1.5, 0.4).passed
        assert not assemble_certificate(0, 50, 1.0, 0.6).passed
        huge = assemble_certificate(5_000, 1, 1.5, 0.5)
        assert huge.product == float("inf") and not huge.passed

    def test_measured_gap_compares_product_with_one(self):
        cert = assemble_certificate(3, 7, 1.5, 0.2, n1_censored=False)
        assert cert.product == pytest.approx(1.5**3 * 0.2**7)
        assert cert.product < 1 and cert.status == "pass"
        over = assemble_certificate(40, 7, 1.5, 0.2, n1_censored=False)
        assert over.product > 1 and over.status == "fail"

    def test_censored_gap_is_only_a_bound(self):
        cert = assemble_certificate(79, 1_000, 1.55, 0.2, n1_censored=True, horizon=1_000)
        assert cert.product < 1
        assert cert.status == "censored" and not cert.passed

    def test_unsurgered_map_is_censored(self, f0):
        cert = volume_certificate(f0, samples=2_000, horizon=100)
        assert cert.N0 == 0 and cert.N1 == 100 and cert.n1_censored
        assert cert.outside_factor <= 1 / 3
        assert cert.status == "censored" and not cert.passed

    def test_uses_supplied_escape_report(self, f):
        escape = EscapeReport({}, 0, 0, 0, N0=3, N1=7, n1_censored=False, passed=True, witness=None)
        cert = volume_certificate(f, samples=500, escape=escape)
        assert (cert.N0, cert.N1) == (3, 7)
        assert cert.product == pytest.approx(cert.max_dilatation**3 * cert.outside_factor**7)
        assert cert.passed == (cert.product < 1 and cert.outside_factor <= 0.5)

    def test_dilatation_reaches_the_hole_centers(self, f1):
        escape = EscapeReport({}, 0, 0, 0, N0=1, N1=1, n1_censored=False, passed=True, witness=None)
        cert = volume_certificate(f1, samples=200, escape=escape)
        peak = cs_area_jacobian(f1, f1.holes[0])
        assert peak == pytest.approx(13 * f1.base.lambda_s, rel=1e-6)
        assert cert.max_dilatation >= peak
