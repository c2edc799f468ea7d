import pytest

from errors import ProbeParameterError, StageError
from probes import skeleton_s1_probe, skeleton_s2_probe, stable_set_probe


class TestStableSet:
    def test_stays_on_the_stable_segment(self, f1):
        report = stable_set_probe(f1, 0, samples=50, n_iters=200, rng_seed=4)
        assert report.name == "stable-set-0" and report.samples == 50
        assert report.metrics["max_u_step"] <= 1e-12
        assert report.metrics["min_hole_radius"] >= f1.da.eps
        assert 0.0 <= report.metrics["settled_fraction"] <= 1.0

    def test_needs_surgery(self, f0):
        with pytest.raises(StageError):
            stable_set_probe(f0, 0, samples=5, n_iters=5)


class TestSkeleton:
    @pytest.mark.parametrize("i", [0, 3])
    def test_unstable_segment_stays_in_its_torus(self, f1, i):
        report = skeleton_s2_probe(f1, i, n_points=64, n_iters=100)
        assert report.metrics["max_torus_drift"] <= 1e-12
        assert report.metrics["half_eps"] == pytest.approx(f1.da.eps / 2)

    def test_s2_needs_surgery(self, f0):
        with pytest.raises(StageError):
            skeleton_s2_probe(f0, 0)

    def test_s1_sample_count(self, f):
        with pytest.raises(ProbeParameterError):
            skeleton_s1_probe(f, samples=0)

    def test_s1_accounting(self, f):
        report = skeleton_s1_probe(f, samples=2, rng_seed=1, grow_length=1.0)
        assert report.samples == 2
        assert report.metrics["grow_length"] == 1.0
        assert report.passed == (report.metrics["crossing_fraction"] == 1.0)
        assert (report.witness is None) == report.passed
