#!/usr/bin/env python3
"""Run the acceptance checks in order and print a pass/fail line for each.

Full budgets take most of an hour on a workstation; --quick cuts every
simulation budget so the whole list finishes in minutes (several criteria
are then only indicative).
"""

import argparse
import sys
import time
from fractions import Fraction
from itertools import product
from pathlib import Path

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from basins import (
    SliceKind,
    SliceSpec,
    hole_crossing_witness,
    far_label_search,
    intermingle_report,
    measure_report,
    sweep_box3,
    sweep_raster,
)
from dynamics import ClassifyParams, fd_jacobian, iterate_points, lyapunov_batch, unstable_disk_probe
from kan import SkewMap, make_profile, validate_P
from reports import default_palette, export_report, render_ppm
from surgery import Stage, default_da, default_push, make_layered, sample_for, scan_saddle_structure, validate_M, validate_R, volume_certificate
from torus import Point3, lattice_fixed_points, make_anosov, plane_leak

GOLDEN = Path(__file__).parent.parent / "tests" / "golden" / "f0_16x16.ppm"
MATRICES = [(8, 7, 1, 1), (6, 1, 5, 1), (7, 6, 1, 1), (4, 3, 5, 4), (2, 3, 3, 5)]


def build(stage: Stage):
    base = make_anosov(8, 7, 1, 1)
    skew = SkewMap(base, make_profile(base))
    eps = 0.02
    return make_layered(skew, default_da(eps), default_push(eps), stage)


def rational_fixed_points(a: int, b: int, c: int, d: int) -> set[tuple[Fraction, Fraction]]:
    """(A - I)^-1 n mod 1 over integer n in a box large enough to cover every class."""
    det = (a - 1) * (d - 1) - b * c
    span = abs(a - 1) + abs(b) + abs(c) + abs(d - 1)
    out = set()
    for n1, n2 in product(range(-span, span + 1), repeat=2):
        x1 = Fraction((d - 1) * n1 - b * n2, det)
        x2 = Fraction(-c * n1 + (a - 1) * n2, det)
        out.add((x1 % 1, x2 % 1))
    return out


def check_fixed_points(budget) -> tuple[bool, str]:
    for m in MATRICES:
        got = {(Fraction(p.x1).limit_denominator(1000), Fraction(p.x2).limit_denominator(1000)) for p in lattice_fixed_points(*m)}
        want = rational_fixed_points(*m)
        if got != want or len(got) != abs(m[0] + m[3] - 2):
            return False, f"matrix {m}: {len(got)} found, {len(want)} expected"
    return True, f"{len(MATRICES)} matrices match"


def check_jacobians(budget) -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    worst = 0.0
    for stage in Stage:
        fmap = build(stage)
        pts = sample_for(fmap, 100, rng)
        _, jac = fmap.step(pts, want_jacobian=True)
        fd = fd_jacobian(fmap, pts)
        err = np.linalg.norm(jac - fd, axis=(1, 2)) / np.maximum(np.linalg.norm(jac, axis=(1, 2)), 1.0)
        worst = max(worst, float(err.max()))
    return worst <= 1e-6, f"worst relative error {worst:.2e}"


def check_plane(budget) -> tuple[bool, str]:
    rng = np.random.default_rng(2)
    worst = 0.0
    for stage in Stage:
        fmap = build(stage)
        pts = sample_for(fmap, 10_000, rng)
        _, jac = fmap.step(pts, want_jacobian=True)
        worst = max(worst, float(plane_leak(fmap.base, jac).max()))
    return worst <= 1e-12, f"max u-leak {worst:.2e}"


def check_P(budget) -> tuple[bool, str]:
    fmap = build(Stage.F0)
    report = validate_P(fmap.skew, 10_000, 0)
    pts = sample_for(fmap.skew, 10_000, np.random.default_rng(3))
    _, jac = fmap.skew.step(pts, want_jacobian=True)
    lo, hi = float(jac[:, 2, 2].min()), float(jac[:, 2, 2].max())
    return report.passed and 0.6 <= lo and hi <= 1.4, f"dphi/dt in [{lo:.4f}, {hi:.4f}]"


def check_M(budget) -> tuple[bool, str]:
    fmap = build(Stage.F1)
    report = validate_M(fmap, 10_000, 0)
    want = 13 * fmap.base.lambda_s
    ders = [p.derivative for i in range(fmap.k) for p in scan_saddle_structure(fmap, i) if p.stability == "source"]
    ok = report.passed and all(abs(d - want) <= 1e-3 for d in ders)
    return ok, "; ".join(f"{c.name}={'ok' if c.passed else 'FAIL'}" for c in report.checks)


def check_R(budget) -> tuple[bool, str]:
    report = validate_R(build(Stage.F), budget["escape"], 0)
    return report.passed, f"{report.escaped}/{report.total} escaped, max {report.max_escape_iters}, N0={report.N0}"


def check_certificate(budget) -> tuple[bool, str]:
    cert = volume_certificate(build(Stage.F), budget["escape"], 0)
    return cert.passed, export_report(cert).replace("\n", " ")


def check_lyapunov(budget) -> tuple[bool, str]:
    fmap = build(Stage.F)
    rng = np.random.default_rng(4)
    mean, _, _ = lyapunov_batch(fmap, rng.uniform(0, 1, (10, 3)), budget["lyap"], 10, 0)
    top = float(np.abs(mean[:, 0] / fmap.base.log_lambda_u - 1).max())
    settled = rng.uniform(0, 1, (fmap.k, 3))
    settled[:, 2] = np.arange(fmap.k) / fmap.k
    settled = iterate_points(fmap, settled, 1_000)
    cs, _, _ = lyapunov_batch(fmap, settled, budget["lyap"] // 10, 10, 1)
    return top <= 0.01 and bool((cs[:, 1:] < 0).all()), f"top rel err {top:.2e}, max cs exponent {cs[:, 1].max():.4f}"


def check_probe(budget) -> tuple[bool, str]:
    fmap = build(Stage.F)
    prof = fmap.skew.profile
    fracs = []
    for i in range(fmap.k):
        seed = Point3(prof.point(prof.q_hat(i)), i / fmap.k)
        fracs.append(unstable_disk_probe(fmap, seed, budget["probe_points"], budget["probe_iters"], i).fraction_negative)
    return min(fracs) >= 0.99, "fractions " + ", ".join(f"{f:.3f}" for f in fracs)


def check_kan_baseline(budget) -> tuple[bool, str]:
    fmap = build(Stage.F0)
    res = budget["slice"]
    spec = SliceSpec(SliceKind.FIX_BASE1, 0.5, resolution=(res, res))
    raster = sweep_raster(fmap, spec, budget["params"], budget["workers"], 0, progress=True)
    report = intermingle_report(raster, (1, res // 16), 0.01, band_box=16)
    return report.criteria.get("bands_adjacent_pairs", False), str(report.criteria)


def check_full_basins(budget) -> tuple[bool, str]:
    fmap = build(Stage.F)
    n = budget["box"]
    grid = sweep_box3(fmap, (n, n, n), budget["params"], budget["workers"], 0, progress=True)
    m = measure_report(grid)
    ok = all(m.criteria().values())
    return ok, f"fractions {[round(f, 4) for f in m.fractions.values()]}, unresolved {m.unresolved:.4f}"


def check_witness(budget) -> tuple[bool, str]:
    fmap = build(Stage.F)
    hits = []
    for i in range(fmap.k):
        above, _ = hole_crossing_witness(fmap, i, budget["witness"], budget["params"], i, budget["workers"])
        hits.append(above.hits)
    far = far_label_search(fmap, 0, budget["far"], budget["params"], 0, workers=budget["workers"])
    return min(hits) > 0, f"upward crossings per hole {hits}; far label in band 0: {far.passed}"


def check_determinism(budget) -> tuple[bool, str]:
    fmap = build(Stage.F)
    spec = SliceSpec(SliceKind.FIX_BASE1, 0.5, resolution=(32, 32))
    params = budget["params"]
    one = sweep_raster(fmap, spec, params, workers=1, seed=0)
    four = sweep_raster(fmap, spec, params, workers=4, seed=0)
    pal = default_palette(fmap.k)
    same = render_ppm(one, pal) == render_ppm(four, pal) and export_report(intermingle_report(one)) == export_report(intermingle_report(four))
    return same, "workers 1 and 4 agree" if same else "outputs differ"


def golden_ppm() -> bytes:
    """F0 on the circle torus t = 1/3: the fiber step there is exactly zero, so every cell is label 3."""
    fmap = build(Stage.F0)
    spec = SliceSpec(SliceKind.FIX_FIBER, 1 / 3, resolution=(16, 16))
    raster = sweep_raster(fmap, spec, ClassifyParams(2_000, 400, 0.9, 1 / 24, 20_000), seed=7)
    return render_ppm(raster, default_palette(fmap.k))


def check_golden(budget) -> tuple[bool, str]:
    ppm = golden_ppm()
    if budget.get("write_golden"):
        GOLDEN.parent.mkdir(parents=True, exist_ok=True)
        GOLDEN.write_bytes(ppm)
        return True, f"golden written to {GOLDEN}"
    if not GOLDEN.is_file():
        return False, f"golden {GOLDEN} is missing; regenerate with --write-golden"
    same = GOLDEN.read_bytes() == ppm
    return same, "byte-identical" if same else "MISMATCH"


CHECKS = [
    ("fixed-point oracle", check_fixed_points),
    ("Jacobian correctness", check_jacobians),
    ("cs-plane invariance", check_plane),
    ("validate_P", check_P),
    ("validate_M", check_M),
    ("validate_R", check_R),
    ("volume certificate", check_certificate),
    ("Lyapunov cross-check", check_lyapunov),
    ("mostly-contracting probe", check_probe),
    ("Kan baseline", check_kan_baseline),
    ("full-map basins", check_full_basins),
    ("hole-crossing witness", check_witness),
    ("determinism", check_determinism),
    ("render golden", check_golden),
]


def budgets(quick: bool, workers: int) -> dict:
    if quick:
        return {
            "escape": 1_200, "lyap": 20_000, "probe_points": 100, "probe_iters": 200,
            "slice": 64, "box": 12, "witness": 60, "far": 2_000, "workers": workers,
            "params": ClassifyParams(2_000, 400, 0.9, 1 / 24, 20_000),
        }
    return {
        "escape": 60_000, "lyap": 1_000_000, "probe_points": 1_000, "probe_iters": 500,
        "slice": 256, "box": 64, "witness": 200, "far": 1_000_000, "workers": workers,
        "params": ClassifyParams(),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description="Run the acceptance checks")
    parser.add_argument("--quick", action="store_true", help="Reduced budgets")
    parser.add_argument("--workers", type=int, default=4, help="Worker processes for sweeps")
    parser.add_argument("--only", type=int, nargs="*", help="Run only these check numbers (1-based)")
    parser.add_argument("--write-golden", action="store_true", help="Store the golden PPM instead of comparing against it")
    args = parser.parse_args()

    budget = budgets(args.quick, args.workers)
    budget["write_golden"] = args.write_golden
    selected = [(n, name, fn) for n, (name, fn) in enumerate(CHECKS, 1) if not args.only or n in args.only]
    failures = 0
    for i, (n, name, fn) in enumerate(selected):
        print(f"[{i + 1}/{len(selected)}] {n:2d}. {name}... ", end="", flush=True)
        start = time.monotonic()
        ok, detail = fn(budget)
        print(f"{'PASS' if ok else 'FAIL'} ({time.monotonic() - start:.1f}s) {detail}")
        failures += not ok

    print(f"\nCompleted: {len(selected) - failures} passed, {failures} failed")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
