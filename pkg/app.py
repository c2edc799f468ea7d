"""kan-lab command line: build, validate, probe, sweep and certify the three-stage map."""

import argparse
import hashlib
import logging
import platform
import sys
import time
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

import db_schema
from basins import (
    hole_crossing_witness,
    far_label_search,
    intermingle_report,
    load_raster,
    map_fingerprint,
    measure_report,
    save_raster,
    sweep_box3,
    sweep_raster,
)
from config import DEFAULTS_VERSION, RunConfig, build_map, config_hash, load_config, to_lines
from dynamics import lyapunov_batch, unstable_disk_probe
from errors import ConfigError, GoldenMissingError, InvalidParameterError, KanLabError
from kan import validate_P
from probes import skeleton_s1_probe, skeleton_s2_probe, stable_set_probe
from reports import PropertyReport, default_palette, export_report, export_table, render_ppm
from surgery import LayeredMap, Stage, validate_M, validate_R, volume_certificate
from torus import Point3

logger = logging.getLogger("kan_lab")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
LYAP_TOLERANCE = 0.01
PROBE_THRESHOLD = 0.99

console = Console()


def setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True)],
        force=True,
    )


def _version() -> str:
    try:
        return metadata.version("kan-lab")
    except metadata.PackageNotFoundError:
        return "dev"


class Run:
    """Output directory, manifest and results-store bookkeeping for one subcommand."""

    def __init__(self, subcommand: str, cfg: RunConfig, fmap: LayeredMap) -> None:
        self.subcommand = subcommand
        self.cfg = cfg
        self.fmap = fmap
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.started = time.monotonic()
        self.conn = db_schema.init_db(self.out / db_schema.DB_NAME)
        self.run_id = db_schema.record_run(
            self.conn, subcommand, config_hash(cfg), cfg.seed, cfg.workers, fmap.stage.value, map_fingerprint(fmap)
        )
        self.write_text("config.txt", "\n".join(to_lines(cfg)) + "\n")
        self.write_text("manifest.txt", self._manifest())

    def _manifest(self) -> str:
        fields = {
            "subcommand": self.subcommand,
            "config_hash": config_hash(self.cfg),
            "map_fingerprint": map_fingerprint(self.fmap),
            "stage": self.fmap.stage.value,
            "seed": self.cfg.seed,
            "workers": self.cfg.workers,
            "defaults_version": DEFAULTS_VERSION,
            "kan_lab_version": _version(),
            "numpy_version": np.__version__,
            "python_version": platform.python_version(),
        }
        return "".join(f"{k}={v}\n" for k, v in fields.items())

    def write_bytes(self, name: str, data: bytes) -> Path:
        path = self.out / name
        path.write_bytes(data)
        db_schema.record_artifact(self.conn, self.run_id, str(path), hashlib.sha256(data).hexdigest())
        logger.debug("wrote %s", path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode())

    def report(self, name: str, report, passed: bool | None) -> None:
        body = export_report(report)
        failed = [c.name for c in report.failures()] if isinstance(report, PropertyReport) else None
        self.write_text(name, body)
        db_schema.record_report(self.conn, self.run_id, name, body, passed, failed)

    def finish(self, status: int) -> int:
        db_schema.finish_run(self.conn, self.run_id, status, time.monotonic() - self.started)
        self.conn.close()
        return status


def print_property_report(report: PropertyReport) -> None:
    table = Table(title=f"{report.title} checks")
    table.add_column("check")
    table.add_column("result")
    table.add_column("margin", justify="right")
    table.add_column("observed")
    for c in report.checks:
        result = "[green]pass[/green]" if c.passed else "[red]FAIL[/red]"
        if not c.gating:
            result = "[dim]info[/dim]"
        table.add_row(c.name, result, f"{c.margin:.4g}", c.observed)
    console.print(table)


def print_pairs(title: str, pairs: dict) -> None:
    table = Table(title=title, show_header=False)
    for k, v in pairs.items():
        table.add_row(str(k), f"{v:.6g}" if isinstance(v, float) else str(v))
    console.print(table)


# --- subcommands -------------------------------------------------------------


def cmd_show(run: Run) -> int:
    fmap = run.fmap
    base, prof = fmap.base, fmap.skew.profile
    print_pairs("base", {
        "matrix": f"({base.a}, {base.b}; {base.c}, {base.d})",
        "lambda_u": base.lambda_u,
        "lambda_s": base.lambda_s,
        "fixed points": len(base.fixed_pts),
    })
    print_pairs("profile", {"k": prof.k, "specials": prof.special_indices, "nu": prof.nu, "g_plus": prof.g_plus})
    holes = Table(title="holes r^i_0")
    for col in ("i", "x1", "x2", "t"):
        holes.add_column(col)
    for i, h in enumerate(fmap.holes):
        holes.add_row(str(i), f"{h.x1:.6f}", f"{h.x2:.6f}", f"{h.t:.6f}")
    console.print(holes)
    print_pairs("run", {"stage": fmap.stage.value, "fingerprint": map_fingerprint(fmap)})
    return EXIT_OK


def cmd_validate(run: Run) -> int:
    cfg, fmap = run.cfg, run.fmap
    ok = True
    p = validate_P(fmap.skew, cfg.samples, cfg.seed)
    print_property_report(p)
    run.report("report_P.csv", p, p.passed)
    ok &= p.passed
    if fmap.stage in (Stage.F1, Stage.F):
        m = validate_M(fmap.with_stage(Stage.F1), cfg.samples, cfg.seed)
        print_property_report(m)
        run.report("report_M.csv", m, m.passed)
        ok &= m.passed
    if fmap.stage is Stage.F:
        r = validate_R(fmap, cfg.samples, cfg.seed, cfg.escape_iters, cfg.horizon)
        print_pairs("R", {"escaped": f"{r.escaped}/{r.total}", "max escape": r.max_escape_iters, "N0": r.N0, "N1": r.N1})
        run.report("report_R.txt", r, r.passed)
        ok &= r.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_lyap(run: Run) -> int:
    cfg, fmap = run.cfg, run.fmap
    pts = np.random.default_rng(cfg.seed).uniform(0.0, 1.0, (cfg.lyap_points, 3))
    mean, err, iters = lyapunov_batch(fmap, pts, cfg.lyap_n, cfg.lyap_reorth, cfg.seed)
    target = fmap.base.log_lambda_u
    rows = [[*p, *m, *e, iters] for p, m, e in zip(pts, mean, err)]
    run.write_text(
        "lyap.csv",
        export_table(["x1", "x2", "t", "exp1", "exp2", "exp3", "err1", "err2", "err3", "iterations"], rows),
    )
    worst = float(np.abs(mean[:, 0] - target).max()) / target
    print_pairs("Lyapunov", {"log lambda_u": target, "worst relative top error": worst, "iterations": iters})
    return EXIT_OK if worst <= LYAP_TOLERANCE else EXIT_FAIL


def cmd_probe(run: Run) -> int:
    cfg, fmap = run.cfg, run.fmap
    prof = fmap.skew.profile
    rows, ok = [], True
    for i in range(fmap.k):
        seed = Point3(prof.point(prof.q_hat(i)), i / fmap.k)
        res = unstable_disk_probe(fmap, seed, cfg.probe_points, cfg.probe_iters, cfg.seed + i)
        rows.append([i, res.fraction_negative, res.curve_length, res.grow_iters])
        ok &= res.fraction_negative >= PROBE_THRESHOLD
    run.write_text("probe.csv", export_table(["circle", "fraction_negative", "curve_length", "grow_iters"], rows))
    print_pairs("unstable-disk probe", {f"circle {r[0]}": r[1] for r in rows})
    return EXIT_OK if ok else EXIT_FAIL


def _check_golden(run: Run, ppm: bytes, golden: Path | None, write_golden: bool) -> dict[str, bool]:
    if golden is None:
        return {}
    if write_golden:
        golden.parent.mkdir(parents=True, exist_ok=True)
        golden.write_bytes(ppm)
        logger.info("golden file written to %s", golden)
        return {"golden_match": True}
    if not golden.is_file():
        raise GoldenMissingError(f"golden file {golden} does not exist")
    same = golden.read_bytes() == ppm
    logger.info("golden comparison against %s: %s", golden, "match" if same else "MISMATCH")
    return {"golden_match": same}


@dataclass
class SweepVerdict:
    criteria: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.criteria.values())


def _finish_sweep(run: Run, title: str, measure, report, extra: dict[str, bool]) -> int:
    """Every hard criterion, the golden comparison included, gates the exit status."""
    verdict = SweepVerdict({**measure.criteria(run.cfg.min_fraction, run.cfg.max_unresolved), **report.criteria, **extra})
    run.report("criteria.txt", verdict, verdict.passed)
    print_pairs(title, {**{f"label {i}": f for i, f in measure.fractions.items()}, "unresolved": measure.unresolved})
    print_pairs("criteria", verdict.criteria)
    return EXIT_OK if verdict.passed else EXIT_FAIL


def cmd_sweep(run: Run, args: argparse.Namespace) -> int:
    cfg, fmap = run.cfg, run.fmap
    params = cfg.classify_params()
    if args.box:
        grid = sweep_box3(fmap, cfg.grid(), params, cfg.workers, cfg.seed, cfg.sweep_jitter, progress=True)
        measure = measure_report(grid)
        run.report("measure.txt", measure, None)
        report = intermingle_report(grid, cfg.scales, cfg.min_fraction)
        run.report("intermingle.csv", report, report.passed)
        return _finish_sweep(run, "box measure", measure, report, {})
    raster = sweep_raster(fmap, cfg.slice_spec(), params, cfg.workers, cfg.seed, cfg.sweep_jitter, progress=True)
    ppm = render_ppm(raster, default_palette(raster.k))
    run.write_bytes("basins.ppm", ppm)
    save_raster(raster, run.out / "raster.npz")
    measure = measure_report(raster)
    run.report("measure.txt", measure, None)
    report = intermingle_report(raster, cfg.scales, cfg.min_fraction)
    run.report("intermingle.csv", report, report.passed)
    rows = [[r, c, int(raster.labels[r, c])] for r in range(raster.labels.shape[0]) for c in range(raster.labels.shape[1])]
    run.write_text("labels.csv", export_table(["row", "col", "label"], rows))
    golden = _check_golden(run, ppm, args.golden, args.write_golden)
    return _finish_sweep(run, "slice measure", measure, report, golden)


def cmd_intermingle(run: Run, args: argparse.Namespace) -> int:
    cfg = run.cfg
    if args.labels is not None:
        raster = load_raster(args.labels)
    else:
        raster = sweep_raster(run.fmap, cfg.slice_spec(), cfg.classify_params(), cfg.workers, cfg.seed, cfg.sweep_jitter, progress=True)
    report = intermingle_report(raster, cfg.scales, cfg.min_fraction)
    run.report("intermingle.csv", report, report.passed)
    print_pairs("intermingling", report.criteria)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_certify(run: Run) -> int:
    cfg = run.cfg
    cert = volume_certificate(run.fmap, cfg.samples, cfg.seed, horizon=cfg.horizon, max_horizon=cfg.max_horizon)
    run.report("certificate.txt", cert, cert.passed)
    print_pairs("volume certificate", {
        "N0": cert.N0,
        "N1": f"{cert.N1}{' (lower bound, censored)' if cert.n1_censored else ''}",
        "max dilatation": cert.max_dilatation,
        "outside factor": cert.outside_factor,
        "product": cert.product,
        "status": cert.status,
    })
    return EXIT_OK if cert.passed else EXIT_FAIL


def cmd_skeleton(run: Run) -> int:
    cfg, fmap = run.cfg, run.fmap
    if fmap.stage is Stage.F0:
        raise ConfigError("skeleton probes need stage F1 or F")
    reports = [stable_set_probe(fmap, i, rng_seed=cfg.seed) for i in range(fmap.k)]
    reports.append(skeleton_s1_probe(fmap, rng_seed=cfg.seed))
    reports += [skeleton_s2_probe(fmap, i) for i in range(fmap.k)]
    rows = [[r.name, r.passed, *(f"{k}={v:.6g}" for k, v in r.metrics.items())] for r in reports]
    width = max(len(r) for r in rows)
    rows = [r + [""] * (width - len(r)) for r in rows]
    run.write_text("skeleton.csv", export_table(["probe", "passed", *[f"metric{j}" for j in range(width - 2)]], rows))
    print_pairs("skeleton", {r.name: r.passed for r in reports})
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_witness(run: Run) -> int:
    cfg, fmap = run.cfg, run.fmap
    if fmap.stage is not Stage.F:
        raise ConfigError("witness search needs stage F")
    params = cfg.classify_params()
    rows, ok = [], True
    for i in range(fmap.k):
        above, below = hole_crossing_witness(fmap, i, cfg.witness_samples, params, cfg.seed + i, cfg.workers)
        ok &= above.passed
        rows += [[w.kind, w.index, w.samples, w.hits, w.passed, w.witness or ""] for w in (above, below)]
    for band in range(fmap.k):
        far = far_label_search(fmap, band, cfg.witness_budget, params, cfg.seed + band, workers=cfg.workers)
        rows.append([far.kind, far.index, far.samples, far.hits, far.passed, far.witness or ""])
    run.write_text("witness.csv", export_table(["kind", "index", "samples", "hits", "passed", "witness"], rows))
    print_pairs("witnesses", {f"{r[0]} {r[1]}": r[3] for r in rows})
    return EXIT_OK if ok else EXIT_FAIL


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="Override a config key (repeatable)")
    common.add_argument("--workers", type=int, help="Worker processes for sweeps")
    common.add_argument("--seed", type=int, help="Base random seed")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--stage", choices=[s.value for s in Stage], help="Map stage")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(prog="kan-lab", description="Numerical lab for the three-stage Kan/DA map on T^3")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("show", parents=[common], help="Print the configured map")
    sub.add_parser("validate", parents=[common], help="Run the P, M and R validators up to the configured stage")
    sub.add_parser("lyap", parents=[common], help="Lyapunov spectra at random points")
    sub.add_parser("probe", parents=[common], help="Unstable-disk probe near every attractor")
    sweep_p = sub.add_parser("sweep", parents=[common], help="Basin raster or 3-D box sweep")
    sweep_p.add_argument("--box", action="store_true", help="Sweep the 3-D grid instead of a slice")
    sweep_p.add_argument("--golden", type=Path, help="Compare the PPM with this file byte for byte")
    sweep_p.add_argument("--write-golden", action="store_true", help="Store the PPM as the golden file")
    inter_p = sub.add_parser("intermingle", parents=[common], help="Intermingling statistics")
    inter_p.add_argument("--labels", type=Path, help="raster.npz from an earlier sweep")
    sub.add_parser("certify", parents=[common], help="Volume-hyperbolicity certificate")
    sub.add_parser("skeleton", parents=[common], help="Stable-set and skeleton probes")
    sub.add_parser("witness", parents=[common], help="Hole-crossing witnesses and far-label search")
    return parser


def _flag_overrides(args: argparse.Namespace) -> list[str]:
    extra = list(args.overrides)
    for key, value in (("workers", args.workers), ("seed", args.seed), ("out", args.out), ("stage", args.stage)):
        if value is not None:
            extra.append(f"{key}={value}")
    return extra


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        cfg = load_config(args.config, _flag_overrides(args))
        fmap = build_map(cfg)
        run = Run(args.command, cfg, fmap)
    except (ConfigError, InvalidParameterError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG

    try:
        if args.command == "show":
            status = cmd_show(run)
        elif args.command == "validate":
            status = cmd_validate(run)
        elif args.command == "lyap":
            status = cmd_lyap(run)
        elif args.command == "probe":
            status = cmd_probe(run)
        elif args.command == "sweep":
            status = cmd_sweep(run, args)
        elif args.command == "intermingle":
            status = cmd_intermingle(run, args)
        elif args.command == "certify":
            status = cmd_certify(run)
        elif args.command == "skeleton":
            status = cmd_skeleton(run)
        elif args.command == "witness":
            status = cmd_witness(run)
        else:
            raise ConfigError(f"unknown subcommand {args.command!r}")
    except (ConfigError, InvalidParameterError, GoldenMissingError) as exc:
        logger.error("%s", exc)
        status = EXIT_CONFIG
    except KanLabError as exc:
        logger.error("run failed: %s", exc)
        status = EXIT_FAIL
    return run.finish(status)


if __name__ == "__main__":
    sys.exit(main())
