"""Report containers, the PPM renderer and the key=value / CSV exporters."""

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from errors import PaletteError

UNRESOLVED = 0


@dataclass
class CheckResult:
    """Outcome of one property check."""

    name: str
    passed: bool
    margin: float  # signed distance to the bound; negative on failure
    observed: str = ""
    witness: tuple[float, ...] | None = None
    gating: bool = True  # informational checks never fail a report


@dataclass
class PropertyReport:
    title: str
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.gating)

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        return check

    def get(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if c.gating and not c.passed]


def witness_of(point: np.ndarray | None) -> tuple[float, ...] | None:
    if point is None:
        return None
    return tuple(float(v) for v in np.ravel(point))


# --- PPM -------------------------------------------------------------------


def default_palette(k: int) -> dict[int, tuple[int, int, int]]:
    """Distinct colours for labels 1..k plus black for Unresolved."""
    base = [
        (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
        (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
        (210, 245, 60), (250, 190, 212), (0, 128, 128), (170, 110, 40),
    ]
    pal = {UNRESOLVED: (0, 0, 0)}
    for label in range(1, k + 1):
        if label <= len(base):
            pal[label] = base[label - 1]
        else:
            h = (label * 0.618033988749895) % 1.0
            pal[label] = (int(255 * h), int(255 * (1 - h)), int(128 + 127 * h))
    return pal


def render_ppm(raster: Any, palette: dict[int, tuple[int, int, int]], k: int | None = None) -> bytes:
    """Binary P6 pixmap, maxval 255, rows top to bottom.

    raster is a BasinRaster or a 2-D integer label array whose row 0 is the top row.
    The palette must give pairwise distinct colours to every label 0..k, where k
    defaults to raster.k, or to the largest label for a bare array.
    """
    labels = np.asarray(raster.labels if hasattr(raster, "labels") else raster)
    if labels.ndim != 2:
        raise ValueError("render_ppm needs a 2-D label grid")
    h, w = labels.shape
    top = int(labels.max(initial=0))
    if k is None:
        k = getattr(raster, "k", top)
    need = range(max(k, top) + 1)
    missing = [label for label in need if label not in palette]
    if missing:
        raise PaletteError(f"palette has no colour for label(s) {missing}")
    colours = [tuple(palette[label]) for label in need]
    if len(set(colours)) != len(colours):
        raise PaletteError(f"palette colours for labels 0..{need[-1]} are not pairwise distinct")
    lut = np.array(colours, dtype=np.uint8)
    pixels = lut[labels.astype(np.intp)]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


# --- exporters -------------------------------------------------------------


def _fmt(v: Any) -> str:
    if isinstance(v, bool) or v is None:
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _key_values(prefix: str, value: Any, out: list[str]) -> None:
    if isinstance(value, dict):
        for k in value:
            _key_values(f"{prefix}.{k}", value[k], out)
    elif isinstance(value, np.ndarray):
        return
    else:
        out.append(f"{prefix}={_fmt(value)}")


def _csv(header: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


PROPERTY_HEADER = ["check", "passed", "margin", "gating", "observed", "witness"]
INTERMINGLE_HEADER = ["scale", "box_i", "box_j", "label", "fraction"]


def export_report(report: Any) -> str:
    """Render a report as text.

    Schemas:
    - PropertyReport: CSV with PROPERTY_HEADER, one row per check.
    - IntermingleReport: CSV with INTERMINGLE_HEADER, one row per label present
      in a box (label 0 is Unresolved).
    - any other dataclass: key=value lines in field order; dict fields
      flatten to key.subkey=value, array fields are skipped.
    Empty tabular reports export the header only.
    """
    if isinstance(report, PropertyReport):
        rows = [
            [c.name, c.passed, c.margin, c.gating, c.observed, c.witness if c.witness else ""]
            for c in report.checks
        ]
        return _csv(PROPERTY_HEADER, rows)
    if hasattr(report, "box_rows"):
        return _csv(INTERMINGLE_HEADER, list(report.box_rows()))
    if dataclasses.is_dataclass(report):
        lines: list[str] = []
        for f in dataclasses.fields(report):
            _key_values(f.name, getattr(report, f.name), lines)
        return "\n".join(lines) + "\n"
    raise TypeError(f"no export schema for {type(report).__name__}")


def export_table(header: list[str], rows: list[list[Any]]) -> str:
    """CSV for ad-hoc tables (Lyapunov runs, probe batches, label grids)."""
    return _csv(header, rows)
