"""Basin sweeps over slices and boxes of T^3, with measure and intermingling statistics.

Work is cut into fixed CHUNK_SIZE blocks of cell indices before any worker
sees it, and results are placed back by chunk index, so every output is a
function of (map, spec, params, seed) alone.
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from multiprocessing import Pool
from pathlib import Path

import numpy as np
from rich.progress import track

from dynamics import ClassifyParams, classify_points
from errors import EmptyGridError, ScaleNestingError, SliceSpecError, StageError
from reports import UNRESOLVED
from surgery import LayeredMap, Stage, sample_ball
from torus import AnosovBase, TorusMap, wrap

logger = logging.getLogger(__name__)

CHUNK_SIZE = 2048
MIN_RESOLUTION = 16
DEFAULT_SCALES = (1, 4, 8, 16)
DEFAULT_MIN_FRACTION = 0.01
MAX_UNRESOLVED = 0.05


class SliceKind(str, Enum):
    FIX_BASE1 = "FixBase1"  # x1 fixed; horizontal x2, vertical t
    FIX_BASE2 = "FixBase2"  # x2 fixed; horizontal x1, vertical t
    FIX_FIBER = "FixFiber"  # t fixed; horizontal x1, vertical x2
    BASE_LINE = "BaseLine"  # base (0, fixed) + (h - 1/2) v_s; vertical t


@dataclass(frozen=True)
class SliceSpec:
    kind: SliceKind
    fixed_value: float
    h_range: tuple[float, float] = (0.0, 1.0)
    v_range: tuple[float, float] = (0.0, 1.0)
    resolution: tuple[int, int] = (256, 256)  # (w, h)

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", SliceKind(self.kind))
        except ValueError as exc:
            raise SliceSpecError(f"unknown slice kind {self.kind!r}") from exc
        w, h = self.resolution
        if w < MIN_RESOLUTION or h < MIN_RESOLUTION:
            raise SliceSpecError(f"resolution {w}x{h} is below {MIN_RESOLUTION}x{MIN_RESOLUTION}")
        for lo, hi in (self.h_range, self.v_range):
            if not 0.0 <= lo < hi <= 1.0:
                raise SliceSpecError(f"range ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")
        if not 0.0 <= self.fixed_value <= 1.0:
            raise SliceSpecError(f"fixed_value = {self.fixed_value} must lie in [0, 1]")

    @property
    def vertical_is_fiber(self) -> bool:
        return self.kind is not SliceKind.FIX_FIBER


def _centers(lo: float, hi: float, n: int) -> np.ndarray:
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def slice_points(base: AnosovBase, spec: SliceSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Cell points of a slice, row-major with row 0 at the top (largest vertical value).

    Cell centers unless rng is given, in which case each point is jittered
    uniformly inside its cell.
    """
    w, h = spec.resolution
    (hlo, hhi), (vlo, vhi) = spec.h_range, spec.v_range
    hs = np.tile(_centers(hlo, hhi, w), h)
    vs = np.repeat(_centers(vlo, vhi, h)[::-1], w)
    if rng is not None:
        hs = hs + rng.uniform(-0.5, 0.5, hs.shape) * (hhi - hlo) / w
        vs = vs + rng.uniform(-0.5, 0.5, vs.shape) * (vhi - vlo) / h
    fixed = np.full(hs.shape, spec.fixed_value)
    match spec.kind:
        case SliceKind.FIX_BASE1:
            pts = np.column_stack([fixed, hs, vs])
        case SliceKind.FIX_BASE2:
            pts = np.column_stack([hs, fixed, vs])
        case SliceKind.FIX_FIBER:
            pts = np.column_stack([hs, vs, fixed])
        case SliceKind.BASE_LINE:
            off = hs - 0.5
            vsx, vsy = base.v_s
            pts = np.column_stack([off * vsx, spec.fixed_value + off * vsy, vs])
    return wrap(pts)


def map_fingerprint(fmap: TorusMap) -> str:
    fields = fmap.fingerprint_fields()
    if not isinstance(fmap, LayeredMap):
        fields = {"stage": Stage.F0.value, **fields}
    blob = json.dumps(fields, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _k_of(fmap: TorusMap) -> int:
    return fmap.k if isinstance(fmap, LayeredMap) else fmap.profile.k


def _stage_of(fmap: TorusMap) -> str:
    return fmap.stage.value if isinstance(fmap, LayeredMap) else Stage.F0.value


# --- chunked classification -------------------------------------------------

_WORKER: dict = {}


def _init_worker(fmap: TorusMap, params: ClassifyParams) -> None:
    _WORKER["map"] = fmap
    _WORKER["params"] = params


def _classify_chunk(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return classify_points(_WORKER["map"], pts, _WORKER["params"])


def label_points(
    fmap: TorusMap, pts: np.ndarray, params: ClassifyParams, workers: int = 1, progress: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """classify_points over fixed-size chunks, inline or on a process pool."""
    chunks = [pts[i : i + CHUNK_SIZE] for i in range(0, len(pts), CHUNK_SIZE)]
    logger.debug("classifying %d points in %d chunks on %d workers", len(pts), len(chunks), workers)
    if workers <= 1:
        results = [classify_points(fmap, c, params) for c in track(chunks, description="classifying", disable=not progress)]
    else:
        with Pool(workers, initializer=_init_worker, initargs=(fmap, params)) as pool:
            results = list(
                track(pool.imap(_classify_chunk, chunks), total=len(chunks), description="classifying", disable=not progress)
            )
    if not results:
        return np.zeros(0, dtype=np.int32), np.zeros(0, dtype=np.int64)
    return np.concatenate([r[0] for r in results]), np.concatenate([r[1] for r in results])


# --- sweeps ----------------------------------------------------------------


@dataclass
class BasinRaster:
    spec: SliceSpec
    labels: np.ndarray = field(repr=False)  # (h, w) codes, row 0 at the top
    settle: np.ndarray = field(repr=False)
    k: int
    map_fingerprint: str
    seed: int
    params: ClassifyParams
    stage: str
    jitter: bool = False


def sweep_raster(
    fmap: TorusMap,
    spec: SliceSpec,
    params: ClassifyParams,
    workers: int = 1,
    seed: int = 0,
    jitter: bool = False,
    progress: bool = False,
) -> BasinRaster:
    rng = np.random.default_rng(seed) if jitter else None
    pts = slice_points(fmap.base, spec, rng)
    labels, settle = label_points(fmap, pts, params, workers, progress)
    w, h = spec.resolution
    return BasinRaster(
        spec=spec,
        labels=labels.reshape(h, w),
        settle=settle.reshape(h, w),
        k=_k_of(fmap),
        map_fingerprint=map_fingerprint(fmap),
        seed=seed,
        params=params,
        stage=_stage_of(fmap),
        jitter=jitter,
    )


@dataclass
class BoxGrid:
    grid: tuple[int, int, int]
    labels: np.ndarray = field(repr=False)  # (n1, n2, n3) indexed by (x1, x2, t)
    settle: np.ndarray = field(repr=False)
    k: int
    map_fingerprint: str
    seed: int
    params: ClassifyParams
    stage: str
    fractions: dict[int, float] = field(default_factory=dict)
    unresolved: float = 0.0


def box_points(grid: tuple[int, int, int], rng: np.random.Generator | None = None) -> np.ndarray:
    n1, n2, n3 = grid
    axes = [(np.arange(n) + 0.5) / n for n in grid]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    if rng is not None:
        pts = pts + rng.uniform(-0.5, 0.5, pts.shape) / np.array(grid)
    return wrap(pts)


def sweep_box3(
    fmap: TorusMap,
    grid: tuple[int, int, int],
    params: ClassifyParams,
    workers: int = 1,
    seed: int = 0,
    jitter: bool = False,
    progress: bool = False,
) -> BoxGrid:
    if min(grid) < 1:
        raise EmptyGridError(f"grid {grid} has no cells")
    rng = np.random.default_rng(seed) if jitter else None
    labels, settle = label_points(fmap, box_points(grid, rng), params, workers, progress)
    k = _k_of(fmap)
    counts = np.bincount(labels, minlength=k + 1)
    return BoxGrid(
        grid=tuple(grid),
        labels=labels.reshape(grid),
        settle=settle.reshape(grid),
        k=k,
        map_fingerprint=map_fingerprint(fmap),
        seed=seed,
        params=params,
        stage=_stage_of(fmap),
        fractions={i: float(counts[i] / labels.size) for i in range(1, k + 1)},
        unresolved=float(counts[UNRESOLVED] / labels.size),
    )


def save_raster(raster: BasinRaster, path: Path) -> None:
    """labels and settle times plus the metadata needed to re-box or reproduce the raster."""
    spec = raster.spec
    meta = {
        "spec": {
            "kind": spec.kind.value,
            "fixed_value": spec.fixed_value,
            "h_range": list(spec.h_range),
            "v_range": list(spec.v_range),
            "resolution": list(spec.resolution),
        },
        "k": raster.k,
        "map_fingerprint": raster.map_fingerprint,
        "seed": raster.seed,
        "params": dataclasses.asdict(raster.params),
        "stage": raster.stage,
        "jitter": raster.jitter,
    }
    with open(path, "wb") as fh:
        np.savez(fh, labels=raster.labels, settle=raster.settle, meta=np.array(json.dumps(meta)))


def load_raster(path: Path) -> BasinRaster:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        labels, settle = data["labels"], data["settle"]
    s = meta["spec"]
    spec = SliceSpec(s["kind"], s["fixed_value"], tuple(s["h_range"]), tuple(s["v_range"]), tuple(s["resolution"]))
    return BasinRaster(
        spec=spec,
        labels=labels,
        settle=settle,
        k=meta["k"],
        map_fingerprint=meta["map_fingerprint"],
        seed=meta["seed"],
        params=ClassifyParams(**meta["params"]),
        stage=meta["stage"],
        jitter=meta["jitter"],
    )


# --- statistics ------------------------------------------------------------


@dataclass
class MeasureReport:
    cells: int
    fractions: dict[int, float]
    unresolved: float
    mean_settle: dict[int, float]

    def criteria(self, min_fraction: float = DEFAULT_MIN_FRACTION, max_unresolved: float = MAX_UNRESOLVED) -> dict[str, bool]:
        return {
            "all_labels_present": all(f >= min_fraction for f in self.fractions.values()),
            "unresolved_bounded": self.unresolved <= max_unresolved,
        }


def measure_report(result: BasinRaster | BoxGrid) -> MeasureReport:
    """Per-label fractions (summing with unresolved to 1) and mean settle times."""
    labels = np.ravel(result.labels)
    if labels.size == 0:
        raise EmptyGridError("no cells to measure")
    settle = np.ravel(result.settle)
    counts = np.bincount(labels, minlength=result.k + 1)
    mean_settle = {}
    for i in range(1, result.k + 1):
        mask = labels == i
        mean_settle[i] = float(settle[mask].mean()) if mask.any() else float("nan")
    return MeasureReport(
        cells=int(labels.size),
        fractions={i: float(counts[i] / labels.size) for i in range(1, result.k + 1)},
        unresolved=float(counts[UNRESOLVED] / labels.size),
        mean_settle=mean_settle,
    )


@dataclass
class BoxHistogram:
    scale: int
    box_i: int  # row, from the top
    box_j: int
    counts: np.ndarray  # indexed by label code, 0 = Unresolved
    cells: int

    def present(self) -> set[int]:
        return {int(v) for v in np.flatnonzero(self.counts)}

    def significant(self, min_fraction: float) -> set[int]:
        return {int(v) for v in np.flatnonzero(self.counts >= min_fraction * self.cells) if v != UNRESOLVED}


@dataclass
class IntermingleReport:
    scales: tuple[int, ...]
    min_fraction: float
    k: int
    boxes: list[BoxHistogram] = field(repr=False)
    criteria: dict[str, bool]

    def at_scale(self, scale: int) -> list[BoxHistogram]:
        return [b for b in self.boxes if b.scale == scale]

    def box_rows(self):
        for b in self.boxes:
            for label in np.flatnonzero(b.counts):
                yield [b.scale, b.box_i, b.box_j, int(label), float(b.counts[label] / b.cells)]

    @property
    def passed(self) -> bool:
        return all(self.criteria.values())


def _panels(result: BasinRaster | BoxGrid) -> tuple[np.ndarray, tuple[float, float] | None]:
    """Labels as (rows, cols, depth) with row 0 on top, plus the fiber range of the rows if any."""
    if isinstance(result, BasinRaster):
        v = result.spec.v_range if result.spec.vertical_is_fiber else None
        return result.labels[:, :, None], v
    # (x1, x2, t) -> rows t from the top, columns x2, depth x1
    return np.transpose(result.labels, (2, 1, 0))[::-1], (0.0, 1.0)


def check_scales(scales: tuple[int, ...]) -> tuple[int, ...]:
    """Scales must be positive and increasing, each dividing the next."""
    scales = tuple(int(s) for s in scales)
    if not scales or scales[0] < 1:
        raise ScaleNestingError(f"scales {scales} must be a non-empty list of positive integers")
    for a, b in zip(scales, scales[1:]):
        if b <= a or b % a:
            raise ScaleNestingError(f"scale {a} does not divide the next scale {b}")
    return scales


def _edges(n: int, scale: int) -> np.ndarray:
    return (np.arange(scale + 1) * n) // scale


def intermingle_report(
    result: BasinRaster | BoxGrid,
    scales: tuple[int, ...] = DEFAULT_SCALES,
    min_fraction: float = DEFAULT_MIN_FRACTION,
    band_box: int = 16,
) -> IntermingleReport:
    """Per-box label histograms at each scale (scale s cuts the picture into s x s boxes).

    Criteria:
    - whole_slice_all_labels: all k labels significant in the single box.
    - bands_adjacent_pairs: every band_box x band_box pixel box lying inside a band
      (t_i, t_(i+1)) holds both adjacent labels; only when rows run along the fiber.
    Scales are checked to divide one another, so box edges nest and present-label
    sets at a finer scale union to the parent's.
    """
    scales = check_scales(scales)
    labels, fiber = _panels(result)
    if labels.size == 0:
        raise EmptyGridError("no cells to box")
    rows, cols, _ = labels.shape
    k = result.k
    boxes: list[BoxHistogram] = []
    for s in scales:
        re, ce = _edges(rows, s), _edges(cols, s)
        for bi in range(s):
            for bj in range(s):
                block = labels[re[bi] : re[bi + 1], ce[bj] : ce[bj + 1]]
                counts = np.bincount(block.ravel(), minlength=k + 1)
                boxes.append(BoxHistogram(s, bi, bj, counts, int(block.size)))

    criteria: dict[str, bool] = {}
    whole = np.bincount(labels.ravel(), minlength=k + 1)
    criteria["whole_slice_all_labels"] = bool((whole[1:] >= min_fraction * labels.size).all())
    if fiber is not None and rows >= band_box and cols >= band_box:
        criteria["bands_adjacent_pairs"] = _band_pairs(labels, fiber, k, band_box, min_fraction)
    logger.info("intermingle report: %s", criteria)
    return IntermingleReport(tuple(scales), min_fraction, k, boxes, criteria)


def _band_pairs(labels: np.ndarray, fiber: tuple[float, float], k: int, size: int, min_fraction: float) -> bool:
    rows, cols, _ = labels.shape
    vlo, vhi = fiber
    # row r covers t in [vhi - (r+1) dv, vhi - r dv]
    dv = (vhi - vlo) / rows
    checked = 0
    for r0 in range(0, rows - size + 1, size):
        t_top, t_bot = vhi - r0 * dv, vhi - (r0 + size) * dv
        band = int(np.floor(t_bot * k + 1e-12))
        if t_top > (band + 1) / k + 1e-12:
            continue
        want = (band % k + 1, (band + 1) % k + 1)
        for c0 in range(0, cols - size + 1, size):
            block = labels[r0 : r0 + size, c0 : c0 + size].ravel()
            counts = np.bincount(block, minlength=k + 1)
            checked += 1
            if any(counts[w] < min_fraction * block.size for w in want):
                return False
    return checked > 0


# --- witnesses -------------------------------------------------------------


@dataclass
class WitnessReport:
    kind: str
    index: int
    samples: int
    counts: dict[int, int]
    hits: int
    passed: bool
    witness: tuple[float, ...] | None = None


def hole_crossing_witness(
    fmap: LayeredMap, i: int, samples: int, params: ClassifyParams, rng_seed: int = 0, workers: int = 1
) -> tuple[WitnessReport, WitnessReport]:
    """Classify starts in B_eps(r^i_0) just above and just below t_i.

    A hit above is a start that settles on circle i + 1: it crossed the hole upward.
    """
    if fmap.stage is not Stage.F:
        raise StageError("hole_crossing_witness needs a stage F map")
    rng = np.random.default_rng(rng_seed)
    k = fmap.k
    pts = sample_ball(fmap, i, samples, fmap.da.eps, rng)[1:]
    w = pts[:, 2] - fmap.hole_arr[i, 2]
    w = w - np.round(w)
    up = (i + 1) % k + 1
    out = []
    for name, sign in (("above", 1.0), ("below", -1.0)):
        starts = pts.copy()
        starts[:, 2] = wrap(fmap.hole_arr[i, 2] + sign * np.abs(w))
        labels, _ = label_points(fmap, starts, params, workers)
        counts = np.bincount(labels, minlength=k + 1)
        hits = int(counts[up])
        first = np.flatnonzero(labels == up)
        out.append(
            WitnessReport(
                kind=f"hole-crossing-{name}",
                index=i,
                samples=len(starts),
                counts={int(c): int(counts[c]) for c in np.flatnonzero(counts)},
                hits=hits,
                passed=hits > 0 if sign > 0 else True,
                witness=tuple(float(v) for v in starts[first[0]]) if len(first) else None,
            )
        )
    return out[0], out[1]


def far_label_search(
    fmap: TorusMap,
    band: int,
    budget: int,
    params: ClassifyParams,
    rng_seed: int = 0,
    batch: int = CHUNK_SIZE,
    workers: int = 1,
) -> WitnessReport:
    """Sample the band (t_band, t_(band+1)) for a label other than its two adjacent ones."""
    k = _k_of(fmap)
    rng = np.random.default_rng(rng_seed)
    near = {band % k + 1, (band + 1) % k + 1, UNRESOLVED}
    counts = np.zeros(k + 1, dtype=np.int64)
    tried = 0
    while tried < budget:
        n = min(batch, budget - tried)
        pts = rng.uniform(0.0, 1.0, (n, 3))
        pts[:, 2] = (band + pts[:, 2]) / k
        labels, _ = label_points(fmap, wrap(pts), params, workers)
        counts += np.bincount(labels, minlength=k + 1)
        tried += n
        far = np.flatnonzero(~np.isin(labels, list(near)))
        if len(far):
            j = far[0]
            logger.info("far label %d found in band %d after %d samples", labels[j], band, tried)
            return WitnessReport(
                "far-label", band, tried,
                {int(c): int(counts[c]) for c in np.flatnonzero(counts)},
                int(len(far)), True, tuple(float(v) for v in pts[j]),
            )
    return WitnessReport("far-label", band, tried, {int(c): int(counts[c]) for c in np.flatnonzero(counts)}, 0, False)
