"""Orbits, Lyapunov spectra, cone checks, unstable-disk probes and basin labels.

Every routine takes any TorusMap (SkewMap or LayeredMap) and works on
batches of points; nothing here draws randomness except from an explicit
seed.
"""

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from errors import ClassifyParamsError, LyapunovOverflowError, ProbeParameterError, UnstableDiskError
from kan import circle_gap
from reports import witness_of
from surgery import CONE_GROWTH, LayeredMap, Stage, sample_for
from torus import Point3, TorusMap, cone_statistics, cs_area, cs_block, torus_delta, wrap

logger = logging.getLogger(__name__)

LYAP_BATCHES = 10
DEFAULT_REORTH = 10


# --- orbits ----------------------------------------------------------------


def iterate_orbit(fmap: TorusMap, p: Point3, n: int, keep_orbit: bool = False) -> Point3 | list[Point3]:
    """f^n(p), or the list p, f(p), ..., f^n(p) when keep_orbit is set."""
    if n < 0:
        raise ProbeParameterError(f"n = {n} must be non-negative")
    x = p.as_array()[None, :]
    orbit = [p]
    for _ in range(n):
        x, _ = fmap.step(x)
        if keep_orbit:
            orbit.append(Point3.from_array(x[0]))
    if keep_orbit:
        return orbit
    return Point3.from_array(x[0])


def iterate_points(fmap: TorusMap, pts: np.ndarray, n: int) -> np.ndarray:
    for _ in range(n):
        pts, _ = fmap.step(pts)
    return pts


# --- Lyapunov exponents ----------------------------------------------------


@dataclass
class LyapunovEstimate:
    exponents: tuple[float, float, float]  # descending
    stderr: tuple[float, float, float]  # batch means
    iterations: int


def lyapunov_batch(
    fmap: TorusMap,
    pts: np.ndarray,
    n: int,
    reorth_period: int = DEFAULT_REORTH,
    rng_seed: int = 0,
    n_batches: int = LYAP_BATCHES,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Exponents (N, 3) sorted descending, batch-means stderr (N, 3) and iterations used.

    The tangent frame is advanced with analytic Jacobians and re-orthonormalized by QR
    every reorth_period steps; each batch covers a whole number of periods.
    """
    if reorth_period < 1 or n < n_batches * reorth_period:
        raise ProbeParameterError(f"n = {n} must be at least {n_batches} x reorth_period = {n_batches * reorth_period}")
    pts = np.atleast_2d(pts).copy()
    count = len(pts)
    periods = n // (n_batches * reorth_period)
    batch_len = periods * reorth_period

    rng = np.random.default_rng(rng_seed)
    q, _ = np.linalg.qr(rng.normal(size=(count, 3, 3)))
    sums = np.zeros((n_batches, count, 3))
    for b in range(n_batches):
        for _ in range(periods):
            for _ in range(reorth_period):
                pts, jac = fmap.step(pts, want_jacobian=True)
                q = jac @ q
            if not np.isfinite(q).all():
                raise LyapunovOverflowError(f"tangent frame overflowed within {reorth_period} steps; lower reorth_period")
            q, r = np.linalg.qr(q)
            sums[b] += np.log(np.abs(np.diagonal(r, axis1=-2, axis2=-1)))
    per_batch = sums / batch_len
    mean = per_batch.mean(axis=0)
    err = per_batch.std(axis=0, ddof=1) / np.sqrt(n_batches)
    order = np.argsort(-mean, axis=-1)
    return (
        np.take_along_axis(mean, order, axis=-1),
        np.take_along_axis(err, order, axis=-1),
        batch_len * n_batches,
    )


def lyapunov_spectrum(
    fmap: TorusMap, p: Point3, n: int, reorth_period: int = DEFAULT_REORTH, rng_seed: int = 0
) -> LyapunovEstimate:
    mean, err, iters = lyapunov_batch(fmap, p.as_array()[None, :], n, reorth_period, rng_seed)
    return LyapunovEstimate(
        exponents=tuple(float(v) for v in mean[0]),
        stderr=tuple(float(v) for v in err[0]),
        iterations=iters,
    )


def cs_exponent_batch(fmap: TorusMap, pts: np.ndarray, n_iters: int, rng_seed: int = 0) -> np.ndarray:
    """Top exponent of the 2x2 cocycle on span(v_s, e_t), per point."""
    if n_iters <= 0:
        raise ProbeParameterError(f"n_iters = {n_iters} must be positive")
    pts = np.atleast_2d(pts).copy()
    rng = np.random.default_rng(rng_seed)
    v = rng.normal(size=(len(pts), 2))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    acc = np.zeros(len(pts))
    for _ in range(n_iters):
        pts, jac = fmap.step(pts, want_jacobian=True)
        v = np.einsum("nij,nj->ni", cs_block(fmap.base, jac), v)
        norm = np.linalg.norm(v, axis=-1)
        acc += np.log(norm)
        v /= norm[:, None]
    return acc / n_iters


def fd_jacobian(fmap: TorusMap, pts: np.ndarray, h: float = 1e-7) -> np.ndarray:
    """Central finite differences of the map, with image differences taken to the nearest lift."""
    pts = np.atleast_2d(pts)
    jac = np.empty((len(pts), 3, 3))
    for col in range(3):
        e = np.zeros(3)
        e[col] = h
        hi, _ = fmap.step(wrap(pts + e))
        lo, _ = fmap.step(wrap(pts - e))
        jac[:, :, col] = torus_delta(hi, lo) / (2 * h)
    return jac


def cs_area_jacobian(fmap: TorusMap, p: Point3) -> float:
    _, jac = fmap.step(p.as_array()[None, :], want_jacobian=True)
    return float(cs_area(fmap.base, jac)[0])


# --- cone check ------------------------------------------------------------


@dataclass
class ConeReport:
    samples: int
    aperture: float
    min_growth: float
    max_ratio: float
    passed: bool
    witness: tuple[float, ...] | None


def cone_check(fmap: TorusMap, samples: int = 10_000, aperture: float = 0.2, rng_seed: int = 0) -> ConeReport:
    """Growth >= 3 and image inside the cone, on the surgery-adapted Jacobian."""
    if not 0 < aperture < 1:
        raise ProbeParameterError(f"aperture = {aperture} must lie in (0, 1)")
    pts = sample_for(fmap, samples, np.random.default_rng(rng_seed))
    growth, ratio = cone_statistics(fmap, pts, aperture)
    jg, jr = int(np.argmin(growth)), int(np.argmax(ratio))
    passed = bool(growth[jg] >= CONE_GROWTH and ratio[jr] <= aperture)
    return ConeReport(
        samples=len(pts),
        aperture=aperture,
        min_growth=float(growth[jg]),
        max_ratio=float(ratio[jr]),
        passed=passed,
        witness=None if passed else witness_of(pts[jg] if growth[jg] < CONE_GROWTH else pts[jr]),
    )


# --- unstable disks --------------------------------------------------------


@dataclass
class DiskProbeResult:
    fraction_negative: float
    exponents: np.ndarray
    curve_length: float
    grow_iters: int


def grow_unstable_curve(
    fmap: TorusMap,
    seed_point: np.ndarray,
    seg_length: float = 1e-3,
    max_grow: int = 50,
    target: float = 1.0,
    max_gap: float = 0.02,
    max_nodes: int = 1 << 16,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Iterate a short segment along v_u through seed_point until its length reaches target.

    Returns (nodes, gaps between consecutive nodes, iterations). The segment is
    re-sampled from scratch whenever a gap exceeds max_gap.
    """
    direction = np.array([*fmap.base.v_u, 0.0])
    nodes = 257
    for it in range(1, max_grow + 1):
        while True:
            s = np.linspace(-seg_length / 2, seg_length / 2, nodes)
            curve = wrap(seed_point[None, :] + s[:, None] * direction)
            curve = iterate_points(fmap, curve, it)
            gaps = np.linalg.norm(torus_delta(curve[1:], curve[:-1]), axis=-1)
            if gaps.max() <= max_gap or nodes >= max_nodes:
                break
            nodes = 2 * nodes - 1
        length = float(gaps.sum())
        logger.debug("unstable curve: iteration %d, %d nodes, length %.4f", it, nodes, length)
        if length >= target:
            return curve, gaps, it
    raise UnstableDiskError(f"curve did not reach length {target} within {max_grow} iterations")


def sample_on_curve(curve: np.ndarray, gaps: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniform in arc length along a polygonal curve on T^3."""
    cum = np.concatenate([[0.0], np.cumsum(gaps)])
    at = rng.uniform(0.0, cum[-1], n)
    j = np.clip(np.searchsorted(cum, at, side="right") - 1, 0, len(gaps) - 1)
    frac = np.where(gaps[j] > 0, (at - cum[j]) / np.where(gaps[j] > 0, gaps[j], 1.0), 0.0)
    step = torus_delta(curve[j + 1], curve[j])
    return wrap(curve[j] + frac[:, None] * step)


def unstable_disk_probe(
    fmap: TorusMap,
    seed_point: Point3,
    n_points: int,
    n_iters: int,
    rng_seed: int = 0,
    seg_length: float = 1e-3,
    max_grow: int = 50,
) -> DiskProbeResult:
    """Fraction of a unit-length unstable curve with negative cs-exponent over n_iters."""
    if n_points < 100:
        raise ProbeParameterError(f"n_points = {n_points} must be at least 100")
    if n_iters <= 0:
        raise ProbeParameterError(f"n_iters = {n_iters} must be positive")
    rng = np.random.default_rng(rng_seed)
    curve, gaps, it = grow_unstable_curve(fmap, seed_point.as_array(), seg_length, max_grow)
    pts = sample_on_curve(curve, gaps, n_points, rng)
    exps = cs_exponent_batch(fmap, pts, n_iters, rng_seed)
    frac = float(np.mean(exps < 0))
    logger.info("unstable disk probe at %s: %.4f negative", tuple(seed_point.as_array()), frac)
    return DiskProbeResult(fraction_negative=frac, exponents=exps, curve_length=float(gaps.sum()), grow_iters=it)


# --- basin classification --------------------------------------------------


@dataclass(frozen=True)
class ClassifyParams:
    n_transient: int = 20_000
    window: int = 2_000  # split into four sub-blocks; the window slides one sub-block at a time
    majority: float = 0.9
    t_tol: float = 1 / 24
    n_max: int = 200_000

    def __post_init__(self) -> None:
        if self.window <= 0 or self.window % 4:
            raise ClassifyParamsError(f"window = {self.window} must be a positive multiple of 4")
        if self.n_transient < 0 or self.n_max < self.n_transient + self.window:
            raise ClassifyParamsError("need 0 <= n_transient and n_max >= n_transient + window")
        if not 0.5 < self.majority <= 1:
            raise ClassifyParamsError(f"majority = {self.majority} must lie in (0.5, 1]")
        if not self.t_tol > 0:
            raise ClassifyParamsError(f"t_tol = {self.t_tol} must be positive")

    @classmethod
    def for_k(cls, k: int, **overrides) -> "ClassifyParams":
        params = cls(**{"t_tol": 1 / (4 * k), **overrides})
        params.check_k(k)
        return params

    def check_k(self, k: int) -> None:
        if not self.t_tol < 1 / (2 * k):
            raise ClassifyParamsError(f"t_tol = {self.t_tol} must be below 1/(2k) = {1 / (2 * k)}")


@dataclass(frozen=True)
class BasinLabel:
    attractor: int | None  # 1..k; attractor i lives on the circle t = (i - 1)/k
    settle_time: int

    @property
    def code(self) -> int:
        return 0 if self.attractor is None else self.attractor

    @property
    def circle(self) -> int | None:
        return None if self.attractor is None else self.attractor - 1


def _circle_hits(fmap: TorusMap, pts: np.ndarray, k: int, t_tol: float, avoid: bool) -> np.ndarray:
    """(N, k) indicator of being within t_tol of circle i (and outside every hole ball)."""
    t = pts[:, 2]
    near = np.mod(np.round(t * k).astype(np.intp), k)
    hit = circle_gap(t, near / k) < t_tol
    if avoid:
        hit &= fmap.hole_radii(pts).min(axis=-1) >= fmap.da.eps
    out = np.zeros((len(pts), k), dtype=np.int32)
    rows = np.flatnonzero(hit)
    out[rows, near[rows]] = 1
    return out


def _k_of(fmap: TorusMap) -> int:
    return fmap.k if isinstance(fmap, LayeredMap) else fmap.profile.k


def classify_points(fmap: TorusMap, pts: np.ndarray, params: ClassifyParams) -> tuple[np.ndarray, np.ndarray]:
    """Label codes (0 = Unresolved, i = attractor i) and settle times for a batch of starts.

    After n_transient steps, hits are counted in four sub-blocks of window/4
    steps. Whenever the last four sub-blocks give one circle at least
    majority * window hits, the point settles there. Each point's label depends
    only on its own orbit.
    """
    k = _k_of(fmap)
    params.check_k(k)
    avoid = isinstance(fmap, LayeredMap) and fmap.stage is not Stage.F0
    pts = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
    n = len(pts)
    labels = np.zeros(n, dtype=np.int32)
    settle = np.full(n, params.n_max, dtype=np.int64)

    pts = iterate_points(fmap, pts, params.n_transient)
    active = np.arange(n)
    sub = params.window // 4
    blocks: deque[np.ndarray] = deque(maxlen=4)
    steps = params.n_transient
    need = params.majority * params.window
    while steps + sub <= params.n_max and len(active):
        counts = np.zeros((len(active), k), dtype=np.int32)
        for _ in range(sub):
            pts, _ = fmap.step(pts)
            counts += _circle_hits(fmap, pts, k, params.t_tol, avoid)
        steps += sub
        blocks.append(counts)
        if len(blocks) < 4:
            continue
        total = blocks[0] + blocks[1] + blocks[2] + blocks[3]
        best = np.argmax(total, axis=-1)
        done = total[np.arange(len(active)), best] >= need
        if done.any():
            labels[active[done]] = best[done] + 1
            settle[active[done]] = steps
            keep = ~done
            active, pts = active[keep], pts[keep]
            for j in range(len(blocks)):
                blocks[j] = blocks[j][keep]
    return labels, settle


def classify_basin(fmap: TorusMap, p: Point3, params: ClassifyParams) -> BasinLabel:
    labels, settle = classify_points(fmap, p.as_array()[None, :], params)
    code = int(labels[0])
    return BasinLabel(attractor=code or None, settle_time=int(settle[0]))
