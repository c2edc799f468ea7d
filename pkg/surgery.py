"""DA surgery at the saddle-node points r^i_0 and the vertical pushes.

f1 = Psi o f0 and f = rho o f1. In the chart at hole i (coordinates
(u, s, w) along v_u, v_s and the fiber)

    Psi:  (u, s, w) -> (u, s + delta_DA theta(r) sigma(s), w),  sigma(s) = s0 tanh(s/s0)
    rho:  p -> p + delta eta(r) e_t

with r = |(u, s, w)| and theta, eta smooth radial cutoffs. Both layers move
points inside leaves of W^s_A x S^1, so span(v_s, e_t) is invariant at every
stage. Ball B_r(r^i_0) always means the chart ball sqrt(u^2 + s^2 + w^2) < r.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from errors import (
    DiffeoMarginError,
    EpsilonError,
    NotASourceError,
    PushStrengthError,
    StageError,
    SupportOverlapError,
    ZetaError,
)
from kan import SkewMap, circle_gap, min_special_distance, sample_points
from reports import CheckResult, PropertyReport, witness_of
from smooth import max_cutoff_slope, radial_cutoff
from torus import (
    AnosovBase,
    Chart,
    Point3,
    TorusMap,
    chart_coords,
    cone_statistics,
    cs_area,
    eigen_blocks,
    make_chart,
    plane_leak,
    torus_delta,
    wrap,
)

logger = logging.getLogger(__name__)

DEFAULT_EPS = 0.02
DEFAULT_DELTA_DA = 12.0
DA_LIFT = 0.54  # delta_DA * s0 = DA_LIFT * eps puts the in-torus saddles beyond eps/2
MIN_DIFFEO_MARGIN = 0.1
CONE_APERTURE = 0.2
CONE_GROWTH = 3.0
M5_BOUND = 0.5
ZETA_LADDER = (0.5, 0.6, 0.7, 0.8, 0.9)  # multiples of eps


class Stage(str, Enum):
    F0 = "F0"
    F1 = "F1"
    F = "F"


@dataclass(frozen=True)
class DAParams:
    eps: float
    delta_DA: float
    s0: float
    theta_inner: float
    theta_outer: float
    zeta: float

    def __post_init__(self) -> None:
        if not (self.eps > 0 and self.delta_DA > 0 and self.s0 > 0):
            raise DiffeoMarginError("eps, delta_DA and s0 must be positive")
        if not 0 < self.theta_inner < self.theta_outer <= self.eps:
            raise SupportOverlapError(
                f"cutoff radii must satisfy 0 < inner < outer <= eps, got {self.theta_inner}, {self.theta_outer}"
            )
        if not 0 < self.zeta < self.eps:
            raise ZetaError(f"zeta = {self.zeta} must satisfy 0 < zeta < eps = {self.eps}")

    @property
    def diffeo_margin(self) -> float:
        return 1.0 - self.delta_DA * max_cutoff_slope(self.theta_inner, self.theta_outer) * self.s0


def default_da(
    eps: float = DEFAULT_EPS,
    delta_DA: float = DEFAULT_DELTA_DA,
    s0: float | None = None,
    theta_inner: float | None = None,
    theta_outer: float | None = None,
    zeta: float | None = None,
) -> DAParams:
    return DAParams(
        eps=eps,
        delta_DA=delta_DA,
        s0=DA_LIFT * eps / delta_DA if s0 is None else s0,
        theta_inner=eps / 16 if theta_inner is None else theta_inner,
        theta_outer=eps if theta_outer is None else theta_outer,
        zeta=0.8 * eps if zeta is None else zeta,
    )


@dataclass(frozen=True)
class PushParams:
    delta: float
    inner: float
    outer: float

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise PushStrengthError(f"push delta = {self.delta} must be non-negative")
        if not 0 < self.inner < self.outer:
            raise PushStrengthError(f"push radii must satisfy 0 < inner < outer, got {self.inner}, {self.outer}")


def default_push(eps: float = DEFAULT_EPS, delta: float | None = None) -> PushParams:
    return PushParams(delta=eps / 8 if delta is None else delta, inner=eps / 4, outer=eps / 2)


# --- the layered map -------------------------------------------------------


@dataclass(frozen=True)
class LayeredMap:
    stage: Stage
    skew: SkewMap
    da: DAParams | None
    push: PushParams | None
    holes: tuple[Point3, ...]
    charts: tuple[Chart, ...] = field(repr=False)
    hole_arr: np.ndarray = field(repr=False, compare=False)

    @property
    def base(self) -> AnosovBase:
        return self.skew.base

    @property
    def k(self) -> int:
        return self.skew.profile.k

    def with_stage(self, stage: Stage | str) -> "LayeredMap":
        stage = Stage(stage)
        _require(stage, self.da, self.push)
        return dataclasses.replace(self, stage=stage)

    def hole_coords(self, pts: np.ndarray) -> np.ndarray:
        """Chart coordinates of every point relative to every hole, shape (N, k, 3)."""
        pts = np.atleast_2d(pts)
        return chart_coords(self.hole_arr[None, :, :], self.base.frame_inv, pts[:, None, :])

    def hole_radii(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.hole_coords(pts), axis=-1)

    def _da_layer(self, y: np.ndarray, want: bool) -> tuple[np.ndarray, np.ndarray | None]:
        da = self.da
        vs = np.asarray(self.base.v_s)
        finv = self.base.frame_inv
        out = y.copy()
        jac = np.broadcast_to(np.eye(3), (len(y), 3, 3)).copy() if want else None
        for h in self.hole_arr:
            c = chart_coords(h, finv, y)
            r = np.linalg.norm(c, axis=-1)
            act = r < da.theta_outer
            if not act.any():
                continue
            ca, ra = c[act], r[act]
            th, dth = radial_cutoff(ra, da.theta_inner, da.theta_outer)
            tz = np.tanh(ca[:, 1] / da.s0)
            sig = da.s0 * tz
            lift = da.delta_DA * th * sig
            out[act, :2] += lift[:, None] * vs
            if want:
                rs = np.where(ra > 0, ra, 1.0)
                grad = (da.delta_DA * dth * sig / rs)[:, None] * ca
                grad[:, 1] += da.delta_DA * th * (1.0 - tz * tz)
                gx = np.empty_like(grad)
                gx[:, :2] = grad[:, :2] @ finv
                gx[:, 2] = grad[:, 2]
                jac[act, :2, :] += vs[None, :, None] * gx[:, None, :]
        return wrap(out), jac

    def _push_layer(self, y: np.ndarray, want: bool) -> tuple[np.ndarray, np.ndarray | None]:
        push = self.push
        finv = self.base.frame_inv
        out = y.copy()
        jac = np.broadcast_to(np.eye(3), (len(y), 3, 3)).copy() if want else None
        for h in self.hole_arr:
            c = chart_coords(h, finv, y)
            r = np.linalg.norm(c, axis=-1)
            act = r < push.outer
            if not act.any():
                continue
            ca, ra = c[act], r[act]
            eta, deta = radial_cutoff(ra, push.inner, push.outer)
            out[act, 2] += push.delta * eta
            if want:
                rs = np.where(ra > 0, ra, 1.0)
                grad = (push.delta * deta / rs)[:, None] * ca
                gx = np.empty_like(grad)
                gx[:, :2] = grad[:, :2] @ finv
                gx[:, 2] = grad[:, 2]
                jac[act, 2, :] += gx
        return wrap(out), jac

    def surgery(self, pts: np.ndarray, want_jacobian: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
        """The post-composed layers Phi (Psi, then rho at stage F) with Jacobian."""
        y, jac = pts, None
        if self.stage is Stage.F0:
            return y, (np.broadcast_to(np.eye(3), (len(y), 3, 3)).copy() if want_jacobian else None)
        y, jac = self._da_layer(y, want_jacobian)
        if self.stage is Stage.F:
            y, j2 = self._push_layer(y, want_jacobian)
            if want_jacobian:
                jac = j2 @ jac
        return y, jac

    def step(self, pts: np.ndarray, want_jacobian: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
        pts = np.atleast_2d(pts)
        y, j0 = self.skew.step(pts, want_jacobian)
        if self.stage is Stage.F0:
            return y, j0
        y, jl = self.surgery(y, want_jacobian)
        return y, (jl @ j0 if want_jacobian else None)

    def adapted_jacobian(self, pts: np.ndarray) -> np.ndarray:
        """Jacobian of f0 o Phi, the map conjugate to this stage by its surgery layers.

        A constant u-cone invariant under f0 o Phi is the same as the cone field
        DPhi(C) being invariant under Phi o f0.
        """
        pts = np.atleast_2d(pts)
        z, jl = self.surgery(pts, want_jacobian=True)
        _, j0 = self.skew.step(z, want_jacobian=True)
        return j0 @ jl

    def fingerprint_fields(self) -> dict:
        return {
            "stage": self.stage.value,
            **self.skew.fingerprint_fields(),
            "da": dataclasses.asdict(self.da) if self.da else None,
            "push": dataclasses.asdict(self.push) if self.push else None,
        }


def _require(stage: Stage, da: DAParams | None, push: PushParams | None) -> None:
    if stage in (Stage.F1, Stage.F) and da is None:
        raise StageError(f"stage {stage.value} needs DA parameters")
    if stage is Stage.F and push is None:
        raise StageError("stage F needs push parameters")


def _fail(strict: bool, exc: type[Exception], msg: str) -> None:
    if strict:
        raise exc(msg)
    logger.warning("%s (strict=False): %s", exc.__name__, msg)


def make_layered(
    skew: SkewMap,
    da: DAParams | None = None,
    push: PushParams | None = None,
    stage: Stage | str = Stage.F,
    strict: bool = True,
) -> LayeredMap:
    """Bundle f0 with its surgery data.

    strict=False logs violated invariants instead of raising, for building
    deliberately broken maps whose failure the validators should report.
    """
    stage = Stage(stage)
    _require(stage, da, push)
    base, prof = skew.base, skew.profile
    k = prof.k
    holes = tuple(Point3(prof.hole_base(i), i / k) for i in range(k))

    if da is not None:
        special_pts = [prof.point(m) for m in range(5)]
        cap = min(1 / (2 * k), min_special_distance(special_pts) / 2)
        if not da.eps < cap:
            _fail(strict, EpsilonError, f"eps = {da.eps} must be below {cap:.6f}")
        gain = (1 + da.delta_DA) * abs(base.lambda_s)
        if not gain > 1:
            _fail(strict, NotASourceError, f"(1 + delta_DA) lambda_s = {gain:.6f} <= 1: r^i_0 is not a source")
        if da.diffeo_margin < MIN_DIFFEO_MARGIN:
            _fail(strict, DiffeoMarginError, f"diffeo margin {da.diffeo_margin:.4f} < {MIN_DIFFEO_MARGIN}")
        # chart balls are ellipsoids; bound their Euclidean reach by the frame norm
        reach = np.linalg.norm(base.frame, 2) * da.eps
        for i in range(k):
            hb = prof.hole_base(i).as_array()
            for m in range(5):
                if m == prof.r_hat(i, 0):
                    continue
                d = float(np.linalg.norm(torus_delta(hb, prof.specials[m])))
                if d < reach + prof.rho_b:
                    _fail(strict, SupportOverlapError, f"hole {i} ball reaches the bump at special point {m}")

    if push is not None:
        eps = da.eps if da is not None else DEFAULT_EPS
        if push.delta > eps / 4:
            _fail(strict, PushStrengthError, f"push delta = {push.delta} exceeds eps/4")
        if push.outer > eps / 2:
            _fail(strict, PushStrengthError, f"push outer radius {push.outer} exceeds eps/2")
        if push.delta * max_cutoff_slope(push.inner, push.outer) >= 1:
            _fail(strict, PushStrengthError, "push is not invertible: delta * max|eta'| >= 1")

    return LayeredMap(
        stage=stage,
        skew=skew,
        da=da,
        push=push,
        holes=holes,
        charts=tuple(make_chart(base, h) for h in holes),
        hole_arr=np.array([h.as_array() for h in holes]),
    )


def apply_stage(fmap: LayeredMap, p: Point3, want_jacobian: bool = False) -> tuple[Point3, np.ndarray | None]:
    out, jac = fmap.step(p.as_array()[None, :], want_jacobian)
    return Point3.from_array(out[0]), (jac[0] if jac is not None else None)


# --- sampling --------------------------------------------------------------


def sample_near_holes(fmap: LayeredMap, n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """n points uniform in chart cubes [-radius, radius]^3 around randomly chosen holes."""
    which = rng.integers(0, fmap.k, n)
    c = rng.uniform(-radius, radius, (n, 3))
    pts = fmap.hole_arr[which].copy()
    pts[:, :2] += c[:, :2] @ fmap.base.frame.T
    pts[:, 2] += c[:, 2]
    return wrap(pts)


def sample_ball(fmap: LayeredMap, i: int, n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """n points uniform in the chart ball B_radius(r^i_0); the first one is the center."""
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    c = v * (radius * rng.uniform(0.0, 1.0, n) ** (1 / 3))[:, None]
    c[0] = 0.0
    pts = np.repeat(fmap.hole_arr[i][None, :], n, axis=0)
    pts[:, :2] += c[:, :2] @ fmap.base.frame.T
    pts[:, 2] += c[:, 2]
    return wrap(pts)


def sample_for(fmap: TorusMap, n: int, rng: np.random.Generator) -> np.ndarray:
    """Validation samples: uniform, near special bumps and, with surgery, near the holes."""
    if not isinstance(fmap, LayeredMap) or fmap.da is None:
        prof = fmap.profile if isinstance(fmap, SkewMap) else fmap.skew.profile
        return sample_points(prof, n, rng)
    eps = fmap.da.eps
    n_near, n_wide = int(0.3 * n), int(0.3 * n)
    return np.concatenate([
        sample_points(fmap.skew.profile, n - n_near - n_wide, rng),
        sample_near_holes(fmap, n_near, 1.25 * eps, rng),
        sample_near_holes(fmap, n_wide, 3.0 * eps, rng),
    ])


def with_hole_cores(fmap: LayeredMap, pts: np.ndarray) -> np.ndarray:
    """pts plus every hole center, chart-axis points in its theta == 1 core and their f0-preimages.

    The centers are fixed by f0. A core point's preimage is taken along the
    linear eigen-directions, which is exact in u and s.
    """
    r = fmap.da.theta_inner / 2
    axes = r * np.eye(3)
    back = axes * np.array([1 / abs(fmap.base.lambda_u), 1 / abs(fmap.base.lambda_s), 1.0])
    offs = np.vstack([np.zeros(3), axes, -axes, back[:2], -back[:2]])
    core = np.repeat(fmap.hole_arr, len(offs), axis=0)
    c = np.tile(offs, (fmap.k, 1))
    core[:, :2] += c[:, :2] @ fmap.base.frame.T
    core[:, 2] += c[:, 2]
    return np.concatenate([np.atleast_2d(pts), wrap(core)])


# --- axis scan (M4) --------------------------------------------------------


@dataclass(frozen=True)
class AxisFixedPoint:
    s: float
    derivative: float
    stability: str  # "source" or "sink" along the in-torus stable axis


def scan_saddle_structure(fmap: LayeredMap, i: int, n_grid: int = 4001) -> list[AxisFixedPoint]:
    """Fixed points of f1 on the axis {(0, s, 0) : |s| <= eps} through hole i."""
    if fmap.stage is not Stage.F1:
        raise StageError("scan_saddle_structure needs a stage F1 map")
    eps = fmap.da.eps
    hole = fmap.hole_arr[i]
    vs = np.asarray(fmap.base.v_s)

    def lift(s: np.ndarray) -> np.ndarray:
        pts = np.repeat(hole[None, :], len(s), axis=0)
        pts[:, :2] += s[:, None] * vs
        return wrap(pts)

    def axis_gap(s: np.ndarray) -> np.ndarray:
        img, _ = fmap.step(lift(s))
        return chart_coords(hole, fmap.base.frame_inv, img)[:, 1] - s

    grid = np.linspace(-eps, eps, n_grid)
    gap = axis_gap(grid)
    roots = [float(grid[j]) for j in np.flatnonzero(gap == 0.0)]
    for j in np.flatnonzero(gap[:-1] * gap[1:] < 0):
        roots.append(brentq(lambda s: float(axis_gap(np.array([s]))[0]), grid[j], grid[j + 1], xtol=1e-15))
    roots = sorted(roots)
    dedup: list[float] = []
    for s in roots:
        if not dedup or s - dedup[-1] > 1e-9:
            dedup.append(s)
    if not dedup:
        return []
    _, jac = fmap.step(lift(np.array(dedup)), want_jacobian=True)
    ders = eigen_blocks(fmap.base, jac)[:, 1, 1]
    return [
        AxisFixedPoint(s, float(d), "source" if abs(d) > 1 else "sink")
        for s, d in zip(dedup, ders)
    ]


def check_axis_structure(points: list[AxisFixedPoint], eps: float) -> tuple[bool, str]:
    if len(points) != 3:
        return False, f"{len(points)} axis fixed points, expected 3"
    lo, mid, hi = points
    if mid.stability != "source" or abs(mid.s) > 1e-9:
        return False, f"middle fixed point at s = {mid.s:.3e} is a {mid.stability}"
    for p in (lo, hi):
        if p.stability != "sink":
            return False, f"axis point at s = {p.s:.4e} is not attracting along s"
        if abs(p.s) <= eps / 2:
            return False, f"saddle at |s| = {abs(p.s):.4e} lies inside B_eps/2"
    return True, f"source derivative {mid.derivative:.6f}, saddles at s = {lo.s:.4e}, {hi.s:.4e}"


# --- M3 extras -------------------------------------------------------------


def unstable_covering_length(
    base: AnosovBase, half_width: float, samples: int, rng: np.random.Generator, l_max: float = 400.0
) -> float:
    """Length of straight unstable segment needed to meet every stable slab W^s_A(y, half_width).

    Solves t v_u - s v_s = y - n over deck translates n for sampled y; returns
    the largest, over y, of the smallest t >= 0 with |s| <= half_width.
    """
    vu, vs = np.asarray(base.v_u), np.asarray(base.v_s)
    ys = rng.uniform(0.0, 1.0, (samples, 2))
    reach = l_max * abs(vu[0]) + half_width + 1
    n1 = np.arange(-math.ceil(reach), math.ceil(reach) + 1)
    # along the segment, n2 follows n1 on a line; take the nearest integers either side
    tau = (ys[:, None, 0] - n1[None, :]) / vu[0]
    n2c = np.round(ys[:, None, 1] - tau * vu[1])
    best = np.full(samples, np.inf)
    for off in (-1, 0, 1):
        n = np.stack([np.broadcast_to(n1, tau.shape), n2c + off], axis=-1)
        d = ys[:, None, :] - n
        ts = d @ base.frame_inv.T
        t, s = ts[..., 0], -ts[..., 1]
        ok = (t >= 0) & (t <= l_max) & (np.abs(s) <= half_width)
        best = np.minimum(best, np.where(ok, t, np.inf).min(axis=-1))
    return float(np.minimum(best, l_max).max())


def unstable_fiber_slope(fmap: TorusMap, pts: np.ndarray, n_iter: int = 8) -> np.ndarray:
    """|dt/du| of E^u, estimated by pushing v_u forward n_iter steps."""
    v = np.repeat(np.eye(3)[None, :, 0], len(pts), axis=0)
    v[:, :2] = fmap.base.v_u
    y = pts
    for _ in range(n_iter):
        y, jac = fmap.step(y, want_jacobian=True)
        v = np.einsum("nij,nj->ni", jac, v)
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
    ve = v @ fmap.base.eigen3_inv().T
    return np.abs(ve[:, 2] / ve[:, 0])


# --- validators ------------------------------------------------------------


def _u_drift(fmap: LayeredMap, pts: np.ndarray) -> np.ndarray:
    """u-component of f1(p) - f0(p)."""
    y0, _ = fmap.skew.step(pts)
    y1, _ = fmap.step(pts)
    d = torus_delta(y1, y0)
    return np.abs(d[:, :2] @ fmap.base.frame_inv[0])


def cone_result(fmap: TorusMap, pts: np.ndarray, aperture: float, name: str = "M3") -> CheckResult:
    growth, ratio = cone_statistics(fmap, pts, aperture)
    jg, jr = int(np.argmin(growth)), int(np.argmax(ratio))
    margin = min(growth[jg] - CONE_GROWTH, aperture - ratio[jr])
    wit = pts[jg] if growth[jg] - CONE_GROWTH < aperture - ratio[jr] else pts[jr]
    return CheckResult(
        name, bool(margin >= 0), float(margin),
        f"min growth {growth[jg]:.4f}, max image aperture {ratio[jr]:.4f} at aperture {aperture}",
        witness_of(wit),
    )


def plane_result(fmap: TorusMap, pts: np.ndarray, name: str) -> CheckResult:
    _, jac = fmap.step(pts, want_jacobian=True)
    leak = plane_leak(fmap.base, jac)
    j = int(np.argmax(leak))
    return CheckResult(name, bool(leak[j] <= 1e-12), float(1e-12 - leak[j]), f"max u-leak {leak[j]:.3e}", witness_of(pts[j]))


def validate_M(fmap: LayeredMap, samples: int = 10_000, rng_seed: int = 0, aperture: float = CONE_APERTURE) -> PropertyReport:
    """Sampled check of M1-M5 on a stage F1 map."""
    if fmap.stage is not Stage.F1:
        raise StageError("validate_M needs a stage F1 map")
    rng = np.random.default_rng(rng_seed)
    da, k = fmap.da, fmap.k
    report = PropertyReport("M")
    pts = sample_for(fmap, samples, rng)

    drift = _u_drift(fmap, pts)
    j = int(np.argmax(drift))
    report.add(CheckResult("M1", bool(drift[j] <= 1e-12), float(1e-12 - drift[j]), f"max u-displacement {drift[j]:.3e}", witness_of(pts[j])))
    report.add(plane_result(fmap, pts, "M1-plane"))

    # M2: tori invariant, fiber over r^i_0 unchanged
    worst_t, wit = 0.0, None
    xs = pts[:, :2]
    for i in range(k):
        on = np.column_stack([xs, np.full(len(xs), i / k)])
        img, _ = fmap.step(on)
        gap = circle_gap(img[:, 2], i / k)
        jj = int(np.argmax(gap))
        if gap[jj] > worst_t:
            worst_t, wit = float(gap[jj]), on[jj]
    ts = np.linspace(0.0, 1.0, 257)[:-1]
    worst_f = 0.0
    for i in range(k):
        line = np.column_stack([np.repeat(fmap.hole_arr[i][None, :2], len(ts), axis=0), ts])
        a, _ = fmap.skew.step(line)
        b, _ = fmap.step(line)
        worst_f = max(worst_f, float(np.abs(torus_delta(a, b)).max()))
    worst = max(worst_t, worst_f)
    report.add(CheckResult("M2", worst <= 1e-12, 1e-12 - worst, f"torus drift {worst_t:.3e}, r0-fiber change {worst_f:.3e}", witness_of(wit)))

    report.add(cone_result(fmap, pts, aperture))
    l_est = unstable_covering_length(fmap.base, 2 * da.eps, 512, rng)
    report.add(CheckResult("M3-L", True, l_est, f"L_est = {l_est:.3f}", gating=False))
    slope = float(unstable_fiber_slope(fmap, pts[: min(len(pts), 2000)]).max())
    join = (1 / k - 2 * da.eps) / slope if slope > 0 else math.inf
    report.add(CheckResult("M3-join", True, join, f"max |dt/du| on E^u = {slope:.4e}; joining length >= {join:.3f}", gating=False))

    ok, msgs = True, []
    for i in range(k):
        good, msg = check_axis_structure(scan_saddle_structure(fmap, i), da.eps)
        ok &= good
        msgs.append(f"hole {i}: {msg}")
    report.add(CheckResult("M4", ok, 0.0 if ok else -1.0, "; ".join(msgs)))

    report.add(_m5(fmap, with_hole_cores(fmap, pts)))
    return report


def _m5(fmap: LayeredMap, pts: np.ndarray) -> CheckResult:
    _, jac = fmap.step(pts, want_jacobian=True)
    area = cs_area(fmap.base, jac)
    outside = fmap.hole_radii(pts).min(axis=-1) >= fmap.da.zeta
    out_area = np.where(outside, area, 0.0)
    j = int(np.argmax(out_area))
    factor = float(out_area[j])
    observed = f"outside-zeta cs-area {factor:.4f}, 1+xi = {max(1.0, float(area.max())):.4f}"
    if factor > M5_BOUND:
        try:
            z, f = calibrate_zeta_from(fmap, pts, area)
            observed += f"; calibrated zeta {z:.5f} gives {f:.4f}"
        except ZetaError as exc:
            observed += f"; {exc}"
    return CheckResult("M5", factor <= M5_BOUND, M5_BOUND - factor, observed, witness_of(pts[j]))


def calibrate_zeta_from(fmap: LayeredMap, pts: np.ndarray, area: np.ndarray, ladder=ZETA_LADDER) -> tuple[float, float]:
    radii = fmap.hole_radii(pts).min(axis=-1)
    for mult in sorted(ladder):
        zeta = mult * fmap.da.eps
        factor = float(np.where(radii >= zeta, area, 0.0).max())
        logger.debug("zeta %.5f: outside factor %.4f", zeta, factor)
        if factor <= M5_BOUND:
            return zeta, factor
    raise ZetaError(f"no zeta in {tuple(ladder)} x eps brings the outside factor to {M5_BOUND}")


def calibrate_zeta(fmap: LayeredMap, samples: int = 10_000, rng_seed: int = 0, ladder=ZETA_LADDER) -> tuple[float, float]:
    """Smallest ladder radius whose sampled outside-ball cs-area factor is <= 1/2."""
    if fmap.da is None:
        raise StageError("calibrate_zeta needs a map with DA parameters")
    pts = sample_for(fmap, samples, np.random.default_rng(rng_seed))
    _, jac = fmap.step(pts, want_jacobian=True)
    return calibrate_zeta_from(fmap, pts, cs_area(fmap.base, jac), ladder)


# --- escape, residence and the certificate ---------------------------------


@dataclass
class VisitStats:
    escape_times: np.ndarray  # -1 where the orbit never left its ball
    n0: int
    n1: int
    n1_censored: bool


def track_visits(
    fmap: LayeredMap, starts: np.ndarray, own: np.ndarray, escape_radius: float, zeta: float, n_steps: int
) -> VisitStats:
    """Iterate orbits, recording escape from B_escape_radius(own hole), residence in zeta-balls
    and gaps between visits to distinct zeta-balls."""
    pts = np.atleast_2d(starts).copy()
    n = len(pts)
    rows = np.arange(n)

    def ball_of(r: np.ndarray) -> np.ndarray:
        inside = r < zeta
        return np.where(inside.any(axis=-1), np.argmax(inside, axis=-1), -1)

    r = fmap.hole_radii(pts)
    cur = ball_of(r)
    res = (cur >= 0).astype(int)
    n0 = int(res.max(initial=0))
    escape = np.full(n, -1)
    last_ball = np.full(n, -1)
    last_exit = np.zeros(n, dtype=int)
    n1 = None
    for step in range(1, n_steps + 1):
        pts, _ = fmap.step(pts)
        r = fmap.hole_radii(pts)
        left = (escape < 0) & (r[rows, own] >= escape_radius)
        escape[left] = step
        ball = ball_of(r)
        res = np.where((ball >= 0) & (ball == cur), res + 1, (ball >= 0).astype(int))
        n0 = max(n0, int(res.max(initial=0)))
        exited = (cur >= 0) & (ball != cur)
        last_ball[exited] = cur[exited]
        last_exit[exited] = step
        entered = (ball >= 0) & (ball != cur) & (last_ball >= 0) & (last_ball != ball)
        if entered.any():
            gap = int((step - last_exit[entered]).min())
            n1 = gap if n1 is None else min(n1, gap)
        cur = ball
    return VisitStats(escape, n0, n_steps if n1 is None else n1, n1 is None)


@dataclass
class EscapeReport:
    r1_checks: dict[str, bool]
    total: int
    escaped: int
    max_escape_iters: int
    N0: int
    N1: int
    n1_censored: bool
    passed: bool
    witness: tuple[float, ...] | None
    r2: str = "not directly checkable; covered by skeleton probes and basin statistics"


def validate_R(
    fmap: LayeredMap,
    samples: int = 10_000,
    rng_seed: int = 0,
    max_iters: int = 500,
    gap_horizon: int = 1000,
) -> EscapeReport:
    """R1 reruns of M1/M3 on the pushed map, R3 escape from every B_eps/2(r^i_0), and N0/N1."""
    if fmap.stage is not Stage.F:
        raise StageError("validate_R needs a stage F map")
    rng = np.random.default_rng(rng_seed)
    pts = sample_for(fmap, samples, rng)
    r1 = [
        CheckResult("R1-M1", *_leak_ok(_u_drift(fmap, pts))),
        plane_result(fmap, pts, "R1-plane"),
        cone_result(fmap, pts, CONE_APERTURE, "R1-M3"),
    ]
    stats, starts = escape_run(fmap, samples, rng, max(max_iters, gap_horizon))
    exit_t = np.where((stats.escape_times >= 0) & (stats.escape_times <= max_iters), stats.escape_times, -1)
    stuck = np.flatnonzero(exit_t < 0)
    report = EscapeReport(
        r1_checks={c.name: c.passed for c in r1},
        total=len(starts),
        escaped=int(len(starts) - len(stuck)),
        max_escape_iters=int(exit_t.max(initial=0)),
        N0=stats.n0,
        N1=stats.n1,
        n1_censored=stats.n1_censored,
        passed=bool(all(c.passed for c in r1) and len(stuck) == 0),
        witness=witness_of(starts[stuck[0]]) if len(stuck) else None,
    )
    logger.info("validate_R: %d/%d escaped, N0=%d, N1=%d", report.escaped, report.total, report.N0, report.N1)
    return report


def _leak_ok(drift: np.ndarray) -> tuple[bool, float]:
    worst = float(drift.max(initial=0.0))
    return worst <= 1e-12, 1e-12 - worst


def escape_run(fmap: LayeredMap, samples: int, rng: np.random.Generator, n_steps: int) -> tuple[VisitStats, np.ndarray]:
    """Orbits started in every B_eps/2(r^i_0), hole centers included."""
    per = max(1, samples // fmap.k)
    starts = np.concatenate([sample_ball(fmap, i, per, fmap.da.eps / 2, rng) for i in range(fmap.k)])
    own = np.repeat(np.arange(fmap.k), per)
    return track_visits(fmap, starts, own, fmap.da.eps / 2, fmap.da.zeta, n_steps), starts


@dataclass
class CertificateReport:
    N0: int
    N1: int
    max_dilatation: float
    outside_factor: float
    product: float
    passed: bool
    n1_censored: bool = False
    status: str = "fail"  # pass, fail, or censored when N1 is only a lower bound
    horizon: int = 0


def assemble_certificate(
    n0: int, n1: int, max_dilatation: float, outside_factor: float, n1_censored: bool = False, horizon: int = 0
) -> CertificateReport:
    """pass iff max_dilatation^N0 * outside_factor^N1 < 1 and outside_factor <= 1/2 (computed in logs).

    A censored N1 never passes: the product is then only an upper bound.
    """
    log_p = n0 * math.log(max_dilatation) + (n1 * math.log(outside_factor) if outside_factor > 0 else -math.inf)
    product = math.exp(log_p) if log_p < 700 else math.inf
    holds = bool(log_p < 0 and outside_factor <= M5_BOUND)
    status = "fail" if not holds else "censored" if n1_censored else "pass"
    return CertificateReport(
        N0=n0,
        N1=n1,
        max_dilatation=max_dilatation,
        outside_factor=outside_factor,
        product=product,
        passed=status == "pass",
        n1_censored=n1_censored,
        status=status,
        horizon=horizon,
    )


def volume_certificate(
    fmap: LayeredMap,
    samples: int = 10_000,
    rng_seed: int = 0,
    escape: EscapeReport | None = None,
    horizon: int = 1000,
    max_horizon: int | None = None,
) -> CertificateReport:
    """(1 + xi)^N0 (outside factor)^N1 < 1 with measured quantities.

    The gap run doubles its horizon up to max_horizon (default 4 x horizon)
    until N1 is measured. Without surgery there are no zeta-balls: N0 = 0 and
    N1 stays censored at the horizon.
    """
    rng = np.random.default_rng(rng_seed)
    pts = sample_for(fmap, samples, rng)
    if not isinstance(fmap, LayeredMap) or fmap.da is None or fmap.stage is Stage.F0:
        _, jac = fmap.step(pts, want_jacobian=True)
        area = cs_area(fmap.base, jac)
        return assemble_certificate(0, horizon, max(1.0, float(area.max())), float(area.max()), True, horizon)
    pts = with_hole_cores(fmap, pts)
    _, jac = fmap.step(pts, want_jacobian=True)
    area = cs_area(fmap.base, jac)
    max_dil = max(1.0, float(area.max()))
    outside = fmap.hole_radii(pts).min(axis=-1) >= fmap.da.zeta
    factor = float(np.where(outside, area, 0.0).max())
    if escape is not None:
        return assemble_certificate(escape.N0, escape.N1, max_dil, factor, escape.n1_censored)
    limit = 4 * horizon if max_horizon is None else max_horizon
    n_steps = horizon
    while True:
        stats, _ = escape_run(fmap, samples, np.random.default_rng(rng_seed + 1), n_steps)
        if not stats.n1_censored or n_steps >= limit:
            break
        logger.info("N1 censored at %d steps, doubling the horizon", n_steps)
        n_steps = min(2 * n_steps, limit)
    return assemble_certificate(stats.n0, stats.n1, max_dil, factor, stats.n1_censored, n_steps)
