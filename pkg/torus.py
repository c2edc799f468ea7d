"""Geometry of the 2- and 3-torus, the linear Anosov base map and its eigenframe.

Arrays of points have shape (..., 3) with columns (x1, x2, t), every
coordinate taken mod 1. Tangent vectors and Jacobians live in the same
(x1, x2, t) coordinates.
"""

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from errors import (
    ChartRangeError,
    DeterminantError,
    NonFiniteCoordinateError,
    TooFewFixedPointsError,
    WeakExpansionError,
)

MIN_EXPANSION = 5.0
MIN_FIXED_POINTS = 5
CHART_RADIUS = 0.25


def _reduce(v: float) -> float:
    """Reduce mod 1 by floor subtraction; a result that rounds to 1.0 maps to 0.0."""
    if not math.isfinite(v):
        raise NonFiniteCoordinateError(f"non-finite coordinate {v!r}")
    r = v - math.floor(v)
    return 0.0 if r >= 1.0 else r


def wrap(a: np.ndarray) -> np.ndarray:
    """Vectorized mod-1 reduction with the same seam rule as normalize."""
    r = a - np.floor(a)
    return np.where(r >= 1.0, 0.0, r)


@dataclass(frozen=True)
class Point2:
    x1: float
    x2: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x1", _reduce(float(self.x1)))
        object.__setattr__(self, "x2", _reduce(float(self.x2)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


@dataclass(frozen=True)
class Point3:
    base: Point2
    t: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "t", _reduce(float(self.t)))

    @classmethod
    def of(cls, x1: float, x2: float, t: float) -> "Point3":
        return cls(Point2(x1, x2), t)

    @classmethod
    def from_array(cls, a: np.ndarray) -> "Point3":
        return cls.of(float(a[0]), float(a[1]), float(a[2]))

    @property
    def x1(self) -> float:
        return self.base.x1

    @property
    def x2(self) -> float:
        return self.base.x2

    def as_array(self) -> np.ndarray:
        return np.array([self.base.x1, self.base.x2, self.t])


def normalize(p: Point3 | tuple[float, float, float]) -> Point3:
    """Reduce every coordinate to [0, 1).

    Seam rule: v - floor(v), and a value that rounds to 1.0 maps to 0.0, so
    1 - 1e-17 (which is 1.0 in binary64) normalizes to 0.0.
    """
    if isinstance(p, Point3):
        return Point3.of(p.x1, p.x2, p.t)
    x1, x2, t = p
    return Point3.of(x1, x2, t)


# --- Anosov base -----------------------------------------------------------


@dataclass(frozen=True)
class AnosovBase:
    a: int
    b: int
    c: int
    d: int
    lambda_u: float
    lambda_s: float
    v_u: tuple[float, float]
    v_s: tuple[float, float]
    fixed_pts: tuple[Point2, ...]
    matrix: np.ndarray = field(repr=False, compare=False)
    frame: np.ndarray = field(repr=False, compare=False)  # columns v_u, v_s
    frame_inv: np.ndarray = field(repr=False, compare=False)

    @property
    def log_lambda_u(self) -> float:
        return math.log(abs(self.lambda_u))

    def eigen3(self) -> np.ndarray:
        """3x3 basis [v_u, v_s, e_t] as columns."""
        p = np.eye(3)
        p[:2, :2] = self.frame
        return p

    def eigen3_inv(self) -> np.ndarray:
        p = np.eye(3)
        p[:2, :2] = self.frame_inv
        return p

    def fingerprint_fields(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d}


def lattice_fixed_points(a: int, b: int, c: int, d: int) -> list[Point2]:
    """Solutions of (A - I) p = 0 mod 1, enumerated on the lattice (1/D) Z^2.

    D = |det(A - I)|. Every solution has denominator dividing D, so the scan
    is exhaustive; the congruence is tested in integer arithmetic.
    """
    n = abs((a - 1) * (d - 1) - b * c)
    if n == 0:
        raise WeakExpansionError("A - I is singular; the base map is not hyperbolic")
    pts = []
    for j1 in range(n):
        for j2 in range(n):
            if ((a - 1) * j1 + b * j2) % n == 0 and (c * j1 + (d - 1) * j2) % n == 0:
                pts.append(Point2(j1 / n, j2 / n))
    return sorted(pts, key=lambda p: (p.x1, p.x2))


def _eigenvector(a: int, b: int, c: int, d: int, lam: float) -> tuple[float, float]:
    v = np.array([b, lam - a]) if b != 0 else np.array([lam - d, c])
    v = v / np.linalg.norm(v)
    lead = v[0] if v[0] != 0 else v[1]
    if lead < 0:
        v = -v
    return float(v[0]), float(v[1])


def make_anosov(a: int, b: int, c: int, d: int) -> AnosovBase:
    """Validate an integer matrix and build its eigenframe and fixed-point list."""
    if a * d - b * c != 1:
        raise DeterminantError(f"det A = {a * d - b * c}, expected 1")
    tr = a + d
    if tr * tr <= 4:
        raise WeakExpansionError(f"trace {tr}: A is not hyperbolic")
    root = math.sqrt(tr * tr - 4)
    lam_u = (tr + math.copysign(root, tr)) / 2
    if abs(lam_u) <= MIN_EXPANSION:
        raise WeakExpansionError(f"dominant eigenvalue {lam_u:.6f} does not exceed {MIN_EXPANSION}")
    lam_s = 1.0 / lam_u
    count = abs(tr - 2)
    if count < MIN_FIXED_POINTS:
        raise TooFewFixedPointsError(f"|trace - 2| = {count}, need at least {MIN_FIXED_POINTS} fixed points")

    v_u = _eigenvector(a, b, c, d, lam_u)
    v_s = _eigenvector(a, b, c, d, lam_s)
    frame = np.array([[v_u[0], v_s[0]], [v_u[1], v_s[1]]])
    fixed = lattice_fixed_points(a, b, c, d)
    assert len(fixed) == count
    return AnosovBase(
        a=a, b=b, c=c, d=d,
        lambda_u=lam_u,
        lambda_s=lam_s,
        v_u=v_u,
        v_s=v_s,
        fixed_pts=tuple(fixed),
        matrix=np.array([[a, b], [c, d]], dtype=float),
        frame=frame,
        frame_inv=np.linalg.inv(frame),
    )


def base_fixed_points(base: AnosovBase) -> list[Point2]:
    return list(base.fixed_pts)


def base_step(base: AnosovBase, xy: np.ndarray) -> np.ndarray:
    """Apply g_A to an (..., 2) array, elementwise so results do not depend on batch shape."""
    x1 = xy[..., 0]
    x2 = xy[..., 1]
    out = np.empty_like(xy)
    out[..., 0] = base.a * x1 + base.b * x2
    out[..., 1] = base.c * x1 + base.d * x2
    return wrap(out)


def apply_base(base: AnosovBase, x: Point2) -> Point2:
    y = base_step(base, x.as_array())
    return Point2(float(y[0]), float(y[1]))


# --- distances and charts --------------------------------------------------


def torus_delta(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Displacement p - q taken to the nearest deck translate."""
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return d - np.round(d)


def torus_distance(p: Point3 | np.ndarray, q: Point3 | np.ndarray) -> float:
    """Minimum Euclidean distance over deck translates."""
    pa = p.as_array() if isinstance(p, Point3) else p
    qa = q.as_array() if isinstance(q, Point3) else q
    return float(np.linalg.norm(torus_delta(pa, qa)))


@dataclass(frozen=True)
class Chart:
    anchor: Point3
    u_axis: tuple[float, float]
    s_axis: tuple[float, float]

    @property
    def frame_inv(self) -> np.ndarray:
        return np.linalg.inv(np.array([[self.u_axis[0], self.s_axis[0]], [self.u_axis[1], self.s_axis[1]]]))


def make_chart(base: AnosovBase, anchor: Point3) -> Chart:
    return Chart(anchor=anchor, u_axis=base.v_u, s_axis=base.v_s)


def chart_coords(anchor: np.ndarray, frame_inv: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """(u, s, w) of an (..., 3) array relative to anchor, using the nearest lift."""
    d = torus_delta(pts, anchor)
    out = np.empty_like(d)
    out[..., 0] = frame_inv[0, 0] * d[..., 0] + frame_inv[0, 1] * d[..., 1]
    out[..., 1] = frame_inv[1, 0] * d[..., 0] + frame_inv[1, 1] * d[..., 1]
    out[..., 2] = d[..., 2]
    return out


def local_chart(chart: Chart, p: Point3) -> tuple[float, float, float]:
    d = torus_delta(p.as_array(), chart.anchor.as_array())
    dist = float(np.linalg.norm(d))
    if dist > CHART_RADIUS:
        raise ChartRangeError(f"point at distance {dist:.4f} from anchor exceeds chart radius {CHART_RADIUS}")
    u, s, w = chart_coords(chart.anchor.as_array(), chart.frame_inv, p.as_array())
    return float(u), float(s), float(w)


def chart_from(chart: Chart, u: float, s: float, w: float) -> Point3:
    a = chart.anchor
    return Point3.of(
        a.x1 + u * chart.u_axis[0] + s * chart.s_axis[0],
        a.x2 + u * chart.u_axis[1] + s * chart.s_axis[1],
        a.t + w,
    )


# --- maps and the cs plane -------------------------------------------------


class TorusMap(Protocol):
    """Anything iterable on T^3 with an analytic Jacobian."""

    base: AnosovBase

    def step(self, pts: np.ndarray, want_jacobian: bool = False) -> tuple[np.ndarray, np.ndarray | None]: ...

    def adapted_jacobian(self, pts: np.ndarray) -> np.ndarray: ...


def eigen_blocks(base: AnosovBase, jac: np.ndarray) -> np.ndarray:
    """Jacobians (..., 3, 3) rewritten in the [v_u, v_s, e_t] basis."""
    return base.eigen3_inv() @ jac @ base.eigen3()


def plane_leak(base: AnosovBase, jac: np.ndarray) -> np.ndarray:
    """Largest u-component of the image of v_s or e_t; zero when span(v_s, e_t) is invariant."""
    m = eigen_blocks(base, jac)
    return np.maximum(np.abs(m[..., 0, 1]), np.abs(m[..., 0, 2]))


def cs_block(base: AnosovBase, jac: np.ndarray) -> np.ndarray:
    """Restriction of the Jacobian to the plane span(v_s, e_t), in that basis."""
    return eigen_blocks(base, jac)[..., 1:, 1:]


def cs_area(base: AnosovBase, jac: np.ndarray) -> np.ndarray:
    """|det| of the restriction to span(v_s, e_t). v_s and e_t are orthonormal, so this is an area ratio."""
    return np.abs(np.linalg.det(cs_block(base, jac)))


def cone_image(base: AnosovBase, jac: np.ndarray, aperture: float, n_dirs: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Growth and image aperture of the u-cone {v_u + w : |w| <= aperture, w in span(v_s, e_t)}.

    Returns per-point (min growth |Jv|/|v|, max |w'|/|u'|) over the cone's
    axis and n_dirs boundary rays.
    """
    ang = np.linspace(0.0, 2 * np.pi, n_dirs, endpoint=False)
    coeffs = np.zeros((3, n_dirs + 1))
    coeffs[0] = 1.0
    coeffs[1, 1:] = aperture * np.cos(ang)
    coeffs[2, 1:] = aperture * np.sin(ang)
    p = base.eigen3()
    vecs = p @ coeffs                              # (3, m) in (x1, x2, t)
    img = jac @ vecs                               # (..., 3, m)
    img_e = base.eigen3_inv() @ img
    growth = np.linalg.norm(img, axis=-2) / np.linalg.norm(vecs, axis=0)
    ratio = np.hypot(img_e[..., 1, :], img_e[..., 2, :]) / np.abs(img_e[..., 0, :])
    return growth.min(axis=-1), ratio.max(axis=-1)


def cone_statistics(fmap: TorusMap, pts: np.ndarray, aperture: float) -> tuple[np.ndarray, np.ndarray]:
    """cone_image of the map's surgery-adapted Jacobian at each point."""
    return cone_image(fmap.base, fmap.adapted_jacobian(pts), aperture)
