"""The glued-Kan skew product f0(x, t) = (g_A(x), phi_x(t)).

k circles sit at t_i = i/k. On the interval [t_i, t_(i+1)] with
tau = k (t - t_i) the fiber map is t + Delta(x, t),

    Delta = mu_L (e^G_i - 1)(t - t_i) + mu_R (e^G_(i+1) - 1)(t - t_(i+1)) + mu_M U_i
            + (kappa/k) [mu_L beta_r0(i) tau^2 + mu_R beta_r0(i+1) (1 - tau)^2]

so the fiber derivative on circle i is exactly exp(G_i(x)). The last
bracket is a saddle-node term: it vanishes to second order on every circle
and keeps the drift over r^i_0 and r^i_1 strictly upward where the other
terms are switched off.

Special points are held as indices into a five-row array:
0 = a0, 1 = a1, 2..4 = b0..b2. The chain pattern comes from i mod 2 and
i mod 3 and is never stored per circle.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from errors import (
    BumpRadiusError,
    DivisibilityError,
    DuplicateSpecialPointError,
    GainCeilingError,
    ProfileParameterError,
    PropertyViolationError,
    SpecialPointIndexError,
)
from reports import CheckResult, PropertyReport, witness_of
from smooth import bump, window_left, window_middle, window_right
from torus import AnosovBase, Point2, Point3, base_step, cs_area, torus_delta, wrap

logger = logging.getLogger(__name__)

DEFAULT_K = 6
DEFAULT_SPECIALS = (0, 1, 2, 3, 4)
DEFAULT_NU = 0.1
DEFAULT_G_PLUS = 0.05
DEFAULT_U_PLUS = 0.002
DEFAULT_RHO_B = 0.04
DEFAULT_KAPPA = 0.1

P_SAMPLES = 10_000
EXACT_TOL = 1e-12
P2_BOUNDS = (0.5, 1.5)
V0_BOUND = 1 / 3


@dataclass(frozen=True)
class FiberProfile:
    k: int
    a0: Point2
    a1: Point2
    b0: Point2
    b1: Point2
    b2: Point2
    nu: float
    g_plus: float
    u_plus: float
    rho_b: float
    kappa: float = DEFAULT_KAPPA
    special_indices: tuple[int, ...] = DEFAULT_SPECIALS
    specials: np.ndarray = field(default=None, repr=False, compare=False)  # (5, 2)

    def __post_init__(self) -> None:
        pts = np.array([p.as_array() for p in (self.a0, self.a1, self.b0, self.b1, self.b2)])
        object.__setattr__(self, "specials", pts)

    def circle(self, i: int) -> float:
        return (i % self.k) / self.k

    # index arithmetic for the chains
    @staticmethod
    def p_hat(i):
        return np.mod(i, 2)

    @staticmethod
    def q_hat(i):
        return np.mod(np.add(i, 1), 2)

    @staticmethod
    def r_hat(i, j: int):
        """Index of r^i_j for j in {-1, 0, 1}: b_(i mod 3), b_(i-1 mod 3), b_(i+1 mod 3)."""
        shift = {1: 0, 0: -1, -1: 1}[j]
        return 2 + np.mod(np.add(i, shift), 3)

    def point(self, m: int) -> Point2:
        return (self.a0, self.a1, self.b0, self.b1, self.b2)[int(m)]

    def hole_base(self, i: int) -> Point2:
        return self.point(self.r_hat(i, 0))

    def fingerprint_fields(self) -> dict:
        return {
            "k": self.k,
            "specials": list(self.special_indices),
            "nu": self.nu,
            "g_plus": self.g_plus,
            "u_plus": self.u_plus,
            "rho_b": self.rho_b,
            "kappa": self.kappa,
        }


def min_special_distance(points: list[Point2]) -> float:
    best = np.inf
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            d = np.linalg.norm(torus_delta(points[i].as_array(), points[j].as_array()))
            best = min(best, float(d))
    return best


def make_profile(
    base: AnosovBase,
    k: int = DEFAULT_K,
    special_indices: tuple[int, ...] = DEFAULT_SPECIALS,
    nu: float = DEFAULT_NU,
    g_plus: float = DEFAULT_G_PLUS,
    u_plus: float = DEFAULT_U_PLUS,
    rho_b: float = DEFAULT_RHO_B,
    kappa: float = DEFAULT_KAPPA,
) -> FiberProfile:
    if k < 6 or k % 6 != 0:
        raise DivisibilityError(f"k = {k}: the circle count must be divisible by 6")
    idx = tuple(int(m) for m in special_indices)
    if len(idx) != 5:
        raise SpecialPointIndexError(f"need 5 special-point indices, got {len(idx)}")
    n = len(base.fixed_pts)
    bad = [m for m in idx if not 0 <= m < n]
    if bad:
        raise SpecialPointIndexError(f"indices {bad} outside the {n} base fixed points")
    if len(set(idx)) != 5:
        raise DuplicateSpecialPointError(f"special-point indices {idx} are not distinct")
    if not nu > 0 or not u_plus > 0 or not g_plus > 0 or not rho_b > 0 or kappa < 0:
        raise ProfileParameterError("nu, g_plus, u_plus, rho_b must be positive and kappa non-negative")
    if g_plus > nu / 2 + 1e-15:
        raise GainCeilingError(f"g_plus = {g_plus} exceeds nu/2 = {nu / 2}")
    pts = [base.fixed_pts[m] for m in idx]
    half = min_special_distance(pts) / 2
    if not rho_b < half:
        raise BumpRadiusError(f"rho_b = {rho_b} is not below half the minimum special-point distance ({half:.6f})")
    return FiberProfile(
        k=k,
        a0=pts[0], a1=pts[1], b0=pts[2], b1=pts[3], b2=pts[4],
        nu=nu, g_plus=g_plus, u_plus=u_plus, rho_b=rho_b, kappa=kappa,
        special_indices=idx,
    )


# --- fields ----------------------------------------------------------------


def special_bumps(profile: FiberProfile, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """beta(x - special_m) for all five specials: values (N, 5), gradients (N, 5, 2)."""
    xy = np.atleast_2d(xy)
    vals = np.empty(xy.shape[:-1] + (5,))
    grads = np.empty(xy.shape[:-1] + (5, 2))
    for m in range(5):
        v, g = bump(torus_delta(xy, profile.specials[m]), profile.rho_b)
        vals[..., m] = v
        grads[..., m, :] = g
    return vals, grads


def _take(arr: np.ndarray, m: np.ndarray) -> np.ndarray:
    rows = np.arange(arr.shape[0])
    return arr[rows, m]


def _g_field(profile: FiberProfile, B: np.ndarray, dB: np.ndarray, i: np.ndarray):
    p, r1, r0 = profile.p_hat(i), profile.r_hat(i, 1), profile.r_hat(i, 0)
    lift = profile.nu + profile.g_plus
    g = -profile.nu + lift * (_take(B, p) + _take(B, r1)) + profile.nu * _take(B, r0)
    dg = lift * (_take(dB, p) + _take(dB, r1)) + profile.nu * _take(dB, r0)
    return g, dg


def _u_field(profile: FiberProfile, B: np.ndarray, dB: np.ndarray, i: np.ndarray):
    idx = (profile.p_hat(i), profile.r_hat(i, 0), profile.r_hat(i, 1))
    u = sum(_take(B, m) for m in idx) - _take(B, profile.q_hat(i))
    du = sum(_take(dB, m) for m in idx) - _take(dB, profile.q_hat(i))
    return profile.u_plus * u, profile.u_plus * du


def _as_xy(x) -> tuple[np.ndarray, bool]:
    if isinstance(x, Point2):
        return x.as_array()[None, :], True
    return np.atleast_2d(np.asarray(x, dtype=float)), False


def field_G(profile: FiberProfile, i: int, x):
    """log of the fiber derivative on circle i: -nu + (nu+g+)(beta_p + beta_r1) + nu beta_r0."""
    xy, scalar = _as_xy(x)
    B, dB = special_bumps(profile, xy)
    g, _ = _g_field(profile, B, dB, np.full(len(xy), i % profile.k))
    return float(g[0]) if scalar else g


def field_U(profile: FiberProfile, i: int, x):
    """Mid-interval drift on (t_i, t_(i+1)): u+ (beta_p + beta_r0 + beta_r1 - beta_q)."""
    xy, scalar = _as_xy(x)
    B, dB = special_bumps(profile, xy)
    u, _ = _u_field(profile, B, dB, np.full(len(xy), i % profile.k))
    return float(u[0]) if scalar else u


def fiber_delta(profile: FiberProfile, xy: np.ndarray, t: np.ndarray, want_grad: bool = False):
    """Delta(x, t) with optional (dDelta/dx (N, 2), dDelta/dt (N,))."""
    k = profile.k
    kt = k * t
    i = np.clip(np.floor(kt).astype(np.intp), 0, k - 1)
    tau = kt - i
    i1 = (i + 1) % k

    B, dB = special_bumps(profile, xy)
    g0, dg0 = _g_field(profile, B, dB, i)
    g1, dg1 = _g_field(profile, B, dB, i1)
    u, du = _u_field(profile, B, dB, i)
    s0, s1 = _take(B, profile.r_hat(i, 0)), _take(B, profile.r_hat(i1, 0))
    e0, e1 = np.expm1(g0), np.expm1(g1)

    ml, dml = window_left(tau)
    mr, dmr = window_right(tau)
    mm, dmm = window_middle(tau)
    c = profile.kappa / k
    up, dn = tau * tau, (1.0 - tau) ** 2

    delta = ml * e0 * tau / k + mr * e1 * (tau - 1.0) / k + mm * u + c * (ml * s0 * up + mr * s1 * dn)
    if not want_grad:
        return delta, None, None

    d_tau = (
        (dml * tau + ml) * e0 / k
        + (dmr * (tau - 1.0) + mr) * e1 / k
        + dmm * u
        + c * (dml * s0 * up + 2.0 * tau * ml * s0 + dmr * s1 * dn - 2.0 * (1.0 - tau) * mr * s1)
    )
    ds0, ds1 = _take(dB, profile.r_hat(i, 0)), _take(dB, profile.r_hat(i1, 0))
    d_x = (
        (ml * (e0 + 1.0) * tau / k)[:, None] * dg0
        + (mr * (e1 + 1.0) * (tau - 1.0) / k)[:, None] * dg1
        + mm[:, None] * du
        + c * ((ml * up)[:, None] * ds0 + (mr * dn)[:, None] * ds1)
    )
    return delta, d_x, k * d_tau


# --- the skew map ----------------------------------------------------------


@dataclass(frozen=True)
class SkewMap:
    base: AnosovBase
    profile: FiberProfile
    validate: bool = field(default=True, compare=False)

    def __post_init__(self) -> None:
        if self.validate:
            report = validate_P(self, samples=P_SAMPLES, rng_seed=0)
            if not report.passed:
                names = ", ".join(c.name for c in report.failures())
                raise PropertyViolationError(f"fiber profile fails {names}")

    def step(self, pts: np.ndarray, want_jacobian: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
        pts = np.atleast_2d(pts)
        xy = pts[:, :2]
        t = pts[:, 2]
        delta, d_x, d_t = fiber_delta(self.profile, xy, t, want_jacobian)
        out = np.empty_like(pts)
        out[:, :2] = base_step(self.base, xy)
        out[:, 2] = wrap(t + delta)
        if not want_jacobian:
            return out, None
        jac = np.zeros((len(pts), 3, 3))
        jac[:, :2, :2] = self.base.matrix
        jac[:, 2, :2] = d_x
        jac[:, 2, 2] = 1.0 + d_t
        return out, jac

    def adapted_jacobian(self, pts: np.ndarray) -> np.ndarray:
        return self.step(pts, want_jacobian=True)[1]

    def fingerprint_fields(self) -> dict:
        return {"base": self.base.fingerprint_fields(), "profile": self.profile.fingerprint_fields()}


def apply_f0(skew: SkewMap, p: Point3, want_jacobian: bool = False) -> tuple[Point3, np.ndarray | None]:
    out, jac = skew.step(p.as_array()[None, :], want_jacobian)
    return Point3.from_array(out[0]), (jac[0] if jac is not None else None)


# --- sampling --------------------------------------------------------------


def sample_near(centers: np.ndarray, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n base points uniform in discs of the given radius around randomly chosen centers."""
    which = rng.integers(0, len(centers), n)
    ang = rng.uniform(0.0, 2 * np.pi, n)
    rad = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    off = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
    return wrap(centers[which] + off)


def sample_points(profile: FiberProfile, n: int, rng: np.random.Generator, focus: float = 0.5) -> np.ndarray:
    """(n, 3) points: a share uniform on T^3, the rest with base inside the special bumps."""
    n_focus = int(n * focus)
    pts = rng.uniform(0.0, 1.0, (n, 3))
    if n_focus:
        pts[:n_focus, :2] = sample_near(profile.specials, profile.rho_b, n_focus, rng)
    return pts


def circle_gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.asarray(a) - np.asarray(b)
    return np.abs(d - np.round(d))


# --- validation ------------------------------------------------------------


def validate_P(skew: SkewMap, samples: int = P_SAMPLES, rng_seed: int = 0) -> PropertyReport:
    """Sampled check of P1-P5 plus the cs-area (V0) and partial-hyperbolicity (PH) bounds."""
    prof = skew.profile
    k = prof.k
    rng = np.random.default_rng(rng_seed)
    report = PropertyReport("P")

    # P1: circles invariant
    xs = sample_points(prof, samples, rng)[:, :2]
    worst, wit = 0.0, None
    for i in range(k):
        pts = np.column_stack([xs, np.full(len(xs), i / k)])
        img, _ = skew.step(pts)
        gap = circle_gap(img[:, 2], i / k)
        j = int(np.argmax(gap))
        if gap[j] > worst:
            worst, wit = float(gap[j]), pts[j]
    report.add(CheckResult("P1", worst <= EXACT_TOL, EXACT_TOL - worst, f"max |phi(t_i) - t_i| = {worst:.3e}", witness_of(wit)))

    # P2: fiber derivative bounds
    pts = sample_points(prof, samples, rng)
    _, jac = skew.step(pts, want_jacobian=True)
    dphi = jac[:, 2, 2]
    lo, hi = P2_BOUNDS
    jmin, jmax = int(np.argmin(dphi)), int(np.argmax(dphi))
    margin = min(dphi[jmin] - lo, hi - dphi[jmax])
    wit = pts[jmin] if dphi[jmin] - lo < hi - dphi[jmax] else pts[jmax]
    report.add(
        CheckResult(
            "P2", bool(margin > 0), float(margin),
            f"dphi/dt in [{dphi[jmin]:.6f}, {dphi[jmax]:.6f}]", witness_of(wit),
        )
    )

    # V0 and PH on the same samples
    area = cs_area(skew.base, jac)
    ja = int(np.argmax(area))
    report.add(CheckResult("V0", bool(area[ja] <= V0_BOUND), float(V0_BOUND - area[ja]), f"max cs-area = {area[ja]:.6f}", witness_of(pts[ja])))
    lam_s, lam_u = abs(skew.base.lambda_s), abs(skew.base.lambda_u)
    ph = min(dphi[jmin] - lam_s, lam_u - dphi[jmax])
    report.add(CheckResult("PH", bool(ph > 0), float(ph), f"lambda_s = {lam_s:.6f}, lambda_u = {lam_u:.6f}"))

    report.add(_check_signs(skew))
    report.add(_check_connections(skew))
    report.add(_check_rates(skew, xs))
    logger.debug("validate_P: %s", "pass" if report.passed else "fail")
    return report


def _log_rate(skew: SkewMap, xy: np.ndarray, i: int) -> np.ndarray:
    """log phi_x'(t_i), read off the Jacobian."""
    pts = np.column_stack([xy, np.full(len(xy), i / skew.profile.k)])
    _, jac = skew.step(pts, want_jacobian=True)
    return np.log(jac[:, 2, 2])


def _check_signs(skew: SkewMap) -> CheckResult:
    prof = skew.profile
    worst, wit, ok = np.inf, None, True
    for i in range(prof.k):
        idx = {
            "p": (prof.p_hat(i), 1),
            "r1": (prof.r_hat(i, 1), 1),
            "q": (prof.q_hat(i), -1),
            "r-1": (prof.r_hat(i, -1), -1),
        }
        xy = prof.specials[[m for m, _ in idx.values()] + [prof.r_hat(i, 0)]]
        rate = _log_rate(skew, xy, i)
        for (m, sign), val in zip(idx.values(), rate[:4]):
            if sign * val <= 0:
                ok = False
            if sign * val < worst:
                worst, wit = float(sign * val), (*prof.specials[m], i / prof.k)
        zero = abs(float(rate[4]))
        if zero > EXACT_TOL:
            ok = False
            worst, wit = -zero, (*prof.specials[prof.r_hat(i, 0)], i / prof.k)
    return CheckResult("P3", ok, float(worst), "sign of log phi' at p, r1 (+), q, r-1 (-), r0 (0)", wit)


def _check_connections(skew: SkewMap, n_tau: int = 399) -> CheckResult:
    """Drift sign over the special base points on every interval interior."""
    prof = skew.profile
    k = prof.k
    tau = np.linspace(0.0, 1.0, n_tau + 2)[1:-1]
    worst, wit, ok = np.inf, None, True
    for i in range(k):
        for m, sign in ((prof.p_hat(i), 1), (prof.q_hat(i), -1), (prof.r_hat(i, 0), 1), (prof.r_hat(i, 1), 1)):
            xy = np.repeat(prof.specials[m][None, :], n_tau, axis=0)
            t = (i + tau) / k
            delta, _, _ = fiber_delta(prof, xy, t)
            signed = sign * delta
            j = int(np.argmin(signed))
            if signed[j] <= 0:
                ok = False
            if signed[j] < worst:
                worst, wit = float(signed[j]), (*prof.specials[m], float(t[j]))
    return CheckResult("P4", ok, float(worst), "drift sign over p, q, r0, r1 connections", wit)


def _check_rates(skew: SkewMap, xs: np.ndarray) -> CheckResult:
    prof = skew.profile
    worst, wit = np.inf, None
    for i in range(prof.k):
        rate = _log_rate(skew, xs, i)
        near = np.zeros(len(xs), dtype=bool)
        for m in (prof.p_hat(i), prof.r_hat(i, 1), prof.r_hat(i, 0)):
            d = np.linalg.norm(torus_delta(xs, prof.specials[m]), axis=-1)
            near |= d < prof.rho_b
        bound = np.where(near, prof.nu / 2, -prof.nu)
        slack = bound + EXACT_TOL - rate
        j = int(np.argmin(slack))
        if slack[j] < worst:
            worst, wit = float(slack[j]), (*xs[j], i / prof.k)
    return CheckResult(
        "P5", worst >= 0, worst,
        "log phi'(t_i) <= -nu outside the bumps at p, r1, r0 and <= nu/2 inside", wit,
    )
