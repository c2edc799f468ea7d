"""Probes of the skeleton {q^i}: stable sets of the saddles q^i = (q_hat^i, t_i) and the
behaviour of their unstable manifolds."""

import logging
from dataclasses import dataclass, field

import numpy as np

from dynamics import grow_unstable_curve
from errors import ProbeParameterError, StageError
from kan import circle_gap
from reports import witness_of
from surgery import LayeredMap, Stage
from torus import TorusMap, chart_coords, wrap

logger = logging.getLogger(__name__)

STABLE_HALF_WIDTH = 3.0  # multiples of eps
INVARIANT_S_BOUND = 1.5  # multiples of eps


@dataclass
class ProbeReport:
    name: str
    passed: bool
    samples: int
    metrics: dict[str, float] = field(default_factory=dict)
    witness: tuple[float, ...] | None = None


def _eps(fmap: TorusMap) -> float:
    if not isinstance(fmap, LayeredMap) or fmap.da is None:
        raise StageError("the skeleton probes need a map with DA parameters")
    return fmap.da.eps


def _q_anchor(fmap: LayeredMap, i: int) -> np.ndarray:
    prof = fmap.skew.profile
    return np.array([*prof.specials[prof.q_hat(i)], i / prof.k])


def stable_set_probe(
    fmap: LayeredMap, i: int, samples: int = 2_000, n_iters: int = 2_000, rng_seed: int = 0, t_tol: float | None = None
) -> ProbeReport:
    """Starts in W^s_A(q_hat^i, 3 eps) x (t_(i-1), t_(i+1)) must stay on the stable segment and settle on t_i.

    Each step is checked against the segment and the point is then put back on
    it (u = 0), so the u-test measures one-step invariance rather than growth
    of rounding error along the expanding direction.
    """
    if fmap.stage not in (Stage.F1, Stage.F):
        raise StageError("stable_set_probe needs a stage F1 or F map")
    eps = _eps(fmap)
    k = fmap.k
    t_tol = 1 / (4 * k) if t_tol is None else t_tol
    rng = np.random.default_rng(rng_seed)
    anchor = _q_anchor(fmap, i)
    frame, finv = fmap.base.frame, fmap.base.frame_inv

    s = rng.uniform(-STABLE_HALF_WIDTH * eps, STABLE_HALF_WIDTH * eps, samples)
    t = (i + rng.uniform(-1.0, 1.0, samples)) / k

    def place(s: np.ndarray, t: np.ndarray) -> np.ndarray:
        pts = np.empty((len(s), 3))
        pts[:, 0] = anchor[0] + s * frame[0, 1]
        pts[:, 1] = anchor[1] + s * frame[1, 1]
        pts[:, 2] = t
        return wrap(pts)

    pts = place(s, t)
    min_hole = float(fmap.hole_radii(pts).min())
    max_u, max_s = 0.0, 0.0
    worst = None
    for _ in range(n_iters):
        img, _ = fmap.step(pts)
        c = chart_coords(anchor, finv, img)
        u = np.abs(c[:, 0])
        j = int(np.argmax(u))
        if u[j] > max_u:
            max_u, worst = float(u[j]), pts[j]
        s, t = c[:, 1], img[:, 2]
        max_s = max(max_s, float(np.abs(s).max()))
        pts = place(s, t)
        min_hole = min(min_hole, float(fmap.hole_radii(pts).min()))
    gap = circle_gap(pts[:, 2], i / k)
    settled = float(np.mean(gap < t_tol))
    passed = bool(min_hole >= eps and max_u <= 1e-12 and max_s <= INVARIANT_S_BOUND * eps and settled == 1.0)
    if settled < 1.0 and worst is None:
        worst = pts[int(np.argmax(gap))]
    return ProbeReport(
        name=f"stable-set-{i}",
        passed=passed,
        samples=samples,
        metrics={
            "min_hole_radius": min_hole,
            "max_u_step": max_u,
            "max_abs_s": max_s,
            "final_abs_s": float(np.abs(s).max()),
            "settled_fraction": settled,
        },
        witness=witness_of(worst) if not passed else None,
    )


def _stable_crossings(fmap: LayeredMap, curve: np.ndarray, eps: float) -> int:
    """Index of the first curve segment crossing some W^s_A(q_hat^i, 3 eps) x (t_(i-1), t_(i+1)), or -1."""
    k = fmap.k
    first = len(curve)
    for i in range(k):
        c = chart_coords(_q_anchor(fmap, i), fmap.base.frame_inv, curve)
        u, s = c[:, 0], c[:, 1]
        sign = (u[:-1] * u[1:] <= 0) & (np.abs(u[:-1]) < 0.1) & (np.abs(u[1:]) < 0.1)
        lam = np.where(sign, np.abs(u[:-1]) / np.maximum(np.abs(u[:-1]) + np.abs(u[1:]), 1e-300), 0.0)
        s_at = s[:-1] + lam * (s[1:] - s[:-1])
        t_at = curve[:-1, 2]
        hit = sign & (np.abs(s_at) <= STABLE_HALF_WIDTH * eps) & (circle_gap(t_at, i / k) < 1 / k)
        idx = np.flatnonzero(hit)
        if len(idx):
            first = min(first, int(idx[0]))
    return first if first < len(curve) else -1


def skeleton_s1_probe(
    fmap: LayeredMap, samples: int = 32, rng_seed: int = 0, grow_length: float = 4.0
) -> ProbeReport:
    """Every unstable curve of length grow_length should cross the stable set of some q^i."""
    if samples < 1:
        raise ProbeParameterError("samples must be positive")
    eps = _eps(fmap)
    rng = np.random.default_rng(rng_seed)
    seeds = rng.uniform(0.0, 1.0, (samples, 3))
    hits, needed, witness = 0, 0.0, None
    for seed in seeds:
        curve, gaps, _ = grow_unstable_curve(fmap, seed, target=grow_length)
        j = _stable_crossings(fmap, curve, eps)
        if j >= 0:
            hits += 1
            needed = max(needed, float(gaps[:j].sum()))
        elif witness is None:
            witness = seed
    frac = hits / samples
    logger.info("S1 probe: %d/%d curves cross a stable set", hits, samples)
    return ProbeReport(
        name="skeleton-S1",
        passed=hits == samples,
        samples=samples,
        metrics={"crossing_fraction": frac, "longest_needed": needed, "grow_length": grow_length},
        witness=witness_of(witness),
    )


def skeleton_s2_probe(fmap: LayeredMap, i: int, n_points: int = 256, n_iters: int = 500, seg: float = 1e-3) -> ProbeReport:
    """A local unstable segment through q^i stays in the torus t_i and outside B_eps/2(r^i_0)."""
    if fmap.stage not in (Stage.F1, Stage.F):
        raise StageError("skeleton_s2_probe needs a stage F1 or F map")
    eps = _eps(fmap)
    anchor = _q_anchor(fmap, i)
    s = np.linspace(-seg, seg, n_points)
    pts = wrap(anchor[None, :] + s[:, None] * np.array([*fmap.base.v_u, 0.0]))
    drift, closest, witness = 0.0, np.inf, None
    for _ in range(n_iters):
        pts, _ = fmap.step(pts)
        drift = max(drift, float(circle_gap(pts[:, 2], anchor[2]).max()))
        r = fmap.hole_radii(pts)[:, i]
        j = int(np.argmin(r))
        if r[j] < closest:
            closest = float(r[j])
            if closest < eps / 2 and witness is None:
                witness = pts[j]
    passed = bool(drift <= 1e-12 and closest >= eps / 2)
    return ProbeReport(
        name=f"skeleton-S2-{i}",
        passed=passed,
        samples=n_points,
        metrics={"max_torus_drift": drift, "closest_hole_radius": closest, "half_eps": eps / 2},
        witness=witness_of(witness),
    )
