"""Run configuration: a flat key = value file plus --set overrides.

Keys are dotted names (base.a, profile.k, da.eps, ...). Blank values mean
"use the derived default" where a default depends on other keys (da.s0,
push.delta, classify.t_tol, ...).
"""

import hashlib
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from dotenv import dotenv_values, load_dotenv

from basins import DEFAULT_MIN_FRACTION, DEFAULT_SCALES, MAX_UNRESOLVED, SliceSpec, check_scales
from dynamics import ClassifyParams
from errors import ConfigError
from kan import SkewMap, make_profile
from surgery import DAParams, LayeredMap, PushParams, Stage, default_da, default_push, make_layered
from torus import make_anosov

logger = logging.getLogger(__name__)

DEFAULTS_VERSION = "1"
ENV_PATH = Path(__file__).parent / ".env"


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _opt_float(v: str) -> float | None:
    return None if v.strip().lower() in ("", "auto") else float(v)


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(","))


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(","))


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _str(v: str) -> str:
    return v.strip()


def _key(name: str, parse, default):
    return field(default=default, metadata={"key": name, "parse": parse})


@dataclass(frozen=True)
class RunConfig:
    # base matrix
    a: int = _key("base.a", _int, 8)
    b: int = _key("base.b", _int, 7)
    c: int = _key("base.c", _int, 1)
    d: int = _key("base.d", _int, 1)
    # fiber profile
    k: int = _key("profile.k", _int, 6)
    specials: tuple[int, ...] = _key("profile.specials", _ints, (0, 1, 2, 3, 4))
    nu: float = _key("profile.nu", _float, 0.1)
    g_plus: float = _key("profile.g_plus", _float, 0.05)
    u_plus: float = _key("profile.u_plus", _float, 0.002)
    rho_b: float = _key("profile.rho_b", _float, 0.04)
    kappa: float = _key("profile.kappa", _float, 0.1)
    # DA surgery, blank = derived from eps
    eps: float = _key("da.eps", _float, 0.02)
    delta_DA: float = _key("da.delta_DA", _float, 12.0)
    s0: float | None = _key("da.s0", _opt_float, None)
    theta_inner: float | None = _key("da.theta_inner", _opt_float, None)
    theta_outer: float | None = _key("da.theta_outer", _opt_float, None)
    zeta: float | None = _key("da.zeta", _opt_float, None)
    # vertical push
    delta: float | None = _key("push.delta", _opt_float, None)
    push_inner: float | None = _key("push.inner", _opt_float, None)
    push_outer: float | None = _key("push.outer", _opt_float, None)
    stage: str = _key("stage", _str, "F")
    strict: bool = _key("strict", _bool, True)
    # basin classification
    n_transient: int = _key("classify.n_transient", _int, 20_000)
    window: int = _key("classify.window", _int, 2_000)
    majority: float = _key("classify.majority", _float, 0.9)
    t_tol: float | None = _key("classify.t_tol", _opt_float, None)
    n_max: int = _key("classify.n_max", _int, 200_000)
    # sweeps
    sweep_kind: str = _key("sweep.kind", _str, "FixBase1")
    sweep_fixed: float = _key("sweep.fixed_value", _float, 0.5)
    sweep_h_range: tuple[float, ...] = _key("sweep.h_range", _floats, (0.0, 1.0))
    sweep_v_range: tuple[float, ...] = _key("sweep.v_range", _floats, (0.0, 1.0))
    sweep_resolution: tuple[int, ...] = _key("sweep.resolution", _ints, (256, 256))
    sweep_grid: tuple[int, ...] = _key("sweep.grid", _ints, (64, 64, 64))
    sweep_jitter: bool = _key("sweep.jitter", _bool, False)
    scales: tuple[int, ...] = _key("intermingle.scales", _ints, DEFAULT_SCALES)
    min_fraction: float = _key("intermingle.min_fraction", _float, DEFAULT_MIN_FRACTION)
    max_unresolved: float = _key("sweep.max_unresolved", _float, MAX_UNRESOLVED)
    # validators and probes
    samples: int = _key("validate.samples", _int, 10_000)
    escape_iters: int = _key("validate.max_iters", _int, 500)
    horizon: int = _key("certify.horizon", _int, 1_000)
    max_horizon: int = _key("certify.max_horizon", _int, 4_000)
    lyap_n: int = _key("lyap.n", _int, 1_000_000)
    lyap_reorth: int = _key("lyap.reorth", _int, 10)
    lyap_points: int = _key("lyap.points", _int, 10)
    probe_points: int = _key("probe.n_points", _int, 1_000)
    probe_iters: int = _key("probe.n_iters", _int, 500)
    witness_samples: int = _key("witness.samples", _int, 200)
    witness_budget: int = _key("witness.budget", _int, 1_000_000)
    # run
    seed: int = _key("seed", _int, 0)
    workers: int = _key("workers", _int, 1)
    out: str = _key("out", _str, "out")

    def da_params(self) -> DAParams:
        return default_da(self.eps, self.delta_DA, self.s0, self.theta_inner, self.theta_outer, self.zeta)

    def push_params(self) -> PushParams:
        push = default_push(self.eps, self.delta)
        return PushParams(
            delta=push.delta,
            inner=push.inner if self.push_inner is None else self.push_inner,
            outer=push.outer if self.push_outer is None else self.push_outer,
        )

    def classify_params(self) -> ClassifyParams:
        t_tol = 1 / (4 * self.k) if self.t_tol is None else self.t_tol
        params = ClassifyParams(self.n_transient, self.window, self.majority, t_tol, self.n_max)
        params.check_k(self.k)
        return params

    def slice_spec(self) -> SliceSpec:
        if len(self.sweep_resolution) != 2 or len(self.sweep_h_range) != 2 or len(self.sweep_v_range) != 2:
            raise ConfigError("sweep.resolution, sweep.h_range and sweep.v_range take two values")
        return SliceSpec(
            kind=self.sweep_kind,
            fixed_value=self.sweep_fixed,
            h_range=tuple(self.sweep_h_range),
            v_range=tuple(self.sweep_v_range),
            resolution=tuple(self.sweep_resolution),
        )

    def grid(self) -> tuple[int, int, int]:
        if len(self.sweep_grid) != 3:
            raise ConfigError("sweep.grid takes three values")
        return tuple(self.sweep_grid)


KEYS = {f.metadata["key"]: f for f in fields(RunConfig)}


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def to_lines(cfg: RunConfig) -> list[str]:
    """The full effective configuration, one key = value per line, in declaration order."""
    return [f"{f.metadata['key']} = {_format(getattr(cfg, f.name))}" for f in fields(RunConfig)]


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256("\n".join(sorted(to_lines(cfg))).encode()).hexdigest()


def parse_values(raw: dict[str, str | None]) -> RunConfig:
    kwargs = {}
    for key, value in raw.items():
        f = KEYS.get(key)
        if f is None:
            raise ConfigError(f"unknown config key {key!r}")
        if value is None:
            raise ConfigError(f"config key {key!r} has no value")
        try:
            kwargs[f.name] = f.metadata["parse"](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from exc
    return RunConfig(**kwargs)


def process_defaults() -> dict[str, str]:
    """workers/out defaults from KAN_LAB_WORKERS and KAN_LAB_OUT (a local .env is loaded first)."""
    load_dotenv(ENV_PATH)
    env = {}
    if os.environ.get("KAN_LAB_WORKERS"):
        env["workers"] = os.environ["KAN_LAB_WORKERS"]
    if os.environ.get("KAN_LAB_OUT"):
        env["out"] = os.environ["KAN_LAB_OUT"]
    return env


def load_config(path: Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Read the file, apply KEY=VALUE overrides in order, then validate by construction."""
    raw: dict[str, str | None] = process_defaults()
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} not found")
        raw.update(dotenv_values(path))
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        raw[key.strip()] = value.strip()
    cfg = parse_values(raw)
    check_config(cfg)
    return cfg


def check_config(cfg: RunConfig) -> None:
    """Construct every object the configuration describes; construction enforces the invariants."""
    try:
        stage = Stage(cfg.stage)
    except ValueError as exc:
        raise ConfigError(f"stage must be one of F0, F1, F; got {cfg.stage!r}") from exc
    if cfg.workers < 1 or cfg.seed < 0:
        raise ConfigError("workers must be >= 1 and seed >= 0")
    if not 0 < cfg.horizon <= cfg.max_horizon:
        raise ConfigError(f"certify.horizon = {cfg.horizon} must be positive and at most certify.max_horizon = {cfg.max_horizon}")
    if not 0.0 <= cfg.max_unresolved <= 1.0:
        raise ConfigError(f"sweep.max_unresolved = {cfg.max_unresolved} must lie in [0, 1]")
    base = make_anosov(cfg.a, cfg.b, cfg.c, cfg.d)
    profile = make_profile(base, cfg.k, cfg.specials, cfg.nu, cfg.g_plus, cfg.u_plus, cfg.rho_b, cfg.kappa)
    make_layered(SkewMap(base, profile, validate=False), cfg.da_params(), cfg.push_params(), stage, cfg.strict)
    cfg.classify_params()
    cfg.slice_spec()
    cfg.grid()
    check_scales(cfg.scales)


def build_map(cfg: RunConfig, stage: Stage | str | None = None, validate: bool = True) -> LayeredMap:
    """The configured map; validate runs the P checks on f0 and raises if they fail."""
    base = make_anosov(cfg.a, cfg.b, cfg.c, cfg.d)
    profile = make_profile(base, cfg.k, cfg.specials, cfg.nu, cfg.g_plus, cfg.u_plus, cfg.rho_b, cfg.kappa)
    skew = SkewMap(base, profile, validate=validate)
    return make_layered(skew, cfg.da_params(), cfg.push_params(), stage or cfg.stage, cfg.strict)
