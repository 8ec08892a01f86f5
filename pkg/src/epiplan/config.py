"""Run configuration: key = value files with strict validation.

One key per line, '#' starts a comment, unknown keys are rejected, and every
range invariant is checked at parse time.  Missing keys take the documented
defaults, and the fully resolved configuration is echoed next to any results
so a run can always be reproduced.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .errors import ConfigError, DomainError
from .plan import BACKENDS
from .rules import AmbiguityConfig
from .seir import EpidemicParams


@dataclass
class RunConfig:
    # epidemic model
    N: int = 1000
    mu: float = 10.0
    beta: float = 0.025
    alpha0: float = 0.9
    l_C: float = 0.5
    l_D: float = 1.0 / 3.0
    Q: float = 2.0
    k_R: float = 500.0
    W: float = 1000.0
    L: int = 5
    M: int = 5
    lam: float = 0.95          # config key: lambda
    T: int = 12
    # discretization and ambiguity
    Y: int = 10
    delta: float = 0.05
    k: float = 1000.0
    # planner
    backend: str = "drmdp-enumerate"
    niter: int = 50
    seed: int = 0
    inner_method: str = "parametric"
    early_stop: bool = True
    robust_budget: float = 0.5
    mccormick_lower_one: bool = False
    # simulation scenarios
    radius: float = 0.5
    perturb_direction: str = "high-infective"
    nseeds: int = 10
    p_S1_list: tuple[float, ...] = (0.6, 0.7)
    p_E1: float = 0.1
    sweep_param: str = "Q"
    sweep_values: tuple[float, ...] = (0.5, 2.0, 50.0)
    # execution
    threads: int = 1

    def params(self) -> EpidemicParams:
        return EpidemicParams(N=self.N, mu=self.mu, beta=self.beta,
                              alpha0=self.alpha0, l_C=self.l_C, l_D=self.l_D,
                              Q=self.Q, k_R=self.k_R, W=self.W, L=self.L,
                              M=self.M, lam=self.lam, T=self.T)

    def ambiguity(self) -> AmbiguityConfig:
        return AmbiguityConfig(delta=self.delta, k=self.k)

    def planner_kwargs(self) -> dict:
        return dict(backend=self.backend, niter=self.niter, seed=self.seed,
                    inner_method=self.inner_method, early_stop=self.early_stop,
                    robust_budget=self.robust_budget,
                    mccormick_lower=(1, 1) if self.mccormick_lower_one else (0, 0))


_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {"lam": "lambda"}

_BOOL_KEYS = {"early_stop", "mccormick_lower_one"}
_INT_KEYS = {"N", "L", "M", "T", "Y", "niter", "seed", "nseeds", "threads"}
_LIST_KEYS = {"p_S1_list", "sweep_values"}
_STR_KEYS = {"backend", "inner_method", "perturb_direction", "sweep_param"}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Parse key = value lines into a validated RunConfig."""
    known = {f.name for f in fields(RunConfig)}
    values: dict[str, object] = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', "
                              f"got {rawline.strip()!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        name = _KEY_TO_FIELD.get(key, key)
        if name not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if name in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            if name in _BOOL_KEYS:
                values[name] = _parse_bool(raw)
            elif name in _INT_KEYS:
                values[name] = int(raw)
            elif name in _LIST_KEYS:
                values[name] = tuple(float(v) for v in raw.split(",") if v.strip())
            elif name in _STR_KEYS:
                values[name] = raw
            else:
                values[name] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}")

    cfg = RunConfig(**values)
    _validate(cfg, source)
    return cfg


def parse_config(path: str) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), source=path)


def _validate(cfg: RunConfig, source: str) -> None:
    try:
        cfg.params()
        cfg.ambiguity()
    except DomainError as exc:
        raise ConfigError(f"{source}: {exc}")
    if cfg.Y < 1:
        raise ConfigError(f"{source}: Y must be >= 1, got {cfg.Y}")
    if cfg.backend not in BACKENDS:
        raise ConfigError(f"{source}: unknown backend {cfg.backend!r}")
    if cfg.inner_method not in ("parametric", "lp"):
        raise ConfigError(f"{source}: inner_method must be parametric or lp")
    if cfg.niter < 1:
        raise ConfigError(f"{source}: niter must be >= 1")
    if not 0.0 <= cfg.radius <= 2.0:
        raise ConfigError(f"{source}: radius must be in [0, 2]")
    if cfg.perturb_direction not in ("high-infective", "random"):
        raise ConfigError(f"{source}: bad perturb_direction")
    if cfg.nseeds < 1:
        raise ConfigError(f"{source}: nseeds must be >= 1")
    if cfg.threads < 1:
        raise ConfigError(f"{source}: threads must be >= 1")
    if not 0.0 <= cfg.p_E1 <= 1.0:
        raise ConfigError(f"{source}: p_E1 must be in [0, 1]")
    for v in cfg.p_S1_list:
        if not 0.0 <= v <= 1.0 or v + cfg.p_E1 > 1.0 + 1e-12:
            raise ConfigError(f"{source}: initial p_S1 {v} out of range")
    from .sim import SWEEPABLE

    if cfg.sweep_param not in SWEEPABLE:
        raise ConfigError(f"{source}: sweep_param must be one of {SWEEPABLE}")


def resolved_text(cfg: RunConfig) -> str:
    """Every key with its resolved value, one per line, stable order."""
    lines = []
    for f in fields(RunConfig):
        key = _FIELD_TO_KEY.get(f.name, f.name)
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = ",".join(f"{v:.12g}" for v in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = f"{val:.12g}"
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(resolved_text(cfg).encode()).hexdigest()[:16]
