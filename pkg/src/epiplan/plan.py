"""Planners: trajectory-driven value iteration and full backward induction.

Both planners share the same one-stage backup dispatch, so any back-end
(nominal, worst-case-shifted, or the mean-ambiguous family) plugs into either.
Stage indices run 1..T with decisions at 1..T-1; values at stage T are the
terminal reward (zero).

The trajectory planner initializes values from the stage-reward bound
h(s, t) = max_a fitted_reward(a), h(s, T) = 0.  With nonpositive rewards this
bound sits above the true value, so per-state value sequences decrease toward
the fixed point as sweeps repeat, and greedy action choice keeps exploring
overvalued states until estimates settle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backup import (
    best_action_over_rows,
    drmdp_backup_enumerate,
    drmdp_backup_mccormick,
    drmdp_backup_unary,
    nominal_backup,
)
from .errors import DomainError
from .model import EpidemicModel
from .seir import Action

BACKENDS = ("nominal", "robust", "drmdp-enumerate", "drmdp-mccormick", "drmdp-unary")


@dataclass
class PlannerConfig:
    backend: str = "drmdp-enumerate"
    niter: int = 50
    seed: int = 0
    inner_method: str = "parametric"   # enumerate back-end: parametric | lp
    early_stop: bool = True
    stop_tol: float = 1e-7
    stop_patience: int = 10
    robust_budget: float = 0.5
    mccormick_lower: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise DomainError(f"unknown backend {self.backend!r}")
        if self.niter < 1:
            raise DomainError("niter must be >= 1")


@dataclass
class TraceStep:
    iteration: int
    stage: int
    state: int
    action: Action
    value: float


@dataclass
class PolicyTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)


class ValueTable:
    """Values keyed by (state index, stage); missing entries fall back to the
    stage-reward bound, absorbing states and the terminal stage to zero."""

    def __init__(self, T: int):
        self.T = T
        self.values: dict[tuple[int, int], float] = {}

    def set(self, idx: int, t: int, value: float) -> None:
        self.values[(idx, t)] = value

    def get(self, idx: int, t: int):
        return self.values.get((idx, t))

    def lookup(self, model: EpidemicModel, idx: int, t: int) -> float:
        if t >= self.T:
            return 0.0
        stored = self.values.get((idx, t))
        if stored is not None:
            return stored
        if not model.grid.in_S[idx]:
            return 0.0
        return admissible_heuristic(model, idx, t)

    def lookup_fn(self, model: EpidemicModel, t: int):
        return lambda idx: self.lookup(model, idx, t)


def admissible_heuristic(model: EpidemicModel, idx: int, t: int) -> float:
    """Stage-reward bound: zero at the horizon, else the best fitted reward."""
    if t >= model.T:
        return 0.0
    return model.stage_heuristic(idx)


def backup_state(model: EpidemicModel, idx: int, t: int, v_next, cfg: PlannerConfig):
    """One-stage backup of a single state under the configured back-end."""
    lam = model.lam
    if cfg.backend == "nominal":
        return nominal_backup(model.actions, model.rows(idx), model.rewards(idx),
                              v_next, lam)
    if cfg.backend == "robust":
        rows = model.shifted_rows(idx, cfg.robust_budget)
        return best_action_over_rows(model.actions, rows, model.rewards(idx),
                                     v_next, lam)
    coeffs = model.rules(idx)
    k = model.acfg.k
    if cfg.backend == "drmdp-enumerate":
        return drmdp_backup_enumerate(coeffs, model.actions, v_next, lam, k,
                                      method=cfg.inner_method)
    if cfg.backend == "drmdp-mccormick":
        return drmdp_backup_mccormick(coeffs, v_next, lam, k,
                                      L=model.params.L, M=model.params.M,
                                      a_lower=cfg.mccormick_lower)
    if cfg.backend == "drmdp-unary":
        return drmdp_backup_unary(coeffs, v_next, lam, k,
                                  L=model.params.L, M=model.params.M)
    raise DomainError(f"unknown backend {cfg.backend!r}")


def greedy_action(model: EpidemicModel, table: ValueTable, idx: int, t: int,
                  cfg: PlannerConfig) -> tuple[Action, float]:
    """Best action at (state, stage) against stored values, without writing."""
    value, action = backup_state(model, idx, t, table.lookup_fn(model, t + 1), cfg)
    return action, value


def rtdp(model: EpidemicModel, init_idx: int, cfg: PlannerConfig):
    """Trajectory-driven planning from a fixed initial state.

    Each sweep walks stages 1..T-1, backing up only the visited state and
    sampling the successor from the nominal row of the chosen action,
    restricted to states inside the simplex.  Visits to the same state at
    different stages are independent table entries.
    """
    if not model.grid.in_S[init_idx]:
        raise DomainError("initial state must lie inside the population simplex")
    table = ValueTable(model.T)
    trace = PolicyTrace()
    rng = np.random.default_rng(cfg.seed)
    prev_root = None
    stable = 0

    for it in range(1, cfg.niter + 1):
        idx = init_idx
        for t in range(1, model.T):
            value, action = backup_state(model, idx, t,
                                         table.lookup_fn(model, t + 1), cfg)
            table.set(idx, t, value)
            trace.steps.append(TraceStep(it, t, idx, action, value))
            if t < model.T - 1:
                idx = _sample_next(model, idx, action, rng)
        root = table.get(init_idx, 1)
        if cfg.early_stop and prev_root is not None:
            stable = stable + 1 if abs(root - prev_root) < cfg.stop_tol else 0
            if stable >= cfg.stop_patience:
                break
        prev_root = root
    return table, trace


def _sample_next(model: EpidemicModel, idx: int, action: Action,
                 rng: np.random.Generator) -> int:
    row = model.rows(idx)[model.action_index(action)]
    mask = model.grid.in_S[row.indices]
    if not mask.any():
        return idx
    probs = row.probs[mask]
    probs = probs / probs.sum()
    choices = row.indices[mask]
    return int(rng.choice(choices, p=probs))


def backward_dp(model: EpidemicModel, cfg: PlannerConfig) -> ValueTable:
    """Stage-by-stage backup of every simplex state from the horizon down.

    States outside the simplex keep value zero at every stage.
    """
    table = ValueTable(model.T)
    in_s = model.grid.in_S_indices()
    off_s = np.nonzero(~model.grid.in_S)[0]
    dense = np.zeros(model.grid.n_corners)  # values at stage t+1
    for t in range(model.T - 1, 0, -1):
        new_dense = np.zeros(model.grid.n_corners)
        for idx in in_s:
            value, _ = backup_state(model, int(idx), t, dense, cfg)
            table.set(int(idx), t, value)
            new_dense[idx] = value
        for idx in off_s:
            table.set(int(idx), t, 0.0)
        dense = new_dense
    return table


def table_rows(model: EpidemicModel, table: ValueTable, cfg: PlannerConfig):
    """Serialize stored values (with greedy actions) as CSV-ready rows."""
    out = []
    for (idx, t) in sorted(table.values):
        if t >= model.T or not model.grid.in_S[idx]:
            action = Action(0, 0)
        else:
            action, _ = greedy_action(model, table, idx, t, cfg)
        c = model.grid.corner(idx)
        out.append({
            "stage": t,
            "state": idx,
            "p_S": c.coords[0],
            "p_E": c.coords[1],
            "p_I": c.coords[2],
            "value": table.get(idx, t),
            "y_V": action.y_V,
            "y_R": action.y_R,
        })
    return out
