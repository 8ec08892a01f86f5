"""Policy evaluation under nominal or misspecified transition kernels.

Planning always happens against the nominal model; episodes then roll the
system forward under a "true" kernel that may sit anywhere within an L1 ball
around the nominal rows.  This reproduces the comparison protocol: plan once
per back-end, simulate many seeded episodes per kernel, and aggregate totals,
stage-wise infection curves, and stage-wise mean actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .backup import worst_case_shift
from .errors import DomainError
from .grid import SparseDistribution
from .model import EpidemicModel, lattice_state_index
from .plan import PlannerConfig, ValueTable, greedy_action, rtdp
from .rules import AmbiguityConfig
from .seir import Action, EpidemicParams

SWEEPABLE = ("Q", "k_R", "mu_beta", "W", "alpha0")


@dataclass(frozen=True)
class PerturbationSpec:
    """How the true kernel deviates from the nominal one, per row."""

    radius: float = 0.5
    direction: str = "high-infective"   # or "random"
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.radius <= 2.0:
            raise DomainError(f"radius must be in [0, 2], got {self.radius}")
        if self.direction not in ("high-infective", "random"):
            raise DomainError(f"unknown direction {self.direction!r}")


class TrueKernel:
    """Lazily perturbed kernel rows; deterministic per (state, action)."""

    def __init__(self, model: EpidemicModel, spec: PerturbationSpec):
        self.model = model
        self.spec = spec
        self._cache: dict[tuple[int, int], SparseDistribution] = {}

    def row(self, idx: int, action: Action) -> SparseDistribution:
        ai = self.model.action_index(action)
        key = (idx, ai)
        if key not in self._cache:
            nominal = self.model.rows(idx)[ai]
            if self.spec.radius == 0.0:
                out = nominal
            elif self.spec.direction == "high-infective":
                out = worst_case_shift(nominal, self.model.grid, self.spec.radius)
            else:
                out = self._random_shift(nominal, idx, ai)
            self._cache[key] = out
        return self._cache[key]

    def _random_shift(self, row: SparseDistribution, idx: int, ai: int):
        if len(row) <= 1:
            return row
        rng = np.random.default_rng((self.spec.seed, idx, ai))
        probs = row.probs.copy()
        move = self.spec.radius / 2.0
        order = rng.permutation(len(probs))
        donors = [i for i in order if probs[i] > 0][: max(1, len(probs) // 2)]
        receivers = [i for i in order[::-1] if i not in donors]
        for d in donors:
            if move <= 0 or not receivers:
                break
            take = min(move, probs[d])
            r = receivers[0]
            room = 1.0 - probs[r]
            take = min(take, room)
            probs[d] -= take
            probs[r] += take
            move -= take
        return SparseDistribution(row.indices.copy(), probs, normalize=True)


def build_true_kernel(model: EpidemicModel, spec: PerturbationSpec) -> TrueKernel:
    return TrueKernel(model, spec)


@dataclass
class EpisodeRecord:
    """One rollout: stages 1..T of states, decisions at 1..T-1."""

    states: list[int]
    actions: list[Action]
    rewards: list[float]
    pct_infective: list[float]
    pct_recovered: list[float]
    total_reward: float


def run_episode(
    model: EpidemicModel,
    table: ValueTable,
    cfg: PlannerConfig,
    kernel: TrueKernel,
    init_idx: int,
    seed: int,
) -> EpisodeRecord:
    """Greedy rollout against stored values, sampling from the true kernel."""
    rng = np.random.default_rng(seed)
    lam = model.lam
    idx = init_idx
    states, actions, rewards = [idx], [], []
    for t in range(1, model.T):
        if model.grid.in_S[idx]:
            action, _ = greedy_action(model, table, idx, t, cfg)
            reward = float(model.rewards(idx)[model.action_index(action)])
        else:
            action, reward = Action(0, 0), 0.0  # absorbing, no dynamics left
        actions.append(action)
        rewards.append(reward)
        row = kernel.row(idx, action)
        idx = int(rng.choice(row.indices, p=row.probs))
        states.append(idx)
    total = sum(lam ** (t - 1) * r for t, r in enumerate(rewards, start=1))
    total += lam ** (model.T - 1) * 0.0  # terminal reward is identically zero
    coords = model.grid.coords[states]
    return EpisodeRecord(
        states=states,
        actions=actions,
        rewards=rewards,
        pct_infective=[float(c[2]) for c in coords],
        pct_recovered=[float(max(0.0, 1.0 - c.sum())) for c in coords],
        total_reward=float(total),
    )


def plan_for_backend(model: EpidemicModel, backend: str, init_idx: int,
                     niter: int, seed: int) -> tuple[ValueTable, PlannerConfig]:
    cfg = PlannerConfig(backend=backend, niter=niter, seed=seed)
    table, _ = rtdp(model, init_idx, cfg)
    return table, cfg


def compare_models(
    params: EpidemicParams,
    Y: int,
    acfg: AmbiguityConfig,
    backends: tuple[str, ...] = ("drmdp-enumerate", "nominal", "robust"),
    p_S1_list: tuple[float, ...] = (0.6, 0.7),
    p_E1: float = 0.1,
    kernels: tuple[str, ...] = ("nominal", "perturbed"),
    pspec: PerturbationSpec = PerturbationSpec(),
    nseeds: int = 10,
    niter: int = 50,
    plan_seed: int = 0,
):
    """Backends x initial conditions x kernels, every cell seeded and averaged.

    Returns (episode_rows, summary_rows); the initial infective share is the
    remainder 1 - p_S(1) - p_E(1).
    """
    model = EpidemicModel(params, Y, acfg)
    true_kernels = {
        "nominal": build_true_kernel(model, replace(pspec, radius=0.0)),
        "perturbed": build_true_kernel(model, pspec),
    }
    episodes = []
    summary = []
    for p_S1 in p_S1_list:
        p_I1 = round(1.0 - p_S1 - p_E1, 12)
        init = lattice_state_index(model, p_S1, p_E1, p_I1)
        for backend in backends:
            table, cfg = plan_for_backend(model, backend, init, niter, plan_seed)
            for kernel_name in kernels:
                kern = true_kernels[kernel_name]
                records = [run_episode(model, table, cfg, kern, init, seed)
                           for seed in range(nseeds)]
                for seed, rec in enumerate(records):
                    for t in range(1, model.T):
                        episodes.append({
                            "backend": backend,
                            "kernel": kernel_name,
                            "p_S1": p_S1,
                            "seed": seed,
                            "stage": t,
                            "y_V": rec.actions[t - 1].y_V,
                            "y_R": rec.actions[t - 1].y_R,
                            "reward": rec.rewards[t - 1],
                            "pct_infective": rec.pct_infective[t - 1],
                            "pct_recovered": rec.pct_recovered[t - 1],
                            "total_reward": rec.total_reward,
                        })
                totals = np.array([r.total_reward for r in records])
                for t in range(1, model.T):
                    summary.append({
                        "backend": backend,
                        "kernel": kernel_name,
                        "p_S1": p_S1,
                        "stage": t,
                        "mean_y_V": float(np.mean([r.actions[t - 1].y_V
                                                   for r in records])),
                        "mean_y_R": float(np.mean([r.actions[t - 1].y_R
                                                   for r in records])),
                        "mean_pct_infective": float(np.mean(
                            [r.pct_infective[t - 1] for r in records])),
                        "mean_pct_recovered": float(np.mean(
                            [r.pct_recovered[t - 1] for r in records])),
                        "mean_total_reward": float(totals.mean()),
                        "std_total_reward": float(totals.std(ddof=0)),
                    })
    return episodes, summary


def sensitivity_sweep(
    params: EpidemicParams,
    Y: int,
    acfg: AmbiguityConfig,
    param: str,
    values: tuple[float, ...],
    nseeds: int = 5,
    pspec: PerturbationSpec = PerturbationSpec(),
    scenario: tuple[float, float, float] = (0.7, 0.1, 0.2),
    backend: str = "drmdp-enumerate",
    niter: int = 50,
    plan_seed: int = 0,
):
    """Stage-wise infection shares as one model constant sweeps over values.

    mu_beta sweeps the product mu*beta (dynamics depend only on it); other
    names sweep the matching cost or effectiveness constant.
    """
    if param not in SWEEPABLE:
        raise DomainError(f"unknown sweep parameter {param!r}; "
                          f"expected one of {SWEEPABLE}")
    rows = []
    for value in values:
        if param == "mu_beta":
            p = replace(params, mu=float(value), beta=1.0)
        else:
            p = replace(params, **{param: float(value)})
        model = EpidemicModel(p, Y, acfg)
        init = lattice_state_index(model, *scenario)
        table, cfg = plan_for_backend(model, backend, init, niter, plan_seed)
        kern = build_true_kernel(model, pspec)
        for seed in range(nseeds):
            rec = run_episode(model, table, cfg, kern, init, seed)
            for t in range(1, model.T + 1):
                rows.append({
                    "param": param,
                    "value": value,
                    "seed": seed,
                    "stage": t,
                    "pct_infective": rec.pct_infective[t - 1],
                })
    return rows


def aggregate_infectives(rows, param: str, value: float) -> float:
    """Mean infection share summed over stages, for monotonicity reads."""
    per_stage: dict[int, list[float]] = {}
    for r in rows:
        if r["param"] == param and r["value"] == value:
            per_stage.setdefault(r["stage"], []).append(r["pct_infective"])
    return float(sum(np.mean(v) for v in per_stage.values()))
