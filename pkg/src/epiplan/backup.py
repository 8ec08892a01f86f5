"""One-stage value backups: nominal, worst-case-shifted, and mean-ambiguous.

The mean-ambiguous backup prices one action against the worst transition
distribution whose mean lies near action-dependent bounds, with violations
charged at k per unit.  Three equivalent routes compute it:

* a small LP in (q, w, u), the dual of the penalized mean problem;
* the penalized mean problem itself (the primal oracle);
* a closed-form parametric solve used on hot paths, exact because the dual
  objective is concave piecewise-linear in q with enumerable breakpoints.

Action selection is then either explicit enumeration, or a single
mixed-integer program linearizing the action-times-multiplier products with
box envelopes (a relaxation) or with per-level indicator variables (exact).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import SolverError
from .grid import Grid, SparseDistribution
from .lp import LinearProgram, MixedIntegerProgram, solve_lp, solve_mip
from .rules import AmbiguityConfig, DecisionRuleCoefficients, eta_bounds, fit_rules, reward_rule
from .seir import Action

ValueLookup = Callable[[int], float]


@dataclass
class DualSolution:
    """Optimal multipliers of the inner problem; mean and slack when requested."""

    q: float
    w: np.ndarray
    u: np.ndarray
    x: np.ndarray | None = None
    m: np.ndarray | None = None


def values_over(support: np.ndarray, v: ValueLookup | np.ndarray) -> np.ndarray:
    """Successor values aligned with a support, from an array or a lookup."""
    if isinstance(v, np.ndarray):
        return v[support]
    return np.array([v(int(j)) for j in support], dtype=np.float64)


def _sorted_actions(actions: Sequence[Action]) -> list[Action]:
    return sorted(actions, key=lambda a: (a.y_V, a.y_R))


# ---------------------------------------------------------------------------
# Nominal and worst-case-shifted backups


def best_action_over_rows(
    actions: Sequence[Action],
    rows: Sequence[SparseDistribution],
    rewards: Sequence[float],
    v: ValueLookup | np.ndarray,
    lam: float,
) -> tuple[float, Action]:
    """max_a r(a) + lam * E_row(a)[V]; ties go to the lowest (y_V, y_R)."""
    order = sorted(range(len(actions)), key=lambda i: (actions[i].y_V, actions[i].y_R))
    best_val, best_a = -np.inf, None
    for i in order:
        row = rows[i]
        ev = float(np.dot(row.probs, values_over(row.indices, v)))
        val = rewards[i] + lam * ev
        if val > best_val:
            best_val, best_a = val, actions[i]
    return best_val, best_a


def nominal_backup(actions, rows, rewards, v, lam) -> tuple[float, Action]:
    """Classic expected-value backup on the nominal kernel rows."""
    return best_action_over_rows(actions, rows, rewards, v, lam)


def worst_case_shift(row: SparseDistribution, grid: Grid, budget: float) -> SparseDistribution:
    """Move up to budget/2 mass from low-infective to high-infective successors.

    The result stays within L1 distance `budget` of the input and remains a
    distribution; per-entry mass is capped at 1.
    """
    if budget <= 0.0 or len(row) <= 1:
        return row
    p_I = grid.coords[row.indices][:, 2]
    probs = row.probs.copy()
    donors = sorted(range(len(probs)), key=lambda i: (p_I[i], row.indices[i]))
    receivers = sorted(range(len(probs)), key=lambda i: (-p_I[i], row.indices[i]))
    move = budget / 2.0
    di, ri = 0, 0
    while move > 1e-15 and di < len(donors) and ri < len(receivers):
        d, r = donors[di], receivers[ri]
        if p_I[d] >= p_I[r]:
            break
        take = min(move, probs[d], 1.0 - probs[r])
        if take <= 1e-18:
            if probs[d] <= 1e-18:
                di += 1
            else:
                ri += 1
            continue
        probs[d] -= take
        probs[r] += take
        move -= take
        if probs[d] <= 1e-18:
            di += 1
        if probs[r] >= 1.0 - 1e-18:
            ri += 1
    return SparseDistribution(row.indices.copy(), probs, normalize=True)


def robust_backup(
    actions, rows, rewards, v, lam, grid: Grid, budget: float = 0.5
) -> tuple[float, Action]:
    """Nominal backup evaluated on adversarially shifted kernel rows."""
    shifted = [worst_case_shift(r, grid, budget) for r in rows]
    return best_action_over_rows(actions, shifted, rewards, v, lam)


# ---------------------------------------------------------------------------
# Inner (per-action) problem: LP route, primal oracle, and parametric route


def inner_dual_lp(
    coeffs: DecisionRuleCoefficients,
    action: Action,
    v_next: np.ndarray | ValueLookup,
    lam: float,
    k: float,
    method: str = "lp",
    want_mean: bool = False,
    _v_aligned: np.ndarray | None = None,
) -> tuple[float, DualSolution]:
    """Action value under the worst admissible mean, via the multiplier LP.

    maximize  r(a) + q - w'etaU(a) + u'etaL(a)
    s.t.      q <= lam*V(s') + w(s') - u(s')   for every supported successor
              w + u <= k,  w, u >= 0.

    v_next is a lookup or an array over all grid corners; _v_aligned may carry
    the support-aligned values when the caller already extracted them.
    """
    eb = eta_bounds(coeffs, action)
    r = reward_rule(coeffs, action)
    if _v_aligned is None:
        _v_aligned = values_over(coeffs.support, v_next)
    v = lam * _v_aligned
    m = len(v)

    if method == "parametric":
        fut, q, w, u = inner_value_parametric(eb.eta_L, eb.eta_U, v, k)
        sol = DualSolution(q=q, w=w, u=u)
    else:
        lp = inner_dual_program(eb.eta_L, eb.eta_U, v, k)
        res = solve_lp(lp)
        if res.status != "optimal":
            raise SolverError(f"inner LP unexpectedly {res.status}")
        fut = res.objective
        sol = DualSolution(q=float(res.x[0]), w=res.x[1:1 + m], u=res.x[1 + m:])

    if want_mean:
        _, mean, slack = inner_primal_oracle(coeffs, action, v_next, lam, k,
                                             return_solution=True)
        sol.m, sol.x = mean, slack
    return r + fut, sol


def inner_dual_program(eta_L: np.ndarray, eta_U: np.ndarray, v: np.ndarray,
                       k: float) -> LinearProgram:
    """The multiplier LP over (q, w, u); v already carries the discount."""
    m = len(v)
    n = 1 + 2 * m
    c = np.concatenate([[1.0], -eta_U, eta_L])
    A = np.zeros((2 * m, n))
    b = np.empty(2 * m)
    for j in range(m):
        A[j, 0] = 1.0
        A[j, 1 + j] = -1.0
        A[j, 1 + m + j] = 1.0
        b[j] = v[j]
        A[m + j, 1 + j] = 1.0
        A[m + j, 1 + m + j] = 1.0
        b[m + j] = k
    lb = np.zeros(n)
    lb[0] = -np.inf
    return LinearProgram("max", c, A, ["<="] * (2 * m), b,
                         lb=lb, ub=np.full(n, np.inf))


def inner_primal_oracle(
    coeffs: DecisionRuleCoefficients,
    action: Action,
    v_next: np.ndarray | ValueLookup,
    lam: float,
    k: float,
    return_solution: bool = False,
    _v_aligned: np.ndarray | None = None,
):
    """Penalized worst-mean problem solved directly over mean vectors.

    The inner objective depends on the distribution only through its mean, so
    minimizing over means in the simplex is exact:
    minimize r(a) + lam*m'V + k*1'x  s.t.  m in simplex, |m - eta band| <= x.
    """
    eb = eta_bounds(coeffs, action)
    r = reward_rule(coeffs, action)
    if _v_aligned is None:
        _v_aligned = values_over(coeffs.support, v_next)
    v = lam * _v_aligned
    m = len(v)

    n = 2 * m  # mean vector then slack vector
    c = np.concatenate([v, np.full(m, k)])
    A = np.zeros((1 + 2 * m, n))
    b = np.empty(1 + 2 * m)
    rel = ["=="] + ["<="] * (2 * m)
    A[0, :m] = 1.0
    b[0] = 1.0
    for j in range(m):
        A[1 + j, j] = 1.0
        A[1 + j, m + j] = -1.0
        b[1 + j] = eb.eta_U[j]
        A[1 + m + j, j] = -1.0
        A[1 + m + j, m + j] = -1.0
        b[1 + m + j] = -eb.eta_L[j]
    lp = LinearProgram("min", c, A, rel, b)
    res = solve_lp(lp)
    if res.status != "optimal":
        raise SolverError(f"inner primal unexpectedly {res.status}")
    value = r + res.objective
    if return_solution:
        return value, res.x[:m], res.x[m:]
    return value


def inner_value_parametric(
    eta_L: np.ndarray, eta_U: np.ndarray, v: np.ndarray, k: float
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Exact closed-form solve of the multiplier LP (without the reward term).

    For fixed q the problem separates per successor into a two-variable LP
    over a triangle, so the total objective is concave piecewise-linear in q.
    Its kinks lie where a per-successor optimal vertex changes; all such q are
    enumerated and the best is taken.  Returns (value, q, w, u).
    """
    v = np.asarray(v, dtype=np.float64)
    m = len(v)
    if k <= 0.0:
        q = float(v.min())
        return q, q, np.zeros(m), np.zeros(m)

    A = -np.asarray(eta_U, dtype=np.float64)  # objective coefficient of w
    B = np.asarray(eta_L, dtype=np.float64)   # objective coefficient of u
    vmin = float(v.min())

    cands = [v, v - k, np.array([vmin + k])]
    # Interior vertex crossings exist only when the offset lands inside the
    # crossing pair's feasibility window; filter by sign conditions.
    with np.errstate(divide="ignore", invalid="ignore"):
        ok1 = (A * B > 0) & (np.abs(A) <= np.abs(B))
        cross1 = np.where(ok1, v - A * k / B, np.nan)
        ok2 = (A * B <= 0) & (np.abs(A - B) > 1e-12)
        cross2 = np.where(ok2, v - k * (A + B) / (A - B), np.nan)
    cands.append(cross1[np.isfinite(cross1)])
    cands.append(cross2[np.isfinite(cross2)])
    q_cand = np.unique(np.minimum(np.concatenate(cands), vmin + k))

    Ak = A * k
    Bk = B * k

    def total_at(q: float) -> float:
        # Clamp d at k: beyond it the problem is infeasible, and the clamp
        # also absorbs the one-ulp overshoot of (vmin + k) - v_j at the edge.
        d = np.minimum(q - v, k)
        g = np.where(d <= 0.0, 0.0, -np.inf)
        g = np.maximum(g, np.where(d >= 0.0, A * d, -np.inf))
        g = np.maximum(g, Ak)
        g = np.maximum(g, np.where((d >= -k) & (d <= 0.0), -B * d, -np.inf))
        g = np.maximum(g, np.where(d <= -k, Bk, -np.inf))
        g = np.maximum(g, np.where(d >= -k, 0.5 * (A * (k + d) + B * (k - d)),
                                   -np.inf))
        return float(q + g.sum())

    # The objective is concave piecewise-linear in q and every kink is a
    # candidate, so ternary search over the sorted candidates is exact.
    lo, hi = 0, len(q_cand) - 1
    while hi - lo > 3:
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        if total_at(q_cand[m1]) < total_at(q_cand[m2]):
            lo = m1 + 1
        else:
            hi = m2
    vals = [total_at(q_cand[i]) for i in range(lo, hi + 1)]
    best = lo + int(np.argmax(vals))
    q = float(q_cand[best])
    value = float(vals[best - lo])

    # Reconstruct (w, u) at the optimal q, first feasible argmax per successor.
    dd = np.minimum(q - v, k)
    wv = np.stack([np.zeros(m), np.clip(dd, 0.0, None), np.full(m, k),
                   np.zeros(m), np.zeros(m), 0.5 * (k + dd)])
    uv = np.stack([np.zeros(m), np.zeros(m), np.zeros(m),
                   np.clip(-dd, 0.0, None), np.full(m, k), 0.5 * (k - dd)])
    feas = np.stack([
        dd <= 0.0,
        (dd >= 0.0) & (dd <= k),
        dd <= k,
        (dd >= -k) & (dd <= 0.0),
        dd <= -k,
        np.abs(dd) <= k,
    ])
    vals = np.where(feas, A[None, :] * wv + B[None, :] * uv, -np.inf)
    pick = np.argmax(vals, axis=0)
    cols = np.arange(m)
    return value, q, wv[pick, cols], uv[pick, cols]


# ---------------------------------------------------------------------------
# Action optimization back-ends


def drmdp_backup_enumerate(
    coeffs: DecisionRuleCoefficients,
    actions: Sequence[Action],
    v_next: np.ndarray | ValueLookup,
    lam: float,
    k: float,
    method: str = "lp",
) -> tuple[float, Action]:
    """Reference backup: evaluate the inner problem for every action."""
    v = values_over(coeffs.support, v_next)
    best_val, best_a = -np.inf, None
    for a in _sorted_actions(actions):
        q_val, _ = inner_dual_lp(coeffs, a, v_next, lam, k, method=method,
                                 _v_aligned=v)
        if q_val > best_val:
            best_val, best_a = q_val, a
    return best_val, best_a


def ldr_nominal_backup(
    coeffs: DecisionRuleCoefficients,
    actions: Sequence[Action],
    v_next: np.ndarray | ValueLookup,
    lam: float,
) -> tuple[float, Action]:
    """Nominal backup using the fitted rules: reward rule plus midpoint row."""
    v = values_over(coeffs.support, v_next)
    best_val, best_a = -np.inf, None
    for a in _sorted_actions(actions):
        eb = eta_bounds(coeffs, a)
        mid = 0.5 * (eb.eta_L + eb.eta_U)
        val = reward_rule(coeffs, a) + lam * float(mid @ v)
        if val > best_val:
            best_val, best_a = val, a
    return best_val, best_a


def _mccormick_rows(n_vars, zi, ai, wi, a_lo, a_hi, w_hi):
    """Four box-envelope rows tying column zi to the product of ai and wi."""
    rows, rhs = [], []
    r = np.zeros(n_vars); r[wi] = a_lo; r[zi] = -1.0
    rows.append(r); rhs.append(0.0)
    r = np.zeros(n_vars); r[wi] = a_hi; r[ai] = w_hi; r[zi] = -1.0
    rows.append(r); rhs.append(a_hi * w_hi)
    r = np.zeros(n_vars); r[zi] = 1.0; r[wi] = -a_hi
    rows.append(r); rhs.append(0.0)
    r = np.zeros(n_vars); r[zi] = 1.0; r[wi] = -a_lo; r[ai] = -w_hi
    rows.append(r); rhs.append(-a_lo * w_hi)
    return rows, rhs


def drmdp_backup_mccormick(
    coeffs: DecisionRuleCoefficients,
    v_next: np.ndarray | ValueLookup,
    lam: float,
    k: float,
    L: int,
    M: int,
    a_lower: tuple[int, int] = (0, 0),
) -> tuple[float, Action]:
    """One MIP over integer action levels with box-envelope bilinear terms.

    The envelopes relax the products, so the optimum is an upper bound on the
    enumeration backup; it is exact when an action axis has a single level.
    """
    v = lam * values_over(coeffs.support, v_next)
    m = len(v)
    n = 6 * m + 3
    iq = 0
    iw = lambda j: 1 + j
    iu = lambda j: 1 + m + j
    ia = (2 * m + 1, 2 * m + 2)
    iz0 = lambda i, j: 2 * m + 3 + i * m + j           # a_i * w_j stand-ins
    iz1 = lambda i, j: 2 * m + 3 + 2 * m + i * m + j   # a_i * u_j stand-ins

    c = np.zeros(n)
    c[iq] = 1.0
    c[1:1 + m] = -coeffs.rho[0]
    c[1 + m:1 + 2 * m] = coeffs.sigma[0]
    c[ia[0]] = coeffs.eps[1]
    c[ia[1]] = coeffs.eps[2]
    for i in range(2):
        for j in range(m):
            c[iz0(i, j)] = -coeffs.rho[1 + i, j]
            c[iz1(i, j)] = coeffs.sigma[1 + i, j]

    rows, rhs = [], []
    for j in range(m):
        r = np.zeros(n); r[iq] = 1.0; r[iw(j)] = -1.0; r[iu(j)] = 1.0
        rows.append(r); rhs.append(v[j])
        r = np.zeros(n); r[iw(j)] = 1.0; r[iu(j)] = 1.0
        rows.append(r); rhs.append(k)
    bounds_hi = (float(L), float(M))
    for i in range(2):
        for j in range(m):
            rr, bb = _mccormick_rows(n, iz0(i, j), ia[i], iw(j),
                                     float(a_lower[i]), bounds_hi[i], k)
            rows += rr; rhs += bb
            rr, bb = _mccormick_rows(n, iz1(i, j), ia[i], iu(j),
                                     float(a_lower[i]), bounds_hi[i], k)
            rows += rr; rhs += bb

    lb = np.zeros(n)
    lb[iq] = -np.inf
    ub = np.full(n, np.inf)
    ub[ia[0]] = float(L)
    ub[ia[1]] = float(M)
    integer = np.zeros(n, dtype=bool)
    integer[list(ia)] = True

    lp = LinearProgram("max", c, np.vstack(rows), ["<="] * len(rhs),
                       np.array(rhs), lb=lb, ub=ub)
    sol = solve_mip(MixedIntegerProgram(lp, integer))
    if sol.status != "optimal":
        raise SolverError(f"envelope MIP unexpectedly {sol.status}")
    action = Action(int(round(sol.x[ia[0]])), int(round(sol.x[ia[1]])))
    return float(sol.objective + coeffs.eps[0]), action


def drmdp_backup_unary(
    coeffs: DecisionRuleCoefficients,
    v_next: np.ndarray | ValueLookup,
    lam: float,
    k: float,
    L: int,
    M: int,
) -> tuple[float, Action]:
    """Exact MIP: one indicator per action level linearizes each product.

    Each product of a level indicator with a multiplier gets the two envelope
    rows that bind in its objective direction, so the optimum equals the
    enumeration backup.
    """
    v = lam * values_over(coeffs.support, v_next)
    m = len(v)
    levels = (list(range(L + 1)), list(range(M + 1)))

    cols_c: list[float] = []
    lbs: list[float] = []
    ubs: list[float] = []
    ints: list[bool] = []

    def new_var(cost=0.0, lo=0.0, hi=np.inf, is_int=False) -> int:
        cols_c.append(cost); lbs.append(lo); ubs.append(hi); ints.append(is_int)
        return len(cols_c) - 1

    iq = new_var(cost=1.0, lo=-np.inf)
    iw = [new_var(cost=-coeffs.rho[0][j]) for j in range(m)]
    iu = [new_var(cost=coeffs.sigma[0][j]) for j in range(m)]
    ia = [new_var(cost=coeffs.eps[1], hi=float(L)),
          new_var(cost=coeffs.eps[2], hi=float(M))]
    ipsi0 = [[new_var(lo=0.0, hi=1.0, is_int=True) for _ in levels[i]] for i in range(2)]
    ipsi1 = [[new_var(lo=0.0, hi=1.0, is_int=True) for _ in levels[i]] for i in range(2)]

    # rows accumulated as (coeffs dict, rel, rhs); densified at the end
    rows: list[tuple[dict[int, float], str, float]] = []

    for j in range(m):
        rows.append(({iq: 1.0, iw[j]: -1.0, iu[j]: 1.0}, "<=", float(v[j])))
        rows.append(({iw[j]: 1.0, iu[j]: 1.0}, "<=", k))
    for i in range(2):
        rows.append(({p: 1.0 for p in ipsi0[i]}, "==", 1.0))
        rows.append(({p: 1.0 for p in ipsi1[i]}, "==", 1.0))
        link0 = {ipsi0[i][l]: float(tau) for l, tau in enumerate(levels[i])}
        link0[ia[i]] = -1.0
        rows.append((link0, "==", 0.0))
        link1 = {ipsi1[i][l]: float(tau) for l, tau in enumerate(levels[i])}
        link1[ia[i]] = -1.0
        rows.append((link1, "==", 0.0))

    for i in range(2):
        for l, tau in enumerate(levels[i]):
            if tau == 0:
                continue
            for j in range(m):
                coef0 = -coeffs.rho[1 + i, j] * tau
                if coef0 != 0.0:
                    z = new_var(cost=coef0)
                    if coef0 < 0.0:
                        # pushed down: z >= w - k(1 - psi)
                        rows.append(({iw[j]: 1.0, ipsi0[i][l]: k, z: -1.0}, "<=", k))
                    else:
                        # pushed up: z <= w, z <= k psi
                        rows.append(({z: 1.0, iw[j]: -1.0}, "<=", 0.0))
                        rows.append(({z: 1.0, ipsi0[i][l]: -k}, "<=", 0.0))
                coef1 = coeffs.sigma[1 + i, j] * tau
                if coef1 != 0.0:
                    z = new_var(cost=coef1)
                    if coef1 < 0.0:
                        rows.append(({iu[j]: 1.0, ipsi1[i][l]: k, z: -1.0}, "<=", k))
                    else:
                        rows.append(({z: 1.0, iu[j]: -1.0}, "<=", 0.0))
                        rows.append(({z: 1.0, ipsi1[i][l]: -k}, "<=", 0.0))

    n = len(cols_c)
    A = np.zeros((len(rows), n))
    rel = []
    b = np.empty(len(rows))
    for r, (cmap, rl, rv) in enumerate(rows):
        for idx, val in cmap.items():
            A[r, idx] = val
        rel.append(rl)
        b[r] = rv
    lp = LinearProgram("max", np.array(cols_c), A, rel, b,
                       lb=np.array(lbs), ub=np.array(ubs))
    sol = solve_mip(MixedIntegerProgram(lp, np.array(ints)))
    if sol.status != "optimal":
        raise SolverError(f"indicator MIP unexpectedly {sol.status}")
    action = Action(int(round(sol.x[ia[0]])), int(round(sol.x[ia[1]])))
    return float(sol.objective + coeffs.eps[0]), action


# ---------------------------------------------------------------------------
# Support-restriction guard


@dataclass
class FullSpaceReport:
    value_restricted: float
    value_full: float
    gap: float
    agree: bool
    note: str = ""


def full_space_check(
    grid: Grid,
    actions: Sequence[Action],
    kernels: Sequence[SparseDistribution],
    rewards: Sequence[float],
    action: Action,
    v_full: np.ndarray,
    cfg: AmbiguityConfig,
    lam: float,
    tol: float = 1e-6,
) -> FullSpaceReport:
    """Compare the support-restricted inner LP against the full-corner LP.

    Off-support successors carry zero mean bounds in both. With k = 0 the two
    need not agree (each reduces to the minimum value over its own support);
    the report flags any difference instead of hiding it.
    """
    restricted = fit_rules(list(actions), list(kernels), list(rewards), cfg)
    val_r, _ = inner_dual_lp(restricted, action, v_full, lam, cfg.k)

    full_support = np.arange(grid.n_corners, dtype=np.int64)
    pos = {int(s): i for i, s in enumerate(restricted.support)}
    rho = np.zeros((3, grid.n_corners))
    sigma = np.zeros((3, grid.n_corners))
    for s, i in pos.items():
        rho[:, s] = restricted.rho[:, i]
        sigma[:, s] = restricted.sigma[:, i]
    full = DecisionRuleCoefficients(support=full_support, rho=rho, sigma=sigma,
                                    eps=restricted.eps)
    val_f, _ = inner_dual_lp(full, action, v_full, lam, cfg.k)

    gap = abs(val_r - val_f)
    note = "k=0 reduces to per-support minima" if cfg.k == 0.0 else ""
    return FullSpaceReport(value_restricted=val_r, value_full=val_f,
                           gap=float(gap), agree=bool(gap <= tol), note=note)
