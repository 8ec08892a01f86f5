"""Corner-state grid over the unit cube with simplex interpolation.

The cube containing all (p_S, p_E, p_I) combinations is cut into Y^3 cells;
each cell splits into six equal-volume simplexes along coordinate-sorted
diagonals, so any interior point is a convex combination of at most four cell
corners.  Transition laws over continuous atoms are pushed onto the corners
through those weights, giving a finite kernel.  Corners whose fractions exceed
1 are unreachable population mixes and absorb with probability one.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .seir import Action, ContinuousState, EpidemicParams, nominal_reward, transition_pmf

# The six axis orderings in lexicographic order; labels 0..5 name the simplexes.
_PERMUTATIONS = np.array(
    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]], dtype=np.int64
)


@dataclass(frozen=True)
class GridSpec:
    """Number of subdivisions per axis; the grid has (Y+1)^3 corners."""

    Y: int

    def __post_init__(self) -> None:
        if self.Y < 1:
            raise DomainError(f"Y must be >= 1, got {self.Y}")


@dataclass(frozen=True)
class CornerState:
    """One lattice corner: dense index, fractional coordinates, validity flag."""

    index: int
    coords: tuple[float, float, float]
    lattice: tuple[int, int, int]
    in_S: bool


@dataclass(frozen=True)
class BarycentricWeights:
    """Convex combination of simplex corners reconstructing a point."""

    corners: tuple[int, ...]
    weights: tuple[float, ...]
    simplex: int  # 0..5, lexicographic rank of the axis ordering


class SparseDistribution:
    """Probability mass over corner indices; indices unique and ascending."""

    __slots__ = ("indices", "probs")

    def __init__(self, indices: np.ndarray, probs: np.ndarray, normalize: bool = False):
        indices = np.asarray(indices, dtype=np.int64)
        probs = np.asarray(probs, dtype=np.float64)
        if indices.shape != probs.shape or indices.ndim != 1:
            raise DomainError("indices and probs must be matching 1-d arrays")
        order = np.argsort(indices, kind="stable")
        indices, probs = indices[order], probs[order]
        if len(indices) > 1 and np.any(np.diff(indices) == 0):
            raise DomainError("duplicate successor indices")
        if np.any(probs < -1e-15):
            raise DomainError("negative probability entry")
        total = probs.sum()
        if normalize:
            if total <= 0:
                raise DomainError("cannot normalize empty distribution")
            probs = probs / total
        elif abs(total - 1.0) > 1e-9:
            raise DomainError(f"probabilities sum to {total}, not 1")
        self.indices = indices
        self.probs = probs

    def __len__(self) -> int:
        return len(self.indices)

    def dot(self, values: np.ndarray) -> float:
        """Expectation of per-corner values under this distribution."""
        return float(np.dot(self.probs, values[self.indices]))

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(p) for i, p in zip(self.indices, self.probs)}


class Grid:
    """Immutable corner-state lattice with vectorized point location."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        Y = spec.Y
        side = Y + 1
        self.n_corners = side**3
        ii, jj, kk = np.meshgrid(np.arange(side), np.arange(side), np.arange(side),
                                 indexing="ij")
        self.lattice = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
        self.coords = self.lattice / Y
        self.in_S = self.lattice.sum(axis=1) <= Y

    @property
    def Y(self) -> int:
        return self.spec.Y

    def index_of(self, i: int, j: int, k: int) -> int:
        side = self.Y + 1
        return (i * side + j) * side + k

    def corner(self, index: int) -> CornerState:
        i, j, k = (int(v) for v in self.lattice[index])
        return CornerState(
            index=int(index),
            coords=tuple(float(v) for v in self.coords[index]),
            lattice=(i, j, k),
            in_S=bool(self.in_S[index]),
        )

    def state_of(self, index: int) -> ContinuousState:
        if not self.in_S[index]:
            raise DomainError(f"corner {index} is outside the population simplex")
        c = self.coords[index]
        return ContinuousState(float(c[0]), float(c[1]), float(c[2]))

    def state_index(self, state: ContinuousState) -> int:
        """Index of the corner exactly at a lattice state."""
        Y = self.Y
        lat = [state.p_S * Y, state.p_E * Y, state.p_I * Y]
        ints = [round(v) for v in lat]
        if any(abs(v - r) > 1e-9 for v, r in zip(lat, ints)):
            raise DomainError(f"state {state} is not on the Y={Y} lattice")
        return self.index_of(*ints)

    def in_S_indices(self) -> np.ndarray:
        return np.nonzero(self.in_S)[0]

    def locate_many(self, points: np.ndarray):
        """Vectorized barycentric location of points inside the unit cube.

        Returns (corner_indices (n,4), weights (n,4), simplex_labels (n,)).
        """
        pts = np.asarray(points, dtype=np.float64)
        if np.any(pts < -1e-12) or np.any(pts > 1.0 + 1e-12):
            raise DomainError("point outside the unit cube")
        pts = np.clip(pts, 0.0, 1.0)
        Y = self.Y
        scaled = pts * Y
        cell = np.minimum(scaled.astype(np.int64), Y - 1)
        frac = scaled - cell

        # Descending coordinate order; stable so ties resolve by axis index.
        order = np.argsort(-frac, axis=1, kind="stable")
        fs = np.take_along_axis(frac, order, axis=1)
        weights = np.empty((len(pts), 4))
        weights[:, 0] = 1.0 - fs[:, 0]
        weights[:, 1] = fs[:, 0] - fs[:, 1]
        weights[:, 2] = fs[:, 1] - fs[:, 2]
        weights[:, 3] = fs[:, 2]

        # Vertex path: start at the cell's low corner, add one axis at a time.
        verts = np.empty((len(pts), 4, 3), dtype=np.int64)
        verts[:, 0] = cell
        step = np.zeros_like(verts)
        rows = np.arange(len(pts))
        for j in range(3):
            step[rows, j + 1, order[:, j]] = 1
        verts = cell[:, None, :] + np.cumsum(step, axis=1)

        side = Y + 1
        idx = (verts[:, :, 0] * side + verts[:, :, 1]) * side + verts[:, :, 2]

        # Label = lexicographic rank of the axis ordering.
        label = _perm_rank(order)
        return idx, weights, label

    def locate(self, point) -> BarycentricWeights:
        """Barycentric weights for one point; zero-weight corners are dropped."""
        if isinstance(point, ContinuousState):
            point = (point.p_S, point.p_E, point.p_I)
        idx, wts, label = self.locate_many(np.asarray([point], dtype=np.float64))
        corners, weights = [], []
        for i, w in zip(idx[0], wts[0]):
            if w > 0.0:
                corners.append(int(i))
                weights.append(float(w))
        return BarycentricWeights(tuple(corners), tuple(weights), int(label[0]))


def _perm_rank(order: np.ndarray) -> np.ndarray:
    """Lexicographic rank of each row among the 6 permutations of (0,1,2)."""
    key = order[:, 0] * 9 + order[:, 1] * 3 + order[:, 2]
    table = {0 * 9 + 1 * 3 + 2: 0, 0 * 9 + 2 * 3 + 1: 1, 1 * 9 + 0 * 3 + 2: 2,
             1 * 9 + 2 * 3 + 0: 3, 2 * 9 + 0 * 3 + 1: 4, 2 * 9 + 1 * 3 + 0: 5}
    lut = np.zeros(27, dtype=np.int64)
    for k, v in table.items():
        lut[k] = v
    return lut[key]


def build_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


def simplex_corners(permutation: int) -> list[tuple[int, int, int]]:
    """Lattice offsets of the four corners of one unit-cell simplex."""
    order = _PERMUTATIONS[permutation]
    verts = [(0, 0, 0)]
    cur = [0, 0, 0]
    for axis in order:
        cur[axis] += 1
        verts.append(tuple(cur))
    return verts


def discretize_kernel(
    grid: Grid,
    params: EpidemicParams,
    corner_index: int,
    action: Action,
    entry_tol: float = 1e-12,
) -> SparseDistribution:
    """One finite kernel row: push the exact atom law onto grid corners.

    Invalid corners (fractions summing past 1) self-loop with probability one.
    Aggregated corner masses below entry_tol are dropped and the row is
    renormalized.
    """
    if not grid.in_S[corner_index]:
        return SparseDistribution(np.array([corner_index]), np.array([1.0]))
    state = grid.state_of(corner_index)
    tbl = transition_pmf(params, state, action)
    idx, wts, _ = grid.locate_many(tbl.points)
    mass = np.bincount(
        idx.ravel(), weights=(wts * tbl.probs[:, None]).ravel(),
        minlength=grid.n_corners,
    )
    support = np.nonzero(mass >= entry_tol)[0]
    return SparseDistribution(support, mass[support], normalize=True)


def discrete_reward(
    grid: Grid, params: EpidemicParams, corner_index: int, action: Action
) -> float:
    """Stage reward at a corner: the SEIR reward inside S, zero outside."""
    if not grid.in_S[corner_index]:
        return 0.0
    return nominal_reward(params, grid.state_of(corner_index), action)


def terminal_reward(grid: Grid, corner_index: int) -> float:
    """Terminal payoff; identically zero (bounded, and the heuristic at the
    horizon is zero as well)."""
    return 0.0


def successor_support(
    grid: Grid,
    params: EpidemicParams,
    corner_index: int,
    actions: list[Action] | None = None,
) -> np.ndarray:
    """Union of kernel-row supports over the action set, ascending indices."""
    if not grid.in_S[corner_index]:
        raise DomainError("successor support is defined for corners inside S")
    if actions is None:
        actions = params.actions()
    seen: set[int] = set()
    for a in actions:
        row = discretize_kernel(grid, params, corner_index, a)
        seen.update(int(i) for i in row.indices)
    return np.array(sorted(seen), dtype=np.int64)


def cache_key(params: EpidemicParams, Y: int, delta: float) -> str:
    """Content hash identifying a compiled kernel/rule cache."""
    payload = "|".join(
        f"{k}={getattr(params, k)!r}"
        for k in ("N", "mu", "beta", "alpha0", "l_C", "l_D", "Q", "k_R", "W",
                  "L", "M", "lam", "T")
    )
    payload += f"|Y={Y}|delta={delta!r}"
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
