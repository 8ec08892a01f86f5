import numpy as np
import pytest

from epiplan import Action, ContinuousState, DomainError, EpidemicParams
from epiplan.grid import (
    GridSpec,
    SparseDistribution,
    build_grid,
    cache_key,
    discrete_reward,
    discretize_kernel,
    simplex_corners,
    successor_support,
    terminal_reward,
)
from epiplan.seir import nominal_reward


def toy_params(**kw):
    base = dict(N=4, mu=10.0, beta=0.025, alpha0=0.9, l_C=0.5, l_D=1 / 3,
                Q=2.0, k_R=3.0, W=1.0, L=2, M=2, lam=0.95, T=4)
    base.update(kw)
    return EpidemicParams(**base)


class TestBuildGrid:
    def test_unit_grid_counts(self):
        g = build_grid(GridSpec(1))
        assert g.n_corners == 8
        in_s = [tuple(g.lattice[i]) for i in g.in_S_indices()]
        assert sorted(in_s) == [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0)]

    def test_counts_at_larger_sizes(self):
        assert build_grid(GridSpec(4)).n_corners == 125
        assert build_grid(GridSpec(30)).n_corners == 29791

    def test_index_bijection(self):
        g = build_grid(GridSpec(3))
        for idx in range(g.n_corners):
            i, j, k = g.corner(idx).lattice
            assert g.index_of(i, j, k) == idx

    def test_invalid_spec(self):
        with pytest.raises(DomainError):
            GridSpec(0)

    def test_state_index_roundtrip(self):
        g = build_grid(GridSpec(10))
        idx = g.state_index(ContinuousState(0.7, 0.1, 0.2))
        assert g.corner(idx).coords == (0.7, 0.1, 0.2)
        with pytest.raises(DomainError):
            g.state_index(ContinuousState(0.65, 0.1, 0.2))


class TestLocate:
    def test_exact_corner(self):
        g = build_grid(GridSpec(2))
        bw = g.locate((0.5, 0.5, 0.0))
        assert bw.weights == (1.0,)
        assert g.corner(bw.corners[0]).coords == (0.5, 0.5, 0.0)

    def test_known_weight_path(self):
        g = build_grid(GridSpec(1))
        bw = g.locate((0.5, 0.25, 0.125))
        got = {tuple(g.corner(c).lattice): w for c, w in zip(bw.corners, bw.weights)}
        assert got == pytest.approx(
            {(0, 0, 0): 0.5, (1, 0, 0): 0.25, (1, 1, 0): 0.125, (1, 1, 1): 0.125}
        )

    def test_reconstruction_many_points(self):
        rng = np.random.default_rng(3)
        for Y in (1, 3, 7):
            g = build_grid(GridSpec(Y))
            pts = rng.random((10_000, 3))
            idx, wts, _ = g.locate_many(pts)
            assert np.all(wts >= -1e-15)
            np.testing.assert_allclose(wts.sum(axis=1), 1.0, atol=1e-12)
            recon = (g.coords[idx] * wts[:, :, None]).sum(axis=1)
            np.testing.assert_allclose(recon, pts, atol=1e-12)

    def test_simplex_labels_equal_volume(self):
        rng = np.random.default_rng(9)
        g = build_grid(GridSpec(2))
        pts = rng.random((60_000, 3))
        _, _, labels = g.locate_many(pts)
        freq = np.bincount(labels, minlength=6) / len(pts)
        assert np.all(np.abs(freq - 1 / 6) < 0.02)

    def test_cube_diagonal_corners_shared_by_all_simplexes(self):
        # The cell's low and high corners sit on every one of the six simplexes;
        # each simplex has exactly four distinct corners.
        for perm in range(6):
            verts = simplex_corners(perm)
            assert len(set(verts)) == 4
            assert (0, 0, 0) in verts
            assert (1, 1, 1) in verts

    def test_vertex_membership_counts(self):
        # Face-diagonal corners belong to exactly two of the six simplexes.
        memberships = {}
        for perm in range(6):
            for v in simplex_corners(perm):
                memberships.setdefault(v, set()).add(perm)
        assert len(memberships[(0, 0, 0)]) == 6
        assert len(memberships[(1, 1, 1)]) == 6
        for v, owners in memberships.items():
            ones = sum(v)
            if ones in (1, 2):
                assert len(owners) == 2, v

    def test_outside_cube_rejected(self):
        g = build_grid(GridSpec(2))
        with pytest.raises(DomainError):
            g.locate((1.2, 0.0, 0.0))


class TestSparseDistribution:
    def test_sorted_and_validated(self):
        d = SparseDistribution(np.array([5, 2]), np.array([0.25, 0.75]))
        assert list(d.indices) == [2, 5]
        assert list(d.probs) == [0.75, 0.25]

    def test_bad_sum_rejected(self):
        with pytest.raises(DomainError):
            SparseDistribution(np.array([0, 1]), np.array([0.5, 0.6]))

    def test_duplicate_rejected(self):
        with pytest.raises(DomainError):
            SparseDistribution(np.array([1, 1]), np.array([0.5, 0.5]))

    def test_dot(self):
        d = SparseDistribution(np.array([0, 3]), np.array([0.5, 0.5]))
        vals = np.array([2.0, 9.0, 9.0, 4.0])
        assert d.dot(vals) == pytest.approx(3.0)


class TestDiscretizeKernel:
    def test_absorbing_outside_S(self):
        g = build_grid(GridSpec(2))
        p = toy_params()
        idx = g.index_of(2, 2, 2)  # fractions sum to 3
        row = discretize_kernel(g, p, idx, Action(0, 0))
        assert row.as_dict() == {idx: 1.0}

    def test_disease_free_self_loop(self):
        g = build_grid(GridSpec(2))
        p = toy_params()
        idx = g.index_of(0, 0, 0)
        row = discretize_kernel(g, p, idx, Action(0, 0))
        assert row.as_dict() == {idx: 1.0}

    def test_row_matches_atom_enumeration(self):
        # Oracle: enumerate atoms with scalar pmfs, locate each one, accumulate.
        g = build_grid(GridSpec(2))
        p = toy_params(N=4)
        idx = g.index_of(1, 1, 0)  # state (0.5, 0.5, 0)
        a = Action(1, 0)
        from epiplan import binomial_pmf, compile_rates

        state = g.state_of(idx)
        rates = compile_rates(p, state, a)
        trials = round(2 * (1 - a.y_V / p.L))
        expect: dict[int, float] = {}
        for nB in range(trials + 1):
            for nC in range(2 + 1):
                pr = binomial_pmf(trials, rates.phi, nB) * binomial_pmf(2, rates.rho_C, nC)
                pt = ((trials - nB) / 4, (2 + nB - nC) / 4, nC / 4)
                bw = g.locate(pt)
                for c, w in zip(bw.corners, bw.weights):
                    expect[c] = expect.get(c, 0.0) + w * pr
        row = discretize_kernel(g, p, idx, a)
        got = row.as_dict()
        for c, v in expect.items():
            if v > 1e-12:
                assert got[c] == pytest.approx(v, rel=1e-9), c
        assert sum(got.values()) == pytest.approx(1.0, abs=1e-9)

    def test_rows_sum_to_one_random_states(self):
        g = build_grid(GridSpec(3))
        p = toy_params(N=9)
        for idx in g.in_S_indices():
            for a in (Action(0, 0), Action(2, 1)):
                row = discretize_kernel(g, p, int(idx), a)
                assert row.probs.sum() == pytest.approx(1.0, abs=1e-9)
                assert np.all(row.probs >= 0)

    def test_boundary_mass_can_reach_absorbing_corners(self):
        # Atoms near the p_S+p_E+p_I = 1 face may lend weight to corners
        # outside S; that mass must stay there rather than be redistributed.
        g = build_grid(GridSpec(2))
        p = toy_params(N=4)
        idx = g.index_of(1, 0, 1)  # (0.5, 0, 0.5)
        row = discretize_kernel(g, p, idx, Action(0, 0))
        outside = [i for i in row.indices if not g.in_S[i]]
        inside_mass = sum(pr for i, pr in row.as_dict().items() if g.in_S[i])
        assert inside_mass > 0.5
        for i in outside:
            assert row.as_dict()[i] >= 0


class TestRewardAndSupport:
    def test_discrete_reward_outside_S_zero(self):
        g = build_grid(GridSpec(2))
        p = toy_params()
        idx = g.index_of(2, 2, 1)
        assert discrete_reward(g, p, idx, Action(2, 2)) == 0.0

    def test_discrete_reward_matches_seir(self):
        g = build_grid(GridSpec(2))
        p = toy_params()
        idx = g.index_of(1, 1, 0)
        a = Action(1, 2)
        assert discrete_reward(g, p, idx, a) == nominal_reward(p, g.state_of(idx), a)

    def test_terminal_reward_zero(self):
        g = build_grid(GridSpec(2))
        assert terminal_reward(g, 3) == 0.0

    def test_successor_support_superset_of_rows(self):
        g = build_grid(GridSpec(2))
        p = toy_params(N=4)
        idx = g.index_of(1, 1, 0)
        supp = set(successor_support(g, p, idx))
        for a in p.actions():
            row = discretize_kernel(g, p, idx, a)
            assert set(row.indices) <= supp

    def test_disease_free_support_is_self(self):
        g = build_grid(GridSpec(2))
        p = toy_params()
        idx = g.index_of(1, 0, 0)
        supp = successor_support(g, p, idx)
        # No exposed/infectious: every action leaves a point mass on p_E=p_I=0.
        for s in supp:
            lat = g.corner(int(s)).lattice
            assert lat[1] == 0 and lat[2] == 0


class TestCacheKey:
    def test_changes_with_params(self):
        a = cache_key(toy_params(), 5, 0.05)
        b = cache_key(toy_params(N=5), 5, 0.05)
        c = cache_key(toy_params(), 6, 0.05)
        d = cache_key(toy_params(), 5, 0.1)
        assert len({a, b, c, d}) == 4

    def test_stable(self):
        assert cache_key(toy_params(), 5, 0.05) == cache_key(toy_params(), 5, 0.05)
