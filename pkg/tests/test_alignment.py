"""Monotone alignment: lattice solver, tie policy, gradients, and the loss."""

import numpy as np
import pytest

from combgrad import (
    AlignGrid,
    DimensionMismatch,
    NonFinite,
    build_grid,
    enumerate_path_costs,
    enumerate_paths,
    gsa_gengrad,
    gsa_grad_matrix,
    gsa_layer,
    gsa_loss,
    invocations,
    reset_invocations,
    solve_gsa,
    supergradient_check,
    assemble_gengrad,
    comb_loss_backward,
)


def random_grid(rng, max_side=7):
    Tp = int(rng.integers(1, max_side + 1))
    Tt = int(rng.integers(1, max_side + 1))
    return AlignGrid(m=rng.uniform(0.1, 2.0, size=(Tp, Tt)), gamma=1.5)


class TestFrozenInstances:
    def test_two_by_two_diagonal_path(self):
        grid = AlignGrid(m=np.array([[1.0, 5.0], [5.0, 1.0]]), gamma=1.5)
        res = solve_gsa(grid)
        assert res.step_string() == "DD"
        assert res.z_star == 2.0
        assert res.unique is True
        assert gsa_grad_matrix(grid, res).tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_all_zero_costs_prefer_diagonal(self):
        grid = AlignGrid(m=np.zeros((2, 2)), gamma=1.5)
        res = solve_gsa(grid)
        assert res.step_string() == "DD"
        assert res.z_star == 0.0
        assert res.unique is False

    def test_single_row_tie_prefers_late_diagonal(self):
        # On a 1x2 grid of equal costs the final-step diagonal preference
        # makes the skip-then-match path win the tie.
        grid = AlignGrid(m=np.array([[1.0, 1.0]]), gamma=1.5)
        res = solve_gsa(grid)
        assert res.step_string() == "PD"
        assert res.z_star == pytest.approx(2.5)
        assert res.unique is False

    def test_path_edges_sum_to_value(self):
        grid = AlignGrid(m=np.array([[1.0, 5.0, 2.0], [5.0, 1.0, 9.0]]), gamma=1.5)
        res = solve_gsa(grid)
        assert sum(e.cost for e in res.path) == pytest.approx(res.z_star, abs=1e-12)

    def test_path_is_monotone_and_complete(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            grid = random_grid(rng)
            res = solve_gsa(grid)
            i = k = 0
            for e in res.path:
                assert (e.i, e.k) == (i, k)
                if e.kind == "match":
                    i, k = i + 1, k + 1
                elif e.kind == "skip_target":
                    k += 1
                else:
                    i += 1
            assert (i, k) == (grid.pred_len, grid.target_len)


class TestOracleAgreement:
    def test_matches_enumeration_on_random_grids(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            grid = random_grid(rng, max_side=5)
            res = solve_gsa(grid)
            costs = enumerate_path_costs(grid.m, grid.gamma)
            zmin = float(costs.min())
            assert abs(res.z_star - zmin) <= 1e-9
            n_opt = int(np.sum(costs <= zmin + 1e-9))
            assert res.unique == (n_opt == 1)

    def test_enumeration_counts_all_lattice_paths(self):
        # Path counts over an (n, n) grid: 3, 13, ..., 48639 for n = 7.
        for n, count in [(1, 3), (2, 13), (3, 63), (7, 48639)]:
            costs = enumerate_path_costs(np.ones((n, n)), 1.5)
            assert costs.size == count

    def test_string_enumeration_agrees_with_cost_multiset(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            grid = random_grid(rng, max_side=4)
            zmin, winners = enumerate_paths(grid.m, grid.gamma)
            costs = enumerate_path_costs(grid.m, grid.gamma)
            assert zmin == pytest.approx(float(costs.min()), abs=1e-12)
            res = solve_gsa(grid)
            assert res.step_string() in winners


class TestGradients:
    def test_inner_product_identity(self):
        # The edge-count gradient reproduces the objective exactly:
        # <G, m> equals z* because every edge charges a cost cell linearly.
        rng = np.random.default_rng(11)
        for _ in range(40):
            grid = random_grid(rng)
            res = solve_gsa(grid, compute_unique=False)
            G = gsa_grad_matrix(grid, res)
            assert float((G * grid.m).sum()) == pytest.approx(res.z_star, abs=1e-9)

    def test_value_is_locally_linear_at_unique_optimum(self):
        rng = np.random.default_rng(13)
        done = 0
        while done < 20:
            grid = random_grid(rng, max_side=5)
            res = solve_gsa(grid)
            if not res.unique:
                continue
            D = rng.standard_normal(grid.m.shape)
            eps = 1e-7
            hi = solve_gsa(AlignGrid(grid.m + eps * D, grid.gamma), compute_unique=False).z_star
            lo = solve_gsa(AlignGrid(grid.m - eps * D, grid.gamma), compute_unique=False).z_star
            G = gsa_grad_matrix(grid, res)
            assert abs((hi - lo) / (2 * eps) - float((G * D).sum())) <= 1e-5
            done += 1

    def test_supergradient_inequality(self):
        rng = np.random.default_rng(17)
        grid = random_grid(rng)
        res = solve_gsa(grid, compute_unique=False)
        G = gsa_grad_matrix(grid, res)

        def f(mflat):
            return solve_gsa(AlignGrid(mflat.reshape(grid.m.shape), grid.gamma), compute_unique=False).z_star

        rep = supergradient_check(f, grid.m.ravel(), G.ravel(), trials=100, radius=0.5, sense="concave")
        assert rep.passed

    def test_gap_contributions_can_be_dropped(self):
        # Force gaps with a rectangular grid, then check the reduced gradient.
        grid = AlignGrid(m=np.array([[1.0, 5.0, 2.0]]), gamma=1.5)
        res = solve_gsa(grid)
        G_full = gsa_grad_matrix(grid, res)
        G_diag = gsa_grad_matrix(grid, res, gap_gradient=False)
        n_gaps = sum(1 for e in res.path if e.kind != "match")
        assert n_gaps > 0
        assert float(G_full.sum()) == pytest.approx(
            float(G_diag.sum()) + grid.gamma * n_gaps, abs=1e-12
        )
        assert set(np.unique(G_diag)).issubset({0.0, 1.0})

    def test_transpose_symmetry_at_unique_optima(self):
        rng = np.random.default_rng(19)
        done = 0
        while done < 20:
            grid = random_grid(rng, max_side=5)
            res = solve_gsa(grid)
            if not res.unique:
                continue
            grid_t = AlignGrid(m=grid.m.T.copy(), gamma=grid.gamma)
            res_t = solve_gsa(grid_t)
            assert res_t.z_star == pytest.approx(res.z_star, abs=1e-12)
            assert np.allclose(gsa_grad_matrix(grid_t, res_t), gsa_grad_matrix(grid, res).T)
            done += 1

    def test_gapless_value_ignores_gap_factor(self):
        rng = np.random.default_rng(23)
        done = 0
        while done < 10:
            n = int(rng.integers(1, 6))
            m = rng.uniform(0.1, 1.0, size=(n, n))
            res15 = solve_gsa(AlignGrid(m, 1.5), compute_unique=False)
            if set(res15.step_string()) != {"D"}:
                continue
            res2 = solve_gsa(AlignGrid(m, 2.0), compute_unique=False)
            assert res2.z_star == pytest.approx(res15.z_star, abs=1e-12)
            assert res2.step_string() == res15.step_string()
            done += 1


class TestValidation:
    def test_gap_factor_must_exceed_one(self):
        with pytest.raises(ValueError):
            AlignGrid(m=np.ones((2, 2)), gamma=1.0)
        with pytest.raises(ValueError):
            AlignGrid(m=np.ones((2, 2)), gamma=np.inf)

    def test_empty_or_flat_costs_rejected(self):
        with pytest.raises(DimensionMismatch):
            AlignGrid(m=np.ones(3), gamma=1.5)
        with pytest.raises(DimensionMismatch):
            AlignGrid(m=np.ones((0, 2)), gamma=1.5)

    def test_non_finite_costs_rejected(self):
        with pytest.raises(NonFinite):
            AlignGrid(m=np.array([[np.nan, 1.0]]), gamma=1.5)


class TestAlignmentLoss:
    def test_frozen_example(self):
        logP = np.log(np.array([[0.9, 0.1], [0.2, 0.8]]))
        Y = np.eye(2)
        loss, grad = gsa_loss(logP, Y, 1.5)
        assert loss == pytest.approx(-np.log(0.9) - np.log(0.8), abs=1e-12)
        assert np.array_equal(grad, -np.eye(2))

    def test_solver_runs_once_per_loss(self):
        logP = np.log(np.array([[0.9, 0.1], [0.2, 0.8]]))
        reset_invocations()
        gsa_loss(logP, np.eye(2), 1.5)
        assert invocations()["gsa"] == 1

    def test_gradient_matches_chain_rule_of_layer(self):
        rng = np.random.default_rng(29)
        Tp, Tt, d = 4, 3, 5
        logits = rng.standard_normal((Tp, d))
        logP = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        Y = np.eye(d)[rng.integers(0, d, size=Tt)]
        loss, grad = gsa_loss(logP, Y, 1.5)
        layer = gsa_layer(Y, 1.5)
        outcome, chains = layer.run(logP.ravel())
        assert outcome.z_star == pytest.approx(loss, abs=1e-12)
        gg = assemble_gengrad(outcome, layer.dependence)
        gw = comb_loss_backward(gg, chains, 1.0)
        assert np.allclose(gw.reshape(Tp, d), grad, atol=1e-12)

    def test_class_dimension_mismatch_rejected(self):
        with pytest.raises(DimensionMismatch):
            build_grid(np.zeros((2, 3)), np.eye(4), 1.5)
