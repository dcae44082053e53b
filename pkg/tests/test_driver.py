import numpy as np
import pytest

from mgmlmc import (
    GridHierarchy,
    LaplaceSourceControl,
    OptimizerConfig,
    baseline_optimize,
    next_rmse,
    norm,
    robust_optimize,
    update_eta,
)
from mgmlmc.driver import report_columns, row_to_record, state_statistics
from mgmlmc.elliptic import LaplaceProblemSpec
from mgmlmc.errors import DegenerateStart
from mgmlmc.mlmc import (
    PURPOSE_CONFIRM,
    PURPOSE_OPT,
    SampleAllocation,
    build_sample_sets,
    make_set_id,
)
from mgmlmc.random_fields import CovarianceSpec


class TestRmseSchedule:
    def test_next_rmse_reference_value(self):
        assert next_rmse(0.5, 1e-2, 0.5, 1e-4) == pytest.approx(2.5e-3)

    def test_floor_active(self):
        # r eta |g| below r tau: the floor wins
        assert next_rmse(0.1, 1e-5, 0.5, 1e-3) == 0.5 * 1e-3

    def test_cap_with_gradient_at_tolerance(self):
        tau = 2e-3
        assert next_rmse(0.5, tau, 0.5, tau) == 0.5 * tau

    def test_positive_inputs_required(self):
        with pytest.raises(ValueError):
            next_rmse(0.0, 1.0, 0.5, 1e-3)

    def test_update_eta_cap(self):
        assert update_eta(0.9, 1.0) == 0.5

    def test_update_eta_ratio(self):
        assert update_eta(0.1, 1.0) == pytest.approx(0.1)

    def test_update_eta_zero_gradient(self):
        assert update_eta(0.0, 1.0) == 0.0

    def test_update_eta_degenerate(self):
        with pytest.raises(DegenerateStart):
            update_eta(1.0, 0.0)


def deterministic_problem(K=1, alpha=1e-6):
    hier = GridHierarchy(dim=2, n0=9, levels=K + 1)
    return LaplaceSourceControl(
        hier, LaplaceProblemSpec(alpha=alpha, covariance=CovarianceSpec(0.0, 0.3)))


class TestRobustOptimize:
    def test_deterministic_quadratic_converges_fast(self):
        # a well-conditioned quadratic without sampling noise: one or two
        # cycles reach the tolerance and the fresh-sample confirmation
        # reproduces the cheap gradient exactly
        p = deterministic_problem(K=1, alpha=1e-2)
        cfg = OptimizerConfig(tau=1e-6, K=1, eps1=0.1, i_max=6,
                              global_seed=3, warmup=2)
        u, report = robust_optimize(p, cfg)
        assert report.converged
        assert len(report.rows) <= 2
        assert report.final_g_norm == pytest.approx(
            report.rows[-1].g_norm, rel=1e-10, abs=1e-16)

    def test_desk_problem_converges(self, laplace_small):
        cfg = OptimizerConfig(tau=2e-3, K=2, eps1=0.1, i_max=8,
                              global_seed=11, warmup=30)
        u, report = robust_optimize(laplace_small, cfg)
        assert report.converged
        assert len(report.rows) <= 5
        assert report.final_g_norm <= cfg.tau

    def test_rmse_coupling_invariant(self, laplace_small):
        # eps_i = max(r tau, r eta_{i-1} |g_{i-1}|) for every cycle i >= 2
        cfg = OptimizerConfig(tau=5e-4, K=2, eps1=0.1, i_max=8,
                              global_seed=12, warmup=30)
        _, report = robust_optimize(laplace_small, cfg)
        assert len(report.rows) >= 2
        for prev, row in zip(report.rows, report.rows[1:]):
            eta = min(0.5, prev.g_norm / prev.g0_norm)
            expected = max(cfg.r * cfg.tau, cfg.r * eta * prev.g_norm)
            assert row.eps == pytest.approx(expected, rel=1e-12)

    def test_totals_are_column_sums(self, laplace_small):
        cfg = OptimizerConfig(tau=2e-3, K=2, eps1=0.1, i_max=8,
                              global_seed=13, warmup=30)
        _, report = robust_optimize(laplace_small, cfg)
        assert report.total_solves == pytest.approx(
            sum(r.solves for r in report.rows))
        assert report.totals()["solves"] == report.total_solves

    def test_row_sink_called_per_cycle(self, laplace_small):
        rows = []
        cfg = OptimizerConfig(tau=2e-3, K=2, eps1=0.1, i_max=8,
                              global_seed=14, warmup=30)
        _, report = robust_optimize(laplace_small, cfg, row_sink=rows.append)
        assert len(rows) == len(report.rows)

    def test_max_cycles_returns_best_iterate(self, laplace_small):
        cfg = OptimizerConfig(tau=1e-9, K=2, eps1=0.1, i_max=2,
                              global_seed=15, warmup=30)
        u, report = robust_optimize(laplace_small, cfg)
        assert report.status == "max_cycles"
        assert u.level == 2
        assert report.final_J is None

    def test_report_record_layout(self):
        assert report_columns(2) == (
            "i", "eps", "n0", "n1", "n2", "J0", "J", "g0_norm", "g_norm",
            "solves", "time")
        from mgmlmc.driver import CycleRow

        row = CycleRow(1, 0.1, (5, 2, 1), 1.0, 0.5, 0.2, 0.1, 12.0, 0.3)
        rec = row_to_record(row)
        assert rec == (1, 0.1, 5, 2, 1, 1.0, 0.5, 0.2, 0.1, 12.0, 0.3)


class TestBaselineOptimize:
    def test_deterministic_matches_plain_ncg(self):
        p = deterministic_problem(K=1, alpha=1e-3)
        cfg = OptimizerConfig(tau=1e-6, K=1, eps1=0.1, i_max=5,
                              global_seed=4, warmup=2, baseline_max_steps=200)
        u, report = baseline_optimize(p, cfg)
        assert report.converged
        # the deterministic sampled problem has a dense-oracle minimizer
        from test_elliptic import dense_operator

        field = p.field(build_sample_sets(
            1, SampleAllocation(eps=1.0, theta=0.5, n=(1, 1), finest=1),
            0.25, True, cfg.global_seed, make_set_id(1, PURPOSE_OPT),
        ).streams(1, 1)[0], 1)
        h = p.hierarchy.h(1)
        A = dense_operator(field.values, h)
        z = p.target(1).values.ravel()
        m2 = A.shape[0]
        H = p.alpha * np.eye(m2) + np.linalg.solve(A, np.linalg.solve(A, np.eye(m2)))
        u_star = np.linalg.solve(H, np.linalg.solve(A, z))
        dev = np.linalg.norm(u.values.ravel() - u_star) / np.linalg.norm(u_star)
        assert dev <= 1e-3  # tau-level accuracy in the control

    def test_stochastic_desk_run_converges(self, laplace_small):
        cfg = OptimizerConfig(tau=2e-3, K=2, eps1=0.1, i_max=8,
                              global_seed=16, warmup=30, baseline_max_steps=300)
        u, report = baseline_optimize(laplace_small, cfg)
        assert report.converged
        assert report.final_g_norm <= cfg.tau
        assert all(len(r.n) == 3 for r in report.rows)


class TestConfirmationDiscipline:
    def test_confirmation_streams_disjoint_from_optimization(self):
        alloc = SampleAllocation(eps=0.1, theta=0.5, n=(8, 4, 2), finest=2)
        for cycle in (1, 2, 5):
            opt = build_sample_sets(2, alloc, 0.25, True, 9,
                                    make_set_id(cycle, PURPOSE_OPT))
            conf = build_sample_sets(2, alloc, 0.25, True, 9,
                                     make_set_id(cycle, PURPOSE_CONFIRM))
            opt_ids = {s.seed_id for level in range(3)
                       for s in opt.streams(2, level)}
            conf_ids = {s.seed_id for level in range(3)
                        for s in conf.streams(2, level)}
            assert not opt_ids & conf_ids

    def test_confirmed_norm_below_tolerance(self, laplace_small):
        cfg = OptimizerConfig(tau=2e-3, K=2, eps1=0.1, i_max=8,
                              global_seed=17, warmup=30)
        _, report = robust_optimize(laplace_small, cfg)
        assert report.converged and report.final_g_norm <= cfg.tau


class TestStateStatistics:
    def test_deterministic_variance_vanishes(self):
        p = deterministic_problem(K=1)
        u = p.control_from_function(1, lambda a, b: np.sin(np.pi * a) * b)
        mean, var = state_statistics(p, u, 4, global_seed=21)
        assert np.all(var <= 1e-28)
        assert mean.shape == (17, 17)

    def test_stochastic_variance_positive(self, laplace_small):
        u = laplace_small.control_from_function(
            2, lambda a, b: np.sin(np.pi * a) * np.sin(np.pi * b))
        mean, var = state_statistics(laplace_small, u, 8, global_seed=22)
        assert var.max() > 0.0
        assert np.all(var >= 0.0)


class TestCostRegime:
    def test_cost_grows_no_faster_than_theory(self, laplace_small):
        # over a sequence of tightening tolerances the total solve count is
        # bounded by the theoretical rate with 50% slack; the exponent uses
        # the fitted decay rates, with the cheap-regime cap at tau^-2
        from mgmlmc import estimate_level_stats

        p = laplace_small
        stats = estimate_level_stats(p, p.zero_control(2), 60, range(3),
                                     global_seed=31, set_id=4,
                                     extrapolate_finest=0)
        phi = stats.phi if stats.phi is not None else 2.0
        kappa = stats.kappa
        rho = stats.rho if stats.rho is not None else 2.0
        exponent = 2.0 if phi >= kappa else 2.0 + (kappa - phi) / rho

        taus = [4e-3, 2e-3, 1e-3]
        solves = []
        for tau in taus:
            cfg = OptimizerConfig(tau=tau, K=2, eps1=0.1, i_max=10,
                                  global_seed=32, warmup=30)
            _, report = robust_optimize(p, cfg)
            assert report.converged
            solves.append(report.total_solves)
        scale = solves[0] * taus[0] ** exponent
        for tau, total in zip(taus[1:], solves[1:]):
            bound = scale * tau ** (-exponent)
            assert total <= 1.5 * bound
