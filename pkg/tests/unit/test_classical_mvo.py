"""Tests for the classical models, the Sharpe lift and the hindsight value function."""

import numpy as np
import pytest

from regretfolio.core.classical_mvo import (
    efficient_frontier,
    is_nonempty,
    portfolio_objective,
    risk_adjusted_values,
    solve_max_sharpe,
    solve_variant,
    value_function,
    variant_constraint_holds,
)
from regretfolio.core.market_model import build_feasible_set
from regretfolio.models.errors import InfeasibleProblem, NotRationalToInvest, UnsupportedProblem
from regretfolio.models.schemas import FeasibleSet, MarketParams, MvoVariant, SolveStatus
from tests.conftest import random_params


def _unconstrained_min_variance(sigma: np.ndarray) -> np.ndarray:
    ones = np.ones(sigma.shape[0])
    v = np.linalg.solve(sigma, ones)
    return v / v.sum()


class TestPortfolioObjective:
    def test_each_variant(self) -> None:
        params = MarketParams(mu=[0.1, 0.2], sigma=[[0.04, 0.0], [0.0, 0.09]])
        x = np.array([0.5, 0.5])
        variance = 0.25 * 0.04 + 0.25 * 0.09
        assert portfolio_objective(x, params, MvoVariant.min_variance()) == pytest.approx(variance)
        assert portfolio_objective(x, params, MvoVariant.max_return(1.0)) == pytest.approx(0.15)
        assert portfolio_objective(x, params, MvoVariant.risk_adjusted(2.0)) == pytest.approx(0.15 - 2 * variance)
        assert portfolio_objective(x, params, MvoVariant.max_sharpe(0.05)) == pytest.approx(0.1 / np.sqrt(variance))

    def test_variant_constraint(self) -> None:
        params = MarketParams(mu=[0.1, 0.2], sigma=[[0.04, 0.0], [0.0, 0.09]])
        x = np.array([0.5, 0.5])
        assert variant_constraint_holds(x, params, MvoVariant.min_variance(0.15))
        assert not variant_constraint_holds(x, params, MvoVariant.min_variance(0.16))
        assert not variant_constraint_holds(x, params, MvoVariant.max_return(0.01))


class TestSolveVariant:
    def test_min_variance_with_shorting_matches_closed_form(self, params3: MarketParams, budget3: FeasibleSet) -> None:
        solution = solve_variant(params3, budget3, MvoVariant.min_variance())
        assert solution.status == SolveStatus.OPTIMAL
        assert solution.weights == pytest.approx(_unconstrained_min_variance(params3.sigma), abs=1e-5)

    def test_min_variance_target_binds(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        rho = float(params3.mu.max()) - 1e-3
        solution = solve_variant(params3, simplex3, MvoVariant.min_variance(rho))
        assert float(params3.mu @ solution.weights) >= rho - 1e-6
        assert simplex3.contains(solution.weights, tol=1e-6)

    def test_min_variance_unreachable_target(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        solution = solve_variant(params3, simplex3, MvoVariant.min_variance(float(params3.mu.max()) + 0.01))
        assert solution.status == SolveStatus.INFEASIBLE
        assert solution.x is None

    def test_max_return_loose_cap_picks_best_asset(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        cap = float(np.diag(params3.sigma).max()) + 1.0
        solution = solve_variant(params3, simplex3, MvoVariant.max_return(cap))
        assert solution.objective == pytest.approx(float(params3.mu.max()), abs=1e-6)

    def test_max_return_cap_binds(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        floor = solve_variant(params3, simplex3, MvoVariant.min_variance()).objective
        assert floor is not None
        cap = 1.5 * floor
        solution = solve_variant(params3, simplex3, MvoVariant.max_return(cap))
        x = solution.weights
        assert float(x @ params3.sigma @ x) <= cap + 1e-6

    def test_risk_adjusted_kkt_on_budget(self, params3: MarketParams, budget3: FeasibleSet) -> None:
        lam = 3.0
        solution = solve_variant(params3, budget3, MvoVariant.risk_adjusted(lam))
        # Stationary along the budget plane: mu - 2 lam sigma x = nu e with e^T x = 1.
        inv_mu = np.linalg.solve(params3.sigma, params3.mu)
        inv_e = np.linalg.solve(params3.sigma, np.ones(3))
        nu = (inv_mu.sum() - 2 * lam) / inv_e.sum()
        expected = (inv_mu - nu * inv_e) / (2 * lam)
        assert expected.sum() == pytest.approx(1.0)
        assert solution.weights == pytest.approx(expected, abs=5e-4)

    def test_dimension_mismatch(self, params3: MarketParams) -> None:
        with pytest.raises(ValueError, match="assets"):
            solve_variant(params3, build_feasible_set([[1.0, 1.0]], [1.0]), MvoVariant.risk_adjusted(1.0))

    def test_singleton_feasible_set(self, params3: MarketParams) -> None:
        X = build_feasible_set(np.eye(3), [0.2, 0.3, 0.5])
        solution = solve_variant(params3, X, MvoVariant.risk_adjusted(1.0))
        assert solution.weights == pytest.approx([0.2, 0.3, 0.5])
        assert solve_variant(params3, X, MvoVariant.min_variance(10.0)).status == SolveStatus.INFEASIBLE

    def test_empty_feasible_set(self, params3: MarketParams) -> None:
        X = build_feasible_set([[1.0, 1.0, 1.0]], [1.0], G=-np.eye(3), g=-np.ones(3))
        assert not is_nonempty(X)
        assert solve_variant(params3, X, MvoVariant.risk_adjusted(1.0)).status == SolveStatus.INFEASIBLE


class TestMaxSharpe:
    def test_matches_tangency_portfolio(self, budget3: FeasibleSet) -> None:
        params = MarketParams(mu=[0.1, 0.2, 0.15], sigma=np.diag([0.04, 0.09, 0.0625]))
        rf = 0.01
        solution = solve_max_sharpe(params, budget3, rf)
        direction = np.linalg.solve(params.sigma, params.mu - rf)
        assert solution.weights == pytest.approx(direction / direction.sum(), abs=1e-4)
        assert solution.lifted is not None
        assert solution.lifted_objective == pytest.approx(np.sqrt((params.mu - rf) @ direction), rel=1e-4)
        assert solution.objective == pytest.approx(solution.lifted_objective, rel=1e-4)

    def test_long_only_sharpe_beats_every_asset(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        solution = solve_variant(params3, simplex3, MvoVariant.max_sharpe(0.0))
        singles = params3.mu / np.sqrt(np.diag(params3.sigma))
        assert solution.objective >= singles.max() - 1e-6
        assert simplex3.contains(solution.weights, tol=1e-6)

    def test_needs_budget_row(self, params3: MarketParams) -> None:
        X = build_feasible_set(np.zeros((0, 3)), [], G=np.eye(3), g=np.ones(3))
        with pytest.raises(UnsupportedProblem, match="budget"):
            solve_max_sharpe(params3, X, 0.0)

    def test_not_rational_when_rf_dominates(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        with pytest.raises(NotRationalToInvest):
            solve_max_sharpe(params3, simplex3, float(params3.mu.max()) + 0.05)


class TestValueFunction:
    def test_returns_optimal_objective(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        variant = MvoVariant.risk_adjusted(2.0)
        assert value_function(params3, simplex3, variant) == pytest.approx(
            solve_variant(params3, simplex3, variant).objective
        )

    def test_raises_when_infeasible(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        with pytest.raises(InfeasibleProblem):
            value_function(params3, simplex3, MvoVariant.min_variance(1.0))


class TestRiskAdjustedValues:
    def test_closed_form_matches_conic(self, params3: MarketParams, budget3: FeasibleSet) -> None:
        rng = np.random.default_rng(5)
        mus = params3.mu + 0.02 * rng.standard_normal((4, 3))
        batch = risk_adjusted_values(mus, params3.sigma, 2.0, budget3)
        conic = [value_function(params3.with_mu(mu), budget3, MvoVariant.risk_adjusted(2.0)) for mu in mus]
        assert batch == pytest.approx(conic, abs=1e-6)

    def test_conic_path_with_inequalities(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        mus = np.vstack([params3.mu, params3.mu[::-1]])
        values = risk_adjusted_values(mus, params3.sigma, 1.0, simplex3, max_workers=2)
        assert values.shape == (2,)
        assert values[0] == pytest.approx(value_function(params3, simplex3, MvoVariant.risk_adjusted(1.0)))

    @pytest.mark.parametrize("workers", [1, 2])
    def test_batched_shares_match_single_solves(
        self, params3: MarketParams, simplex3: FeasibleSet, workers: int
    ) -> None:
        mus = params3.mu + 0.03 * np.random.default_rng(6).standard_normal((5, 3))
        values = risk_adjusted_values(mus, params3.sigma, 1.5, simplex3, max_workers=workers)
        variant = MvoVariant.risk_adjusted(1.5)
        expected = [value_function(params3.with_mu(mu), simplex3, variant) for mu in mus]
        assert values == pytest.approx(expected, abs=1e-6)

    def test_empty_set_with_inequalities(self, params3: MarketParams) -> None:
        X = build_feasible_set(np.eye(3), [1.0, 0.0, 0.0], G=[[1.0, 0.0, 0.0]], g=[0.5])
        with pytest.raises(InfeasibleProblem):
            risk_adjusted_values(params3.mu[None, :], params3.sigma, 1.0, X)

    def test_singleton(self, params3: MarketParams) -> None:
        X = build_feasible_set(np.eye(3), [1.0, 0.0, 0.0])
        values = risk_adjusted_values(np.vstack([params3.mu, params3.mu + 0.1]), params3.sigma, 1.0, X)
        expected = params3.mu[0] - params3.sigma[0, 0]
        assert values == pytest.approx([expected, expected + 0.1])


class TestEfficientFrontier:
    def test_risk_increases_with_target(self, simplex3: FeasibleSet) -> None:
        params = random_params(3, seed=2)
        grid = np.linspace(float(params.mu.min()), float(params.mu.max()) - 1e-3, 5)
        points = efficient_frontier(params, simplex3, grid)
        risks = [p.risk for p in points]
        assert all(r is not None for r in risks)
        assert all(b >= a - 1e-6 for a, b in zip(risks, risks[1:], strict=False))

    def test_infeasible_points_are_flagged(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        grid = [float(params3.mu.min()), float(params3.mu.max()) + 0.05]
        points = efficient_frontier(params3, simplex3, grid)
        assert points[0].status == SolveStatus.OPTIMAL
        assert points[1].status == SolveStatus.INFEASIBLE
        assert points[1].risk is None and points[1].ret is None

    def test_descending_grid_rejected(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        with pytest.raises(ValueError, match="ascending"):
            efficient_frontier(params3, simplex3, [0.2, 0.1])

    def test_empty_grid_rejected(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        with pytest.raises(ValueError, match="empty"):
            efficient_frontier(params3, simplex3, [])
