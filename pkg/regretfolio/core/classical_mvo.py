"""Classical mean-variance models, the homogenized Sharpe lift, and the hindsight value function z*."""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np
import scipy.linalg

from regretfolio.config import settings
from regretfolio.core.conic_program import AffineExpr, ProgramBuilder
from regretfolio.core.formulation import (
    add_portfolio,
    add_portfolio_cone,
    add_variance_cap,
    add_variance_epigraph,
    lift_to_portfolio,
    solution_from_report,
)
from regretfolio.core.market_model import cholesky_upper
from regretfolio.core.parallel import map_solves
from regretfolio.core.solver import solve_batch, solve_or_raise
from regretfolio.models.errors import InfeasibleProblem, NotRationalToInvest, UnsupportedProblem
from regretfolio.models.schemas import (
    ConicProgram,
    FeasibleSet,
    FrontierPoint,
    MarketParams,
    MvoVariant,
    PortfolioSolution,
    SolveStatus,
    VariantKind,
)

logger = logging.getLogger(__name__)


def portfolio_objective(x: np.ndarray, params: MarketParams, variant: MvoVariant) -> float:
    """f(x, p) in the model's own orientation (variance for MinVariance, a reward otherwise)."""
    x = np.asarray(x, dtype=float)
    variance = float(x @ params.sigma @ x)
    ret = float(params.mu @ x)
    if variant.kind == VariantKind.MIN_VARIANCE:
        return variance
    if variant.kind == VariantKind.MAX_RETURN:
        return ret
    if variant.kind == VariantKind.RISK_ADJUSTED:
        return ret - variant.parameter * variance
    return (ret - variant.parameter) / np.sqrt(variance)


def variant_constraint_holds(x: np.ndarray, params: MarketParams, variant: MvoVariant, tol: float = 1e-8) -> bool:
    x = np.asarray(x, dtype=float)
    if variant.kind == VariantKind.MIN_VARIANCE:
        return bool(params.mu @ x >= variant.parameter - tol)
    if variant.kind == VariantKind.MAX_RETURN:
        return bool(x @ params.sigma @ x <= variant.parameter + tol)
    return True


def is_nonempty(X: FeasibleSet) -> bool:
    if X.m_g == 0:
        return True
    if X.r == 0:
        return X.contains(X.x_p)
    builder = ProgramBuilder("feasibility")
    add_portfolio(builder, X)
    return solve_or_raise(builder.build()).status == SolveStatus.OPTIMAL


def _solve_singleton(params: MarketParams, X: FeasibleSet, variant: MvoVariant) -> PortfolioSolution:
    """X = {x_p}: nothing to optimize, only feasibility to check."""
    x = X.x_p
    if not (X.contains(x) and variant_constraint_holds(x, params, variant)):
        return PortfolioSolution(status=SolveStatus.INFEASIBLE, variant=variant)
    return PortfolioSolution(
        status=SolveStatus.OPTIMAL, variant=variant, x=x, objective=portfolio_objective(x, params, variant)
    )


def _risk_adjusted_program(
    params: MarketParams, X: FeasibleSet, lam: float, factor: np.ndarray | None = None
) -> tuple[ConicProgram, AffineExpr]:
    builder = ProgramBuilder(f"classical {MvoVariant.risk_adjusted(lam).label}")
    x = add_portfolio(builder, X)
    risk = add_variance_epigraph(builder, x, params.sigma, "risk", factor=factor)
    builder.maximize(x.dot(params.mu) - lam * risk)
    return builder.build(), x


def solve_variant(params: MarketParams, X: FeasibleSet, variant: MvoVariant) -> PortfolioSolution:
    """Solve one classical model; MaxSharpe is delegated to solve_max_sharpe."""
    if params.n != X.n:
        raise ValueError(f"market has {params.n} assets but the feasible set has {X.n}")
    if variant.kind == VariantKind.MAX_SHARPE:
        return solve_max_sharpe(params, X, variant.parameter)
    if X.r == 0:
        return _solve_singleton(params, X, variant)

    U = cholesky_upper(params.sigma)
    if variant.kind == VariantKind.RISK_ADJUSTED:
        program, x = _risk_adjusted_program(params, X, variant.parameter, U)
    else:
        builder = ProgramBuilder(f"classical {variant.label}")
        x = add_portfolio(builder, X)
        if variant.kind == VariantKind.MIN_VARIANCE:
            risk = add_variance_epigraph(builder, x, params.sigma, "risk", factor=U)
            if np.isfinite(variant.parameter):
                builder.add_nonneg(x.dot(params.mu) - variant.parameter)
            builder.minimize(risk)
        else:
            add_variance_cap(builder, x, params.sigma, variant.parameter, factor=U)
            builder.maximize(x.dot(params.mu))
        program = builder.build()

    report = solve_or_raise(program)
    return solution_from_report(report, variant, x, lambda w: portfolio_objective(w, params, variant))


def solve_max_sharpe(params: MarketParams, X: FeasibleSet, rf: float) -> PortfolioSolution:
    """Maximum Sharpe ratio through its convex lift.

    Solves max (mu - rf e)^T y over y in R+ X with y^T sigma y <= 1, then renormalizes x = y / e^T y.
    """
    variant = MvoVariant.max_sharpe(rf)
    if params.n != X.n:
        raise ValueError(f"market has {params.n} assets but the feasible set has {X.n}")
    if not X.has_budget:
        raise UnsupportedProblem("maximum Sharpe ratio needs the budget row e^T x = 1 among the equalities")

    excess = params.mu - rf
    builder = ProgramBuilder(f"classical {variant.label}")
    y, _ = add_portfolio_cone(builder, X)
    add_variance_cap(builder, y, params.sigma, 1.0)
    builder.maximize(y.dot(excess))
    report = solve_or_raise(builder.build())
    if report.status != SolveStatus.OPTIMAL:
        return PortfolioSolution(status=report.status, variant=variant)

    lifted_value = float(report.objective or 0.0)
    if lifted_value <= 1e-8 * max(1.0, float(np.abs(excess).max())):
        if not is_nonempty(X):
            return PortfolioSolution(status=SolveStatus.INFEASIBLE, variant=variant)
        raise NotRationalToInvest(f"no portfolio earns a positive excess return over rf={rf:g}")

    y_val = y.evaluate(report.values)
    x = lift_to_portfolio(y_val)
    return PortfolioSolution(
        status=SolveStatus.OPTIMAL,
        variant=variant,
        x=x,
        objective=portfolio_objective(x, params, variant),
        lifted=y_val,
        lifted_objective=lifted_value,
        timings={"solve": report.solve_time},
    )


def value_function(params: MarketParams, X: FeasibleSet, variant: MvoVariant) -> float:
    """z*(p): the optimal value only; raises on any non-optimal status."""
    solution = solve_variant(params, X, variant).require_optimal()
    assert solution.objective is not None
    return solution.objective


def _batched_values(
    base: MarketParams, mus: np.ndarray, X: FeasibleSet, lam: float, factor: np.ndarray
) -> list[float]:
    variant = MvoVariant.risk_adjusted(lam)
    scenarios = [base.with_mu(mu) for mu in mus]
    built = [_risk_adjusted_program(p, X, lam, factor) for p in scenarios]
    reports = solve_batch([program for program, _ in built])
    values = []
    for p, (_, x), report in zip(scenarios, built, reports, strict=True):
        solution = solution_from_report(report, variant, x, lambda w, p=p: portfolio_objective(w, p, variant))
        objective = solution.require_optimal().objective
        assert objective is not None
        values.append(objective)
    return values


def risk_adjusted_values(
    mus: np.ndarray,
    sigma: np.ndarray,
    lam: float,
    X: FeasibleSet,
    max_workers: int | None = None,
) -> np.ndarray:
    """z*(mu) of the risk-adjusted model for every row of mus, sharing one covariance.

    Without inequality rows the optimum solves a linear system in the reduced space, factored once
    for the whole batch. Otherwise each worker compiles the conic program once and re-solves it
    for every mean in its share of the rows.
    """
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    if X.m_g and X.r:
        base = MarketParams(mu=mus[0], sigma=sigma)
        factor = cholesky_upper(sigma)
        workers = max_workers if max_workers is not None else settings.max_workers
        chunks = np.array_split(mus, max(1, min(workers, mus.shape[0])))
        shares = map_solves(lambda chunk: _batched_values(base, chunk, X, lam, factor), chunks, workers)
        return np.array([value for share in shares for value in share])
    if X.m_g and not is_nonempty(X):
        raise InfeasibleProblem(f"{MvoVariant.risk_adjusted(lam).label} is infeasible")

    if X.r == 0:
        points = np.repeat(X.x_p[:, None], mus.shape[0], axis=1)
    else:
        reduced = 2.0 * lam * (X.H.T @ sigma @ X.H)
        rhs = X.H.T @ (mus.T - 2.0 * lam * (sigma @ X.x_p)[:, None])
        W = scipy.linalg.cho_solve(scipy.linalg.cho_factor(reduced), rhs)
        points = X.x_p[:, None] + X.H @ W
    returns = np.einsum("in,ni->i", mus, points)
    variances = np.einsum("ni,nk,ki->i", points, sigma, points)
    return returns - lam * variances


def efficient_frontier(
    params: MarketParams,
    X: FeasibleSet,
    grid: Sequence[float],
    max_workers: int | None = None,
) -> list[FrontierPoint]:
    """(risk, return) of the minimum-variance portfolio for each target return in an ascending grid."""
    rhos = np.asarray(list(grid), dtype=float)
    if rhos.size == 0:
        raise ValueError("frontier grid is empty")
    if not np.all(np.isfinite(rhos)) or np.any(np.diff(rhos) < 0):
        raise ValueError("frontier grid must be finite and ascending")

    def _point(rho: float) -> FrontierPoint:
        solution = solve_variant(params, X, MvoVariant.min_variance(float(rho)))
        if solution.status != SolveStatus.OPTIMAL or solution.x is None:
            return FrontierPoint(rho=rho, status=solution.status)
        x = solution.x
        return FrontierPoint(
            rho=rho, risk=float(np.sqrt(x @ params.sigma @ x)), ret=float(params.mu @ x), status=solution.status
        )

    points = map_solves(_point, [float(r) for r in rhos], max_workers)
    logger.info("Frontier: %d of %d grid points feasible", sum(p.risk is not None for p in points), len(points))
    return points
