"""Absolute (worst-case) robust counterparts of the four mean-variance models."""

from __future__ import annotations

import logging

import numpy as np

from regretfolio.core.classical_mvo import is_nonempty
from regretfolio.core.conic_program import AffineExpr, ProgramBuilder, quadratic_to_soc
from regretfolio.core.formulation import (
    add_mean_floor,
    add_portfolio,
    add_portfolio_cone,
    add_variance_cap,
    distinct_matrices,
    lift_to_portfolio,
    solution_from_report,
)
from regretfolio.core.market_model import cholesky_upper
from regretfolio.core.solver import solve_or_raise
from regretfolio.core.uncertainty_sets import (
    AnySet,
    discrete_scenarios,
    project_mu,
    project_sigma,
    sigma_is_fixed,
    worst_case_mean,
    worst_case_variance,
)
from regretfolio.models.errors import NotRationalToInvest, UnsupportedProblem
from regretfolio.models.schemas import (
    EllipsoidalMuSet,
    FeasibleSet,
    MuEllipsoid,
    MvoVariant,
    PortfolioSolution,
    SolveStatus,
    VariantKind,
)

logger = logging.getLogger(__name__)


def _check_dimensions(U: AnySet, X: FeasibleSet) -> None:
    if U.n != X.n:
        raise ValueError(f"uncertainty set has {U.n} assets but the feasible set has {X.n}")


def _variance_epigraphs(builder: ProgramBuilder, x: AffineExpr, sigmas: list[np.ndarray]) -> list[AffineExpr]:
    """One s_j >= x^T sigma_j x per distinct covariance."""
    bounds = []
    for j, sigma in enumerate(sigmas):
        s = builder.variable(f"risk_{j}")
        builder.add_rotated_second_order(quadratic_to_soc(sigma, x, s))
        bounds.append(s)
    return bounds


def worst_case_objective(x: np.ndarray, U: AnySet, variant: MvoVariant) -> float:
    """min (or max for MinVariance) of f(x, p) over p in U, honoring joint scenarios."""
    x = np.asarray(x, dtype=float)
    if variant.kind == VariantKind.MIN_VARIANCE:
        return worst_case_variance(U, x)[0]
    if variant.kind == VariantKind.MAX_RETURN:
        return worst_case_mean(U, x)[0]
    if isinstance(U, EllipsoidalMuSet):
        mean = worst_case_mean(U, x)[0]
        variance = float(x @ U.sigma @ x)
        if variant.kind == VariantKind.RISK_ADJUSTED:
            return mean - variant.parameter * variance
        return (mean - variant.parameter) / np.sqrt(variance)
    values = []
    for p in discrete_scenarios(U):
        mean, variance = float(p.mu @ x), float(x @ p.sigma @ x)
        if variant.kind == VariantKind.RISK_ADJUSTED:
            values.append(mean - variant.parameter * variance)
        else:
            values.append((mean - variant.parameter) / np.sqrt(variance))
    return float(min(values))


def ar_min_variance(U: AnySet, X: FeasibleSet, rho: float = float("-inf")) -> PortfolioSolution:
    """Minimize the worst-case variance subject to a worst-case return floor, over U_mu x U_sigma."""
    _check_dimensions(U, X)
    variant = MvoVariant.min_variance(rho)
    sigmas, _ = distinct_matrices(project_sigma(U))
    builder = ProgramBuilder(f"absolute {variant.label}")
    x = add_portfolio(builder, X)
    risk = builder.variable("risk")
    for sigma in sigmas:
        builder.add_rotated_second_order(quadratic_to_soc(sigma, x, risk))
    if np.isfinite(rho):
        add_mean_floor(builder, x, project_mu(U), rho)
    builder.minimize(risk)
    report = solve_or_raise(builder.build())
    logger.info("Absolute min-variance over %d covariances: %s", len(sigmas), report.status.value)
    return solution_from_report(report, variant, x, lambda w: worst_case_objective(w, U, variant))


def ar_max_return(U: AnySet, X: FeasibleSet, sigma2: float) -> PortfolioSolution:
    """Maximize the worst-case mean subject to a worst-case variance cap."""
    _check_dimensions(U, X)
    variant = MvoVariant.max_return(sigma2)
    sigmas, _ = distinct_matrices(project_sigma(U))
    builder = ProgramBuilder(f"absolute {variant.label}")
    x = add_portfolio(builder, X)
    for sigma in sigmas:
        add_variance_cap(builder, x, sigma, sigma2)
    floor = builder.variable("floor")
    add_mean_floor(builder, x, project_mu(U), floor)
    builder.maximize(floor)
    report = solve_or_raise(builder.build())
    logger.info("Absolute max-return over %d covariances: %s", len(sigmas), report.status.value)
    return solution_from_report(report, variant, x, lambda w: worst_case_objective(w, U, variant))


def ar_risk_adjusted(U: AnySet, X: FeasibleSet, lam: float) -> PortfolioSolution:
    """Maximize min over U of mu^T x - lam x^T sigma x.

    Discrete sets keep (mu, sigma) paired per scenario; the ellipsoid uses its closed-form worst mean.
    """
    _check_dimensions(U, X)
    variant = MvoVariant.risk_adjusted(lam)
    builder = ProgramBuilder(f"absolute {variant.label}")
    x = add_portfolio(builder, X)
    floor = builder.variable("floor")
    if isinstance(U, EllipsoidalMuSet):
        (risk,) = _variance_epigraphs(builder, x, [U.sigma])
        add_mean_floor(builder, x, U.ellipsoid, floor)
        builder.maximize(floor - lam * risk)
    else:
        scenarios = discrete_scenarios(U)
        sigmas, index = distinct_matrices([p.sigma for p in scenarios])
        risks = _variance_epigraphs(builder, x, sigmas)
        for p, j in zip(scenarios, index, strict=True):
            builder.add_nonneg(x.dot(p.mu) - lam * risks[j] - floor)
        builder.maximize(floor)
    report = solve_or_raise(builder.build())
    logger.info("Absolute risk-adjusted (lambda=%g): %s", lam, report.status.value)
    return solution_from_report(report, variant, x, lambda w: worst_case_objective(w, U, variant))


def ar_max_sharpe(U: AnySet, X: FeasibleSet, rf: float = 0.0) -> PortfolioSolution:
    """Maximize the worst-case Sharpe ratio; only sets whose covariance is fixed are supported."""
    _check_dimensions(U, X)
    variant = MvoVariant.max_sharpe(rf)
    sigma = sigma_is_fixed(U)
    if sigma is None:
        raise UnsupportedProblem("robust maximum Sharpe ratio needs a single covariance across the set")
    if not X.has_budget:
        raise UnsupportedProblem("maximum Sharpe ratio needs the budget row e^T x = 1 among the equalities")

    means = project_mu(U)
    if isinstance(means, MuEllipsoid):
        excess: list[np.ndarray] | MuEllipsoid = MuEllipsoid(mu_bar=means.mu_bar - rf, M=means.M)
    else:
        excess = [mu - rf for mu in means]

    builder = ProgramBuilder(f"absolute {variant.label}")
    y, _ = add_portfolio_cone(builder, X)
    add_variance_cap(builder, y, sigma, 1.0, factor=cholesky_upper(sigma))
    floor = builder.variable("floor")
    add_mean_floor(builder, y, excess, floor)
    builder.maximize(floor)
    report = solve_or_raise(builder.build())
    if report.status != SolveStatus.OPTIMAL:
        return PortfolioSolution(status=report.status, variant=variant)

    lifted_value = float(report.objective or 0.0)
    if lifted_value <= 1e-8:
        if not is_nonempty(X):
            return PortfolioSolution(status=SolveStatus.INFEASIBLE, variant=variant)
        raise NotRationalToInvest(f"no portfolio earns a positive worst-case excess return over rf={rf:g}")
    y_val = y.evaluate(report.values)
    x = lift_to_portfolio(y_val)
    return PortfolioSolution(
        status=SolveStatus.OPTIMAL,
        variant=variant,
        x=x,
        objective=worst_case_objective(x, U, variant),
        lifted=y_val,
        lifted_objective=lifted_value,
        timings={"solve": report.solve_time},
    )


def solve_absolute(U: AnySet, X: FeasibleSet, variant: MvoVariant) -> PortfolioSolution:
    """Dispatch a variant to its absolute robust solver."""
    if variant.kind == VariantKind.MIN_VARIANCE:
        return ar_min_variance(U, X, variant.parameter)
    if variant.kind == VariantKind.MAX_RETURN:
        return ar_max_return(U, X, variant.parameter)
    if variant.kind == VariantKind.RISK_ADJUSTED:
        return ar_risk_adjusted(U, X, variant.parameter)
    return ar_max_sharpe(U, X, variant.parameter)
