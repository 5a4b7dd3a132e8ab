"""Minimum-regret portfolios over finite and polytopic uncertainty sets.

Every solver runs in two phases: the hindsight benchmarks z*(p) of all scenarios (independent,
cached, optionally parallel), then one outer conic program minimizing the regret bound gamma.
Polytopic sets are handled through their vertices, where the maximum regret is attained.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Sequence

import numpy as np

from regretfolio.config import settings
from regretfolio.core.cache import benchmark_key, get_cached_value, set_cached_value
from regretfolio.core.classical_mvo import portfolio_objective, solve_variant
from regretfolio.core.conic_program import AffineExpr, ProgramBuilder, quadratic_to_soc
from regretfolio.core.formulation import (
    add_mean_floor,
    add_portfolio,
    add_portfolio_cone,
    add_variance_cap,
    distinct_matrices,
    lift_to_portfolio,
)
from regretfolio.core.market_model import cholesky_upper
from regretfolio.core.parallel import map_solves
from regretfolio.core.solver import solve_or_raise
from regretfolio.core.uncertainty_sets import DiscreteSet, discrete_scenarios, sample_hull, sigma_is_fixed
from regretfolio.models.errors import (
    InfeasibleProblem,
    NonpositiveValueFunction,
    NotRationalToInvest,
    ScenarioExclusionError,
    UnboundedProblem,
    UnsupportedProblem,
)
from regretfolio.models.schemas import (
    Adversary,
    FeasibleSet,
    MarketParams,
    MvoVariant,
    PolytopicSet,
    RegretCertificate,
    SolveReport,
    SolveStatus,
    VariantKind,
)

logger = logging.getLogger(__name__)

_SCALED_FLOOR = 1e-12


# --- Benchmarks z*(p) ---


def _fortuitous_value(p: MarketParams, context: Sequence[MarketParams], X: FeasibleSet, variant: MvoVariant) -> float:
    """Benchmark of an adversary bound by the constraints of every scenario, not only its own."""
    builder = ProgramBuilder(f"fortuitous benchmark {variant.label}")
    y = add_portfolio(builder, X, name="y")
    if variant.kind == VariantKind.MIN_VARIANCE:
        risk = builder.variable("risk")
        builder.add_rotated_second_order(quadratic_to_soc(p.sigma, y, risk))
        if np.isfinite(variant.parameter):
            add_mean_floor(builder, y, [q.mu for q in context], variant.parameter)
        builder.minimize(risk)
    else:
        for sigma in distinct_matrices([q.sigma for q in context])[0]:
            add_variance_cap(builder, y, sigma, variant.parameter)
        builder.maximize(y.dot(p.mu))
    report = solve_or_raise(builder.build())
    if report.status == SolveStatus.INFEASIBLE:
        raise InfeasibleProblem("the robust constraint of the fortuitous adversary admits no portfolio")
    if report.status == SolveStatus.UNBOUNDED:
        raise UnboundedProblem("fortuitous benchmark is unbounded")
    assert report.objective is not None
    return report.objective


def _uses_adversary(variant: MvoVariant) -> bool:
    return variant.kind in (VariantKind.MIN_VARIANCE, VariantKind.MAX_RETURN)


def benchmark_value(
    p: MarketParams,
    variant: MvoVariant,
    X: FeasibleSet,
    adversary: Adversary = Adversary.OMNISCIENT,
    context: Sequence[MarketParams] = (),
    scenario: int | None = None,
) -> float:
    """z*(p) for the variant, served from the benchmark cache when possible."""
    fortuitous = adversary == Adversary.FORTUITOUS and _uses_adversary(variant)
    key = benchmark_key(p, variant, X, adversary if fortuitous else Adversary.OMNISCIENT, context if fortuitous else ())
    cached = get_cached_value(key)
    if cached is not None:
        return cached

    if fortuitous:
        value = _fortuitous_value(p, context, X, variant)
    else:
        solution = solve_variant(p, X, variant)
        if solution.status == SolveStatus.INFEASIBLE:
            if scenario is not None:
                raise ScenarioExclusionError(scenario)
            raise InfeasibleProblem(f"benchmark {variant.label} is infeasible")
        solution.require_optimal()
        assert solution.objective is not None
        value = solution.objective
    set_cached_value(key, value)
    return value


def benchmark_values(
    scenarios: Sequence[MarketParams],
    variant: MvoVariant,
    X: FeasibleSet,
    adversary: Adversary = Adversary.OMNISCIENT,
    context: Sequence[MarketParams] | None = None,
    max_workers: int | None = None,
) -> np.ndarray:
    """z* of every scenario, in scenario order."""
    ctx = list(scenarios) if context is None else list(context)
    indexed = list(enumerate(scenarios))
    values = map_solves(
        lambda item: benchmark_value(item[1], variant, X, adversary, ctx, scenario=item[0]), indexed, max_workers
    )
    return np.array(values, dtype=float)


# --- Regret evaluation ---


def _regret(value: float, benchmark: float, variant: MvoVariant) -> float:
    # MinVariance is a minimization: regret is the excess variance over the benchmark.
    if variant.kind == VariantKind.MIN_VARIANCE:
        return value - benchmark
    return benchmark - value


def evaluate_regret(
    x: np.ndarray,
    p: MarketParams,
    variant: MvoVariant,
    X: FeasibleSet,
    adversary: Adversary = Adversary.OMNISCIENT,
    context: Sequence[MarketParams] = (),
) -> float:
    """r(x, p): loss of x against the best portfolio chosen with hindsight of p."""
    benchmark = benchmark_value(p, variant, X, adversary, context)
    return _regret(portfolio_objective(x, p, variant), benchmark, variant)


def _regret_profile(
    x: np.ndarray,
    scenarios: Sequence[MarketParams],
    variant: MvoVariant,
    X: FeasibleSet,
    adversary: Adversary,
    context: Sequence[MarketParams] | None = None,
    benchmarks: np.ndarray | None = None,
) -> np.ndarray:
    z = benchmark_values(scenarios, variant, X, adversary, context) if benchmarks is None else benchmarks
    values = [portfolio_objective(x, p, variant) for p in scenarios]
    return np.array([_regret(f, zi, variant) for f, zi in zip(values, z, strict=True)])


def scenario_regrets(
    x: np.ndarray,
    U: DiscreteSet,
    variant: MvoVariant,
    X: FeasibleSet,
    adversary: Adversary = Adversary.OMNISCIENT,
) -> np.ndarray:
    """r(x, p) for every scenario (vertex) of U, in order."""
    return _regret_profile(np.asarray(x, dtype=float), discrete_scenarios(U), variant, X, adversary)


def evaluate_max_regret(
    x: np.ndarray,
    U: DiscreteSet,
    variant: MvoVariant,
    X: FeasibleSet,
    adversary: Adversary = Adversary.OMNISCIENT,
) -> tuple[float, int]:
    """R(x) = max over scenarios (vertices) of r(x, p), with the lowest-index maximizer."""
    regrets = scenario_regrets(x, U, variant, X, adversary)
    witness = int(np.argmax(regrets))
    return float(regrets[witness]), witness


def evaluate_scaled_regret(x: np.ndarray, p: MarketParams, variant: MvoVariant, X: FeasibleSet) -> float:
    """Regret relative to the benchmark, (z*(p) - f(x, p)) / z*(p); needs z*(p) > 0."""
    benchmark = benchmark_value(p, variant, X)
    if benchmark <= _SCALED_FLOOR:
        raise NonpositiveValueFunction(f"benchmark value {benchmark:.3e} is not positive")
    return _regret(portfolio_objective(x, p, variant), benchmark, variant) / benchmark


def evaluate_scaled_max_regret(
    x: np.ndarray, U: DiscreteSet, variant: MvoVariant, X: FeasibleSet
) -> tuple[float, int]:
    scaled = np.array([evaluate_scaled_regret(x, p, variant, X) for p in discrete_scenarios(U)])
    witness = int(np.argmax(scaled))
    return float(scaled[witness]), witness


# --- Minimum-regret solvers ---


def _outer_gamma(report: SolveReport, what: str) -> float:
    if report.status == SolveStatus.INFEASIBLE:
        raise InfeasibleProblem(f"{what}: no portfolio satisfies the constraints")
    if report.status == SolveStatus.UNBOUNDED:
        raise UnboundedProblem(f"{what}: regret bound is unbounded below")
    assert report.objective is not None
    return report.objective


def _hull_upper(
    x: np.ndarray, U: DiscreteSet, variant: MvoVariant, X: FeasibleSet, adversary: Adversary, upper: float
) -> float:
    """Confirm the vertex bound on random hull points of a polytope."""
    if not isinstance(U, PolytopicSet) or len(U.vertices) == 1 or settings.hull_check_samples <= 0:
        return upper
    hull = sample_hull(U, settings.hull_check_samples)
    sampled = float(_regret_profile(x, hull, variant, X, adversary, context=U.vertices).max())
    if sampled > upper + 1e-6:
        logger.warning("Hull sample regret %.6g exceeds the vertex bound %.6g", sampled, upper)
    return max(upper, sampled)


def _certificate(
    x: np.ndarray,
    gamma_star: float,
    U: DiscreteSet,
    variant: MvoVariant,
    X: FeasibleSet,
    adversary: Adversary,
    benchmarks: np.ndarray,
    timings: dict[str, float],
) -> RegretCertificate:
    start = time.perf_counter()
    scenarios = discrete_scenarios(U)
    regrets = _regret_profile(x, scenarios, variant, X, adversary, benchmarks=benchmarks)
    witness = int(np.argmax(regrets))
    gamma = max(gamma_star, float(regrets[witness]), 0.0)
    upper = _hull_upper(x, U, variant, X, adversary, gamma)
    timings["verify"] = time.perf_counter() - start
    logger.info("Regret certificate %s: gamma=%.8g, witness scenario %d", variant.label, gamma, witness)
    return RegretCertificate(
        x=x,
        gamma=upper,
        witness=witness,
        witness_mu=scenarios[witness].mu,
        bracket=(min(gamma_star, upper), upper),
        variant=variant,
        adversary=adversary,
        regrets=[float(r) for r in regrets],
        timings=timings,
    )


def _check_dimensions(U: DiscreteSet, X: FeasibleSet) -> list[MarketParams]:
    if U.n != X.n:
        raise ValueError(f"uncertainty set has {U.n} assets but the feasible set has {X.n}")
    return discrete_scenarios(U)


def _add_scenario_risks(builder: ProgramBuilder, x: AffineExpr, scenarios: Sequence[MarketParams]) -> list[AffineExpr]:
    """s_i >= x^T sigma_i x, one epigraph per distinct covariance, indexed by scenario."""
    sigmas, index = distinct_matrices([p.sigma for p in scenarios])
    risks = []
    for j, sigma in enumerate(sigmas):
        s = builder.variable(f"risk_{j}")
        builder.add_rotated_second_order(quadratic_to_soc(sigma, x, s))
        risks.append(s)
    return [risks[j] for j in index]


def minimize_risk_adjusted_regret(
    scenarios: Sequence[MarketParams], benchmarks: np.ndarray, X: FeasibleSet, lam: float
) -> tuple[float, np.ndarray, float]:
    """Outer program given the benchmarks: min gamma s.t. mu_i^T x - lam x^T sigma_i x >= z*_i - gamma.

    Returns (gamma*, x, solve time).
    """
    builder = ProgramBuilder(f"regret risk-adjusted over {len(scenarios)} scenarios")
    x = add_portfolio(builder, X)
    gamma = builder.variable("gamma")
    risks = _add_scenario_risks(builder, x, scenarios)
    for p, zi, risk in zip(scenarios, benchmarks, risks, strict=True):
        builder.add_nonneg(x.dot(p.mu) - lam * risk - float(zi) + gamma)
    builder.minimize(gamma)
    report = solve_or_raise(builder.build())
    gamma_star = _outer_gamma(report, "risk-adjusted regret")
    return gamma_star, x.evaluate(report.values), report.solve_time


def rr_risk_adjusted(U: DiscreteSet, X: FeasibleSet, lam: float) -> RegretCertificate:
    """min gamma s.t. mu_i^T x - lam x^T sigma_i x >= z*_i - gamma for every scenario i."""
    scenarios = _check_dimensions(U, X)
    variant = MvoVariant.risk_adjusted(lam)
    start = time.perf_counter()
    z = benchmark_values(scenarios, variant, X)
    timings = {"benchmarks": time.perf_counter() - start}
    gamma_star, x, timings["outer"] = minimize_risk_adjusted_regret(scenarios, z, X, lam)
    return _certificate(x, gamma_star, U, variant, X, Adversary.OMNISCIENT, z, timings)


def rr_risk_adjusted_scaled(U: DiscreteSet, X: FeasibleSet, lam: float) -> RegretCertificate:
    """Minimize the largest relative regret: f(x, p_i) >= (1 - gamma) z*_i, which needs every z*_i > 0."""
    scenarios = _check_dimensions(U, X)
    variant = MvoVariant.risk_adjusted(lam)
    start = time.perf_counter()
    z = benchmark_values(scenarios, variant, X)
    if np.any(z <= _SCALED_FLOOR):
        worst = int(np.argmin(z))
        raise NonpositiveValueFunction(f"benchmark of scenario {worst} is {z[worst]:.3e}; scaled regret is undefined")
    timings = {"benchmarks": time.perf_counter() - start}

    builder = ProgramBuilder(f"scaled regret {variant.label}")
    x = add_portfolio(builder, X)
    gamma = builder.variable("gamma")
    risks = _add_scenario_risks(builder, x, scenarios)
    for p, zi, risk in zip(scenarios, z, risks, strict=True):
        builder.add_nonneg(x.dot(p.mu) - lam * risk - zi + zi * gamma)
    builder.minimize(gamma)
    report = solve_or_raise(builder.build())
    gamma_star = _outer_gamma(report, "scaled risk-adjusted regret")
    timings["outer"] = report.solve_time

    weights = x.evaluate(report.values)
    scaled = _regret_profile(weights, scenarios, variant, X, Adversary.OMNISCIENT, benchmarks=z) / z
    witness = int(np.argmax(scaled))
    upper = max(gamma_star, float(scaled[witness]), 0.0)
    return RegretCertificate(
        x=weights,
        gamma=upper,
        witness=witness,
        witness_mu=scenarios[witness].mu,
        bracket=(min(gamma_star, upper), upper),
        variant=variant,
        regrets=[float(r) for r in scaled],
        timings=timings,
    )


def rr_min_variance(
    U: DiscreteSet,
    X: FeasibleSet,
    rho: float = float("-inf"),
    adversary: Adversary = Adversary.OMNISCIENT,
) -> RegretCertificate:
    """min gamma s.t. x^T sigma_i x - z*_i <= gamma and mu_i^T x >= rho for every scenario i."""
    scenarios = _check_dimensions(U, X)
    variant = MvoVariant.min_variance(rho)
    start = time.perf_counter()
    z = benchmark_values(scenarios, variant, X, adversary)
    timings = {"benchmarks": time.perf_counter() - start}

    builder = ProgramBuilder(f"regret {variant.label} ({adversary.value})")
    x = add_portfolio(builder, X)
    gamma = builder.variable("gamma")
    risks = _add_scenario_risks(builder, x, scenarios)
    for zi, risk in zip(z, risks, strict=True):
        builder.add_nonneg(gamma - risk + zi)
    if np.isfinite(rho):
        add_mean_floor(builder, x, [p.mu for p in scenarios], rho)
    builder.minimize(gamma)
    report = solve_or_raise(builder.build())
    gamma_star = _outer_gamma(report, "min-variance regret")
    timings["outer"] = report.solve_time
    return _certificate(x.evaluate(report.values), gamma_star, U, variant, X, adversary, z, timings)


def rr_max_return(
    U: DiscreteSet,
    X: FeasibleSet,
    sigma2: float,
    adversary: Adversary = Adversary.OMNISCIENT,
) -> RegretCertificate:
    """min gamma s.t. mu_i^T x >= z*_i - gamma for every i, with x^T sigma_i x <= sigma2 for every i.

    The adversary's portfolio obeys the same kind of cap, y^T sigma y <= sigma2.
    """
    scenarios = _check_dimensions(U, X)
    variant = MvoVariant.max_return(sigma2)
    start = time.perf_counter()
    z = benchmark_values(scenarios, variant, X, adversary)
    timings = {"benchmarks": time.perf_counter() - start}

    builder = ProgramBuilder(f"regret {variant.label} ({adversary.value})")
    x = add_portfolio(builder, X)
    gamma = builder.variable("gamma")
    for sigma in distinct_matrices([p.sigma for p in scenarios])[0]:
        add_variance_cap(builder, x, sigma, sigma2)
    for p, zi in zip(scenarios, z, strict=True):
        builder.add_nonneg(x.dot(p.mu) - zi + gamma)
    builder.minimize(gamma)
    report = solve_or_raise(builder.build())
    gamma_star = _outer_gamma(report, "max-return regret")
    timings["outer"] = report.solve_time
    return _certificate(x.evaluate(report.values), gamma_star, U, variant, X, adversary, z, timings)


def rr_max_sharpe(U: DiscreteSet, X: FeasibleSet, rf: float = 0.0) -> RegretCertificate:
    """Minimum Sharpe-ratio regret through the cone lift, for sets sharing one covariance.

    min gamma s.t. (mu_i - rf e)^T y >= z*_i - gamma, y in R+ X, y^T sigma y <= 1; then x = y / e^T y.
    """
    scenarios = _check_dimensions(U, X)
    variant = MvoVariant.max_sharpe(rf)
    sigma = sigma_is_fixed(U)
    if sigma is None:
        raise UnsupportedProblem("Sharpe-ratio regret needs a single covariance across the set")
    if not X.has_budget:
        raise UnsupportedProblem("maximum Sharpe ratio needs the budget row e^T x = 1 among the equalities")
    start = time.perf_counter()
    z = benchmark_values(scenarios, variant, X)
    timings = {"benchmarks": time.perf_counter() - start}

    builder = ProgramBuilder(f"regret {variant.label}")
    y, _ = add_portfolio_cone(builder, X)
    add_variance_cap(builder, y, sigma, 1.0, factor=cholesky_upper(sigma))
    gamma = builder.variable("gamma")
    for p, zi in zip(scenarios, z, strict=True):
        builder.add_nonneg(y.dot(p.mu - rf) - zi + gamma)
    builder.minimize(gamma)
    report = solve_or_raise(builder.build())
    gamma_star = _outer_gamma(report, "Sharpe-ratio regret")
    timings["outer"] = report.solve_time

    y_val = y.evaluate(report.values)
    if float(np.sum(y_val)) <= 1e-9:
        raise NotRationalToInvest("no invested portfolio lowers the regret below the all-cash bound")
    return _certificate(lift_to_portfolio(y_val), gamma_star, U, variant, X, Adversary.OMNISCIENT, z, timings)


def solve_relative(
    U: DiscreteSet,
    X: FeasibleSet,
    variant: MvoVariant,
    adversary: Adversary = Adversary.OMNISCIENT,
) -> RegretCertificate:
    """Dispatch a variant to its minimum-regret solver."""
    if variant.kind == VariantKind.MIN_VARIANCE:
        return rr_min_variance(U, X, variant.parameter, adversary)
    if variant.kind == VariantKind.MAX_RETURN:
        return rr_max_return(U, X, variant.parameter, adversary)
    if variant.kind == VariantKind.RISK_ADJUSTED:
        return rr_risk_adjusted(U, X, variant.parameter)
    return rr_max_sharpe(U, X, variant.parameter)
