"""Minimum-regret risk-adjusted portfolios under ellipsoidal mean uncertainty.

The exact problem asks for x and gamma such that gamma - f_mu(y) + f_mu(x) >= 0 for every mu in
the ellipsoid and every y in X, with f_mu(y) = mu^T y - lam y^T sigma y. That quadratic in (u, y)
is written as a matrix over the homogenized set and replaced by the inner approximation of
cone_toolkit, which gives a semidefinite program whose (x, gamma) is always feasible (an upper
bound). Sampling the ellipsoid boundary gives a finite relaxation (a lower bound).
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from typing import NamedTuple

import numpy as np

from regretfolio.config import settings
from regretfolio.core.classical_mvo import risk_adjusted_values
from regretfolio.core.cone_toolkit import (
    GeneratorFamily,
    add_generator_variables,
    build_inner_generators,
    certificate_from_values,
    generator_sum,
    generator_values,
    homogenize,
    lambda_reduce,
    reduce_description,
)
from regretfolio.core.conic_program import AffineExpr, ProgramBuilder
from regretfolio.core.formulation import add_portfolio, add_variance_epigraph
from regretfolio.core.relative_robust_scenarios import minimize_risk_adjusted_regret
from regretfolio.core.solver import solve_or_raise
from regretfolio.core.uncertainty_sets import sample_ellipsoid
from regretfolio.models.errors import InfeasibleProblem, UnboundedProblem
from regretfolio.models.schemas import (
    ArrpSolution,
    BracketReport,
    ConicProgram,
    EllipsoidalMuSet,
    FeasibleSet,
    MvoVariant,
    RegretCertificate,
    SolveStatus,
)

logger = logging.getLogger(__name__)


def build_M_x_gamma(
    x: np.ndarray, gamma: float, E: EllipsoidalMuSet, lam: float, s: float | None = None
) -> np.ndarray:
    """Matrix of q(u, y) = gamma - f_mu(y) + f_mu(x) with mu = mu_bar + M u, over z = (u, y, 1).

    s stands in for x^T sigma x; it defaults to the exact value.
    """
    x = np.asarray(x, dtype=float)
    k, n = E.k, E.n
    risk = float(x @ E.sigma @ x) if s is None else float(s)
    d = k + n + 1
    out = np.zeros((d, d))
    Mtx = E.M.T @ x
    out[:k, k : k + n] = -0.5 * E.M.T
    out[k : k + n, :k] = -0.5 * E.M
    out[:k, -1] = 0.5 * Mtx
    out[-1, :k] = 0.5 * Mtx
    out[k : k + n, k : k + n] = lam * E.sigma
    out[k : k + n, -1] = -0.5 * E.mu_bar
    out[-1, k : k + n] = -0.5 * E.mu_bar
    out[-1, -1] = gamma - lam * risk + float(E.mu_bar @ x)
    return out


def _check(E: EllipsoidalMuSet, X: FeasibleSet, lam: float) -> None:
    if E.n != X.n:
        raise ValueError(f"uncertainty set has {E.n} assets but the feasible set has {X.n}")
    if not lam > 0:
        raise ValueError("risk aversion must be positive")


class ArrpProgram(NamedTuple):
    program: ConicProgram
    x: AffineExpr
    family: GeneratorFamily
    residual: Callable[[dict[str, np.ndarray]], np.ndarray]


def arrp_program(E: EllipsoidalMuSet, X: FeasibleSet, lam: float) -> ArrpProgram:
    """Assemble the inner-approximation program without solving it.

    Decision blocks: reduced portfolio w, regret bound gamma, variance epigraph s, and the
    generator weights. The PSD constraint is the reduced regret matrix minus the generators;
    residual maps block values to that matrix.
    """
    _check(E, X, lam)
    k = E.k
    family = build_inner_generators(reduce_description(homogenize(k, X), X))

    builder = ProgramBuilder(f"ellipsoidal regret lambda={lam:g}")
    x = add_portfolio(builder, X)
    gamma = builder.variable("gamma")
    add_variance_epigraph(builder, x, E.sigma, "s")
    generator_blocks, *_ = add_generator_variables(builder, family)
    blocks = (["w"] if X.r else []) + ["gamma", "s", *generator_blocks]

    def _residual(values: dict[str, np.ndarray]) -> np.ndarray:
        point = X.point(values.get("w", np.zeros(0)))
        regret = build_M_x_gamma(point, values["gamma"][0], E, lam, s=values["s"][0])
        eta, xi, soc = generator_values(family, values)
        return lambda_reduce(regret, X, k) - generator_sum(family, eta, xi, soc)

    builder.add_psd(builder.affine_matrix(blocks, _residual), k + X.r + 1)
    builder.minimize(gamma)
    return ArrpProgram(builder.build(), x, family, _residual)


def solve_arrp(E: EllipsoidalMuSet, X: FeasibleSet, lam: float) -> ArrpSolution:
    """Inner approximation of the minimum-regret problem as one semidefinite program."""
    start = time.perf_counter()
    program, x, family, residual = arrp_program(E, X, lam)
    k = E.k
    report = solve_or_raise(program)
    if report.status == SolveStatus.INFEASIBLE:
        raise InfeasibleProblem("the feasible set is empty")
    if report.status == SolveStatus.UNBOUNDED:
        raise UnboundedProblem("ellipsoidal regret program is unbounded")

    values = report.values
    w = values.get("w", np.zeros(0))
    portfolio = x.evaluate(values)
    certificate = certificate_from_values(family, values, residual(values))
    elapsed = time.perf_counter() - start
    logger.info(
        "Inner approximation (n=%d, k=%d, m_g=%d): gamma=%.8g in %.3fs", E.n, k, X.m_g, report.objective, elapsed
    )
    return ArrpSolution(
        status=report.status,
        w=w,
        x=portfolio,
        gamma=float(report.objective or 0.0),
        s=float(values["s"][0]),
        certificate=certificate,
        timings={"solve": report.solve_time, "total": elapsed},
    )


def _sampled_regrets(
    x: np.ndarray, mus: np.ndarray, E: EllipsoidalMuSet, lam: float, benchmarks: np.ndarray
) -> np.ndarray:
    own = mus @ x - lam * float(x @ E.sigma @ x)
    return benchmarks - own


def _sample_points(E: EllipsoidalMuSet, count: int, seed: int | None, include_center: bool) -> np.ndarray:
    mus = sample_ellipsoid(E, count, seed)
    if include_center:
        mus = np.vstack([E.mu_bar, mus])
    return mus


def evaluate_max_regret_ellipsoidal(
    x: np.ndarray,
    E: EllipsoidalMuSet,
    lam: float,
    X: FeasibleSet,
    samples: int | None = None,
    seed: int | None = None,
    include_center: bool = False,
) -> tuple[float, np.ndarray]:
    """Largest regret of x over sampled boundary means: a lower bound on its true maximum regret."""
    _check(E, X, lam)
    x = np.asarray(x, dtype=float)
    mus = _sample_points(E, samples or settings.default_samples, seed, include_center)
    z = risk_adjusted_values(mus, E.sigma, lam, X)
    regrets = _sampled_regrets(x, mus, E, lam, z)
    worst = int(np.argmax(regrets))
    return float(regrets[worst]), mus[worst].copy()


def bracket_regret(
    E: EllipsoidalMuSet,
    X: FeasibleSet,
    lam: float,
    sample_count: int | None = None,
    seed: int | None = None,
    arrp: ArrpSolution | None = None,
) -> BracketReport:
    """Bounds on the optimal maximum regret.

    upper is the inner-approximation optimum (achieved by x_inner); lower is the minimum regret
    over the finite set of sampled boundary means (achieved by x_outer on that finite set).
    """
    _check(E, X, lam)
    count = settings.default_samples if sample_count is None else sample_count
    if count < E.k + 1:
        raise ValueError(f"sample_count must be at least k + 1 = {E.k + 1}")
    start = time.perf_counter()
    inner = arrp if arrp is not None else solve_arrp(E, X, lam)
    inner_time = time.perf_counter() - start

    start = time.perf_counter()
    mus = sample_ellipsoid(E, count, seed)
    z = risk_adjusted_values(mus, E.sigma, lam, X)
    base = E.nominal
    scenarios = [base.with_mu(mu) for mu in mus]
    lower, x_outer, _ = minimize_risk_adjusted_regret(scenarios, z, X, lam)
    outer_time = time.perf_counter() - start

    upper = max(inner.gamma, 0.0)
    if lower > upper + 1e-6:
        logger.warning("Regret bracket inverted: lower %.8g exceeds upper %.8g", lower, upper)
    regrets = _sampled_regrets(inner.x, mus, E, lam, z)
    witness = mus[int(np.argmax(regrets))]
    logger.info("Regret bracket [%.8g, %.8g] from %d samples", lower, upper, count)
    return BracketReport(
        lower=lower,
        upper=upper,
        gap=upper - lower,
        n=E.n,
        k=E.k,
        m_g=X.m_g,
        sample_count=count,
        x_inner=inner.x,
        x_outer=x_outer,
        witness_mu=witness,
        timings={"inner": inner_time, "outer": outer_time},
    )


def refine_bracket(
    E: EllipsoidalMuSet,
    X: FeasibleSet,
    lam: float,
    start: int | None = None,
    rounds: int = 3,
    seed: int | None = None,
    arrp: ArrpSolution | None = None,
) -> list[BracketReport]:
    """Brackets over nested, doubling sample sets; the inner program is solved once."""
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    first = settings.default_samples if start is None else start
    inner = arrp if arrp is not None else solve_arrp(E, X, lam)
    return [bracket_regret(E, X, lam, first * 2**i, seed, arrp=inner) for i in range(rounds)]


def rr_risk_adjusted_ellipsoidal(
    E: EllipsoidalMuSet,
    X: FeasibleSet,
    lam: float,
    sample_count: int | None = None,
    seed: int | None = None,
    rounds: int = 1,
) -> tuple[RegretCertificate, BracketReport]:
    """Inner-approximation portfolio with its certified bound and the sampled bracket.

    With rounds > 1 the sample count doubles each round and the last bracket is reported.
    """
    inner = solve_arrp(E, X, lam)
    bracket = refine_bracket(E, X, lam, sample_count, rounds, seed, arrp=inner)[-1]
    certificate = RegretCertificate(
        x=inner.x,
        gamma=bracket.upper,
        witness_mu=bracket.witness_mu,
        bracket=(bracket.lower, bracket.upper),
        variant=MvoVariant.risk_adjusted(lam),
        timings={**inner.timings, **bracket.timings},
    )
    return certificate, bracket
