"""Program-assembly pieces shared by the classical, robust and regret solvers."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from regretfolio.core.conic_program import AffineExpr, ProgramBuilder, quadratic_to_soc
from regretfolio.core.market_model import cholesky_upper
from regretfolio.models.errors import SolverFailure
from regretfolio.models.schemas import FeasibleSet, MuEllipsoid, MvoVariant, PortfolioSolution, SolveReport, SolveStatus


def add_portfolio(builder: ProgramBuilder, X: FeasibleSet, name: str = "w") -> AffineExpr:
    """x = x_p + H w with the inequality rows of X; F x = f holds by construction."""
    w = builder.variable(name, X.r)
    x = X.x_p + X.H @ w
    if X.m_g:
        builder.add_nonneg(X.g - X.G @ x)
    return x


def add_portfolio_cone(builder: ProgramBuilder, X: FeasibleSet, name: str = "y") -> tuple[AffineExpr, AffineExpr]:
    """(y, t) in the homogenization {F y = f t, G y <= g t, t >= 0}, whose y-part is the cone R+ X."""
    y = builder.variable(name, X.n)
    t = builder.variable(f"{name}_scale")
    if X.m_f:
        builder.add_equality(X.F @ y - X.f.reshape(-1, 1) @ t)
    if X.m_g:
        builder.add_nonneg(X.g.reshape(-1, 1) @ t - X.G @ y)
    builder.add_nonneg(t)
    return y, t


def add_variance_epigraph(
    builder: ProgramBuilder,
    x: AffineExpr,
    sigma: np.ndarray,
    name: str,
    factor: np.ndarray | None = None,
) -> AffineExpr:
    """New variable s with s >= x^T sigma x."""
    s = builder.variable(name)
    builder.add_rotated_second_order(quadratic_to_soc(sigma, x, s, factor=factor))
    return s


def add_variance_cap(
    builder: ProgramBuilder,
    x: AffineExpr,
    sigma: np.ndarray,
    cap: float,
    factor: np.ndarray | None = None,
) -> None:
    """x^T sigma x <= cap, as ||U x|| <= sqrt(cap)."""
    U = cholesky_upper(sigma) if factor is None else factor
    builder.add_second_order(AffineExpr.stack([np.sqrt(cap), U @ x]))


def add_mean_floor(
    builder: ProgramBuilder,
    x: AffineExpr,
    means: Sequence[np.ndarray] | MuEllipsoid,
    floor: AffineExpr | float,
) -> None:
    """mu^T x >= floor for every mu in a list, or for every mu in an ellipsoid."""
    if isinstance(means, MuEllipsoid):
        builder.add_second_order(AffineExpr.stack([x.dot(means.mu_bar) - floor, means.M.T @ x]))
        return
    for mu in means:
        builder.add_nonneg(x.dot(mu) - floor)


def distinct_matrices(matrices: Sequence[np.ndarray]) -> tuple[list[np.ndarray], list[int]]:
    """Deduplicate matrices; returns the distinct ones and, per input, the index of its representative."""
    distinct: list[np.ndarray] = []
    index: list[int] = []
    for mat in matrices:
        for j, seen in enumerate(distinct):
            if seen.shape == mat.shape and np.array_equal(seen, mat):
                index.append(j)
                break
        else:
            distinct.append(mat)
            index.append(len(distinct) - 1)
    return distinct, index


def solution_from_report(
    report: SolveReport,
    variant: MvoVariant,
    x: AffineExpr,
    objective: Callable[[np.ndarray], float],
) -> PortfolioSolution:
    """PortfolioSolution for a report, with the objective evaluated at the returned weights."""
    if report.status != SolveStatus.OPTIMAL:
        return PortfolioSolution(status=report.status, variant=variant, timings={"solve": report.solve_time})
    weights = x.evaluate(report.values)
    return PortfolioSolution(
        status=SolveStatus.OPTIMAL,
        variant=variant,
        x=weights,
        objective=objective(weights),
        timings={"solve": report.solve_time},
    )


def lift_to_portfolio(y: np.ndarray) -> np.ndarray:
    """Map a direction y of the cone R+ X back to x = y / e^T y."""
    invested = float(np.sum(y))
    if invested <= 1e-12:
        raise SolverFailure("Sharpe lift returned a direction with no invested budget")
    return y / invested
