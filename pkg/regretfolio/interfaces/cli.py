"""CLI interface for regretfolio: entry point for the regretfolio command."""

import logging
from pathlib import Path
from typing import Any

import numpy as np
import typer
from rich.console import Console
from rich.logging import RichHandler

from regretfolio.config import settings
from regretfolio.models.errors import InfeasibleProblem, RegretfolioError, UnboundedProblem, UnsupportedProblem
from regretfolio.models.schemas import (
    Adversary,
    ComparisonRow,
    EllipsoidalMuSet,
    FeasibleSet,
    MarketParams,
    Mode,
    MvoVariant,
    PortfolioSolution,
    RegretEvaluation,
    RunConfig,
    SolveStatus,
    VariantKind,
)

app = typer.Typer(name="regretfolio", help="Classical, robust and minimum-regret mean-variance portfolios")
console = Console()
logger = logging.getLogger(__name__)

_STATUS_EXIT = {SolveStatus.INFEASIBLE: 2, SolveStatus.UNBOUNDED: 3, SolveStatus.SOLVER_FAILURE: 6}
_PATH_KEYS = ("returns", "params", "feasible_set", "uncertainty", "out", "dump_cbf")


def configure_logging(verbosity: int = 0) -> None:
    """Configure root logger with Rich handler."""
    if verbosity >= 2:
        level = "DEBUG"
    elif verbosity == 1:
        level = "INFO"
    else:
        level = settings.log_level.upper()

    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(message)s",
        handlers=[RichHandler(console=console, show_time=False, show_path=False, markup=True)],
        force=True,
    )


def _fail(message: str, code: int) -> typer.Exit:
    console.print(f"[red]Error: {message}[/red]")
    return typer.Exit(code=code)


def load_run_config(config: Path | None, **overrides: Any) -> RunConfig:
    """Merge a JSON run configuration with command-line overrides.

    Paths inside the file are resolved against the file's directory; flags given on the command
    line win over the file.
    """
    from regretfolio.core.market_model import read_json

    data: dict[str, Any] = {}
    if config is not None:
        data = read_json(config)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        for key in _PATH_KEYS:
            if data.get(key) is not None and not Path(data[key]).is_absolute():
                data[key] = str(config.parent / data[key])
    data.update({key: value for key, value in overrides.items() if value is not None})
    return RunConfig.model_validate(data)


class _Problem:
    """Inputs of one run, loaded from a RunConfig."""

    def __init__(self, run: RunConfig) -> None:
        from regretfolio.core.market_model import estimate_params, load_params, load_returns_csv
        from regretfolio.core.uncertainty_sets import load_uncertainty_set

        self.run = run
        self.labels: list[str] | None = None
        self.params: MarketParams | None = None
        if run.params is not None:
            self.params = load_params(run.params)
        elif run.returns is not None:
            sample = load_returns_csv(run.returns)
            self.labels = sample.labels
            self.params = estimate_params(sample, run.shrinkage)
        self.uncertainty = load_uncertainty_set(run.uncertainty) if run.uncertainty is not None else None
        self.variant = run.mvo_variant()
        self.X = self._feasible_set()

    @property
    def n(self) -> int:
        if self.params is not None:
            return self.params.n
        assert self.uncertainty is not None
        return self.uncertainty.n

    def _feasible_set(self) -> FeasibleSet:
        from regretfolio.core.market_model import load_feasible_set, simplex

        if self.run.feasible_set is None:
            return simplex(self.n)
        return load_feasible_set(self.run.feasible_set, n=self.n)

    def nominal(self) -> MarketParams:
        """Parameters of the classical model: given or estimated, else the center of the uncertainty set."""
        if self.params is not None:
            return self.params
        assert self.uncertainty is not None
        if isinstance(self.uncertainty, EllipsoidalMuSet):
            return self.uncertainty.nominal
        from regretfolio.core.uncertainty_sets import discrete_scenarios

        points = discrete_scenarios(self.uncertainty)
        return MarketParams(
            mu=np.mean([p.mu for p in points], axis=0), sigma=np.mean([p.sigma for p in points], axis=0)
        )


def _apply_runtime(run: RunConfig) -> None:
    if run.threads is not None:
        settings.max_workers = run.threads


def _emit(text: str, out: Path | None) -> None:
    """Write machine output to a file, or to stdout when no file is given."""
    if out is None:
        typer.echo(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + ("" if text.endswith("\n") else "\n"))
    console.print(f"Written to {out}")


def _parse_floats(raw: str, what: str) -> list[float]:
    try:
        values = [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise _fail(f"malformed {what} '{raw}': expected comma-separated numbers", 5) from exc
    if not values:
        raise _fail(f"{what} is empty", 5)
    return values


def _relative_ellipsoidal_variant(variant: MvoVariant) -> None:
    if variant.kind != VariantKind.RISK_ADJUSTED:
        raise UnsupportedProblem("ellipsoidal uncertainty supports minimum regret for the risk-adjusted model only")


def _check_relative_options(run: RunConfig, problem: _Problem) -> None:
    ellipsoidal = isinstance(problem.uncertainty, EllipsoidalMuSet)
    if run.scaled and (ellipsoidal or run.mode != Mode.RELATIVE):
        raise UnsupportedProblem("--scaled needs relative mode with a finite or polytopic set")
    if run.scaled and run.variant != VariantKind.RISK_ADJUSTED:
        raise UnsupportedProblem("scaled minimum regret is available for the risk-adjusted model only")
    if (run.refine > 1 or run.dump_cbf is not None) and not (ellipsoidal and run.mode == Mode.RELATIVE):
        raise UnsupportedProblem("--refine and --dump-cbf need relative mode with an ellipsoidal set")


def _write_arrp_cbf(E: EllipsoidalMuSet, X: FeasibleSet, lam: float, path: Path) -> None:
    from regretfolio.core.conic_program import dump_cbf
    from regretfolio.core.relative_robust_ellipsoidal import arrp_program

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_cbf(arrp_program(E, X, lam).program))
    console.print(f"Program written to {path}")


# --- Commands ---

_VERBOSE = typer.Option(0, "--verbose", "-v", count=True, help="Increase verbosity (-v for INFO, -vv for DEBUG)")
_CONFIG = typer.Option(None, "--config", "-c", help="JSON run configuration")
_MODE = typer.Option(None, "--mode", help="classical, absolute or relative")
_VARIANT = typer.Option(None, "--variant", help="min_variance, max_return, risk_adjusted or max_sharpe")
_LAMBDA = typer.Option(None, "--lambda", help="Risk aversion of the risk-adjusted model")
_RHO = typer.Option(None, "--rho", help="Target return of the min-variance model")
_SIGMA2 = typer.Option(None, "--sigma2", help="Variance cap of the max-return model")
_RF = typer.Option(None, "--rf", help="Risk-free rate of the Sharpe model")
_ADVERSARY = typer.Option(None, "--adversary", help="omniscient or fortuitous")
_SAMPLES = typer.Option(None, "--samples", help="Boundary samples of an ellipsoidal set")
_SEED = typer.Option(None, "--seed", help="Sampling seed")
_THREADS = typer.Option(None, "--threads", help="Workers for independent solves")
_OUT = typer.Option(None, "--out", "-o", help="Output file (stdout when omitted)")
_UNCERTAINTY = typer.Option(None, "--uncertainty", "-u", help="Uncertainty set JSON")
_PARAMS = typer.Option(None, "--params", "-p", help="Market parameters JSON")
_FEASIBLE = typer.Option(None, "--feasible-set", "-x", help="Feasible set JSON (default: long-only simplex)")
_SCALED = typer.Option(None, "--scaled/--unscaled", help="Regret as a fraction of each scenario's best value")
_REFINE = typer.Option(None, "--refine", help="Sample-doubling rounds of the ellipsoidal bracket")
_DUMP_CBF = typer.Option(None, "--dump-cbf", help="Write the ellipsoidal inner-approximation program as CBF")


@app.command()
def estimate(
    returns: Path = typer.Argument(..., help="CSV of periodic returns, one column per asset"),
    shrinkage: float = typer.Option(0.0, "--shrinkage", help="Weight of the diagonal target in [0, 1]"),
    out: Path | None = _OUT,
    verbose: int = _VERBOSE,
) -> None:
    """Estimate mean returns and covariance from a returns CSV."""
    configure_logging(verbose)
    from regretfolio.core.market_model import estimate_params, load_returns_csv
    from regretfolio.core.report import to_json

    if not returns.exists():
        raise _fail(f"Path '{returns}' does not exist", 5)
    try:
        params = estimate_params(load_returns_csv(returns), shrinkage)
    except RegretfolioError as exc:
        raise _fail(str(exc), exc.exit_code) from exc
    except ValueError as exc:
        raise _fail(str(exc), 5) from exc
    _emit(to_json(params), out)


def _solution_exit(solution: PortfolioSolution) -> None:
    if solution.status != SolveStatus.OPTIMAL:
        raise _fail(f"problem is {solution.status.value}", _STATUS_EXIT[solution.status])


@app.command()
def solve(
    config: Path | None = _CONFIG,
    mode: Mode | None = _MODE,
    variant: VariantKind | None = _VARIANT,
    lam: float | None = _LAMBDA,
    rho: float | None = _RHO,
    sigma2: float | None = _SIGMA2,
    rf: float | None = _RF,
    adversary: Adversary | None = _ADVERSARY,
    params: Path | None = _PARAMS,
    uncertainty: Path | None = _UNCERTAINTY,
    feasible_set: Path | None = _FEASIBLE,
    samples: int | None = _SAMPLES,
    seed: int | None = _SEED,
    threads: int | None = _THREADS,
    scaled: bool | None = _SCALED,
    refine: int | None = _REFINE,
    dump_cbf: Path | None = _DUMP_CBF,
    out: Path | None = _OUT,
    verbose: int = _VERBOSE,
) -> None:
    """Solve one model in classical, absolute robust or minimum-regret mode."""
    configure_logging(verbose)
    from regretfolio.core import report

    try:
        run = load_run_config(
            config, mode=mode, variant=variant, lam=lam, rho=rho, sigma2=sigma2, rf=rf, adversary=adversary,
            params=params, uncertainty=uncertainty, feasible_set=feasible_set, samples=samples, seed=seed,
            threads=threads, scaled=scaled, refine=refine, dump_cbf=dump_cbf, out=out,
        )  # fmt: skip
        _apply_runtime(run)
        problem = _Problem(run)
        _check_relative_options(run, problem)
        if run.mode == Mode.CLASSICAL:
            from regretfolio.core.classical_mvo import solve_variant

            solution = solve_variant(problem.nominal(), problem.X, problem.variant)
            report.render_solution(solution, console, problem.labels)
            _emit(report.to_json(solution), run.out)
            _solution_exit(solution)
            return

        assert problem.uncertainty is not None
        if run.mode == Mode.ABSOLUTE:
            from regretfolio.core.absolute_robust import solve_absolute

            solution = solve_absolute(problem.uncertainty, problem.X, problem.variant)
            report.render_solution(solution, console, problem.labels)
            _emit(report.to_json(solution), run.out)
            _solution_exit(solution)
            return

        if isinstance(problem.uncertainty, EllipsoidalMuSet):
            from regretfolio.core.relative_robust_ellipsoidal import rr_risk_adjusted_ellipsoidal

            _relative_ellipsoidal_variant(problem.variant)
            if run.dump_cbf is not None:
                _write_arrp_cbf(problem.uncertainty, problem.X, problem.variant.parameter, run.dump_cbf)
            certificate, bracket = rr_risk_adjusted_ellipsoidal(
                problem.uncertainty, problem.X, problem.variant.parameter, run.samples, run.seed, rounds=run.refine
            )
            report.render_certificate(certificate, console, problem.labels)
            report.render_bracket(bracket, console)
            payload = {"certificate": certificate.model_dump(mode="json"), "bracket": bracket.model_dump(mode="json")}
            _emit(report.dumps(payload), run.out)
            return

        from regretfolio.core.relative_robust_scenarios import rr_risk_adjusted_scaled, solve_relative

        if run.scaled:
            certificate = rr_risk_adjusted_scaled(problem.uncertainty, problem.X, problem.variant.parameter)
        else:
            certificate = solve_relative(problem.uncertainty, problem.X, problem.variant, run.adversary)
        report.render_certificate(certificate, console, problem.labels)
        _emit(report.to_json(certificate), run.out)
    except RegretfolioError as exc:
        raise _fail(str(exc), exc.exit_code) from exc
    except ValueError as exc:
        raise _fail(str(exc), 5) from exc


@app.command()
def frontier(
    grid: str = typer.Option(..., "--grid", help="Comma-separated ascending target returns"),
    config: Path | None = _CONFIG,
    params: Path | None = _PARAMS,
    feasible_set: Path | None = _FEASIBLE,
    threads: int | None = _THREADS,
    out: Path | None = _OUT,
    verbose: int = _VERBOSE,
) -> None:
    """Trace the minimum-variance frontier over a grid of target returns."""
    configure_logging(verbose)
    from regretfolio.core import report
    from regretfolio.core.classical_mvo import efficient_frontier

    rhos = _parse_floats(grid, "grid")
    try:
        run = load_run_config(config, params=params, feasible_set=feasible_set, threads=threads, out=out)
        _apply_runtime(run)
        problem = _Problem(run)
        points = efficient_frontier(problem.nominal(), problem.X, rhos)
    except RegretfolioError as exc:
        raise _fail(str(exc), exc.exit_code) from exc
    except ValueError as exc:
        raise _fail(str(exc), 5) from exc
    report.render_frontier(points, console)
    _emit(report.frontier_csv(points), run.out)


@app.command("regret-eval")
def regret_eval(
    weights: str = typer.Option(..., "--weights", help="Comma-separated portfolio weights"),
    config: Path | None = _CONFIG,
    variant: VariantKind | None = _VARIANT,
    lam: float | None = _LAMBDA,
    rho: float | None = _RHO,
    sigma2: float | None = _SIGMA2,
    rf: float | None = _RF,
    adversary: Adversary | None = _ADVERSARY,
    uncertainty: Path | None = _UNCERTAINTY,
    feasible_set: Path | None = _FEASIBLE,
    samples: int | None = _SAMPLES,
    seed: int | None = _SEED,
    scaled: bool | None = _SCALED,
    out: Path | None = _OUT,
    verbose: int = _VERBOSE,
) -> None:
    """Maximum regret of a given portfolio over an uncertainty set."""
    configure_logging(verbose)
    from regretfolio.core import report

    x = np.array(_parse_floats(weights, "weights"))
    try:
        run = load_run_config(
            config, variant=variant, lam=lam, rho=rho, sigma2=sigma2, rf=rf, adversary=adversary,
            uncertainty=uncertainty, feasible_set=feasible_set, samples=samples, seed=seed, scaled=scaled, out=out,
        )  # fmt: skip
        problem = _Problem(run)
        if problem.uncertainty is None:
            raise _fail("regret evaluation needs an uncertainty set", 5)
        if x.size != problem.n:
            raise _fail(f"expected {problem.n} weights, got {x.size}", 5)
        evaluation = _evaluate_regret(x, problem)
    except RegretfolioError as exc:
        raise _fail(str(exc), exc.exit_code) from exc
    except ValueError as exc:
        raise _fail(str(exc), 5) from exc
    console.print(f"Maximum regret: {evaluation.value:.{settings.output_precision}g}")
    _emit(report.to_json(evaluation), run.out)


def _evaluate_regret(x: np.ndarray, problem: _Problem) -> RegretEvaluation:
    U, run = problem.uncertainty, problem.run
    if isinstance(U, EllipsoidalMuSet):
        if run.scaled:
            raise UnsupportedProblem("scaled regret needs a finite or polytopic set")
        from regretfolio.core.relative_robust_ellipsoidal import evaluate_max_regret_ellipsoidal

        _relative_ellipsoidal_variant(problem.variant)
        count = run.samples or settings.default_samples
        value, mu = evaluate_max_regret_ellipsoidal(
            x, U, problem.variant.parameter, problem.X, count, run.seed, include_center=True
        )
        return RegretEvaluation(value=value, witness_mu=mu, sample_count=count)

    from regretfolio.core.relative_robust_scenarios import evaluate_scaled_max_regret, scenario_regrets

    assert U is not None
    if run.scaled:
        value, witness = evaluate_scaled_max_regret(x, U, problem.variant, problem.X)
        return RegretEvaluation(value=value, witness=witness)
    regrets = scenario_regrets(x, U, problem.variant, problem.X, run.adversary)
    witness = int(np.argmax(regrets))
    return RegretEvaluation(value=float(regrets[witness]), witness=witness, regrets=[float(r) for r in regrets])


def _compare_row(mode: Mode, problem: _Problem) -> ComparisonRow:
    """Solve in one mode, then score the portfolio against the shared set."""
    from regretfolio.core.absolute_robust import solve_absolute, worst_case_objective
    from regretfolio.core.classical_mvo import portfolio_objective, solve_variant

    U, X, variant = problem.uncertainty, problem.X, problem.variant
    assert U is not None
    try:
        if mode == Mode.CLASSICAL:
            x = solve_variant(problem.nominal(), X, variant).require_optimal().weights
        elif mode == Mode.ABSOLUTE:
            x = solve_absolute(U, X, variant).require_optimal().weights
        elif isinstance(U, EllipsoidalMuSet):
            from regretfolio.core.relative_robust_ellipsoidal import rr_risk_adjusted_ellipsoidal

            _relative_ellipsoidal_variant(variant)
            x = rr_risk_adjusted_ellipsoidal(U, X, variant.parameter, problem.run.samples, problem.run.seed)[0].x
        else:
            from regretfolio.core.relative_robust_scenarios import solve_relative

            x = solve_relative(U, X, variant, problem.run.adversary).x
        regret = _evaluate_regret(x, problem).value
    except InfeasibleProblem as exc:
        logger.warning("%s mode: %s", mode.value, exc)
        return ComparisonRow(mode=mode, status=SolveStatus.INFEASIBLE)
    except UnboundedProblem as exc:
        logger.warning("%s mode: %s", mode.value, exc)
        return ComparisonRow(mode=mode, status=SolveStatus.UNBOUNDED)
    except RegretfolioError as exc:
        logger.warning("%s mode: %s", mode.value, exc)
        return ComparisonRow(mode=mode, status=SolveStatus.SOLVER_FAILURE)
    return ComparisonRow(
        mode=mode,
        status=SolveStatus.OPTIMAL,
        x=x,
        objective=portfolio_objective(x, problem.nominal(), variant),
        worst_case_objective=worst_case_objective(x, U, variant),
        max_regret=regret,
    )


@app.command()
def compare(
    config: Path | None = _CONFIG,
    variant: VariantKind | None = _VARIANT,
    lam: float | None = _LAMBDA,
    rho: float | None = _RHO,
    sigma2: float | None = _SIGMA2,
    rf: float | None = _RF,
    adversary: Adversary | None = _ADVERSARY,
    params: Path | None = _PARAMS,
    uncertainty: Path | None = _UNCERTAINTY,
    feasible_set: Path | None = _FEASIBLE,
    samples: int | None = _SAMPLES,
    seed: int | None = _SEED,
    threads: int | None = _THREADS,
    out: Path | None = _OUT,
    verbose: int = _VERBOSE,
) -> None:
    """Solve in all three modes and cross-evaluate the portfolios on the same uncertainty set."""
    configure_logging(verbose)
    from regretfolio.core import report

    try:
        run = load_run_config(
            config, variant=variant, lam=lam, rho=rho, sigma2=sigma2, rf=rf, adversary=adversary, params=params,
            uncertainty=uncertainty, feasible_set=feasible_set, samples=samples, seed=seed, threads=threads, out=out,
        )  # fmt: skip
        _apply_runtime(run)
        problem = _Problem(run)
        if problem.uncertainty is None:
            raise _fail("compare needs an uncertainty set", 5)
        rows = [_compare_row(mode, problem) for mode in (Mode.CLASSICAL, Mode.ABSOLUTE, Mode.RELATIVE)]
    except RegretfolioError as exc:
        raise _fail(str(exc), exc.exit_code) from exc
    except ValueError as exc:
        raise _fail(str(exc), 5) from exc
    report.render_comparison(rows, console)
    _emit(report.comparison_csv(rows, problem.labels), run.out)


_ENV_TEMPLATE = """\
# regretfolio configuration
# Every setting can also be given as an environment variable.

# Conic solver and its fallback (any cvxpy solver name)
# REGRETFOLIO_SOLVER=CLARABEL
# REGRETFOLIO_FALLBACK_SOLVER=SCS

# Workers for independent benchmark solves (default: 1, serial)
# REGRETFOLIO_MAX_WORKERS=1

# Boundary samples and seed for ellipsoidal regret bounds
# REGRETFOLIO_DEFAULT_SAMPLES=1000
# REGRETFOLIO_DEFAULT_SEED=0

# Log level (default: WARNING, use INFO or DEBUG for more output)
# REGRETFOLIO_LOG_LEVEL=WARNING
"""


@app.command()
def init() -> None:
    """Create a .env template file with regretfolio configuration."""
    env_path = Path(".env")
    if env_path.exists():
        console.print("[yellow].env file already exists, not overwriting[/yellow]")
        return

    env_path.write_text(_ENV_TEMPLATE)
    console.print("[green]Created .env template, edit it with your settings[/green]")
