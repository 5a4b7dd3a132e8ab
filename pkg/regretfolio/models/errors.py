"""Exception taxonomy. Each error carries the CLI exit code it maps to."""


class RegretfolioError(Exception):
    exit_code: int = 1


class InfeasibleProblem(RegretfolioError):
    exit_code = 2


class ScenarioExclusionError(InfeasibleProblem):
    """A scenario's hindsight problem is infeasible, so its regret is undefined."""

    def __init__(self, scenario: int, message: str | None = None) -> None:
        self.scenario = scenario
        super().__init__(message or f"Scenario {scenario} has an infeasible hindsight problem")


class UnboundedProblem(RegretfolioError):
    exit_code = 3


class NotCertified(RegretfolioError):
    exit_code = 4


class NotRationalToInvest(RegretfolioError):
    exit_code = 4


class NonpositiveValueFunction(RegretfolioError):
    exit_code = 4


class DataFormatError(RegretfolioError):
    exit_code = 5


class UnsupportedProblem(RegretfolioError):
    exit_code = 5


class NotPositiveDefinite(RegretfolioError):
    exit_code = 5


class DegenerateCovariance(NotPositiveDefinite):
    pass


class RankDeficient(RegretfolioError):
    exit_code = 5


class SolverFailure(RegretfolioError):
    exit_code = 6
