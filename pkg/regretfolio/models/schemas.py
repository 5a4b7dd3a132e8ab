"""ALL Pydantic models and enums for regretfolio."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Annotated, Any, Literal

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_validator,
    model_validator,
)

from regretfolio.models.errors import InfeasibleProblem, SolverFailure, UnboundedProblem

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:  # Python 3.10 compatibility: mirror enum.StrEnum's str()/format() behavior.
    from enum import Enum

    class StrEnum(str, Enum):
        def __str__(self) -> str:
            return str(self.value)

        def __format__(self, format_spec: str) -> str:
            return str(self.value).__format__(format_spec)

        @staticmethod
        def _generate_next_value_(name: str, start: int, count: int, last_values: list[Any]) -> str:
            return name.lower()


def _to_float_array(value: Any) -> np.ndarray:
    """Copy into a read-only float array; shared model arrays must not be mutated in place."""
    if value is None:
        raise ValueError("expected a numeric array, got None")
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"not a numeric array: {exc}") from exc
    arr.setflags(write=False)
    return arr


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_to_float_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list, when_used="json"),
]


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, ser_json_inf_nan="constants")


# --- Enums ---


class SolveStatus(StrEnum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    SOLVER_FAILURE = "solver_failure"


class VariantKind(StrEnum):
    MIN_VARIANCE = "min_variance"
    MAX_RETURN = "max_return"
    RISK_ADJUSTED = "risk_adjusted"
    MAX_SHARPE = "max_sharpe"


class Adversary(StrEnum):
    OMNISCIENT = "omniscient"
    FORTUITOUS = "fortuitous"


class ConeTag(StrEnum):
    NONNEG = "nonneg"
    SECOND_ORDER = "soc"
    ROTATED_SECOND_ORDER = "rsoc"
    PSD = "psd"


class Mode(StrEnum):
    CLASSICAL = "classical"
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


# --- Market data ---


class MarketParams(_Frozen):
    mu: FloatArray
    sigma: FloatArray

    @field_validator("mu")
    @classmethod
    def _check_mu(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 1 or v.size == 0:
            raise ValueError("mu must be a nonempty vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("mu must be finite")
        return v

    @field_validator("sigma")
    @classmethod
    def _symmetrize_sigma(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("sigma must be a square matrix")
        if not np.all(np.isfinite(v)):
            raise ValueError("sigma must be finite")
        scale = max(1.0, float(np.abs(v).max(initial=0.0)))
        if float(np.abs(v - v.T).max(initial=0.0)) > 1e-12 * scale:
            raise ValueError("sigma must be symmetric")
        return _to_float_array((v + v.T) / 2.0)

    @model_validator(mode="after")
    def _check_positive_definite(self) -> MarketParams:
        if self.sigma.shape != (self.mu.size, self.mu.size):
            raise ValueError(f"sigma shape {self.sigma.shape} does not match mu length {self.mu.size}")
        # Raises NotPositiveDefinite, which pydantic lets through unwrapped.
        from regretfolio.core.market_model import cholesky_upper

        cholesky_upper(self.sigma)
        return self

    @property
    def n(self) -> int:
        return int(self.mu.size)

    def with_mu(self, mu: np.ndarray) -> MarketParams:
        """Same covariance, new mean. Skips the Cholesky re-check since sigma is unchanged."""
        arr = _to_float_array(mu)
        if arr.shape != self.mu.shape:
            raise ValueError(f"mu shape {arr.shape} does not match {self.mu.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("mu must be finite")
        return MarketParams.model_construct(mu=arr, sigma=self.sigma)


class ReturnsSample(_Frozen):
    returns: FloatArray
    labels: list[str]

    @model_validator(mode="after")
    def _check(self) -> ReturnsSample:
        if self.returns.ndim != 2:
            raise ValueError("returns must be a T x n matrix")
        if self.returns.shape[0] < 2:
            raise ValueError(f"need at least 2 periods, got {self.returns.shape[0]}")
        if not np.all(np.isfinite(self.returns)):
            raise ValueError("returns contain non-finite entries")
        if len(self.labels) != self.returns.shape[1]:
            raise ValueError("one label per asset column is required")
        return self


class FeasibleSet(_Frozen):
    F: FloatArray
    f: FloatArray
    G: FloatArray
    g: FloatArray
    x_p: FloatArray
    H: FloatArray

    @model_validator(mode="before")
    @classmethod
    def _shape_empty_blocks(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "x_p" not in data:
            return data
        n = np.asarray(data["x_p"], dtype=float).size
        data = dict(data)
        for key, shape in (("F", (0, n)), ("G", (0, n)), ("H", (n, 0)), ("f", (0,)), ("g", (0,))):
            if np.asarray(data.get(key, []), dtype=float).size == 0:
                data[key] = np.zeros(shape)
        return data

    @model_validator(mode="after")
    def _check(self) -> FeasibleSet:
        n = self.x_p.size
        if self.F.ndim != 2 or self.F.shape[1] != n or self.f.shape != (self.F.shape[0],):
            raise ValueError("F, f dimensions are inconsistent")
        if self.G.ndim != 2 or self.G.shape[1] != n or self.g.shape != (self.G.shape[0],):
            raise ValueError("G, g dimensions are inconsistent")
        if self.H.shape != (n, n - self.F.shape[0]):
            raise ValueError(f"H must be {n} x {n - self.F.shape[0]}, got {self.H.shape}")
        scale = max(1.0, float(np.abs(self.F).max(initial=0.0)), float(np.abs(self.f).max(initial=0.0)))
        if self.m_f and np.abs(self.F @ self.x_p - self.f).max() > 1e-9 * scale:
            raise ValueError("x_p does not solve F x = f")
        if self.m_f and self.r and np.abs(self.F @ self.H).max() > 1e-9 * scale:
            raise ValueError("H does not span the null space of F")
        return self

    @property
    def n(self) -> int:
        return int(self.x_p.size)

    @property
    def m_f(self) -> int:
        return int(self.F.shape[0])

    @property
    def m_g(self) -> int:
        return int(self.G.shape[0])

    @property
    def r(self) -> int:
        return int(self.H.shape[1])

    @property
    def has_budget(self) -> bool:
        """True when some equality row reads c * (e^T x) = c."""
        for row, rhs in zip(self.F, self.f, strict=True):
            c = row[0]
            if abs(c) > 1e-12 and np.allclose(row, c, atol=1e-12) and abs(rhs - c) <= 1e-12 * max(1.0, abs(c)):
                return True
        return False

    def point(self, w: np.ndarray) -> np.ndarray:
        return self.x_p + self.H @ np.asarray(w, dtype=float)

    def contains(self, x: np.ndarray, tol: float = 1e-8) -> bool:
        x = np.asarray(x, dtype=float)
        if self.m_f and np.abs(self.F @ x - self.f).max() > tol:
            return False
        return not (self.m_g and (self.G @ x - self.g).max() > tol)


# --- Model variants and solutions ---


class MvoVariant(_Frozen):
    kind: VariantKind
    parameter: float

    @model_validator(mode="after")
    def _check(self) -> MvoVariant:
        p = self.parameter
        if self.kind == VariantKind.RISK_ADJUSTED and not (np.isfinite(p) and p > 0):
            raise ValueError("risk aversion lambda must be positive")
        if self.kind == VariantKind.MAX_RETURN and not (np.isfinite(p) and p > 0):
            raise ValueError("risk cap sigma^2 must be positive")
        if self.kind == VariantKind.MAX_SHARPE and not np.isfinite(p):
            raise ValueError("risk-free rate must be finite")
        if self.kind == VariantKind.MIN_VARIANCE and (np.isnan(p) or p == float("inf")):
            raise ValueError("target return must be finite or -inf")
        return self

    @classmethod
    def min_variance(cls, rho: float = float("-inf")) -> MvoVariant:
        return cls(kind=VariantKind.MIN_VARIANCE, parameter=rho)

    @classmethod
    def max_return(cls, sigma2: float) -> MvoVariant:
        return cls(kind=VariantKind.MAX_RETURN, parameter=sigma2)

    @classmethod
    def risk_adjusted(cls, lam: float) -> MvoVariant:
        return cls(kind=VariantKind.RISK_ADJUSTED, parameter=lam)

    @classmethod
    def max_sharpe(cls, rf: float = 0.0) -> MvoVariant:
        return cls(kind=VariantKind.MAX_SHARPE, parameter=rf)

    @property
    def maximizes(self) -> bool:
        return self.kind != VariantKind.MIN_VARIANCE

    @property
    def label(self) -> str:
        names = {
            VariantKind.MIN_VARIANCE: "rho",
            VariantKind.MAX_RETURN: "sigma2",
            VariantKind.RISK_ADJUSTED: "lambda",
            VariantKind.MAX_SHARPE: "rf",
        }
        return f"{self.kind.value}({names[self.kind]}={self.parameter:g})"


class PortfolioSolution(_Frozen):
    status: SolveStatus
    variant: MvoVariant
    x: FloatArray | None = None
    objective: float | None = None
    lifted: FloatArray | None = Field(default=None, description="Optimal y of the homogenized Sharpe lift")
    lifted_objective: float | None = None
    timings: dict[str, float] = Field(default_factory=dict)

    def require_optimal(self) -> PortfolioSolution:
        """Return self when Optimal, otherwise raise the error matching the status."""
        if self.status == SolveStatus.OPTIMAL:
            return self
        if self.status == SolveStatus.INFEASIBLE:
            raise InfeasibleProblem(f"{self.variant.label} is infeasible")
        if self.status == SolveStatus.UNBOUNDED:
            raise UnboundedProblem(f"{self.variant.label} is unbounded")
        raise SolverFailure(f"{self.variant.label} failed to solve")

    @property
    def weights(self) -> np.ndarray:
        if self.x is None:
            raise ValueError(f"no weights for status {self.status.value}")
        return self.x


class FrontierPoint(_Frozen):
    rho: float
    risk: float | None = None
    ret: float | None = None
    status: SolveStatus


# --- Uncertainty sets ---


def _common_dimension(params: list[MarketParams]) -> int:
    dims = {p.n for p in params}
    if len(dims) != 1:
        raise ValueError(f"scenarios disagree on dimension: {sorted(dims)}")
    return dims.pop()


class FiniteSet(_Frozen):
    kind: Literal["finite"] = "finite"
    scenarios: list[MarketParams] = Field(min_length=1)

    @model_validator(mode="after")
    def _check(self) -> FiniteSet:
        _common_dimension(self.scenarios)
        return self

    @property
    def n(self) -> int:
        return self.scenarios[0].n


class PolytopicSet(_Frozen):
    kind: Literal["polytopic"] = "polytopic"
    vertices: list[MarketParams] = Field(min_length=1)

    @model_validator(mode="after")
    def _check(self) -> PolytopicSet:
        _common_dimension(self.vertices)
        return self

    @property
    def n(self) -> int:
        return self.vertices[0].n


class MuEllipsoid(_Frozen):
    """The set {mu_bar + M u : ||u|| <= 1}."""

    mu_bar: FloatArray
    M: FloatArray

    @property
    def k(self) -> int:
        return int(self.M.shape[1])

    def contains(self, mu: np.ndarray, tol: float = 1e-10) -> bool:
        d = np.asarray(mu, dtype=float) - self.mu_bar
        u = np.linalg.pinv(self.M) @ d
        return bool(np.linalg.norm(u) <= 1.0 + tol and np.allclose(self.M @ u, d, atol=1e-8))


class EllipsoidalMuSet(_Frozen):
    kind: Literal["ellipsoidal"] = "ellipsoidal"
    mu_bar: FloatArray
    M: FloatArray
    sigma: FloatArray

    @model_validator(mode="after")
    def _check(self) -> EllipsoidalMuSet:
        n = self.mu_bar.size
        if self.mu_bar.ndim != 1 or n == 0:
            raise ValueError("mu_bar must be a nonempty vector")
        if self.M.ndim != 2 or self.M.shape[0] != n or not 1 <= self.M.shape[1] <= n:
            raise ValueError(f"M must be {n} x k with 1 <= k <= {n}, got {self.M.shape}")
        # A zero M is the zero-radius ellipsoid {mu_bar}; otherwise full column rank.
        if np.any(self.M) and np.linalg.matrix_rank(self.M) < self.M.shape[1]:
            raise ValueError("M must have full column rank")
        MarketParams(mu=self.mu_bar, sigma=self.sigma)
        return self

    @property
    def n(self) -> int:
        return int(self.mu_bar.size)

    @property
    def k(self) -> int:
        return int(self.M.shape[1])

    @property
    def nominal(self) -> MarketParams:
        return MarketParams(mu=self.mu_bar, sigma=self.sigma)

    @property
    def ellipsoid(self) -> MuEllipsoid:
        return MuEllipsoid(mu_bar=self.mu_bar, M=self.M)


UncertaintySet = Annotated[FiniteSet | PolytopicSet | EllipsoidalMuSet, Field(discriminator="kind")]


# --- Regret certificates ---


class RegretCertificate(_Frozen):
    x: FloatArray
    gamma: float = Field(ge=0.0)
    witness: int | None = Field(default=None, description="Index of the scenario attaining the worst regret")
    witness_mu: FloatArray | None = Field(default=None, description="Mean vector attaining the worst sampled regret")
    bracket: tuple[float, float]
    variant: MvoVariant
    adversary: Adversary = Adversary.OMNISCIENT
    regrets: list[float] = Field(default_factory=list)
    timings: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_bracket(self) -> RegretCertificate:
        lower, upper = self.bracket
        if lower > upper + 1e-6:
            raise ValueError(f"bracket lower {lower} exceeds upper {upper}")
        return self


class RegretEvaluation(_Frozen):
    value: float
    witness: int | None = None
    witness_mu: FloatArray | None = None
    regrets: list[float] = Field(default_factory=list)
    sample_count: int | None = None


# --- Cone toolkit ---


class QuadraticForm(_Frozen):
    """q(x) = x^T A x + 2 b^T x + c."""

    A: FloatArray
    b: FloatArray
    c: float = 0.0

    @model_validator(mode="after")
    def _check(self) -> QuadraticForm:
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be square")
        if self.b.shape != (self.A.shape[0],):
            raise ValueError("b length must match A")
        if float(np.abs(self.A - self.A.T).max(initial=0.0)) > 1e-12 * max(1.0, float(np.abs(self.A).max(initial=0.0))):
            raise ValueError("A must be symmetric")
        return self

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.A @ x + 2.0 * self.b @ x + self.c)


class HomogenizedSetDescription(_Frozen):
    """Conic description of H(D) in coordinates z = (u, y, tau).

    z belongs to the cone when z^T Q z >= 0 for every quadratic block, p^T z >= 0 for every ray,
    and e^T z = 0 for every equality row. rays[0] is the selector of tau.
    """

    ball_dim: int = Field(ge=0)
    quadratic: list[FloatArray]
    rays: list[FloatArray] = Field(min_length=1)
    equalities: list[FloatArray] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> HomogenizedSetDescription:
        d = self.rays[0].size
        selector = np.zeros(d)
        selector[-1] = 1.0
        if not np.array_equal(self.rays[0], selector):
            raise ValueError("rays[0] must select the homogenizing coordinate")
        vectors = [*self.rays, *self.equalities]
        if any(q.shape != (d, d) for q in self.quadratic) or any(v.shape != (d,) for v in vectors):
            raise ValueError("description blocks disagree on dimension")
        return self

    @property
    def dim(self) -> int:
        return int(self.rays[0].size)

    @property
    def m_g(self) -> int:
        return len(self.rays) - 1

    def contains(self, z: np.ndarray, tol: float = 1e-9) -> bool:
        z = np.asarray(z, dtype=float)
        scale = tol * max(1.0, float(z @ z))
        if any(z @ q @ z < -scale for q in self.quadratic):
            return False
        if any(p @ z < -tol * max(1.0, float(np.linalg.norm(z))) for p in self.rays):
            return False
        return all(abs(e @ z) <= tol * max(1.0, float(np.linalg.norm(z))) for e in self.equalities)


class PairWeight(_Frozen):
    i: int
    j: int
    value: float


class SocTerm(_Frozen):
    ray: int
    tau: float
    u: FloatArray


class InnerApproxCertificate(_Frozen):
    """Decomposition of a matrix over the inner-approximation generators."""

    psd_part: FloatArray
    eta: float
    xi: list[PairWeight] = Field(default_factory=list)
    soc_terms: list[SocTerm] = Field(default_factory=list)
    margin: float = Field(description="Smallest eigenvalue bound achieved by psd_part")


class ArrpSolution(_Frozen):
    status: SolveStatus
    w: FloatArray
    x: FloatArray
    gamma: float
    s: float
    certificate: InnerApproxCertificate
    timings: dict[str, float] = Field(default_factory=dict)


class BracketReport(_Frozen):
    lower: float
    upper: float
    gap: float
    n: int
    k: int
    m_g: int
    sample_count: int
    x_inner: FloatArray
    x_outer: FloatArray
    witness_mu: FloatArray | None = None
    timings: dict[str, float] = Field(default_factory=dict)


# --- Conic program IR ---


class ConeBlock(_Frozen):
    """Membership G v + h in a cone. PSD blocks store the lower triangle, column by column."""

    tag: ConeTag
    dim: int = Field(ge=1)
    G: FloatArray
    h: FloatArray

    @model_validator(mode="after")
    def _check(self) -> ConeBlock:
        rows = self.dim * (self.dim + 1) // 2 if self.tag == ConeTag.PSD else self.dim
        if self.G.ndim != 2 or self.G.shape[0] != rows or self.h.shape != (rows,):
            raise ValueError(f"{self.tag.value} block of dim {self.dim} needs {rows} rows")
        if self.tag == ConeTag.ROTATED_SECOND_ORDER and self.dim < 2:
            raise ValueError("rotated second-order cone needs dim >= 2")
        return self


class ConicProgram(_Frozen):
    """minimize c^T v + offset  s.t.  A v = b,  G_i v + h_i in K_i.

    Maximization programs are stored negated with maximize=True so reports can flip the sign back.
    """

    name: str = "program"
    c: FloatArray
    offset: float = 0.0
    maximize: bool = False
    A: FloatArray
    b: FloatArray
    cones: list[ConeBlock] = Field(default_factory=list)
    layout: dict[str, tuple[int, int]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> ConicProgram:
        nv = self.c.size
        if self.A.ndim != 2 or self.A.shape[1] != nv or self.b.shape != (self.A.shape[0],):
            raise ValueError("equality system dimensions are inconsistent")
        if any(cone.G.shape[1] != nv for cone in self.cones):
            raise ValueError("cone block width differs from the variable count")
        return self

    @property
    def num_vars(self) -> int:
        return int(self.c.size)


class Residuals(_Frozen):
    primal: float
    dual: float | None = None
    gap: float | None = None


class SolveReport(_Frozen):
    status: SolveStatus
    objective: float | None = None
    primal: FloatArray | None = None
    values: dict[str, FloatArray] = Field(default_factory=dict)
    dual_equality: FloatArray | None = None
    dual_cones: list[FloatArray] = Field(default_factory=list)
    dual_objective: float | None = None
    residuals: Residuals = Field(default_factory=lambda: Residuals(primal=float("nan")))
    solver: str = ""
    solve_time: float = 0.0
    message: str = ""

    def value(self, name: str) -> np.ndarray:
        if name not in self.values:
            raise KeyError(f"no variable block named {name!r} (status {self.status.value})")
        return self.values[name]


# --- CLI ---


class ComparisonRow(_Frozen):
    mode: Mode
    status: SolveStatus
    x: FloatArray | None = None
    objective: float | None = None
    worst_case_objective: float | None = None
    max_regret: float | None = None


class RunConfig(_Frozen):
    returns: Path | None = None
    params: Path | None = None
    feasible_set: Path | None = None
    uncertainty: Path | None = None
    mode: Mode = Mode.CLASSICAL
    variant: VariantKind = VariantKind.RISK_ADJUSTED
    lam: float | None = None
    rho: float | None = None
    sigma2: float | None = None
    rf: float | None = None
    adversary: Adversary = Adversary.OMNISCIENT
    shrinkage: float = Field(default=0.0, ge=0.0, le=1.0)
    samples: int | None = Field(default=None, ge=1)
    seed: int | None = None
    threads: int | None = Field(default=None, ge=1)
    out: Path | None = None
    scaled: bool = False
    refine: int = Field(default=1, ge=1)
    dump_cbf: Path | None = None

    @model_validator(mode="after")
    def _check(self) -> RunConfig:
        for name in ("returns", "params", "feasible_set", "uncertainty"):
            path = getattr(self, name)
            if path is not None and not path.exists():
                raise ValueError(f"{name} file '{path}' does not exist")
        if self.returns is None and self.params is None and self.uncertainty is None:
            raise ValueError("one of returns, params or uncertainty is required")
        if self.mode != Mode.CLASSICAL and self.uncertainty is None:
            raise ValueError(f"mode {self.mode.value} needs an uncertainty set")
        return self

    def mvo_variant(self) -> MvoVariant:
        if self.variant == VariantKind.RISK_ADJUSTED:
            return MvoVariant.risk_adjusted(self.lam if self.lam is not None else 1.0)
        if self.variant == VariantKind.MAX_SHARPE:
            return MvoVariant.max_sharpe(self.rf if self.rf is not None else 0.0)
        if self.variant == VariantKind.MIN_VARIANCE:
            return MvoVariant.min_variance(self.rho if self.rho is not None else float("-inf"))
        if self.sigma2 is None:
            raise ValueError("variant max_return needs --sigma2")
        return MvoVariant.max_return(self.sigma2)
