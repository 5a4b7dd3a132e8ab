"""Conic backend: solves a ConicProgram with cvxpy and reports status, values, duals and residuals.

ALL optimization in the package goes through ``solve``.
"""

from __future__ import annotations

import logging
import threading
import time
from collections.abc import Callable, Sequence

import cvxpy as cp
import numpy as np

from regretfolio.config import settings
from regretfolio.core.conic_program import cone_violation, tril_indices
from regretfolio.models.errors import SolverFailure
from regretfolio.models.schemas import ConeBlock, ConeTag, ConicProgram, Residuals, SolveReport, SolveStatus

logger = logging.getLogger(__name__)

_STATUS = {
    cp.OPTIMAL: SolveStatus.OPTIMAL,
    cp.OPTIMAL_INACCURATE: SolveStatus.OPTIMAL,
    cp.INFEASIBLE: SolveStatus.INFEASIBLE,
    cp.INFEASIBLE_INACCURATE: SolveStatus.INFEASIBLE,
    cp.UNBOUNDED: SolveStatus.UNBOUNDED,
    cp.UNBOUNDED_INACCURATE: SolveStatus.UNBOUNDED,
}

_ITERATION_OPTION = {"CLARABEL": "max_iter", "SCS": "max_iters", "ECOS": "max_iters"}

DualGetter = Callable[[], np.ndarray | None]


def _flatten(value: object) -> np.ndarray | None:
    if value is None:
        return None
    if isinstance(value, list | tuple):
        parts = [np.atleast_1d(np.asarray(p, dtype=float)).reshape(-1) for p in value]
        return np.concatenate(parts) if parts else np.zeros(0)
    return np.atleast_1d(np.asarray(value, dtype=float)).reshape(-1)


def _rotated_lift(dim: int) -> np.ndarray:
    """Linear map (a, b, r) -> (a + b, a - b, sqrt(2) r) taking the rotated cone onto the standard one."""
    T = np.zeros((dim, dim))
    T[0, :2] = [1.0, 1.0]
    T[1, :2] = [1.0, -1.0]
    T[2:, 2:] = np.sqrt(2.0) * np.eye(dim - 2)
    return T


def _cone_constraints(cone: ConeBlock, v: cp.Variable) -> tuple[list[cp.Constraint], DualGetter]:
    if cone.tag == ConeTag.NONNEG or (cone.tag == ConeTag.SECOND_ORDER and cone.dim == 1):
        con = cone.G @ v + cone.h >= 0
        return [con], lambda: _flatten(con.dual_value)

    if cone.tag == ConeTag.SECOND_ORDER:
        expr = cone.G @ v + cone.h
        soc = cp.SOC(expr[0], expr[1:])
        return [soc], lambda: _flatten(soc.dual_value)

    if cone.tag == ConeTag.ROTATED_SECOND_ORDER:
        T = _rotated_lift(cone.dim)
        lifted = (T @ cone.G) @ v + T @ cone.h
        soc = cp.SOC(lifted[0], lifted[1:])

        def _rotated_dual() -> np.ndarray | None:
            z = _flatten(soc.dual_value)
            return None if z is None else T.T @ z

        return [soc], _rotated_dual

    dim = cone.dim
    rows, cols = tril_indices(dim)
    scatter = np.zeros((dim * dim, rows.size))
    # Column-major positions of (row, col) and its mirror.
    scatter[rows + cols * dim, np.arange(rows.size)] = 1.0
    scatter[cols + rows * dim, np.arange(rows.size)] = 1.0
    Z = cp.Variable((dim, dim), symmetric=True)
    link = cp.reshape(scatter @ (cone.G @ v + cone.h), (dim, dim), order="F") == Z
    psd = Z >> 0
    weights = np.where(rows == cols, 1.0, 2.0)

    def _psd_dual() -> np.ndarray | None:
        W = psd.dual_value
        return None if W is None else weights * np.asarray(W, dtype=float)[rows, cols]

    return [link, psd], _psd_dual


def _same_constraints(a: ConicProgram, b: ConicProgram) -> bool:
    if a.num_vars != b.num_vars or a.maximize != b.maximize or len(a.cones) != len(b.cones):
        return False
    if not (np.array_equal(a.A, b.A) and np.array_equal(a.b, b.b)):
        return False
    return all(
        x.tag == y.tag and x.dim == y.dim and np.array_equal(x.G, y.G) and np.array_equal(x.h, y.h)
        for x, y in zip(a.cones, b.cones, strict=True)
    )


class CvxpyBackend:
    """Translates the IR into cvxpy problems; solve_batch reuses one compiled problem across objectives."""

    def __init__(self, solvers: list[str] | None = None, max_iters: int | None = None) -> None:
        self.solvers = solvers or settings.solver_chain
        self.max_iters = max_iters or settings.solver_max_iters

    def _compile(
        self, program: ConicProgram, parametric: bool = False
    ) -> tuple[cp.Problem, cp.Variable, list[DualGetter], cp.Parameter | None]:
        v = cp.Variable(program.num_vars)
        constraints: list[cp.Constraint] = []
        if program.A.shape[0]:
            constraints.append(program.A @ v == program.b)
        getters: list[DualGetter] = []
        for cone in program.cones:
            cons, getter = _cone_constraints(cone, v)
            constraints.extend(cons)
            getters.append(getter)
        if not parametric:
            return cp.Problem(cp.Minimize(program.c @ v + program.offset), constraints), v, getters, None
        # The offset never changes the minimizer; _optimal_report adds it back per program.
        cost = cp.Parameter(program.num_vars)
        return cp.Problem(cp.Minimize(cost @ v), constraints), v, getters, cost

    def solve(self, program: ConicProgram) -> SolveReport:
        problem, v, getters, _ = self._compile(program)
        return self._run(program, problem, v, getters)

    def solve_batch(self, programs: Sequence[ConicProgram]) -> list[SolveReport]:
        """Solve programs that differ only in their objective, compiling the cvxpy problem once."""
        if not programs:
            return []
        first = programs[0]
        for other in programs[1:]:
            if not _same_constraints(first, other):
                raise ValueError(f"{other.name}: batched programs must share variables and constraints")
        problem, v, getters, cost = self._compile(first, parametric=True)
        assert cost is not None
        reports = []
        for program in programs:
            cost.value = program.c
            reports.append(self._run(program, problem, v, getters))
        logger.debug("%s: batch of %d solves", first.name, len(programs))
        return reports

    def _run(
        self, program: ConicProgram, problem: cp.Problem, v: cp.Variable, getters: list[DualGetter]
    ) -> SolveReport:
        report: SolveReport | None = None
        start = time.perf_counter()
        for name in self.solvers:
            opts = {_ITERATION_OPTION[name]: self.max_iters} if name in _ITERATION_OPTION else {}
            try:
                problem.solve(solver=name, **opts)
            except cp.error.SolverError as exc:
                logger.warning("Solver %s failed on %s: %s", name, program.name, exc)
                continue
            report = self._report(program, problem, v, getters, name, time.perf_counter() - start)
            if report.status != SolveStatus.SOLVER_FAILURE:
                return report
            logger.warning("Solver %s on %s: %s", name, program.name, report.message)

        if report is None:
            return SolveReport(
                status=SolveStatus.SOLVER_FAILURE,
                solve_time=time.perf_counter() - start,
                message=f"every solver in {self.solvers} raised an error",
            )
        return report

    def _report(
        self,
        program: ConicProgram,
        problem: cp.Problem,
        v: cp.Variable,
        getters: list[DualGetter],
        solver: str,
        elapsed: float,
    ) -> SolveReport:
        if problem.status not in _STATUS:
            return SolveReport(
                status=SolveStatus.SOLVER_FAILURE,
                solver=solver,
                solve_time=elapsed,
                message=f"unusable status {problem.status}",
            )
        status = _STATUS[problem.status]
        if status != SolveStatus.OPTIMAL or v.value is None:
            logger.debug("%s: %s via %s in %.3fs", program.name, status.value, solver, elapsed)
            return SolveReport(status=status, solver=solver, solve_time=elapsed, message=str(problem.status))

        report = self._optimal_report(program, np.asarray(v.value, dtype=float), getters, solver, elapsed)
        if report.status == SolveStatus.OPTIMAL and problem.status == cp.OPTIMAL_INACCURATE:
            logger.info("%s: accepted inaccurate solution within tolerance", program.name)
        return report

    def _optimal_report(
        self,
        program: ConicProgram,
        values: np.ndarray,
        getters: list[DualGetter],
        solver: str,
        elapsed: float,
    ) -> SolveReport:
        data_scale = 1.0 + max(
            float(np.abs(program.b).max(initial=0.0)),
            max((float(np.abs(c.h).max(initial=0.0)) for c in program.cones), default=0.0),
        )
        violations = [float(np.abs(program.A @ values - program.b).max(initial=0.0))]
        violations += [cone_violation(c.tag, c.dim, c.G @ values + c.h) for c in program.cones]
        primal_residual = max(violations) / data_scale
        primal_objective = float(program.c @ values + program.offset)

        duals = [getter() for getter in getters]
        dual_eq: np.ndarray | None = None
        dual_objective: float | None = None
        dual_residual: float | None = None
        gap: float | None = None
        if all(z is not None for z in duals):
            cone_duals = [z for z in duals if z is not None]
            stationarity = program.c.copy()
            for cone, z in zip(program.cones, cone_duals, strict=True):
                stationarity -= cone.G.T @ z
            if program.A.shape[0]:
                dual_eq, *_ = np.linalg.lstsq(program.A.T, stationarity, rcond=None)
                stationarity = stationarity - program.A.T @ dual_eq
            c_scale = 1.0 + float(np.abs(program.c).max(initial=0.0))
            dual_residual = float(np.abs(stationarity).max(initial=0.0)) / c_scale
            dual_min = float(program.b @ dual_eq) if dual_eq is not None else 0.0
            dual_min -= sum(float(c.h @ z) for c, z in zip(program.cones, cone_duals, strict=True))
            dual_min += program.offset
            gap = abs(primal_objective - dual_min) / (1.0 + abs(primal_objective))
            dual_objective = -dual_min if program.maximize else dual_min
        else:
            cone_duals = []

        status = SolveStatus.OPTIMAL
        message = ""
        if primal_residual > settings.primal_tolerance:
            status = SolveStatus.SOLVER_FAILURE
            message = f"primal residual {primal_residual:.3e} exceeds {settings.primal_tolerance:.1e}"
        elif gap is not None and gap > settings.gap_tolerance:
            status = SolveStatus.SOLVER_FAILURE
            message = f"duality gap {gap:.3e} exceeds {settings.gap_tolerance:.1e}"

        objective = -primal_objective if program.maximize else primal_objective
        logger.debug("%s: optimal %.10g via %s in %.3fs", program.name, objective, solver, elapsed)
        return SolveReport(
            status=status,
            objective=objective if status == SolveStatus.OPTIMAL else None,
            primal=values,
            values={name: values[offset : offset + size] for name, (offset, size) in program.layout.items()},
            dual_equality=dual_eq,
            dual_cones=cone_duals,
            dual_objective=dual_objective,
            residuals=Residuals(primal=primal_residual, dual=dual_residual, gap=gap),
            solver=solver,
            solve_time=elapsed,
            message=message,
        )


_backend: CvxpyBackend | None = None
_backend_lock = threading.Lock()


def get_backend() -> CvxpyBackend:
    """Return the shared backend, creating it from settings on first call."""
    global _backend
    with _backend_lock:
        if _backend is None:
            _backend = CvxpyBackend()
        return _backend


def reset_backend() -> None:
    """Drop the shared backend so the next call re-reads settings."""
    global _backend
    with _backend_lock:
        _backend = None


def solve(program: ConicProgram) -> SolveReport:
    return get_backend().solve(program)


def solve_or_raise(program: ConicProgram) -> SolveReport:
    """Solve and raise SolverFailure on numerical breakdown; other statuses are returned."""
    report = solve(program)
    if report.status == SolveStatus.SOLVER_FAILURE:
        raise SolverFailure(f"{program.name}: {report.message or 'solver failure'}")
    return report


def solve_batch(programs: Sequence[ConicProgram]) -> list[SolveReport]:
    return get_backend().solve_batch(programs)
