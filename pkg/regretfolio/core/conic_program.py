"""Solver-neutral conic program IR: affine expressions over named variable blocks, and a builder.

Every model in the package is assembled here and handed to the backend in ``core.solver`` as a
``ConicProgram``: minimize c^T v subject to A v = b and affine images G v + h in cones.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Sequence
from pathlib import Path

import numpy as np

from regretfolio.core.market_model import cholesky_upper
from regretfolio.models.schemas import ConeBlock, ConeTag, ConicProgram

logger = logging.getLogger(__name__)


class AffineExpr:
    """Vector-valued affine map  sum_b C_b v_b + const  over named variable blocks."""

    __slots__ = ("terms", "const")
    # Make numpy defer `ndarray @ expr` and `scalar * expr` to our reflected operators.
    __array_ufunc__ = None

    def __init__(self, terms: dict[str, np.ndarray], const: np.ndarray) -> None:
        self.const = np.asarray(const, dtype=float).reshape(-1)
        self.terms = {name: np.asarray(c, dtype=float) for name, c in terms.items()}
        for name, coef in self.terms.items():
            if coef.ndim != 2 or coef.shape[0] != self.const.size:
                raise ValueError(f"coefficient of {name!r} has shape {coef.shape}, expected {self.const.size} rows")

    @classmethod
    def constant(cls, value: float | Sequence[float] | np.ndarray) -> AffineExpr:
        return cls({}, np.atleast_1d(np.asarray(value, dtype=float)))

    @classmethod
    def stack(cls, exprs: Iterable[AffineExpr | float | np.ndarray]) -> AffineExpr:
        parts = [_as_expr(e) for e in exprs]
        total = sum(p.size for p in parts)
        widths: dict[str, int] = {}
        for part in parts:
            for name, coef in part.terms.items():
                if widths.setdefault(name, coef.shape[1]) != coef.shape[1]:
                    raise ValueError(f"block {name!r} used with widths {widths[name]} and {coef.shape[1]}")
        offset = 0
        stacked = {name: np.zeros((total, width)) for name, width in widths.items()}
        for part in parts:
            for name, coef in part.terms.items():
                stacked[name][offset : offset + part.size] = coef
            offset += part.size
        const = np.concatenate([p.const for p in parts]) if parts else np.zeros(0)
        return cls(stacked, const)

    @property
    def size(self) -> int:
        return int(self.const.size)

    def __len__(self) -> int:
        return self.size

    def __add__(self, other: object) -> AffineExpr:
        rhs = _as_expr(other, self.size)
        if rhs.size != self.size:
            raise ValueError(f"size mismatch: {self.size} vs {rhs.size}")
        terms = dict(self.terms)
        for name, coef in rhs.terms.items():
            terms[name] = terms[name] + coef if name in terms else coef
        return AffineExpr(terms, self.const + rhs.const)

    __radd__ = __add__

    def __neg__(self) -> AffineExpr:
        return AffineExpr({name: -c for name, c in self.terms.items()}, -self.const)

    def __sub__(self, other: object) -> AffineExpr:
        return self + (-_as_expr(other, self.size))

    def __rsub__(self, other: object) -> AffineExpr:
        return _as_expr(other, self.size) + (-self)

    def __mul__(self, scalar: float) -> AffineExpr:
        if not np.isscalar(scalar):
            return NotImplemented
        s = float(scalar)
        return AffineExpr({name: s * c for name, c in self.terms.items()}, s * self.const)

    __rmul__ = __mul__

    def __rmatmul__(self, matrix: np.ndarray) -> AffineExpr:
        mat = np.atleast_2d(np.asarray(matrix, dtype=float))
        if mat.shape[1] != self.size:
            raise ValueError(f"cannot apply a {mat.shape} matrix to an expression of size {self.size}")
        return AffineExpr({name: mat @ c for name, c in self.terms.items()}, mat @ self.const)

    def __getitem__(self, index: int | slice | Sequence[int] | np.ndarray) -> AffineExpr:
        rows = np.arange(self.size)[index]
        rows = np.atleast_1d(rows)
        return AffineExpr({name: c[rows] for name, c in self.terms.items()}, self.const[rows])

    def dot(self, vector: np.ndarray) -> AffineExpr:
        return np.asarray(vector, dtype=float).reshape(1, -1) @ self

    def sum(self) -> AffineExpr:
        return np.ones((1, self.size)) @ self

    def evaluate(self, values: dict[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for name, coef in self.terms.items():
            out += coef @ np.asarray(values[name], dtype=float).reshape(-1)
        return out


def _as_expr(value: object, size: int = 1) -> AffineExpr:
    if isinstance(value, AffineExpr):
        return value
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(size, float(arr))
    return AffineExpr.constant(arr)


def tril_indices(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower-triangle (row, col) indices ordered column by column."""
    cols, rows = np.triu_indices(dim)
    return rows, cols


def tril_to_symmetric(vector: np.ndarray, dim: int) -> np.ndarray:
    rows, cols = tril_indices(dim)
    mat = np.zeros((dim, dim))
    mat[rows, cols] = vector
    mat[cols, rows] = vector
    return mat


class ProgramBuilder:
    """Accumulates variables, an objective, equalities and cone memberships."""

    def __init__(self, name: str = "program") -> None:
        self.name = name
        self._blocks: dict[str, int] = {}
        self._objective: AffineExpr | None = None
        self._maximize = False
        self._equalities: list[AffineExpr] = []
        self._cones: list[tuple[ConeTag, int, AffineExpr]] = []

    def variable(self, name: str, size: int = 1) -> AffineExpr:
        if name in self._blocks:
            raise ValueError(f"variable block {name!r} already exists")
        if size < 0:
            raise ValueError("variable size must be nonnegative")
        if size == 0:
            return AffineExpr({}, np.zeros(0))
        self._blocks[name] = size
        return AffineExpr({name: np.eye(size)}, np.zeros(size))

    def minimize(self, expr: AffineExpr) -> None:
        self._set_objective(expr, maximize=False)

    def maximize(self, expr: AffineExpr) -> None:
        self._set_objective(expr, maximize=True)

    def _set_objective(self, expr: AffineExpr, maximize: bool) -> None:
        expr = _as_expr(expr)
        if expr.size != 1:
            raise ValueError("objective must be scalar")
        self._objective = expr
        self._maximize = maximize

    def add_equality(self, expr: AffineExpr) -> None:
        """expr == 0."""
        if expr.size:
            self._equalities.append(expr)

    def add_nonneg(self, expr: AffineExpr) -> None:
        """expr >= 0 elementwise."""
        if expr.size:
            self._cones.append((ConeTag.NONNEG, expr.size, expr))

    def add_second_order(self, expr: AffineExpr) -> None:
        """expr[0] >= ||expr[1:]||."""
        self._cones.append((ConeTag.SECOND_ORDER, expr.size, expr))

    def add_rotated_second_order(self, expr: AffineExpr) -> None:
        """2 expr[0] expr[1] >= ||expr[2:]||^2 with expr[0], expr[1] >= 0."""
        if expr.size < 2:
            raise ValueError("rotated second-order cone needs at least two entries")
        self._cones.append((ConeTag.ROTATED_SECOND_ORDER, expr.size, expr))

    def add_psd(self, matrix: AffineExpr, dim: int) -> None:
        """Symmetric matrix (row-major flattened, dim*dim entries) is positive semidefinite."""
        if matrix.size != dim * dim:
            raise ValueError(f"PSD expression must have {dim * dim} entries, got {matrix.size}")
        rows, cols = tril_indices(dim)
        self._cones.append((ConeTag.PSD, dim, matrix[rows * dim + cols]))

    def affine_matrix(
        self,
        blocks: Sequence[str],
        fn: Callable[[dict[str, np.ndarray]], np.ndarray],
    ) -> AffineExpr:
        """Lift an affine matrix-valued map of the named blocks into an expression.

        fn receives block values and must be affine in them; it is evaluated at zero and at every
        unit vector, so the expression reproduces fn exactly.
        """
        zero = {name: np.zeros(self._blocks[name]) for name in blocks}
        base = np.asarray(fn(zero), dtype=float)
        terms: dict[str, np.ndarray] = {}
        for name in blocks:
            size = self._blocks[name]
            coef = np.empty((base.size, size))
            for j in range(size):
                point = dict(zero)
                unit = np.zeros(size)
                unit[j] = 1.0
                point[name] = unit
                coef[:, j] = (np.asarray(fn(point), dtype=float) - base).reshape(-1)
            terms[name] = coef
        return AffineExpr(terms, base.reshape(-1))

    def _layout(self) -> dict[str, tuple[int, int]]:
        layout: dict[str, tuple[int, int]] = {}
        offset = 0
        for name, size in self._blocks.items():
            layout[name] = (offset, size)
            offset += size
        return layout

    def _dense(self, expr: AffineExpr, layout: dict[str, tuple[int, int]], width: int) -> np.ndarray:
        mat = np.zeros((expr.size, width))
        for name, coef in expr.terms.items():
            if name not in layout:
                raise ValueError(f"expression refers to unknown variable block {name!r}")
            offset, size = layout[name]
            mat[:, offset : offset + size] = coef
        return mat

    def build(self) -> ConicProgram:
        layout = self._layout()
        width = sum(self._blocks.values())
        if width == 0:
            raise ValueError(f"program {self.name!r} has no variables")
        objective = self._objective if self._objective is not None else AffineExpr.constant(0.0)
        sign = -1.0 if self._maximize else 1.0
        c = sign * self._dense(objective, layout, width)[0]
        offset = sign * float(objective.const[0])

        if self._equalities:
            eq = AffineExpr.stack(self._equalities)
            A = self._dense(eq, layout, width)
            b = -eq.const
        else:
            A, b = np.zeros((0, width)), np.zeros(0)

        cones = [
            ConeBlock(tag=tag, dim=dim, G=self._dense(expr, layout, width), h=expr.const)
            for tag, dim, expr in self._cones
        ]
        logger.debug(
            "Built %s: %d variables, %d equalities, %d cone blocks", self.name, width, A.shape[0], len(cones)
        )
        return ConicProgram(
            name=self.name, c=c, offset=offset, maximize=self._maximize, A=A, b=b, cones=cones, layout=layout
        )


def quadratic_to_soc(
    Q: np.ndarray,
    x: AffineExpr,
    bound: AffineExpr | float,
    factor: np.ndarray | None = None,
) -> AffineExpr:
    """Rotated-cone rows equivalent to  x^T Q x <= bound.

    With Q = U^T U the rows are (bound, 1/2, U x): 2 * bound * 1/2 >= ||U x||^2.
    """
    U = cholesky_upper(Q) if factor is None else np.asarray(factor, dtype=float)
    return AffineExpr.stack([_as_expr(bound), 0.5, U @ x])


def cone_violation(tag: ConeTag, dim: int, value: np.ndarray) -> float:
    """Distance-like violation of value in the cone (0 when inside)."""
    value = np.asarray(value, dtype=float)
    if tag == ConeTag.NONNEG:
        return float(max(0.0, -value.min(initial=0.0)))
    if tag == ConeTag.SECOND_ORDER:
        return float(max(0.0, np.linalg.norm(value[1:]) - value[0]))
    if tag == ConeTag.ROTATED_SECOND_ORDER:
        a, b, rest = value[0], value[1], value[2:]
        lifted = np.concatenate([[a + b, a - b], np.sqrt(2.0) * rest])
        return float(max(0.0, np.linalg.norm(lifted[1:]) - lifted[0]))
    eig = np.linalg.eigvalsh(tril_to_symmetric(value, dim))
    return float(max(0.0, -eig.min()))


def dump_cbf(program: ConicProgram) -> str:
    """Render a program in the Conic Benchmark Format (version 3)."""
    nv = program.num_vars
    lines = ["VER", "3", "", "OBJSENSE", "MIN", "", "VAR", f"{nv} 1", f"F {nv}", ""]

    scalar_cones = [c for c in program.cones if c.tag != ConeTag.PSD]
    psd_cones = [c for c in program.cones if c.tag == ConeTag.PSD]
    cbf_names = {ConeTag.NONNEG: "L+", ConeTag.SECOND_ORDER: "Q", ConeTag.ROTATED_SECOND_ORDER: "QR"}
    con_blocks: list[tuple[str, np.ndarray, np.ndarray]] = []
    if program.A.shape[0]:
        con_blocks.append(("L=", program.A, -program.b))
    con_blocks.extend((cbf_names[c.tag], c.G, c.h) for c in scalar_cones)
    total_rows = sum(G.shape[0] for _, G, _ in con_blocks)
    if con_blocks:
        lines += ["CON", f"{total_rows} {len(con_blocks)}"]
        lines += [f"{name} {G.shape[0]}" for name, G, _ in con_blocks]
        lines.append("")

    if psd_cones:
        lines += ["PSDCON", str(len(psd_cones))]
        lines += [str(c.dim) for c in psd_cones]
        lines.append("")

    obj = [(j, v) for j, v in enumerate(program.c) if v != 0.0]
    if obj:
        lines += ["OBJACOORD", str(len(obj))] + [f"{j} {float(v)!r}" for j, v in obj] + [""]
    if program.offset:
        lines += ["OBJBCOORD", repr(program.offset), ""]

    acoord: list[str] = []
    bcoord: list[str] = []
    row0 = 0
    for _, G, h in con_blocks:
        for i, j in zip(*np.nonzero(G), strict=True):
            acoord.append(f"{row0 + i} {j} {float(G[i, j])!r}")
        bcoord.extend(f"{row0 + i} {float(h[i])!r}" for i in np.nonzero(h)[0])
        row0 += G.shape[0]
    if acoord:
        lines += ["ACOORD", str(len(acoord)), *acoord, ""]
    if bcoord:
        lines += ["BCOORD", str(len(bcoord)), *bcoord, ""]

    hcoord: list[str] = []
    dcoord: list[str] = []
    for idx, cone in enumerate(psd_cones):
        rows, cols = tril_indices(cone.dim)
        for t, j in zip(*np.nonzero(cone.G), strict=True):
            hcoord.append(f"{idx} {j} {rows[t]} {cols[t]} {float(cone.G[t, j])!r}")
        dcoord.extend(f"{idx} {rows[t]} {cols[t]} {float(cone.h[t])!r}" for t in np.nonzero(cone.h)[0])
    if hcoord:
        lines += ["HCOORD", str(len(hcoord)), *hcoord, ""]
    if dcoord:
        lines += ["DCOORD", str(len(dcoord)), *dcoord, ""]
    return "\n".join(lines)


def write_cbf(program: ConicProgram, path: str | Path) -> Path:
    out = Path(path)
    out.write_text(dump_cbf(program))
    logger.info("Wrote %s to %s", program.name, out)
    return out
