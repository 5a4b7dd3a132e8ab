"""Market parameters, return-data estimation and feasible-set algebra."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.linalg
from pydantic import ValidationError

from regretfolio.models.errors import (
    DataFormatError,
    DegenerateCovariance,
    InfeasibleProblem,
    NotPositiveDefinite,
    RankDeficient,
)
from regretfolio.models.schemas import FeasibleSet, MarketParams, ReturnsSample

logger = logging.getLogger(__name__)

_PIVOT_TOLERANCE = 1e-12


def cholesky_upper(sigma: np.ndarray) -> np.ndarray:
    """Return upper-triangular U with sigma = U^T U.

    A pivot is rejected when its square falls below 1e-12 * trace(sigma) / n, so the test does not
    depend on the scale of sigma.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1] or sigma.shape[0] == 0:
        raise NotPositiveDefinite(f"expected a nonempty square matrix, got shape {sigma.shape}")
    n = sigma.shape[0]
    try:
        U = scipy.linalg.cholesky(sigma, lower=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from exc
    floor = _PIVOT_TOLERANCE * float(np.trace(sigma)) / n
    pivots = np.diag(U) ** 2
    if floor <= 0 or np.any(pivots <= floor):
        raise NotPositiveDefinite(f"Cholesky pivot {pivots.min():.3e} below tolerance {max(floor, 0.0):.3e}")
    return U


def estimate_params(sample: ReturnsSample, shrinkage: float = 0.0) -> MarketParams:
    """Sample mean and covariance, with the covariance shrunk toward its diagonal."""
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    returns = sample.returns
    mu = returns.mean(axis=0)
    cov = np.atleast_2d(np.cov(returns, rowvar=False, ddof=1))
    sigma = (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))
    try:
        params = MarketParams(mu=mu, sigma=sigma)
    except NotPositiveDefinite as exc:
        raise DegenerateCovariance(f"estimated covariance is not positive definite: {exc}") from exc
    logger.info("Estimated parameters for %d assets from %d periods", params.n, returns.shape[0])
    return params


def build_feasible_set(
    F: np.ndarray | list,
    f: np.ndarray | list,
    G: np.ndarray | list | None = None,
    g: np.ndarray | list | None = None,
    n: int | None = None,
) -> FeasibleSet:
    """Build {x : F x = f, G x <= g} with the parametrization {x_p + H w} of the equality part.

    H is the trailing block of the orthogonal factor of F^T, so its columns are orthonormal.
    """
    F_arr = np.asarray(F, dtype=float)
    G_arr = np.asarray(G if G is not None else [], dtype=float)
    if n is None:
        if F_arr.ndim == 2 and F_arr.size:
            n = F_arr.shape[1]
        elif G_arr.ndim == 2 and G_arr.size:
            n = G_arr.shape[1]
        else:
            raise ValueError("cannot infer the number of assets from empty constraint matrices")
    F_arr = F_arr.reshape(-1, n) if F_arr.size else np.zeros((0, n))
    G_arr = G_arr.reshape(-1, n) if G_arr.size else np.zeros((0, n))
    f_arr = np.asarray(f, dtype=float).reshape(-1)
    g_arr = np.asarray(g if g is not None else [], dtype=float).reshape(-1)
    if f_arr.size != F_arr.shape[0] or g_arr.size != G_arr.shape[0]:
        raise ValueError("right-hand sides do not match the constraint rows")

    m_f = F_arr.shape[0]
    if m_f == 0:
        return FeasibleSet(F=F_arr, f=f_arr, G=G_arr, g=g_arr, x_p=np.zeros(n), H=np.eye(n))
    if m_f > n or np.linalg.matrix_rank(F_arr) < m_f:
        raise RankDeficient(f"F ({m_f} x {n}) does not have full row rank")

    Q, _ = scipy.linalg.qr(F_arr.T, mode="full")
    H = Q[:, m_f:]
    x_p, *_ = np.linalg.lstsq(F_arr, f_arr, rcond=None)
    if np.abs(F_arr @ x_p - f_arr).max() > 1e-10 * max(1.0, float(np.abs(f_arr).max())):
        raise InfeasibleProblem("F x = f has no solution")
    return FeasibleSet(F=F_arr, f=f_arr, G=G_arr, g=g_arr, x_p=x_p, H=H)


def simplex(n: int) -> FeasibleSet:
    """Long-only fully invested portfolios {e^T x = 1, x >= 0}."""
    return build_feasible_set(np.ones((1, n)), [1.0], -np.eye(n), np.zeros(n))


def budget(n: int) -> FeasibleSet:
    """Fully invested portfolios with short sales allowed."""
    return build_feasible_set(np.ones((1, n)), [1.0], n=n)


def load_returns_csv(path: str | Path) -> ReturnsSample:
    """Read a header row of asset labels followed by one row of decimal returns per period."""
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as exc:
        raise DataFormatError(f"{path}: file is empty") from exc
    except (OSError, pd.errors.ParserError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc

    if frame.shape[1] == 0:
        raise DataFormatError(f"{path}: no asset columns")
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = ~np.isfinite(numeric.to_numpy(dtype=float))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        # Line 1 is the header.
        raise DataFormatError(f"{path}: line {row + 2}: non-numeric value {frame.iat[row, col]!r} in column {col + 1}")
    try:
        return ReturnsSample(returns=numeric.to_numpy(dtype=float), labels=[str(c) for c in frame.columns])
    except ValidationError as exc:
        raise DataFormatError(f"{path}: {exc.errors()[0]['msg']}") from exc


def read_json(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise DataFormatError(f"{path}: expected a JSON object")
    return data


def load_feasible_set(path: str | Path, n: int | None = None) -> FeasibleSet:
    """Read {"F": [[...]], "f": [...], "G": [[...]], "g": [...]}; missing keys mean no rows."""
    data = read_json(path)
    unknown = set(data) - {"F", "f", "G", "g"}
    if unknown:
        raise DataFormatError(f"{path}: unknown keys {sorted(unknown)}")
    try:
        return build_feasible_set(data.get("F", []), data.get("f", []), data.get("G", []), data.get("g", []), n=n)
    except (ValueError, ValidationError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def load_params(path: str | Path) -> MarketParams:
    """Read {"mu": [...], "sigma": [[...]]} as written by the estimate command."""
    data = read_json(path)
    try:
        return MarketParams(mu=data.get("mu"), sigma=data.get("sigma"))
    except ValidationError as exc:
        raise DataFormatError(f"{path}: {exc.errors()[0]['msg']}") from exc
