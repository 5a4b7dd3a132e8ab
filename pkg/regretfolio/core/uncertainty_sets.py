"""Uncertainty sets: projections, worst-case support functions, sampling and JSON ingestion."""

from __future__ import annotations

import itertools
import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from regretfolio.config import settings
from regretfolio.core.market_model import read_json
from regretfolio.models.errors import DataFormatError, UnsupportedProblem
from regretfolio.models.schemas import (
    EllipsoidalMuSet,
    FiniteSet,
    MarketParams,
    MuEllipsoid,
    PolytopicSet,
)

logger = logging.getLogger(__name__)

AnySet = FiniteSet | PolytopicSet | EllipsoidalMuSet
DiscreteSet = FiniteSet | PolytopicSet


def discrete_scenarios(U: AnySet) -> list[MarketParams]:
    """Scenarios of a finite set or vertices of a polytope."""
    if isinstance(U, FiniteSet):
        return list(U.scenarios)
    if isinstance(U, PolytopicSet):
        return list(U.vertices)
    raise UnsupportedProblem("an ellipsoidal set has no finite list of scenarios")


def project_mu(U: AnySet) -> list[np.ndarray] | MuEllipsoid:
    """U_mu: the mean components (duplicates kept) or the mean ellipsoid."""
    if isinstance(U, EllipsoidalMuSet):
        return U.ellipsoid
    return [p.mu for p in discrete_scenarios(U)]


def project_sigma(U: AnySet) -> list[np.ndarray]:
    if isinstance(U, EllipsoidalMuSet):
        return [U.sigma]
    return [p.sigma for p in discrete_scenarios(U)]


def sigma_is_fixed(U: AnySet) -> np.ndarray | None:
    """The shared covariance when every scenario uses the same one, else None."""
    sigmas = project_sigma(U)
    first = sigmas[0]
    if all(np.array_equal(first, s) for s in sigmas[1:]):
        return first
    return None


def worst_case_mean(U: AnySet, x: np.ndarray) -> tuple[float, np.ndarray]:
    """min over U_mu of mu^T x, with a minimizing mean. Ties resolve to the lowest index."""
    x = np.asarray(x, dtype=float)
    means = project_mu(U)
    if isinstance(means, MuEllipsoid):
        v = means.M.T @ x
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            return float(means.mu_bar @ x), means.mu_bar.copy()
        witness = means.mu_bar - means.M @ (v / norm)
        return float(means.mu_bar @ x) - norm, witness
    values = np.array([mu @ x for mu in means])
    low = float(values.min())
    best = int(np.flatnonzero(values <= low + 1e-12 * max(1.0, abs(low)))[0])
    return float(values[best]), means[best].copy()


def worst_case_variance(U: AnySet, x: np.ndarray) -> tuple[float, np.ndarray]:
    """max over U_sigma of x^T sigma x, with a maximizing covariance. Ties resolve to the lowest index."""
    x = np.asarray(x, dtype=float)
    sigmas = project_sigma(U)
    values = np.array([x @ s @ x for s in sigmas])
    high = float(values.max())
    worst = int(np.flatnonzero(values >= high - 1e-12 * max(1.0, abs(high)))[0])
    return float(values[worst]), sigmas[worst].copy()


def sample_ellipsoid(E: EllipsoidalMuSet | MuEllipsoid, count: int, seed: int | None = None) -> np.ndarray:
    """count boundary points mu_bar + M u with u uniform on the unit sphere, one per row.

    For a fixed seed a smaller count returns a prefix of a larger one.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(settings.default_seed if seed is None else seed)
    directions = rng.standard_normal((count, E.M.shape[1]))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    # A zero Gaussian draw has probability zero; map it to the first axis.
    zero = norms[:, 0] == 0.0
    directions[zero, 0] = 1.0
    norms[zero] = 1.0
    return E.mu_bar + (directions / norms) @ E.M.T


def sample_hull(U: DiscreteSet, count: int, seed: int | None = None) -> list[MarketParams]:
    """Random convex combinations of the scenarios, with flat Dirichlet weights."""
    if count < 1:
        raise ValueError("count must be at least 1")
    points = discrete_scenarios(U)
    rng = np.random.default_rng(settings.default_seed if seed is None else seed)
    weights = rng.dirichlet(np.ones(len(points)), size=count)
    mus = np.stack([p.mu for p in points])
    sigmas = np.stack([p.sigma for p in points])
    return [
        MarketParams(mu=w @ mus, sigma=np.tensordot(w, sigmas, axes=1))
        for w in weights
    ]


def box_uncertainty(mu_lower: np.ndarray, mu_upper: np.ndarray, sigma: np.ndarray) -> PolytopicSet:
    """Interval bounds on each mean with a fixed covariance, as the polytope of the box vertices."""
    lo = np.asarray(mu_lower, dtype=float)
    hi = np.asarray(mu_upper, dtype=float)
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ValueError("mu_lower and mu_upper must be vectors of the same length")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("interval bounds must be finite")
    if np.any(lo > hi):
        raise ValueError("mu_lower must not exceed mu_upper")
    free = int(np.count_nonzero(lo < hi))
    if free > settings.box_vertex_limit:
        raise UnsupportedProblem(
            f"box with {free} free coordinates exceeds the vertex limit of {settings.box_vertex_limit}"
        )
    choices = [(a,) if a == b else (a, b) for a, b in zip(lo, hi, strict=True)]
    base = MarketParams(mu=lo, sigma=sigma)
    vertices = [base.with_mu(np.array(corner)) for corner in itertools.product(*choices)]
    logger.debug("Box uncertainty expanded to %d vertices", len(vertices))
    return PolytopicSet(vertices=vertices)


def load_uncertainty_set(path: str | Path) -> AnySet:
    """Read one of {"finite": [...]}, {"polytopic": [...]}, {"ellipsoidal": {...}} or {"interval": {...}}."""
    data = read_json(path)
    if len(data) != 1:
        raise DataFormatError(f"{path}: expected exactly one of finite, polytopic, ellipsoidal, interval")
    ((kind, body),) = data.items()
    try:
        if kind == "finite":
            return FiniteSet(scenarios=body)
        if kind == "polytopic":
            return PolytopicSet(vertices=body)
        if kind == "ellipsoidal":
            return EllipsoidalMuSet(**body)
        if kind == "interval":
            return box_uncertainty(body["mu_lower"], body["mu_upper"], body["sigma"])
    except (ValidationError, ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: invalid {kind} set: {exc}") from exc
    raise DataFormatError(f"{path}: unknown uncertainty set kind '{kind}'")
