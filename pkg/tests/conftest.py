"""Shared fixtures: small random market instances and a clean benchmark cache per test."""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np
import pytest

from regretfolio.core.cache import clear_cache
from regretfolio.core.market_model import budget, simplex
from regretfolio.models.schemas import EllipsoidalMuSet, FeasibleSet, FiniteSet, MarketParams, PolytopicSet


def random_params(n: int, seed: int, scale: float = 0.04) -> MarketParams:
    """Well-conditioned random market: means around 5-15%, covariance scale * (A A^T / n + I / 2)."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    sigma = scale * (A @ A.T / n + 0.5 * np.eye(n))
    mu = 0.05 + 0.1 * rng.uniform(size=n)
    return MarketParams(mu=mu, sigma=sigma)


def random_finite_set(n: int, k: int, seed: int, shared_sigma: bool = False) -> FiniteSet:
    base = random_params(n, seed)
    rng = np.random.default_rng(seed + 1000)
    scenarios = []
    for i in range(k):
        mu = base.mu + 0.03 * rng.standard_normal(n)
        sigma = base.sigma if shared_sigma else random_params(n, seed + 1 + i).sigma
        scenarios.append(MarketParams(mu=mu, sigma=sigma))
    return FiniteSet(scenarios=scenarios)


@pytest.fixture(autouse=True)
def _fresh_cache() -> Iterator[None]:
    clear_cache()
    yield
    clear_cache()


@pytest.fixture
def params3() -> MarketParams:
    return random_params(3, seed=7)


@pytest.fixture
def simplex3() -> FeasibleSet:
    return simplex(3)


@pytest.fixture
def budget3() -> FeasibleSet:
    return budget(3)


@pytest.fixture
def finite3() -> FiniteSet:
    return random_finite_set(3, 3, seed=11)


@pytest.fixture
def shared_finite3() -> FiniteSet:
    return random_finite_set(3, 3, seed=13, shared_sigma=True)


@pytest.fixture
def polytope3() -> PolytopicSet:
    return PolytopicSet(vertices=random_finite_set(3, 3, seed=17).scenarios)


@pytest.fixture
def ellipsoid3() -> EllipsoidalMuSet:
    base = random_params(3, seed=19)
    return EllipsoidalMuSet(mu_bar=base.mu, M=0.02 * np.eye(3)[:, :2], sigma=base.sigma)
