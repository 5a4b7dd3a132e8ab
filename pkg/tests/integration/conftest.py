"""Acceptance-suite helpers: random ellipsoids and feasible sets with a few inequality rows."""

import numpy as np
import pytest

from regretfolio.config import settings
from regretfolio.core.market_model import budget, build_feasible_set
from regretfolio.models.schemas import EllipsoidalMuSet, FeasibleSet
from tests.conftest import random_params


def capped_budget(n: int, m_g: int, cap: float = 0.7) -> FeasibleSet:
    """Fully invested portfolios with the first m_g weights capped."""
    if m_g == 0:
        return budget(n)
    return build_feasible_set(np.ones((1, n)), [1.0], G=np.eye(n)[:m_g], g=np.full(m_g, cap))


def random_ellipsoid(n: int, k: int, seed: int, radius: float = 0.02) -> EllipsoidalMuSet:
    base = random_params(n, seed)
    rng = np.random.default_rng(seed + 500)
    M = radius * (np.eye(n)[:, :k] + 0.3 * rng.standard_normal((n, k)))
    return EllipsoidalMuSet(mu_bar=base.mu, M=M, sigma=base.sigma)


@pytest.fixture(autouse=True)
def _acceptance_settings(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr(settings, "max_workers", 4)
    monkeypatch.setattr(settings, "hull_check_samples", 16)
