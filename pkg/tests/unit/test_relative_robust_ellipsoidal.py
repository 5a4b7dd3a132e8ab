"""Tests for the ellipsoidal minimum-regret program and its sampled bracket."""

import logging
from unittest.mock import patch

import numpy as np
import pytest

from regretfolio.core.classical_mvo import solve_variant
from regretfolio.core.cone_toolkit import (
    generator_sum,
    generator_values,
    homogenize,
    lambda_reduce,
    recombine,
    reduce_description,
)
from regretfolio.core.conic_program import tril_to_symmetric
from regretfolio.core.market_model import simplex
from regretfolio.core.relative_robust_ellipsoidal import (
    arrp_program,
    bracket_regret,
    build_M_x_gamma,
    evaluate_max_regret_ellipsoidal,
    refine_bracket,
    rr_risk_adjusted_ellipsoidal,
    solve_arrp,
)
from regretfolio.models.schemas import (
    ConeTag,
    EllipsoidalMuSet,
    FeasibleSet,
    MarketParams,
    MvoVariant,
    SolveStatus,
)


def _f(mu: np.ndarray, y: np.ndarray, sigma: np.ndarray, lam: float) -> float:
    return float(mu @ y - lam * y @ sigma @ y)


class TestRegretMatrix:
    def test_quadratic_identity(self, ellipsoid3: EllipsoidalMuSet) -> None:
        rng = np.random.default_rng(1)
        lam, gamma = 1.5, 0.02
        x = np.array([0.2, 0.5, 0.3])
        u = rng.standard_normal(ellipsoid3.k)
        y = rng.standard_normal(3)
        z = np.concatenate([u, y, [1.0]])
        mu = ellipsoid3.mu_bar + ellipsoid3.M @ u
        expected = gamma - _f(mu, y, ellipsoid3.sigma, lam) + _f(mu, x, ellipsoid3.sigma, lam)
        assert float(z @ build_M_x_gamma(x, gamma, ellipsoid3, lam) @ z) == pytest.approx(expected)

    def test_epigraph_override(self, ellipsoid3: EllipsoidalMuSet) -> None:
        x = np.full(3, 1 / 3)
        exact = build_M_x_gamma(x, 0.0, ellipsoid3, 1.0)
        loose = build_M_x_gamma(x, 0.0, ellipsoid3, 1.0, s=float(x @ ellipsoid3.sigma @ x) + 0.1)
        assert loose[-1, -1] == pytest.approx(exact[-1, -1] - 0.1)
        assert loose[:-1, :-1] == pytest.approx(exact[:-1, :-1])


class TestSolveArrp:
    def test_bound_covers_sampled_regret(self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet) -> None:
        solution = solve_arrp(ellipsoid3, simplex3, 1.0)
        assert solution.status == SolveStatus.OPTIMAL
        assert simplex3.contains(solution.x, tol=1e-6)
        assert solution.s >= float(solution.x @ ellipsoid3.sigma @ solution.x) - 1e-6
        sampled, _ = evaluate_max_regret_ellipsoidal(solution.x, ellipsoid3, 1.0, simplex3, samples=40, seed=2)
        assert sampled <= solution.gamma + 1e-5

    def test_zero_radius_has_no_regret(self, params3: MarketParams, simplex3: FeasibleSet) -> None:
        E = EllipsoidalMuSet(mu_bar=params3.mu, M=np.zeros((3, 1)), sigma=params3.sigma)
        solution = solve_arrp(E, simplex3, 2.0)
        assert solution.gamma == pytest.approx(0.0, abs=1e-5)
        classical = solve_variant(params3, simplex3, MvoVariant.risk_adjusted(2.0))
        assert solution.x == pytest.approx(classical.weights, abs=1e-3)

    @pytest.mark.parametrize("zero_generators", [True, False])
    def test_psd_block_is_reduced_regret_matrix(
        self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet, zero_generators: bool
    ) -> None:
        lam = 2.0
        assembled = arrp_program(ellipsoid3, simplex3, lam)
        program = assembled.program
        block = next(cone for cone in program.cones if cone.tag == ConeTag.PSD)
        v = np.random.default_rng(2).standard_normal(program.c.size)
        if zero_generators:
            for name in ("eta", "xi", "soc"):
                if name in program.layout:
                    offset, size = program.layout[name]
                    v[offset : offset + size] = 0.0
        values = {name: v[offset : offset + size] for name, (offset, size) in program.layout.items()}
        point = simplex3.point(values["w"])
        regret = build_M_x_gamma(point, values["gamma"][0], ellipsoid3, lam, s=values["s"][0])
        expected = lambda_reduce(regret, simplex3, ellipsoid3.k)
        if not zero_generators:
            expected = expected - generator_sum(assembled.family, *generator_values(assembled.family, values))
        assert np.allclose(tril_to_symmetric(block.G @ v + block.h, block.dim), expected, atol=1e-9)

    def test_certificate_recombines_to_reduced_regret_matrix(
        self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet
    ) -> None:
        lam = 2.0
        solution = solve_arrp(ellipsoid3, simplex3, lam)
        k = ellipsoid3.k
        Hd = reduce_description(homogenize(k, simplex3), simplex3)
        regret = build_M_x_gamma(solution.x, solution.gamma, ellipsoid3, lam, s=solution.s)
        assert recombine(solution.certificate, Hd) == pytest.approx(lambda_reduce(regret, simplex3, k), abs=1e-7)

    def test_dimension_mismatch(self, ellipsoid3: EllipsoidalMuSet) -> None:
        with pytest.raises(ValueError, match="assets"):
            solve_arrp(ellipsoid3, simplex(2), 1.0)

    def test_risk_aversion_must_be_positive(self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet) -> None:
        with pytest.raises(ValueError, match="positive"):
            solve_arrp(ellipsoid3, simplex3, 0.0)


class TestEvaluateMaxRegret:
    def test_center_only_adds_candidates(self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet) -> None:
        x = np.array([1.0, 0.0, 0.0])
        boundary, _ = evaluate_max_regret_ellipsoidal(x, ellipsoid3, 1.0, simplex3, samples=20, seed=5)
        with_center, _ = evaluate_max_regret_ellipsoidal(
            x, ellipsoid3, 1.0, simplex3, samples=20, seed=5, include_center=True
        )
        assert with_center >= boundary - 1e-12
        assert boundary >= -1e-6

    def test_witness_lies_on_the_boundary(self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet) -> None:
        _, mu = evaluate_max_regret_ellipsoidal(np.full(3, 1 / 3), ellipsoid3, 1.0, simplex3, samples=20, seed=5)
        u = np.linalg.lstsq(ellipsoid3.M, mu - ellipsoid3.mu_bar, rcond=None)[0]
        assert np.linalg.norm(u) == pytest.approx(1.0)


class TestBracket:
    def test_lower_below_upper(self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet) -> None:
        report = bracket_regret(ellipsoid3, simplex3, 1.0, sample_count=30, seed=3)
        assert -1e-7 <= report.lower <= report.upper + 1e-6
        assert report.gap == pytest.approx(report.upper - report.lower)
        assert report.sample_count == 30
        assert (report.n, report.k, report.m_g) == (3, 2, 3)
        assert simplex3.contains(report.x_outer, tol=1e-6)
        assert set(report.timings) == {"inner", "outer"}

    def test_inverted_bracket_is_reported_as_is(
        self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet, caplog: pytest.LogCaptureFixture
    ) -> None:
        outer = (5.0, np.full(3, 1 / 3), 0.0)
        target = "regretfolio.core.relative_robust_ellipsoidal.minimize_risk_adjusted_regret"
        with patch(target, return_value=outer), caplog.at_level(logging.WARNING):
            report = bracket_regret(ellipsoid3, simplex3, 1.0, sample_count=10, seed=3)
        assert report.lower == 5.0
        assert report.gap < 0.0
        assert "inverted" in caplog.text

    def test_too_few_samples(self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet) -> None:
        with pytest.raises(ValueError, match="k \\+ 1"):
            bracket_regret(ellipsoid3, simplex3, 1.0, sample_count=2)

    def test_refinement_tightens_lower_bound(self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet) -> None:
        reports = refine_bracket(ellipsoid3, simplex3, 1.0, start=10, rounds=2, seed=6)
        assert [r.sample_count for r in reports] == [10, 20]
        assert reports[1].lower >= reports[0].lower - 1e-6
        assert reports[0].upper == reports[1].upper

    def test_refine_needs_a_round(self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet) -> None:
        with pytest.raises(ValueError, match="rounds"):
            refine_bracket(ellipsoid3, simplex3, 1.0, rounds=0)


class TestCertificate:
    def test_certificate_carries_the_bracket(self, ellipsoid3: EllipsoidalMuSet, simplex3: FeasibleSet) -> None:
        certificate, bracket = rr_risk_adjusted_ellipsoidal(ellipsoid3, simplex3, 1.0, sample_count=25, seed=8)
        assert certificate.gamma == bracket.upper
        assert certificate.bracket == (bracket.lower, bracket.upper)
        assert certificate.x == pytest.approx(bracket.x_inner)
        assert certificate.variant == MvoVariant.risk_adjusted(1.0)
        assert certificate.witness_mu is not None
