"""Homogenized cones, quadratic matrix representations and copositivity certificates.

Coordinates are z = (u, y, tau): u lives in a unit ball of dimension k, y is the portfolio (or its
reduced coordinates w), and tau is the homogenizing coordinate. A matrix M is certified when it
decomposes as a PSD part plus nonnegative combinations of generators that are nonnegative on the
homogenized set, which proves z^T M z >= 0 there.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np
import scipy.linalg

from regretfolio.config import settings
from regretfolio.core.conic_program import AffineExpr, ProgramBuilder
from regretfolio.core.solver import solve_or_raise
from regretfolio.models.errors import NotCertified
from regretfolio.models.schemas import (
    FeasibleSet,
    HomogenizedSetDescription,
    InnerApproxCertificate,
    PairWeight,
    QuadraticForm,
    SocTerm,
    SolveStatus,
)

logger = logging.getLogger(__name__)


class GeneratorFamily(NamedTuple):
    """Generators of the inner approximation, besides the PSD cone itself."""

    ball: np.ndarray | None
    rays: list[np.ndarray]
    pairs: list[tuple[int, int]]
    ball_dim: int


def matrix_rep(q: QuadraticForm) -> np.ndarray:
    """[[A, b], [b^T, c]], so that q(x) = [x; 1]^T M [x; 1]."""
    n = q.b.size
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = q.A
    M[:n, n] = q.b
    M[n, :n] = q.b
    M[n, n] = q.c
    return M


def ball_form(k: int, r: int) -> np.ndarray:
    """diag(-I_k, 0_r, 1): z^T Q z >= 0 with tau >= 0 says ||u|| <= tau."""
    return np.diag(np.concatenate([-np.ones(k), np.zeros(r), [1.0]]))


def homogenize(ball_dim: int, X: FeasibleSet) -> HomogenizedSetDescription:
    """Homogenization of B_k x X, where B_k is the unit ball of R^k (k = 0 drops the ball)."""
    if ball_dim < 0:
        raise ValueError("ball dimension must be nonnegative")
    d = ball_dim + X.n + 1
    selector = np.zeros(d)
    selector[-1] = 1.0
    zeros = np.zeros(ball_dim)
    rays = [selector] + [np.concatenate([zeros, -X.G[i], [X.g[i]]]) for i in range(X.m_g)]
    equalities = [np.concatenate([zeros, -X.F[i], [X.f[i]]]) for i in range(X.m_f)]
    quadratic = [ball_form(ball_dim, X.n)] if ball_dim else []
    return HomogenizedSetDescription(ball_dim=ball_dim, quadratic=quadratic, rays=rays, equalities=equalities)


def reduction_map(X: FeasibleSet, k: int) -> np.ndarray:
    """T with T [u; w; tau] = [u; x_p tau + H w; tau]."""
    n, r = X.n, X.r
    T = np.zeros((k + n + 1, k + r + 1))
    T[:k, :k] = np.eye(k)
    T[k : k + n, k : k + r] = X.H
    T[k : k + n, -1] = X.x_p
    T[-1, -1] = 1.0
    return T


def lambda_reduce(M: np.ndarray, X: FeasibleSet, k: int) -> np.ndarray:
    """T^T M T: the quadratic in (u, w, tau) obtained by substituting y = x_p tau + H w."""
    M = np.asarray(M, dtype=float)
    expected = k + X.n + 1
    if M.shape != (expected, expected):
        raise ValueError(f"matrix is {M.shape}, expected ({expected}, {expected}) for k={k}, n={X.n}")
    T = reduction_map(X, k)
    return T.T @ M @ T


def reduce_description(Hd: HomogenizedSetDescription, X: FeasibleSet) -> HomogenizedSetDescription:
    """Carry a homogenized description into reduced coordinates; equalities hold identically there."""
    T = reduction_map(X, Hd.ball_dim)
    if T.shape[0] != Hd.dim:
        raise ValueError(f"description has dimension {Hd.dim}, expected {T.shape[0]}")
    return HomogenizedSetDescription(
        ball_dim=Hd.ball_dim,
        quadratic=[T.T @ Q @ T for Q in Hd.quadratic],
        rays=[T.T @ p for p in Hd.rays],
        equalities=[],
    )


def build_inner_generators(Hd: HomogenizedSetDescription) -> GeneratorFamily:
    pairs = [(i, j) for i in range(len(Hd.rays)) for j in range(i + 1, len(Hd.rays))]
    ball = Hd.quadratic[0] if Hd.quadratic else None
    return GeneratorFamily(ball=ball, rays=list(Hd.rays), pairs=pairs, ball_dim=Hd.ball_dim)


def pair_term(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.outer(p, q) + np.outer(q, p)


def soc_term(p: np.ndarray, tau: float, u: np.ndarray) -> np.ndarray:
    """p v^T + v p^T with v = [u; 0; tau]; nonnegative on the cone whenever ||u|| <= tau."""
    v = np.zeros(p.size)
    v[: u.size] = u
    v[-1] = tau
    return pair_term(p, v)


def generator_sum(family: GeneratorFamily, eta: float, xi: np.ndarray, soc: np.ndarray) -> np.ndarray:
    """eta Q + sum xi_ij (p_i p_j^T + p_j p_i^T) + sum_i (p_i v_i^T + v_i p_i^T); soc rows are [tau_i, u_i]."""
    d = family.rays[0].size
    total = np.zeros((d, d))
    if family.ball is not None:
        total += eta * family.ball
    for weight, (i, j) in zip(xi, family.pairs, strict=True):
        total += weight * pair_term(family.rays[i], family.rays[j])
    for p, row in zip(family.rays, soc, strict=True):
        total += soc_term(p, row[0], row[1:])
    return total


def add_generator_variables(
    builder: ProgramBuilder, family: GeneratorFamily
) -> tuple[list[str], AffineExpr, AffineExpr, AffineExpr]:
    """Variables eta >= 0, xi >= 0 and [tau_i; u_i] in second-order cones, with the names of their blocks."""
    width = family.ball_dim + 1
    blocks = []
    eta = builder.variable("eta", 1 if family.ball is not None else 0)
    xi = builder.variable("xi", len(family.pairs))
    soc = builder.variable("soc", len(family.rays) * width)
    for name, expr in (("eta", eta), ("xi", xi), ("soc", soc)):
        if expr.size:
            blocks.append(name)
    builder.add_nonneg(eta)
    builder.add_nonneg(xi)
    for i in range(len(family.rays)):
        builder.add_second_order(soc[i * width : (i + 1) * width])
    return blocks, eta, xi, soc


def generator_values(family: GeneratorFamily, values: dict[str, np.ndarray]) -> tuple[float, np.ndarray, np.ndarray]:
    """Unpack (eta, xi, soc rows) from block values; absent blocks are zero."""
    width = family.ball_dim + 1
    eta_val = values.get("eta", np.zeros(1))
    eta = float(eta_val[0]) if eta_val.size else 0.0
    xi = values.get("xi", np.zeros(len(family.pairs)))
    soc = np.asarray(values.get("soc", np.zeros(len(family.rays) * width))).reshape(len(family.rays), width)
    return eta, xi, soc


def certificate_from_values(
    family: GeneratorFamily, values: dict[str, np.ndarray], psd_part: np.ndarray
) -> InnerApproxCertificate:
    eta, xi, soc = generator_values(family, values)
    return InnerApproxCertificate(
        psd_part=psd_part,
        eta=max(eta, 0.0),
        xi=[PairWeight(i=i, j=j, value=float(v)) for (i, j), v in zip(family.pairs, xi, strict=True)],
        soc_terms=[SocTerm(ray=i, tau=float(row[0]), u=row[1:]) for i, row in enumerate(soc)],
        margin=float(np.linalg.eigvalsh((psd_part + psd_part.T) / 2.0)[0]),
    )


def certify_copositive(M: np.ndarray, Hd: HomogenizedSetDescription) -> InnerApproxCertificate:
    """Decompose M over the inner-approximation generators of Hd, or raise NotCertified.

    Maximizes the smallest eigenvalue t <= 1 of the PSD remainder; M is certified when t is
    nonnegative up to settings.certify_tolerance relative to the size of M.
    """
    M = np.asarray(M, dtype=float)
    d = Hd.dim
    if M.shape != (d, d):
        raise ValueError(f"matrix is {M.shape}, description has dimension {d}")
    M = (M + M.T) / 2.0
    family = build_inner_generators(Hd)

    builder = ProgramBuilder("copositivity certificate")
    t = builder.variable("t")
    blocks, *_ = add_generator_variables(builder, family)

    def _remainder(values: dict[str, np.ndarray]) -> np.ndarray:
        eta, xi, soc = generator_values(family, values)
        return M - generator_sum(family, eta, xi, soc) - values["t"][0] * np.eye(d)

    builder.add_psd(builder.affine_matrix(["t", *blocks], _remainder), d)
    builder.add_nonneg(1.0 - t)
    builder.maximize(t)
    report = solve_or_raise(builder.build())
    if report.status != SolveStatus.OPTIMAL or report.objective is None:
        raise NotCertified(f"certificate program ended with status {report.status.value}")

    threshold = -settings.certify_tolerance * max(1.0, float(np.linalg.norm(M)))
    if report.objective < threshold:
        raise NotCertified(f"best PSD margin {report.objective:.3e} is below {threshold:.1e}")
    eta, xi, soc = generator_values(family, report.values)
    psd_part = M - generator_sum(family, eta, xi, soc)
    logger.debug("Certified a %dx%d matrix with margin %.3e", d, d, report.objective)
    return certificate_from_values(family, report.values, psd_part)


def recombine(cert: InnerApproxCertificate, Hd: HomogenizedSetDescription) -> np.ndarray:
    """Rebuild the certified matrix from its decomposition."""
    family = build_inner_generators(Hd)
    xi = np.zeros(len(family.pairs))
    position = {pair: idx for idx, pair in enumerate(family.pairs)}
    for weight in cert.xi:
        xi[position[(min(weight.i, weight.j), max(weight.i, weight.j))]] += weight.value
    soc = np.zeros((len(family.rays), family.ball_dim + 1))
    for term in cert.soc_terms:
        soc[term.ray, 0] = term.tau
        soc[term.ray, 1:] = term.u
    return cert.psd_part + generator_sum(family, cert.eta, xi, soc)


def sample_homogenized(Hd: HomogenizedSetDescription, count: int, seed: int | None = None) -> np.ndarray:
    """Random members of the homogenized cone, one per row, by rejection against the rays.

    Points are drawn in the null space of the equalities with tau > 0, and the ball coordinates
    are placed uniformly inside the ball of radius tau. Fewer than count rows are returned when
    the rays reject nearly every draw.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(settings.default_seed if seed is None else seed)
    k, d = Hd.ball_dim, Hd.dim
    basis = scipy.linalg.null_space(np.array(Hd.equalities)) if Hd.equalities else np.eye(d)
    rays = np.array(Hd.rays)
    accepted: list[np.ndarray] = []
    for _ in range(200):
        draws = rng.standard_normal((4 * count, basis.shape[1])) @ basis.T
        draws *= np.where(draws[:, -1:] < 0, -1.0, 1.0)
        draws = draws[draws[:, -1] > 1e-9]
        if k:
            directions = rng.standard_normal((draws.shape[0], k))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            radius = rng.uniform(size=(draws.shape[0], 1)) ** (1.0 / k)
            draws[:, :k] = directions * radius * draws[:, -1:]
        keep = np.all(draws @ rays.T >= 0.0, axis=1)
        accepted.extend(draws[keep])
        if len(accepted) >= count:
            break
    if len(accepted) < count:
        logger.warning("Homogenized sampling accepted only %d of %d points", len(accepted), count)
    return np.array(accepted[:count]).reshape(-1, d)
