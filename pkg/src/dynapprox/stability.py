"""Inf-sup stability constant, its location gradient, and error constants.

The stability constant of a tangent space against an observation space is the
cosine of their largest principal angle. It is computed as the smallest
eigenvalue of the observed quadratic form restricted to the numerical range of
the tangent Gramian, which also yields the effective tangent dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space, orth

from .fields import CallableField, GaussPolyBasis
from .observations import solve_gramian

# Relative eigenvalue cutoff defining the numerical range of the tangent
# Gramian (and with it the effective dimension).
RANK_CUTOFF = 1e-8

# Bottom eigengap (relative to the top eigenvalue) below which the analytic
# eigenvalue derivative is flagged as unreliable.
GAP_RTOL = 1e-10


class DegenerateTangentError(RuntimeError):
    """Tangent Gramian is numerically zero; the constant is undefined."""


@dataclass
class StabilityReport:
    beta: float
    beta_sq: float
    n_eff: int
    direction: np.ndarray
    eigengap: float
    simple: bool


def _observed_form(L, G=None, kappa=None):
    L = np.asarray(L, dtype=float)
    if kappa is not None:
        A = L.T @ (np.asarray(kappa, dtype=float)[:, None] * L)
    else:
        A = L.T @ solve_gramian(np.asarray(G, dtype=float), L)
    return 0.5 * (A + A.T)


def beta_report(M, L, G=None, kappa=None, cutoff=RANK_CUTOFF):
    """Stability constant of span(tangent) against the observations.

    ``M`` is the ambient Gramian of the tangent fields, ``L`` their observed
    matrix. Pass ``G`` for the natural norm or ``kappa`` for a weighted
    Euclidean one. Restriction to the numerical range of ``M`` defines the
    effective dimension and keeps redundant parameters out of the constant.
    """
    M = np.asarray(M, dtype=float)
    lam, U = np.linalg.eigh(0.5 * (M + M.T))
    lam_max = lam[-1]
    if lam_max <= 0:
        raise DegenerateTangentError("tangent Gramian is numerically zero")
    keep = lam > cutoff * lam_max
    r = int(np.count_nonzero(keep))
    R = U[:, keep] / np.sqrt(lam[keep])
    A = _observed_form(L, G=G, kappa=kappa)
    B = R.T @ A @ R
    B = 0.5 * (B + B.T)
    evals, evecs = np.linalg.eigh(B)
    beta_sq = float(max(evals[0], 0.0))
    gap = float(evals[1] - evals[0]) if r >= 2 else np.inf
    simple = bool(gap > GAP_RTOL * max(evals[-1], 1.0))
    direction = R @ evecs[:, 0]
    return StabilityReport(
        beta=float(min(np.sqrt(beta_sq), 1.0)),
        beta_sq=beta_sq,
        n_eff=r,
        direction=direction,
        eigengap=gap,
        simple=simple,
    )


def grad_beta_sq(obs, basis, M, L=None, G=None, cutoff=RANK_CUTOFF, report=None):
    """Gradient of the squared stability constant in the observation locations.

    Analytic eigenvalue perturbation through the observed matrix and the
    representer Gramian. Returns ``(grad, report, exact)`` with ``exact``
    False when the bottom eigenvalue is too degenerate for the formula (the
    caller should then fall back to finite differences).
    """
    if L is None:
        L = obs.observe_basis(basis)
    if G is None:
        G = obs.gramian()
    if report is None:
        report = beta_report(M, L, G=G, cutoff=cutoff)
    if not report.simple:
        return np.zeros((obs.m, obs.dim)), report, False
    a = report.direction
    c = solve_gramian(G, L @ a)
    if isinstance(basis, GaussPolyBasis):
        direction_field = basis.combine(a)
    else:
        direction_field = CallableField(
            lambda pts, a=a: basis.eval_matrix(pts) @ a, dim=obs.dim
        )
    dL_rows = obs.observe_mean_gradient(direction_field)  # (m, d)
    dG = obs.gramian_location_grad()  # (m, m, d)
    grad = 2.0 * c[:, None] * dL_rows - 2.0 * c[:, None] * np.einsum(
        "j,kjd->kd", c, dG
    )
    return grad, report, True


def lipschitz_weighted(G, kappa):
    """Lipschitz constant of the observation map under a weighted norm.

    The supremum of |l(v)|_Z / ||v|| over the ambient space, attained on the
    representer span: the largest eigenvalue of G^{1/2} diag(kappa) G^{1/2}.
    """
    G = np.asarray(G, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    lam, U = np.linalg.eigh(0.5 * (G + G.T))
    lam = np.clip(lam, 0.0, None)
    half = U * np.sqrt(lam)
    mat = half.T @ (kappa[:, None] * half)
    top = np.linalg.eigvalsh(0.5 * (mat + mat.T))[-1]
    return float(np.sqrt(max(top, 0.0)))


@dataclass
class ErrorConstants:
    c: float
    c_tilde: float


def error_constants(beta, lip=1.0):
    """Reconstruction error constants: C = 1 + 2 Lip / beta, C~ = 1 / beta.

    Under the natural norm the Lipschitz constant is exactly 1. A zero beta
    signals loss of admissibility; both constants become infinite.
    """
    if beta <= 0:
        return ErrorConstants(c=np.inf, c_tilde=np.inf)
    return ErrorConstants(c=1.0 + 2.0 * lip / beta, c_tilde=1.0 / beta)


# ---------------------------------------------------------------------------
# finite-dimensional identity harness
# ---------------------------------------------------------------------------


def _euclidean_beta(A, B):
    """Stability constant of span(A) against span(B) in Euclidean R^N."""
    Qa = orth(A)
    Qb = orth(B)
    if Qa.size == 0:
        raise DegenerateTangentError("empty subspace")
    if Qb.size == 0:
        return 0.0
    s = np.linalg.svd(Qb.T @ Qa, compute_uv=False)
    k = Qa.shape[1]
    if s.size < k:
        return 0.0
    return float(np.clip(s[k - 1], 0.0, 1.0))


def beta_identities(H, W):
    """The three equal formulations of the stability constant, computed
    independently on explicit Euclidean matrices: against the observation
    span, against the enriched span, and between the two complements.
    """
    H = np.asarray(H, dtype=float)
    W = np.asarray(W, dtype=float)
    Qh = orth(H)
    Qw = orth(W)
    b1 = _euclidean_beta(Qh, Qw)
    # enrichment: directions of W orthogonal to H
    cross = Qh.T @ Qw
    Z = null_space(cross)
    if Z.size:
        extra = Qw @ Z
        Qht = orth(np.column_stack([Qh, extra]))
    else:
        Qht = Qh
    b2 = _euclidean_beta(Qht, Qw)
    # complements; both trivial only in the everything-observed corner case
    Qw_perp = null_space(Qw.T)
    Qht_perp = null_space(Qht.T)
    if Qw_perp.size == 0:
        b3 = 1.0
    elif Qht_perp.size == 0:
        b3 = 0.0
    else:
        b3 = _euclidean_beta(Qw_perp, Qht_perp)
    return b1, b2, b3
