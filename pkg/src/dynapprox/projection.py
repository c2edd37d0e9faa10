"""Assembly and solution of the sampled tangent-space projection system.

Observed tangent data (L, z, G) is turned into normal equations for the
parameter velocity, either under a weighted Euclidean norm on observation
vectors or under the minimal-preimage norm induced by the representer Gramian.
A PBDW-style corrected reconstruction is provided as a diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .fields import GaussPolyBasis
from .observations import solve_gramian

# Relative singular-value cutoff of the pseudo-inverse fallback when solving
# without regularization.
SVD_CUTOFF = 1e-8


class IllPosedError(RuntimeError):
    """The reconstruction problem is degenerate (zero stability constant)."""


@dataclass(frozen=True)
class ZNormSpec:
    """Norm on observation vectors: natural (Gramian) or weighted Euclidean."""

    kind: str = "natural"
    kappa: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("natural", "weighted"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == "weighted":
            kappa = np.asarray(self.kappa, dtype=float)
            if kappa.ndim != 1 or np.any(kappa <= 0):
                raise ValueError("weighted norm needs a positive weight vector")
            object.__setattr__(self, "kappa", kappa)

    @staticmethod
    def uniform(m):
        return ZNormSpec(kind="weighted", kappa=np.full(m, 1.0 / m))


@dataclass
class TangentSystem:
    mhat: np.ndarray
    qhat: np.ndarray
    epsilon: float
    spectrum: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.spectrum is None:
            self.spectrum = np.linalg.svd(self.mhat, compute_uv=False)


def assemble_system(L, z, G=None, znorm=ZNormSpec(), epsilon=0.0):
    """Normal equations of the observed least-squares problem.

    Natural norm: mhat = L^T G^{-1} L, qhat = L^T G^{-1} z. Weighted norm:
    mhat = L^T diag(kappa) L, qhat = L^T diag(kappa) z.
    """
    L = np.asarray(L, dtype=float)
    z = np.asarray(z, dtype=float)
    if znorm.kind == "natural":
        if G is None:
            raise ValueError("natural norm requires the representer Gramian")
        sol = solve_gramian(G, np.column_stack([L, z]))
        GL, Gz = sol[:, :-1], sol[:, -1]
        mhat = L.T @ GL
        qhat = L.T @ Gz
    else:
        kappa = znorm.kappa
        if kappa.shape[0] != L.shape[0]:
            raise ValueError("weight vector length must match observation count")
        mhat = L.T @ (kappa[:, None] * L)
        qhat = L.T @ (kappa * z)
    mhat = 0.5 * (mhat + mhat.T)
    return TangentSystem(mhat=mhat, qhat=qhat, epsilon=float(epsilon))


def solve_theta_dot(sys):
    """Solve (mhat + eps Id) theta_dot = qhat.

    Returns ``(theta_dot, method)`` where method records whether the ridge
    Cholesky or the truncated-SVD pseudo-inverse path was taken.
    """
    n = sys.mhat.shape[0]
    A = sys.mhat + sys.epsilon * np.eye(n)
    try:
        return cho_solve(cho_factor(A, lower=True), sys.qhat), "cholesky"
    except (LinAlgError, np.linalg.LinAlgError):
        pass
    U, s, Vt = np.linalg.svd(A)
    keep = s > SVD_CUTOFF * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return Vt.T @ (inv * (U.T @ sys.qhat)), "svd"


def continuous_gramian(basis, ambient_rule=None):
    """Ambient-space Gramian of the tangent basis.

    Closed form for Gaussian-polynomial bases on R^d; otherwise quadrature on
    the supplied Lebesgue rule (bounded-domain experiments).
    """
    if isinstance(basis, GaussPolyBasis):
        return basis.gram()
    if ambient_rule is None:
        raise ValueError("non-closed-form basis needs an ambient quadrature rule")
    J = basis.eval_matrix(ambient_rule.nodes)
    return J.T @ (ambient_rule.weights[:, None] * J)


def basis_rhs_inner(basis, f, ambient_rule=None):
    """Vector of ambient inner products of the basis fields with ``f``."""
    from .fields import GaussPolyField

    if isinstance(basis, GaussPolyBasis) and isinstance(f, GaussPolyField):
        return basis.inner_with_field(f)
    if ambient_rule is None:
        raise ValueError("non-closed-form pairing needs an ambient quadrature rule")
    J = basis.eval_matrix(ambient_rule.nodes)
    vals = np.asarray(f(ambient_rule.nodes), dtype=float)
    return J.T @ (ambient_rule.weights * vals)


@dataclass
class PBDWResult:
    """Corrected derivative reconstruction in tangent + correction coordinates.

    The reconstruction is ``sum_i tangent_coeffs[i] tau_i + sum_j
    correction_coeffs[j] omega_j``; by construction it interpolates the
    observed data exactly.
    """

    tangent_coeffs: np.ndarray
    correction_coeffs: np.ndarray

    def observed(self, L, G):
        return L @ self.tangent_coeffs + G @ self.correction_coeffs


def pbdw_reconstruct(L, z, G, M=None, beta_floor=1e-12):
    """Observation-interpolating reconstruction in the enriched tangent space.

    Solves the natural-norm projection for the tangent part, then adds the
    representer combination that restores exact interpolation of ``z``.
    ``M`` (the tangent Gramian) enables the well-posedness check.
    """
    if M is not None:
        from .stability import beta_report

        rep = beta_report(M, L, G)
        if rep.beta <= beta_floor:
            raise IllPosedError("stability constant is zero; reconstruction ill-posed")
    sys = assemble_system(L, z, G=G, znorm=ZNormSpec())
    theta_dot, _ = solve_theta_dot(sys)
    eta = solve_gramian(G, z - L @ theta_dot)
    return PBDWResult(tangent_coeffs=theta_dot, correction_coeffs=eta)
