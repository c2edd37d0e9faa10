"""Moving Gaussian observation functionals and their assembled matrices.

An observation set is m normalized Gaussian windows sharing one covariance.
Applying them to closed-form fields uses exact integrals; anything else falls
back to the set's Gauss-Hermite rule mapped onto each window.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import quadrature
from .fields import GaussPolyBasis, GaussPolyField
from .kernels import LOG_2PI, TermBatch, pairwise_integrals

# Locations closer than this are flagged: the representer Gramian degenerates.
COINCIDENCE_WARN = 1e-8


class ObservationSet:
    """m Gaussian local averages centered at ``locations`` with shared covariance."""

    def __init__(self, locations, covariance, quad_rule=None):
        self.locations = np.atleast_2d(np.asarray(locations, dtype=float))
        self.m, self.dim = self.locations.shape
        cov = np.asarray(covariance, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(self.dim)
        self.covariance = 0.5 * (cov + cov.T)
        self.precision = np.linalg.inv(self.covariance)
        self._chol = np.linalg.cholesky(self.covariance)
        self.quad_rule = quad_rule or quadrature.default_gaussian_rule(self.dim)
        self._kernel_batch = None
        self._gramian = None
        self._nodes = None
        self._warn_coincident()

    def _warn_coincident(self):
        if self.m < 2:
            return
        diff = self.locations[:, None, :] - self.locations[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(dist, np.inf)
        if dist.min() < COINCIDENCE_WARN:
            warnings.warn(
                "observation locations nearly coincide; Gramian may be singular",
                RuntimeWarning,
            )

    def with_locations(self, locations):
        return ObservationSet(locations, self.covariance, self.quad_rule)

    def kernel_batch(self):
        if self._kernel_batch is None:
            _, logdet = np.linalg.slogdet(self.covariance)
            log_norm = -0.5 * (self.dim * LOG_2PI + logdet)
            iso = (
                np.abs(self.precision - self.precision[0, 0] * np.eye(self.dim)).max()
                == 0.0
            )
            kwargs = (
                {"iso_prec": np.full(self.m, self.precision[0, 0])}
                if iso
                else {"prec": np.broadcast_to(self.precision, (self.m, self.dim, self.dim))}
            )
            zero = (0,) * self.dim
            self._kernel_batch = TermBatch(
                self.locations, {zero: np.ones(self.m)}, np.full(self.m, log_norm),
                **kwargs,
            )
        return self._kernel_batch

    def _mapped_nodes(self):
        """Quadrature nodes for every window, shape (m, Q, d)."""
        if self._nodes is None:
            base = self.quad_rule.nodes @ self._chol.T
            self._nodes = self.locations[:, None, :] + base[None, :, :]
        return self._nodes

    # -- core assembly ------------------------------------------------------

    def observe_field(self, v):
        """Vector of the m mollified values of a field."""
        if isinstance(v, GaussPolyField):
            return pairwise_integrals(self.kernel_batch(), v.batch).sum(axis=1)
        nodes = self._mapped_nodes()
        vals = np.asarray(v(nodes.reshape(-1, self.dim)), dtype=float)
        return vals.reshape(self.m, -1) @ self.quad_rule.weights

    def observe_basis(self, basis):
        """Matrix of observed tangent fields, shape (m, n)."""
        if isinstance(basis, GaussPolyBasis):
            raw = pairwise_integrals(self.kernel_batch(), basis.batch)  # (m, terms)
            return basis.reduce_terms(raw.T).T
        nodes = self._mapped_nodes().reshape(-1, self.dim)
        mat = basis.eval_matrix(nodes).reshape(self.m, -1, basis.n)
        return np.einsum("q,mqn->mn", self.quad_rule.weights, mat)

    def gramian(self):
        """Exact Gramian of the observation representers."""
        if self._gramian is None:
            kb = self.kernel_batch()
            G = pairwise_integrals(kb, kb)
            self._gramian = 0.5 * (G + G.T)
        return self._gramian

    # -- location derivatives (for the stability-gradient flow) --------------

    def observe_mean_gradient(self, v):
        """Rows d/dx_k of the observed values of ``v``; shape (m, d).

        Every entry is the integral of ``(P (y - x_k)) v(y)`` against the k-th
        window, the derivative of the window with respect to its own center.
        """
        if isinstance(v, GaussPolyField):
            kb = self.kernel_batch()
            out = np.zeros((self.m, self.dim))
            for a in range(self.dim):
                poly = {}
                for b in range(self.dim):
                    if self.precision[a, b] == 0.0:
                        continue
                    alpha = [0] * self.dim
                    alpha[b] = 1
                    poly[tuple(alpha)] = np.full(self.m, self.precision[a, b])
                deriv = TermBatch(
                    kb.means, poly, kb.log_norms,
                    iso_prec=kb.iso_prec, prec=kb.prec,
                )
                out[:, a] = pairwise_integrals(deriv, v.batch).sum(axis=1)
            return out
        nodes = self._mapped_nodes()
        vals = np.asarray(v(nodes.reshape(-1, self.dim)), dtype=float).reshape(self.m, -1)
        diff = nodes - self.locations[:, None, :]
        weighted = np.einsum("q,mq,mqd->md", self.quad_rule.weights, vals, diff)
        return weighted @ self.precision.T

    def gramian_location_grad(self):
        """Tensor T[k, j] = d G_kj / d x_k, shape (m, m, d); diagonal is zero."""
        G = self.gramian()
        pair_prec = np.linalg.inv(2.0 * self.covariance)
        diff = self.locations[:, None, :] - self.locations[None, :, :]
        T = -np.einsum("de,kje->kjd", pair_prec, diff) * G[:, :, None]
        idx = np.arange(self.m)
        T[idx, idx, :] = 0.0
        return T


def solve_gramian(G, rhs):
    """Solve G x = rhs with a jittered Cholesky; G is the representer Gramian."""
    from scipy.linalg import LinAlgError, cho_factor, cho_solve

    try:
        return cho_solve(cho_factor(G, lower=True), rhs)
    except (LinAlgError, np.linalg.LinAlgError):
        pass
    jitter = 1e-12 * np.trace(G) / G.shape[0]
    for _ in range(6):
        try:
            return cho_solve(
                cho_factor(G + jitter * np.eye(G.shape[0]), lower=True), rhs
            )
        except (LinAlgError, np.linalg.LinAlgError):
            jitter *= 100.0
    raise np.linalg.LinAlgError("representer Gramian is singular even after jitter")
