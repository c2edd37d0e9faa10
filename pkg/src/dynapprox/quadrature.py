"""Quadrature rules: tensorized Gauss-Hermite, Monte-Carlo and bounded grids.

Gauss-Hermite rules integrate against the standard normal density; pushing the
nodes through an affine map turns them into rules for any Gaussian weight.
Grid rules integrate plain Lebesgue integrals on boxes (used for the ambient
inner products of bounded-domain experiments).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss

# Default one-dimensional node counts by spatial dimension: tensorization is
# affordable up to moderate d, Monte-Carlo takes over beyond that.
DEFAULT_GH_ORDER = {1: 20, 2: 20, 3: 6, 4: 6, 5: 6, 6: 6}
MC_DIM_THRESHOLD = 7
DEFAULT_MC_SAMPLES = 10_000


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights, plus the convention the weights follow.

    ``kind`` is ``"gaussian"`` when the rule integrates against a unit
    Gaussian measure (weights sum to 1) and ``"lebesgue"`` when the weights
    carry the volume element of a box.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    @property
    def dim(self):
        return self.nodes.shape[1]

    def integrate(self, values):
        return self.weights @ np.asarray(values)


def gauss_hermite_rule(dim, order):
    """Tensorized rule for the standard normal N(0, Id) in ``dim`` dimensions."""
    x, w = hermgauss(order)
    x = x * np.sqrt(2.0)
    w = w / np.sqrt(np.pi)
    nodes_1d = [x] * dim
    weights_1d = [w] * dim
    grids = np.meshgrid(*nodes_1d, indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
    wgrids = np.meshgrid(*weights_1d, indexing="ij")
    weights = np.ones(nodes.shape[0])
    for g in wgrids:
        weights = weights * g.reshape(-1)
    return QuadratureRule(nodes, weights, kind="gaussian")


def monte_carlo_rule(dim, n_samples, rng):
    """Equal-weight sample rule for the standard normal."""
    nodes = rng.standard_normal((n_samples, dim))
    weights = np.full(n_samples, 1.0 / n_samples)
    return QuadratureRule(nodes, weights, kind="gaussian")


def default_gaussian_rule(dim, order=None, mc_samples=DEFAULT_MC_SAMPLES, rng=None):
    """Tensorized Gauss-Hermite for moderate dim, Monte-Carlo beyond it."""
    if dim >= MC_DIM_THRESHOLD:
        if rng is None:
            rng = np.random.default_rng(0)
        return monte_carlo_rule(dim, mc_samples, rng)
    if order is None:
        order = DEFAULT_GH_ORDER.get(dim, 6)
    return gauss_hermite_rule(dim, order)


def grid_rule(bounds, n_points):
    """Gauss-Legendre product rule on a box; weights carry the volume element.

    ``bounds`` is a sequence of (lo, hi) pairs, ``n_points`` the per-axis node
    count (int or sequence).
    """
    bounds = [(float(lo), float(hi)) for lo, hi in np.atleast_2d(bounds)]
    dim = len(bounds)
    if np.isscalar(n_points):
        n_points = [int(n_points)] * dim
    axes, wts = [], []
    for (lo, hi), n in zip(bounds, n_points):
        x, w = leggauss(n)
        axes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        wts.append(0.5 * (hi - lo) * w)
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
    weights = np.ones(nodes.shape[0])
    for g in np.meshgrid(*wts, indexing="ij"):
        weights = weights * g.reshape(-1)
    return QuadratureRule(nodes, weights, kind="lebesgue")


def uniform_grid_rule(bounds, n_points):
    """Trapezoid product rule on a uniform grid (useful for plotting/fitting)."""
    bounds = [(float(lo), float(hi)) for lo, hi in np.atleast_2d(bounds)]
    dim = len(bounds)
    if np.isscalar(n_points):
        n_points = [int(n_points)] * dim
    axes, wts = [], []
    for (lo, hi), n in zip(bounds, n_points):
        x = np.linspace(lo, hi, n)
        w = np.full(n, (hi - lo) / (n - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        axes.append(x)
        wts.append(w)
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
    weights = np.ones(nodes.shape[0])
    for g in np.meshgrid(*wts, indexing="ij"):
        weights = weights * g.reshape(-1)
    return QuadratureRule(nodes, weights, kind="lebesgue")


def map_to_kernel(rule, kernel):
    """Affinely map a Gaussian rule onto the kernel's own measure.

    Returns mapped nodes plus the scalar mass factor that converts the rule's
    unit-Gaussian expectation into the kernel's (possibly unnormalized)
    integral: ``int v(y) k(y) dy  =  mass * sum_q w_q v(y_q)``.
    """
    if rule.kind != "gaussian":
        raise ValueError("map_to_kernel needs a Gaussian-measure rule")
    cov = kernel.covariance
    chol = np.linalg.cholesky(cov)
    nodes = kernel.mean[None, :] + rule.nodes @ chol.T
    mass = float(kernel.term_batch().mass()[0])
    return nodes, mass


def quadrature_integral(v, rule, kernel):
    """Approximate ``int v(y) kernel(y) dy`` with a Gaussian-measure rule."""
    nodes, mass = map_to_kernel(rule, kernel)
    vals = np.asarray(v(nodes), dtype=float)
    return mass * float(rule.weights @ vals)
