"""Parametric decoder families: evaluation, parameter Jacobians, initial fits.

Every decoder maps a flat parameter vector to a scalar field and exposes the
basis of parameter-derivative fields spanning the tangent space at that
parameter. Mixture decoders produce closed-form fields; networks produce
callable fields evaluated pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .fields import (
    CallableBasis,
    GaussPolyBasis,
    GaussPolyField,
    LinearCombinationField,
)
from .kernels import LOG_2PI, TermBatch
from .networks import MLPField, TanhMLP

# Jitter added to L L^T so every Cholesky-chart covariance stays invertible.
CHOL_JITTER = 1e-8


class LayoutError(ValueError):
    """Parameter vector does not match the decoder layout."""


def _check_layout(decoder, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (decoder.n,):
        raise LayoutError(
            f"{decoder.kind} expects {decoder.n} parameters, got {theta.shape}"
        )
    return theta


def _sym_quad_poly(Q, scale=1.0, dim=None):
    """Polynomial dict for x^T Q x with symmetric Q (centered coordinates)."""
    dim = Q.shape[0] if dim is None else dim
    poly = {}
    for w in range(dim):
        for z in range(w, dim):
            coeff = Q[w, z] * (1.0 if w == z else 2.0) * scale
            if coeff == 0.0:
                continue
            alpha = [0] * dim
            alpha[w] += 1
            alpha[z] += 1
            poly[tuple(alpha)] = np.array([coeff])
    return poly


class ExponentialMixtureDecoder:
    """Sum of amplitude-scaled bare Gaussian exponentials.

    Charts: ``full`` stores each unit as (c, S row-major, mu) with S
    symmetrized before use; ``iso`` stores (c, s, mu) with S = s * Id.
    """

    kind = "exponential-mixture"

    def __init__(self, dim, p, chart="full"):
        self.dim = int(dim)
        self.p = int(p)
        if chart not in ("full", "iso"):
            raise ValueError(f"unknown chart {chart!r}")
        self.chart = chart
        self.unit_size = 1 + (self.dim**2 if chart == "full" else 1) + self.dim
        self.n = self.p * self.unit_size

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "p": self.p, "chart": self.chart}

    def unpack(self, theta):
        theta = _check_layout(self, theta)
        units = theta.reshape(self.p, self.unit_size)
        c = units[:, 0]
        if self.chart == "full":
            S = units[:, 1 : 1 + self.dim**2].reshape(self.p, self.dim, self.dim)
            S = 0.5 * (S + np.swapaxes(S, 1, 2))
            mu = units[:, 1 + self.dim**2 :]
            return c, S, mu
        s = units[:, 1]
        mu = units[:, 2:]
        return c, s, mu

    def pack(self, c, S, mu):
        units = np.zeros((self.p, self.unit_size))
        units[:, 0] = c
        if self.chart == "full":
            units[:, 1 : 1 + self.dim**2] = np.reshape(S, (self.p, -1))
            units[:, 1 + self.dim**2 :] = mu
        else:
            units[:, 1] = S
            units[:, 2:] = mu
        return units.reshape(-1)

    def _unit_batch(self, c, S, mu):
        zero = (0,) * self.dim
        if self.chart == "iso":
            return TermBatch(mu, {zero: c}, np.zeros(self.p), iso_prec=S)
        return TermBatch(mu, {zero: c}, np.zeros(self.p), prec=S)

    def decode(self, theta):
        c, S, mu = self.unpack(theta)
        return GaussPolyField(self._unit_batch(c, S, mu))

    def jacobian_basis(self, theta):
        c, S, mu = self.unpack(theta)
        zero = (0,) * self.dim
        batches = []
        for i in range(self.p):
            mu_i = mu[i][None, :]
            if self.chart == "iso":
                kw = {"iso_prec": np.array([S[i]])}
                A = S[i] * np.eye(self.dim)
            else:
                kw = {"prec": S[i][None, :, :]}
                A = S[i]
            # d/dc: the bare unit
            batches.append(TermBatch(mu_i, {zero: np.array([1.0])}, [0.0], **kw))
            if self.chart == "iso":
                # d/ds: -0.5 c |x - mu|^2 * unit
                poly = {}
                for k in range(self.dim):
                    alpha = [0] * self.dim
                    alpha[k] = 2
                    poly[tuple(alpha)] = np.array([-0.5 * c[i]])
                batches.append(TermBatch(mu_i, poly, [0.0], **kw))
            else:
                # d/dS_ab: -0.5 c (x-mu)_a (x-mu)_b * unit
                for a in range(self.dim):
                    for b in range(self.dim):
                        alpha = [0] * self.dim
                        alpha[a] += 1
                        alpha[b] += 1
                        batches.append(
                            TermBatch(mu_i, {tuple(alpha): np.array([-0.5 * c[i]])}, [0.0], **kw)
                        )
            # d/dmu_a: c (A (x-mu))_a * unit
            for a in range(self.dim):
                poly = {}
                for b in range(self.dim):
                    if A[a, b] == 0.0:
                        continue
                    alpha = [0] * self.dim
                    alpha[b] = 1
                    poly[tuple(alpha)] = np.array([c[i] * A[a, b]])
                if not poly:
                    poly = {zero: np.array([0.0])}
                batches.append(TermBatch(mu_i, poly, [0.0], **kw))
        from .kernels import concatenate

        offsets = np.cumsum([0] + [b.n for b in batches])
        return GaussPolyBasis(concatenate(batches), offsets)

    def ic_units_theta(self):
        """All units stacked on the standard bump: c = 1/p, S = Id, mu = 0."""
        c = np.full(self.p, 1.0 / self.p)
        mu = np.zeros((self.p, self.dim))
        if self.chart == "iso":
            return self.pack(c, np.ones(self.p), mu)
        S = np.broadcast_to(np.eye(self.dim), (self.p, self.dim, self.dim))
        return self.pack(c, S, mu)

    def random_theta(self, rng, scale=1.0):
        c = rng.uniform(0.3, 1.5, self.p) * np.sign(rng.uniform(-1, 1, self.p))
        mu = rng.uniform(-scale, scale, (self.p, self.dim))
        if self.chart == "iso":
            return self.pack(c, rng.uniform(0.5, 2.0, self.p), mu)
        S = []
        for _ in range(self.p):
            B = rng.uniform(-0.4, 0.4, (self.dim, self.dim))
            S.append(np.eye(self.dim) * rng.uniform(0.6, 1.8) + 0.5 * (B + B.T))
        return self.pack(c, np.array(S), mu)


class GaussianMixtureDecoder:
    """Sum of normalized Gaussian densities with Cholesky-factor covariances.

    Each unit stores (c, tril(L) row-wise, mu) and decodes the covariance as
    L L^T + jitter * Id, so every parameter vector is admissible.
    """

    kind = "gaussian-mixture"

    def __init__(self, dim, p):
        self.dim = int(dim)
        self.p = int(p)
        self.tril_size = self.dim * (self.dim + 1) // 2
        self.unit_size = 1 + self.tril_size + self.dim
        self.n = self.p * self.unit_size
        self._tril_idx = np.tril_indices(self.dim)

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "p": self.p}

    def unpack(self, theta):
        theta = _check_layout(self, theta)
        units = theta.reshape(self.p, self.unit_size)
        c = units[:, 0]
        L = np.zeros((self.p, self.dim, self.dim))
        L[:, self._tril_idx[0], self._tril_idx[1]] = units[:, 1 : 1 + self.tril_size]
        mu = units[:, 1 + self.tril_size :]
        return c, L, mu

    def pack(self, c, L, mu):
        units = np.zeros((self.p, self.unit_size))
        units[:, 0] = c
        units[:, 1 : 1 + self.tril_size] = L[:, self._tril_idx[0], self._tril_idx[1]]
        units[:, 1 + self.tril_size :] = mu
        return units.reshape(-1)

    def covariances(self, theta):
        _, L, _ = self.unpack(theta)
        return L @ np.swapaxes(L, 1, 2) + CHOL_JITTER * np.eye(self.dim)

    def decode(self, theta):
        c, L, mu = self.unpack(theta)
        cov = L @ np.swapaxes(L, 1, 2) + CHOL_JITTER * np.eye(self.dim)
        prec = np.linalg.inv(cov)
        sign, logdet = np.linalg.slogdet(cov)
        log_norms = -0.5 * (self.dim * LOG_2PI + logdet)
        zero = (0,) * self.dim
        return GaussPolyField(TermBatch(mu, {zero: c}, log_norms, prec=prec))

    def jacobian_basis(self, theta):
        c, L, mu = self.unpack(theta)
        cov = L @ np.swapaxes(L, 1, 2) + CHOL_JITTER * np.eye(self.dim)
        prec = np.linalg.inv(cov)
        sign, logdet = np.linalg.slogdet(cov)
        log_norms = -0.5 * (self.dim * LOG_2PI + logdet)
        zero = (0,) * self.dim
        batches = []
        for i in range(self.p):
            mu_i = mu[i][None, :]
            P = prec[i]
            kw = {"prec": P[None, :, :]}
            ln = [log_norms[i]]
            # d/dc: the normalized unit itself
            batches.append(TermBatch(mu_i, {zero: np.array([1.0])}, ln, **kw))
            # d/dL_ab through Sigma = L L^T + jitter
            for a, b in zip(*self._tril_idx):
                E = np.zeros((self.dim, self.dim))
                E[a, b] = 1.0
                dSigma = E @ L[i].T + L[i] @ E.T
                Q = 0.5 * (P @ dSigma @ P)
                poly = _sym_quad_poly(Q, scale=c[i], dim=self.dim)
                const = -0.5 * np.trace(P @ dSigma) * c[i]
                poly[zero] = poly.get(zero, np.array([0.0])) + const
                batches.append(TermBatch(mu_i, poly, ln, **kw))
            # d/dmu_a: c (P (x - mu))_a
            for a in range(self.dim):
                poly = {}
                for b in range(self.dim):
                    if P[a, b] == 0.0:
                        continue
                    alpha = [0] * self.dim
                    alpha[b] = 1
                    poly[tuple(alpha)] = np.array([c[i] * P[a, b]])
                batches.append(TermBatch(mu_i, poly, ln, **kw))
        from .kernels import concatenate

        offsets = np.cumsum([0] + [b.n for b in batches])
        return GaussPolyBasis(concatenate(batches), offsets)

    def random_theta(self, rng, scale=1.0):
        c = rng.uniform(0.3, 1.5, self.p) * np.sign(rng.uniform(-1, 1, self.p))
        L = np.zeros((self.p, self.dim, self.dim))
        for i in range(self.p):
            L[i][self._tril_idx] = rng.uniform(-0.8, 0.8, self.tril_size)
            L[i][np.diag_indices(self.dim)] = rng.uniform(0.6, 1.5, self.dim)
        mu = rng.uniform(-scale, scale, (self.p, self.dim))
        return self.pack(c, L, mu)


class LinearDecoder:
    """Fixed basis fields combined linearly by the parameters."""

    kind = "linear"

    def __init__(self, basis_fields):
        self.basis_fields = list(basis_fields)
        self.n = len(self.basis_fields)
        self.dim = self.basis_fields[0].dim
        self._closed = all(isinstance(f, GaussPolyField) for f in self.basis_fields)
        if self._closed:
            self._basis = GaussPolyBasis.from_fields(self.basis_fields)

    def describe(self):
        return {"kind": self.kind, "n": self.n, "dim": self.dim}

    def decode(self, theta):
        theta = _check_layout(self, theta)
        if self._closed:
            return self._basis.combine(theta)
        return LinearCombinationField(theta, self.basis_fields)

    def jacobian_basis(self, theta):
        _check_layout(self, theta)
        if self._closed:
            return self._basis
        return CallableBasis(
            self.n,
            self.dim,
            lambda pts: np.stack([f(pts) for f in self.basis_fields], axis=1),
        )

    def random_theta(self, rng, scale=1.0):
        return rng.uniform(-scale, scale, self.n)


class PolynomialDecoder:
    """Multi-index polynomial combinations theta^nu of fixed basis fields."""

    kind = "polynomial"

    def __init__(self, n, exponents, basis_fields):
        self.n = int(n)
        self.exponents = [tuple(e) for e in exponents]
        if any(len(e) != self.n for e in self.exponents):
            raise ValueError("every multi-index must have length n")
        self.basis_fields = list(basis_fields)
        if len(self.basis_fields) != len(self.exponents):
            raise ValueError("one basis field per multi-index required")
        self.dim = self.basis_fields[0].dim
        self._closed = all(isinstance(f, GaussPolyField) for f in self.basis_fields)
        if self._closed:
            self._basis = GaussPolyBasis.from_fields(self.basis_fields)

    def describe(self):
        return {"kind": self.kind, "n": self.n, "exponents": self.exponents}

    def _monomials(self, theta):
        return np.array(
            [np.prod([t**e for t, e in zip(theta, nu)]) for nu in self.exponents]
        )

    def _monomial_grads(self, theta):
        grads = np.zeros((self.n, len(self.exponents)))
        for j, nu in enumerate(self.exponents):
            for i in range(self.n):
                if nu[i] == 0:
                    continue
                factors = [
                    theta[k] ** (e - 1 if k == i else e) for k, e in enumerate(nu)
                ]
                grads[i, j] = nu[i] * np.prod(factors)
        return grads

    def decode(self, theta):
        theta = _check_layout(self, theta)
        w = self._monomials(theta)
        if self._closed:
            return self._basis.combine(w)
        return LinearCombinationField(w, self.basis_fields)

    def jacobian_basis(self, theta):
        theta = _check_layout(self, theta)
        grads = self._monomial_grads(theta)
        if self._closed:
            return GaussPolyBasis.from_fields(
                [self._basis.combine(grads[i]) for i in range(self.n)]
            )
        return CallableBasis(
            self.n,
            self.dim,
            lambda pts: np.stack([f(pts) for f in self.basis_fields], axis=1) @ grads.T,
        )

    def random_theta(self, rng, scale=1.0):
        return rng.uniform(-scale, scale, self.n)


class TanhMLPDecoder:
    """Feed-forward tanh network decoder."""

    kind = "tanh-mlp"

    def __init__(self, dim, widths):
        self.net = TanhMLP(dim, widths)
        self.dim = self.net.dim
        self.widths = self.net.widths
        self.n = self.net.n

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "widths": self.widths}

    def decode(self, theta):
        theta = _check_layout(self, theta)
        return MLPField(self.net, theta)

    def jacobian_basis(self, theta):
        theta = _check_layout(self, theta)
        return CallableBasis(
            self.n, self.dim, lambda pts: self.net.param_jacobian(theta, pts)
        )

    def init_theta(self, rng):
        return self.net.init_theta(rng)

    def random_theta(self, rng, scale=1.0):
        return self.net.init_theta(rng) * scale


DECODER_KINDS = {
    "exponential-mixture": ExponentialMixtureDecoder,
    "gaussian-mixture": GaussianMixtureDecoder,
    "tanh-mlp": TanhMLPDecoder,
    "linear": LinearDecoder,
    "polynomial": PolynomialDecoder,
}


# ---------------------------------------------------------------------------
# initial condition fitting
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    theta: np.ndarray
    residual: float
    converged: bool
    nfev: int


def fit_initial(decoder, u0, rule, theta0, max_nfev=400):
    """Weighted least-squares fit of the decoder to u0 on a quadrature rule.

    Minimizes the rule-discretized L2 distance with a damped Gauss-Newton
    solver (analytic Jacobian from the decoder's tangent basis). Returns the
    best iterate with a non-convergence flag instead of raising.
    """
    nodes = rule.nodes
    sqw = np.sqrt(np.maximum(rule.weights, 0.0))
    target = np.asarray(u0(nodes), dtype=float)
    theta0 = np.asarray(theta0, dtype=float)

    def resid(theta):
        return sqw * (decoder.decode(theta)(nodes) - target)

    def jac(theta):
        return sqw[:, None] * decoder.jacobian_basis(theta).eval_matrix(nodes)

    method = "lm" if nodes.shape[0] >= decoder.n else "trf"
    sol = least_squares(resid, theta0, jac=jac, method=method, max_nfev=max_nfev)
    residual = float(np.linalg.norm(sol.fun))
    return FitResult(
        theta=sol.x, residual=residual, converged=bool(sol.status > 0), nfev=sol.nfev
    )


def mass_quantile_positions(values, nodes, weights, m):
    """Positions at mass quantiles of |values| over a one-dimensional grid."""
    mass = np.abs(values) * weights
    if mass.sum() <= 0:
        idx = np.linspace(0, len(nodes) - 1, m).astype(int)
        return nodes[idx]
    order = np.argsort(nodes[:, 0])
    cdf = np.cumsum(mass[order])
    cdf = cdf / cdf[-1]
    levels = (np.arange(m) + 0.5) / m
    picks = np.searchsorted(cdf, levels)
    return nodes[order[np.clip(picks, 0, len(nodes) - 1)]]


def seed_mixture_theta(decoder, u0, rule, rng, jitter=0.0):
    """Quantile-of-mass seeding for mixture decoders on a fit grid."""
    nodes = rule.nodes
    values = np.asarray(u0(nodes), dtype=float)
    if decoder.dim == 1:
        pos = mass_quantile_positions(values, nodes, rule.weights, decoder.p)
    else:
        mass = np.abs(values) * rule.weights
        probs = mass / mass.sum() if mass.sum() > 0 else None
        picks = rng.choice(len(nodes), size=decoder.p, replace=False, p=probs)
        pos = nodes[picks]
    if jitter > 0:
        pos = pos + jitter * rng.standard_normal(pos.shape)
    # width heuristic: neighbour spacing of the seeded centers
    if decoder.p > 1:
        dists = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        gaps = np.clip(dists.min(axis=1), 1e-2, None)
    else:
        spread = np.sqrt(np.average(
            np.sum((nodes - np.average(nodes, axis=0, weights=np.abs(values) * rule.weights)) ** 2, axis=1),
            weights=np.abs(values) * rule.weights,
        ))
        gaps = np.array([max(spread, 1e-2)])
    s = 1.0 / (2.0 * gaps**2)
    c = 0.5 * np.asarray(u0(pos), dtype=float).reshape(-1)
    if isinstance(decoder, ExponentialMixtureDecoder):
        if decoder.chart == "iso":
            return decoder.pack(c, s, pos)
        S = s[:, None, None] * np.eye(decoder.dim)
        return decoder.pack(c, S, pos)
    if isinstance(decoder, GaussianMixtureDecoder):
        L = np.zeros((decoder.p, decoder.dim, decoder.dim))
        for i in range(decoder.p):
            L[i] = np.eye(decoder.dim) / np.sqrt(s[i])
        # normalized units: rescale amplitudes by the unit's peak height
        peak = (2 * np.pi) ** (-decoder.dim / 2) * s ** (decoder.dim / 2)
        return decoder.pack(c / peak, L, pos)
    raise ValueError(f"no mixture seeding for decoder kind {decoder.kind}")


def initial_guesses(decoder, u0, rule, rng, restarts=1):
    """Deterministic stream of fit starting points for a decoder kind."""
    for r in range(restarts):
        if isinstance(decoder, TanhMLPDecoder):
            yield decoder.init_theta(rng)
        else:
            yield seed_mixture_theta(decoder, u0, rule, rng, jitter=0.0 if r == 0 else 0.3)


def split_largest_units(decoder, theta, target_p):
    """Grow a fitted mixture to ``target_p`` units by halving its largest ones.

    Each split replaces a unit by two identical copies with half the
    amplitude, so the decoded field is unchanged and the copies span no new
    tangent directions. Returns the enlarged decoder and parameter vector.
    """
    if not isinstance(decoder, ExponentialMixtureDecoder):
        raise ValueError("unit splitting applies to exponential mixtures")
    extra = target_p - decoder.p
    if extra < 0:
        raise ValueError("target unit count is smaller than the fitted mixture")
    if extra == 0:
        return decoder, np.asarray(theta, dtype=float)
    c, S, mu = decoder.unpack(theta)
    order = np.argsort(-np.abs(c))
    c = list(c)
    S = list(S)
    mu = list(mu)
    for i in range(extra):
        j = order[i % decoder.p]
        c[j] = c[j] / 2.0
        c.append(c[j])
        S.append(S[j])
        mu.append(mu[j])
    grown = ExponentialMixtureDecoder(decoder.dim, target_p, chart=decoder.chart)
    return grown, grown.pack(np.array(c), np.array(S), np.array(mu))
