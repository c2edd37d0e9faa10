"""PDE right-hand sides, exact solutions, and the double-well energy.

Right-hand sides applied to closed-form fields stay closed-form (products,
derivatives and polynomial factors of Gaussians); applied to anything else
they compose the field's own derivative evaluators pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm

from .fields import CallableField, CapabilityError, GaussPolyField
from .kernels import TermBatch, concatenate


@dataclass(frozen=True)
class KdV:
    """One-dimensional third-order dispersive equation with quadratic advection."""

    name = "kdv"
    dim = 1


@dataclass(frozen=True)
class AllenCahn:
    """Reaction-diffusion with cubic reaction on a bounded interval."""

    name = "allen-cahn"
    dim = 1
    a: float = 5e-3
    b: float = -1.0
    domain: tuple = (0.0, 2.0 * np.pi)


@dataclass(frozen=True)
class Burgers:
    """Viscous advection in one dimension."""

    name = "burgers"
    dim = 1
    alpha: float = 0.01
    domain: tuple = (-3.0, 5.0)


@dataclass(frozen=True)
class FokkerPlanck:
    """Linear-drift advection-diffusion on R^d."""

    A: np.ndarray = None
    b: np.ndarray = None
    a_diff: float = 1.0
    name = "fokker-planck"

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        if self.a_diff <= 0:
            raise ValueError("diffusion coefficient must be positive")

    @property
    def dim(self):
        return self.A.shape[0]

    def one_sided_lipschitz(self):
        """Monotonicity constant of the generator in the ambient space."""
        return float(-0.5 * np.trace(self.A))


@dataclass(frozen=True)
class Transport:
    """Pure transport along a time-dependent, space-constant vector field."""

    w1: np.ndarray = None
    w2: np.ndarray = None
    name = "transport"

    def __post_init__(self):
        object.__setattr__(self, "w1", np.atleast_1d(np.asarray(self.w1, dtype=float)))
        object.__setattr__(self, "w2", np.atleast_1d(np.asarray(self.w2, dtype=float)))

    @classmethod
    def standard(cls, dim):
        return cls(
            w1=np.arange(1.0, dim + 1.0),
            w2=2.0 + (2.0 / dim) * np.arange(dim, dtype=float),
        )

    @property
    def dim(self):
        return self.w1.size

    def velocity(self, t):
        return self.w1 * (np.sin(self.w2 * np.pi * t) + 1.25)

    def drift(self, t):
        return self.w1 * (
            (1.0 - np.cos(self.w2 * np.pi * t)) / (self.w2 * np.pi) + 1.25 * t
        )

    def one_sided_lipschitz(self):
        return 0.0


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------


def _linear_factor_times(batch, coeffs, const):
    """Multiply a batch by the absolute-coordinate polynomial const + coeffs.x."""
    dim = batch.dim
    abs_poly = {(0,) * dim: float(const)}
    for j, cj in enumerate(coeffs):
        if cj == 0.0:
            continue
        alpha = [0] * dim
        alpha[j] = 1
        abs_poly[tuple(alpha)] = float(cj)
    from .kernels import poly_multiply, poly_shift

    centered = poly_shift(
        {a: np.full(batch.n, c) for a, c in abs_poly.items()}, batch.means
    )
    new_poly = poly_multiply(batch.poly, centered)
    return TermBatch(
        batch.means, new_poly, batch.log_norms,
        iso_prec=batch.iso_prec, prec=batch.prec,
    )


def rhs_apply(model, v, t=0.0):
    """The model's generator applied to a field, as a new field.

    Closed-form inputs yield closed-form outputs wherever the generator is
    polynomial in the field and its derivatives; otherwise the result is a
    pointwise composition of the input's derivative evaluators and raises a
    capability error if those are missing.
    """
    closed = isinstance(v, GaussPolyField)
    if isinstance(model, KdV):
        if closed:
            advect = (-6.0) * (v * v.dx_field(1))
            return advect + (-1.0) * v.dx_field(3)
        _require(v, dx_orders=(1, 3))
        return CallableField(
            lambda pts: -6.0 * v(pts) * v.dx(pts, 1) - v.dx(pts, 3), dim=1
        )
    if isinstance(model, Burgers):
        if closed:
            return (-1.0) * (v * v.dx_field(1)) + model.alpha * v.dx_field(2)
        _require(v, dx_orders=(1, 2))
        return CallableField(
            lambda pts: -v(pts) * v.dx(pts, 1) + model.alpha * v.dx(pts, 2), dim=1
        )
    if isinstance(model, AllenCahn):
        a, b = model.a, model.b
        if closed:
            cubic = v * v * v
            return a * v.laplacian_field() + b * (v + (-1.0) * cubic)
        return CallableField(
            lambda pts: a * _lap(v, pts) + b * (v(pts) - v(pts) ** 3), dim=v.dim
        )
    if isinstance(model, FokkerPlanck):
        A, b_vec, a = model.A, model.b, model.a_diff
        if closed:
            parts = [a * v.laplacian_field(), (-np.trace(A)) * v]
            for axis in range(model.dim):
                dv = v.derivative_field(axis)
                parts.append(
                    GaussPolyField(
                        _linear_factor_times(dv.batch, -A[axis], -b_vec[axis])
                    )
                )
            return GaussPolyField(concatenate([p.batch for p in parts]))
        def fn(pts):
            grad = v.gradient(pts)
            w = pts @ A.T + b_vec
            return -np.einsum("kd,kd->k", w, grad) - np.trace(A) * v(pts) + a * _lap(v, pts)
        return CallableField(fn, dim=model.dim)
    if isinstance(model, Transport):
        w = model.velocity(t)
        if closed:
            parts = [(-w[axis]) * v.derivative_field(axis) for axis in range(model.dim) if w[axis] != 0.0]
            return GaussPolyField(concatenate([p.batch for p in parts]))
        return CallableField(
            lambda pts: -np.einsum("d,kd->k", w, v.gradient(pts)), dim=model.dim
        )
    raise ValueError(f"unknown model {model!r}")


def _lap(v, pts):
    return v.laplacian(pts)


def _require(v, dx_orders=()):
    for order in dx_orders:
        try:
            v.dx(np.zeros((1, 1)), order)
        except CapabilityError:
            raise CapabilityError(
                f"{type(v).__name__} lacks the order-{order} derivative this model needs"
            )


# ---------------------------------------------------------------------------
# exact solutions
# ---------------------------------------------------------------------------


class KdVExact:
    """Two-soliton solution as the second log-derivative of a tau function.

    The tau function is a four-term exponential sum; all x-derivatives of its
    logarithm follow from one recursion, which gives the solution and its
    first three spatial derivatives in closed form.
    """

    dim = 1

    def __init__(self):
        self.k = np.array([1.0, np.sqrt(5.0)])
        self.delta = np.array([0.0, 10.73])
        self.interaction = ((1.0 - np.sqrt(5.0)) / (1.0 + np.sqrt(5.0))) ** 2

    def _tau_derivatives(self, t, x, order):
        """F and its x-derivatives up to ``order``, rescaled by exp(-max)."""
        x = np.asarray(x, dtype=float)
        k1, k2 = self.k
        rates = np.array([k1, k2, k1 + k2])
        etas = np.stack(
            [
                k1 * x - k1**3 * t + self.delta[0],
                k2 * x - k2**3 * t + self.delta[1],
                (k1 * x - k1**3 * t + self.delta[0])
                + (k2 * x - k2**3 * t + self.delta[1]),
            ]
        )
        coeffs = np.array([1.0, 1.0, self.interaction])
        shift = np.maximum(etas.max(axis=0), 0.0)
        E = np.exp(etas - shift[None, :])
        base = np.exp(-shift)
        F = [base + coeffs @ E]
        for j in range(1, order + 1):
            F.append((coeffs * rates**j) @ E)
        return F

    def _log_derivatives(self, t, x, order):
        F = self._tau_derivatives(t, x, order)
        g = [None]
        for k in range(order):
            total = F[k + 1].copy()
            for j in range(k):
                total -= comb(k, j) * g[1 + j] * F[k - j]
            g.append(total / F[0])
        return g

    def __call__(self, t, x):
        g = self._log_derivatives(t, np.asarray(x, dtype=float).reshape(-1), 2)
        return 2.0 * g[2]

    def field(self, t):
        def deriv(order):
            def fn(pts):
                g = self._log_derivatives(t, pts[:, 0], order + 2)
                return 2.0 * g[order + 2]

            return fn

        return CallableField(
            deriv(0),
            dim=1,
            grad_fn=lambda pts: deriv(1)(pts)[:, None],
            lap_fn=deriv(2),
            dx_fns={1: deriv(1), 2: deriv(2), 3: deriv(3)},
        )


class FokkerPlanckExact:
    """Gaussian solution of the linear-drift advection-diffusion flow.

    The mean solves the drift ODE; the covariance solves the Lyapunov equation
    driven by twice the diffusion coefficient.
    """

    def __init__(self, model):
        self.model = model
        self.dim = model.dim

    @lru_cache(maxsize=512)
    def mean_cov(self, t):
        A, b, a = self.model.A, self.model.b, self.model.a_diff
        d = self.dim
        t = float(t)
        block = np.zeros((d + 1, d + 1))
        block[:d, :d] = A
        block[:d, d] = b
        mean = expm(block * t)[:d, d]
        if t == 0.0:
            return mean, np.eye(d)
        eAt = expm(A * t)
        integral, _ = quad_vec(
            lambda s: expm(-s * A) @ expm(-s * A.T), 0.0, t, epsabs=1e-12
        )
        cov = eAt @ (np.eye(d) + 2.0 * a * integral) @ eAt.T
        return mean, 0.5 * (cov + cov.T)

    def field(self, t):
        mean, cov = self.mean_cov(float(t))
        prec = np.linalg.inv(cov)
        sign, logdet = np.linalg.slogdet(cov)
        batch = TermBatch(
            mean[None, :],
            {(0,) * self.dim: np.array([1.0])},
            np.array([-0.5 * logdet]),
            prec=0.5 * (prec + prec.T)[None, :, :],
        )
        return GaussPolyField(batch)

    def sampling(self, t):
        """Mean and covariance of the solution normalized to a probability."""
        return self.mean_cov(float(t))

    def mass(self):
        return (2.0 * np.pi) ** (self.dim / 2.0)


class TransportExact:
    """Translated standard bump along the accumulated drift."""

    def __init__(self, model):
        self.model = model
        self.dim = model.dim

    def field(self, t):
        drift = self.model.drift(float(t))
        batch = TermBatch(
            drift[None, :],
            {(0,) * self.dim: np.array([1.0])},
            np.array([0.0]),
            iso_prec=np.array([1.0]),
        )
        return GaussPolyField(batch)

    def sampling(self, t):
        return self.model.drift(float(t)), np.eye(self.dim)

    def mass(self):
        return (2.0 * np.pi) ** (self.dim / 2.0)


def standard_bump(dim):
    """The shared initial condition exp(-|x|^2 / 2) of the R^d experiments."""
    batch = TermBatch(
        np.zeros((1, dim)),
        {(0,) * dim: np.array([1.0])},
        np.array([0.0]),
        iso_prec=np.array([1.0]),
    )
    return GaussPolyField(batch)


def allen_cahn_initial(x):
    x = np.asarray(x)
    first = np.exp(-np.sin((x - 1.5) / 2.0) ** 2)
    second = np.exp(-np.sin((x - 2.0 * np.pi + 1.5) / 2.0) ** 2)
    return first - second


def burgers_initial(x):
    x = np.asarray(x)
    return np.where((x > 0.0) & (x < 1.0), 1.0, 0.0)


def kdv_initial(x):
    return KdVExact()(0.0, x)


def allen_cahn_energy(v, rule, a, b):
    """Quadrature value of the gradient-plus-double-well energy on a rule."""
    pts = rule.nodes
    grad = v.gradient(pts)
    if grad.ndim == 1:
        grad = grad[:, None]
    vals = v(pts)
    density = 0.5 * a * np.einsum("kd,kd->k", grad, grad) + 0.25 * b * (vals**2 - 1.0) ** 2
    return float(rule.weights @ density)
