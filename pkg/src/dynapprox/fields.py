"""Scalar fields over R^d and bases of such fields.

Fields are evaluatable maps with optional analytic spatial derivatives. The
closed-form family (`GaussPolyField`) wraps a kernel term batch and stays
closed under derivatives and products; everything else goes through
`CallableField` with whatever derivative evaluators the constructor attaches.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class CapabilityError(RuntimeError):
    """The field does not carry the requested derivative evaluator."""


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1), True
    if x.ndim == 1:
        if dim == 1:
            return x.reshape(-1, 1), False
        return x.reshape(1, -1), True
    return x, False


class ScalarField:
    """Base interface; subclasses fill in what they can evaluate."""

    dim = 1

    def __call__(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise CapabilityError(f"{type(self).__name__} has no gradient evaluator")

    def laplacian(self, x):
        raise CapabilityError(f"{type(self).__name__} has no Laplacian evaluator")

    def dx(self, x, order=1):
        """Pure spatial derivative of given order, one-dimensional fields only."""
        raise CapabilityError(f"{type(self).__name__} has no d/dx evaluator")


class GaussPolyField(ScalarField):
    """Sum of polynomial-times-Gaussian terms; all derivatives are exact."""

    def __init__(self, batch):
        self.batch = batch
        self.dim = batch.dim
        self._dx_cache = {}

    @classmethod
    def from_kernel(cls, kernel, amplitude=1.0):
        return cls(kernel.term_batch(amplitude))

    def __call__(self, x):
        pts, single = _as_points(x, self.dim)
        vals = self.batch.evaluate(pts)
        return float(vals[0]) if single else vals

    def _derived(self, key, maker):
        if key not in self._dx_cache:
            self._dx_cache[key] = GaussPolyField(maker())
        return self._dx_cache[key]

    def derivative_field(self, axis):
        return self._derived(("d", axis), lambda: self.batch.axis_derivative(axis))

    def laplacian_field(self):
        return self._derived(("lap",), self.batch.laplacian)

    def gradient(self, x):
        pts, single = _as_points(x, self.dim)
        out = np.stack(
            [self.derivative_field(a)(pts) for a in range(self.dim)], axis=-1
        )
        return out[0] if single else out

    def laplacian(self, x):
        return self.laplacian_field()(x)

    def dx(self, x, order=1):
        if self.dim != 1:
            raise CapabilityError("dx is one-dimensional only")
        field = self
        for _ in range(order):
            field = field.derivative_field(0)
        return field(x)

    def dx_field(self, order=1):
        field = self
        for _ in range(order):
            field = field.derivative_field(0)
        return field

    def __mul__(self, other):
        if isinstance(other, GaussPolyField):
            return GaussPolyField(kernels.multiply(self.batch, other.batch))
        return GaussPolyField(self.batch.scaled(float(other)))

    __rmul__ = __mul__

    def __add__(self, other):
        if not isinstance(other, GaussPolyField):
            return NotImplemented
        return GaussPolyField(kernels.concatenate([self.batch, other.batch]))

    def __sub__(self, other):
        return self + (-1.0) * other

    def integral(self):
        return float(self.batch.mass().sum())

    def inner(self, other):
        """Exact L2(R^d) inner product with another closed-form field."""
        return float(kernels.pairwise_integrals(self.batch, other.batch).sum())

    def norm_l2(self):
        return float(np.sqrt(max(self.inner(self), 0.0)))


class CallableField(ScalarField):
    """Field defined by plain evaluators (vectorized over point stacks)."""

    def __init__(self, fn, dim=1, grad_fn=None, lap_fn=None, dx_fns=None):
        self.fn = fn
        self.dim = dim
        self.grad_fn = grad_fn
        self.lap_fn = lap_fn
        self.dx_fns = dx_fns or {}

    def __call__(self, x):
        pts, single = _as_points(x, self.dim)
        vals = np.asarray(self.fn(pts), dtype=float)
        return float(vals[0]) if single else vals

    def gradient(self, x):
        if self.grad_fn is None:
            raise CapabilityError("no gradient evaluator attached")
        pts, single = _as_points(x, self.dim)
        out = np.asarray(self.grad_fn(pts), dtype=float)
        return out[0] if single else out

    def laplacian(self, x):
        if self.lap_fn is None:
            raise CapabilityError("no Laplacian evaluator attached")
        pts, single = _as_points(x, self.dim)
        out = np.asarray(self.lap_fn(pts), dtype=float)
        return float(out[0]) if single else out

    def dx(self, x, order=1):
        if order not in self.dx_fns:
            raise CapabilityError(f"no order-{order} derivative attached")
        pts, single = _as_points(x, self.dim)
        out = np.asarray(self.dx_fns[order](pts), dtype=float)
        return float(out[0]) if single else out


class LinearCombinationField(ScalarField):
    """Weighted sum of arbitrary fields; derivatives delegate columnwise."""

    def __init__(self, coeffs, fields):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.fields = list(fields)
        self.dim = self.fields[0].dim

    def __call__(self, x):
        pts, single = _as_points(x, self.dim)
        vals = sum(c * f(pts) for c, f in zip(self.coeffs, self.fields))
        return float(vals[0]) if single else vals

    def gradient(self, x):
        pts, single = _as_points(x, self.dim)
        out = sum(c * f.gradient(pts) for c, f in zip(self.coeffs, self.fields))
        return out[0] if single else out

    def laplacian(self, x):
        pts, single = _as_points(x, self.dim)
        out = sum(c * f.laplacian(pts) for c, f in zip(self.coeffs, self.fields))
        return float(out[0]) if single else out

    def dx(self, x, order=1):
        pts, single = _as_points(x, self.dim)
        out = sum(c * f.dx(pts, order) for c, f in zip(self.coeffs, self.fields))
        return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# bases
# ---------------------------------------------------------------------------


class GaussPolyBasis:
    """n closed-form fields stored as one flat term batch with field offsets."""

    def __init__(self, batch, offsets):
        self.batch = batch
        self.offsets = np.asarray(offsets, dtype=int)
        self.n = len(self.offsets) - 1
        self.dim = batch.dim
        self._index_cache = None

    @classmethod
    def from_fields(cls, fields):
        batches = [f.batch for f in fields]
        offsets = np.cumsum([0] + [b.n for b in batches])
        return cls(kernels.concatenate(batches), offsets)

    def field(self, i):
        sl = slice(self.offsets[i], self.offsets[i + 1])
        b = self.batch
        return GaussPolyField(
            kernels.TermBatch(
                b.means[sl],
                {a: c[sl] for a, c in b.poly.items()},
                b.log_norms[sl],
                iso_prec=b.iso_prec[sl] if b.is_iso else None,
                prec=None if b.is_iso else b.prec[sl],
            )
        )

    def fields(self):
        return [self.field(i) for i in range(self.n)]

    def _field_index(self):
        if self._index_cache is None:
            idx = np.zeros(self.batch.n, dtype=int)
            for i in range(self.n):
                idx[self.offsets[i] : self.offsets[i + 1]] = i
            self._index_cache = idx
        return self._index_cache

    def reduce_terms(self, term_matrix):
        """Sum a (n_terms, ...) array into per-field rows (n, ...)."""
        out = np.zeros((self.n,) + term_matrix.shape[1:])
        np.add.at(out, self._field_index(), term_matrix)
        return out

    def combine(self, coeffs):
        """The field sum_i coeffs[i] * field_i as a single closed-form field."""
        coeffs = np.asarray(coeffs, dtype=float)
        return GaussPolyField(self.batch.scaled(coeffs[self._field_index()]))

    def eval_matrix(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        vals = self.batch.term_values(points)  # (n_terms, K)
        return self.reduce_terms(vals).T

    def gram(self):
        """Exact L2(R^d) Gramian of the basis fields."""
        raw = kernels.pairwise_integrals(self.batch, self.batch)
        idx = self._field_index()
        out = np.zeros((self.n, self.n))
        np.add.at(out, (idx[:, None], idx[None, :]), raw)
        return 0.5 * (out + out.T)

    def inner_with_field(self, field):
        """Vector of exact inner products <field_i, field>."""
        raw = kernels.pairwise_integrals(self.batch, field.batch).sum(axis=1)
        return self.reduce_terms(raw)


class CallableBasis:
    """Basis available only through joint pointwise evaluation."""

    def __init__(self, n, dim, matrix_fn):
        self.n = n
        self.dim = dim
        self._matrix_fn = matrix_fn

    def eval_matrix(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(self._matrix_fn(points), dtype=float)

    def fields(self):
        def column(i):
            return CallableField(
                lambda pts, i=i: self.eval_matrix(pts)[:, i], dim=self.dim
            )

        return [column(i) for i in range(self.n)]
