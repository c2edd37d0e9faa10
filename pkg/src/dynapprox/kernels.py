"""Gaussian kernels and exact integrals of polynomial-times-Gaussian products.

Everything here works on "terms" of the form

    t(x) = p(x - mu) * exp(c - 0.5 * (x - mu)^T P (x - mu)),

where ``p`` is a small multivariate polynomial stored in centered form. Sums of
such terms are closed under spatial differentiation and pointwise products, and
their integrals over R^d have closed forms built from the completed-square
product Gaussian and central moments. This is what makes mixture decoders,
Gaussian observations and all their cross inner products exactly computable.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)

# Relative eigenvalue floor below which a covariance is rejected as non-SPD.
SPD_RTOL = 1e-12

# Closed forms are exact for any degree; the cap only bounds the cost of the
# moment recursion. Callers hitting it should integrate by quadrature.
MAX_CLOSED_FORM_DEGREE = 8


class InvalidKernelError(ValueError):
    """Covariance is not symmetric positive definite (or shapes disagree)."""


class DegreeError(ValueError):
    """Polynomial degree exceeds the supported closed-form bound."""


# ---------------------------------------------------------------------------
# multi-index polynomials
#
# A polynomial is a dict mapping multi-index tuples (one integer per
# coordinate) to coefficient arrays. Coefficients broadcast over term batches.
# ---------------------------------------------------------------------------


def poly_degree(poly):
    return max((sum(a) for a in poly), default=0)


def poly_multiply(pa, pb):
    out = {}
    for a, ca in pa.items():
        for b, cb in pb.items():
            key = tuple(x + y for x, y in zip(a, b))
            c = ca * cb
            if key in out:
                out[key] = out[key] + c
            else:
                out[key] = c
    return out


def poly_axis_derivative(poly, axis):
    out = {}
    for a, c in poly.items():
        if a[axis] == 0:
            continue
        key = a[:axis] + (a[axis] - 1,) + a[axis + 1 :]
        term = a[axis] * c
        if key in out:
            out[key] = out[key] + term
        else:
            out[key] = term
    return out


@lru_cache(maxsize=None)
def _sub_multi_indices(alpha):
    """All beta <= alpha with the product-of-binomials weight."""
    from math import comb

    betas = [((), 1)]
    for a_k in alpha:
        betas = [
            (b + (j,), w * comb(a_k, j)) for b, w in betas for j in range(a_k + 1)
        ]
    return betas


def poly_shift(poly, delta):
    """Re-center ``p(y + delta)`` as a polynomial in ``y``.

    ``delta`` has shape ``(..., d)``; coefficients broadcast against it, so the
    result maps multi-indices to arrays of shape ``(...)``.
    """
    out = {}
    for alpha, c in poly.items():
        if sum(alpha) == 0:
            out[alpha] = out.get(alpha, 0) + c * np.ones(delta.shape[:-1])
            continue
        for beta, w in _sub_multi_indices(alpha):
            shift_pow = np.ones(delta.shape[:-1])
            for k, (a_k, b_k) in enumerate(zip(alpha, beta)):
                if a_k - b_k:
                    shift_pow = shift_pow * delta[..., k] ** (a_k - b_k)
            term = (w * c) * shift_pow
            if beta in out:
                out[beta] = out[beta] + term
            else:
                out[beta] = term
    return out


# ---------------------------------------------------------------------------
# Gaussian central moments
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _pairings(indices):
    """Perfect matchings of a sorted index tuple (Isserlis' theorem)."""
    if not indices:
        return [()]
    first, rest = indices[0], indices[1:]
    out = []
    for j in range(len(rest)):
        pair = (first, rest[j])
        remaining = rest[:j] + rest[j + 1 :]
        for sub in _pairings(remaining):
            out.append((pair,) + sub)
    return out


@lru_cache(maxsize=None)
def _odd_double_factorials(alpha):
    from math import prod

    def df(k):
        return prod(range(k - 1, 0, -2)) if k > 1 else 1

    return prod(df(a) for a in alpha)


def central_moment_full(cov, alpha):
    """E[(X - m)^alpha] for X ~ N(m, cov), batched over leading axes of cov."""
    deg = sum(alpha)
    if deg % 2 == 1:
        return np.zeros(cov.shape[:-2])
    if deg == 0:
        return np.ones(cov.shape[:-2])
    if deg > MAX_CLOSED_FORM_DEGREE:
        raise DegreeError(f"moment degree {deg} above closed-form cap")
    indices = tuple(
        k for k, a_k in enumerate(alpha) for _ in range(a_k)
    )
    total = np.zeros(cov.shape[:-2])
    for pairing in _pairings(indices):
        prod = np.ones(cov.shape[:-2])
        for i, j in pairing:
            prod = prod * cov[..., i, j]
        total = total + prod
    return total


def central_moment_iso(var, alpha):
    """Central moments for isotropic covariance ``var * Id``."""
    deg = sum(alpha)
    if any(a % 2 for a in alpha):
        return np.zeros(np.shape(var))
    if deg > MAX_CLOSED_FORM_DEGREE:
        raise DegreeError(f"moment degree {deg} above closed-form cap")
    return _odd_double_factorials(alpha) * np.asarray(var) ** (deg // 2)


# ---------------------------------------------------------------------------
# term batches
# ---------------------------------------------------------------------------


class TermBatch:
    """A batch of polynomial-times-Gaussian terms sharing one coordinate dim.

    Parameters
    ----------
    means : (N, d) array
    poly : dict of multi-index -> (N,) coefficient array, centered at each mean
    log_norms : (N,) array added to the exponent
    iso_prec : (N,) array when every precision is a multiple of the identity
    prec : (N, d, d) array otherwise
    """

    def __init__(self, means, poly, log_norms, iso_prec=None, prec=None):
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.n, self.dim = self.means.shape
        self.log_norms = self._vec(log_norms)
        if (iso_prec is None) == (prec is None):
            raise ValueError("exactly one of iso_prec/prec must be given")
        self.iso_prec = None if iso_prec is None else self._vec(iso_prec)
        self.prec = None if prec is None else np.asarray(prec, dtype=float)
        self.poly = {tuple(a): self._vec(c) for a, c in poly.items()}

    def _vec(self, values):
        arr = np.asarray(values, dtype=float)
        if arr.shape == (self.n,):
            return arr
        return np.broadcast_to(arr, (self.n,)).copy()

    @property
    def is_iso(self):
        return self.iso_prec is not None

    def prec_full(self):
        if self.prec is not None:
            return self.prec
        eye = np.eye(self.dim)
        return self.iso_prec[:, None, None] * eye

    def degree(self):
        return poly_degree(self.poly)

    def scaled(self, factors):
        """Multiply term polynomials by per-term scalars."""
        factors = np.broadcast_to(np.asarray(factors, dtype=float), (self.n,))
        poly = {a: c * factors for a, c in self.poly.items()}
        return TermBatch(
            self.means, poly, self.log_norms, iso_prec=self.iso_prec, prec=self.prec
        )

    def translated(self, shift):
        """Shift every term mean by the same vector."""
        shift = np.asarray(shift, dtype=float)
        return TermBatch(
            self.means + shift,
            self.poly,
            self.log_norms,
            iso_prec=self.iso_prec,
            prec=self.prec,
        )

    # -- evaluation ---------------------------------------------------------

    def term_values(self, points):
        """Evaluate every term at every point; returns (N, K)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        diff = points[None, :, :] - self.means[:, None, :]  # (N, K, d)
        if self.is_iso:
            quad = self.iso_prec[:, None] * np.einsum("nkd,nkd->nk", diff, diff)
        else:
            quad = np.einsum("nkd,nde,nke->nk", diff, self.prec, diff)
        poly_val = np.zeros(diff.shape[:2])
        for alpha, c in self.poly.items():
            mono = np.ones(diff.shape[:2])
            for k, a_k in enumerate(alpha):
                if a_k:
                    mono = mono * diff[..., k] ** a_k
            poly_val = poly_val + c[:, None] * mono
        # cap keeps transiently non-integrable iterates (fit line searches)
        # finite instead of overflowing
        exponent = np.minimum(self.log_norms[:, None] - 0.5 * quad, 700.0)
        return poly_val * np.exp(exponent)

    def evaluate(self, points):
        return self.term_values(points).sum(axis=0)

    # -- calculus -----------------------------------------------------------

    def axis_derivative(self, axis):
        """d/dx_axis applied to every term."""
        new_poly = dict(poly_axis_derivative(self.poly, axis))
        if self.is_iso:
            extra = {axis: -self.iso_prec}
        else:
            extra = {b: -self.prec[:, axis, b] for b in range(self.dim)}
        for alpha, c in self.poly.items():
            for b, pc in extra.items():
                key = alpha[:b] + (alpha[b] + 1,) + alpha[b + 1 :]
                term = c * pc
                if key in new_poly:
                    new_poly[key] = new_poly[key] + term
                else:
                    new_poly[key] = term
        return TermBatch(
            self.means, new_poly, self.log_norms,
            iso_prec=self.iso_prec, prec=self.prec,
        )

    def laplacian(self):
        out = None
        for axis in range(self.dim):
            part = self.axis_derivative(axis).axis_derivative(axis)
            out = part if out is None else concatenate([out, part])
        return _merge_compatible(out) if self.dim > 1 else out

    def mass(self):
        """Integral of each term over R^d; returns (N,)."""
        if self.is_iso:
            cov_like = 1.0 / self.iso_prec
            logdet = self.dim * np.log(self.iso_prec)
            moments = {
                a: central_moment_iso(cov_like, a) for a in self.poly
            }
        else:
            cov = np.linalg.inv(self.prec)
            sign, logdet = np.linalg.slogdet(self.prec)
            if np.any(sign <= 0):
                raise InvalidKernelError("non-integrable term (precision not PD)")
            moments = {a: central_moment_full(cov, a) for a in self.poly}
        total = np.zeros(self.n)
        for alpha, c in self.poly.items():
            total = total + c * moments[alpha]
        return total * np.exp(
            self.log_norms + 0.5 * self.dim * LOG_2PI - 0.5 * logdet
        )


def concatenate(batches):
    batches = [b for b in batches if b.n > 0]
    dim = batches[0].dim
    all_iso = all(b.is_iso for b in batches)
    means = np.concatenate([b.means for b in batches])
    log_norms = np.concatenate([b.log_norms for b in batches])
    if all_iso:
        iso = np.concatenate([b.iso_prec for b in batches])
        prec = None
    else:
        iso = None
        prec = np.concatenate([b.prec_full() for b in batches])
    poly = {}
    offsets = np.cumsum([0] + [b.n for b in batches])
    total = offsets[-1]
    for i, b in enumerate(batches):
        for alpha, c in b.poly.items():
            if alpha not in poly:
                poly[alpha] = np.zeros(total)
            poly[alpha][offsets[i] : offsets[i + 1]] = c
    return TermBatch(means, poly, log_norms, iso_prec=iso, prec=prec)


def _merge_compatible(batch):
    """Collapse terms that share identical kernels (means/precisions/norms)."""
    if batch.n <= 1:
        return batch
    # Only merges the exact-duplicate layout produced by laplacian(); keyed on
    # bytes so float noise never falsely merges distinct kernels.
    keys = {}
    order = []
    for i in range(batch.n):
        key = (
            batch.means[i].tobytes(),
            batch.log_norms[i].tobytes(),
            batch.iso_prec[i].tobytes() if batch.is_iso else batch.prec[i].tobytes(),
        )
        if key not in keys:
            keys[key] = len(order)
            order.append(i)
    if len(order) == batch.n:
        return batch
    idx = np.array(order)
    poly = {}
    for alpha, c in batch.poly.items():
        merged = np.zeros(len(order))
        for i in range(batch.n):
            key = (
                batch.means[i].tobytes(),
                batch.log_norms[i].tobytes(),
                batch.iso_prec[i].tobytes() if batch.is_iso else batch.prec[i].tobytes(),
            )
            merged[keys[key]] += c[i]
        poly[alpha] = merged
    return TermBatch(
        batch.means[idx],
        poly,
        batch.log_norms[idx],
        iso_prec=batch.iso_prec[idx] if batch.is_iso else None,
        prec=None if batch.is_iso else batch.prec[idx],
    )


# ---------------------------------------------------------------------------
# pairwise closed forms
# ---------------------------------------------------------------------------


def _pair_geometry(a, b):
    """Completed-square data for every term pair of two batches.

    Requires only an invertible pair precision, so it also covers products
    that are valid functions without being integrable. Returns
    ``(pair_log, mc, pair_prec, cov_like)`` with ``pair_log = log_norms_a +
    log_norms_b - r/2`` of shape (Na, Nb), ``mc`` the completed-square
    center, ``pair_prec`` the summed precisions ((Na, Nb) scalar when both
    sides are isotropic, (Na, Nb, d, d) otherwise) and ``cov_like`` its
    inverse.
    """
    if a.dim != b.dim:
        raise InvalidKernelError(f"dimension mismatch: {a.dim} vs {b.dim}")
    dmu = a.means[:, None, :] - b.means[None, :, :]
    if a.is_iso and b.is_iso:
        pa = a.iso_prec[:, None]
        pb = b.iso_prec[None, :]
        p = pa + pb
        if np.any(p == 0):
            raise InvalidKernelError("degenerate pair precision")
        mc = (
            pa[..., None] * a.means[:, None, :] + pb[..., None] * b.means[None, :, :]
        ) / p[..., None]
        r = (pa * pb / p) * np.einsum("abd,abd->ab", dmu, dmu)
        pair_prec = p
        cov_like = 1.0 / p
    else:
        Pa = a.prec_full()[:, None]
        Pb = b.prec_full()[None, :]
        P = Pa + Pb
        try:
            cov_like = np.linalg.inv(P)
        except np.linalg.LinAlgError as exc:
            raise InvalidKernelError("degenerate pair precision") from exc
        rhs = np.einsum("abde,ae->abd", np.broadcast_to(Pa, P.shape), a.means) + np.einsum(
            "abde,be->abd", np.broadcast_to(Pb, P.shape), b.means
        )
        mc = np.einsum("abde,abe->abd", cov_like, rhs)
        cross = np.einsum(
            "abde,abef,abfg->abdg",
            np.broadcast_to(Pa, P.shape), cov_like, np.broadcast_to(Pb, P.shape),
        )
        r = np.einsum("abd,abde,abe->ab", dmu, cross, dmu)
        pair_prec = P
    pair_log = a.log_norms[:, None] + b.log_norms[None, :] - 0.5 * r
    return pair_log, mc, pair_prec, cov_like


def _product_geometry(a, b):
    """Integral form of the pair geometry: adds the Gaussian measure factor.

    Raises when any pair product fails to be integrable (non-positive pair
    precision).
    """
    pair_log, mc, pair_prec, cov_like = _pair_geometry(a, b)
    d = a.dim
    if a.is_iso and b.is_iso:
        if np.any(pair_prec <= 0):
            raise InvalidKernelError("pair product is not integrable")
        logdet = d * np.log(pair_prec)
    else:
        sign, logdet = np.linalg.slogdet(pair_prec)
        if np.any(sign <= 0):
            raise InvalidKernelError("pair product is not integrable")
    log_gauss = pair_log + 0.5 * d * LOG_2PI - 0.5 * logdet
    return log_gauss, mc, cov_like


def _trivial_poly(batch):
    zero = (0,) * batch.dim
    return set(batch.poly) == {zero}


def _paired_polys(a, b, mc):
    """Both term polynomials re-centered at the product-Gaussian means.

    Coefficients are expanded to the pair grid (Na, Nb) before shifting so
    that broadcasting lines the a-side up with rows and the b-side with
    columns.
    """
    pa = poly_shift(
        {al: c[:, None] for al, c in a.poly.items()}, mc - a.means[:, None, :]
    )
    pb = poly_shift(
        {al: c[None, :] for al, c in b.poly.items()}, mc - b.means[None, :, :]
    )
    return pa, pb


def pairwise_integrals(a, b):
    """Exact integrals of all pairwise term products; returns (Na, Nb)."""
    log_gauss, mc, cov_like = _product_geometry(a, b)
    iso = a.is_iso and b.is_iso
    if _trivial_poly(a) and _trivial_poly(b):
        zero = (0,) * a.dim
        coeff = a.poly[zero][:, None] * b.poly[zero][None, :]
        return coeff * np.exp(log_gauss)
    pa, pb = _paired_polys(a, b, mc)
    prod = poly_multiply(pa, pb)
    total = np.zeros(log_gauss.shape)
    for alpha, c in prod.items():
        if sum(alpha) % 2 == 1:
            continue
        if iso:
            total = total + c * central_moment_iso(cov_like, alpha)
        else:
            total = total + c * central_moment_full(cov_like, alpha)
    return total * np.exp(log_gauss)


def multiply(a, b):
    """Pointwise product of two batches as a new batch with Na*Nb terms.

    Works for any invertible pair precision, including transiently
    non-integrable products (those only fail later, if something actually
    integrates them).
    """
    pair_log, mc, pair_prec, _ = _pair_geometry(a, b)
    d = a.dim
    if a.is_iso and b.is_iso:
        iso_new = np.broadcast_to(pair_prec, pair_log.shape).reshape(-1)
        prec_new = None
    else:
        iso_new = None
        prec_new = pair_prec.reshape(-1, d, d)
    pa, pb = _paired_polys(a, b, mc)
    prod = poly_multiply(pa, pb)
    poly = {alpha: c.reshape(-1) for alpha, c in prod.items()}
    return TermBatch(
        mc.reshape(-1, d), poly, pair_log.reshape(-1),
        iso_prec=iso_new, prec=prec_new,
    )


# ---------------------------------------------------------------------------
# user-facing kernels
# ---------------------------------------------------------------------------


def _validate_spd(matrix):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidKernelError("covariance must be a square matrix")
    if not np.allclose(matrix, matrix.T, rtol=0, atol=1e-12 * max(1.0, np.abs(matrix).max())):
        raise InvalidKernelError("covariance must be symmetric")
    eigvals = np.linalg.eigvalsh(matrix)
    if eigvals[0] <= SPD_RTOL * max(eigvals[-1], 0.0) or eigvals[0] <= 0:
        raise InvalidKernelError("covariance is not positive definite")
    return matrix


@dataclass(frozen=True)
class GaussianKernel:
    """One Gaussian bump: normalized density or bare exponential.

    ``matrix`` is the covariance for a normalized kernel and the precision-like
    quadratic-form matrix for an unnormalized one, matching how the two
    parametrizations are used by the decoders.
    """

    mean: np.ndarray
    matrix: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim == 0:
            mat = mat * np.eye(self.mean.size)
        if self.normalized:
            mat = _validate_spd(mat)
        else:
            mat = 0.5 * (mat + mat.T)
        if mat.shape[0] != self.mean.size:
            raise InvalidKernelError("mean/covariance dimensions disagree")
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self):
        return self.mean.size

    @property
    def covariance(self):
        return self.matrix if self.normalized else np.linalg.inv(self.matrix)

    @property
    def precision(self):
        return np.linalg.inv(self.matrix) if self.normalized else self.matrix

    def log_norm(self):
        if not self.normalized:
            return 0.0
        sign, logdet = np.linalg.slogdet(self.matrix)
        return -0.5 * (self.dim * LOG_2PI + logdet)

    def term_batch(self, amplitude=1.0):
        prec = self.precision
        eye = np.eye(self.dim)
        off = prec - prec[0, 0] * eye
        iso = np.abs(off).max() == 0.0
        kwargs = (
            {"iso_prec": np.array([prec[0, 0]])}
            if iso
            else {"prec": prec[None, :, :]}
        )
        return TermBatch(
            self.mean[None, :],
            {(0,) * self.dim: np.array([float(amplitude)])},
            np.array([self.log_norm()]),
            **kwargs,
        )

    def __call__(self, x):
        return gaussian_eval(self, x)


def gaussian_eval(kernel, x):
    """Evaluate the kernel at one point or a (K, d) stack of points."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    pts = np.atleast_2d(x if x.ndim else x[None])
    if pts.shape[-1] != kernel.dim:
        raise InvalidKernelError("point dimension does not match kernel")
    vals = kernel.term_batch().evaluate(pts)
    return float(vals[0]) if single else vals


def gaussian_l2_inner(a, b):
    """Exact L2(R^d) inner product of two Gaussian kernels."""
    return float(pairwise_integrals(a.term_batch(), b.term_batch())[0, 0])


def gaussian_poly_inner(a, b, poly):
    """Exact integral of ``p(x) a(x) b(x)`` for a multivariate polynomial.

    ``poly`` maps multi-index tuples to float coefficients in absolute
    coordinates. Degrees above the closed-form cap raise ``DegreeError`` and
    should be handled by quadrature.
    """
    deg = poly_degree(poly)
    if deg > MAX_CLOSED_FORM_DEGREE:
        raise DegreeError(f"polynomial degree {deg} not supported in closed form")
    batch_a = a.term_batch()
    # express the absolute polynomial centered at a's mean
    centered = poly_shift(
        {tuple(k): np.array([float(v)]) for k, v in poly.items()},
        batch_a.means[:, None, :],
    )
    poly_a = {alpha: c[:, 0] for alpha, c in centered.items()}
    batch_a = TermBatch(
        batch_a.means,
        poly_a,
        batch_a.log_norms,
        iso_prec=batch_a.iso_prec,
        prec=batch_a.prec,
    )
    return float(pairwise_integrals(batch_a, b.term_batch())[0, 0])
