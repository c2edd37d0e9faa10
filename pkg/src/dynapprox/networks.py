"""Small fully-connected tanh networks with hand-rolled derivatives.

The networks are tiny (tens of parameters), so reverse-mode differentiation and
the spatial-derivative chain rules are written out directly in numpy instead of
pulling in an autodiff framework.
"""

from __future__ import annotations

import numpy as np

from .fields import CallableField, CapabilityError


class TanhMLP:
    """Feed-forward tanh network R^d -> R with linear, bias-free output."""

    def __init__(self, dim, widths):
        self.dim = int(dim)
        self.widths = [int(w) for w in widths]
        if not self.widths:
            raise ValueError("at least one hidden layer is required")
        sizes = [self.dim] + self.widths
        self.layer_shapes = [(sizes[i + 1], sizes[i]) for i in range(len(self.widths))]
        self.n = sum(o * i + o for o, i in self.layer_shapes) + self.widths[-1]

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n:
            raise ValueError(f"expected {self.n} parameters, got {theta.size}")
        layers = []
        pos = 0
        for out, inp in self.layer_shapes:
            w = theta[pos : pos + out * inp].reshape(out, inp)
            pos += out * inp
            b = theta[pos : pos + out]
            pos += out
            layers.append((w, b))
        w_out = theta[pos:]
        return layers, w_out

    def init_theta(self, rng):
        """Uniform(-1, 1) entries scaled by 1/sqrt(fan-in), layer by layer."""
        parts = []
        for out, inp in self.layer_shapes:
            scale = 1.0 / np.sqrt(inp)
            parts.append(rng.uniform(-1.0, 1.0, out * inp) * scale)
            parts.append(rng.uniform(-1.0, 1.0, out) * scale)
        parts.append(rng.uniform(-1.0, 1.0, self.widths[-1]) / np.sqrt(self.widths[-1]))
        return np.concatenate(parts)

    def _forward(self, theta, points):
        layers, w_out = self.unpack(theta)
        h = points
        activations = [h]
        for w, b in layers:
            h = np.tanh(h @ w.T + b)
            activations.append(h)
        return activations, layers, w_out

    def forward(self, theta, points):
        activations, _, w_out = self._forward(theta, points)
        return activations[-1] @ w_out

    def forward_1d_derivatives(self, theta, points, order=2):
        """Value plus first/second x-derivatives for dim == 1; returns tuple."""
        if self.dim != 1:
            raise CapabilityError("second derivatives implemented for dim=1 only")
        activations, layers, w_out = self._forward(theta, points)
        h = activations[0]
        dh = np.ones_like(h)
        d2h = np.zeros_like(h)
        for (w, b), h_next in zip(layers, activations[1:]):
            dz = dh @ w.T
            d2z = d2h @ w.T
            sech2 = 1.0 - h_next**2
            dh = sech2 * dz
            d2h = sech2 * d2z - 2.0 * h_next * sech2 * dz**2
            h = h_next
        u = activations[-1] @ w_out
        du = dh @ w_out
        if order == 1:
            return u, du
        d2u = d2h @ w_out
        return u, du, d2u

    def forward_gradient(self, theta, points):
        """Value and spatial gradient (K, d) for any dim."""
        activations, layers, w_out = self._forward(theta, points)
        K = points.shape[0]
        jac = np.broadcast_to(np.eye(self.dim), (K, self.dim, self.dim))
        for (w, b), h_next in zip(layers, activations[1:]):
            jac = np.einsum("oi,kid->kod", w, jac)
            jac = (1.0 - h_next**2)[:, :, None] * jac
        u = activations[-1] @ w_out
        grad = np.einsum("o,kod->kd", w_out, jac)
        return u, grad

    def param_jacobian(self, theta, points):
        """d u(x_k) / d theta for every point; returns (K, n)."""
        activations, layers, w_out = self._forward(theta, points)
        K = points.shape[0]
        grads = [None] * (2 * len(layers) + 1)
        grads[-1] = activations[-1]  # w_out slot
        delta = np.broadcast_to(w_out, (K, w_out.size)) * (1.0 - activations[-1] ** 2)
        for li in range(len(layers) - 1, -1, -1):
            w, _ = layers[li]
            h_prev = activations[li]
            grads[2 * li] = delta[:, :, None] * h_prev[:, None, :]
            grads[2 * li + 1] = delta
            if li > 0:
                delta = (delta @ w) * (1.0 - h_prev**2)
        flat = [g.reshape(K, -1) for g in grads]
        return np.concatenate(flat, axis=1)


class MLPField(CallableField):
    """ScalarField view of a network at fixed parameters."""

    def __init__(self, net, theta):
        self.net = net
        self.theta = np.asarray(theta, dtype=float)
        super().__init__(fn=lambda pts: net.forward(self.theta, pts), dim=net.dim)

    def gradient(self, x):
        pts, single = _pts(x, self.dim)
        _, grad = self.net.forward_gradient(self.theta, pts)
        return grad[0] if single else grad

    def laplacian(self, x):
        if self.dim != 1:
            raise CapabilityError("MLP Laplacian implemented for dim=1 only")
        return self.dx(x, order=2)

    def dx(self, x, order=1):
        pts, single = _pts(x, self.dim)
        out = self.net.forward_1d_derivatives(self.theta, pts, order=min(order, 2))
        if order > 2:
            raise CapabilityError("MLP derivatives available up to order 2")
        vals = out[order]
        return float(vals[0]) if single else vals


def _pts(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1), True
    if x.ndim == 1:
        if dim == 1:
            return x.reshape(-1, 1), False
        return x.reshape(1, -1), True
    return x, False
