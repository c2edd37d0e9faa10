"""Evolution of the observation locations to maximize the stability constant.

The default mode is per-time-step gradient ascent on the squared constant with
backtracking (monotone by construction). A second-order mode integrates the
velocity-penalized dynamics with explicit Euler steps instead.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import qmc

from .stability import beta_report, grad_beta_sq


@dataclass
class AscentParams:
    inner_iters: int = 5
    step_size: float = 1e-2
    grad_tol: float = 1e-8
    max_halvings: int = 20


@dataclass
class EulerLagrangeParams:
    lambda_vel: float = 1.0
    ascent_sign: float = 1.0  # +1 pushes the constant up, -1 integrates descent

    def __post_init__(self):
        if self.lambda_vel <= 0:
            raise ValueError("velocity penalty must be positive")


@dataclass
class SamplerState:
    obs: object  # ObservationSet
    xdot: np.ndarray | None = None


@dataclass
class AscentResult:
    obs: object
    report: object
    L: np.ndarray
    G: np.ndarray
    iterations: int
    fd_fallbacks: int


def _evaluate(obs, basis, M, cutoff):
    L = obs.observe_basis(basis)
    G = obs.gramian()
    return L, G, beta_report(M, L, G=G, cutoff=cutoff)


def _fd_grad(obs, basis, M, cutoff, h=1e-6):
    """One-sided finite differences of the squared constant (degenerate gap)."""
    _, _, rep0 = _evaluate(obs, basis, M, cutoff)
    grad = np.zeros_like(obs.locations)
    for k in range(obs.m):
        for a in range(obs.dim):
            X = obs.locations.copy()
            X[k, a] += h
            _, _, rep = _evaluate(obs.with_locations(X), basis, M, cutoff)
            grad[k, a] = (rep.beta_sq - rep0.beta_sq) / h
    return grad


def optimize_locations(obs, basis, M, params, cutoff=1e-8):
    """Backtracking gradient ascent on the squared stability constant.

    Runs at most ``inner_iters`` accepted steps; a step is halved until the
    constant does not decrease, so the output never has a smaller constant
    than the input.
    """
    L, G, report = _evaluate(obs, basis, M, cutoff)
    fd_fallbacks = 0
    accepted = 0
    for _ in range(params.inner_iters):
        grad, _, exact = grad_beta_sq(
            obs, basis, M, L=L, G=G, cutoff=cutoff, report=report
        )
        if not exact:
            grad = _fd_grad(obs, basis, M, cutoff)
            fd_fallbacks += 1
        gmax = np.abs(grad).max() if grad.size else 0.0
        if gmax <= params.grad_tol:
            break
        step = params.step_size
        moved = False
        for _ in range(params.max_halvings + 1):
            candidate = obs.with_locations(obs.locations + step * grad)
            Lc, Gc, rep_c = _evaluate(candidate, basis, M, cutoff)
            if rep_c.beta_sq >= report.beta_sq:
                obs, L, G, report = candidate, Lc, Gc, rep_c
                moved = True
                accepted += 1
                break
            step *= 0.5
        if not moved:
            break
    return AscentResult(
        obs=obs, report=report, L=L, G=G, iterations=accepted, fd_fallbacks=fd_fallbacks
    )


def euler_lagrange_step(state, dt, basis, M, params, cutoff=1e-8):
    """Explicit Euler step of the velocity-penalized location dynamics."""
    obs = state.obs
    xdot = state.xdot
    if xdot is None:
        xdot = np.zeros_like(obs.locations)
    grad, report, exact = grad_beta_sq(obs, basis, M, cutoff=cutoff)
    if not exact:
        grad = _fd_grad(obs, basis, M, cutoff)
    xdot = xdot + (dt / params.lambda_vel) * params.ascent_sign * grad
    locations = obs.locations + dt * xdot
    return replace(state, obs=obs.with_locations(locations), xdot=xdot), report


# ---------------------------------------------------------------------------
# initial placement
# ---------------------------------------------------------------------------


def init_locations(u0, m, strategy, dim, rng, grid_rule=None, box=None,
                   gaussian_mean=None, gaussian_cov=None):
    """Initial observation locations before the first ascent pass.

    Strategies: ``mass-quantile`` places points at quantiles of the field's
    absolute mass over a grid (weighted draws beyond 1-D); ``uniform-box``
    spaces points evenly in a box; ``gaussian`` draws from a given Gaussian
    (the only grid-free option in high dimension).
    """
    if m < 1:
        raise ValueError("need at least one observation")
    if strategy == "mass-quantile":
        if grid_rule is None:
            raise ValueError("mass-quantile needs a grid rule")
        nodes = grid_rule.nodes
        vals = np.abs(np.asarray(u0(nodes), dtype=float))
        mass = vals * grid_rule.weights
        if mass.sum() <= 0:
            return _uniform_box(m, dim, box or _bounds_of(nodes), rng)
        if dim == 1:
            order = np.argsort(nodes[:, 0])
            cdf = np.cumsum(mass[order])
            cdf = cdf / cdf[-1]
            levels = (np.arange(m) + 0.5) / m
            picks = np.searchsorted(cdf, levels)
            return nodes[order[np.clip(picks, 0, len(nodes) - 1)]].copy()
        probs = mass / mass.sum()
        replace_draws = m > len(nodes)
        picks = rng.choice(len(nodes), size=m, replace=replace_draws, p=probs)
        return nodes[picks] + 0.0
    if strategy == "uniform-box":
        if box is None:
            raise ValueError("uniform-box needs bounds")
        return _uniform_box(m, dim, box, rng)
    if strategy == "gaussian":
        mean = np.zeros(dim) if gaussian_mean is None else np.asarray(gaussian_mean, float)
        cov = np.eye(dim) if gaussian_cov is None else np.asarray(gaussian_cov, float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(dim)
        chol = np.linalg.cholesky(cov)
        return mean[None, :] + rng.standard_normal((m, dim)) @ chol.T
    raise ValueError(f"unknown init strategy {strategy!r}")


def _bounds_of(nodes):
    return [(nodes[:, a].min(), nodes[:, a].max()) for a in range(nodes.shape[1])]


def _uniform_box(m, dim, box, rng):
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if dim == 1:
        lo, hi = box[0]
        return np.linspace(lo, hi, m).reshape(-1, 1)
    sampler = qmc.Sobol(d=dim, scramble=False)
    pts = sampler.random(m)
    return box[:, 0] + pts * (box[:, 1] - box[:, 0])
