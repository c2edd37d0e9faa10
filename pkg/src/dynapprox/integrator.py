"""Explicit time stepping of the coupled parameter/location system.

Each step observes the generator through the current windows, solves the
regularized normal equations for the parameter velocity, advances the
parameters with an explicit scheme, and then re-optimizes the observation
locations against the new tangent space. Diagnostics are recorded per step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import quadrature
from .models import allen_cahn_energy, rhs_apply
from .projection import (
    ZNormSpec,
    assemble_system,
    basis_rhs_inner,
    continuous_gramian,
    solve_theta_dot,
)
from .sampling import (
    AscentParams,
    EulerLagrangeParams,
    SamplerState,
    euler_lagrange_step,
    optimize_locations,
)
from .stability import beta_report, error_constants


def rk4_step(f, t, y, dt):
    """One classical fourth-order Runge-Kutta step of y' = f(t, y)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_step(f, t, y, dt):
    return y + dt * f(t, y)


@dataclass
class MetricConfig:
    kind: str = "none"  # grid | mc | none
    bounds: tuple = None
    points: int = 400
    n_samples: int = 100_000
    every: int = 1


@dataclass
class SamplerConfig:
    mode: str = "ascent"  # ascent | euler-lagrange | frozen
    ascent: AscentParams = field(default_factory=AscentParams)
    euler_lagrange: EulerLagrangeParams = field(default_factory=EulerLagrangeParams)


@dataclass
class RunConfig:
    dt: float
    t_final: float
    epsilon: float = 0.0
    scheme: str = "rk4"  # rk4 | euler
    znorm: ZNormSpec = field(default_factory=ZNormSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)
    rank_cutoff: float = 1e-8
    snapshot_target: int = 500
    record_kappa: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.t_final < self.dt:
            raise ValueError("need dt > 0 and t_final >= dt")
        if self.scheme not in ("rk4", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    error: np.ndarray
    beta: np.ndarray
    n_eff: np.ndarray
    sigma_min: np.ndarray
    sigma_max: np.ndarray
    energy: np.ndarray
    kappa: np.ndarray
    spectra: list
    snapshots: list
    meta: dict

    SCALAR_COLUMNS = ("t", "error", "beta", "n_eff", "sigma_min", "sigma_max",
                      "energy", "kappa")

    def scalar_rows(self):
        cols = [getattr(self, name) for name in self.SCALAR_COLUMNS]
        for row in zip(*cols):
            yield row

    def save(self, outdir):
        from pathlib import Path

        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "scalars.csv", "w") as fh:
            fh.write(",".join(self.SCALAR_COLUMNS) + "\n")
            for row in self.scalar_rows():
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        with open(outdir / "spectra.csv", "w") as fh:
            fh.write("t,matrix,index,value\n")
            for t, svals, svals_reg in self.spectra:
                for i, v in enumerate(svals):
                    fh.write(f"{_fmt(t)},raw,{i},{_fmt(v)}\n")
                for i, v in enumerate(svals_reg):
                    fh.write(f"{_fmt(t)},regularized,{i},{_fmt(v)}\n")
        with open(outdir / "snapshots.jsonl", "w") as fh:
            for snap in self.snapshots:
                fh.write(json.dumps(snap) + "\n")
        return outdir


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class Runner:
    """Drives one dynamical-approximation run.

    ``exact`` supplies a ``field(t)`` (plus ``sampling(t)`` for the
    Monte-Carlo metric); ``reference`` supplies ``field(t)`` from a cached
    grid trajectory. ``ambient_rule`` is the Lebesgue rule defining the
    ambient inner products when the decoder has no closed form on R^d;
    ``energy_rule`` switches on the double-well energy diagnostic.
    """

    def __init__(self, model, decoder, cfg, exact=None, reference=None,
                 ambient_rule=None, energy_rule=None, energy_params=None):
        self.model = model
        self.decoder = decoder
        self.cfg = cfg
        self.exact = exact
        self.reference = reference
        self.ambient_rule = ambient_rule
        self.energy_rule = energy_rule
        self.energy_params = energy_params
        seed_seq = np.random.SeedSequence(cfg.seed)
        children = seed_seq.spawn(2)
        self.metric_rng = np.random.default_rng(children[0])
        self._metric_rule = None
        if cfg.metric.kind == "grid":
            if cfg.metric.bounds is None:
                raise ValueError("grid metric needs bounds")
            self._metric_rule = quadrature.uniform_grid_rule(
                cfg.metric.bounds, cfg.metric.points
            )

    # -- single time step ---------------------------------------------------

    def _theta_rhs(self, theta, obs, G, t):
        basis = self.decoder.jacobian_basis(theta)
        L = obs.observe_basis(basis)
        f = rhs_apply(self.model, self.decoder.decode(theta), t)
        z = obs.observe_field(f)
        sys = assemble_system(L, z, G=G, znorm=self.cfg.znorm, epsilon=self.cfg.epsilon)
        theta_dot, _ = solve_theta_dot(sys)
        return theta_dot

    def _advance_theta(self, theta, obs, G, t, first_stage_dot):
        dt = self.cfg.dt
        if self.cfg.scheme == "euler":
            return theta + dt * first_stage_dot

        def f(s, y):
            return self._theta_rhs(y, obs, G, s)

        k1 = first_stage_dot
        k2 = f(t + 0.5 * dt, theta + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, theta + 0.5 * dt * k2)
        k4 = f(t + dt, theta + dt * k3)
        return theta + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    # -- diagnostics ---------------------------------------------------------

    def _measure_error(self, theta, t):
        cfg = self.cfg.metric
        if cfg.kind == "none":
            return np.nan
        approx = self.decoder.decode(theta)
        target = None
        if self.exact is not None:
            target = self.exact.field(t)
        elif self.reference is not None:
            target = self.reference.field(t)
        if target is None:
            return np.nan
        if cfg.kind == "grid":
            return error_metric_grid(approx, target, self._metric_rule)
        mean, cov = self.exact.sampling(t)
        return error_metric_mc(
            approx, target, mean, cov, cfg.n_samples, self.metric_rng
        )

    def _kappa(self, report, theta, t, basis, M):
        if not self.cfg.record_kappa:
            return np.nan
        if report.beta <= 0:
            return np.inf
        f = rhs_apply(self.model, self.decoder.decode(theta), t)
        q = basis_rhs_inner(basis, f, self.ambient_rule)
        if hasattr(f, "inner"):
            fnorm2 = f.inner(f)
        else:
            vals = f(self.ambient_rule.nodes)
            fnorm2 = float(self.ambient_rule.weights @ vals**2)
        lam, U = np.linalg.eigh(M)
        keep = lam > self.cfg.rank_cutoff * lam[-1]
        proj = (U[:, keep].T @ q) ** 2 / lam[keep]
        dist2 = max(fnorm2 - proj.sum(), 0.0)
        constants = error_constants(report.beta, lip=1.0)
        return float(constants.c * np.sqrt(dist2))

    # -- main loop ------------------------------------------------------------

    def run(self, theta0, obs0, progress=None):
        cfg = self.cfg
        n_steps = int(round(cfg.t_final / cfg.dt))
        snap_every = max(1, int(np.ceil(n_steps / cfg.snapshot_target)))
        theta = np.asarray(theta0, dtype=float).copy()
        obs = obs0
        el_state = SamplerState(obs=obs, xdot=None)
        basis = self.decoder.jacobian_basis(theta)
        M = continuous_gramian(basis, self.ambient_rule)

        cols = {name: [] for name in TrajectoryRecord.SCALAR_COLUMNS}
        spectra, snapshots = [], []
        last_error = np.nan

        for k in range(n_steps + 1):
            t = k * cfg.dt
            L = obs.observe_basis(basis)
            G = obs.gramian()
            report = beta_report(M, L, G=G, cutoff=cfg.rank_cutoff)
            f = rhs_apply(self.model, self.decoder.decode(theta), t)
            z = obs.observe_field(f)
            sys = assemble_system(L, z, G=G, znorm=cfg.znorm, epsilon=cfg.epsilon)

            if cfg.metric.kind != "none" and k % cfg.metric.every == 0:
                last_error = self._measure_error(theta, t)
            energy = np.nan
            if self.energy_rule is not None:
                a_en, b_en = self.energy_params
                energy = allen_cahn_energy(
                    self.decoder.decode(theta), self.energy_rule, a_en, b_en
                )
            kappa = self._kappa(report, theta, t, basis, M)

            cols["t"].append(t)
            cols["error"].append(last_error)
            cols["beta"].append(report.beta)
            cols["n_eff"].append(report.n_eff)
            cols["sigma_min"].append(float(sys.spectrum[-1]))
            cols["sigma_max"].append(float(sys.spectrum[0]))
            cols["energy"].append(energy)
            cols["kappa"].append(kappa)
            spectra.append((t, sys.spectrum.copy(), sys.spectrum + cfg.epsilon))
            if k % snap_every == 0 or k == n_steps:
                snapshots.append(
                    {
                        "t": t,
                        "theta": [float(v) for v in theta],
                        "locations": [[float(c) for c in x] for x in obs.locations],
                    }
                )
            if progress is not None:
                progress(k, n_steps, report)
            if k == n_steps:
                break

            theta_dot, _ = solve_theta_dot(sys)
            theta = self._advance_theta(theta, obs, G, t, theta_dot)
            basis = self.decoder.jacobian_basis(theta)
            M = continuous_gramian(basis, self.ambient_rule)
            if cfg.sampler.mode == "ascent":
                result = optimize_locations(
                    obs, basis, M, cfg.sampler.ascent, cutoff=cfg.rank_cutoff
                )
                obs = result.obs
            elif cfg.sampler.mode == "euler-lagrange":
                el_state = SamplerState(obs=obs, xdot=el_state.xdot)
                el_state, _ = euler_lagrange_step(
                    el_state, cfg.dt, basis, M, cfg.sampler.euler_lagrange,
                    cutoff=cfg.rank_cutoff,
                )
                obs = el_state.obs

        arrays = {
            name: np.array(vals, dtype=float if name != "n_eff" else int)
            for name, vals in cols.items()
        }
        return TrajectoryRecord(
            spectra=spectra, snapshots=snapshots, meta={}, **arrays
        )


# ---------------------------------------------------------------------------
# a posteriori machinery
# ---------------------------------------------------------------------------


def gronwall_bound(v0, L, C_values, times):
    """Upper envelope of v' <= L v + C(t) sqrt(v) from sampled C.

    Returns the bound at every entry of ``times`` (cumulative trapezoid of the
    exponentially filtered convolution).
    """
    times = np.asarray(times, dtype=float)
    C_values = np.broadcast_to(np.asarray(C_values, dtype=float), times.shape)
    integrand = C_values * np.exp(-0.5 * L * times)
    inner = np.concatenate(
        [[0.0], np.cumsum(0.5 * np.diff(times) * (integrand[1:] + integrand[:-1]))]
    )
    root = np.sqrt(max(v0, 0.0)) * np.exp(0.5 * L * times) + 0.5 * np.exp(
        0.5 * L * times
    ) * inner
    return root**2


def error_metric_grid(approx, target, rule):
    diff = approx(rule.nodes) - target(rule.nodes)
    return float(np.sqrt(max(rule.weights @ diff**2, 0.0)))


def error_metric_mc(approx, target, mean, cov, n_samples, rng):
    """Unbiased L2-distance estimate with draws from N(mean, cov)."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    chol = np.linalg.cholesky(cov)
    z = rng.standard_normal((n_samples, mean.size))
    pts = mean[None, :] + z @ chol.T
    quad = np.einsum("kd,kd->k", z, z)
    _, logdet = np.linalg.slogdet(cov)
    log_density = -0.5 * (mean.size * np.log(2 * np.pi) + logdet + quad)
    diff = approx(pts) - target(pts)
    est = np.mean(diff**2 * np.exp(-log_density))
    return float(np.sqrt(max(est, 0.0)))
