"""Build and execute experiments from validated configs.

Pipeline per run: build model/decoder, fit or construct the initial
parameters, place and pre-optimize the observation locations, integrate, and
write the diagnostics stream (scalars.csv, spectra.csv, snapshots.jsonl) plus
a manifest that embeds the resolved config.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, metric_seed, rng_stream
from .decoders import (
    ExponentialMixtureDecoder,
    GaussianMixtureDecoder,
    TanhMLPDecoder,
    fit_initial,
    initial_guesses,
    split_largest_units,
)
from .integrator import MetricConfig, RunConfig, Runner, SamplerConfig, TrajectoryRecord
from .models import (
    AllenCahn,
    Burgers,
    FokkerPlanck,
    FokkerPlanckExact,
    KdV,
    KdVExact,
    Transport,
    TransportExact,
    allen_cahn_initial,
    burgers_initial,
    standard_bump,
)
from .observations import ObservationSet
from .projection import ZNormSpec, continuous_gramian
from .quadrature import grid_rule, uniform_grid_rule
from .reference import ReferenceTrajectory, allen_cahn_reference, burgers_reference
from .sampling import (
    AscentParams,
    EulerLagrangeParams,
    init_locations,
    optimize_locations,
)

CACHE_ENV = "DYNAPPROX_CACHE"


class RuntimeFailure(RuntimeError):
    """A runtime (non-config) failure; carries the failing step if known."""


def cache_dir():
    return Path(os.environ.get(CACHE_ENV, Path.cwd() / "refcache"))


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


class ZeroModel:
    name = "zero"

    def __init__(self, dim=1):
        self.dim = dim


def build_model(cfg):
    kind = cfg["model"]["kind"]
    if kind == "kdv":
        return KdV()
    if kind == "allen-cahn":
        m = cfg["model"]
        return AllenCahn(a=m.get("a", 5e-3), b=m.get("b", -1.0),
                         domain=tuple(m.get("domain", (0.0, 2.0 * np.pi))))
    if kind == "burgers":
        m = cfg["model"]
        return Burgers(alpha=m.get("alpha", 0.01), domain=tuple(m.get("domain", (-3.0, 5.0))))
    if kind == "fokker-planck":
        m = cfg["model"]
        return FokkerPlanck(A=np.asarray(m["drift_matrix"], dtype=float),
                            b=np.asarray(m["drift_offset"], dtype=float),
                            a_diff=float(m["diffusion"]))
    if kind == "transport":
        return Transport.standard(int(cfg["model"]["dim"]))
    if kind == "zero":
        return ZeroModel(dim=int(cfg["model"].get("dim", 1)))
    raise ConfigError(f"model.kind: unknown {kind!r}")


def model_dim(model):
    return model.dim


def build_decoder(cfg, dim):
    d = cfg["decoder"]
    kind = d["kind"]
    if kind == "exponential-mixture":
        return ExponentialMixtureDecoder(dim, int(d["units"]), chart=d.get("chart", "full"))
    if kind == "gaussian-mixture":
        return GaussianMixtureDecoder(dim, int(d["units"]))
    if kind == "tanh-mlp":
        return TanhMLPDecoder(dim, [int(w) for w in d["widths"]])
    raise ConfigError(f"decoder.kind: unknown {kind!r}")


def initial_condition(model):
    """The model's initial state as an evaluatable field."""
    if isinstance(model, KdV):
        return KdVExact().field(0.0)
    if isinstance(model, AllenCahn):
        from .fields import CallableField

        return CallableField(lambda pts: allen_cahn_initial(pts[:, 0]), dim=1)
    if isinstance(model, Burgers):
        from .fields import CallableField

        return CallableField(lambda pts: burgers_initial(pts[:, 0]), dim=1)
    if isinstance(model, (FokkerPlanck, Transport)):
        return standard_bump(model.dim)
    if isinstance(model, ZeroModel):
        return standard_bump(model.dim)
    raise ConfigError(f"no initial condition for model {model!r}")


def exact_solution(model):
    if isinstance(model, KdV):
        return KdVExact()
    if isinstance(model, FokkerPlanck):
        return FokkerPlanckExact(model)
    if isinstance(model, Transport):
        return TransportExact(model)
    return None


def reference_cache_path(model, directory=None):
    directory = Path(directory) if directory else cache_dir()
    if isinstance(model, AllenCahn):
        tag = f"allen-cahn_a{model.a:g}_b{model.b:g}"
    elif isinstance(model, Burgers):
        tag = f"burgers_alpha{model.alpha:g}"
    else:
        raise ConfigError(f"model {model.name} has no reference solver")
    return directory / f"ref_{tag}.bin"


def make_reference(model, directory=None, **solver_kwargs):
    """Generate (or regenerate) the cached reference trajectory for a model."""
    path = reference_cache_path(model, directory)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(model, AllenCahn):
        traj = allen_cahn_reference(a=model.a, b=model.b, domain=model.domain, **solver_kwargs)
    elif isinstance(model, Burgers):
        traj = burgers_reference(alpha=model.alpha, domain=model.domain, **solver_kwargs)
    else:
        raise ConfigError(f"model {model.name} has no reference solver")
    traj.save(path)
    return path


def load_reference(model, directory=None):
    path = reference_cache_path(model, directory)
    if not path.exists():
        raise RuntimeFailure(
            f"reference trajectory {path} not found; run make-reference first"
        )
    return ReferenceTrajectory.load(path)


def ambient_rule_for(model, cfg):
    """Lebesgue rule defining the ambient inner products on bounded domains."""
    if isinstance(model, (AllenCahn, Burgers)):
        points = int(cfg.get("ambient", {}).get("points", 600))
        return grid_rule([model.domain], points)
    return None


# ---------------------------------------------------------------------------
# initial state
# ---------------------------------------------------------------------------


def prepare_theta0(cfg, model, decoder, u0):
    fit_cfg = cfg.get("fit", {})
    method = fit_cfg.get("method", "least-squares")
    if method == "ic-units":
        if not isinstance(decoder, ExponentialMixtureDecoder):
            raise ConfigError("fit.method ic-units requires an exponential mixture")
        return decoder, decoder.ic_units_theta(), {"method": "ic-units", "residual": 0.0}
    bounds = fit_cfg["bounds"]
    points = int(fit_cfg.get("points", 1000))
    rule = uniform_grid_rule(bounds, points)
    restarts = int(fit_cfg.get("restarts", 1))
    max_nfev = int(fit_cfg.get("max_nfev", 400))
    rng = rng_stream(cfg.get("seed", 0), "fit")
    distinct = fit_cfg.get("distinct_units")
    fit_decoder = decoder
    if distinct is not None and isinstance(decoder, ExponentialMixtureDecoder):
        fit_decoder = ExponentialMixtureDecoder(decoder.dim, int(distinct), chart=decoder.chart)
    if isinstance(fit_decoder, TanhMLPDecoder):
        rng = rng_stream(cfg.get("seed", 0), "network-init")
    best = None
    for guess in initial_guesses(fit_decoder, u0, rule, rng, restarts=restarts):
        result = fit_initial(fit_decoder, u0, rule, guess, max_nfev=max_nfev)
        if best is None or result.residual < best.residual:
            best = result
    info = {
        "method": "least-squares",
        "residual": best.residual,
        "converged": best.converged,
        "nfev": best.nfev,
    }
    theta0 = best.theta
    if fit_decoder is not decoder:
        decoder, theta0 = split_largest_units(fit_decoder, theta0, decoder.p)
        info["distinct_units"] = int(distinct)
    return decoder, theta0, info


def prepare_locations(cfg, model, decoder, theta0, u0):
    obs_cfg = cfg["observations"]
    m = int(obs_cfg["m"])
    sigma_sq = float(obs_cfg["sigma_sq"])
    strategy = obs_cfg.get("init_strategy", "mass-quantile")
    rng = rng_stream(cfg.get("seed", 0), "init-locations")
    dim = decoder.dim
    grid = None
    if strategy == "mass-quantile":
        fit_cfg = cfg.get("fit", {})
        bounds = obs_cfg.get("init_bounds") or fit_cfg.get("bounds")
        if bounds is None:
            raise ConfigError("observations.init_bounds: needed for mass-quantile init")
        grid = uniform_grid_rule(bounds, int(obs_cfg.get("init_points", 800)))
    gaussian_cov = obs_cfg.get("init_cov_scale", 1.5) * np.eye(dim)
    X0 = init_locations(
        u0, m, strategy, dim, rng,
        grid_rule=grid,
        box=obs_cfg.get("init_box"),
        gaussian_mean=obs_cfg.get("init_mean"),
        gaussian_cov=gaussian_cov,
    )
    obs = ObservationSet(X0, sigma_sq * np.eye(dim))
    # one dedicated ascent pass before the time loop
    init_iters = int(obs_cfg.get("init_iters", 100))
    basis = decoder.jacobian_basis(theta0)
    ambient = ambient_rule_for(model, cfg)
    M = continuous_gramian(basis, ambient)
    params = AscentParams(
        inner_iters=init_iters,
        step_size=float(cfg.get("sampler", {}).get("step_size", 1e-2)),
        grad_tol=float(cfg.get("sampler", {}).get("grad_tol", 1e-8)),
    )
    result = optimize_locations(obs, basis, M, params)
    return result.obs


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def build_run_config(cfg, m):
    run = cfg["run"]
    sampler_cfg = cfg.get("sampler", {})
    mode = sampler_cfg.get("mode", "ascent")
    sampler = SamplerConfig(
        mode=mode,
        ascent=AscentParams(
            inner_iters=int(sampler_cfg.get("inner_iters", 5)),
            step_size=float(sampler_cfg.get("step_size", 1e-2)),
            grad_tol=float(sampler_cfg.get("grad_tol", 1e-8)),
        ),
        euler_lagrange=EulerLagrangeParams(
            lambda_vel=float(sampler_cfg.get("lambda_vel", 1.0)),
            ascent_sign=float(sampler_cfg.get("ascent_sign", 1.0)),
        ),
    )
    metric_cfg = cfg.get("metric", {})
    metric = MetricConfig(
        kind=metric_cfg.get("kind", "none"),
        bounds=metric_cfg.get("bounds"),
        points=int(metric_cfg.get("points", 400)),
        n_samples=int(metric_cfg.get("samples", 100_000)),
        every=int(metric_cfg.get("every", 1)),
    )
    znorm = (
        ZNormSpec()
        if run.get("znorm", "natural") == "natural"
        else ZNormSpec.uniform(m)
    )
    return RunConfig(
        dt=float(run["dt"]),
        t_final=float(run["t_final"]),
        epsilon=float(run.get("epsilon", 0.0)),
        scheme=run.get("scheme", "rk4"),
        znorm=znorm,
        sampler=sampler,
        metric=metric,
        rank_cutoff=float(run.get("rank_cutoff", 1e-8)),
        snapshot_target=int(cfg.get("output", {}).get("snapshots", 500)),
        record_kappa=bool(cfg.get("diagnostics", {}).get("kappa", False)),
        seed=metric_seed(cfg.get("seed", 0)),
    )


def run_experiment(cfg, outdir, progress=None, reference_dir=None):
    """Execute one configured run and write its outputs; returns the record."""
    t_start = time.time()
    model = build_model(cfg)
    decoder = build_decoder(cfg, model_dim(model))
    u0 = initial_condition(model)
    decoder, theta0, fit_info = prepare_theta0(cfg, model, decoder, u0)
    obs = prepare_locations(cfg, model, decoder, theta0, u0)

    exact = None
    reference = None
    target = cfg.get("metric", {}).get("target", "exact")
    if cfg.get("metric", {}).get("kind", "none") != "none":
        if target == "exact":
            exact = exact_solution(model)
            if exact is None:
                raise ConfigError("metric.target: model has no exact solution")
        elif target == "reference":
            reference = load_reference(model, reference_dir)

    ambient = ambient_rule_for(model, cfg)
    energy_rule = None
    energy_params = None
    if cfg.get("diagnostics", {}).get("energy", False):
        if not isinstance(model, AllenCahn):
            raise ConfigError("diagnostics.energy: only defined for the allen-cahn model")
        energy_rule = ambient
        energy_params = (model.a, model.b)

    run_cfg = build_run_config(cfg, obs.m)
    runner = Runner(
        model, decoder, run_cfg, exact=exact, reference=reference,
        ambient_rule=ambient, energy_rule=energy_rule, energy_params=energy_params,
    )
    try:
        record = runner.run(theta0, obs, progress=progress)
    except Exception as exc:
        raise RuntimeFailure(f"time loop failed: {exc}") from exc

    outdir = Path(outdir)
    record.meta = {
        "name": cfg.get("name", "run"),
        "fit": fit_info,
        "wall_seconds": time.time() - t_start,
    }
    record.save(outdir)
    manifest = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "fit": fit_info,
        "decoder": decoder.describe(),
        "wall_seconds": time.time() - t_start,
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=float)
    return record


def run_sweep(cfg, axis, values, outdir, progress=None, reference_dir=None):
    """One run per axis value; failures are recorded and the sweep continues."""
    from .config import apply_override

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for value in values:
        sub = outdir / f"{axis}_{value:g}"
        try:
            sub_cfg = apply_override(cfg, axis, value)
            run_experiment(sub_cfg, sub, progress=progress, reference_dir=reference_dir)
            entries.append({"value": value, "dir": sub.name, "status": "ok"})
        except Exception as exc:  # per-run failures must not kill the sweep
            entries.append({"value": value, "dir": sub.name, "status": f"failed: {exc}"})
    rows = []
    for entry in entries:
        if entry["status"] != "ok":
            continue
        scalars = np.genfromtxt(
            outdir / entry["dir"] / "scalars.csv", delimiter=",", names=True
        )
        for row in scalars:
            rows.append((entry["value"], row["t"], row["error"], row["beta"], row["n_eff"]))
    with open(outdir / "combined.csv", "w") as fh:
        fh.write(f"{axis},t,error,beta,n_eff\n")
        for value, t, err, beta, n_eff in rows:
            fh.write(
                ",".join(
                    [repr(float(value)), repr(float(t)), repr(float(err)),
                     repr(float(beta)), str(int(n_eff))]
                )
                + "\n"
            )
    with open(outdir / "sweep.json", "w") as fh:
        json.dump({"axis": axis, "entries": entries}, fh, indent=2, default=float)
    return entries
