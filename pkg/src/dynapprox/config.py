"""Experiment configuration: TOML schema, validation, seed fan-out.

A config file is a flat tree of sections (model, decoder, fit, observations,
run, sampler, metric, diagnostics, output). Validation reports the dotted path
of every offending field. The resolved dict is embedded verbatim in the run
manifest so a run can be reproduced from its manifest alone.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; message carries the dotted field path."""


# named random streams derived from one top-level seed, so that toggling one
# feature does not shift another's randomness
SEED_STREAMS = {"fit": 0, "init-locations": 1, "metric": 2, "network-init": 3}


def rng_stream(seed, name):
    if name not in SEED_STREAMS:
        raise KeyError(f"unknown seed stream {name!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(SEED_STREAMS[name],))
    return np.random.default_rng(ss)


def metric_seed(seed):
    """Integer seed for the run's error-metric stream."""
    return int(
        np.random.SeedSequence(
            entropy=int(seed), spawn_key=(SEED_STREAMS["metric"],)
        ).generate_state(1)[0]
    )


MODEL_KINDS = ("kdv", "allen-cahn", "burgers", "fokker-planck", "transport", "zero")
DECODER_KINDS = ("exponential-mixture", "gaussian-mixture", "tanh-mlp")
INIT_STRATEGIES = ("mass-quantile", "uniform-box", "gaussian")


def _get(cfg, path, default=None, required=False, kind=None):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"{path}: required field is missing")
            return default
        node = node[part]
    if kind is not None and not isinstance(node, kind):
        names = kind if isinstance(kind, tuple) else (kind,)
        raise ConfigError(
            f"{path}: expected {'/'.join(k.__name__ for k in names)}, got {type(node).__name__}"
        )
    return node


def _positive(cfg, path, default=None, required=False):
    val = _get(cfg, path, default=default, required=required, kind=(int, float))
    if val is not None and val <= 0:
        raise ConfigError(f"{path}: must be positive, got {val}")
    return val


def load_config(path):
    """Parse and validate a TOML config (or a manifest embedding one)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".json":
        with open(path) as fh:
            doc = json.load(fh)
        doc = doc.get("config", doc)
    else:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: not valid TOML ({exc})") from exc
    validate_config(doc)
    return doc


def validate_config(cfg):
    """Check types, ranges and cross-field consistency; raises ConfigError."""
    if not isinstance(cfg, dict):
        raise ConfigError("top level: expected a table")
    _get(cfg, "name", default="run", kind=str)
    seed = _get(cfg, "seed", default=0, kind=int)
    if seed < 0:
        raise ConfigError("seed: must be non-negative")

    kind = _get(cfg, "model.kind", required=True, kind=str)
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind: unknown {kind!r}; pick one of {MODEL_KINDS}")
    if kind == "allen-cahn":
        _get(cfg, "model.a", default=5e-3, kind=(int, float))
        _get(cfg, "model.b", default=-1.0, kind=(int, float))
    if kind == "burgers":
        _positive(cfg, "model.alpha", default=0.01)
    if kind == "fokker-planck":
        A = _get(cfg, "model.drift_matrix", required=True, kind=list)
        b = _get(cfg, "model.drift_offset", required=True, kind=list)
        arr = np.asarray(A, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ConfigError("model.drift_matrix: must be a square matrix")
        if len(b) != arr.shape[0]:
            raise ConfigError("model.drift_offset: length must match drift_matrix")
        _positive(cfg, "model.diffusion", required=True)
    if kind == "transport":
        dim = _get(cfg, "model.dim", required=True, kind=int)
        if dim < 1:
            raise ConfigError("model.dim: must be >= 1")
    if kind == "zero":
        _get(cfg, "model.dim", default=1, kind=int)

    dkind = _get(cfg, "decoder.kind", required=True, kind=str)
    if dkind not in DECODER_KINDS:
        raise ConfigError(f"decoder.kind: unknown {dkind!r}; pick one of {DECODER_KINDS}")
    if dkind in ("exponential-mixture", "gaussian-mixture"):
        units = _get(cfg, "decoder.units", required=True, kind=int)
        if units < 1:
            raise ConfigError("decoder.units: must be >= 1")
        chart = _get(cfg, "decoder.chart", default="full", kind=str)
        if chart not in ("full", "iso"):
            raise ConfigError(f"decoder.chart: unknown {chart!r}")
    if dkind == "tanh-mlp":
        widths = _get(cfg, "decoder.widths", required=True, kind=list)
        if not widths or any((not isinstance(w, int)) or w < 1 for w in widths):
            raise ConfigError("decoder.widths: need a list of positive integers")

    method = _get(cfg, "fit.method", default="least-squares", kind=str)
    if method not in ("least-squares", "ic-units"):
        raise ConfigError(f"fit.method: unknown {method!r}")
    if method == "least-squares":
        _get(cfg, "fit.bounds", required=True, kind=list)
        _positive(cfg, "fit.points", default=1000)
        _positive(cfg, "fit.restarts", default=1)
        distinct = _get(cfg, "fit.distinct_units", default=None, kind=int)
        if distinct is not None:
            units = _get(cfg, "decoder.units", default=None)
            if dkind != "exponential-mixture":
                raise ConfigError("fit.distinct_units: only for exponential mixtures")
            if distinct < 1 or (units is not None and distinct > units):
                raise ConfigError("fit.distinct_units: must be in [1, decoder.units]")

    m = _get(cfg, "observations.m", required=True, kind=int)
    if m < 1:
        raise ConfigError("observations.m: must be >= 1")
    _positive(cfg, "observations.sigma_sq", required=True)
    strategy = _get(cfg, "observations.init_strategy", default="mass-quantile", kind=str)
    if strategy not in INIT_STRATEGIES:
        raise ConfigError(
            f"observations.init_strategy: unknown {strategy!r}; pick one of {INIT_STRATEGIES}"
        )
    if strategy == "uniform-box":
        _get(cfg, "observations.init_box", required=True, kind=list)
    _positive(cfg, "observations.init_iters", default=100)

    dt = _positive(cfg, "run.dt", required=True)
    t_final = _positive(cfg, "run.t_final", required=True)
    if t_final < dt:
        raise ConfigError("run.t_final: must be at least run.dt")
    eps = _get(cfg, "run.epsilon", default=0.0, kind=(int, float))
    if eps < 0:
        raise ConfigError("run.epsilon: must be non-negative")
    scheme = _get(cfg, "run.scheme", default="rk4", kind=str)
    if scheme not in ("rk4", "euler"):
        raise ConfigError(f"run.scheme: unknown {scheme!r}")
    znorm = _get(cfg, "run.znorm", default="natural", kind=str)
    if znorm not in ("natural", "weighted"):
        raise ConfigError(f"run.znorm: unknown {znorm!r}")

    mode = _get(cfg, "sampler.mode", default="ascent", kind=str)
    if mode not in ("ascent", "euler-lagrange", "frozen"):
        raise ConfigError(f"sampler.mode: unknown {mode!r}")
    _positive(cfg, "sampler.inner_iters", default=5)
    _positive(cfg, "sampler.step_size", default=1e-2)
    if mode == "euler-lagrange":
        _positive(cfg, "sampler.lambda_vel", required=True)

    mkind = _get(cfg, "metric.kind", default="none", kind=str)
    if mkind not in ("grid", "mc", "none"):
        raise ConfigError(f"metric.kind: unknown {mkind!r}")
    if mkind == "grid":
        _get(cfg, "metric.bounds", required=True, kind=list)
        _positive(cfg, "metric.points", default=400)
    if mkind == "mc":
        _positive(cfg, "metric.samples", default=100_000)
    _positive(cfg, "metric.every", default=1)
    target = _get(cfg, "metric.target", default="exact", kind=str)
    if target not in ("exact", "reference", "none"):
        raise ConfigError(f"metric.target: unknown {target!r}")
    if mkind == "mc" and target != "exact":
        raise ConfigError("metric.kind: mc sampling requires metric.target = 'exact'")
    if mkind != "none" and target == "exact" and kind in ("allen-cahn", "burgers", "zero"):
        raise ConfigError(
            "metric.target: this model has no exact solution; use 'reference' or 'none'"
        )

    _get(cfg, "diagnostics.energy", default=False, kind=bool)
    _get(cfg, "diagnostics.kappa", default=False, kind=bool)
    _positive(cfg, "output.snapshots", default=500)
    return cfg


def config_hash(cfg):
    import hashlib

    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def apply_override(cfg, axis, value):
    """Return a deep-copied config with one sweep axis overridden."""
    import copy

    out = copy.deepcopy(cfg)
    if axis == "m":
        out.setdefault("observations", {})["m"] = int(value)
    elif axis == "sigma":
        out.setdefault("observations", {})["sigma_sq"] = float(value) ** 2
    elif axis == "p":
        if out.get("decoder", {}).get("kind") not in (
            "exponential-mixture", "gaussian-mixture",
        ):
            raise ConfigError("sweep axis p applies to mixture decoders only")
        out["decoder"]["units"] = int(value)
        fit = out.get("fit", {})
        if "distinct_units" in fit:
            fit["distinct_units"] = min(fit["distinct_units"], int(value))
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; pick m, sigma or p")
    validate_config(out)
    return out
