"""Plot-ready data exports and rendered figures for completed runs.

Reads a run directory (scalars.csv, spectra.csv, snapshots.jsonl,
manifest.json), writes tidy long-format CSVs for external tooling, and renders
the matching figures to PNG files next to them.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

SCALAR_SERIES = ("error", "beta", "n_eff", "sigma_min", "sigma_max", "energy", "kappa")


def load_run(run_dir):
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{run_dir} has no manifest.json; not a finished run")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    scalars = np.genfromtxt(run_dir / "scalars.csv", delimiter=",", names=True)
    scalars = np.atleast_1d(scalars)
    snapshots = []
    snap_path = run_dir / "snapshots.jsonl"
    if snap_path.exists():
        with open(snap_path) as fh:
            snapshots = [json.loads(line) for line in fh if line.strip()]
    spectra = None
    spec_path = run_dir / "spectra.csv"
    if spec_path.exists():
        spectra = np.genfromtxt(
            spec_path, delimiter=",", names=True, dtype=None, encoding="utf-8"
        )
        spectra = np.atleast_1d(spectra)
    return manifest, scalars, snapshots, spectra


def write_tidy_csvs(outdir, scalars, snapshots, spectra):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "series_long.csv", "w") as fh:
        fh.write("t,series,value\n")
        for series in SCALAR_SERIES:
            for t, v in zip(scalars["t"], scalars[series]):
                if np.isnan(v):
                    continue
                fh.write(f"{t!r},{series},{v!r}\n")
    with open(outdir / "parameters_long.csv", "w") as fh:
        fh.write("t,index,value\n")
        for snap in snapshots:
            for i, v in enumerate(snap["theta"]):
                fh.write(f"{snap['t']!r},{i},{v!r}\n")
    with open(outdir / "locations_long.csv", "w") as fh:
        fh.write("t,index,axis,value\n")
        for snap in snapshots:
            for i, x in enumerate(snap["locations"]):
                for a, v in enumerate(x):
                    fh.write(f"{snap['t']!r},{i},{a},{v!r}\n")
    if spectra is not None:
        with open(outdir / "spectra_long.csv", "w") as fh:
            fh.write("t,matrix,index,value\n")
            for row in spectra:
                fh.write(
                    f"{float(row['t'])!r},{row['matrix']},{int(row['index'])},"
                    f"{float(row['value'])!r}\n"
                )


def _series_figure(outdir, scalars, series, logy=False):
    vals = scalars[series]
    mask = ~np.isnan(vals)
    if not mask.any():
        return None
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(scalars["t"][mask], vals[mask], lw=1.2)
    if logy and (vals[mask] > 0).all():
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel(series.replace("_", " "))
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(outdir) / f"{series}.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _spectrum_figure(outdir, spectra):
    if spectra is None:
        return None
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for matrix, style in (("raw", "-"), ("regularized", "--")):
        sel = spectra[spectra["matrix"] == matrix]
        if sel.size == 0:
            continue
        n_idx = int(sel["index"].max()) + 1
        for i in range(n_idx):
            rows = sel[sel["index"] == i]
            ax.plot(rows["t"], np.maximum(rows["value"], 1e-20), style, lw=0.6,
                    color="C0" if matrix == "raw" else "C1", alpha=0.6)
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("singular values")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(outdir) / "spectrum.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _parameters_figure(outdir, snapshots):
    if not snapshots:
        return None
    t = np.array([snap["t"] for snap in snapshots])
    theta = np.array([snap["theta"] for snap in snapshots])
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for i in range(theta.shape[1]):
        ax.plot(t, theta[:, i], lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("parameters")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(outdir) / "parameters.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _locations_figure(outdir, snapshots):
    if not snapshots:
        return None
    t = np.array([snap["t"] for snap in snapshots])
    locs = np.array([snap["locations"] for snap in snapshots])  # (T, m, d)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    if locs.shape[2] == 1:
        for i in range(locs.shape[1]):
            ax.plot(t, locs[:, i, 0], lw=0.6, color="k", alpha=0.5)
        ax.set_xlabel("t")
        ax.set_ylabel("observation locations")
    else:
        for i in range(locs.shape[1]):
            ax.plot(locs[:, i, 0], locs[:, i, 1], lw=0.6, alpha=0.6)
        ax.scatter(locs[-1, :, 0], locs[-1, :, 1], s=8, color="k")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(outdir) / "locations.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _field_grid(manifest, snap, bounds, points, reference_dir=None):
    """Decode a snapshot on a grid together with the exact/reference target."""
    from .experiment import (
        build_decoder, build_model, exact_solution, load_reference, model_dim,
    )

    cfg = manifest["config"]
    model = build_model(cfg)
    decoder = build_decoder(cfg, model_dim(model))
    theta = np.asarray(snap["theta"], dtype=float)
    field = decoder.decode(theta)
    dim = model_dim(model)
    t = snap["t"]
    target_field = None
    target = cfg.get("metric", {}).get("target", "exact")
    if target == "exact":
        exact = exact_solution(model)
        if exact is not None:
            target_field = exact.field(t)
    elif target == "reference":
        try:
            target_field = load_reference(model, reference_dir).field(t)
        except Exception:
            target_field = None
    if dim == 1:
        xs = np.linspace(bounds[0][0], bounds[0][1], points).reshape(-1, 1)
        approx = field(xs)
        exact_vals = target_field(xs) if target_field is not None else np.full(points, np.nan)
        return xs, approx, exact_vals
    xs = np.linspace(bounds[0][0], bounds[0][1], points)
    ys = np.linspace(bounds[1][0], bounds[1][1], points)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([XX.reshape(-1), YY.reshape(-1)])
    approx = field(pts).reshape(points, points)
    exact_vals = (
        target_field(pts).reshape(points, points)
        if target_field is not None
        else np.full((points, points), np.nan)
    )
    return (XX, YY), approx, exact_vals


def export_fields(outdir, manifest, snapshots, times, bounds, points=200,
                  reference_dir=None):
    """Field dumps and figures at the snapshot times closest to ``times``."""
    outdir = Path(outdir)
    cfg = manifest["config"]
    dim = len(bounds)
    written = []
    for t_req in times:
        snap = min(snapshots, key=lambda s: abs(s["t"] - t_req))
        grid, approx, exact_vals = _field_grid(
            manifest, snap, bounds, points, reference_dir
        )
        tag = f"{snap['t']:.6g}".replace(".", "p")
        csv_path = outdir / f"field_t{tag}.csv"
        locations = np.asarray(snap["locations"], dtype=float)
        if dim == 1:
            xs = grid
            with open(csv_path, "w") as fh:
                fh.write("x,approx,exact,diff\n")
                for x, a, e in zip(xs[:, 0], approx, exact_vals):
                    fh.write(f"{x!r},{a!r},{e!r},{(a - e)!r}\n")
            fig, ax = plt.subplots(figsize=(5.0, 3.4))
            ax.plot(xs[:, 0], approx, label="approximation")
            if not np.isnan(exact_vals).all():
                ax.plot(xs[:, 0], exact_vals, "--", label="target")
            ax.plot(locations[:, 0], np.zeros(len(locations)), "k.", ms=4,
                    label="observations")
            ax.set_xlabel("x")
            ax.legend(fontsize=8)
            ax.set_title(f"t = {snap['t']:.3g}")
            fig.tight_layout()
            fig.savefig(outdir / f"field_t{tag}.png", dpi=150)
            plt.close(fig)
        else:
            (XX, YY) = grid
            with open(csv_path, "w") as fh:
                fh.write("x1,x2,approx,exact,diff\n")
                for x1, x2, a, e in zip(
                    XX.reshape(-1), YY.reshape(-1), approx.reshape(-1),
                    exact_vals.reshape(-1),
                ):
                    fh.write(f"{x1!r},{x2!r},{a!r},{e!r},{(a - e)!r}\n")
            fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
            for ax, data, title in zip(
                axes, (approx, exact_vals, approx - exact_vals),
                ("approximation", "target", "difference"),
            ):
                im = ax.pcolormesh(XX, YY, data, shading="auto")
                fig.colorbar(im, ax=ax)
                ax.set_title(f"{title} (t={snap['t']:.3g})")
            axes[0].plot(locations[:, 0], locations[:, 1], "k.", ms=3)
            fig.tight_layout()
            fig.savefig(outdir / f"field_t{tag}.png", dpi=150)
            plt.close(fig)
        written.append(csv_path)
    return written


def plot_run(run_dir, outdir=None, times=None, field_points=200, reference_dir=None):
    """Full report for a run: tidy CSVs plus rendered PNG figures."""
    run_dir = Path(run_dir)
    manifest, scalars, snapshots, spectra = load_run(run_dir)
    outdir = Path(outdir) if outdir else run_dir / "plots"
    outdir.mkdir(parents=True, exist_ok=True)
    write_tidy_csvs(outdir, scalars, snapshots, spectra)
    _series_figure(outdir, scalars, "error", logy=True)
    _series_figure(outdir, scalars, "beta")
    _series_figure(outdir, scalars, "n_eff")
    _series_figure(outdir, scalars, "energy")
    _series_figure(outdir, scalars, "kappa", logy=True)
    _spectrum_figure(outdir, spectra)
    _parameters_figure(outdir, snapshots)
    _locations_figure(outdir, snapshots)
    cfg = manifest["config"]
    dim = _config_dim(cfg)
    if snapshots and dim <= 2:
        bounds = cfg.get("metric", {}).get("bounds")
        if bounds is None:
            bounds = _default_bounds(snapshots, dim)
        if times is None:
            t_all = [snap["t"] for snap in snapshots]
            times = sorted({t_all[0], t_all[len(t_all) // 2], t_all[-1]})
        export_fields(outdir, manifest, snapshots, times, bounds,
                      points=field_points, reference_dir=reference_dir)
    return outdir


def _config_dim(cfg):
    kind = cfg["model"]["kind"]
    if kind == "fokker-planck":
        return len(cfg["model"]["drift_offset"])
    if kind in ("transport", "zero"):
        return int(cfg["model"].get("dim", 1))
    return 1


def _default_bounds(snapshots, dim):
    locs = np.array([snap["locations"] for snap in snapshots]).reshape(-1, dim)
    pad = 2.0
    return [(locs[:, a].min() - pad, locs[:, a].max() + pad) for a in range(dim)]
