"""Implicit-explicit reference solvers for the bounded-domain models.

Diffusion is treated implicitly on a uniform Dirichlet grid (one sparse
factorization, reused every step); reaction and advection are explicit.
Trajectories are cached in a flat binary layout:

    magic   8 bytes   b"DAXREF01"
    header  uint32 n_points, uint32 n_frames
            float64 x_lo, x_hi, frame_dt, t0
    hash    32 bytes  sha256 of the generating parameters
    frames  n_frames * n_points float64, row-major, frame-by-frame
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse import identity as sparse_identity
from scipy.sparse import diags
from scipy.sparse.linalg import splu

from .fields import CallableField

MAGIC = b"DAXREF01"


@dataclass
class ReferenceTrajectory:
    x: np.ndarray
    times: np.ndarray
    frames: np.ndarray
    params_hash: bytes

    def field(self, t):
        """Piecewise-linear interpolant in time, linear in space off-grid."""
        t = float(np.clip(t, self.times[0], self.times[-1]))
        idx = np.searchsorted(self.times, t)
        if idx == 0:
            frame = self.frames[0]
        elif idx >= len(self.times):
            frame = self.frames[-1]
        else:
            t0, t1 = self.times[idx - 1], self.times[idx]
            w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            frame = (1.0 - w) * self.frames[idx - 1] + w * self.frames[idx]
        x = self.x

        def fn(pts):
            return np.interp(pts[:, 0], x, frame, left=0.0, right=0.0)

        return CallableField(fn, dim=1)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(
                struct.pack(
                    "<IIdddd",
                    self.x.size,
                    self.frames.shape[0],
                    float(self.x[0]),
                    float(self.x[-1]),
                    float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0,
                    float(self.times[0]),
                )
            )
            fh.write(self.params_hash)
            fh.write(np.ascontiguousarray(self.frames, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != MAGIC:
                raise ValueError(f"{path} is not a reference cache file")
            n_points, n_frames, x_lo, x_hi, frame_dt, t0 = struct.unpack(
                "<IIdddd", fh.read(8 + 32)
            )
            params_hash = fh.read(32)
            data = np.frombuffer(fh.read(), dtype="<f8")
        frames = data.reshape(n_frames, n_points)
        x = np.linspace(x_lo, x_hi, n_points)
        times = t0 + frame_dt * np.arange(n_frames)
        return cls(x=x, times=times, frames=frames, params_hash=params_hash)


def params_hash(params):
    blob = json.dumps(params, sort_keys=True).encode()
    return hashlib.sha256(blob).digest()


def _dirichlet_imex(x, u0, dt, T, diffusion, explicit_rhs, save_every):
    """March u_t = diffusion * u_xx + explicit_rhs(u) with zero boundaries."""
    n = x.size
    dx = x[1] - x[0]
    lap = diags(
        [1.0, -2.0, 1.0], [-1, 0, 1], shape=(n - 2, n - 2), format="csc"
    ) / dx**2
    system = sparse_identity(n - 2, format="csc") - dt * diffusion * lap
    solver = splu(system)
    u = u0.copy()
    n_steps = int(round(T / dt))
    frames = [u.copy()]
    times = [0.0]
    for k in range(1, n_steps + 1):
        rhs = u[1:-1] + dt * explicit_rhs(u)[1:-1]
        u = np.concatenate([[0.0], solver.solve(rhs), [0.0]])
        if k % save_every == 0:
            frames.append(u.copy())
            times.append(k * dt)
    if times[-1] < n_steps * dt:
        frames.append(u.copy())
        times.append(n_steps * dt)
    return np.array(times), np.array(frames)


def allen_cahn_reference(a=5e-3, b=-1.0, domain=(0.0, 2.0 * np.pi), n_grid=2000,
                         dt=1e-5, T=4.0, initial=None, save_dt=1e-2):
    from .models import allen_cahn_initial

    initial = initial or allen_cahn_initial
    x = np.linspace(domain[0], domain[1], n_grid)
    u0 = np.asarray(initial(x), dtype=float)
    u0[0] = u0[-1] = 0.0

    def reaction(u):
        return b * (u - u**3)

    save_every = max(1, int(round(save_dt / dt)))
    times, frames = _dirichlet_imex(x, u0, dt, T, a, reaction, save_every)
    digest = params_hash(
        {"model": "allen-cahn", "a": a, "b": b, "domain": list(domain),
         "n_grid": n_grid, "dt": dt, "T": T, "save_dt": save_dt}
    )
    return ReferenceTrajectory(x=x, times=times, frames=frames, params_hash=digest)


def burgers_reference(alpha=0.01, domain=(-3.0, 5.0), n_grid=5000, T=5.0,
                      initial=None, save_dt=1e-2, dt=None):
    from .models import burgers_initial

    initial = initial or burgers_initial
    x = np.linspace(domain[0], domain[1], n_grid)
    dx = x[1] - x[0]
    if dt is None:
        dt = 0.1 * dx
    u0 = np.asarray(initial(x), dtype=float)
    u0[0] = u0[-1] = 0.0
    u_max = max(np.abs(u0).max(), 1e-12)
    if dt > dx / u_max:
        warnings.warn(
            f"explicit advection violates the CFL bound: dt={dt:g} > dx/|u|={dx / u_max:g}",
            RuntimeWarning,
        )

    def advection(u):
        flux = 0.5 * u**2
        dudx = np.zeros_like(u)
        dudx[1:-1] = (flux[2:] - flux[:-2]) / (2.0 * dx)
        return -dudx

    save_every = max(1, int(round(save_dt / dt)))
    times, frames = _dirichlet_imex(x, u0, dt, T, alpha, advection, save_every)
    digest = params_hash(
        {"model": "burgers", "alpha": alpha, "domain": list(domain),
         "n_grid": n_grid, "dt": dt, "T": T, "save_dt": save_dt}
    )
    return ReferenceTrajectory(x=x, times=times, frames=frames, params_hash=digest)
