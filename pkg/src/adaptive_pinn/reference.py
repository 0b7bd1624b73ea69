"""Periodic finite-difference Allen-Cahn solver used as ground truth.

Space: second-order central differences on a uniform periodic grid.  The
discrete Laplacian is circulant, so the implicit diffusion solve is done
exactly by diagonalising it with the FFT.

Time: two semi-implicit schemes, both implicit in diffusion and explicit in
the cubic reaction term.

``"imex-euler"``
    backward Euler on diffusion, forward Euler on reaction (first order).
``"imex-cn"``
    Crank-Nicolson on diffusion, reaction evaluated at the midpoint of an
    imex-euler predictor (second order).  This is the default: its discrete
    energy identity dE/dt = -|u_t|^2 holds to O(dt^2).

The energy trace uses the Lyapunov functional of the flow,
``g1/2 |grad u|^2 + g2 psi(u)``, with forward differences so that it is
exactly the quadratic form of the discrete Laplacian.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pde import ProblemSpec, free_energy_density, grid_axes, initial_condition

SCHEMES = ("imex-euler", "imex-cn")


@dataclass
class ReferenceSolution:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n_grid: int
    dt: float
    scheme: str
    snapshot_times: np.ndarray
    values: np.ndarray                 # (n_snapshots, n[, n])
    energy_times: np.ndarray           # (n_steps + 1,)
    energies: np.ndarray               # (n_steps + 1,)
    ut_sq: np.ndarray                  # (n_steps,) discrete |u_t|^2 per step
    settings: dict = field(default_factory=dict)

    @property
    def spatial_dim(self) -> int:
        return len(self.lower)

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / self.n_grid

    def axes(self) -> list[np.ndarray]:
        return [lo + (hi - lo) * np.arange(self.n_grid) / self.n_grid
                for lo, hi in zip(self.lower, self.upper)]

    def grid_points(self) -> np.ndarray:
        """All grid nodes as an (n^d, d) array in C order of ``values[k]``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def snapshot_index(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.snapshot_times - t)))
        if abs(self.snapshot_times[k] - t) > tol:
            raise ValueError(f"t={t} is not a snapshot time")
        return k


def _laplacian_symbol(n: int, spacing: np.ndarray, dim: int) -> np.ndarray:
    """Eigenvalues of the periodic 3-point Laplacian on the rfftn frequency grid."""
    parts = []
    for a in range(dim):
        m = n // 2 + 1 if a == dim - 1 else n
        k = np.arange(m)
        lam = (2.0 * np.cos(2.0 * np.pi * k / n) - 2.0) / spacing[a] ** 2
        shape = [1] * dim
        shape[a] = m
        parts.append(lam.reshape(shape))
    return sum(parts)


def discrete_energy(u: np.ndarray, spacing, gamma1: float, gamma2: float) -> float:
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (u.ndim,))
    grad_sq = sum(((np.roll(u, -1, axis=a) - u) / spacing[a]) ** 2 for a in range(u.ndim))
    cell = float(np.prod(spacing))
    return float(np.sum(0.5 * gamma1 * grad_sq + gamma2 * free_energy_density(u)) * cell)


def solve_fd(spec: ProblemSpec, n_grid: int, dt: float, snapshot_times=None,
             scheme: str = "imex-cn", final_time: float | None = None) -> ReferenceSolution:
    """Integrate from the initial condition to ``final_time`` (default spec.final_time)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if n_grid < 16:
        raise ValueError("n_grid must be >= 16")
    if spec.boundary != "periodic":
        raise ValueError("only periodic boundaries are supported")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    T = spec.final_time if final_time is None else final_time
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"final time {T} is not a multiple of dt={dt}")
    if snapshot_times is None:
        snapshot_times = default_snapshot_times(spec, T)
    snap_steps = sorted({int(round(s / dt)) for s in snapshot_times} | {0, n_steps})
    if snap_steps[0] < 0 or snap_steps[-1] > n_steps:
        raise ValueError("snapshot times outside [0, final_time]")

    d = spec.spatial_dim
    spacing = spec.widths / n_grid
    mesh = np.meshgrid(*grid_axes(spec, n_grid), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    u = initial_condition(spec, pts).reshape((n_grid,) * d)

    g1, g2 = spec.gamma1, spec.gamma2
    lap = _laplacian_symbol(n_grid, spacing, d)
    shape = u.shape
    axes = tuple(range(d))
    be_inv = 1.0 / (1.0 - dt * g1 * lap)
    cn_lhs_inv = 1.0 / (1.0 - 0.5 * dt * g1 * lap)
    cn_rhs = 1.0 + 0.5 * dt * g1 * lap

    def react(w):
        return w * w * w - w

    def euler(w):
        return np.fft.irfftn(be_inv * np.fft.rfftn(w - dt * g2 * react(w)), s=shape, axes=axes)

    cell = float(np.prod(spacing))
    energies = np.empty(n_steps + 1)
    ut_sq = np.empty(n_steps)
    energies[0] = discrete_energy(u, spacing, g1, g2)
    snaps = []
    snap_set = set(snap_steps)
    if 0 in snap_set:
        snaps.append(u.copy())
    # overflow on the way to a blow-up is caught by the finiteness checks below
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_steps + 1):
            if scheme == "imex-euler":
                new = euler(u)
            else:
                mid = 0.5 * (u + euler(u))
                rhs = cn_rhs * np.fft.rfftn(u) - dt * g2 * np.fft.rfftn(react(mid))
                new = np.fft.irfftn(cn_lhs_inv * rhs, s=shape, axes=axes)
            if not np.all(np.isfinite(new)):
                raise FloatingPointError(f"reference solution blew up at t={step * dt:g}")
            v = (new - u) / dt
            ut_sq[step - 1] = float(np.sum(v * v) * cell)
            u = new
            energies[step] = discrete_energy(u, spacing, g1, g2)
            if not np.isfinite(energies[step]):
                raise FloatingPointError(f"reference solution blew up at t={step * dt:g}")
            if step in snap_set:
                snaps.append(u.copy())

    return ReferenceSolution(
        lower=spec.lower, upper=spec.upper, n_grid=n_grid, dt=dt, scheme=scheme,
        snapshot_times=np.array(snap_steps, dtype=np.float64) * dt,
        values=np.stack(snaps),
        energy_times=np.arange(n_steps + 1) * dt,
        energies=energies, ut_sq=ut_sq,
        settings={"problem": spec.to_dict(), "n_grid": n_grid, "dt": dt,
                  "scheme": scheme, "final_time": T},
    )


def default_snapshot_times(spec: ProblemSpec, final_time: float | None = None,
                           n_uniform: int = 101) -> list[float]:
    """101 uniform times plus every slice boundary."""
    T = spec.final_time if final_time is None else final_time
    times = set(np.round(np.linspace(0.0, T, n_uniform), 12).tolist())
    times |= {round(s, 12) for s in spec.slice_times() if s <= T + 1e-12}
    return sorted(times)


def energy_decay_report(sol: ReferenceSolution) -> np.ndarray:
    """Per-step |dE/dt + |u_t|^2| with both terms from the discrete trajectory."""
    dE = np.diff(sol.energies) / sol.dt
    return np.abs(dE + sol.ut_sq)


def sample_reference(sol: ReferenceSolution, x, t) -> np.ndarray:
    """Periodic (bi)linear interpolation in space, linear in time between snapshots."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    times = sol.snapshot_times
    tol = 1e-9
    if np.any(t < times[0] - tol) or np.any(t > times[-1] + tol):
        raise ValueError("query time outside the reference time range")
    tc = np.clip(t, times[0], times[-1])
    k1 = np.clip(np.searchsorted(times, tc, side="right"), 1, len(times) - 1)
    k0 = k1 - 1
    span = times[k1] - times[k0]
    wt = np.where(span > 0, (tc - times[k0]) / np.where(span > 0, span, 1.0), 0.0)
    # exact node hits should return stored values bit-for-bit
    wt = np.where(np.abs(tc - times[k1]) <= tol, 1.0, wt)
    wt = np.where(np.abs(tc - times[k0]) <= tol, 0.0, wt)
    v0 = _interp_space(sol, sol.values, k0, x)
    v1 = _interp_space(sol, sol.values, k1, x)
    out = np.where(wt == 0.0, v0, np.where(wt == 1.0, v1, (1.0 - wt) * v0 + wt * v1))
    return out


def _interp_space(sol: ReferenceSolution, values: np.ndarray, k: np.ndarray, x: np.ndarray):
    n = sol.n_grid
    lower = np.asarray(sol.lower)
    s = (x - lower) / sol.spacing
    base = np.floor(s)
    w = s - base
    # snap to nodes within round-off so node queries are exact
    near = np.abs(w - np.round(w)) < 1e-9
    base = np.where(near, np.round(s), base)
    w = np.where(near, 0.0, w)
    i0 = np.mod(base.astype(np.int64), n)
    i1 = np.mod(i0 + 1, n)
    if sol.spatial_dim == 1:
        a = values[k, i0[:, 0]]
        b = values[k, i1[:, 0]]
        return np.where(w[:, 0] == 0.0, a, (1.0 - w[:, 0]) * a + w[:, 0] * b)
    wx, wy = w[:, 0], w[:, 1]
    v00 = values[k, i0[:, 0], i0[:, 1]]
    v10 = values[k, i1[:, 0], i0[:, 1]]
    v01 = values[k, i0[:, 0], i1[:, 1]]
    v11 = values[k, i1[:, 0], i1[:, 1]]
    out = (1 - wx) * (1 - wy) * v00 + wx * (1 - wy) * v10 + (1 - wx) * wy * v01 + wx * wy * v11
    return np.where((wx == 0.0) & (wy == 0.0), v00, out)


def settings_hash(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


# Reference dump layout (one directory):
#   manifest.json   grid spec, dt, scheme, snapshot times, settings + hash
#   snapshots.npy   float64 array (n_snapshots, n[, n])
#   energy.csv      step,t,energy,ut_sq   (ut_sq empty on step 0)
def save_reference(sol: ReferenceSolution, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "snapshots.npy", sol.values)
    with open(directory / "energy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "energy", "ut_sq"])
        for i, (tt, e) in enumerate(zip(sol.energy_times, sol.energies)):
            w.writerow([i, repr(float(tt)), repr(float(e)),
                        "" if i == 0 else repr(float(sol.ut_sq[i - 1]))])
    manifest = {
        "format_version": 1,
        "lower": list(sol.lower), "upper": list(sol.upper),
        "n_grid": sol.n_grid, "dt": sol.dt, "scheme": sol.scheme,
        "snapshot_times": [float(s) for s in sol.snapshot_times],
        "settings": sol.settings,
        "settings_hash": settings_hash(sol.settings),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_reference(directory) -> ReferenceSolution:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    values = np.load(directory / "snapshots.npy")
    times, energies, ut = [], [], []
    with open(directory / "energy.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            times.append(float(row["t"]))
            energies.append(float(row["energy"]))
            if row["ut_sq"]:
                ut.append(float(row["ut_sq"]))
    return ReferenceSolution(
        lower=tuple(manifest["lower"]), upper=tuple(manifest["upper"]),
        n_grid=manifest["n_grid"], dt=manifest["dt"], scheme=manifest["scheme"],
        snapshot_times=np.array(manifest["snapshot_times"]), values=values,
        energy_times=np.array(times), energies=np.array(energies), ut_sq=np.array(ut),
        settings=manifest["settings"],
    )
