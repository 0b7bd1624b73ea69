"""Collocation point sampling.

Uniform points come from Latin hypercube designs.  Adaptive points are
Metropolis-Hastings chains, one per point, each frozen at its own time
coordinate and moving only in space towards a density that depends on the
current network (pointwise energy density or squared residual).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .net import MLP, eval_with_input_derivs
from .pde import ProblemSpec, energy_density, residual

DENSITY_KINDS = ("energy", "residual")

MH_INIT_ITERATIONS = 10_000
MH_REFRESH_ITERATIONS = 200
ADAPT_EVERY = 50
TARGET_ACCEPT = (0.2, 0.6)
SIGMA_FACTOR = 1.1
FLOOR_FRACTION = 0.01
FLOOR_PROBE_POINTS = 512


def latin_hypercube(n: int, lower, upper, seed) -> np.ndarray:
    """``n`` points in the box, exactly one per stratum along every axis."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    if lower.shape != upper.shape or np.any(upper <= lower):
        raise ValueError(f"degenerate box {lower} .. {upper}")
    unit = qmc.LatinHypercube(d=lower.size, rng=np.random.default_rng(seed)).random(n)
    return lower + unit * (upper - lower)


def heuristic(kind: str, mlp: MLP, problem: ProblemSpec, x, t) -> np.ndarray:
    if kind == "energy":
        b = eval_with_input_derivs(mlp, x, t, order=1)
        return energy_density(b.u, b.grad_x, problem)
    if kind == "residual":
        r = residual(eval_with_input_derivs(mlp, x, t, order=2), problem)
        return r * r
    raise ValueError(f"unknown density kind {kind!r}")


@dataclass
class DensitySpec:
    """Unnormalised sampling density ``floor + heuristic(network)``."""

    kind: str
    mlp: MLP
    problem: ProblemSpec
    floor: float = 0.0

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.floor < 0:
            raise ValueError("density floor must be >= 0")

    def __call__(self, x, t) -> np.ndarray:
        return density_eval(self, x, t)


def density_eval(spec: DensitySpec, x, t) -> np.ndarray:
    h = heuristic(spec.kind, spec.mlp, spec.problem, x, t)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError(f"non-finite {spec.kind} density")
    return spec.floor + h


def floor_constant(kind: str, mlp: MLP, problem: ProblemSpec, slice_final_time: float,
                   seed, fraction: float = FLOOR_FRACTION,
                   n_probe: int = FLOOR_PROBE_POINTS) -> float:
    """``fraction`` times the mean heuristic over a uniform probe of the slice."""
    lower = list(problem.lower) + [0.0]
    upper = list(problem.upper) + [slice_final_time]
    probe = latin_hypercube(n_probe, lower, upper, seed)
    c = fraction * float(np.mean(heuristic(kind, mlp, problem, probe[:, :-1], probe[:, -1])))
    if not np.isfinite(c):
        raise FloatingPointError(f"non-finite {kind} density floor")
    return c


def wrap(x: np.ndarray, lower, upper) -> np.ndarray:
    lower = np.asarray(lower)
    width = np.asarray(upper) - lower
    return lower + np.mod(x - lower, width)


@dataclass
class MHState:
    x: np.ndarray            # (n_chains, d) spatial positions
    t: np.ndarray            # (n_chains,) frozen times
    sigma: float
    lower: np.ndarray
    upper: np.ndarray
    rng: np.random.Generator
    accept_count: int = 0
    proposal_count: int = 0
    window_accept: int = 0
    window_proposals: int = 0
    density_values: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_chains(self) -> int:
        return self.x.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.proposal_count if self.proposal_count else float("nan")

    def reset_counts(self) -> None:
        self.accept_count = self.proposal_count = 0
        self.window_accept = self.window_proposals = 0


def adapt_proposal(state: MHState) -> MHState:
    """Nudge ``sigma`` towards a windowed acceptance rate in [0.2, 0.6]."""
    if state.window_proposals > 0:
        rate = state.window_accept / state.window_proposals
        if rate > TARGET_ACCEPT[1]:
            state.sigma *= SIGMA_FACTOR
        elif rate < TARGET_ACCEPT[0]:
            state.sigma /= SIGMA_FACTOR
        width = float(np.min(state.upper - state.lower))
        state.sigma = float(np.clip(state.sigma, 1e-6 * width, width))
    state.window_accept = state.window_proposals = 0
    return state


def mh_sweep(state: MHState, density: Callable, iterations: int,
             adapt_every: int | None = ADAPT_EVERY) -> MHState:
    """Run ``iterations`` random-walk Metropolis steps on every chain (in place).

    Proposals move only the spatial coordinates and wrap periodically into
    the domain, so the Gaussian proposal stays symmetric and the acceptance
    probability is min(1, f(x') / f(x)).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = state.rng
    n, d = state.x.shape
    f_cur = density(state.x, state.t)
    for it in range(1, iterations + 1):
        prop = wrap(state.x + state.sigma * rng.standard_normal((n, d)), state.lower, state.upper)
        f_prop = density(prop, state.t)
        accept = rng.random(n) * f_cur <= f_prop
        state.x = np.where(accept[:, None], prop, state.x)
        f_cur = np.where(accept, f_prop, f_cur)
        k = int(np.count_nonzero(accept))
        state.accept_count += k
        state.proposal_count += n
        state.window_accept += k
        state.window_proposals += n
        if adapt_every and it % adapt_every == 0:
            adapt_proposal(state)
    state.density_values = f_cur
    return state


def init_adaptive_points(n: int, slice_final_time: float, density: Callable,
                         problem: ProblemSpec, seed,
                         iterations: int = MH_INIT_ITERATIONS) -> MHState:
    """Fresh chains for a time slice: stratified frozen times, then a long MH run."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    t = latin_hypercube(n, [0.0], [slice_final_time], rng)[:, 0]
    x = latin_hypercube(n, problem.lower, problem.upper, rng)
    state = MHState(x=x, t=t, sigma=float(np.sqrt(problem.gamma1)),
                    lower=np.asarray(problem.lower), upper=np.asarray(problem.upper), rng=rng)
    if iterations > 0:
        mh_sweep(state, density, iterations)
    return state


def split_counts(n_total: int, lam: float) -> tuple[int, int]:
    n_adaptive = int(round(lam * n_total))
    return n_adaptive, n_total - n_adaptive


@dataclass
class CollocationSet:
    adaptive: MHState | None
    uniform_x: np.ndarray
    uniform_t: np.ndarray
    lam: float
    slice_final_time: float

    @property
    def n_adaptive(self) -> int:
        return 0 if self.adaptive is None else self.adaptive.n_chains

    @property
    def n_uniform(self) -> int:
        return self.uniform_t.shape[0]

    @property
    def adaptive_x(self) -> np.ndarray:
        d = self.uniform_x.shape[1]
        return self.adaptive.x if self.adaptive is not None else np.empty((0, d))

    @property
    def adaptive_t(self) -> np.ndarray:
        return self.adaptive.t if self.adaptive is not None else np.empty(0)


def uniform_points(n: int, problem: ProblemSpec, slice_final_time: float, seed):
    pts = latin_hypercube(n, list(problem.lower) + [0.0],
                          list(problem.upper) + [slice_final_time], seed)
    return pts[:, :-1].copy(), pts[:, -1].copy()


def make_collocation_set(n_total: int, lam: float, slice_final_time: float,
                         density: Callable, problem: ProblemSpec, seed,
                         mh_iterations: int = MH_INIT_ITERATIONS) -> CollocationSet:
    rng = np.random.default_rng(seed)
    n_adaptive, n_uniform = split_counts(n_total, lam)
    adaptive = None
    if n_adaptive > 0:
        adaptive = init_adaptive_points(n_adaptive, slice_final_time, density, problem,
                                        rng.integers(2 ** 63), iterations=mh_iterations)
    if n_uniform > 0:
        ux, ut = uniform_points(n_uniform, problem, slice_final_time, rng.integers(2 ** 63))
    else:
        ux, ut = np.empty((0, problem.spatial_dim)), np.empty(0)
    return CollocationSet(adaptive, ux, ut, lam, slice_final_time)


def refresh_adaptive_points(cset: CollocationSet, density: Callable,
                            iterations: int = MH_REFRESH_ITERATIONS) -> CollocationSet:
    """Short MH run on the adaptive chains; times and uniform points untouched."""
    if cset.adaptive is not None and iterations > 0:
        mh_sweep(cset.adaptive, density, iterations)
    return cset


def write_points_csv(path, cset: CollocationSet) -> None:
    """Columns ``x[,y],t,kind`` with kind in {adaptive, uniform}."""
    d = cset.uniform_x.shape[1]
    names = ["x", "y"][:d]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["t", "kind"])
        for kind, xs, ts in (("adaptive", cset.adaptive_x, cset.adaptive_t),
                             ("uniform", cset.uniform_x, cset.uniform_t)):
            for xi, ti in zip(xs, ts):
                w.writerow([repr(float(v)) for v in xi] + [repr(float(ti)), kind])


def read_points_csv(path):
    """Inverse of :func:`write_points_csv`: returns ``{kind: (x, t)}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = len(header) - 2
    out = {}
    for kind in ("adaptive", "uniform"):
        sel = [r for r in body if r[-1] == kind]
        x = np.array([[float(v) for v in r[:d]] for r in sel]).reshape(-1, d)
        t = np.array([float(r[d]) for r in sel])
        out[kind] = (x, t)
    return out
