"""Time-sliced PINN training with adaptively sampled collocation points.

For each time slice ``[0, s]`` the trainer

1. sets the learning rate for ``s``,
2. draws adaptive points by a long MH run and uniform points by Latin
   hypercube,
3. runs ``epochs_per_slice`` epochs of clipped Adam over disjoint
   minibatches, refreshing the adaptive points with a short MH run after
   every epoch.

The loss is::

    ic_weight * L_ic + L_bc + lam * w * L_adaptive + (1 - lam) * L_uniform

with ``w = sqrt(gamma2 / gamma1)`` by default.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable

import numpy as np

from . import sampling
from .net import (MLP, EvalBundle, LossTerm, NonFiniteLossError, init_mlp,
                  loss_param_gradient, save_checkpoint)
from .optimizer import AdamState, LrSchedule, EXAMPLE1_SCHEDULE, adam_step, clip_gradient, lr_for_slice
from .pde import ProblemSpec, boundary_pairs, initial_condition
from .sampling import CollocationSet, DensitySpec

log = logging.getLogger(__name__)

WEIGHT_MODES = ("multiply", "replace")
IC_BATCHING = ("split", "full")


class TrainingAborted(RuntimeError):
    def __init__(self, message, slice_time=None, epoch=None, batch=None):
        super().__init__(f"{message} (slice_time={slice_time}, epoch={epoch}, batch={batch})")
        self.slice_time = slice_time
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    layer_sizes: tuple = (2, 128, 128, 128, 128, 128, 128, 1)
    n_collocation: int = 10_000
    minibatch_size: int = 40
    epochs_per_slice: int = 100
    lam: float = 0.6
    ic_weight: float = 1000.0
    adaptive_weight: float | None = None
    weight_mode: str = "multiply"
    lr_schedule: LrSchedule = EXAMPLE1_SCHEDULE
    clip_norm: float = 1.0
    seed: int = 0
    density_kind: str = "energy"
    n_ic_points: int = 1000
    # "full": every step sees all IC points; "split" deals them out across the epoch
    ic_batching: str = "full"
    mh_init_iterations: int = sampling.MH_INIT_ITERATIONS
    mh_refresh_iterations: int = sampling.MH_REFRESH_ITERATIONS
    floor_fraction: float = sampling.FLOOR_FRACTION
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if not isinstance(self.lr_schedule, LrSchedule):
            self.lr_schedule = LrSchedule(tuple(tuple(s) for s in self.lr_schedule))

    def validate(self) -> list[str]:
        errors = []
        if not 0.0 <= self.lam <= 1.0:
            errors.append(f"lambda must be in [0, 1] (got {self.lam})")
        if self.minibatch_size < 2:
            errors.append("minibatch_size must be >= 2")
        if self.minibatch_size > self.n_collocation:
            errors.append("minibatch_size must not exceed n_collocation")
        if self.epochs_per_slice < 1:
            errors.append("epochs_per_slice must be >= 1")
        if not self.ic_weight > 0:
            errors.append("ic_weight must be > 0")
        if self.adaptive_weight is not None and self.adaptive_weight < 0:
            errors.append("adaptive_weight must be >= 0")
        if self.weight_mode not in WEIGHT_MODES:
            errors.append(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.ic_batching not in IC_BATCHING:
            errors.append(f"ic_batching must be one of {IC_BATCHING}")
        if self.density_kind not in sampling.DENSITY_KINDS:
            errors.append(f"density_kind must be one of {sampling.DENSITY_KINDS}")
        if not self.clip_norm > 0:
            errors.append("clip_norm must be > 0")
        if self.n_ic_points < 1:
            errors.append("n_ic_points must be >= 1")
        if len(self.layer_sizes) < 2 or self.layer_sizes[-1] != 1 or min(self.layer_sizes) < 1:
            errors.append(f"invalid layer_sizes {list(self.layer_sizes)}")
        return errors

    def resolved_adaptive_weight(self, problem: ProblemSpec) -> float:
        if self.adaptive_weight is not None:
            return float(self.adaptive_weight)
        return math.sqrt(problem.gamma2 / problem.gamma1)

    def pde_coefficients(self, problem: ProblemSpec) -> tuple[float, float]:
        """Coefficients of (L_adaptive, L_uniform) in the total loss."""
        w = self.resolved_adaptive_weight(problem)
        if self.weight_mode == "replace":
            return (w if self.lam > 0 else 0.0), 1.0 - self.lam
        return self.lam * w, 1.0 - self.lam

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        d["lr_schedule"] = self.lr_schedule.to_list()
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass
class LossBreakdown:
    total: float
    l_ic: float
    l_bc: float
    l_pde_adaptive: float
    l_pde_uniform: float


def recompose_total(b: LossBreakdown, config: TrainConfig, problem: ProblemSpec) -> float:
    c_ad, c_un = config.pde_coefficients(problem)
    return config.ic_weight * b.l_ic + b.l_bc + c_ad * b.l_pde_adaptive + c_un * b.l_pde_uniform


@dataclass
class Minibatch:
    adaptive_x: np.ndarray
    adaptive_t: np.ndarray
    uniform_x: np.ndarray
    uniform_t: np.ndarray
    ic_x: np.ndarray
    bc_t: np.ndarray
    bc_faces: np.ndarray | None = None
    adaptive_idx: np.ndarray | None = None
    uniform_idx: np.ndarray | None = None


def partition_minibatches(cset: CollocationSet, n_mini: int, seed):
    """Disjoint (adaptive_idx, uniform_idx) pairs, ``round(lam * n_mini)`` adaptive each.

    The number of batches is limited by whichever pool runs out first;
    leftover points are skipped for this epoch.
    """
    if n_mini < 2:
        raise ValueError("minibatch size must be >= 2")
    n_ad_per = int(round(cset.lam * n_mini))
    n_un_per = n_mini - n_ad_per
    if n_ad_per > cset.n_adaptive or n_un_per > cset.n_uniform:
        raise ValueError(f"minibatch needs {n_ad_per} adaptive / {n_un_per} uniform points, "
                         f"pools hold {cset.n_adaptive} / {cset.n_uniform}")
    limits = []
    if n_ad_per:
        limits.append(cset.n_adaptive // n_ad_per)
    if n_un_per:
        limits.append(cset.n_uniform // n_un_per)
    n_batches = min(limits)
    rng = np.random.default_rng(seed)
    ad_perm = rng.permutation(cset.n_adaptive)
    un_perm = rng.permutation(cset.n_uniform)
    return [(ad_perm[b * n_ad_per:(b + 1) * n_ad_per], un_perm[b * n_un_per:(b + 1) * n_un_per])
            for b in range(n_batches)]


def _pde_term(problem: ProblemSpec, coef: float, x, t, name: str, raw: dict) -> LossTerm:
    g1, g2 = problem.gamma1, problem.gamma2

    def fn(b: EvalBundle):
        u = b.u
        r = b.du_dt - g1 * b.laplacian_x + g2 * (u ** 3 - u)
        raw[name] = float(np.mean(r * r))
        c = coef * 2.0 * r / r.size
        return coef * raw[name], EvalBundle(u=c * g2 * (3.0 * u * u - 1.0), du_dt=c,
                                            laplacian_x=-g1 * c)

    return LossTerm(x, t, 2, fn, name)


def _ic_term(problem: ProblemSpec, weight: float, x, raw: dict) -> LossTerm:
    target = initial_condition(problem, x)

    def fn(b: EvalBundle):
        r = b.u - target
        raw["ic"] = float(np.mean(r * r))
        return weight * raw["ic"], EvalBundle(u=weight * 2.0 * r / r.size)

    return LossTerm(x, np.zeros(x.shape[0]), 0, fn, "ic")


def _bc_terms(problem: ProblemSpec, t, faces, raw: dict) -> list[LossTerm]:
    terms = []
    raw["bc"] = 0.0
    for axis, (lo, hi, tt) in enumerate(boundary_pairs(problem, t, faces)):
        n = tt.size

        def fn(b: EvalBundle, axis=axis, n=n):
            du = b.u[:n] - b.u[n:]
            dn = b.grad_x[:n, axis] - b.grad_x[n:, axis]
            value = float(np.mean(du * du + dn * dn))
            raw["bc"] += value
            cu = 2.0 * du / n
            cn = 2.0 * dn / n
            cg = np.zeros_like(b.grad_x)
            cg[:n, axis] = cn
            cg[n:, axis] = -cn
            return value, EvalBundle(u=np.concatenate([cu, -cu]), grad_x=cg)

        terms.append(LossTerm(np.concatenate([lo, hi]), np.concatenate([tt, tt]), 1, fn,
                              f"bc{axis}"))
    return terms


def build_loss_terms(batch: Minibatch, problem: ProblemSpec, config: TrainConfig, raw: dict):
    c_ad, c_un = config.pde_coefficients(problem)
    terms = [_ic_term(problem, config.ic_weight, batch.ic_x, raw)]
    if batch.bc_t.size:
        terms += _bc_terms(problem, batch.bc_t, batch.bc_faces, raw)
    if c_ad > 0:
        if batch.adaptive_t.size == 0:
            raise ValueError("empty adaptive sub-batch with nonzero adaptive weight")
        terms.append(_pde_term(problem, c_ad, batch.adaptive_x, batch.adaptive_t, "adaptive", raw))
    if c_un > 0:
        if batch.uniform_t.size == 0:
            raise ValueError("empty uniform sub-batch with nonzero uniform weight")
        terms.append(_pde_term(problem, c_un, batch.uniform_x, batch.uniform_t, "uniform", raw))
    if batch.ic_x.shape[0] == 0:
        raise ValueError("empty initial-condition batch")
    return terms


def loss_and_gradient(mlp: MLP, batch: Minibatch, problem: ProblemSpec, config: TrainConfig):
    """``(LossBreakdown, ParamGrad)`` for one minibatch."""
    raw: dict = {}
    terms = build_loss_terms(batch, problem, config, raw)
    _, grad, _ = loss_param_gradient(mlp, terms)
    b = LossBreakdown(0.0, raw.get("ic", 0.0), raw.get("bc", 0.0),
                      raw.get("adaptive", 0.0), raw.get("uniform", 0.0))
    b.total = recompose_total(b, config, problem)
    if not np.isfinite(b.total):
        raise NonFiniteLossError(f"non-finite loss {b.total}")
    return b, grad


def assemble_loss(mlp: MLP, batch: Minibatch, problem: ProblemSpec,
                  config: TrainConfig) -> LossBreakdown:
    return loss_and_gradient(mlp, batch, problem, config)[0]


@dataclass
class EpochRecord:
    epoch: int
    slice_time: float
    lr: float
    total: float
    l_ic: float
    l_bc: float
    l_pde_adaptive: float
    l_pde_uniform: float
    mh_accept_rate: float
    wall_ms: float


HISTORY_COLUMNS = ("epoch", "slice_time", "lr", "total", "l_ic", "l_bc",
                   "l_pde_adaptive", "l_pde_uniform", "mh_accept_rate", "wall_ms")


@dataclass
class SliceRecord:
    """Errors of the network at the end of one slice, at every slice boundary."""

    slice_time: float
    rel_l2: dict                     # boundary time -> relative L2
    linf_trained: float              # L-inf over [0, slice_time]
    linf_full: float                 # L-inf over the whole reference horizon


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    slices: list = field(default_factory=list)
    last_points: CollocationSet | None = None

    def deterministic_rows(self) -> list[tuple]:
        return [tuple(getattr(r, c) for c in HISTORY_COLUMNS if c != "wall_ms") for r in self.epochs]

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.epochs:
                w.writerow([repr(getattr(r, c)) if isinstance(getattr(r, c), float)
                            else getattr(r, c) for c in HISTORY_COLUMNS])


def _seed(config: TrainConfig, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, *keys]))


def _make_batches(cset: CollocationSet, ic_x: np.ndarray, problem: ProblemSpec,
                  config: TrainConfig, rng: np.random.Generator) -> list[Minibatch]:
    parts = partition_minibatches(cset, config.minibatch_size, rng.integers(2 ** 63))
    if config.ic_batching == "split":
        ic_chunks = np.array_split(rng.permutation(ic_x.shape[0]), len(parts))
    else:
        ic_chunks = [np.arange(ic_x.shape[0])] * len(parts)
    batches = []
    for (ai, ui), ic_idx in zip(parts, ic_chunks):
        ad_x, ad_t = cset.adaptive_x[ai], cset.adaptive_t[ai]
        un_x, un_t = cset.uniform_x[ui], cset.uniform_t[ui]
        bc_t = un_t if un_t.size else ad_t
        faces = None
        if problem.spatial_dim > 1:
            faces = sampling.latin_hypercube(bc_t.size, problem.lower, problem.upper,
                                             rng.integers(2 ** 63))
        batches.append(Minibatch(ad_x, ad_t, un_x, un_t, ic_x[ic_idx], bc_t, faces, ai, ui))
    return batches


def train_slice(mlp: MLP, state: AdamState, problem: ProblemSpec, config: TrainConfig,
                slice_final_time: float, slice_index: int = 0, epoch_offset: int = 0):
    """Train on ``[0, slice_final_time]``; returns ``(mlp, state, records, cset)``."""
    if slice_final_time > problem.final_time + 1e-12:
        raise ValueError("slice_final_time exceeds the problem's final time")
    lr = lr_for_slice(config.lr_schedule, slice_final_time)
    kind = config.density_kind
    try:
        floor = sampling.floor_constant(kind, mlp, problem, slice_final_time,
                                        _seed(config, slice_index, 1), config.floor_fraction)
        density = DensitySpec(kind, mlp, problem, floor)
        cset = sampling.make_collocation_set(config.n_collocation, config.lam,
                                             slice_final_time, density, problem,
                                             _seed(config, slice_index, 2),
                                             config.mh_init_iterations)
    except FloatingPointError as exc:
        raise TrainingAborted(str(exc), slice_final_time, None, None) from exc
    ic_x = sampling.latin_hypercube(config.n_ic_points, problem.lower, problem.upper,
                                    _seed(config, slice_index, 3))
    batch_rng = _seed(config, slice_index, 4)
    records = []
    for epoch in range(config.epochs_per_slice):
        t0 = time.perf_counter()
        sums = np.zeros(5)
        batches = _make_batches(cset, ic_x, problem, config, batch_rng)
        for b_idx, batch in enumerate(batches):
            try:
                parts, grad = loss_and_gradient(mlp, batch, problem, config)
                grad = clip_gradient(grad, config.clip_norm)
                mlp, state = adam_step(mlp, grad, state, lr)
            except FloatingPointError as exc:
                raise TrainingAborted(str(exc), slice_final_time, epoch, b_idx) from exc
            sums += (parts.total, parts.l_ic, parts.l_bc, parts.l_pde_adaptive, parts.l_pde_uniform)
        accept = float("nan")
        if cset.adaptive is not None and config.mh_refresh_iterations > 0:
            cset.adaptive.reset_counts()
            try:
                sampling.refresh_adaptive_points(
                    cset, DensitySpec(kind, mlp, problem, floor), config.mh_refresh_iterations)
            except FloatingPointError as exc:
                raise TrainingAborted(str(exc), slice_final_time, epoch, None) from exc
            accept = cset.adaptive.acceptance_rate
        mean = sums / len(batches)
        records.append(EpochRecord(epoch_offset + epoch, float(slice_final_time), lr,
                                   *map(float, mean), accept,
                                   (time.perf_counter() - t0) * 1e3))
        log.debug("slice %.3g epoch %d loss %.4e accept %.3f", slice_final_time, epoch,
                  mean[0], accept)
    return mlp, state, records, cset


def slice_errors(mlp: MLP, reference, problem: ProblemSpec, slice_time: float) -> SliceRecord:
    from .metrics import relative_l2_at, linf_spacetime

    horizon = float(reference.snapshot_times[-1])
    rel = {}
    for s in problem.slice_times():
        if s <= horizon + 1e-9:
            rel[round(s, 12)] = relative_l2_at(mlp, reference, s)
    return SliceRecord(slice_time, rel, linf_spacetime(mlp, reference, until=slice_time),
                       linf_spacetime(mlp, reference))


def train(problem: ProblemSpec, config: TrainConfig, reference=None,
          checkpoint_dir=None, final_time: float | None = None,
          on_slice: Callable | None = None):
    """Train one network through all slices up to ``final_time``.

    With a ``reference`` solution, errors at every slice boundary are
    recorded after each slice (``history.slices``) so loss of accuracy on
    earlier times can be tracked.  Returns ``(mlp, history)``.
    """
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))
    if config.layer_sizes[0] != problem.spatial_dim + 1:
        raise ValueError("network input size must be spatial_dim + 1")
    T = problem.final_time if final_time is None else final_time
    mlp = init_mlp(config.layer_sizes, config.seed)
    state = AdamState.zeros(mlp, config.beta1, config.beta2, config.adam_epsilon)
    history = TrainHistory()
    for k, s in enumerate(problem.slice_times()):
        if s > T + 1e-12:
            break
        log.info("slice %d: [0, %g]", k, s)
        mlp, state, records, cset = train_slice(mlp, state, problem, config, s, k,
                                                len(history.epochs))
        history.epochs.extend(records)
        history.last_points = cset
        if reference is not None:
            history.slices.append(slice_errors(mlp, reference, problem, s))
        if checkpoint_dir is not None:
            save_checkpoint(mlp, Path(checkpoint_dir) / f"slice_{k:03d}.ckpt",
                            {"slice_time": s, "epochs": len(history.epochs),
                             "adam_steps": state.step_count})
        if on_slice is not None:
            on_slice(k, s, mlp, history)
    return mlp, history
