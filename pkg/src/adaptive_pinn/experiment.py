"""Experiment configuration, presets and runners (train / evaluate / sweep)."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import ErrorReport, error_report, error_table
from .net import load_checkpoint, save_checkpoint
from .pde import ProblemSpec
from .reference import (ReferenceSolution, default_snapshot_times, load_reference,
                        save_reference, settings_hash, solve_fd)
from .sampling import write_points_csv
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

OUT_ENV = "PINN_ADAPT_OUT"
METHODS = ("energy", "residual")
PROFILES = ("desk", "full")

_HIDDEN_FULL = [128] * 6
_HIDDEN_DESK = [64] * 3

_EX1_SCHEDULE = [[0.2, 1e-3], [0.4, 5e-4], [0.6, 1e-4], [0.8, 5e-5], [1.0, 1e-5]]
# Example 1 rates with thresholds scaled to the 10 unit-length slices of Example 3.
_EX3_SCHEDULE = [[2.0, 1e-3], [4.0, 5e-4], [6.0, 1e-4], [8.0, 5e-5], [10.0, 1e-5]]

_TRAIN_FULL = {
    "n_collocation": 10_000, "minibatch_size": 40, "epochs_per_slice": 100,
    "lambda": 0.6, "ic_weight": 1000.0, "clip_norm": 1.0, "n_ic_points": 1000,
}

PRESETS = {
    "example1": {
        "full": {
            "problem": {"gamma1": 1e-4, "gamma2": 5.0, "lower": [-1.0], "upper": [1.0],
                        "final_time": 1.0, "initial_condition": "example1", "ic_params": {},
                        "boundary": "periodic", "slice_increment": 0.1},
            "train": dict(_TRAIN_FULL, layer_sizes=[2] + _HIDDEN_FULL + [1],
                          lr_schedule=_EX1_SCHEDULE),
            "reference": {"n_grid": 2048, "dt": 1e-4, "scheme": "imex-cn"},
        },
        "desk": {
            "problem": {"final_time": 0.5},
            "train": {"layer_sizes": [2] + _HIDDEN_DESK + [1], "n_collocation": 2000,
                      "epochs_per_slice": 30},
        },
    },
    "example2": {
        "full": {
            "problem": {"gamma1": 1e-4, "gamma2": 4.0, "lower": [-1.0], "upper": [1.0],
                        "final_time": 1.0, "initial_condition": "example2", "ic_params": {},
                        "boundary": "periodic", "slice_increment": 0.1},
            "train": dict(_TRAIN_FULL, layer_sizes=[2] + _HIDDEN_FULL + [1],
                          lr_schedule=_EX1_SCHEDULE),
            "reference": {"n_grid": 2048, "dt": 1e-4, "scheme": "imex-cn"},
        },
        "desk": {
            "problem": {"final_time": 0.5},
            "train": {"layer_sizes": [2] + _HIDDEN_DESK + [1], "n_collocation": 2000,
                      "epochs_per_slice": 30},
        },
    },
    "example3": {
        "full": {
            # gamma1 = lam * eps^2, gamma2 = lam with lam = 10, eps = 0.025.
            # Slice increment 1.0 gives ten slices up to T = 10.
            "problem": {"gamma1": 6.25e-3, "gamma2": 10.0, "lower": [0.0, 0.0],
                        "upper": [1.0, 1.0], "final_time": 10.0,
                        "initial_condition": "example3_circle",
                        "ic_params": {"epsilon": 0.025, "radius": 0.35, "center": [0.5, 0.5]},
                        "boundary": "periodic", "slice_increment": 1.0},
            "train": dict(_TRAIN_FULL, layer_sizes=[3] + _HIDDEN_FULL + [1],
                          lr_schedule=_EX3_SCHEDULE),
            "reference": {"n_grid": 256, "dt": 1e-3, "scheme": "imex-cn"},
        },
        "desk": {
            "problem": {"final_time": 2.0},
            "train": {"layer_sizes": [3] + _HIDDEN_DESK + [1], "n_collocation": 2000,
                      "epochs_per_slice": 30},
            "reference": {"n_grid": 64},
        },
    },
}

DEFAULT_OUTPUTS = {"dir": None, "history": True, "points": True, "snapshots": True,
                   "errors": True, "checkpoints": True}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "ic_params":
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def split_preset_name(name: str) -> tuple[str, str | None]:
    """``example1-energy`` -> (``example1``, ``energy``)."""
    for m in METHODS:
        if name.endswith("-" + m):
            return name[: -len(m) - 1], m
    return name, None


def resolve_preset(name: str, profile: str = "desk") -> dict:
    base, method = split_preset_name(name)
    if base not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    cfg = copy.deepcopy(PRESETS[base]["full"])
    if profile == "desk":
        cfg = deep_merge(cfg, PRESETS[base]["desk"])
    cfg["preset"] = base
    cfg["profile"] = profile
    if method:
        cfg["train"]["density_kind"] = method
    return cfg


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    train: TrainConfig
    reference: dict
    outputs: dict = field(default_factory=lambda: dict(DEFAULT_OUTPUTS))
    name: str = "run"
    preset: str | None = None
    profile: str | None = None

    @property
    def method(self) -> str:
        return self.train.density_kind

    def to_dict(self) -> dict:
        return {
            "name": self.name, "preset": self.preset, "profile": self.profile,
            "problem": self.problem.to_dict(), "train": self.train.to_dict(),
            "reference": dict(self.reference), "outputs": dict(self.outputs),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, **train_overrides) -> "ExperimentConfig":
        d = self.to_dict()
        d["train"].update(train_overrides)
        return config_from_dict(d)


def validate_config_dict(d: dict) -> list[str]:
    errors = []
    for key in ("problem", "train", "reference"):
        if key not in d:
            errors.append(f"missing section {key!r}")
    if errors:
        return errors
    try:
        problem = ProblemSpec(**d["problem"])
    except (TypeError, ValueError) as exc:
        errors.append(f"problem: {exc}")
        problem = None
    try:
        train_cfg = TrainConfig.from_dict(d["train"])
        errors += [f"train: {e}" for e in train_cfg.validate()]
        if problem is not None and train_cfg.layer_sizes[0] != problem.spatial_dim + 1:
            errors.append("train: layer_sizes[0] must equal spatial_dim + 1")
    except (TypeError, ValueError) as exc:
        errors.append(f"train: {exc}")
    ref = d["reference"]
    if int(ref.get("n_grid", 0)) < 16:
        errors.append("reference: n_grid must be >= 16")
    if not float(ref.get("dt", 0)) > 0:
        errors.append("reference: dt must be > 0")
    if ref.get("scheme", "imex-cn") not in ("imex-cn", "imex-euler"):
        errors.append(f"reference: unknown scheme {ref.get('scheme')!r}")
    return errors


class ConfigError(ValueError):
    def __init__(self, errors):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = errors


def config_from_dict(d: dict) -> ExperimentConfig:
    """Resolve ``preset``/``profile``/``method`` inheritance, then validate."""
    d = copy.deepcopy(d)
    if d.get("preset"):
        base = resolve_preset(d["preset"], d.get("profile") or "desk")
        overrides = {k: v for k, v in d.items() if k in ("problem", "train", "reference", "outputs")}
        merged = deep_merge(base, overrides)
        for k in ("name", "method"):
            if k in d:
                merged[k] = d[k]
        d = merged
    if d.get("method"):
        d.setdefault("train", {})["density_kind"] = d.pop("method")
    errors = validate_config_dict(d)
    if errors:
        raise ConfigError(errors)
    outputs = dict(DEFAULT_OUTPUTS)
    outputs.update(d.get("outputs") or {})
    return ExperimentConfig(
        problem=ProblemSpec(**d["problem"]),
        train=TrainConfig.from_dict(d["train"]),
        reference={"scheme": "imex-cn", **d["reference"]},
        outputs=outputs,
        name=d.get("name") or "run",
        preset=split_preset_name(d["preset"])[0] if d.get("preset") else None,
        profile=d.get("profile"),
    )


def load_config(path) -> ExperimentConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def code_hash() -> str:
    """Content hash of the package sources (stands in for a VCS revision)."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def reference_settings(cfg: ExperimentConfig) -> dict:
    return {"problem": cfg.problem.to_dict(), "n_grid": int(cfg.reference["n_grid"]),
            "dt": float(cfg.reference["dt"]), "scheme": cfg.reference.get("scheme", "imex-cn"),
            "final_time": cfg.problem.final_time}


def make_reference(cfg: ExperimentConfig, directory=None, force: bool = False):
    """Solve and dump the reference unless a dump with the same settings exists.

    Returns ``(solution, directory, computed)``.
    """
    settings = reference_settings(cfg)
    key = settings_hash(settings)
    directory = Path(directory) if directory else default_out_root() / "references" / key
    manifest = directory / "manifest.json"
    if manifest.exists() and not force:
        existing = json.loads(manifest.read_text())
        if existing.get("settings_hash") == key:
            log.info("reference %s up to date", directory)
            return load_reference(directory), directory, False
    sol = solve_fd(cfg.problem, settings["n_grid"], settings["dt"],
                   default_snapshot_times(cfg.problem), scheme=settings["scheme"])
    sol.settings = settings
    save_reference(sol, directory)
    return sol, directory, True


def unlearning_table(history, problem: ProblemSpec, method: str) -> list[dict] | None:
    """Errors at the final time after training to T - increment and to T."""
    if len(history.slices) < 2:
        return None
    final = history.slices[-1]
    prev = history.slices[-2]
    T = round(final.slice_time, 12)
    rows = []
    for rec in (prev, final):
        rows.append({"measure": "relative_l2", "evaluated_at": T,
                     "trained_until": rec.slice_time, method: rec.rel_l2[T]})
    for rec in (prev, final):
        rows.append({"measure": "linf_spacetime", "evaluated_at": T,
                     "trained_until": rec.slice_time, method: rec.linf_full})
    return rows


def run_experiment(cfg: ExperimentConfig, out_dir=None, reference: ReferenceSolution | None = None):
    """Reference (cached), training, evaluation and artifact files.

    Returns ``(ErrorReport, run_directory, TrainHistory)``.
    """
    out_dir = Path(out_dir or cfg.outputs.get("dir") or default_out_root() / cfg.name)
    out_dir.mkdir(parents=True, exist_ok=True)
    if reference is None:
        ref_dir = out_dir / "reference" if cfg.outputs.get("snapshots") else None
        reference, _, _ = make_reference(cfg, ref_dir)
    manifest = {
        "config": cfg.to_dict(), "seed": cfg.train.seed, "code_hash": code_hash(),
        "package_version": __version__, "numpy": np.__version__,
        "python": platform.python_version(),
    }
    (out_dir / "run-manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    ckpt_dir = out_dir / "checkpoints" if cfg.outputs.get("checkpoints") else None
    mlp, history = train(cfg.problem, cfg.train, reference=reference, checkpoint_dir=ckpt_dir)
    T = cfg.problem.final_time
    report = error_report(mlp, reference, T, trained_until=T, method=cfg.method)
    if cfg.outputs.get("history"):
        history.write_csv(out_dir / "history.csv")
    if cfg.outputs.get("points") and history.last_points is not None:
        write_points_csv(out_dir / "points.csv", history.last_points)
    if cfg.outputs.get("checkpoints"):
        save_checkpoint(mlp, out_dir / "checkpoints" / "final.ckpt",
                        {"slice_time": T, "method": cfg.method})
    if cfg.outputs.get("errors"):
        payload = report.to_dict()
        payload["slices"] = [
            {"slice_time": s.slice_time,
             "rel_l2": {repr(k): v for k, v in s.rel_l2.items()},
             "linf_trained": s.linf_trained, "linf_full": s.linf_full}
            for s in history.slices]
        payload["table"] = error_table({(cfg.method, T): report})
        payload["unlearning_table"] = unlearning_table(history, cfg.problem, cfg.method)
        (out_dir / "errors.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return report, out_dir, history


def _sweep_cell(args):
    cfg_dict, lam, method, seed, out_dir, ref_dir = args
    from ._alloc import tune_allocator
    tune_allocator()
    try:
        d = copy.deepcopy(cfg_dict)
        d["train"].update({"lambda": lam, "density_kind": method, "seed": seed})
        d["outputs"] = dict(d.get("outputs") or {}, snapshots=False)
        cfg = config_from_dict(d)
        ref = load_reference(ref_dir)
        report, _, _ = run_experiment(cfg, out_dir, reference=ref)
        return {"method": method, "lambda": lam, "seed": seed,
                "rel_l2": report.rel_l2_at_T, "linf": report.linf_spacetime,
                "status": "ok"}
    except Exception as exc:  # a failed cell is recorded, the sweep goes on
        return {"method": method, "lambda": lam, "seed": seed, "rel_l2": float("nan"),
                "linf": float("nan"), "status": f"error: {exc}"}


SWEEP_COLUMNS = ("method", "lambda", "seed", "rel_l2", "linf", "status")


def run_lambda_sweep(cfg: ExperimentConfig, lambda_values, methods=METHODS, seeds=None,
                     out_dir=None, workers: int = 1):
    """One training per (lambda, method, seed); writes and returns the sweep table."""
    for lam in lambda_values:
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda {lam} outside [0, 1]")
    seeds = [cfg.train.seed] if seeds is None else list(seeds)
    out_dir = Path(out_dir or default_out_root() / f"{cfg.name}-sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    _, ref_dir, _ = make_reference(cfg, out_dir / "reference")
    base = cfg.to_dict()
    cells = [(base, float(lam), m, int(s), out_dir / f"{m}-lam{lam:g}-seed{s}", ref_dir)
             for m in methods for lam in lambda_values for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return rows


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint, reference=None,
                        T: float | None = None) -> ErrorReport:
    mlp, meta = load_checkpoint(checkpoint)
    if reference is None:
        reference, _, _ = make_reference(cfg)
    T = cfg.problem.final_time if T is None else T
    return error_report(mlp, reference, T, trained_until=meta.get("slice_time", T),
                        method=meta.get("method", cfg.method))
