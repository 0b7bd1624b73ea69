"""Command line entry point: ``adaptive-pinn {train,reference,evaluate,sweep,dump-points}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from ._alloc import tune_allocator
from .net import load_checkpoint
from .sampling import DensitySpec, floor_constant, make_collocation_set, write_points_csv


def _build_config(args) -> ex.ExperimentConfig:
    if args.config:
        d = json.loads(Path(args.config).read_text())
    else:
        d = {"preset": args.preset or "example1"}
    if args.preset and args.config:
        d["preset"] = args.preset
    if args.profile:
        d["profile"] = args.profile
    d.setdefault("train", {})
    if args.seed is not None:
        d["train"]["seed"] = args.seed
    if getattr(args, "method", None):
        d["method"] = args.method
    if "name" not in d:
        d["name"] = "-".join(str(p) for p in (d.get("preset") or "run", d.get("profile") or "",
                                               d.get("method") or d["train"].get("density_kind") or "")
                             if p)
    return ex.config_from_dict(d)


def _limit_threads(n):
    if n is None:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        logging.getLogger(__name__).warning("threadpoolctl missing; --threads ignored")
        return None
    return threadpool_limits(limits=n)


def cmd_train(args) -> int:
    cfg = _build_config(args)
    report, out, _ = ex.run_experiment(cfg, args.out)
    print(report.to_json())
    print(f"artifacts written to {out}")
    return 0


def cmd_reference(args) -> int:
    cfg = _build_config(args)
    out = Path(args.out) if args.out else None
    sol, directory, computed = ex.make_reference(cfg, out, force=args.force)
    state = "computed" if computed else "up to date"
    print(f"reference {state}: {directory} (n={sol.n_grid}, dt={sol.dt}, "
          f"{len(sol.snapshot_times)} snapshots)")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _build_config(args)
    report = ex.evaluate_checkpoint(cfg, args.checkpoint, T=args.time)
    text = report.to_json()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "errors.json").write_text(text)
    print(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = _build_config(args)
    methods = [args.method] if args.method else list(ex.METHODS)
    seeds = args.seeds or [cfg.train.seed]
    rows = ex.run_lambda_sweep(cfg, args.lambdas, methods, seeds, args.out,
                               workers=args.threads or 1)
    for r in rows:
        print(f"{r['method']:>8}  lambda={r['lambda']:<5g} seed={r['seed']:<4d} "
              f"rel_l2={r['rel_l2']:.3e}  linf={r['linf']:.3e}  {r['status']}")
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def cmd_dump_points(args) -> int:
    cfg = _build_config(args)
    mlp, meta = load_checkpoint(args.checkpoint)
    s = args.slice_time if args.slice_time is not None else meta.get("slice_time",
                                                                    cfg.problem.final_time)
    rng = np.random.default_rng(cfg.train.seed)
    floor = floor_constant(cfg.method, mlp, cfg.problem, s, rng.integers(2 ** 63),
                           cfg.train.floor_fraction)
    cset = make_collocation_set(cfg.train.n_collocation, cfg.train.lam, s,
                                DensitySpec(cfg.method, mlp, cfg.problem, floor), cfg.problem,
                                rng.integers(2 ** 63), cfg.train.mh_init_iterations)
    out = Path(args.out or ex.default_out_root() / cfg.name) / "points.csv"
    write_points_csv(out, cset)
    print(f"wrote {cset.n_adaptive} adaptive and {cset.n_uniform} uniform points to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-pinn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--preset", help="example1|example2|example3[-energy|-residual]")
        p.add_argument("--profile", choices=ex.PROFILES)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=f"output directory (default ${ex.OUT_ENV} or ./runs)")
        p.add_argument("--method", choices=ex.METHODS)
        p.add_argument("--threads", type=int, help="BLAS threads; sweep: worker processes")

    p = sub.add_parser("train", help="train, evaluate and write all artifacts")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reference", help="compute the finite-difference reference")
    common(p)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("evaluate", help="error report for a saved checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--time", type=float, help="evaluation time (default final time)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="lambda sweep over both sampling methods")
    common(p)
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.2, 0.4, 0.6, 0.8, 0.9])
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-points", help="sample collocation points for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--slice-time", type=float)
    p.set_defaults(func=cmd_dump_points)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    tune_allocator()
    limiter = None if args.command == "sweep" else _limit_threads(args.threads)
    try:
        return args.func(args)
    except ex.ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
