"""Command-line pipeline: solve / generate / train / eval / bench.

Exit codes: 0 success, 2 numerical failure, 3 usage or input error.
Every command writes a manifest.json into its output directory; rerunning a
command with the same seeds reproduces all non-timing outputs byte-for-byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, benchmarks, dataset, evaluation, shooting, tree
from .dynamics import FrmabInstance, load_instance, save_instance
from .errors import DimensionMismatch, FrmabError, MalformedModel

log = logging.getLogger("frmab")

_USAGE_ERRORS = (MalformedModel, DimensionMismatch, ValueError, OSError,
                 json.JSONDecodeError, KeyError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(3)


def _default_seed() -> int:
    return int(os.environ.get("FRMAB_SEED", "0"))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_manifest(out: Path, command: str, args: argparse.Namespace,
                    seeds: dict, outputs: list[str], started: str):
    config = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "outputs": outputs,
        "version": __version__,
        "started": started,
        "finished": _now(),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, default=str)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_instance_flags(p, with_paper=False):
    p.add_argument("--instance", help="path to an instance JSON file")
    p.add_argument("--family", choices=[f.value for f in benchmarks.BenchmarkFamily],
                   help="benchmark family to sample")
    p.add_argument("--n", type=int, default=5, help="number of projects")
    p.add_argument("--T", type=float, default=1.0, help="time horizon")
    p.add_argument("--m", type=int, default=None,
                   help="effort budget (default: floor(0.3 n), at least 1)")
    p.add_argument("--eps", type=float, default=None, help="shooting tolerance")
    p.add_argument("--delta", type=float, default=None, help="grid step")
    if with_paper:
        p.add_argument("--paper-params", action="store_true",
                       help="use the two-queue routing reference configuration")


def _resolve_instance(args, seed: int) -> FrmabInstance:
    if getattr(args, "paper_params", False):
        inst = benchmarks.paper_routing_instance()
    elif args.instance:
        inst = load_instance(args.instance)
    elif args.family:
        spec = benchmarks.BenchmarkSpec(args.family, args.n, args.T, seed, budget=args.m)
        inst = benchmarks.generate_instance(spec)
    else:
        raise ValueError("provide --instance, --family, or --paper-params")
    replace = {}
    if args.eps is not None:
        replace["eps"] = args.eps
    if args.delta is not None:
        replace["delta"] = args.delta
    if replace:
        inst = dataclasses.replace(inst, **replace)
    return inst


def _instance_extras(inst: FrmabInstance) -> dict:
    meta = inst.family_meta or {}
    return {"family": meta.get("family", inst.family.value),
            "n": inst.n, "horizon": inst.horizon}


# ---------------------------------------------------------------------------
# commands

def cmd_solve(args) -> int:
    started = _now()
    out = _out_dir(args)
    seed = args.seed
    inst = _resolve_instance(args, seed)
    if args.x0:
        x0 = np.array([float(v) for v in args.x0.split(",")])
        if x0.shape != (inst.n,):
            raise ValueError(f"--x0 needs {inst.n} comma-separated values")
    elif args.sample:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
        x0 = dataset.sample_x0(inst, rng, args.x0_box)
    else:
        raise ValueError("provide --x0 or --sample")
    traj = shooting.solve(inst, x0, seed=np.random.SeedSequence([seed, 3]))
    save_instance(inst, out / "instance.json")
    shooting.write_trajectory_csv(traj, out / "trajectory.csv")
    shooting.write_segments_json(traj, out / "segments.json")
    outputs = ["instance.json", "trajectory.csv", "segments.json"]
    if args.plot:
        from . import plots
        plots.save_trajectory_figure(traj, out / "trajectory.svg")
        outputs.append("trajectory.svg")
    residual = float(np.max(np.abs(traj.terminal_costate())))
    print(f"objective      {traj.objective:.10g}")
    print(f"|y(T)|_inf     {residual:.3e}")
    print(f"segments       {len(traj.segments)}")
    _write_manifest(out, "solve", args, {"seed": seed}, outputs, started)
    return 0


def cmd_generate(args) -> int:
    started = _now()
    out = _out_dir(args)
    seed = args.seed
    inst = _resolve_instance(args, seed)
    ds = dataset.generate_dataset(inst, args.M, [seed, 1], per_segment=args.per_segment,
                                  x0_box=args.x0_box, jobs=args.jobs)
    save_instance(inst, out / "instance.json")
    dataset.write_csv(ds, out / "dataset.csv")
    dataset.write_sidecar(ds, out / "dataset_meta.json", seed=seed, M=args.M,
                          per_segment=args.per_segment, x0_box=args.x0_box)
    print(f"samples        {len(ds)}")
    print(f"classes        {len(ds.class_table)}")
    print(f"features       {len(ds.feature_names)}")
    _write_manifest(out, "generate", args, {"seed": seed},
                    ["instance.json", "dataset.csv", "dataset_meta.json"], started)
    return 0


def _sidecar_for(csv_path: Path) -> Path:
    return csv_path.parent / (csv_path.stem + "_meta.json")


def cmd_train(args) -> int:
    started = _now()
    out = _out_dir(args)
    csv_path = Path(args.data)
    sidecar = Path(args.sidecar) if args.sidecar else _sidecar_for(csv_path)
    ds = dataset.read_csv(csv_path, sidecar)
    depths = tuple(int(d) for d in args.depths.split(","))
    cfg = tree.TrainConfig(depth_grid=depths, min_leaf=args.min_leaf,
                           val_fraction=args.val_fraction,
                           restarts_per_node=args.restarts, seed=args.seed)
    t0 = time.perf_counter()
    model = tree.train(ds, cfg)
    train_time = time.perf_counter() - t0
    model.train_meta["training_time_s"] = train_time
    tree.save(model, out / "model.json")
    for depth, acc in model.train_meta["val_accuracy_per_depth"].items():
        print(f"depth {depth:>3}: validation accuracy {acc:.4f}")
    print(f"selected depth {model.depth} ({train_time:.1f}s)")
    _write_manifest(out, "train", args, {"seed": args.seed}, ["model.json"], started)
    return 0


def cmd_eval(args) -> int:
    started = _now()
    out = _out_dir(args)
    model = tree.load(args.model)
    if args.instance:
        inst = load_instance(args.instance)
    elif "instance" in model.train_meta:
        from .dynamics import instance_from_dict
        inst = instance_from_dict(model.train_meta["instance"])
    else:
        raise ValueError("model has no embedded instance; pass --instance")
    extras = _instance_extras(inst)
    if "training_time_s" in model.train_meta:
        extras["training_time_s"] = model.train_meta["training_time_s"]
    report = evaluation.evaluate(
        inst, model, n_instances=args.n_instances, n_heldout=args.heldout_points,
        seed=[args.seed, 2], dt_eval=args.dt_eval, x0_box=args.x0_box, extras=extras)
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    table = evaluation.report_table([report])
    (out / "report.txt").write_text(table)
    print(table, end="")
    outputs = ["report.json", "report.txt"]
    if args.plot:
        from . import plots
        policy = evaluation.make_policy(model)
        plots.save_policy_figure(policy, inst, out / "policy.svg", x0_box=args.x0_box)
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, 5]))
        x0 = dataset.sample_x0(inst, rng, args.x0_box)
        traj = shooting.solve(inst, x0, seed=np.random.SeedSequence([args.seed, 6]))
        plots.save_trajectory_figure(traj, out / "trajectory.svg")
        outputs += ["policy.svg", "trajectory.svg"]
    _write_manifest(out, "eval", args, {"seed": args.seed}, outputs, started)
    return 0


def cmd_bench(args) -> int:
    started = _now()
    out = _out_dir(args)
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    n_list = [int(v) for v in args.n_list.split(",")] if args.n_list else []
    t_list = [float(v) for v in args.T_list.split(",")] if args.T_list else []
    cells = [(fam, n, T) for fam in families for n in n_list for T in t_list]
    reports, failed = [], []
    for ci, (fam, n, T) in enumerate(cells):
        cell_seed = int(np.random.SeedSequence([args.seed, ci]).generate_state(1)[0])
        label = f"{fam} n={n} T={T}"
        try:
            spec = benchmarks.BenchmarkSpec(fam, n, T, cell_seed)
            inst = benchmarks.generate_instance(spec)
            ds = dataset.generate_dataset(inst, args.M, [cell_seed, 1],
                                          per_segment=args.per_segment,
                                          x0_box=args.x0_box, jobs=args.jobs)
            depths = tuple(int(d) for d in args.depths.split(","))
            cfg = tree.TrainConfig(depth_grid=depths, min_leaf=args.min_leaf,
                                   seed=cell_seed)
            t0 = time.perf_counter()
            model = tree.train(ds, cfg)
            train_time = time.perf_counter() - t0
            extras = _instance_extras(inst)
            extras["training_time_s"] = train_time
            report = evaluation.evaluate(
                inst, model, n_instances=args.n_instances,
                n_heldout=args.heldout_points, seed=[cell_seed, 2],
                x0_box=args.x0_box, extras=extras)
            reports.append(report)
            log.info("cell %s done: accuracy=%.4f max_subopt=%.4g",
                     label, report.accuracy, report.max_subopt)
        except Exception as exc:  # keep sweeping past broken cells
            log.error("cell %s FAILED: %s", label, exc)
            failed.append((label, str(exc)))
    table = evaluation.report_table(reports)
    for label, msg in failed:
        table += f"{label}: FAILED ({msg})\n"
    (out / "bench_table.txt").write_text(table)
    with open(out / "bench.json", "w") as fh:
        json.dump({"reports": [r.to_dict() for r in reports],
                   "failed": [{"cell": c, "error": m} for c, m in failed]}, fh, indent=2)
        fh.write("\n")
    print(table, end="")
    _write_manifest(out, "bench", args, {"seed": args.seed},
                    ["bench_table.txt", "bench.json"], started)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="frmab", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("solve", help="solve one instance by the shooting method")
    _add_instance_flags(p, with_paper=True)
    p.add_argument("--x0", help="comma-separated initial state")
    p.add_argument("--sample", action="store_true", help="sample the initial state")
    p.add_argument("--x0-box", type=float, default=10.0,
                   help="upper bound for sampled states on unbounded projects")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--plot", action="store_true", help="write trajectory SVG")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("generate", help="build a training dataset from many solves")
    _add_instance_flags(p)
    p.add_argument("--M", type=int, default=3000, help="number of initial states")
    p.add_argument("--per-segment", type=int, default=10,
                   help="samples extracted per constant-control segment")
    p.add_argument("--x0-box", type=float, default=10.0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel solver processes (1 = serial)")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train an oblique policy tree on a dataset")
    p.add_argument("--data", required=True, help="dataset CSV path")
    p.add_argument("--sidecar", help="dataset sidecar JSON (default: <data>_meta.json)")
    p.add_argument("--depths", default="5,10,15", help="depth grid, comma-separated")
    p.add_argument("--min-leaf", type=int, default=20)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained policy tree")
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--instance", help="instance JSON (default: embedded in the model)")
    p.add_argument("--n-instances", type=int, default=100)
    p.add_argument("--heldout-points", type=int, default=1000)
    p.add_argument("--dt-eval", type=float, default=None)
    p.add_argument("--x0-box", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--plot", action="store_true",
                   help="write policy and trajectory SVG figures")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="sweep generate/train/eval over a grid")
    p.add_argument("--families", default="machine,epidemic,fisheries")
    p.add_argument("--n-list", default="5")
    p.add_argument("--T-list", default="1")
    p.add_argument("--M", type=int, default=300)
    p.add_argument("--per-segment", type=int, default=10)
    p.add_argument("--depths", default="5,10,15")
    p.add_argument("--min-leaf", type=int, default=20)
    p.add_argument("--heldout-points", type=int, default=200)
    p.add_argument("--n-instances", type=int, default=30)
    p.add_argument("--x0-box", type=float, default=10.0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        log.error("%s", exc)
        return 3
    except FrmabError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
