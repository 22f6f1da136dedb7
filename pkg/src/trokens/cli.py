"""``trokens`` command line: one subcommand per pipeline stage.

Every subcommand accepts ``--seed``, ``--deterministic``, ``--threads`` and
``--out`` and leaves a ``run.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import pipeline
from .clustering import assignment_from_labels, cluster_tokens
from .data import FeatureVolume, TrajectorySet, read_tensor, read_trajectories, write_tensor, write_trajectories
from .errors import ConfigError, TrokensError
from .fewshot import TrainConfig, evaluate
from .model import InputCache, ModelConfig
from .motion import HodConfig, hod_descriptor, inter_descriptor
from .net import NetConfig
from .sampler import load_seeds, sample_semantic, sample_uniform_grid, save_seeds, track_points

log = logging.getLogger("trokens")


def _common(out_required: bool = True) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true", help="single-threaded numeric kernels")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    p.add_argument("--out", required=out_required)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="trokens", description="Trajectory-token few-shot action pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic dataset and manifest")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--mode", choices=("neutral", "distinct"), default="neutral")
    p.add_argument("--set", dest="class_set", choices=sorted(pipeline.CLASS_SETS), default="default")
    p.add_argument("--test-classes", type=int, default=3)

    p = sub.add_parser("cluster", parents=[common], help="cluster a feature volume")
    p.add_argument("--features", required=True)
    p.add_argument("--L", type=int, default=16)

    p = sub.add_parser("sample", parents=[common], help="choose seed points")
    p.add_argument("--assign", help="label map from 'cluster' (semantic mode)")
    p.add_argument("--M", type=int, default=256)
    p.add_argument("--mode", choices=("semantic", "grid"), default="semantic")

    p = sub.add_parser("track", parents=[common], help="turn seed points into trajectories")
    p.add_argument("--seeds", required=True)
    p.add_argument("--tracks", required=True, help="track file to snap to (generator ground truth or external)")
    p.add_argument("--source", choices=("gt", "file"), default="gt")

    p = sub.add_parser("motion", parents=[common], help="HoD and cross-trajectory descriptors")
    p.add_argument("--traj", required=True)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--delta", type=int, default=1)

    p = sub.add_parser("train", parents=[common], help="episodic training; --out is the checkpoint dir")
    _model_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=1)
    p.add_argument("--query", type=int, default=2)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default=TrainConfig.optimizer)
    p.add_argument("--resample", type=int, default=TrainConfig.resample, help="seed-point variants per training clip")
    p.add_argument("--tau", type=float, default=TrainConfig.tau)

    p = sub.add_parser("eval", parents=[_common(out_required=False)], help="few-shot evaluation of a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=1)
    p.add_argument("--query", type=int, default=2)
    p.add_argument("--json", help="report path (default OUT/report.json)")

    p = sub.add_parser("bench", parents=[common], help="kernel timing and scaling fit")
    p.add_argument("--kernel", choices=bench_mod.KERNELS + ("all",), default="all")
    p.add_argument("--sizes", default="32,64,128,256")
    p.add_argument("--T", type=int, default=8)
    p.add_argument("--repeats", type=int, default=10)

    p = sub.add_parser("run", parents=[common], help="run a TOML/JSON pipeline config")
    p.add_argument("config")
    return ap


def _model_flags(p):
    p.add_argument("--points", type=int, default=ModelConfig.points)
    p.add_argument("--clusters", type=int, default=ModelConfig.clusters)
    p.add_argument("--sampling", choices=("semantic", "grid"), default="semantic")
    p.add_argument("--descriptor", choices=("hod", "displacement"), default="hod")
    p.add_argument("--bins", type=int, default=ModelConfig.bins)
    p.add_argument("--delta", type=int, default=ModelConfig.delta)
    p.add_argument("--dim", type=int, default=NetConfig.model_dim)
    p.add_argument("--heads", type=int, default=NetConfig.heads)
    p.add_argument("--no-intra", action="store_true")
    p.add_argument("--no-inter", action="store_true")
    p.add_argument("--no-motion", action="store_true", help="same as --no-intra --no-inter")


def _out_dir(args) -> Path:
    """Directory that receives run.json: --out itself, or its parent for file outputs."""
    out = Path(args.out.split(",")[0])
    return out.parent if out.suffix else out


def _record(args, artifacts: dict, extra=None):
    skip = {"out", "threads", "verbose", "deterministic", "func"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    pipeline.write_run_record(_out_dir(args), args.command, args.seed, pipeline.config_hash(cfg), artifacts, extra)


# ------------------------------------------------------------------ commands

def cmd_gen(args):
    m = pipeline.generate(args.out, args.classes, args.per_class, args.mode, args.seed, args.class_set,
                          args.test_classes)
    print(f"wrote {len(m.videos)} videos, {len(m.class_names)} classes to {args.out}")
    _record(args, {"manifest": "manifest.json"})


def cmd_cluster(args):
    fv = FeatureVolume(read_tensor(args.features))
    a = cluster_tokens(fv, args.L, args.seed)
    write_tensor(args.out, a.labels.astype(np.float32))
    print(f"{a.L_effective} clusters (requested {args.L}); sizes {a.member_counts}")
    _record(args, {"assign": Path(args.out).name}, {"L_effective": a.L_effective})


def cmd_sample(args):
    if args.mode == "grid":
        seeds = sample_uniform_grid(args.M)
    else:
        if not args.assign:
            raise ConfigError("semantic sampling needs --assign")
        seeds = sample_semantic(assignment_from_labels(read_tensor(args.assign)), args.M, args.seed)
    save_seeds(args.out, seeds)
    print(f"{len(seeds)} seed points -> {args.out}")
    _record(args, {"seeds": Path(args.out).name})


def cmd_track(args):
    source = read_trajectories(args.tracks)
    traj = track_points(load_seeds(args.seeds), source, "ground_truth" if args.source == "gt" else "precomputed")
    write_trajectories(args.out, traj)
    print(f"{traj.M} trajectories x {traj.T} frames -> {args.out}")
    _record(args, {"trajectories": Path(args.out).name})


def cmd_motion(args):
    outs = args.out.split(",")
    if len(outs) != 2:
        raise ConfigError("--out takes two paths: HOD.trok,CROSS.trok")
    traj: TrajectorySet = read_trajectories(args.traj)
    cfg = HodConfig(args.bins, args.delta)
    write_tensor(outs[0], hod_descriptor(traj, cfg))
    write_tensor(outs[1], inter_descriptor(traj))
    print(f"hod {traj.M}x{traj.T}x{args.bins}, cross {traj.M}x{traj.T}x{2 * traj.M}")
    _record(args, {"hod": Path(outs[0]).name, "cross": Path(outs[1]).name})


def _model_config(args, n_classes: int) -> ModelConfig:
    no_intra = args.no_intra or args.no_motion
    no_inter = args.no_inter or args.no_motion
    return ModelConfig(points=args.points, clusters=args.clusters, sampling=args.sampling,
                       descriptor=args.descriptor, bins=args.bins, delta=args.delta,
                       use_intra=not no_intra, use_inter=not no_inter,
                       net=NetConfig(model_dim=args.dim, heads=args.heads, n_classes=n_classes))


def cmd_train(args):
    m = pipeline.load_manifest(args.manifest)
    mcfg = _model_config(args, len(m.split["train"]))
    tcfg = TrainConfig(episodes=args.episodes, way=args.way, shot=args.shot, query=args.query, lr=args.lr,
                       optimizer=args.optimizer, tau=args.tau, seed=args.seed, resample=args.resample)
    res = pipeline.train_model(m, mcfg, tcfg)
    pipeline.save_model(args.out, res, mcfg, tcfg)
    if res.log:
        tail = res.log[-100:]
        print(f"trained {len(res.log)} episodes; last-100 loss {np.mean([r.total for r in tail]):.4f}, "
              f"episode acc {np.mean([r.episode_acc for r in tail]):.3f}")
    _record(args, {"checkpoint": "."})


def cmd_eval(args):
    if not args.out and not args.json:
        raise ConfigError("eval needs --out or --json")
    if not args.out:
        args.out = str(Path(args.json).parent)
    m = pipeline.load_manifest(args.manifest)
    params, mcfg = pipeline.load_model(args.ckpt)
    rep = evaluate(m, params, mcfg, args.episodes, args.way, args.shot, args.query, args.seed,
                   InputCache(m, mcfg, args.seed))
    doc = pipeline.eval_dict(rep)
    dest = Path(args.json) if args.json else Path(args.out) / "report.json"
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(pipeline.canonical_json(doc))
    ci = "n/a" if rep.ci95 is None else f"{100 * rep.ci95:.2f}"
    print(f"{args.way}-way {args.shot}-shot accuracy {100 * rep.accuracy:.2f}% +/- {ci} "
          f"over {rep.episodes} episodes")
    _record(args, {"report": str(dest)})


def cmd_bench(args):
    sizes = [int(s) for s in args.sizes.split(",") if s]
    kernels = bench_mod.KERNELS if args.kernel == "all" else (args.kernel,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, slopes = [], {}
    for k in kernels:
        r = bench_mod.bench(k, sizes, T=args.T, repeats=args.repeats, seed=args.seed)
        rows.extend(r)
        if len(r) >= 2:
            slopes[k] = round(bench_mod.loglog_slope(r), 4)
    (out / "bench.json").write_text(json.dumps({"rows": bench_mod.table(rows), "slopes": slopes}, indent=1))
    with open(out / "bench.csv", "w") as f:
        f.write("kernel,M,T,repeats,median_s,ns_per_op,elements_per_s\n")
        for r in rows:
            f.write(f"{r.kernel},{r.M},{r.T},{r.repeats},{r.median_s:.9g},{r.ns_per_op:.6g},{r.elements_per_s:.6g}\n")
    if rows:
        print(bench_mod.format_table(rows))
        for k, s in slopes.items():
            print(f"{k}: log-log slope in M = {s:.2f}")
    else:
        print("dry run: no timings")
    _record(args, {"json": "bench.json", "csv": "bench.csv"})


def cmd_run(args):
    raw = pipeline.load_config(args.config)
    report = pipeline.run_pipeline(raw, args.out)
    for k, v in report["eval"].items():
        print(f"{k}: {100 * v['accuracy']:.2f}%")


COMMANDS = {"gen": cmd_gen, "cluster": cmd_cluster, "sample": cmd_sample, "track": cmd_track,
            "motion": cmd_motion, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "run": cmd_run}


def _thread_limit(args):
    n = 1 if args.deterministic else args.threads
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise ConfigError("--threads must be positive")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with _thread_limit(args):
            COMMANDS[args.command](args)
    except TrokensError as exc:
        print(f"trokens {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"trokens {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
