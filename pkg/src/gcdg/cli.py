"""Command-line entry point: ``gcdg <command> [options]``.

Every text output starts with the resolved configuration echoed as
``# key = value`` lines so result files describe themselves.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O failure,
4 numeric divergence.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, analysis, data
from .data import ParseError, SchemaError
from .numerics import DomainError
from .train import Checkpoint, CheckpointError, ConfigError, DivergenceError, RunConfig

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4

ABLATION_ARMS = {
    "A": {"model.kind": "linear", "scb.enabled": "false", "dcb.enabled": "false"},
    "B": {"model.kind": "generative", "scb.enabled": "false", "dcb.enabled": "false"},
    "C": {"model.kind": "generative", "scb.enabled": "false", "dcb.enabled": "true"},
    "D": {"model.kind": "generative", "scb.enabled": "true", "dcb.enabled": "false"},
    "E": {"model.kind": "generative", "scb.enabled": "true", "dcb.enabled": "true"},
}
CLASSIFIER_ARMS = {kind: {"model.kind": kind} for kind in ("generative", "linear", "mlp")}


class UsageError(Exception):
    pass


# Helpers ----------------------------------------------------------------

def _parse_sets(pairs):
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def resolve_config(args):
    """Config file, then ``--set`` overrides, then ``--seed``."""
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = _parse_sets(getattr(args, "set", None))
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    return cfg.with_overrides(**overrides) if overrides else cfg


def resolve_threads(args):
    if args.threads is not None:
        n = args.threads
    else:
        raw = os.environ.get("GCDG_THREADS", "1")
        try:
            n = int(raw)
        except ValueError:
            raise UsageError(f"GCDG_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def load_dataset(args, cfg):
    """``--data`` file if given, otherwise the task named in the config."""
    if getattr(args, "data", None):
        return data.load(args.data)
    if cfg.data_spec_path:
        spec = data.TaskSpec.from_file(cfg.data_spec_path)
    elif cfg.data_task:
        spec = data.named_task(cfg.data_task, seed=cfg.seed, samples_per_cell=cfg.samples_per_cell)
    else:
        raise UsageError("no data: pass --data or set data.task / data.spec_path")
    return data.generate(spec)


def header(cfg, **extra):
    lines = "".join(f"# {k} = {v}\n" for k, v in extra.items())
    return cfg.dumps(prefix="# ") + lines


def emit(text, out=None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _check_target(ds, target):
    if not 0 <= target < ds.n_domains:
        raise UsageError(f"--target {target} out of range for {ds.n_domains} domains")


# Commands ---------------------------------------------------------------

def cmd_gen_data(args):
    if args.spec:
        spec = data.TaskSpec.from_file(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
        name = args.spec
    else:
        spec = data.named_task(args.task, seed=args.seed or 0, samples_per_cell=args.samples_per_cell)
        name = args.task
    ds = data.generate(spec)
    data.save(ds, args.out)
    lines = [f"# task = {name}", f"# seed = {spec.seed}", f"# samples_per_cell = {spec.samples_per_cell}",
             "domain,class,count"]
    lines += [f"{d},{c},{n}" for (d, c), n in ds.cell_counts().items()]
    print("\n".join(lines))
    return EXIT_OK


def cmd_train(args):
    cfg = resolve_config(args)
    ds = load_dataset(args, cfg)
    _check_target(ds, args.target)
    plan = data.split(ds, args.target, cfg.seed)
    ckpt, metrics = analysis.train(ds, plan, cfg)
    m = analysis.evaluate(ckpt, ds, plan)
    if args.out_ckpt:
        ckpt.save(args.out_ckpt)
    head = header(cfg, target=args.target)
    if args.out_metrics:
        Path(args.out_metrics).write_text(head + metrics.trace_csv())
    emit(head + _acc_table(m))
    return EXIT_OK


def _acc_table(m):
    rows = ["domain,acc"]
    rows += [f"{d},{acc:.6f}" for d, acc in sorted(m.per_domain_acc.items())]
    rows.append(f"source_val,{m.source_val_acc:.6f}")
    return "\n".join(rows) + "\n"


def cmd_eval(args):
    ckpt = Checkpoint.load(args.ckpt)
    cfg = ckpt.config
    ds = data.load(args.data)
    _check_target(ds, args.target)
    split_seed = cfg.seed if args.seed is None else args.seed
    plan = data.split(ds, args.target, split_seed)
    m = analysis.evaluate(ckpt, ds, plan)
    emit(header(cfg, target=args.target, split_seed=split_seed) + _acc_table(m), args.out)
    return EXIT_OK


def _bench_job(job):
    ds, flat, target, seed = job
    cfg = RunConfig.from_flat(flat)
    plan = data.split(ds, target, seed)
    ckpt, _ = analysis.train(ds, plan, cfg)
    return analysis.evaluate(ckpt, ds, plan).per_domain_acc[target]


def run_bench(ds, cfg, arms, seeds, threads=1):
    """Leave-one-domain-out accuracy for every arm; returns ``{arm: (seeds, domains) array}``.

    Each job is independent and deterministic, so results do not depend on
    ``threads``; collection keeps submission order.
    """
    jobs, keys = [], []
    for arm, overrides in arms.items():
        for seed in seeds:
            flat = cfg.with_overrides(**overrides, **{"train.seed": str(seed)}).to_flat()
            for target in range(ds.n_domains):
                jobs.append((ds, flat, target, seed))
                keys.append(arm)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            accs = list(pool.map(_bench_job, jobs))
    else:
        accs = [_bench_job(j) for j in jobs]
    out, pos = {}, 0
    for arm in arms:
        n = len(seeds) * ds.n_domains
        out[arm] = np.array(accs[pos:pos + n]).reshape(len(seeds), ds.n_domains)
        pos += n
    return out


def bench_table(results, n_domains):
    rows = ["arm," + ",".join(f"d{d}" for d in range(n_domains)) + ",avg"]
    for arm, a in results.items():
        per_domain = a.mean(axis=0)
        rows.append(arm + "," + ",".join(f"{v:.6f}" for v in per_domain) + f",{per_domain.mean():.6f}")
    return "\n".join(rows) + "\n"


def cmd_bench(args):
    cfg = resolve_config(args)
    ds = load_dataset(args, cfg)
    threads = resolve_threads(args)
    seeds = [cfg.seed] if not args.seeds else [int(s) for s in args.seeds.split(",")]
    arms = ABLATION_ARMS if args.suite == "ablation" else CLASSIFIER_ARMS
    results = run_bench(ds, cfg, arms, seeds, threads)
    head = header(cfg, suite=args.suite, seeds=",".join(map(str, seeds)))
    emit(head + bench_table(results, ds.n_domains), args.out)
    return EXIT_OK


def cmd_landscape(args):
    ckpt = Checkpoint.load(args.ckpt)
    cfg = ckpt.config
    ds = data.load(args.data)
    _check_target(ds, args.target)
    plan = data.split(ds, args.target, cfg.seed)
    val = plan.val_indices()
    seed = 0 if args.seed is None else args.seed
    grid = analysis.loss_landscape(ckpt, ds.x[val], ds.y[val], cfg, args.radius, args.step, seed)
    head = header(cfg, target=args.target, radius=args.radius, step=args.step, direction_seed=seed)
    emit(grid.to_csv(head), args.out)
    return EXIT_OK


def load_joints(path=None):
    """Read a joints file: ``{"domains": [table, ...], "encoding": [...]?}``."""
    if path is None:
        text = resources.files("gcdg").joinpath("resources/theory_joints.json").read_text()
        source = "bundled theory_joints.json"
    else:
        text, source = Path(path).read_text(), str(path)
    try:
        doc = json.loads(text)
        joints = [analysis.DiscreteJoint(t, tol=1e-9) for t in doc["domains"]]
        encoding = doc.get("encoding")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise SchemaError(f"{source}: malformed joints file ({exc})") from None
    return joints, encoding


def cmd_theory_demo(args):
    joints, encoding = load_joints(args.joints)
    if encoding is None:
        encoding = analysis.collapsing_encoding(joints[0].shape[0])
    r = analysis.information_gap(joints, encoding)
    lines = ["domain,mutual_info_bits,h_y_given_x,h_y_given_z"]
    lines += [f"{i},{mi:.12f},{hx:.12f},{hz:.12f}"
              for i, (mi, hx, hz) in enumerate(zip(r.mutual_info, r.h_y_given_x, r.h_y_given_z))]
    lines += [f"# min_domain = {r.min_domain}", f"# information_gap = {r.gap:.12f}",
              f"# risk_increase = {r.risk_increase:.12f}", f"# margin = {r.margin:.12f}",
              f"# encoding_invariant = {str(r.encoding_invariant).lower()}",
              f"# inequality_holds = {str(r.margin >= -1e-12).lower()}"]
    print("\n".join(lines))
    return EXIT_OK


# Parser -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="gcdg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gcdg {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides train.seed (or the data seed)")
    common.add_argument("--threads", type=int, default=None, help="worker processes (default: $GCDG_THREADS or 1)")
    cfg_opts = argparse.ArgumentParser(add_help=False)
    cfg_opts.add_argument("--config", help="key = value config file")
    cfg_opts.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset file")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--task", choices=sorted(data.NAMED_TASKS))
    src.add_argument("--spec", help="JSON task spec")
    g.add_argument("--samples-per-cell", type=int, default=100)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common, cfg_opts], help="train on all but one domain")
    t.add_argument("--data")
    t.add_argument("--target", type=int, required=True)
    t.add_argument("--out-ckpt")
    t.add_argument("--out-metrics")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="accuracy of a checkpoint on its held-out domain")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--target", type=int, required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common, cfg_opts], help="leave-one-domain-out comparison table")
    b.add_argument("--data")
    b.add_argument("--suite", choices=("classifiers", "ablation"), default="classifiers")
    b.add_argument("--seeds", help="comma-separated seeds to average (default: the config seed)")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    ls = sub.add_parser("landscape", parents=[common], help="loss grid around a checkpoint")
    ls.add_argument("--ckpt", required=True)
    ls.add_argument("--data", required=True)
    ls.add_argument("--target", type=int, required=True)
    ls.add_argument("--radius", type=int, default=10)
    ls.add_argument("--step", type=float, default=0.1)
    ls.add_argument("--out")
    ls.set_defaults(func=cmd_landscape)

    th = sub.add_parser("theory-demo", parents=[common], help="information gap on discrete joints")
    th.add_argument("--joints", help="JSON joints file (default: bundled example)")
    th.set_defaults(func=cmd_theory_demo)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"gcdg: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ConfigError, DomainError, SchemaError, ParseError, CheckpointError, IndexError) as exc:
        print(f"gcdg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"gcdg: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
