"""Command-line entry point.

Exit codes: 0 success, 2 bad flags or incompatible inputs, 3 file errors,
4 solver non-convergence under --strict, 5 dimension mismatch.
"""

import argparse
import json
import sys
import warnings

import numpy as np

from . import harness
from .environments import DOMAINS, generate_domain
from .exceptions import DimensionMismatch, NonConvergence

EXIT_USAGE, EXIT_IO, EXIT_SOLVER, EXIT_DIMENSION = 2, 3, 4, 5


class UsageError(Exception):
    pass


def _floats(text):
    return [float(v) for v in text.split(",")]


def _ints(text):
    return [int(v) for v in text.split(",")]


def _add_hyper(p):
    p.add_argument("--k", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--rho", type=float, help="fixed descriptor weight; default is mean(diag(Gamma)) per task")
    p.add_argument("--reg", type=float, help="single-task regularization for supervised domains")
    p.add_argument("--iters", dest="pg_iters", type=int, default=30, help="PG iterations per encounter")
    p.add_argument("--n-traj", type=int, default=20)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--scale-descriptors", action="store_true",
                   help="min-max scale descriptors using the generation ranges")
    p.add_argument("--strict", action="store_true", help="fail (exit 4) instead of warning on non-convergence")


def build_parser():
    parser = argparse.ArgumentParser(prog="tadell", description="Lifelong learning with task descriptors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tasks", help="generate a task list")
    p.add_argument("--domain", required=True, choices=DOMAINS)
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--ranges", help="JSON file of {parameter: [lo, hi]} overrides")
    p.add_argument("--samples", type=int, default=10, help="training points per supervised task")

    p = sub.add_parser("train", help="train a model on a task list")
    p.add_argument("--algo", required=True, choices=harness.ALGORITHMS)
    p.add_argument("--tasks", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--metrics", required=True, help="metrics CSV")
    p.add_argument("--outer-iters", type=int, default=100, help="alternation rounds for tademtl and gomtl")
    _add_hyper(p)

    p = sub.add_parser("zeroshot", help="predict models for unseen tasks from their descriptors")
    p.add_argument("--model", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--warmstart", type=int, default=0, metavar="ITERS",
                   help="also run PG from the zero-shot policy (RL tasks)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-traj", type=int, default=20)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--scale-descriptors", action="store_true")

    p = sub.add_parser("ablate-descriptors", help="zero-shot quality per descriptor subset")
    p.add_argument("--domain", required=True, choices=sorted(harness.DESCRIPTOR_GROUPS))
    p.add_argument("--model-config", help="JSON experiment config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench-runtime", help="time each dictionary update")
    p.add_argument("--tasks", required=True)
    p.add_argument("--algo", default="tadell", choices=("tadell", "ella"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=5, help="timed runs per update; the fastest is kept")
    _add_hyper(p)

    p = sub.add_parser("grid-search", help="score hyperparameters on 20 held-out tasks")
    p.add_argument("--domain", required=True, choices=DOMAINS)
    p.add_argument("--ks", type=_ints, default=[4, 6, 8])
    p.add_argument("--mus", type=_floats, default=[0.01, 0.1])
    p.add_argument("--lambdas", type=_floats, default=[0.001, 0.01])
    p.add_argument("--n-tasks", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _config(args, domain, algorithm="tadell"):
    keys = ("k", "mu", "lam", "rho", "reg", "pg_iters", "n_traj", "horizon", "scale_descriptors", "strict",
            "outer_iters")
    values = {key: getattr(args, key) for key in keys if hasattr(args, key)}
    return harness.ExperimentConfig(domain=domain, algorithm=algorithm, seed=args.seed, **values)


def _load_tasks(path):
    tasks = harness.load_tasks(path)
    if not tasks:
        raise UsageError(f"{path} holds no tasks")
    return tasks


def cmd_gen_tasks(args):
    ranges = None
    if args.ranges:
        with open(args.ranges, encoding="utf-8") as fh:
            ranges = {key: tuple(val) for key, val in json.load(fh).items()}
    tasks = generate_domain(args.domain, args.count, args.seed, ranges=ranges, n_samples=args.samples)
    harness.save_tasks(tasks, args.out)
    print(len(tasks))


def cmd_train(args):
    tasks = _load_tasks(args.tasks)
    domain = tasks[0].domain
    config = _config(args, domain, args.algo)
    config.n_tasks = len(tasks)
    config.outputs = {"model": args.out, "metrics": args.metrics}
    result = harness.train(tasks, config)
    harness.write_json(result.model, args.out)
    harness.write_rows(args.metrics, harness.METRICS_HEADER, result.rows)
    harness.write_config(config, args.out)
    name = harness.metric_name(domain)
    final = [r[3] for r in result.rows if r[4] == name and r[2] == 0]
    print(f"{args.algo} on {len(tasks)} {domain} tasks: mean {name} {np.mean(final):.4f}")


def cmd_zeroshot(args):
    model, dictionary = harness.load_model(args.model)
    if dictionary is None or model.get("mode") not in ("tadell", "tademtl"):
        raise UsageError("zero-shot prediction needs a model trained with descriptors (tadell or tademtl)")
    tasks = harness.load_tasks(args.tasks)
    hyper = model["hyper"]
    domain = tasks[0].domain if tasks else "synth1"
    config = harness.ExperimentConfig(domain=domain, seed=args.seed, n_traj=args.n_traj, horizon=args.horizon,
                                      mu=hyper["mu"], k=hyper["k"], lam=hyper["lam"], rho=hyper["rho"],
                                      scale_descriptors=args.scale_descriptors, n_heldout=len(tasks),
                                      outputs={"zeroshot": args.out})
    if args.warmstart and tasks and not tasks[0].is_rl:
        warnings.warn("--warmstart applies to RL tasks only; ignored")
    rows = harness.zero_shot_rows(dictionary, hyper["mu"], tasks, config, warmstart=args.warmstart)
    harness.write_rows(args.out, harness.ZEROSHOT_HEADER, rows)
    harness.write_config(config, args.out)
    print(f"zero-shot predictions for {len(tasks)} tasks")


def cmd_ablate(args):
    obj = {}
    if args.model_config:
        with open(args.model_config, encoding="utf-8") as fh:
            obj = json.load(fh)
    config = harness.ExperimentConfig.from_json({**obj, "domain": args.domain})
    config.outputs = {"ablation": args.out}
    rows = harness.ablate_descriptors(config)
    harness.write_rows(args.out, ["subset", "n_features", "metric_name", "mean", "stderr", "schema_version"], rows)
    harness.write_config(config, args.out)
    for subset, _, key, mean, err in rows:
        print(f"{subset:>4} {key} {mean:.4f} +- {err:.4f}")


def cmd_bench(args):
    tasks = _load_tasks(args.tasks)
    config = _config(args, tasks[0].domain, args.algo)
    config.n_tasks = len(tasks)
    config.outputs = {"timings": args.out}
    timings = harness.bench_runtime(tasks, config, args.repeats)
    harness.write_rows(args.out, ["encounter_index", "seconds", "schema_version"], enumerate(timings))
    harness.write_config(config, args.out)
    if len(timings) >= 3:
        slope, lo, hi = harness.slope_interval(np.arange(len(timings)), timings)
        print(f"update time slope {slope:.3e} s/task, 95% CI [{lo:.3e}, {hi:.3e}]")


def cmd_grid(args):
    config = harness.ExperimentConfig(domain=args.domain, seed=args.seed, n_tasks=args.n_tasks, n_heldout=20,
                                      outputs={"grid": args.out})
    rows = harness.grid_search(config, args.ks, args.mus, args.lambdas)
    header = ["k", "mu", "lambda", "tadell", "ella", "zeroshot", "score", "schema_version"]
    harness.write_rows(args.out, header, rows)
    harness.write_config(config, args.out)
    k, mu, lam = rows[0][:3]
    print(f"best k={k} mu={mu} lambda={lam}")


COMMANDS = {
    "gen-tasks": cmd_gen_tasks,
    "train": cmd_train,
    "zeroshot": cmd_zeroshot,
    "ablate-descriptors": cmd_ablate,
    "bench-runtime": cmd_bench,
    "grid-search": cmd_grid,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except DimensionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: cannot read or write file: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
