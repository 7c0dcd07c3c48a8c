"""Experiment orchestration: configs, runners, metrics and file formats.

Every file written here carries ``schema_version``. Runs are fully determined
by (config, seed); only the ``update_seconds`` metric depends on the clock.
"""

import copy
import csv
import gc
import itertools
import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dictionary import CoupledDictionary
from .environments import (
    DESCRIPTOR_GROUPS,
    TaskSpec,
    descriptor_features,
    domain_info,
    generate_domain,
    generation_scale,
    group_mask,
)
from .exceptions import DimensionMismatch, NonConvergence
from .learners import (
    GaussianLinearPolicy,
    SingleTaskSolution,
    classification_accuracy,
    evaluate_policy,
    fit_logistic_regression,
    fit_multioutput_regression,
    logistic_hessian,
    logistic_loss,
    pg_single_task,
)
from .lifelong import Hyper, LifelongLearner, batch_mtl, presentation_order, zero_shot

SCHEMA_VERSION = 1
ALGORITHMS = ("tadell", "ella", "tademtl", "gomtl", "stl")
METRICS_HEADER = ["task_id", "encounter_index", "iter", "value", "metric_name", "schema_version"]
ZEROSHOT_HEADER = ["task_id", "metric_name", "iter", "value", "schema_version"]

# per-domain defaults picked on held-out tasks; see README for the grid
DOMAIN_DEFAULTS = {
    "sm": dict(k=2, mu=0.01, lam=0.01),
    "cp": dict(k=3, mu=0.01, lam=0.01),
    "bk": dict(k=2, mu=0.01, lam=0.01),
    "robot": dict(k=10, mu=0.01, lam=0.001, reg=0.1),
    "synth1": dict(k=8, mu=3e-4, lam=1e-3, reg=1.0),
    "synth2": dict(k=6, mu=0.01, lam=0.01, reg=0.03),
}


@dataclass
class ExperimentConfig:
    domain: str = "synth1"
    algorithm: str = "tadell"
    n_tasks: int = 100
    n_heldout: int = 100
    seed: int = 0
    k: int = None
    mu: float = None
    lam: float = None
    rho: float = None
    reg: float = None
    jitter: float = 0.0
    outer_iters: int = 100
    tol: float = 1e-6
    pg_iters: int = 30
    n_traj: int = 20
    horizon: int = 100
    sigma: float = 0.3
    step_size: float = 0.05
    n_samples: int = 10
    mask: list = None
    scale_descriptors: bool = False
    strict: bool = False
    outputs: dict = field(default_factory=dict)

    def resolved(self):
        """Copy with per-domain defaults filled in for unset fields."""
        values = asdict(self)
        defaults = {"k": 6, "mu": 0.1, "lam": 0.01, "reg": 0.1, **DOMAIN_DEFAULTS.get(self.domain, {})}
        for key, val in defaults.items():
            if values[key] is None:
                values[key] = val
        return ExperimentConfig(**values)

    def hyper(self):
        c = self.resolved()
        return Hyper(k=c.k, mu=c.mu, lam=c.lam, rho=c.rho, jitter=c.jitter, tol=c.tol, strict=c.strict)

    def to_json(self):
        return {"schema_version": SCHEMA_VERSION, **asdict(self.resolved())}

    @classmethod
    def from_json(cls, obj):
        names = {f.name for f in fields(cls)}
        return cls(**{key: val for key, val in obj.items() if key in names})


# ---------------------------------------------------------------------------
# files


def save_tasks(tasks, path):
    payload = [{**task.to_json(), "schema_version": SCHEMA_VERSION} for task in tasks]
    write_json(payload, path)


def load_tasks(path):
    with open(path, encoding="utf-8") as fh:
        return [TaskSpec.from_json(obj) for obj in json.load(fh)]


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([*row, SCHEMA_VERSION])


def write_config(config, out_path):
    """Resolved config written next to an output file."""
    path = f"{out_path}.config.json"
    write_json(config.to_json(), path)
    return path


def model_to_json(mode, hyper, dictionary, records, extra=None):
    registry = [{"id": rec["id"], "s": _list(rec.get("s")), "alpha": _list(rec["alpha"]),
                 "phi_m": _list(rec.get("phi_m"))} for rec in records]
    hyper = asdict(hyper)
    return {
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "hyper": hyper,
        "dictionary": None if dictionary is None else dictionary.to_json(hyper, len(records)),
        "registry": registry,
        **(extra or {}),
    }


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    dic = obj.get("dictionary")
    return obj, (None if dic is None else CoupledDictionary.from_json(dic))


def _list(arr):
    return None if arr is None else np.asarray(arr, float).tolist()


# ---------------------------------------------------------------------------
# per-task plumbing


def features_for(task, config):
    scale = generation_scale(task.domain) if config.scale_descriptors else None
    return descriptor_features(task, mask=config.mask, scale=scale)


def model_dim(domain):
    return domain_info(domain).model_dim


def metric_name(domain):
    return {"rl": "return", "regression": "mse", "classification": "accuracy"}[domain_info(domain).kind]


def higher_is_better(domain):
    return metric_name(domain) != "mse"


def task_seed(config, task, salt=0):
    return np.random.default_rng([config.seed, salt, int(task.id)])


def fit_single(task, config, theta0=None, rng=None):
    """Single-task solution for any domain; RL starts PG from ``theta0``."""
    c = config
    if task.is_rl:
        theta0 = np.zeros(model_dim(task.domain)) if theta0 is None else theta0
        return pg_single_task(task, GaussianLinearPolicy(theta0, c.sigma), iters=c.pg_iters,
                              n_traj=c.n_traj, horizon=c.horizon, step_size=c.step_size,
                              rng=rng if rng is not None else task_seed(c, task))
    X, y = task.data["X"], task.data["y"]
    if task.domain == "robot":
        return fit_multioutput_regression(X, y.reshape(-1, 3), c.reg)
    try:
        return fit_logistic_regression(X, y, c.reg)
    except NonConvergence as exc:
        if c.strict:
            raise
        warnings.warn(f"task {task.id}: {exc}; keeping the best iterate")
        theta = exc.best
        return SingleTaskSolution(theta, logistic_hessian(theta, X, c.reg), logistic_loss(theta, X, y, c.reg))


def evaluate(theta, task, config, salt=1):
    """Accuracy, MSE or mean return of a model on its task's evaluation data."""
    if task.is_rl:
        batch_seed = int(task_seed(config, task, salt).integers(2**63))
        return evaluate_policy(theta, task, config.n_traj, config.horizon,
                               np.random.default_rng(batch_seed), config.sigma)
    if task.domain == "robot":
        pred = task.data["X_test"] @ np.asarray(theta).reshape(3, -1).T
        return float(np.mean((pred - task.data["y_test"].reshape(-1, 3)) ** 2))
    return classification_accuracy(theta, task.data["X_test"], task.data["y_test"])


def jumpstart(theta_init, task, reference_init, config, salt=1):
    """Initial-performance gain over a reference initialization, same rollouts for both.

    For supervised tasks the loss difference is reported with its sign flipped,
    so positive always means the transferred model is better.
    """
    gain = evaluate(theta_init, task, config, salt) - evaluate(reference_init, task, config, salt)
    return gain if higher_is_better(task.domain) else -gain


def random_init(task, config):
    """Reference initialization theta ~ N(0, I) for jumpstart and cold start."""
    return task_seed(config, task, salt=2).standard_normal(model_dim(task.domain))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: dict
    rows: list
    thetas: dict
    seconds: float = 0.0
    learner: object = None


def _check_descriptors(tasks, config):
    sizes = {features_for(t, config).size for t in tasks}
    if len(sizes) > 1:
        raise DimensionMismatch(f"descriptor lengths differ across tasks: {sorted(sizes)}")
    return sizes.pop()


def run_lifelong(tasks, config):
    """Online TaDeLL or ELLA over a shared random presentation order."""
    c = config.resolved()
    domain = tasks[0].domain
    d_m = _check_descriptors(tasks, c)
    learner = LifelongLearner(model_dim(domain), d_m, c.hyper(), mode=c.algorithm, seed=c.seed)
    order = presentation_order(len(tasks), np.random.default_rng(c.seed))
    solutions = {}
    rows = []
    started = time.perf_counter()
    for n, i in enumerate(order):
        task = tasks[i]
        if task.is_rl:
            theta0 = learner.theta(task.id) if task.id in learner.registry else None
            sol = fit_single(task, c, theta0, rng=np.random.default_rng([c.seed, 3, n]))
            rows.extend((task.id, n, it, v, "pg_return") for it, v in enumerate(sol.curve))
        else:
            if i not in solutions:
                solutions[i] = fit_single(task, c)
            sol = solutions[i]
        t0 = time.perf_counter()
        learner.encounter(task.id, sol, features_for(task, c))
        rows.append((task.id, n, 0, time.perf_counter() - t0, "update_seconds"))
    thetas = {task.id: learner.theta(task.id) for task in tasks}
    name = metric_name(domain)
    rows.extend((t.id, len(order), 0, evaluate(thetas[t.id], t, c), name) for t in tasks)
    model = learner.to_json()
    model["schema_version"] = SCHEMA_VERSION
    model["presentations"] = len(order)
    return TrainResult(model, rows, thetas, time.perf_counter() - started, learner)


def run_stl(tasks, config):
    c = config.resolved()
    name = metric_name(tasks[0].domain)
    rows, thetas, records = [], {}, []
    for n, task in enumerate(tasks):
        sol = fit_single(task, c)
        thetas[task.id] = sol.alpha
        rows.extend((task.id, n, it, v, "pg_return") for it, v in enumerate(sol.curve))
        rows.append((task.id, n, 0, evaluate(sol.alpha, task, c), name))
        records.append({"id": task.id, "alpha": sol.alpha})
    return TrainResult(model_to_json("stl", c.hyper(), None, records), rows, thetas)


def run_batch(tasks, config):
    """TaDeMTL (coupled) or GO-MTL (model basis only) on precomputed solutions."""
    c = config.resolved()
    coupled = c.algorithm == "tademtl"
    sols = [fit_single(t, c) for t in tasks]
    phis = [features_for(t, c) for t in tasks] if coupled else None
    if coupled:
        _check_descriptors(tasks, c)
    res = batch_mtl([s.alpha for s in sols], [s.gamma for s in sols], phis, k=c.k, mu=c.mu, lam=c.lam,
                    rho=c.rho, outer_iters=c.outer_iters, tol=c.tol, seed=c.seed, coupled=coupled,
                    strict=c.strict)
    if not res.converged:
        warnings.warn("alternating minimization stopped at outer_iters")
    name = metric_name(tasks[0].domain)
    thetas = {t.id: res.dictionary.L @ s for t, s in zip(tasks, res.codes)}
    rows = [(t.id, 0, it, v, "objective") for t in tasks[:1] for it, v in enumerate(res.objective)]
    rows.extend((t.id, 0, 0, evaluate(thetas[t.id], t, c), name) for t in tasks)
    records = [{"id": t.id, "s": s, "alpha": sol.alpha, "phi_m": None if phis is None else phis[i]}
               for i, (t, s, sol) in enumerate(zip(tasks, res.codes, sols))]
    dictionary = res.dictionary if coupled else CoupledDictionary(res.dictionary.L, np.zeros((1, c.k)))
    model = model_to_json(c.algorithm, c.hyper(), dictionary, records, {"converged": res.converged})
    return TrainResult(model, rows, thetas)


def train(tasks, config):
    if config.algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {config.algorithm!r}")
    if not tasks:
        raise ValueError("no tasks to train on")
    if len({t.domain for t in tasks}) > 1:
        raise ValueError("a run must not mix domains")
    if config.algorithm in ("tadell", "ella"):
        return run_lifelong(tasks, config)
    if config.algorithm == "stl":
        return run_stl(tasks, config)
    return run_batch(tasks, config)


# ---------------------------------------------------------------------------
# zero-shot


def zero_shot_rows(dictionary, mu, tasks, config, warmstart=0):
    """Rows of (task_id, metric_name, iter, value) for held-out tasks.

    RL tasks get the zero-shot return, the return of a random initialization
    and their difference (jumpstart); with ``warmstart`` > 0 also PG curves
    from the zero-shot policy and from the random policy. Supervised tasks
    get the zero-shot metric next to a single-task model trained on the
    task's own data.
    """
    c = config.resolved()
    rows = []
    for task in tasks:
        phi = features_for(task, c)
        if phi.size != dictionary.d_m:
            raise DimensionMismatch(f"task {task.id} has {phi.size} descriptor features, model expects "
                                    f"{dictionary.d_m}")
        theta = zero_shot(dictionary, phi, mu, tol=c.tol, strict=c.strict).theta_tilde
        if theta.size != model_dim(task.domain):
            raise DimensionMismatch(f"model predicts {theta.size} parameters for a {task.domain} task")
        name = metric_name(task.domain)
        if not task.is_rl:
            rows.append((task.id, f"zeroshot_{name}", 0, evaluate(theta, task, c)))
            rows.append((task.id, f"stl_{name}", 0, evaluate(fit_single(task, c).alpha, task, c)))
            continue
        reference = random_init(task, c)
        zs, rand = evaluate(theta, task, c), evaluate(reference, task, c)
        rows += [(task.id, "zeroshot_return", 0, zs), (task.id, "random_return", 0, rand),
                 (task.id, "jumpstart", 0, zs - rand)]
        if warmstart > 0:
            wc = ExperimentConfig(**{**asdict(c), "pg_iters": warmstart})
            warm = _curve_from(theta, task, wc)
            cold = _curve_from(reference, task, wc)
            rows.extend((task.id, "warmstart_return", i, v) for i, v in enumerate(warm))
            rows.extend((task.id, "coldstart_return", i, v) for i, v in enumerate(cold))
    return rows


def _curve_from(theta0, task, config):
    # PG seeds its first batch with the first draw of this stream, the same
    # draw evaluate() uses, so curve[0] equals the zero-shot value exactly
    return fit_single(task, config, theta0, rng=task_seed(config, task, salt=1)).curve


# ---------------------------------------------------------------------------
# ablation, runtime, grid search


def cell_workers():
    """Parallel experiment cells, capped by LLL_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("LLL_THREADS", "1")))
    except ValueError:
        return 1


def run_cells(fn, cells):
    workers = min(cell_workers(), len(cells))
    if workers <= 1:
        return [fn(cell) for cell in cells]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, cells))


def descriptor_subsets(domain):
    groups = list(DESCRIPTOR_GROUPS[domain])
    return ["".join(combo) for r in range(1, len(groups) + 1) for combo in itertools.combinations(groups, r)]


def suites(config):
    """Training and held-out task lists for a config (held-out uses seed + 1000)."""
    c = config.resolved()
    train_tasks = generate_domain(c.domain, c.n_tasks, c.seed, n_samples=c.n_samples)
    held = generate_domain(c.domain, c.n_heldout, c.seed + 1000, n_samples=c.n_samples)
    return train_tasks, held


def _ablation_cell(args):
    config, subset = args
    c = ExperimentConfig(**{**asdict(config), "algorithm": "tadell",
                            "mask": group_mask(config.domain, subset).tolist()})
    train_tasks, held = suites(c)
    result = run_lifelong(train_tasks, c)
    rows = zero_shot_rows(result.learner.dictionary, c.mu, held, c)
    key = "jumpstart" if train_tasks[0].is_rl else f"zeroshot_{metric_name(c.domain)}"
    values = np.array([r[3] for r in rows if r[1] == key])
    stderr = values.std(ddof=1) / np.sqrt(values.size) if values.size > 1 else 0.0
    return subset, int(np.sum(c.mask)), key, float(values.mean()), float(stderr)


def ablate_descriptors(config):
    """One TaDeLL model per non-empty subset of the named descriptor groups."""
    c = config.resolved()
    if c.domain not in DESCRIPTOR_GROUPS:
        raise ValueError(f"{c.domain} has no named descriptor groups")
    return run_cells(_ablation_cell, [(c, subset) for subset in descriptor_subsets(c.domain)])


def bench_runtime(tasks, config, repeats=5):
    """Seconds spent in each dictionary update, single tasks presented once in order.

    Single-task fitting happens before the clock starts. The learner state
    before every update is kept, and the updates are then timed ``repeats``
    times each in a fresh random order per pass, with the garbage collector
    paused, keeping the fastest run. Shuffling decouples slow drift of the
    machine's speed from T, so the timings can be regressed on T.
    """
    c = config.resolved()
    if c.algorithm not in ("tadell", "ella"):
        raise ValueError("runtime benchmark needs a lifelong algorithm")
    d_m = _check_descriptors(tasks, c)
    sols = [fit_single(t, c) for t in tasks]
    phis = [features_for(t, c) for t in tasks]
    learner = LifelongLearner(model_dim(tasks[0].domain), d_m, c.hyper(), mode=c.algorithm, seed=c.seed)
    states = []
    for task, sol, phi in zip(tasks, sols, phis):
        # every task is new here, so the snapshot needs no registry
        registry, learner.registry = learner.registry, {}
        states.append(copy.deepcopy(learner))
        learner.registry = registry
        learner.encounter(task.id, sol, phi)
    rng = np.random.default_rng([c.seed, 4])
    timings = np.full(len(tasks), np.inf)
    for _ in range(max(1, repeats)):
        for i in rng.permutation(len(tasks)):
            trial = copy.deepcopy(states[i])
            gc.disable()
            try:
                t0 = time.perf_counter()
                trial.encounter(tasks[i].id, sols[i], phis[i])
                elapsed = time.perf_counter() - t0
            finally:
                gc.enable()
            timings[i] = min(timings[i], elapsed)
    return timings.tolist()


def slope_interval(x, y, level=0.95):
    """OLS slope of y on x with its two-sided confidence interval."""
    from scipy import stats

    res = stats.linregress(x, y)
    half = stats.t.ppf(0.5 + level / 2, len(x) - 2) * res.stderr
    return res.slope, res.slope - half, res.slope + half


def _grid_cell(args):
    config, (k, mu, lam) = args
    c = ExperimentConfig(**{**asdict(config), "k": k, "mu": mu, "lam": lam})
    train_tasks, held = suites(c)
    held = _shift_ids(held[:20], len(train_tasks))
    held_ids = {t.id for t in held}
    name = metric_name(c.domain)
    scores = {}
    for algo in ("tadell", "ella"):
        result = run_lifelong(train_tasks + held, ExperimentConfig(**{**asdict(c), "algorithm": algo}))
        scores[algo] = float(np.mean([r[3] for r in result.rows if r[4] == name and r[0] in held_ids]))
        if algo == "tadell":
            zs_rows = zero_shot_rows(result.learner.dictionary, mu, held, c)
            scores["zeroshot"] = float(np.mean([r[3] for r in zs_rows if r[1] == f"zeroshot_{name}"]))
    sign = 1.0 if higher_is_better(c.domain) else -1.0
    return k, mu, lam, scores["tadell"], scores["ella"], scores["zeroshot"], sign * sum(scores.values()) / 3


def _shift_ids(tasks, offset):
    return [TaskSpec(t.id + offset, t.domain, t.descriptor_raw, t.params, t.data, t.goal) for t in tasks]


def grid_search(config, ks, mus, lams):
    """Score every (k, mu, lambda) on 20 held-out tasks; rows sorted best first."""
    c = config.resolved()
    rows = run_cells(_grid_cell, [(c, combo) for combo in itertools.product(ks, mus, lams)])
    return sorted(rows, key=lambda r: -r[-1])
