"""Lifelong and batch learners over a coupled dictionary.

``LifelongLearner`` runs the online loop in two modes:

* ``tadell``: codes are shared between the model basis L and the descriptor
  basis D, so each task is coded against the stacked system [L; D] under the
  block weight diag(Gamma, rho I);
* ``ella``: descriptors are ignored and only L is learned.

``batch_mtl`` solves the same objective offline by alternating exact block
minimization (TaDeMTL; GO-MTL when descriptors are dropped).
"""

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .dictionary import (
    Accumulator,
    CoupledDictionary,
    TaskRecord,
    encounter_task,
    init_dictionary,
    recompute_basis,
    accumulate,
)
from .exceptions import DimensionMismatch, NonConvergence
from .learners import GaussianLinearPolicy, pg_single_task
from .sparse import DEFAULT_TOL, WeightedQuadratic, lasso, weighted_lasso

MODES = ("tadell", "ella")


@dataclass
class Hyper:
    k: int = 6
    mu: float = 0.1
    lam: float = 0.01
    # None selects the per-task policy rho_t = mean(diag(Gamma_t))
    rho: float = None
    jitter: float = 0.0
    tol: float = DEFAULT_TOL
    strict: bool = False


def task_rho(gamma, rho=None):
    return float(np.mean(np.diag(gamma))) if rho is None else float(rho)


def coupled_weight(gamma, rho_t, d_m):
    return linalg.block_diag(gamma, rho_t * np.eye(d_m))


@dataclass
class ZeroShotPrediction:
    s_tilde: np.ndarray
    theta_tilde: np.ndarray


def zero_shot(dictionary, phi_m, mu, tol=DEFAULT_TOL, strict=False):
    """Code a descriptor on D and read the model off L with the same code."""
    phi_m = np.asarray(phi_m, float)
    if phi_m.shape != (dictionary.d_m,):
        raise DimensionMismatch(f"descriptor has {phi_m.size} features, dictionary expects {dictionary.d_m}")
    s = lasso(dictionary.D, phi_m, mu, tol=tol, strict=strict)
    return ZeroShotPrediction(s, dictionary.L @ s)


class LifelongLearner:
    """Online learner state: dictionary, running sums and the task registry.

    There is a single writer; :meth:`zero_shot` and :meth:`theta` only read.
    """

    def __init__(self, d, d_m, hyper=None, mode="tadell", seed=0):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.hyper = hyper or Hyper()
        self.mode = mode
        self.seed = seed
        k = self.hyper.k
        # D is drawn in both modes so that L starts identical across modes
        self.dictionary = init_dictionary(d, max(d_m, 1), k, seed)
        self.acc_L = Accumulator(d, k)
        self.acc_D = Accumulator(self.dictionary.d_m, k) if mode == "tadell" else None
        self.registry = {}
        self.T = 0
        self.n_encounters = 0

    @property
    def coupled(self):
        return self.mode == "tadell"

    def sparse_code(self, alpha, gamma, phi_m=None):
        """Code of one task against the current bases; returns (s, rho_t)."""
        h = self.hyper
        if not self.coupled:
            w = WeightedQuadratic(gamma, h.jitter)
            return weighted_lasso(self.dictionary.L, alpha, w, h.mu, tol=h.tol, strict=h.strict), None
        rho_t = task_rho(gamma, h.rho)
        beta = np.concatenate([alpha, phi_m])
        w = WeightedQuadratic(coupled_weight(gamma, rho_t, self.dictionary.d_m), h.jitter)
        s = weighted_lasso(self.dictionary.K, beta, w, h.mu, tol=h.tol, strict=h.strict)
        return s, rho_t

    def encounter(self, task_id, solution, phi_m=None):
        """Fold a (re)visited task into the dictionary and return its record."""
        alpha = np.asarray(solution.alpha, float)
        gamma = np.asarray(solution.gamma, float)
        if alpha.shape != (self.dictionary.d,):
            raise DimensionMismatch(f"model has {alpha.size} parameters, dictionary expects {self.dictionary.d}")
        if self.coupled:
            phi_m = np.asarray(phi_m, float)
            if phi_m.shape != (self.dictionary.d_m,):
                raise DimensionMismatch(
                    f"descriptor has {phi_m.size} features, dictionary expects {self.dictionary.d_m}")
        s, rho_t = self.sparse_code(alpha, gamma, phi_m)
        record = TaskRecord(
            task_id, s, alpha, gamma,
            phi_m=phi_m if self.coupled else None,
            rho_weight=rho_t * np.eye(self.dictionary.d_m) if self.coupled else None,
        )
        prior = self.registry.get(task_id)
        self.dictionary, self.acc_L, self.acc_D, self.T = encounter_task(
            self.dictionary, self.acc_L, self.acc_D, record, prior, self.T, self.hyper.lam)
        self.registry[task_id] = record
        self.n_encounters += 1
        return record

    def theta(self, task_id):
        return self.dictionary.L @ self.registry[task_id].s

    def zero_shot(self, phi_m):
        if not self.coupled:
            raise RuntimeError("zero-shot prediction needs a descriptor dictionary")
        return zero_shot(self.dictionary, phi_m, self.hyper.mu, tol=self.hyper.tol)

    def digest(self):
        """Hash of the full mutable state."""
        h = hashlib.sha256()
        for arr in (self.dictionary.L, self.dictionary.D, self.acc_L.A, self.acc_L.b):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.acc_D is not None:
            h.update(self.acc_D.A.tobytes())
            h.update(self.acc_D.b.tobytes())
        for key in sorted(self.registry, key=str):
            h.update(str(key).encode())
            h.update(self.registry[key].s.tobytes())
        h.update(str((self.T, self.n_encounters)).encode())
        return h.hexdigest()

    def to_json(self, include_gamma=False):
        hyper = asdict(self.hyper)
        registry = []
        for key, rec in self.registry.items():
            entry = {"id": key, "s": rec.s.tolist(), "alpha": rec.alpha.tolist(),
                     "phi_m": None if rec.phi_m is None else rec.phi_m.tolist()}
            if include_gamma:
                entry["gamma"] = rec.gamma.tolist()
            registry.append(entry)
        return {
            "mode": self.mode,
            "hyper": hyper,
            "dictionary": self.dictionary.to_json(hyper, self.T),
            "registry": registry,
        }

    @classmethod
    def from_json(cls, obj):
        """Rebuild a learner; running sums are restored when gammas were saved."""
        hyper = Hyper(**obj["hyper"])
        dic = CoupledDictionary.from_json(obj["dictionary"])
        learner = cls(dic.d, dic.d_m, hyper, mode=obj["mode"])
        learner.dictionary = dic
        for entry in obj["registry"]:
            s = np.asarray(entry["s"], float)
            alpha = np.asarray(entry["alpha"], float)
            phi = entry.get("phi_m")
            phi = None if phi is None else np.asarray(phi, float)
            gamma = entry.get("gamma")
            gamma = None if gamma is None else np.asarray(gamma, float)
            rho_w = None
            if learner.coupled and gamma is not None:
                rho_w = task_rho(gamma, hyper.rho) * np.eye(dic.d_m)
            rec = TaskRecord(entry["id"], s, alpha, gamma, phi, rho_w)
            learner.registry[entry["id"]] = rec
            if gamma is not None:
                learner.acc_L = accumulate(learner.acc_L, s, alpha, gamma)
                if learner.coupled:
                    learner.acc_D = accumulate(learner.acc_D, s, phi, rho_w)
        learner.T = len(learner.registry)
        return learner


def presentation_order(n_tasks, rng):
    """Uniform draws with replacement until every task has appeared."""
    seen, order = set(), []
    while len(seen) < n_tasks:
        i = int(rng.integers(n_tasks))
        order.append(i)
        seen.add(i)
    return order


# ---------------------------------------------------------------------------
# batch multi-task learning


def coupled_objective(dictionary, codes, alphas, gammas, phis, rhos, mu, lam, coupled=True):
    """Second-order surrogate of the multi-task objective."""
    total = 0.0
    for s, a, g, p, r in zip(codes, alphas, gammas, phis, rhos):
        res = a - dictionary.L @ s
        total += res @ g @ res + mu * np.abs(s).sum()
        if coupled:
            dres = p - dictionary.D @ s
            total += r * dres @ dres
    reg = np.sum(dictionary.L ** 2)
    if coupled:
        reg += np.sum(dictionary.D ** 2)
    return float(total / len(codes) + lam * reg)


@dataclass
class BatchResult:
    dictionary: CoupledDictionary
    codes: list
    objective: list = field(default_factory=list)
    converged: bool = False


def batch_mtl(alphas, gammas, phis=None, k=6, mu=0.1, lam=0.01, rho=None, outer_iters=100,
              tol=1e-6, seed=0, coupled=True, strict=False, init=None):
    """Offline alternating minimization of the coupled surrogate objective.

    Alternates (all codes given K) and (closed-form L, D given all codes)
    until the objective drops by less than ``tol``. With ``coupled=False``
    the descriptors are ignored (GO-MTL). A code update is only kept if it
    lowers that task's term, so the objective never increases.
    """
    alphas = [np.asarray(a, float) for a in alphas]
    gammas = [np.asarray(g, float) for g in gammas]
    T = len(alphas)
    if T < 1:
        raise ValueError("batch_mtl needs at least one task")
    d = alphas[0].size
    if coupled:
        phis = [np.asarray(p, float) for p in phis]
        d_m = phis[0].size
    else:
        phis = [np.zeros(1)] * T
        d_m = 1
    rhos = [task_rho(g, rho) for g in gammas]
    dic = init.copy() if init is not None else init_dictionary(d, d_m, k, seed)
    codes = [np.zeros(k) for _ in range(T)]

    def task_term(dic, s, t):
        res = alphas[t] - dic.L @ s
        val = res @ gammas[t] @ res + mu * np.abs(s).sum()
        if coupled:
            dres = phis[t] - dic.D @ s
            val += rhos[t] * dres @ dres
        return val

    history = []
    converged = False
    for _ in range(outer_iters):
        for t in range(T):
            if coupled:
                w = coupled_weight(gammas[t], rhos[t], d_m)
                s = weighted_lasso(dic.K, np.concatenate([alphas[t], phis[t]]), w, mu,
                                   s0=codes[t], strict=strict)
            else:
                s = weighted_lasso(dic.L, alphas[t], gammas[t], mu, s0=codes[t], strict=strict)
            if task_term(dic, s, t) <= task_term(dic, codes[t], t):
                codes[t] = s
        acc_L = Accumulator(d, k)
        acc_D = Accumulator(d_m, k)
        for t in range(T):
            acc_L = accumulate(acc_L, codes[t], alphas[t], gammas[t])
            if coupled:
                acc_D = accumulate(acc_D, codes[t], phis[t], rhos[t] * np.eye(d_m))
        L = recompute_basis(acc_L, T, lam)
        D = recompute_basis(acc_D, T, lam) if coupled else dic.D
        dic = CoupledDictionary(L, D)
        history.append(coupled_objective(dic, codes, alphas, gammas, phis, rhos, mu, lam, coupled))
        if len(history) >= 2 and history[-2] - history[-1] < tol:
            converged = True
            break
    if not converged and strict:
        raise NonConvergence("alternating minimization hit outer_iters", best=dic)
    return BatchResult(dic, codes, history, converged)


# ---------------------------------------------------------------------------
# warm start


def warm_start(dictionary, task, phi_m, mu, iters=30, n_traj=20, horizon=100,
               step_size=0.05, sigma=0.3, rng=None):
    """PG learning curve started from the zero-shot policy."""
    pred = zero_shot(dictionary, phi_m, mu)
    sol = pg_single_task(task, GaussianLinearPolicy(pred.theta_tilde, sigma), iters=iters,
                         n_traj=n_traj, horizon=horizon, step_size=step_size, rng=rng)
    return sol.curve
