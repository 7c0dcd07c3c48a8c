"""Online maintenance of the coupled dictionary.

Each basis B (the model basis L or the descriptor basis D) is the minimizer of

    (1/T) sum_t ||y_t - B s_t||^2_{W_t} + lam ||B||_F^2

kept in closed form through the running sums

    A = sum_t (s_t s_t') kron W_t,      b = sum_t s_t kron (W_t y_t),

with column-major vectorization of B throughout.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .exceptions import DimensionMismatch, SingularSystem


@dataclass
class CoupledDictionary:
    """Model basis ``L`` (d x k) and descriptor basis ``D`` (d_m x k)."""

    L: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        if self.L.ndim != 2 or self.D.ndim != 2 or self.L.shape[1] != self.D.shape[1]:
            raise DimensionMismatch(f"L {self.L.shape} and D {self.D.shape} must share k")

    @property
    def d(self):
        return self.L.shape[0]

    @property
    def d_m(self):
        return self.D.shape[0]

    @property
    def k(self):
        return self.L.shape[1]

    @property
    def K(self):
        return np.vstack([self.L, self.D])

    def copy(self):
        return CoupledDictionary(self.L.copy(), self.D.copy())

    def to_json(self, hyperparams=None, T=0):
        return {
            "d": self.d,
            "d_m": self.d_m,
            "k": self.k,
            "L": self.L.tolist(),
            "D": self.D.tolist(),
            "hyperparams": dict(hyperparams or {}),
            "T": int(T),
        }

    @classmethod
    def from_json(cls, obj):
        L = np.asarray(obj["L"], dtype=float).reshape(obj["d"], obj["k"])
        D = np.asarray(obj["D"], dtype=float).reshape(obj["d_m"], obj["k"])
        return cls(L, D)


def init_dictionary(d, d_m, k, seed):
    """Random standard-normal bases; the same seed gives identical matrices."""
    if min(d, d_m, k) < 1:
        raise ValueError("dictionary dimensions must be positive")
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((d, k))
    D = rng.standard_normal((d_m, k))
    return CoupledDictionary(L, D)


@dataclass
class Accumulator:
    """Running sums for one basis with ``p`` rows and ``k`` columns."""

    p: int
    k: int
    A: np.ndarray = None
    b: np.ndarray = None

    def __post_init__(self):
        n = self.p * self.k
        if self.A is None:
            self.A = np.zeros((n, n))
        if self.b is None:
            self.b = np.zeros(n)

    def copy(self):
        return replace(self, A=self.A.copy(), b=self.b.copy())


def accumulate(acc, s, target, weight, sign=1):
    """Add (``sign=+1``) or remove (``sign=-1``) one task's contribution.

    Returns a new accumulator; ``acc`` is left untouched.
    """
    s = np.asarray(s, dtype=float)
    target = np.asarray(target, dtype=float)
    weight = np.asarray(weight, dtype=float)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if s.shape != (acc.k,) or target.shape != (acc.p,) or weight.shape != (acc.p, acc.p):
        raise DimensionMismatch(
            f"accumulator (p={acc.p}, k={acc.k}) got s {s.shape}, target {target.shape}, "
            f"weight {weight.shape}")
    A = acc.A + sign * np.kron(np.outer(s, s), weight)
    A = 0.5 * (A + A.T)
    b = acc.b + sign * np.kron(s, weight @ target)
    return replace(acc, A=A, b=b)


def recompute_basis(acc, T, lam):
    """Closed-form basis: mat(((1/T) A + lam I)^-1 (1/T) b), column-major."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    n = acc.p * acc.k
    M = acc.A / T + lam * np.eye(n)
    try:
        factor = linalg.cho_factor(M, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularSystem("regularized basis system is not positive definite") from exc
    vec = linalg.cho_solve(factor, acc.b / T)
    return vec.reshape(acc.p, acc.k, order="F")


@dataclass
class TaskRecord:
    """What the dictionary keeps about one task."""

    task_id: object
    s: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    phi_m: np.ndarray = None
    rho_weight: np.ndarray = None
    extra: dict = field(default_factory=dict)


def descriptor_weight(record, rho):
    if record.rho_weight is not None:
        return record.rho_weight
    return rho * np.eye(len(record.phi_m))


def encounter_task(dictionary, acc_L, acc_D, record, prior, T, lam, rho=None):
    """Fold one task record into the accumulators and re-solve both bases.

    If ``prior`` (the task's previous record) is given, its contribution is
    subtracted first so a revisited task is counted once. ``acc_D`` may be
    None, in which case only ``L`` is maintained.

    Returns
    -------
    dictionary, acc_L, acc_D, T
    """
    if prior is not None and prior.task_id != record.task_id:
        raise ValueError("prior record belongs to a different task")
    if record.alpha.shape != (dictionary.d,) or record.s.shape != (dictionary.k,):
        raise DimensionMismatch("task record does not match the dictionary")

    if prior is not None:
        acc_L = accumulate(acc_L, prior.s, prior.alpha, prior.gamma, sign=-1)
    acc_L = accumulate(acc_L, record.s, record.alpha, record.gamma)
    if prior is None:
        T += 1
    L = recompute_basis(acc_L, T, lam)

    D = dictionary.D
    if acc_D is not None:
        if record.phi_m is None or record.phi_m.shape != (dictionary.d_m,):
            raise DimensionMismatch("descriptor features do not match the dictionary")
        if prior is not None:
            acc_D = accumulate(acc_D, prior.s, prior.phi_m, descriptor_weight(prior, rho), sign=-1)
        acc_D = accumulate(acc_D, record.s, record.phi_m, descriptor_weight(record, rho))
        D = recompute_basis(acc_D, T, lam)
    return CoupledDictionary(L, D), acc_L, acc_D, T


def surrogate_objective(L, records, mu, lam):
    """Sparse-coded approximation of the multi-task objective for a fixed L."""
    records = list(records)
    total = 0.0
    for rec in records:
        r = rec.alpha - L @ rec.s
        total += r @ rec.gamma @ r + mu * np.abs(rec.s).sum()
    return total / len(records) + lam * float(np.sum(L * L))
