"""Single-task learners.

Each learner returns a point estimate ``alpha`` together with the curvature
``gamma`` of its loss at that point, which is what the dictionary update
needs from a task.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from .environments import simulate
from .exceptions import DivergedPolicy, NonConvergence, SingularSystem

PG_SIGMA = 0.3
PG_STEP = 0.05
PG_TRAJ = 20
PG_JITTER = 1e-6
PG_BACKTRACKS = 4


@dataclass
class SingleTaskSolution:
    alpha: np.ndarray
    gamma: np.ndarray
    loss_at_alpha: float
    curve: list = field(default_factory=list)


def check_curvature(gamma, tol=1e-8):
    """True if gamma is symmetric and PSD up to round-off."""
    gamma = np.asarray(gamma, float)
    if np.abs(gamma - gamma.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(gamma).max(initial=0.0)):
        return False
    return np.linalg.eigvalsh(gamma).min() >= -tol


# ---------------------------------------------------------------------------
# supervised


def fit_linear_regression(X, y, reg):
    """Ridge regression with loss (1/n)||y - X theta||^2 + reg ||theta||^2."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, d = X.shape
    H = X.T @ X / n + reg * np.eye(d)
    try:
        factor = linalg.cho_factor(H)
        alpha = linalg.cho_solve(factor, X.T @ y / n)
    except linalg.LinAlgError as exc:
        raise SingularSystem("X'X is singular; use reg > 0") from exc
    r = y - X @ alpha
    loss = r @ r / n + reg * alpha @ alpha
    return SingleTaskSolution(alpha, 2.0 * H, float(loss))


def fit_multioutput_regression(X, Y, reg):
    """Independent ridge fits per output column, stacked into one parameter vector.

    The parameters are ordered output by output; the curvature is block
    diagonal with one identical block per output.
    """
    Y = np.asarray(Y, float)
    fits = [fit_linear_regression(X, Y[:, j], reg) for j in range(Y.shape[1])]
    alpha = np.concatenate([f.alpha for f in fits])
    gamma = linalg.block_diag(*[f.gamma for f in fits])
    return SingleTaskSolution(alpha, gamma, float(sum(f.loss_at_alpha for f in fits)))


def logistic_loss(theta, X, y, reg):
    margins = y * (X @ theta)
    return float(np.mean(np.logaddexp(0.0, -margins)) + reg * theta @ theta)


def logistic_gradient(theta, X, y, reg):
    margins = y * (X @ theta)
    return -(X.T @ (y * expit(-margins))) / X.shape[0] + 2.0 * reg * theta


def logistic_hessian(theta, X, reg):
    p = expit(X @ theta)
    w = p * (1.0 - p)
    return (X.T * w) @ X / X.shape[0] + 2.0 * reg * np.eye(X.shape[1])


def fit_logistic_regression(X, y, reg, tol=1e-8, max_iters=100):
    """L2-regularized logistic regression by damped Newton steps.

    Labels are in {+1, -1}; ``reg`` must be positive so separable data still
    has a finite optimum.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if reg <= 0:
        raise ValueError("logistic regression needs reg > 0")
    theta = np.zeros(X.shape[1])
    loss = logistic_loss(theta, X, y, reg)
    for _ in range(max_iters):
        g = logistic_gradient(theta, X, y, reg)
        if np.linalg.norm(g) <= tol:
            break
        H = logistic_hessian(theta, X, reg)
        direction = linalg.solve(H, g, assume_a="pos")
        t = 1.0
        while True:
            cand = theta - t * direction
            cand_loss = logistic_loss(cand, X, y, reg)
            if cand_loss <= loss - 1e-4 * t * g @ direction or t < 1e-10:
                break
            t *= 0.5
        theta, loss = cand, cand_loss
    else:
        g = logistic_gradient(theta, X, y, reg)
        if np.linalg.norm(g) > tol:
            raise NonConvergence("logistic regression did not converge", best=theta,
                                 residual=float(np.linalg.norm(g)))
    return SingleTaskSolution(theta, logistic_hessian(theta, X, reg), loss)


def classification_accuracy(theta, X, y):
    pred = np.where(np.asarray(X) @ theta > 0, 1.0, -1.0)
    return float(np.mean(pred == y))


# ---------------------------------------------------------------------------
# policy gradient


@dataclass
class GaussianLinearPolicy:
    theta: np.ndarray
    sigma: float = PG_SIGMA

    def __post_init__(self):
        self.theta = np.asarray(self.theta, float)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def normalize_returns(returns):
    """Min-max scale a batch of returns to [0, 1]; a flat batch maps to ones."""
    returns = np.asarray(returns, float)
    lo, hi = returns.min(), returns.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.ones_like(returns)
    return (returns - lo) / (hi - lo)


def reinforce_gradient(batch, theta, sigma):
    """Episodic REINFORCE estimate with min-max normalized returns.

    Mean over trajectories of R~(tau) * sum_h grad log pi(a_h | x_h).
    """
    weights = normalize_returns(batch.returns)
    score = (batch.actions - batch.features @ theta)[..., None] * batch.features / sigma ** 2
    return np.einsum("n,nhd->d", weights, score) / score.shape[0]


def pg_curvature(features, weights, sigma, jitter=PG_JITTER):
    """Curvature of the negated reward-weighted lower bound.

    ``features`` is (n_traj, H, d); ``weights`` are the normalized returns.
    """
    n, _, d = features.shape
    gamma = np.einsum("n,nhi,nhj->ij", weights, features, features) / (sigma ** 2 * n)
    return 0.5 * (gamma + gamma.T) + jitter * np.eye(d)


def evaluate_policy(theta, task, n_traj, horizon, rng, sigma=PG_SIGMA):
    """Mean average reward over ``n_traj`` rollouts of the stochastic policy."""
    return float(simulate(task, theta, n_traj, horizon, sigma, rng).returns.mean())


def _batch_rng(seed):
    return np.random.default_rng(seed)


def pg_single_task(task, policy0, iters=30, n_traj=PG_TRAJ, horizon=100, step_size=PG_STEP,
                   rng=None, jitter=PG_JITTER, max_backtracks=PG_BACKTRACKS):
    """Episodic REINFORCE from ``policy0``.

    ``curve[i]`` is the mean return of the batch sampled at the start of
    iteration i. A proposed step is halved while it lowers the return on the
    same (common random numbers) batch; if every halving fails the policy is
    kept. The curvature is estimated from a fresh batch at the final policy.
    """
    rng = np.random.default_rng() if rng is None else rng
    sigma = policy0.sigma
    theta = policy0.theta.copy()
    curve = []
    for _ in range(iters):
        seed = int(rng.integers(2**63))
        batch = simulate(task, theta, n_traj, horizon, sigma, _batch_rng(seed))
        current = float(batch.returns.mean())
        curve.append(current)
        grad = reinforce_gradient(batch, theta, sigma)
        eta = step_size
        for _ in range(max_backtracks + 1):
            cand = theta + eta * grad
            trial = simulate(task, cand, n_traj, horizon, sigma, _batch_rng(seed))
            if trial.returns.mean() >= current:
                theta = cand
                break
            eta *= 0.5
        if np.any(np.abs(theta) > 1e6) or not np.all(np.isfinite(theta)):
            raise DivergedPolicy("policy parameters exceeded 1e6; lower the step size")
    final = simulate(task, theta, n_traj, horizon, sigma, rng)
    weights = normalize_returns(final.returns)
    gamma = pg_curvature(final.features, weights, sigma, jitter)
    return SingleTaskSolution(theta, gamma, -float(final.returns.mean()), curve)
