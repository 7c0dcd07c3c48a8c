"""Sparse coding kernels.

All solvers use the objective convention

    ||target - Q s||^2 + mu * ||s||_1

without a 1/2 factor, so the coordinate-wise shrinkage threshold is mu / 2.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .exceptions import (
    ConvergenceWarning,
    DimensionMismatch,
    NonConvergence,
    NotPSD,
    ZeroColumn,
)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 10_000
FIRST_STAGE_SWEEPS = 10


def soft_threshold(v, t):
    """sign(v) * max(|v| - t, 0), elementwise for arrays."""
    if np.ndim(v) == 0:
        v = float(v)
        if v > t:
            return v - t
        if v < -t:
            return v + t
        return 0.0
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


@njit(cache=True)
def _kkt_residual(grad, s, mu):
    # grad is the full gradient 2 (G s - c) of the smooth part
    worst = 0.0
    for j in range(s.shape[0]):
        if s[j] > 0.0:
            r = abs(grad[j] + mu)
        elif s[j] < 0.0:
            r = abs(grad[j] - mu)
        else:
            r = abs(grad[j]) - mu
            if r < 0.0:
                r = 0.0
        if r > worst:
            worst = r
    return worst


@njit(cache=True)
def _cd_kernel(G, c, mu, s, tol, max_iters, trace):
    k = s.shape[0]
    half = 0.5 * mu
    n_trace = trace.shape[0]
    it = 0
    residual = np.inf
    while True:
        # fresh gradient each sweep; incremental updates drift
        g = G @ s - c
        residual = _kkt_residual(2.0 * g, s, mu)
        if it < n_trace:
            trace[it] = s @ (g - c) + mu * np.sum(np.abs(s))
        if residual <= tol or it >= max_iters:
            break
        for j in range(k):
            gjj = G[j, j]
            if gjj <= 0.0:
                new = 0.0
            else:
                z = gjj * s[j] - g[j]
                if z > half:
                    new = (z - half) / gjj
                elif z < -half:
                    new = (z + half) / gjj
                else:
                    new = 0.0
            delta = new - s[j]
            if delta != 0.0:
                for i in range(k):
                    g[i] += delta * G[i, j]
                s[j] = new
        it += 1
    return it, residual


@dataclass
class LassoInfo:
    n_sweeps: int
    kkt_residual: float
    converged: bool
    polished: bool = False
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0))


def _objective_gram(G, c, mu, s):
    return float(s @ G @ s - 2.0 * c @ s + mu * np.abs(s).sum())


def _polish(G, c, mu, s):
    """Exact solve on the current active set with fixed signs.

    Returns the polished code when it keeps the sign pattern, otherwise None.
    """
    active = np.flatnonzero(s)
    if active.size == 0:
        return None
    signs = np.sign(s[active])
    sub = G[np.ix_(active, active)]
    try:
        chol = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        return None
    rhs = c[active] - 0.5 * mu * signs
    y = np.linalg.solve(chol, rhs)
    vals = np.linalg.solve(chol.T, y)
    if np.any(np.sign(vals) != signs):
        return None
    out = np.zeros_like(s)
    out[active] = vals
    return out


@njit(cache=True)
def _objective_nb(G, c, mu, s):
    k = s.shape[0]
    val = 0.0
    for i in range(k):
        if s[i] == 0.0:
            continue
        row = 0.0
        for j in range(k):
            row += G[i, j] * s[j]
        val += s[i] * row - 2.0 * c[i] * s[i] + mu * abs(s[i])
    return val


@njit(cache=True)
def _sign_fixed_step(G, c, mu, s, signs, idx):
    """Next point of the sign-fixed quadratic restricted to ``idx``.

    When the restricted system has a stationary point, returns the best
    point on the segment towards it (the endpoint or a zero crossing).
    Otherwise the objective falls linearly along a null-space direction and
    the step runs to the first coefficient that reaches zero. The flag is
    False when no such step exists.
    """
    m = idx.shape[0]
    sub = np.empty((m, m))
    rhs = np.empty(m)
    old = np.empty(m)
    for a in range(m):
        rhs[a] = c[idx[a]] - 0.5 * mu * signs[idx[a]]
        old[a] = s[idx[a]]
        for b in range(m):
            sub[a, b] = G[idx[a], idx[b]]
    w, V = np.linalg.eigh(sub)
    cutoff = 1e-12 * max(w.max(), 1.0)
    proj = np.zeros(m)
    for j in range(m):
        for a in range(m):
            proj[j] += V[a, j] * rhs[a]
    drift = np.zeros(m)
    target = np.zeros(m)
    for j in range(m):
        for a in range(m):
            if w[j] <= cutoff:
                drift[a] += proj[j] * V[a, j]
            else:
                target[a] += proj[j] / w[j] * V[a, j]
    if np.sqrt(np.sum(drift ** 2)) > 1e-12 * max(np.sqrt(np.sum(rhs ** 2)), 1.0):
        best_t, best_a = np.inf, -1
        for a in range(m):
            if old[a] * drift[a] < 0.0 and -old[a] / drift[a] < best_t:
                best_t, best_a = -old[a] / drift[a], a
        if best_a < 0:
            return False, s
        point = s.copy()
        for a in range(m):
            point[idx[a]] = old[a] + best_t * drift[a]
        point[idx[best_a]] = 0.0
        return True, point
    best = s.copy()
    for a in range(m):
        best[idx[a]] = target[a]
    best_obj = _objective_nb(G, c, mu, best)
    for a in range(m):
        if old[a] != 0.0 and np.sign(old[a]) != np.sign(target[a]):
            frac = old[a] / (old[a] - target[a])
            point = s.copy()
            for b in range(m):
                point[idx[b]] = old[b] + frac * (target[b] - old[b])
            point[idx[a]] = 0.0
            val = _objective_nb(G, c, mu, point)
            if val < best_obj:
                best, best_obj = point, val
    return True, best


@njit(cache=True)
def _feature_sign(G, c, mu, s, tol, max_rounds):
    """Active-set (feature-sign) search, used when coordinate descent stalls."""
    k = s.shape[0]
    s = s.copy()
    signs = np.sign(s)
    for _ in range(max_rounds):
        g = 2.0 * (G @ s - c)
        if _kkt_residual(g, s, mu) <= tol:
            break
        settled = True
        for j in range(k):
            if signs[j] != 0.0 and abs(g[j] + mu * signs[j]) > tol:
                settled = False
        if settled:
            i, worst = -1, 0.0
            for j in range(k):
                if signs[j] == 0.0 and abs(g[j]) > worst:
                    i, worst = j, abs(g[j])
            if i < 0 or worst <= mu + tol:
                break
            signs[i] = -np.sign(g[i])
        ok, point = _sign_fixed_step(G, c, mu, s, signs, np.nonzero(signs)[0])
        current = _objective_nb(G, c, mu, s)
        if not ok or _objective_nb(G, c, mu, point) > current + 1e-14 * max(1.0, abs(current)):
            break
        s = point
        signs = np.sign(s)
    return s


def _rescue(G, c, mu, s, residual, tol, max_iters):
    # on singular Gram matrices the stalled support can be a dead end,
    # so the search is also tried from the empty support
    for start in (s, np.zeros(s.shape[0])):
        cand = _feature_sign(G, c, float(mu), start, float(tol), min(500, int(max_iters)))
        cand_res = _kkt_residual(2.0 * (G @ cand - c), cand, float(mu))
        if cand_res < residual:
            s, residual = cand, cand_res
        if residual <= tol:
            break
    return s.copy(), residual


def lasso_gram(G, c, mu, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, s0=None,
               trace_length=0):
    """Coordinate descent on the Gram form of the LASSO.

    Minimizes ``s'Gs - 2c's + mu ||s||_1``, i.e. the LASSO objective up to
    the constant ``target'target``. Coordinates are swept in ascending order.

    Returns
    -------
    s : ndarray, shape (k,)
    info : LassoInfo
    """
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    k = c.shape[0]
    if G.shape != (k, k):
        raise DimensionMismatch(f"Gram matrix {G.shape} does not match vector of length {k}")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    s = np.zeros(k) if s0 is None else np.array(s0, dtype=float)
    trace = np.full(trace_length, np.nan)
    # a short coordinate-descent stage first; when it crawls (typically on a
    # singular Gram matrix) the active-set search usually finishes the job
    stage = min(int(max_iters), FIRST_STAGE_SWEEPS)
    n_sweeps, residual = _cd_kernel(G, c, float(mu), s, float(tol), stage, trace)
    if residual > tol:
        s, residual = _rescue(G, c, mu, s, residual, tol, max_iters)
    if residual > tol and max_iters > stage:
        more, residual = _cd_kernel(G, c, float(mu), s, float(tol), int(max_iters) - stage, np.empty(0))
        n_sweeps += more
        if residual > tol:
            s, residual = _rescue(G, c, mu, s, residual, tol, max_iters)

    polished = False
    cand = _polish(G, c, mu, s)
    if cand is not None:
        cand_res = _kkt_residual(2.0 * (G @ cand - c), cand, float(mu))
        if cand_res <= residual and _objective_gram(G, c, mu, cand) <= _objective_gram(G, c, mu, s):
            s, residual, polished = cand, cand_res, True

    info = LassoInfo(
        n_sweeps=int(n_sweeps),
        kkt_residual=float(residual),
        converged=bool(residual <= tol),
        polished=polished,
        objective_trace=trace[: min(trace_length, n_sweeps + 1)],
    )
    return s, info


def _finish(s, info, strict):
    if info.converged:
        return s
    msg = (f"LASSO stopped after {info.n_sweeps} sweeps with KKT residual "
           f"{info.kkt_residual:.3e}")
    if strict:
        raise NonConvergence(msg, best=s, residual=info.kkt_residual)
    warnings.warn(msg, ConvergenceWarning, stacklevel=3)
    return s


def lasso(Q, target, mu, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, s0=None,
          strict=False):
    """Solve ``argmin_s ||target - Q s||^2 + mu ||s||_1``.

    The returned code satisfies the KKT conditions to ``tol`` unless the sweep
    budget runs out, in which case the last iterate is returned with a
    :class:`ConvergenceWarning` (or :class:`NonConvergence` is raised when
    ``strict``).
    """
    Q = np.asarray(Q, dtype=float)
    target = np.asarray(target, dtype=float)
    if Q.ndim != 2 or target.ndim != 1 or Q.shape[0] != target.shape[0]:
        raise DimensionMismatch(f"dictionary {Q.shape} vs target {target.shape}")
    s, info = lasso_gram(Q.T @ Q, Q.T @ target, mu, tol=tol, max_iters=max_iters, s0=s0)
    return _finish(s, info, strict)


@dataclass(frozen=True)
class WeightedQuadratic:
    """The norm ``||v||_A^2 = v'Av`` with ``A = weight + jitter * I``."""

    weight: np.ndarray
    jitter: float = 0.0


def psd_factor(weight, jitter=0.0):
    """Upper-triangular factor of a PSD matrix restricted to its support.

    Rows and columns that are identically zero carry no weight and are left
    out of the factorization (only when ``jitter`` is zero). If the Cholesky
    factorization fails, jitter of ``1e-8 * mean(diag)`` is added and grown
    tenfold up to six times.

    Returns
    -------
    R : ndarray, shape (m, m)
        ``R'R = weight[support][:, support] + jitter_used * I``.
    support : ndarray of int
    jitter_used : float
    """
    weight = np.asarray(weight, dtype=float)
    if weight.ndim != 2 or weight.shape[0] != weight.shape[1]:
        raise DimensionMismatch(f"weight must be square, got {weight.shape}")
    if not np.all(np.isfinite(weight)):
        raise NotPSD("weight has non-finite entries")
    scale = max(1.0, float(np.abs(weight).max(initial=0.0)))
    if np.abs(weight - weight.T).max(initial=0.0) > 1e-10 * scale:
        raise NotPSD("weight is not symmetric")
    weight = 0.5 * (weight + weight.T)

    if jitter > 0:
        support = np.arange(weight.shape[0])
    else:
        support = np.flatnonzero(np.any(weight != 0.0, axis=1))
    sub = weight[np.ix_(support, support)]
    if support.size == 0:
        return np.zeros((0, 0)), support, float(jitter)
    if np.any(np.diag(sub) < 0):
        raise NotPSD("weight has a negative diagonal entry")

    eye = np.eye(support.size)
    try:
        return np.linalg.cholesky(sub + jitter * eye).T, support, float(jitter)
    except np.linalg.LinAlgError:
        pass
    extra = 1e-8 * float(np.mean(np.diag(sub)))
    if extra <= 0:
        raise NotPSD("weight has an empty diagonal but nonzero entries")
    for _ in range(7):
        try:
            used = jitter + extra
            return np.linalg.cholesky(sub + used * eye).T, support, float(used)
        except np.linalg.LinAlgError:
            extra *= 10.0
    raise NotPSD("factorization failed even after adding jitter")


def whiten(w):
    """Return W with ``W'W = weight + jitter * I``.

    ``w`` may be a :class:`WeightedQuadratic` or a bare matrix. Applying W to
    both the dictionary and the target turns a weighted LASSO into a standard
    one. When the default jitter has to be added, W'W includes it.
    """
    if not isinstance(w, WeightedQuadratic):
        w = WeightedQuadratic(np.asarray(w, dtype=float))
    weight = np.asarray(w.weight, dtype=float)
    R, support, _ = psd_factor(weight, w.jitter)
    W = np.zeros_like(weight)
    W[np.ix_(support, support)] = R
    return W


def whitened_system(K, beta, w):
    """Whitened ``(Q, target)`` pair, dropping rows that carry zero weight."""
    if not isinstance(w, WeightedQuadratic):
        w = WeightedQuadratic(np.asarray(w, dtype=float))
    K = np.asarray(K, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = np.shape(w.weight)[0]
    if K.ndim != 2 or K.shape[0] != beta.shape[0] or K.shape[0] != n:
        raise DimensionMismatch(
            f"dictionary {K.shape}, target {beta.shape} and weight {np.shape(w.weight)} disagree")
    R, support, _ = psd_factor(w.weight, w.jitter)
    return R @ K[support], R @ beta[support]


def weighted_lasso(K, beta, w, mu, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS,
                   s0=None, strict=False):
    """Solve ``argmin_s ||beta - K s||_w^2 + mu ||s||_1`` by whitening."""
    Q, t = whitened_system(K, beta, w)
    if Q.shape[0] == 0:
        # no weighted rows: only the penalty remains
        return np.zeros(np.shape(K)[1])
    return lasso(Q, t, mu, tol=tol, max_iters=max_iters, s0=s0, strict=strict)


def mutual_coherence(Q):
    """Largest absolute cosine between two distinct columns of Q."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] < 2:
        raise DimensionMismatch("mutual coherence needs at least two columns")
    norms = np.linalg.norm(Q, axis=0)
    if np.any(norms < 1e-12):
        raise ZeroColumn("dictionary has a column with (near) zero norm")
    U = Q / norms
    C = np.abs(U.T @ U)
    np.fill_diagonal(C, 0.0)
    return float(min(1.0, C.max()))
