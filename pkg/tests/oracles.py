"""Independent reference computations used by the test-suite.

Nothing here imports the solvers under test.
"""

import itertools

import numpy as np


def lasso_kkt_residual(Q, target, mu, s):
    """Largest violation of 0 in the subdifferential of ||t - Qs||^2 + mu|s|_1."""
    Q = np.asarray(Q, float)
    grad = 2.0 * Q.T @ (Q @ s - target)
    worst = 0.0
    for g, sj in zip(grad, s):
        if sj != 0:
            worst = max(worst, abs(g + mu * np.sign(sj)))
        else:
            worst = max(worst, abs(g) - mu)
    return worst


def lasso_objective(Q, target, mu, s):
    r = target - Q @ s
    return float(r @ r + mu * np.abs(s).sum())


def lasso_brute_force(Q, target, mu):
    """Enumerate every sign pattern in {-1, 0, +1}^k and keep the best
    stationary point consistent with its pattern."""
    Q = np.asarray(Q, float)
    k = Q.shape[1]
    best, best_obj = np.zeros(k), lasso_objective(Q, target, mu, np.zeros(k))
    for pattern in itertools.product((-1, 0, 1), repeat=k):
        z = np.array(pattern, float)
        act = np.flatnonzero(z)
        if act.size == 0:
            continue
        Qa = Q[:, act]
        M = Qa.T @ Qa
        if np.linalg.matrix_rank(M) < act.size:
            continue
        vals = np.linalg.solve(M, Qa.T @ target - 0.5 * mu * z[act])
        if np.any(np.sign(vals) != z[act]):
            continue
        s = np.zeros(k)
        s[act] = vals
        obj = lasso_objective(Q, target, mu, s)
        if obj < best_obj:
            best, best_obj = s, obj
    return best


def kron_dense(a, B):
    """Kronecker product by explicit block placement."""
    a = np.atleast_2d(a)
    B = np.atleast_2d(B)
    m, n = a.shape
    p, q = B.shape
    out = np.zeros((m * p, n * q))
    for i in range(m):
        for j in range(n):
            out[i * p:(i + 1) * p, j * q:(j + 1) * q] = a[i, j] * B
    return out


def batch_basis_ridge(codes, targets, weights, lam):
    """Minimize (1/T) sum_t ||y_t - B s_t||^2_{W_t} + lam ||B||_F^2 over B.

    Assembles the normal equations entry by entry, indexing B[i, j] as
    unknown number j * p + i (column-major), with no Kronecker helpers.
    """
    T = len(codes)
    p, k = targets[0].shape[0], codes[0].shape[0]
    n = p * k
    H = np.zeros((n, n))
    g = np.zeros(n)
    for s, y, W in zip(codes, targets, weights):
        for j in range(k):
            for i in range(p):
                row = j * p + i
                g[row] += s[j] * (W[i] @ y) / T
                for jj in range(k):
                    for ii in range(p):
                        H[row, jj * p + ii] += s[j] * s[jj] * W[i, ii] / T
    H += lam * np.eye(n)
    x = np.linalg.solve(H, g)
    B = np.zeros((p, k))
    for j in range(k):
        for i in range(p):
            B[i, j] = x[j * p + i]
    return B


def dh_position(twists, lengths, offsets, angles):
    """End-effector position by composing 4x4 transforms written out by hand."""
    T = np.eye(4)
    for alpha, a, d, q in zip(twists, lengths, offsets, angles):
        ct, st = np.cos(q), np.sin(q)
        ca, sa = np.cos(alpha), np.sin(alpha)
        rot_z = np.array([[ct, -st, 0, 0], [st, ct, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
        trans_z = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, d], [0, 0, 0, 1]])
        trans_x = np.array([[1, 0, 0, a], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
        rot_x = np.array([[1, 0, 0, 0], [0, ca, -sa, 0], [0, sa, ca, 0], [0, 0, 0, 1]])
        T = T @ rot_z @ trans_z @ trans_x @ rot_x
    return T[:3, 3]


def central_difference_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
