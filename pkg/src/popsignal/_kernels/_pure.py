"""Pure-Python reference versions of the compiled kernels.

Each function mirrors the signature of its counterpart in ``_ckernels.pyx``
and returns bit-identical results for the same inputs.
"""
import numpy as np


def edit_distance(a, b, eps):
    """Count edits between two real sequences, treating |x - y| <= eps as a match."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = a.shape[0], b.shape[0]
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        ai = a[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if abs(ai - b[j - 1]) <= eps else 1)
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[m]


def css_residuals(w, const, phi, theta):
    """Conditional residuals of an ARMA(p, q) recursion started at t = p.

    Residuals before ``p`` are taken as zero. Returns the array of residuals
    for t = p .. n-1.
    """
    w = np.asarray(w, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    n, p, q = w.shape[0], phi.shape[0], theta.shape[0]
    e = [0.0] * n
    for t in range(p, n):
        acc = w[t] - const
        for i in range(p):
            acc -= phi[i] * w[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= 0:
                acc -= theta[j] * e[t - 1 - j]
        e[t] = acc
    return np.array(e[p:], dtype=np.float64)


def ses_sse(y, alpha):
    """One-step-ahead squared error and final level of simple exponential smoothing."""
    y = np.asarray(y, dtype=np.float64)
    level = y[0]
    sse = 0.0
    for t in range(1, y.shape[0]):
        err = y[t] - level
        sse += err * err
        level = alpha * y[t] + (1.0 - alpha) * level
    return sse, level
