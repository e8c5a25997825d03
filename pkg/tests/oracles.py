"""Reference solvers used as test oracles.

They share no code with the package: Problem 2 is rebuilt from its
definition with wages in JPY and solved by brute force.
"""
import itertools
import math

import numpy as np


def vertex_oracle(c, A, b):
    """Minimum of c@x over {A x <= b, x >= 0} by enumerating every basic solution."""
    n = len(c)
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = math.inf
    for rows in itertools.combinations(range(len(h)), n):
        M = G[list(rows)]
        if np.linalg.cond(M) > 1e12:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-7 * (1 + np.abs(h))):
            best = min(best, float(c @ x))
    return best


def problem2_oracle(x0, model, worker, n, N, x_ref, eps):
    """Problem 2 written out from scratch (wages in JPY) and solved by enumeration."""
    c_eps = math.log(math.exp(-math.log(eps) / n) - 1)
    slope = -worker.lam / worker.kappa
    free = -(worker.nu - c_eps) / worker.kappa
    w = np.array([model.growth ** (N - 1 - t) for t in range(N)])
    x = x0
    for t in range(N):
        x = model.growth * x + model.inflow_at(t)
    cost = np.concatenate([np.ones(N), np.zeros(N)])
    rows = [np.concatenate([np.zeros(N), -w])]
    rhs = [x_ref - x]
    for t in range(N):
        r = np.zeros(2 * N)
        r[t], r[N + t] = -slope, 1.0
        rows.append(r)
        rhs.append(free)
    return vertex_oracle(cost, np.array(rows), np.array(rhs))


def grid_oracle(x0, model, worker, n, N, x_ref, eps):
    """N <= 2: scan p(0) on a 1 JPY grid, hours at their cap, cheapest p(1) closing the gap."""
    c_eps = math.log(math.exp(-math.log(eps) / n) - 1)
    a = -worker.lam / worker.kappa
    h = -(worker.nu - c_eps) / worker.kappa
    w = np.array([model.growth ** (N - 1 - t) for t in range(N)])
    x = x0
    for t in range(N):
        x = model.growth * x + model.inflow_at(t)
    R = x - x_ref
    p_min = max(0.0, -h / a)  # smallest wage allowing any hours at all
    if N == 1:
        return max(p_min, (R / w[0] - h) / a, 0.0) if R > 0 else p_min if h < 0 else 0.0
    hi = p_min + max(R, 0) / (w.min() * a) + 2
    p0 = np.arange(0.0, math.ceil(hi) + 1.0)
    ok = p0 >= p_min - 1e-12
    u0 = np.maximum(a * p0 + h, 0.0)
    gap = R - w[0] * u0
    p1 = np.maximum(np.maximum((gap / w[1] - h) / a, p_min), 0.0)
    total = np.where(ok, p0 + p1, np.inf)
    return float(total.min())
