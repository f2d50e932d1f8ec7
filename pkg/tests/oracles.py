"""Reference computations written independently of the package code.

Each oracle uses a different route from the implementation it checks:
exact rational arithmetic, dense linear algebra or plain path sums.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.linalg import solve_banded


# potential kernel ----------------------------------------------------------

def potential_kernel_table(n: int) -> dict:
    """a(i, j) for 0 <= j <= i <= n by the McCrea-Whipple recursion.

    Values are kept exactly as p + q/pi with rational p, q: the diagonal is
    a(m, m) = (4/pi) sum_{k<=m} 1/(2k-1), and harmonicity off the origin fills
    each new column from the previous two.
    """
    A = {(0, 0): (Fraction(0), Fraction(0)), (1, 0): (Fraction(1), Fraction(0))}

    def diag(m):
        return (Fraction(0), 4 * sum(Fraction(1, 2 * k - 1) for k in range(1, m + 1)))

    def get(i, j):
        i, j = abs(i), abs(j)
        return A[(max(i, j), min(i, j))]

    def lin(*terms):
        p = sum(c * get(*pt)[0] for c, pt in terms)
        q = sum(c * get(*pt)[1] for c, pt in terms)
        return p, q

    A[(1, 1)] = diag(1)
    for m in range(1, n):
        A[(m + 1, m + 1)] = diag(m + 1)
        # harmonic at (m, m): a(m+1, m) = 2 a(m, m) - a(m, m-1)
        A[(m + 1, m)] = lin((2, (m, m)), (-1, (m, m - 1)))
        for j in range(m - 1, -1, -1):
            A[(m + 1, j)] = lin((4, (m, j)), (-1, (m - 1, j)), (-1, (m, j + 1)), (-1, (m, j - 1)))
    return {k: float(p) + float(q) / math.pi for k, (p, q) in A.items() if k[0] <= n}


# dense killed-walk solves ----------------------------------------------------

def _index(points):
    return {tuple(int(c) for c in p): i for i, p in enumerate(points)}


def escape_dense(kill_fn, points) -> np.ndarray:
    """P_x[leave the point set before death] by a dense linear solve."""
    pts = [tuple(int(c) for c in p) for p in points]
    idx = _index(pts)
    n, d = len(pts), len(pts[0])
    M = np.eye(n)
    b = np.zeros(n)
    for i, p in enumerate(pts):
        c = (1.0 - kill_fn(p)) / (2 * d)
        for ax in range(d):
            for s in (1, -1):
                q = list(p)
                q[ax] += s
                j = idx.get(tuple(q))
                if j is None:
                    b[i] += c
                else:
                    M[i, j] -= c
    return np.linalg.solve(M, b)


def gambler_first_step(rate: float, lo: int, hi: int) -> float:
    """P_0[first step is +1 | leave [lo, hi] before death], killing ``rate`` at 0 only."""
    pts = [(x,) for x in range(lo, hi + 1)]
    u = escape_dense(lambda p: rate if p == (0,) else 0.0, pts)
    idx = _index(pts)
    u0, up = u[idx[(0,)]], u[idx[(1,)]]
    return (1 - rate) / 2 * up / u0


def exit_path_sum(kill_fn, points, start, steps: int) -> tuple[dict, float]:
    """Exit distribution and death mass after ``steps`` steps of forward mass propagation
    with dictionaries (no matrices)."""
    inside = {tuple(int(c) for c in p) for p in points}
    d = len(next(iter(inside)))
    mass = {tuple(start): 1.0}
    exits, death = {}, 0.0
    for _ in range(steps):
        new = {}
        for p, m in mass.items():
            k = kill_fn(p)
            death += k * m
            c = (1 - k) * m / (2 * d)
            for ax in range(d):
                for s in (1, -1):
                    q = list(p)
                    q[ax] += s
                    q = tuple(q)
                    if q in inside:
                        new[q] = new.get(q, 0.0) + c
                    else:
                        exits[q] = exits.get(q, 0.0) + c
        mass = new
    return exits, death


# 1D binary branching walk ------------------------------------------------------

def binary_avoid_1d(N: int = 4000, iters: int = 50) -> np.ndarray:
    """w(x) = P_x[binary-GW-indexed walk on Z avoids 0], x = 0..N, with w(N) = 1.

    Solves w(x) = 1/2 + (w(x-1) + w(x+1))^2 / 8, w(0) = 0, by Newton's method
    on the tridiagonal system.
    """
    x = np.arange(N + 1, dtype=float)
    w = np.clip(1 - 6.0 / np.maximum(x, 1) ** 2, 0, 1)
    w[0], w[-1] = 0.0, 1.0
    for _ in range(iters):
        s = w[:-2] + w[2:]
        F = w[1:-1] - 0.5 - s * s / 8
        off = -s / 4
        ab = np.zeros((3, N - 1))
        ab[0, 1:] = off[:-1]      # super-diagonal: dF_i/dw_{i+1}
        ab[1, :] = 1.0
        ab[2, :-1] = off[1:]      # sub-diagonal: dF_{i+1}/dw_i
        step = solve_banded((1, 1), ab, -F)
        w[1:-1] += step
        if np.max(np.abs(step)) < 1e-15:
            break
    return w


def binary_k1() -> float:
    """Hit probability from 1 for the multitype bush of the binary law (root has one child)."""
    w = binary_avoid_1d()
    return 1.0 - 0.5 * w[2]
