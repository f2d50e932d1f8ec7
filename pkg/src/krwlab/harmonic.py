"""Escape probabilities, exit measures, potential kernel and Green functions.

The central object is a finite domain D of Z^d stored as a point array plus a
neighbour index table (``-1`` marks a neighbour outside D).  Linear problems of
the form

    u(x) = c(x) * sum_{y ~ x} u(y) + f(x)   on D,     u = b outside D,

are solved by successive over-relaxation in compiled sweeps.  With
c = (1 - k)/(2d), f = 0 and b = 1 this is the escape probability of the killed
walk; with c = 1/(2d), f = delta_0 and b = 0 it is the Green function.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate, special

from .core import (Estimate, Exhaustion, KillingField, RandomStream, as_point,
                   ball_points, check_dim, unit_steps)

log = logging.getLogger(__name__)

UNDERFLOW_WARN = 1e-290


class SolverError(RuntimeError):
    """Relaxation failed to reach the requested residual."""

    def __init__(self, msg, residual=None, sweeps=None):
        super().__init__(msg)
        self.residual = residual
        self.sweeps = sweeps


# ---------------------------------------------------------------------------
# domains

class Domain:
    """Finite subset of Z^d with a dense index lookup over its bounding box."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.int64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if len(pts) == 0:
            raise ValueError("empty domain")
        self.points = pts
        self.d = pts.shape[1]
        self.lo = pts.min(axis=0) - 1
        self.shape = tuple(int(s) for s in (pts.max(axis=0) + 2 - self.lo))
        self._strides = np.array([int(np.prod(self.shape[i + 1:])) for i in range(self.d)],
                                 dtype=np.int64)
        size = int(np.prod(self.shape))
        self._lookup = np.full(size, -1, dtype=np.int64 if len(pts) >= 2**31 else np.int32)
        flat = self._flat(pts)
        self._lookup[flat] = np.arange(len(pts))
        if np.count_nonzero(self._lookup >= 0) != len(pts):
            raise ValueError("domain points are not distinct")
        steps = unit_steps(self.d)
        itype = np.int32 if len(pts) < 2**31 - 1 else np.int64
        nbr = np.empty((len(pts), 2 * self.d), dtype=itype)
        for j, s in enumerate(steps):
            nbr[:, j] = self._lookup[flat + int(np.dot(s, self._strides))]
        self.nbr = nbr

    def __len__(self):
        return len(self.points)

    def _flat(self, pts):
        return (np.asarray(pts, dtype=np.int64) - self.lo) @ self._strides

    def index(self, pts) -> np.ndarray:
        """Indices of ``pts`` (shape (n, d)); -1 for points outside D."""
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, self.d)
        inside = np.all((pts > self.lo) & (pts < self.lo + np.asarray(self.shape) - 1), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        out[inside] = self._lookup[self._flat(pts[inside])]
        return out

    def boundary(self) -> np.ndarray:
        """Points outside D adjacent to D (outer boundary), lexicographically sorted."""
        steps = unit_steps(self.d)
        rows, cols = np.nonzero(self.nbr < 0)
        pts = self.points[rows] + steps[cols]
        return np.unique(pts, axis=0)

    def transition(self, kill: np.ndarray):
        """Sparse killed-walk transitions: (D -> D, D -> outer boundary, boundary points)."""
        n, d = len(self), self.d
        c = (1.0 - kill) / (2 * d)
        rows, cols = np.nonzero(self.nbr >= 0)
        inner = sp.csr_matrix((c[rows], (rows, self.nbr[rows, cols])), shape=(n, n))
        brow, bcol = np.nonzero(self.nbr < 0)
        bpts = self.points[brow] + unit_steps(d)[bcol]
        bnd, inv = np.unique(bpts, axis=0, return_inverse=True)
        inv = np.asarray(inv).ravel()
        exit_ = sp.csr_matrix((c[brow], (brow, inv)), shape=(n, len(bnd)))
        return inner, exit_, bnd


# ---------------------------------------------------------------------------
# compiled relaxation

@numba.njit(cache=True)
def _sor_sweep(u, nbr, coef, src, outside, order, omega):
    m = nbr.shape[1]
    for t in range(order.shape[0]):
        i = order[t]
        s = 0.0
        for j in range(m):
            q = nbr[i, j]
            if q < 0:
                s += outside
            else:
                s += u[q]
        new = coef[i] * s + src[i]
        u[i] += omega * (new - u[i])


@numba.njit(cache=True)
def _residual(u, nbr, coef, src, outside):
    """Max absolute residual and max residual relative to |u| (over u != 0)."""
    m = nbr.shape[1]
    amax = 0.0
    rmax = 0.0
    for i in range(u.shape[0]):
        s = 0.0
        for j in range(m):
            q = nbr[i, j]
            if q < 0:
                s += outside
            else:
                s += u[q]
        r = abs(coef[i] * s + src[i] - u[i])
        if r > amax:
            amax = r
        au = abs(u[i])
        if au > 0.0:
            rel = r / au
            if rel > rmax:
                rmax = rel
        elif r > 0.0:
            rmax = np.inf
    return amax, rmax


def sweep_order(domain: Domain, kind: str = "lex") -> np.ndarray:
    n = len(domain)
    itype = domain.nbr.dtype
    if kind == "lex":
        return np.arange(n, dtype=itype)
    if kind == "reverse":
        return np.arange(n - 1, -1, -1, dtype=itype)
    if kind == "redblack":
        parity = np.sum(domain.points, axis=1) % 2
        return np.concatenate([np.nonzero(parity == 0)[0], np.nonzero(parity == 1)[0]]).astype(itype)
    raise ValueError(f"unknown sweep order {kind!r}")


def spectral_radius(domain: Domain, coef: np.ndarray) -> float:
    """Largest eigenvalue of the (symmetrizable) Jacobi matrix diag(coef) * adjacency."""
    n = len(domain)
    if n < 3:
        rows, cols = np.nonzero(domain.nbr >= 0)
        a = np.zeros((n, n))
        a[rows, domain.nbr[rows, cols]] = 1.0
        s = np.sqrt(coef)
        return float(np.max(np.abs(np.linalg.eigvalsh(s[:, None] * a * s[None, :])))) if n else 0.0
    s = np.sqrt(coef)
    rows, cols = np.nonzero(domain.nbr >= 0)
    tgt = domain.nbr[rows, cols]
    mat = sp.csr_matrix((s[rows] * s[tgt], (rows, tgt)), shape=(n, n))
    try:
        val = spla.eigsh(mat, k=1, which="LA", tol=1e-10, ncv=min(n - 1, 24),
                         return_eigenvectors=False, maxiter=20000)
        return float(min(max(val[0], 0.0), 1.0))
    except spla.ArpackNoConvergence as exc:  # fall back to the best Ritz value
        if len(exc.eigenvalues):
            return float(min(max(exc.eigenvalues.max(), 0.0), 1.0))
        return 1.0 - 1e-9


# first zero of J_{d/2 - 1}: Dirichlet ground state of the unit d-ball
_BALL_ZERO = {1: math.pi / 2, 2: 2.404825557695773, 3: math.pi, 4: 3.831705970207512,
              5: 4.493409457909064}


def geometric_spectral_radius(domain: Domain) -> float:
    """Upper estimate of the Jacobi spectral radius from the circumscribed ball.

    Killing only lowers the true radius, so the resulting omega errs on the
    over-relaxed side, where SOR still converges at rate omega - 1.
    """
    d = domain.d
    if d == 1:
        n = len(domain)
        return math.cos(math.pi / (n + 1))
    reff = float(np.sqrt(np.max(np.sum(domain.points.astype(float) ** 2, axis=1)))) + 1.0
    return max(0.0, 1.0 - _BALL_ZERO[d] ** 2 / (2 * d * reff * reff))


def optimal_omega(rho: float) -> float:
    rho = min(max(rho, 0.0), 1.0 - 1e-16)
    return 2.0 / (1.0 + math.sqrt(1.0 - rho * rho))


def relax(domain: Domain, coef: np.ndarray, src: np.ndarray, outside: float, *,
          u0: np.ndarray | None = None, tol: float = 1e-13, rtol: float | None = None,
          omega: float | None = None, order: str = "lex", max_sweeps: int = 10**6,
          check_every: int = 25) -> tuple[np.ndarray, float, float, int, float]:
    """Solve u = coef * (sum of neighbours) + src with u = ``outside`` off D.

    Returns (u, abs_residual, rel_residual, sweeps, omega).
    """
    n = len(domain)
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    src = np.ascontiguousarray(src, dtype=np.float64)
    u = np.zeros(n) if u0 is None else np.array(u0, dtype=np.float64)
    if omega is None or omega == "geometric":
        omega = optimal_omega(geometric_spectral_radius(domain))
    elif omega == "eig":
        omega = optimal_omega(spectral_radius(domain, coef))
    if not 1.0 <= omega < 2.0:
        raise ValueError("omega must lie in [1, 2)")
    idx = sweep_order(domain, order)
    nbr = domain.nbr
    sweeps = 0
    ares, rres = _residual(u, nbr, coef, src, outside)
    # over-relaxed phase: absolute residual
    while ares > tol:
        if sweeps >= max_sweeps:
            raise SolverError(f"no convergence after {sweeps} sweeps: residual {ares:.3e} "
                              f"(relative {rres:.3e})", ares, sweeps)
        for _ in range(check_every):
            _sor_sweep(u, nbr, coef, src, outside, idx, omega)
        sweeps += check_every
        ares, rres = _residual(u, nbr, coef, src, outside)
        if not np.isfinite(ares):
            raise SolverError("relaxation diverged", ares, sweeps)
    # plain Gauss-Seidel polish: over-relaxation leaves an absolute rounding floor
    # that swamps tiny values; unrelaxed sweeps remove it
    best, stall = rres, 0
    while rtol is not None and rres > rtol:
        if sweeps >= max_sweeps or stall >= 20:
            raise SolverError(f"relative residual stuck at {rres:.3e} after {sweeps} sweeps",
                              ares, sweeps)
        for _ in range(check_every):
            _sor_sweep(u, nbr, coef, src, outside, idx, 1.0)
        sweeps += check_every
        ares, rres = _residual(u, nbr, coef, src, outside)
        if rres < 0.9 * best:
            best, stall = rres, 0
        else:
            stall += 1
    return u, float(ares), float(rres), sweeps, float(omega)


# ---------------------------------------------------------------------------
# escape probabilities

@dataclass
class SurvivalSolution:
    """u(x) = P_x[exit the domain before death] on a finite domain."""
    domain: Domain
    values: np.ndarray
    killing: KillingField
    residual: float
    rel_residual: float
    sweeps: int
    omega: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def points(self):
        return self.domain.points

    @property
    def d(self):
        return self.domain.d

    def value_at(self, x) -> float:
        i = self.domain.index(np.asarray([as_point(x, self.d)]))[0]
        return 1.0 if i < 0 else float(self.values[i])

    def values_at(self, pts) -> np.ndarray:
        idx = self.domain.index(pts)
        return np.where(idx < 0, 1.0, self.values[np.maximum(idx, 0)])

    def harmonic_residual(self) -> float:
        kill = self.killing.evaluate(self.points)
        coef = (1.0 - kill) / (2 * self.d)
        return float(_residual(self.values, self.domain.nbr, coef, np.zeros(len(kill)), 1.0)[0])

    def step_law(self, x) -> dict:
        """Exact law of the first step given escape: Q^k(x, y) u(y) / u(x)."""
        p = as_point(x, self.d)
        ux = self.value_at(p)
        if ux <= 0:
            raise ValueError(f"u({p}) = 0: conditioning on a null event")
        kx = self.killing(p)
        out = {}
        for s in unit_steps(self.d):
            y = tuple(int(a + b) for a, b in zip(p, s))
            out[y] = (1 - kx) / (2 * self.d) * self.value_at(y) / ux
        return out

    def to_csv(self, path) -> None:
        cols = [f"x{i + 1}" for i in range(self.d)] + ["u"]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for p, v in zip(self.points, self.values):
                fh.write(",".join(str(int(c)) for c in p) + f",{v:.17g}\n")

    def save(self, path) -> None:
        np.savez_compressed(path, points=self.points, values=self.values,
                            residual=self.residual, rel_residual=self.rel_residual,
                            sweeps=self.sweeps, omega=self.omega,
                            meta=json.dumps(self.meta, sort_keys=True))

    @classmethod
    def load(cls, path, killing: KillingField) -> "SurvivalSolution":
        with np.load(path) as z:
            return cls(Domain(z["points"]), z["values"], killing, float(z["residual"]),
                       float(z["rel_residual"]), int(z["sweeps"]), float(z["omega"]),
                       json.loads(str(z["meta"])))


def solve_fingerprint(k: KillingField, exhaustion: Exhaustion, R, d: int, tol: float,
                      rtol: float | None) -> str:
    blob = json.dumps({"k": k.describe(), "ex": exhaustion.describe(), "R": R, "d": d,
                       "tol": tol, "rtol": rtol}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


def solve_on_domain(k: KillingField, points, *, tol: float = 1e-13, rtol: float | None = 1e-12,
                    omega: float | None = None, order: str = "lex", max_sweeps: int = 10**6,
                    method: str = "sor", u0=None) -> SurvivalSolution:
    dom = points if isinstance(points, Domain) else Domain(points)
    kill = k.evaluate(dom.points)
    if np.any((kill < 0) | (kill > 1)):
        raise ValueError("killing values outside [0, 1]")
    coef = (1.0 - kill) / (2 * dom.d)
    src = np.zeros(len(dom))
    if method == "direct":
        inner, exit_, _ = dom.transition(kill)
        rhs = np.asarray(exit_.sum(axis=1)).ravel()
        u = spla.spsolve((sp.identity(len(dom), format="csc") - inner.tocsc()), rhs)
        ares, rres = _residual(u, dom.nbr, coef, src, 1.0)
        sweeps, om = 0, 0.0
    elif method == "sor":
        u, ares, rres, sweeps, om = relax(dom, coef, src, 1.0, u0=u0, tol=tol, rtol=rtol,
                                          omega=omega, order=order, max_sweeps=max_sweeps)
    else:
        raise ValueError(f"unknown method {method!r}")
    np.clip(u, 0.0, 1.0, out=u)
    u[kill >= 1.0] = 0.0
    live = u[kill < 1.0]
    if len(live) and live.min() < UNDERFLOW_WARN:
        warnings.warn(f"escape probability {live.min():.3e} below {UNDERFLOW_WARN:g}; "
                      "double precision is near underflow", RuntimeWarning)
    return SurvivalSolution(dom, u, k, float(ares), float(rres), sweeps, om)


def solve_escape(k: KillingField, exhaustion: Exhaustion, R, d: int | None = None, *,
                 tol: float = 1e-13, rtol: float | None = 1e-12, omega: float | None = None,
                 order: str = "lex", max_sweeps: int = 10**6, method: str = "sor",
                 cache_dir=None) -> SurvivalSolution:
    """P_x[leave Lambda_R before dying] for every x in Lambda_R."""
    if d is None:
        d = 1 if exhaustion.describe()["kind"] == "segment" else None
    if d is None:
        raise ValueError("dimension d is required for this exhaustion")
    check_dim(d)
    fp = solve_fingerprint(k, exhaustion, R, d, tol, rtol)
    if cache_dir is not None:
        path = Path(cache_dir) / f"solve-{fp}.npz"
        if path.exists():
            sol = SurvivalSolution.load(path, k)
            sol.meta["cache_hit"] = True
            return sol
    pts = exhaustion.domain(R, d)
    if len(pts) == 0:
        raise ValueError(f"Lambda_R is empty at R={R}")
    sol = solve_on_domain(k, pts, tol=tol, rtol=rtol, omega=omega, order=order,
                          max_sweeps=max_sweeps, method=method)
    sol.meta.update({"R": R, "d": d, "exhaustion": exhaustion.describe(),
                     "killing": k.describe(), "fingerprint": fp, "cache_hit": False})
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        sol.save(Path(cache_dir) / f"solve-{fp}.npz")
    return sol


# ---------------------------------------------------------------------------
# exit measures

@dataclass
class ExitMeasure:
    start: tuple
    weights: dict
    death_mass: float
    leaked_mass: float
    steps: int

    def total(self) -> float:
        return sum(self.weights.values()) + self.death_mass + self.leaked_mass


def exit_measure(k: KillingField, D, v, tol: float = 1e-12, max_steps: int = 10**7) -> ExitMeasure:
    """Killed harmonic measure of D seen from v, by forward mass propagation."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    dom = D if isinstance(D, Domain) else Domain(np.asarray(D))
    p = as_point(v, dom.d)
    i0 = dom.index(np.asarray([p]))[0]
    if i0 < 0:
        raise ValueError(f"start {p} is not in D")
    kill = k.evaluate(dom.points)
    inner, exit_, bnd = dom.transition(kill)
    inner_t, exit_t = inner.T.tocsr(), exit_.T.tocsr()
    mass = np.zeros(len(dom))
    mass[i0] = 1.0
    hit = np.zeros(len(bnd))
    death = 0.0
    steps = 0
    while mass.sum() >= tol:
        if steps >= max_steps:
            break
        death += float(kill @ mass)
        hit += exit_t @ mass
        mass = inner_t @ mass
        steps += 1
    weights = {tuple(int(c) for c in b): float(w) for b, w in zip(bnd, hit) if w > 0}
    return ExitMeasure(p, weights, death, float(mass.sum()), steps)


# ---------------------------------------------------------------------------
# path-splitting decomposition

def _forward_green(dom: Domain, kill: np.ndarray, init: np.ndarray) -> np.ndarray:
    """Expected visits g(y) = sum_n (init Q^n)(y) of the walk killed on leaving D."""
    inner, _, _ = dom.transition(kill)
    mat = (sp.identity(len(dom), format="csc") - inner.T.tocsc())
    return spla.spsolve(mat, init)


def _last_exit_mass(dom: Domain, kill: np.ndarray, visits: np.ndarray, target: Domain,
                    source_mask: np.ndarray) -> np.ndarray:
    """Mass carried from points of D flagged by ``source_mask`` into points of ``target``
    that are outside the source set, for the walk with expected visits ``visits``."""
    d = dom.d
    out = np.zeros(len(target))
    steps = unit_steps(d)
    coef = (1.0 - kill) / (2 * d)
    src_idx = np.nonzero(source_mask & (visits != 0))[0]
    for j, s in enumerate(steps):
        nxt = dom.points[src_idx] + s
        tix = target.index(nxt)
        ok = tix >= 0
        np.add.at(out, tix[ok], visits[src_idx[ok]] * coef[src_idx[ok]])
    return out


def _inside(points: np.ndarray, r: float) -> np.ndarray:
    return np.sum(np.asarray(points, dtype=np.float64) ** 2, axis=1) <= r * r + 1e-9


def _escape_direct(k: KillingField, dom: Domain, exit_value_mask=None) -> np.ndarray:
    """Backward solve: probability of leaving ``dom`` through outside points flagged
    ``True`` by ``exit_value_mask`` (callable on boundary points) before death."""
    kill = k.evaluate(dom.points)
    inner, exit_, bnd = dom.transition(kill)
    good = np.ones(len(bnd)) if exit_value_mask is None else exit_value_mask(bnd).astype(float)
    rhs = exit_ @ good
    return spla.spsolve(sp.identity(len(dom), format="csc") - inner.tocsc(), rhs)


def decomposition_check(k: KillingField, exhaustion: Exhaustion, R, radii, d: int,
                        points=None) -> float:
    """Recompose P_x[escape] by splitting paths at balls and compare with solve_escape.

    Two radii (r1, r2): first exit of B(r1), last exit of B(r2) inside Lambda_R,
    then escape from Lambda_R avoiding B(r2).  Four radii (r0, r1, r2, r3):
    last exit of B(r0) before leaving B(r3), first exit of B(r1) avoiding B(r0),
    last exit of B(r2) avoiding B(r0), first exit of B(r3) avoiding B(r2), then
    the escape probability from the exit point.  Every factor is computed by a
    sparse direct solve; the reference comes from the relaxation solver.
    """
    radii = tuple(float(r) for r in radii)
    if any(b <= a + 1 for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must increase by more than 1")
    lam = Domain(exhaustion.domain(R, d))
    big = ball_points(radii[-1] + 1.5, d)
    if np.any(lam.index(big) < 0):
        raise ValueError("Lambda_R must contain a neighbourhood of the largest ball")
    ref = solve_escape(k, exhaustion, R, d, tol=1e-14, rtol=1e-12)
    inner_r = radii[0] if len(radii) == 4 else radii[0]
    if points is None:
        points = [p for p in ball_points(inner_r, d) if k(p) < 1.0]
    worst = 0.0
    for x in points:
        x = as_point(x, d)
        if len(radii) == 2:
            val = _decompose_two(k, lam, x, *radii)
        elif len(radii) == 4:
            val = _decompose_four(k, lam, x, *radii)
        else:
            raise ValueError("radii must have length 2 or 4")
        worst = max(worst, abs(val - ref.value_at(x)))
    return worst


def _decompose_two(k, lam: Domain, x, r1, r2):
    d = lam.d
    if np.sum(np.square(x)) > r1 * r1:
        raise ValueError("test point must lie in B(r1)")
    b1 = Domain(ball_points(r1, d))
    em = exit_measure(k, b1, x, tol=1e-17)
    init = np.zeros(len(lam))
    for w, m in em.weights.items():
        init[lam.index(np.asarray([w]))[0]] += m
    kill = k.evaluate(lam.points)
    visits = _forward_green(lam, kill, init)
    ann = Domain(lam.points[~_inside(lam.points, r2)])
    carried = _last_exit_mass(lam, kill, visits, ann, _inside(lam.points, r2))
    # escape from the annulus: outside points of Lambda_R count, points of B(r2) do not
    esc = _escape_direct(k, ann, lambda b: ~_inside(b, r2))
    return float(carried @ esc)


def _decompose_four(k, lam: Domain, x, r0, r1, r2, r3):
    d = lam.d
    if np.sum(np.square(x)) > r0 * r0:
        raise ValueError("test point must lie in B(r0)")
    b3 = Domain(ball_points(r3, d))
    kill3 = k.evaluate(b3.points)
    init = np.zeros(len(b3))
    init[b3.index(np.asarray([x]))[0]] = 1.0
    visits = _forward_green(b3, kill3, init)
    a1 = Domain(b3.points[~_inside(b3.points, r0) & _inside(b3.points, r1)])
    m1 = _last_exit_mass(b3, kill3, visits, a1, _inside(b3.points, r0))
    # first exit of B(r1) avoiding B(r0)
    kill_a1 = k.evaluate(a1.points)
    v1 = _forward_green(a1, kill_a1, m1)
    a3 = Domain(b3.points[~_inside(b3.points, r0)])
    shell1 = ~_inside(a3.points, r1)
    m2 = _last_exit_mass(a1, kill_a1, v1, a3, np.ones(len(a1), bool))
    m2[~shell1] = 0.0  # moves that stay inside B(r1) are not exits
    # last exit of B(r2) before leaving B(r3), avoiding B(r0)
    kill_a3 = k.evaluate(a3.points)
    v2 = _forward_green(a3, kill_a3, m2)
    a23 = Domain(b3.points[~_inside(b3.points, r2)])
    m3 = _last_exit_mass(a3, kill_a3, v2, a23, _inside(a3.points, r2))
    # first exit of B(r3) avoiding B(r2): land on points outside B(r3)
    kill_23 = k.evaluate(a23.points)
    v3 = _forward_green(a23, kill_23, m3)
    outer = Domain(lam.points[~_inside(lam.points, r3)])
    m4 = _last_exit_mass(a23, kill_23, v3, outer, np.ones(len(a23), bool))
    esc = _escape_direct(k, lam)
    esc_outer = esc[lam.index(outer.points)]
    return float(m4 @ esc_outer)


# ---------------------------------------------------------------------------
# potential kernel and hitting probabilities

def _pk_integrand(theta, m, n):
    # after integrating out the second angle in closed form
    half = math.sin(0.5 * theta)
    one_minus_cos = 2.0 * half * half
    root = math.sqrt(one_minus_cos * (2.0 + one_minus_cos))  # sqrt(s^2 - 1), s = 2 - cos
    log_rho = math.log1p(one_minus_cos - root)
    rho_n = math.exp(n * log_rho)
    sm = math.sin(0.5 * m * theta)
    num = -math.expm1(n * log_rho) + 2.0 * sm * sm * rho_n
    return 2.0 * num / root


@lru_cache(maxsize=None)
def _potential_kernel_canon(m: int, n: int) -> float:
    if m == 0 and n == 0:
        return 0.0
    pts = sorted({min(math.pi, c / max(n, 1)) for c in (0.5, 2.0, 8.0, 32.0)} - {math.pi})
    val, err = integrate.quad(_pk_integrand, 0.0, math.pi, args=(m, n), epsabs=1e-14,
                              epsrel=1e-13, limit=2000, points=pts)
    return val / math.pi


def potential_kernel(x) -> float:
    """Potential kernel a(x) of the planar simple random walk; a(0) = 0, a(e) = 1.

    The double integral over [-pi, pi]^2 is reduced to one dimension by doing
    the inner angular integral in closed form; the remaining integrand has
    only a kink at 0 and is handled by adaptive quadrature.
    """
    p = as_point(x)
    if len(p) != 2:
        raise ValueError("the potential kernel is defined here for d = 2 only")
    a, b = sorted((abs(p[0]), abs(p[1])))
    return _potential_kernel_canon(a, b)


def potential_kernel_constant(radii=(50, 70, 100, 140, 200)) -> dict:
    """Fit of a(x) - (2/pi) ln|x| at axis and diagonal-ish points of given radii."""
    vals = []
    for r in radii:
        for pt in ((r, 0), (int(round(r / math.sqrt(2))), int(round(r / math.sqrt(2)))),
                   (int(round(0.8 * r)), int(round(0.6 * r)))):
            vals.append(potential_kernel(pt) - 2 / math.pi * math.log(math.hypot(*pt)))
    vals = np.asarray(vals)
    return {"mean": float(vals.mean()), "min": float(vals.min()), "max": float(vals.max()),
            "values": vals}


def hitting_before_zero(x, y, companion: bool = False) -> float:
    """P_x[hit y before 0] for the planar walk; with ``companion`` P_0[hit y before returning]."""
    px, py = as_point(x), as_point(y)
    if len(px) != 2 or len(py) != 2:
        raise ValueError("hitting probabilities are planar")
    if py == (0, 0) or (px == (0, 0) and not companion):
        raise ValueError("x and y must differ from the origin")
    ay = potential_kernel(py)
    if companion:
        return 1.0 / (2.0 * ay)
    diff = (px[0] - py[0], px[1] - py[1])
    return (potential_kernel(px) + ay - potential_kernel(diff)) / (2.0 * ay)


DX = np.array([1, -1, 0, 0], dtype=np.int64)
DY = np.array([0, 0, 1, -1], dtype=np.int64)


@numba.njit(cache=True)
def _hitting_mc(x0, x1, y0, y1, n, closure_r2, seed):
    """Walk from x until it hits y, hits 0 or leaves the closure disc.

    Returns the number of hits of y and the exit points of walks that left.
    """
    np.random.seed(seed)
    hits = 0
    nexit = 0
    ex = np.empty(n, dtype=np.int64)
    ey = np.empty(n, dtype=np.int64)
    bits = 0
    nbits = 0
    for _ in range(n):
        a, b = x0, x1
        while True:
            if a == y0 and b == y1:
                hits += 1
                break
            if a == 0 and b == 0:
                break
            if a * a + b * b > closure_r2:
                ex[nexit] = a
                ey[nexit] = b
                nexit += 1
                break
            if nbits == 0:
                bits = np.random.randint(0, 1 << 62)
                nbits = 31
            r = bits & 3
            bits >>= 2
            nbits -= 1
            a += DX[r]
            b += DY[r]
    return hits, ex[:nexit], ey[:nexit]


def hitting_before_zero_mc(x, y, samples: int, stream: RandomStream,
                           closure_radius: float = 60.0) -> Estimate:
    """Monte Carlo estimate of P_x[hit y before 0].

    The planar walk needs an infinite mean time to hit a point, so walks that
    leave the disc of radius ``closure_radius`` are closed off with the value
    1/2 + (ln|z| - ln|z - y|) / (pi a(y)): the two-point harmonic measure from
    far away is 1/2 by point symmetry, plus the leading dipole correction.
    The neglected terms are O(|z|^-2).
    """
    px, py = as_point(x), as_point(y)
    hits, ex, ey = _hitting_mc(px[0], px[1], py[0], py[1], int(samples),
                               float(closure_radius) ** 2, stream.kernel_seed())
    ay = potential_kernel(py)
    zx, zy = ex.astype(float), ey.astype(float)
    closure = 0.5 + (0.5 * np.log(zx * zx + zy * zy)
                     - 0.5 * np.log((zx - py[0]) ** 2 + (zy - py[1]) ** 2)) / (math.pi * ay)
    vals = np.zeros(int(samples))
    vals[:hits] = 1.0
    vals[hits:hits + len(closure)] = closure
    return Estimate.from_samples(vals, stream, closed=len(closure))


# ---------------------------------------------------------------------------
# Green function

@lru_cache(maxsize=8)
def _green_solution(d: int, box: float) -> tuple[Domain, np.ndarray]:
    dom = Domain(ball_points(box, d))
    coef = np.full(len(dom), 1.0 / (2 * d))
    src = np.zeros(len(dom))
    src[dom.index(np.zeros((1, d), dtype=np.int64))[0]] = 1.0
    u, _, _, _, _ = relax(dom, coef, src, 0.0, tol=1e-12, rtol=None)
    return dom, u


def green_function(x, d: int, box: float = 64) -> float:
    """Green function g(0, x) of the walk killed on leaving B(box)."""
    if d < 3:
        raise ValueError("the Green function needs a transient dimension d >= 3")
    p = as_point(x, d)
    if math.sqrt(sum(c * c for c in p)) >= box:
        raise ValueError("|x| must be smaller than the box radius")
    dom, u = _green_solution(d, float(box))
    return float(u[dom.index(np.asarray([p]))[0]])


def green_boundary_report(x, d: int, box: float = 64) -> dict:
    """Values at ``box`` and ``box/2`` and the extrapolation in box^(2-d)."""
    g1 = green_function(x, d, box / 2)
    g2 = green_function(x, d, box)
    w1, w2 = (box / 2) ** (d - 2), box ** (d - 2)
    extrap = (g2 * w2 - g1 * w1) / (w2 - w1)
    return {"box": box, "value": g2, "half_box_value": g1, "sensitivity": g2 - g1,
            "extrapolated": extrap}


def green_constant_fit(d: int, box: float = 64, radii=(8, 10, 12, 14, 16)) -> dict:
    """g(x) |x|^(d-2) along the first axis (boundary-extrapolated)."""
    vals = []
    for r in radii:
        pt = [0] * d
        pt[0] = r
        vals.append(green_boundary_report(pt, d, box)["extrapolated"] * r ** (d - 2))
    vals = np.asarray(vals)
    return {"radii": list(radii), "scaled": vals, "constant": float(vals[-1])}


def green_oracle(x, d: int) -> float:
    """Free-space g(0, x) = int_0^inf prod_i e^{-t/d} I_{x_i}(t/d) dt (continuous-time walk)."""
    p = as_point(x, d)

    def f(t):
        return float(np.prod([special.ive(abs(c), t / d) for c in p]))
    val = 0.0
    edges = [0, 1, 10, 100, 1e3, 1e4, 1e5, 1e6]
    for a, b in zip(edges, edges[1:]):
        val += integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-12, limit=500)[0]
    # tail: prod ive ~ (d / (2 pi t))^(d/2)
    tail = (d / (2 * math.pi)) ** (d / 2) * edges[-1] ** (1 - d / 2) / (d / 2 - 1)
    return val + tail


# ---------------------------------------------------------------------------
# exit-time tail of the free walk

@numba.njit(cache=True)
def _exit_tail(d, r2, nsteps, samples, seed):
    np.random.seed(seed)
    survive = 0
    pos = np.zeros(d, dtype=np.int64)
    for _ in range(samples):
        for i in range(d):
            pos[i] = 0
        ok = True
        for _t in range(nsteps):
            j = np.random.randint(2 * d)
            pos[j // 2] += 1 if j % 2 == 0 else -1
            s = 0
            for i in range(d):
                s += pos[i] * pos[i]
            if s >= r2:
                ok = False
                break
        if ok:
            survive += 1
    return survive


def srw_exit_tail(r: float, n: int, samples: int, d: int = 2,
                  stream: RandomStream | None = None) -> Estimate:
    """Estimate P_0[the walk stays strictly inside B(r) for its first n steps]."""
    if r < 1:
        raise ValueError("r must be >= 1")
    stream = stream or RandomStream()
    if n == 0:
        return Estimate(1.0, 0.0, int(samples), stream.seed, stream.stream_id)
    hits = _exit_tail(check_dim(d), float(r) ** 2, int(n), int(samples), stream.kernel_seed())
    return Estimate.from_counts(hits, int(samples), stream)


def exit_tail_exact_1d(r: int, n: int) -> float:
    """P_0[|S_k| < r for k <= n] for the 1-D walk, by dynamic programming."""
    width = 2 * r - 1
    prob = np.zeros(width)
    prob[r - 1] = 1.0
    for _ in range(n):
        nxt = np.zeros(width)
        nxt[1:] += 0.5 * prob[:-1]
        nxt[:-1] += 0.5 * prob[1:]
        prob = nxt
    return float(prob.sum())
