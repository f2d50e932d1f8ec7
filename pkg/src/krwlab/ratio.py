"""Ratio limits across exhaustions, the directional counterexample, and Doob walks.

For a killing field k and an exhaustion Lambda_R, the ratio
u_R(x) / u_R(x0) of escape probabilities converges as R grows to a massive
harmonic function (normalised at x0).  The Doob transform of the killed walk
by that function is the walk conditioned to survive forever.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import report
from .core import (Ball, BallPlusHalfSpace, Exhaustion, KillingField, PowerLaw, RandomStream,
                   as_point, in_escape_set, norm, unit_steps)
from .harmonic import SurvivalSolution, solve_escape

log = logging.getLogger(__name__)

TINY = 1e-290
MIN_ROW_MASS = 1e-12


class UnderflowError(ArithmeticError):
    """An escape probability used as a divisor fell below double-precision safety."""

    def __init__(self, point, value, R=None):
        self.point, self.value, self.R = point, value, R
        where = f" at R={R}" if R is not None else ""
        super().__init__(f"escape probability at {point} is {value:.3e}{where}, below {TINY:g}")


class DegenerateExperiment(RuntimeError):
    """Raised when every escape probability vanishes (the walk cannot escape)."""


def _guard(value, point, R=None) -> float:
    if not value >= TINY:
        raise UnderflowError(point, value, R)
    return value


# ---------------------------------------------------------------------------
# ratio curves

@dataclass
class RatioCurve:
    x: tuple
    x0: tuple
    exhaustion: dict
    radii: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    info: list = field(default_factory=list)

    @property
    def points(self) -> list[tuple]:
        return list(zip(self.radii, self.ratios))

    def log_gaps(self) -> np.ndarray:
        """|log ratio(R_i) - log ratio(R_{i-1})| for consecutive radii."""
        r = np.asarray(self.ratios, dtype=float)
        if len(r) < 2:
            return np.zeros(0)
        return np.abs(np.diff(np.log(r)))

    @property
    def cauchy_gap(self) -> float:
        # max over the tail (second half) of consecutive log-ratio jumps
        g = self.log_gaps()
        if len(g) == 0:
            return float("nan")
        return float(np.max(g[len(g) // 2:]))

    def limit(self, richardson: bool = False) -> tuple[float, float]:
        """Last ratio with the Cauchy gap as an error bar.

        ``richardson`` fits ratio(R) = L + c/R over the last three radii instead;
        there is no known rate, so the fit is a diagnostic only.
        """
        if not self.ratios:
            raise ValueError("empty curve")
        last = float(self.ratios[-1])
        err = last * (math.expm1(self.cauchy_gap) if np.isfinite(self.cauchy_gap) else float("nan"))
        if richardson and len(self.ratios) >= 3:
            R = np.asarray(self.radii[-3:], dtype=float)
            A = np.column_stack([np.ones(3), 1.0 / R])
            coef, *_ = np.linalg.lstsq(A, np.asarray(self.ratios[-3:]), rcond=None)
            return float(coef[0]), abs(float(coef[0]) - last)
        return last, err

    def rows(self):
        gaps = [float("nan")] + list(self.log_gaps())
        return [(R, q, g) for R, q, g in zip(self.radii, self.ratios, gaps)]

    def to_csv(self, path):
        return report.write_csv(path, ["R", "ratio", "gap"], self.rows())

    def to_svg(self, path, seed=None, reference: float | None = None):
        series = {f"u(x)/u(x0), x={self.x}": (self.radii, self.ratios)}
        if reference is not None:
            series["reference"] = (self.radii, [reference] * len(self.radii))
        return report.line_plot(path, series, title="ratio of escape probabilities",
                                xlabel="R", ylabel="ratio", logx=True, seed=seed)


def ratio_from_solution(sol: SurvivalSolution, x, x0, R=None) -> float:
    num = sol.value_at(x)
    den = _guard(sol.value_at(x0), as_point(x0), R)
    if num != 0.0:
        _guard(num, as_point(x), R)
    return num / den


def ratio_curve(k: KillingField, exhaustion: Exhaustion, x, x0, R_list, d: int | None = None, *,
                solver=None, keep_solutions: bool = False, check_escape: bool = True,
                **solve_kw) -> RatioCurve:
    """One exact solve per radius; ratio u_R(x)/u_R(x0) with a Cauchy diagnostic.

    ``solver`` may replace ``solve_escape`` (same signature), e.g. to share a cache.
    """
    x, x0 = as_point(x, d), as_point(x0, d)
    d = len(x)
    if len(x0) != d:
        raise ValueError("x and x0 must have the same dimension")
    R_list = list(R_list)
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValueError("R_list must be strictly increasing")
    if check_escape:
        reach = max(norm(x), norm(x0)) + 4 * d + 4
        for p in (x, x0):
            if not in_escape_set(k, p, reach):
                raise ValueError(f"{p} is not in the escape set")
    solve = solver or solve_escape
    curve = RatioCurve(x, x0, exhaustion.describe())
    for R in R_list:
        t0 = time.perf_counter()
        if x == x0:
            # no solve needed: the ratio is identically one
            curve.radii.append(R)
            curve.ratios.append(1.0)
            curve.info.append({"R": R, "seconds": 0.0})
            continue
        sol = solve(k, exhaustion, R, d, **solve_kw)
        q = ratio_from_solution(sol, x, x0, R)
        curve.radii.append(R)
        curve.ratios.append(q)
        row = {"R": R, "points": len(sol.domain), "sweeps": sol.sweeps,
               "residual": sol.residual, "rel_residual": sol.rel_residual,
               "u_x": sol.value_at(x), "u_x0": sol.value_at(x0),
               "cache_hit": sol.meta.get("cache_hit", False),
               "seconds": time.perf_counter() - t0}
        if keep_solutions:
            row["solution"] = sol
        curve.info.append(row)
        log.info("ratio R=%s: %.12g (%d points, %.1fs)", R, q, len(sol.domain), row["seconds"])
    return curve


# ---------------------------------------------------------------------------
# directional counterexample

def plus_exhaustion(factor: float = 8.0) -> BallPlusHalfSpace:
    """B(R) together with the left half-plane {x_1 <= 0}, truncated at factor * R."""
    return BallPlusHalfSpace(axis=0, sign=-1, factor=factor)


def minus_exhaustion(factor: float = 8.0) -> BallPlusHalfSpace:
    """Mirror image of :func:`plus_exhaustion`: B(R) together with {x_1 >= 0}."""
    return BallPlusHalfSpace(axis=0, sign=1, factor=factor)


@dataclass
class CounterexampleReport:
    alpha: float
    r: int
    rows: list = field(default_factory=list)   # dicts per R
    status: str = "ok"

    header = ["R", "rho_plus", "rho_minus", "symmetry_residual", "factor", "points", "seconds"]

    @property
    def radii(self):
        return [row["R"] for row in self.rows]

    @property
    def rho_plus(self):
        return [row["rho_plus"] for row in self.rows]

    @property
    def rho_minus(self):
        return [row["rho_minus"] for row in self.rows]

    def symmetry_residuals(self):
        return [row["symmetry_residual"] for row in self.rows]

    def directional_gap(self) -> float:
        """rho_minus / rho_plus at the largest radius."""
        last = self.rows[-1]
        return last["rho_minus"] / last["rho_plus"]

    def to_csv(self, path):
        return report.write_csv(path, self.header, [[row[h] for h in self.header] for row in self.rows])

    def to_svg(self, path, seed=None):
        return report.line_plot(path, {"rho_plus": (self.radii, self.rho_plus),
                                       "rho_minus": (self.radii, self.rho_minus)},
                                title=f"directional ratios, alpha={self.alpha}, r={self.r}",
                                xlabel="R", ylabel="u(-r,0)/u(r,0)", logx=True, logy=True, seed=seed)


def _factor_for(schedule, R) -> float:
    if callable(schedule):
        return float(schedule(R))
    if isinstance(schedule, dict):
        return float(schedule[R])
    return float(schedule)


def counterexample_experiment(alpha: float = 1.6, r: int = 16, R_list=(32, 64, 128),
                              truncation=8.0, killing: KillingField | None = None,
                              **solve_kw) -> CounterexampleReport:
    """Directional ratios u(-r,0)/u(r,0) under the two mirrored half-plane exhaustions.

    ``truncation`` is the half-plane cut-off radius as a multiple of R: a number,
    a dict R -> factor, or a callable.  Both curves are solved independently, so
    the reflection identity rho_plus * rho_minus = 1 is a genuine check.
    """
    if r < 2:
        raise ValueError("r must be >= 2")
    if killing is None:
        if alpha == 0:
            from .core import Constant
            killing = Constant(1.0)
        elif not 0 < alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        else:
            killing = PowerLaw(alpha)
    rep = CounterexampleReport(alpha, r)
    a, b = (-r, 0), (r, 0)
    if not (in_escape_set(killing, a, r + 8) and in_escape_set(killing, b, r + 8)):
        rep.status = "degenerate"
        raise DegenerateExperiment(f"no escape possible from (+-{r}, 0): every escape probability is 0")
    for R in R_list:
        if R < r:
            raise ValueError(f"R={R} must be at least r={r}")
        f = _factor_for(truncation, R)
        t0 = time.perf_counter()
        plus = solve_escape(killing, plus_exhaustion(f), R, 2, **solve_kw)
        minus = solve_escape(killing, minus_exhaustion(f), R, 2, **solve_kw)
        if plus.values.max() <= 0 and minus.values.max() <= 0:
            rep.status = "degenerate"
            raise DegenerateExperiment("all escape probabilities vanish")
        rp = _guard(plus.value_at(a), a, R) / _guard(plus.value_at(b), b, R)
        rm = _guard(minus.value_at(a), a, R) / _guard(minus.value_at(b), b, R)
        rep.rows.append({"R": R, "rho_plus": rp, "rho_minus": rm,
                         "symmetry_residual": abs(rp * rm - 1.0), "factor": f,
                         "points": len(plus.domain), "seconds": time.perf_counter() - t0,
                         "rel_residual": max(plus.rel_residual, minus.rel_residual)})
        log.info("counterexample R=%s f=%s: rho+=%.6g rho-=%.6g", R, f, rp, rm)
    return rep


# ---------------------------------------------------------------------------
# Doob-transformed walk

Weight = Callable[[tuple], float]


@dataclass
class ConditionedKernel:
    """P(x, y) = (1 - k(x)) / (2d) * w(y) / w(x) for nearest neighbours y."""
    killing: KillingField
    weight: Weight
    d: int
    normalize: bool = False
    _rows: dict = field(default_factory=dict, repr=False)

    def _w(self, p) -> float:
        v = float(self.weight(p))
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"weight at {p} is {v}; must be finite and nonnegative")
        return v

    def row(self, x) -> dict:
        p = as_point(x, self.d)
        hit = self._rows.get(p)
        if hit is not None:
            return hit
        wx = self._w(p)
        if wx <= 0:
            raise ValueError(f"weight at {p} must be positive to condition from it")
        c = (1.0 - self.killing(p)) / (2 * self.d)
        out = {}
        for s in unit_steps(self.d):
            y = tuple(int(a + b) for a, b in zip(p, s))
            out[y] = c * self._w(y) / wx
        if self.normalize:
            tot = sum(out.values())
            if tot > 0:
                out = {y: v / tot for y, v in out.items()}
        self._rows[p] = out
        return out

    def row_sum(self, x) -> float:
        return float(sum(self.row(x).values()))

    def harmonic_defect(self, x) -> float:
        """1 - row sum of the unnormalised kernel; zero where w is massive harmonic."""
        p = as_point(x, self.d)
        wx = self._w(p)
        c = (1.0 - self.killing(p)) / (2 * self.d)
        return 1.0 - c * sum(self._w(tuple(int(a + b) for a, b in zip(p, s)))
                             for s in unit_steps(self.d)) / wx


def build_conditioned_kernel(k: KillingField, weight: Weight, d: int,
                             normalize: bool = False) -> ConditionedKernel:
    return ConditionedKernel(k, weight, d, normalize)


def solution_weight(sol: SurvivalSolution, x0=None) -> Weight:
    """w(y) = u_R(y) / u_R(x0) read off a finite solve (1 outside the domain)."""
    scale = 1.0 if x0 is None else _guard(sol.value_at(x0), as_point(x0))

    def w(p):
        return sol.value_at(p) / scale
    return w


def exact_step_law(sol: SurvivalSolution, x) -> dict:
    """P[S_1 = y | escape Lambda_R before dying], exact on a finite solve."""
    return sol.step_law(x)


def sample_conditioned_path(kernel: ConditionedKernel, x0, steps: int,
                            stream: RandomStream | None = None, rng=None) -> np.ndarray:
    """(steps+1, d) array of Doob-walk positions; rows are renormalised when sampling."""
    rng = rng if rng is not None else (stream or RandomStream(0)).generator()
    p = as_point(x0, kernel.d)
    path = np.empty((steps + 1, kernel.d), dtype=np.int64)
    path[0] = p
    u = rng.random(steps)
    for t in range(steps):
        row = kernel.row(p)
        tot = sum(row.values())
        if tot < MIN_ROW_MASS:
            raise ValueError(f"row mass {tot:.3e} at {p} is below {MIN_ROW_MASS:g}")
        target = u[t] * tot
        acc = 0.0
        nxt = None
        for y, v in row.items():
            acc += v
            if v > 0:
                nxt = y
            if target < acc and v > 0:
                break
        p = nxt
        path[t + 1] = p
    return path


def step_frequencies(paths) -> dict:
    """Counts of each unit displacement over a collection of paths."""
    counts: dict = {}
    for path in paths:
        inc = np.diff(np.asarray(path), axis=0)
        for row in map(tuple, inc):
            counts[row] = counts.get(row, 0) + 1
    return counts
