"""Acceptance gate: one test per criterion at the stated tolerance and runtime.

The conftest prints a PASS/FAIL line per criterion at the end of the run.
Monte Carlo parts use fixed seeds, so every run reproduces the same numbers.
"""
import math
import time

import numpy as np
import pytest

from krwlab import cli
from krwlab.core import (NOT_TRAPPED, TRAPPED, Ball, BallPlusHalfSpace, Constant, IndicatorSet,
                         LogCorrected, PowerLaw, RandomStream, Segment1D, Zero, trapping_classifier)
from krwlab.harmonic import decomposition_check, potential_kernel, potential_kernel_constant, solve_escape
from krwlab.kbm import (annulus_survival, directional_escape, feynman_kac_check, resolved_config,
                        simulate_until, survival_estimate)
from krwlab.ratio import counterexample_experiment, ratio_curve
from krwlab.snake import (OffspringLaw, estimate_k, krw_escape_mc, snake_escape_probability,
                          tabulate_k)

import oracles

LIMIT = 4 - 8 / math.pi
GEO = OffspringLaw.geometric()
criterion = pytest.mark.criterion


class Clock:
    def __init__(self, limit):
        self.limit, self.t0 = limit, time.perf_counter()

    def check(self):
        spent = time.perf_counter() - self.t0
        assert spent < self.limit, f"took {spent:.0f} s, limit {self.limit} s"


@criterion(1, "gambler's ruin first step -> 7/12")
def test_ac01_gamblers_ruin():
    clock = Clock(1.0)
    vals = []
    for R in (50, 100, 200):
        sol = solve_escape(IndicatorSet(((0,),), 0.5), Segment1D(2, 1), R, 1)
        vals.append(sol.step_law((0,))[(1,)])
    clock.check()
    errs = [abs(v - 7 / 12) for v in vals]
    print("first step right:", vals)
    assert errs[-1] <= 5e-3
    assert errs[0] > errs[1] > errs[2]


@criterion(2, "potential kernel values and additive constant")
def test_ac02_potential_kernel():
    clock = Clock(60.0)
    table = oracles.potential_kernel_table(2)
    assert abs(potential_kernel((1, 0)) - 1.0) <= 1e-8
    for pt, exact in (((1, 1), 4 / math.pi), ((2, 0), LIMIT)):
        assert abs(table[pt] - exact) <= 1e-12          # the oracle itself
        assert abs(potential_kernel(pt) - table[pt]) <= 1e-8
    fit = potential_kernel_constant()
    clock.check()
    spread = np.max(np.abs(fit["values"] - fit["mean"]))
    print(f"constant {fit['mean']:.6f}, max deviation {spread:.2e}")
    assert spread <= 0.01


@criterion(3, "exhaustion independence of the ratio at R = 512")
def test_ac03_exhaustion_independence():
    clock = Clock(600.0)
    ball = ratio_curve(IndicatorSet(((0, 0),), 1.0), Ball(), (2, 0), (1, 0), [512]).ratios[-1]
    half = ratio_curve(IndicatorSet(((0, 0),), 1.0), BallPlusHalfSpace(0, -1, 2.0), (2, 0), (1, 0),
                       [512]).ratios[-1]
    clock.check()
    print(f"ball {ball:.10f}, ball+half-space {half:.10f}, limit {LIMIT:.10f}")
    assert abs(ball - LIMIT) / LIMIT <= 0.02
    assert abs(half - LIMIT) / LIMIT <= 0.02
    assert abs(ball - half) / LIMIT <= 0.01


@criterion(4, "counterexample reflection identity and directional gap")
def test_ac04_counterexample():
    clock = Clock(1800.0)
    rep = counterexample_experiment(alpha=1.6, r=16, R_list=(32, 64, 128))
    clock.check()
    for row in rep.rows:
        print(f"R={row['R']}: rho+={row['rho_plus']:.6e} rho-={row['rho_minus']:.6e} "
              f"residual={row['symmetry_residual']:.1e}")
        assert row["symmetry_residual"] <= 1e-9
    assert rep.directional_gap() >= 4


@criterion(5, "solver residual, monotonicity and decomposition")
def test_ac05_solver_correctness():
    solves = [
        solve_escape(IndicatorSet(((0,),), 0.5), Segment1D(2, 1), 200, 1),
        solve_escape(IndicatorSet(((0, 0),), 1.0), Ball(), 64, 2),
        solve_escape(IndicatorSet(((0, 0),), 1.0), BallPlusHalfSpace(0, -1, 2.0), 64, 2),
        solve_escape(PowerLaw(1.6), BallPlusHalfSpace(0, -1, 8.0), 32, 2),
        solve_escape(PowerLaw(1.6), BallPlusHalfSpace(0, 1, 8.0), 32, 2),
        solve_escape(PowerLaw(3.0), Ball(), 12, 3),
    ]
    worst = max(s.harmonic_residual() for s in solves)
    print(f"largest interior residual {worst:.2e}")
    assert worst <= 1e-12
    # monotone in the killing, exactly
    for lo, hi in ((0.05, 0.1), (0.1, 0.5), (0.5, 1.0)):
        a = solve_escape(Constant(lo), Ball(), 10, 2)
        b = solve_escape(Constant(hi), Ball(), 10, 2)
        assert np.all(b.values <= a.values)
    # nested domains, exactly
    k = PowerLaw(1.2)
    prev = solve_escape(k, Ball(), 4, 2)
    for R in (6, 9, 13):
        cur = solve_escape(k, Ball(), R, 2)
        assert np.all(cur.values_at(prev.points) <= prev.values)
        prev = cur
    d3 = decomposition_check(PowerLaw(1.5), Ball(), 9, (2, 5), 3, points=[(0, 0, 1), (1, 1, 0)])
    d2 = decomposition_check(PowerLaw(1.2), Ball(), 14, (2, 4, 7, 10), 2, points=[(1, 0), (1, 1)])
    print(f"decomposition defects: d=3 {d3:.1e}, d=2 {d2:.1e}")
    assert d3 <= 1e-8 and d2 <= 1e-8


@criterion(6, "hitting formula vs 10^6-walk Monte Carlo on 10 pairs")
def test_ac06_hitting(tmp_path):
    clock = Clock(300.0)
    cfg = cli.resolve("hitting", {"pairs": 10, "radius": 20, "samples": 10**6, "out": str(tmp_path)})
    header, rows, _, summary = cli.run_hitting(cfg, RandomStream(cfg["seed"], 0))
    clock.check()
    for x1, x2, y1, y2, exact, est, se, n in rows:
        z = abs(est - exact) / se
        print(f"x=({x1},{x2}) y=({y1},{y2}) closed {exact:.5f} mc {est:.5f} z={z:.2f}")
        assert n == 10**6
        assert z <= 3


@criterion(7, "snake escape equals killed walk with estimated killing (d=4, R=32)")
def test_ac07_snake_identity():
    clock = Clock(1200.0)
    x = (4, 0, 0, 0)
    # table noise dominates the killed-walk error bar, so the table gets most of the budget
    table = tabulate_k(GEO, 4, 33, 15 * 10**6, exact_radius=6.0, min_per_cell=300000, node_cap=1000,
                       stream=RandomStream(70), cap_policy="miss")
    snake = snake_escape_probability(x, GEO, 4, Ball(), 32, 10**5, node_cap=1000,
                                     stream=RandomStream(71), cap_policy="miss")
    krw = krw_escape_mc(table, x, Ball(), 32, 10**5, stream=RandomStream(72))
    clock.check()
    z = abs(snake.mean - krw.mean) / math.hypot(snake.stderr, krw.stderr)
    print(f"snake {snake.mean:.5f} +- {snake.stderr:.5f}, killed walk {krw.mean:.5f} +- {krw.stderr:.5f},"
          f" z={z:.2f}")
    assert snake.n == krw.n == 10**5
    assert z <= 3


@criterion(8, "d=4 hit probability times |x|^2 ln|x| stays in a band")
def test_ac08_hit_probability_band():
    vals = []
    for r in (8, 16, 32):
        e = estimate_k((r, 0, 0, 0), GEO, 4, 10**6, stream=RandomStream(80, r))
        scaled = e.mean * r * r * math.log(r)
        vals.append(scaled)
        print(f"|x|={r}: k={e.mean:.3e} +- {e.stderr:.1e}, scaled {scaled:.4f}, capped {e.info['capped']}")
    assert max(vals) / min(vals) <= 3


@criterion(9, "Brownian killing: two estimators, exponential law, chained product")
def test_ac09_brownian_killing():
    cfg = resolved_config(1.6, 4, seed=90)
    fk = feynman_kac_check(cfg, (4.0, 0.0), 8, 10**5)
    print(f"death {fk['death'].mean:.5f} +- {fk['death'].stderr:.5f}, "
          f"weighted {fk['weighted'].mean:.5f} +- {fk['weighted'].stderr:.5f}")
    assert fk["z"] <= 3
    const = simulate_until(resolved_config(1.6, 10, killing=Constant(0.5), dt=0.01), (10.0, 0.0), 10**5,
                           time_cap=2.0, stream=RandomStream(91))
    est = survival_estimate(const)
    print(f"constant killing {est.mean:.5f} +- {est.stderr:.5f} vs {math.exp(-1):.5f}")
    assert est.zscore(math.exp(-1.0)) <= 3
    bcfg = resolved_config(1.6, 4, bridge=True, seed=92)
    direct = annulus_survival(bcfg, 4, 4.0, 2 * 10**5, "direct")
    chained = annulus_survival(bcfg, 4, 4.0, 2 * 10**5, "chained")
    print(f"direct {direct.mean:.5f} +- {direct.stderr:.5f}, chained {chained.mean:.5f} +- {chained.stderr:.5f}")
    assert direct.zscore(chained) <= 3


@criterion(10, "Brownian directional asymmetry and mirror symmetry")
def test_ac10_directional():
    clock = Clock(1800.0)
    cfg = resolved_config(1.0, 8, seed=100)
    n = 4 * 10**6
    plus = directional_escape(cfg, 8, 3, "plus", n, splitting=True, stream=RandomStream(101))
    minus = directional_escape(cfg, 8, 3, "minus", 2 * n, splitting=True, stream=RandomStream(102))
    mirror = directional_escape(cfg, 8, 3, "minus", n, start=(-8.0, 0.0), splitting=True,
                                stream=RandomStream(103))
    clock.check()
    print(f"plus {plus.mean:.3e} +- {plus.stderr:.1e}, minus {minus.mean:.3e} +- {minus.stderr:.1e}, "
          f"mirrored plus {mirror.mean:.3e} +- {mirror.stderr:.1e}")
    assert plus.mean / minus.mean >= 10
    assert plus.zscore(mirror) <= 3


@criterion(11, "trapping classifier verdicts")
def test_ac11_trapping():
    assert trapping_classifier(PowerLaw(3.0), 3) == NOT_TRAPPED
    assert trapping_classifier(LogCorrected(1.0), 4) == TRAPPED
    for k in (PowerLaw(1.0), PowerLaw(3.0), Constant(1e-6), IndicatorSet(((5, 5),), 1e-3)):
        assert trapping_classifier(k, 2) == TRAPPED
    assert trapping_classifier(Zero(), 2) == NOT_TRAPPED
