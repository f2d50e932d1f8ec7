import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from krwlab.core import (Ball, BallPlusHalfSpace, Constant, IndicatorSet, PowerLaw, RandomStream,
                         Segment1D)
from krwlab.harmonic import potential_kernel, solve_escape
from krwlab.ratio import (DegenerateExperiment, UnderflowError, build_conditioned_kernel,
                          counterexample_experiment, exact_step_law, minus_exhaustion,
                          plus_exhaustion, ratio_curve, sample_conditioned_path, solution_weight,
                          step_frequencies)

POINT_KILL = IndicatorSet(((0, 0),), 1.0)
LIMIT = 4 - 8 / math.pi   # a(2,0) / a(1,0)


def test_ratio_curve_converges_to_potential_kernel_ratio():
    curve = ratio_curve(POINT_KILL, Ball(), (2, 0), (1, 0), [16, 32, 64])
    lim, err = curve.limit()
    assert abs(lim - LIMIT) < 1e-6
    assert curve.cauchy_gap < 1e-4
    assert len(curve.rows()) == 3


def test_ratio_curve_identical_points():
    curve = ratio_curve(POINT_KILL, Ball(), (1, 0), (1, 0), [8, 16])
    assert curve.ratios == [1.0, 1.0]


def test_exhaustions_share_the_limit():
    a = ratio_curve(POINT_KILL, Ball(), (2, 0), (1, 0), [48]).ratios[-1]
    b = ratio_curve(POINT_KILL, BallPlusHalfSpace(0, -1, 2.0), (2, 0), (1, 0), [48]).ratios[-1]
    assert abs(a - b) / LIMIT < 1e-2


def test_plus_and_minus_exhaustions_are_mirror_images():
    assert plus_exhaustion().sign == -1 and minus_exhaustion().sign == 1


def test_counterexample_small():
    rep = counterexample_experiment(alpha=1.6, r=4, R_list=(8, 16), truncation=4.0)
    for row in rep.rows:
        assert row["symmetry_residual"] <= 1e-9
    assert rep.directional_gap() > 1


def test_counterexample_degenerate_without_escape():
    with pytest.raises(DegenerateExperiment):
        counterexample_experiment(alpha=0.0, r=4, R_list=(8,))


def test_counterexample_rejects_bad_alpha():
    with pytest.raises(ValueError):
        counterexample_experiment(alpha=2.5, r=4, R_list=(8,))


def test_underflow_is_reported():
    with pytest.raises(UnderflowError):
        ratio_curve(Constant(0.95), Segment1D(1, 1), (1,), (0,), [400], d=1)


def test_conditioned_kernel_rows_sum_to_one_for_solution_weight():
    k = PowerLaw(1.6)
    sol = solve_escape(k, Ball(), 12, 2)
    kern = build_conditioned_kernel(k, solution_weight(sol), 2)
    for x in [(2, 1), (3, 2), (-5, 4), (0, 7)]:   # k = 1 on the unit circle, so start off it
        assert kern.row_sum(x) == pytest.approx(1.0, abs=1e-11)
        assert abs(kern.harmonic_defect(x)) < 1e-11


@settings(max_examples=25, deadline=None)
@given(st.integers(-30, 30), st.integers(-30, 30))
def test_potential_kernel_is_a_doob_weight(a, b):
    if (a, b) == (0, 0):
        return
    kern = build_conditioned_kernel(POINT_KILL, potential_kernel, 2)
    assert abs(kern.harmonic_defect((a, b))) < 1e-10


def test_symmetric_segment_row():
    k = IndicatorSet(((0,),), 0.5)
    sol = solve_escape(k, Segment1D(1, 1), 50, 1)
    law = exact_step_law(sol, (0,))
    assert law[(1,)] == pytest.approx(law[(-1,)], abs=1e-12)
    kern = build_conditioned_kernel(k, solution_weight(sol), 1, normalize=True)
    row = kern.row((0,))
    assert row[(1,)] == pytest.approx(0.5) and row[(-1,)] == pytest.approx(0.5)


def test_negative_weight_rejected():
    kern = build_conditioned_kernel(Constant(0.1), lambda p: -1.0 if p == (1, 0) else 1.0, 2)
    with pytest.raises(ValueError):
        kern.row((0, 0))


def test_conditioned_paths_avoid_origin_and_match_exact_law():
    sol = solve_escape(POINT_KILL, Ball(), 32, 2)
    kern = build_conditioned_kernel(POINT_KILL, potential_kernel, 2)
    rng = RandomStream(1, 2).generator()
    paths = [sample_conditioned_path(kern, (1, 0), 30, rng=rng) for _ in range(400)]
    assert all(not np.any(np.all(p == 0, axis=1)) for p in paths)
    first = step_frequencies([p[:2] for p in paths])
    law = kern.row((1, 0))
    keys = sorted(law)
    obs = np.array([first.get(tuple(np.subtract(y, (1, 0))), 0) for y in keys])
    exp = np.array([law[y] for y in keys]) * len(paths)
    mask = exp > 0
    assert obs[~mask].sum() == 0
    assert stats.chisquare(obs[mask], exp[mask] * obs.sum() / exp.sum()).pvalue > 1e-3
    # the potential-kernel walk and the finite-R conditioned walk agree closely at R = 32
    finite = exact_step_law(sol, (1, 0))
    for y in keys:
        assert finite[y] == pytest.approx(law[y], abs=2e-2)
