import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from krwlab.core import Constant, IndicatorSet, RandomStream, Zero
from krwlab.kbm import (DIED, ESCAPED, TIMED_OUT, KbmConfig, WindingError, angular_concentration,
                        annulus_survival, directional_escape, directional_region, dt_halving_check,
                        feynman_kac_check, ldp_check, reflection_principle_check, resolved_config,
                        scaling_fit, simulate_until, skew_product_check, survival_estimate)


def test_no_killing_means_no_deaths():
    cfg = KbmConfig(killing=Zero(), dt=0.01)
    b = simulate_until(cfg, (1.0, 0.0), 2000, radius=4)
    assert b.count(ESCAPED) == 2000 and b.count(DIED) == 0
    assert np.all(np.hypot(b.x, b.y) >= 4)


def test_constant_killing_survival_is_exponential():
    cfg = KbmConfig(killing=Constant(0.5), dt=0.01)
    b = simulate_until(cfg, (10.0, 0.0), 30000, time_cap=2.0, stream=RandomStream(1))
    assert survival_estimate(b).zscore(math.exp(-1.0)) < 4


def test_timeout_is_reported():
    cfg = KbmConfig(killing=Zero(), dt=0.01, max_time=0.05)
    b = simulate_until(cfg, (1.0, 0.0), 200, radius=50)
    assert b.count(TIMED_OUT) == 200


def test_exactly_one_stop_rule():
    with pytest.raises(ValueError):
        simulate_until(KbmConfig(), (1.0, 0.0), 10)
    with pytest.raises(ValueError):
        simulate_until(KbmConfig(), (1.0, 0.0), 10, radius=2, time_cap=1)


def test_unsupported_killing_rejected():
    with pytest.raises(ValueError):
        KbmConfig(killing=IndicatorSet(((0, 0),), 1.0)).kill_code()
    with pytest.raises(ValueError):
        KbmConfig(alpha=2.0)


@settings(max_examples=30)
@given(st.floats(0.01, 1.99))
def test_exponent_identity(alpha):
    b = KbmConfig(alpha=alpha).beta
    assert 0 < b < 0.5
    assert 2 * b + alpha / 2 == pytest.approx(1.0)


def test_resolution_rule_enforced():
    with pytest.raises(ValueError):
        annulus_survival(KbmConfig(dt=1.0), 4, samples=10)
    cfg = resolved_config(1.6, 8)
    assert cfg.dt == pytest.approx(0.64)
    cfg.check_resolution(8)


def test_death_and_weighted_estimators_agree():
    cfg = resolved_config(1.6, 4, seed=3)
    res = feynman_kac_check(cfg, (4.0, 0.0), 8, 20000)
    assert abs(res["z"]) < 4


def test_weaker_killing_survives_more():
    lo = annulus_survival(resolved_config(1.2, 8), 8, samples=20000)
    hi = annulus_survival(resolved_config(1.9, 8), 8, samples=20000)
    assert hi.mean - lo.mean > 4 * math.hypot(lo.stderr, hi.stderr)


def test_chained_product_matches_direct():
    cfg = resolved_config(1.0, 4, bridge=True, seed=5)
    direct = annulus_survival(cfg, 4, 4.0, 40000, "direct")
    chained = annulus_survival(cfg, 4, 4.0, 40000, "chained")
    assert abs(direct.mean - chained.mean) < 4 * math.hypot(direct.stderr, chained.stderr)
    with pytest.raises(ValueError):
        annulus_survival(cfg, 4, 3.0, 10, "chained")


def test_scaling_fit_is_linear():
    fit = scaling_fit(KbmConfig(alpha=1.0, seed=2), radii=(4, 8, 16), samples=20000)
    assert fit["corr"] > 0.99 and fit["slope"] > 0


def test_winding_is_symmetric_and_few_survivors_inconclusive():
    cfg = resolved_config(1.6, 4, seed=4)
    res = angular_concentration(cfg, 4, 20000)
    w = res.winding
    assert abs(w.mean()) < 4 * w.std() / math.sqrt(len(w))
    assert 0 < res.estimate.mean < 1
    tiny = angular_concentration(cfg, 4, 50)
    assert tiny.inconclusive and math.isnan(tiny.estimate.mean)
    with pytest.raises(ValueError):
        angular_concentration(cfg, 2, 10)


def test_skew_product_distribution():
    res = skew_product_check(resolved_config(1.6, 4, seed=6), 4, 20000)
    assert res["pvalue"] > 1e-3


def test_directional_regions_mirror():
    assert directional_region(4, 1, "plus") == (8, 1, 64)
    assert directional_region(4, 1, "minus") == (8, -1, 64)
    with pytest.raises(ValueError):
        directional_region(4, 1, "left")


def test_mirror_symmetry_and_side_ordering():
    cfg = resolved_config(1.0, 4, seed=7)
    plus = directional_escape(cfg, 4, 1, "plus", 40000, splitting=False)
    mirrored = directional_escape(cfg, 4, 1, "minus", 40000, start=(-4.0, 0.0), splitting=False)
    minus = directional_escape(cfg, 4, 1, "minus", 40000, splitting=False)
    assert abs(plus.mean - mirrored.mean) < 4 * math.hypot(plus.stderr, mirrored.stderr)
    assert plus.mean - minus.mean > 4 * math.hypot(plus.stderr, minus.stderr)
    ball = annulus_survival(cfg, 4, 2.0, 40000, "direct")
    assert plus.mean < ball.mean + 4 * math.hypot(plus.stderr, ball.stderr)


def test_splitting_matches_direct_simulation():
    cfg = resolved_config(1.0, 4, seed=8)
    direct = directional_escape(cfg, 4, 1, "minus", 100000, splitting=False)
    split = directional_escape(cfg, 4, 1, "minus", 100000, splitting=True, pilot_effort=2000)
    assert abs(direct.mean - split.mean) < 4 * math.hypot(direct.stderr, split.stderr)


def test_large_fixed_steps_raise():
    cfg = KbmConfig(killing=Zero(), dt=25.0, adaptive=False)
    with pytest.raises(WindingError):
        simulate_until(cfg, (1.0, 0.0), 200, radius=1e4)


def test_reflection_principle():
    good = reflection_principle_check(1.0, 1.0, 0.01, 40000)
    assert abs(good["z"]) < 4
    coarse = reflection_principle_check(1.0, 1.0, 0.05, 40000, bridge=False)
    # discrete monitoring misses crossings
    assert coarse["z"] > 4 and coarse["estimate"].mean < coarse["exact"]


def test_exit_time_tail_below_bound():
    rows = ldp_check((2.0, 4.0), (0.5, 1.0), 0.01, 4000)
    for row in rows:
        assert row["estimate"] <= row["bound"] + 3 * row["stderr"]


def test_step_halving_consistent():
    res = dt_halving_check(resolved_config(1.6, 4, seed=9), 4, 20000)
    assert res["ok"]
    assert res["dts"][1] == pytest.approx(res["dts"][0] / 2)
