import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from krwlab.core import Ball, IndicatorSet, RandomStream
from krwlab.harmonic import solve_escape
from krwlab.ratio import solution_weight
from krwlab.snake import (OffspringLaw, estimate_k, index_walk, krw_escape_mc,
                          sample_conditioned_snake, sample_gw_tree, sample_multitype_tree,
                          sample_truncated_snake, snake_escape_probability, tabulate_k,
                          tree_size_sample)

import oracles

GEO = OffspringLaw.geometric()


def test_offspring_law_validation():
    with pytest.raises(ValueError):
        OffspringLaw([0.0, 1.0])                 # point mass at one
    with pytest.raises(ValueError):
        OffspringLaw([0.3, 0.3, 0.3])            # does not sum to one
    with pytest.raises(ValueError):
        OffspringLaw([0.2, 0.5, 0.3])            # supercritical
    with pytest.raises(ValueError):
        OffspringLaw.parse("poisson")
    assert OffspringLaw.parse("pmf:0.25,0.5,0.25").variance == pytest.approx(0.5)
    assert OffspringLaw.parse({0: 0.5, 2: 0.5}).mean == pytest.approx(1.0)


def test_geometric_law_moments_and_root_law():
    assert GEO.mean == 1.0 and GEO.variance == 2.0
    assert GEO.pmf.sum() == pytest.approx(1.0, abs=1e-15)
    # the spine vertex has i extra children with probability (i+1) 2^-(i+2)
    assert GEO.root_pmf[:3] == pytest.approx([0.25, 0.25, 3 / 16], abs=1e-15)


def test_single_vertex_probability():
    sizes, _, _ = tree_size_sample(GEO, 200000, node_cap=1000, stream=RandomStream(1))
    p = np.mean(sizes == 1)
    assert abs(p - 0.5) < 4 * np.sqrt(0.25 / 200000)


def test_height_tail_closed_form_matches_recursion():
    from krwlab.snake import _height_tail
    G = GEO.height_tail(2000)
    generic = _height_tail(GEO.pmf, 2000)
    assert np.max(np.abs(G - generic)) < 1e-12
    assert G[10] == pytest.approx(1 / 11)


def test_binary_height_tail():
    G = OffspringLaw.binary().height_tail(50)
    g = 1.0
    for h in range(50):
        assert G[h] == pytest.approx(g, rel=1e-13)
        g = g - g * g / 2


def test_trees_are_well_formed():
    t = sample_multitype_tree(GEO, 10**5, RandomStream(2))
    lab = index_walk(t, (3, -1, 0), 3, RandomStream(3))
    lab.check()
    assert tuple(lab.labels[0]) == (3, -1, 0)
    assert lab.size == t.size


def test_capped_tree_flagged():
    for i in range(200):
        t = sample_gw_tree(GEO, 5, RandomStream(4, i))
        if t.capped:
            assert t.size == 5
            return
    pytest.fail("no tree reached five vertices")


def test_k_at_origin_is_one():
    assert estimate_k((0, 0, 0, 0), GEO, 4, 100).mean == 1.0


def test_lazy_and_full_samplers_agree():
    a = estimate_k((3, 0, 0, 0), GEO, 4, 20000, node_cap=10**6, stream=RandomStream(5))
    b = estimate_k((3, 0, 0, 0), GEO, 4, 20000, node_cap=10**6, stream=RandomStream(6), method="full")
    assert abs(a.mean - b.mean) < 4 * np.hypot(a.stderr, b.stderr)


def test_binary_law_in_one_dimension_matches_fixed_point():
    e = estimate_k((1,), OffspringLaw.binary(), 1, 20000, node_cap=10**6, stream=RandomStream(7))
    assert e.zscore(oracles.binary_k1()) < 4


def test_hit_probability_decreases_with_distance():
    ks = [estimate_k((r, 0, 0, 0), GEO, 4, 20000, stream=RandomStream(8, r)) for r in (1, 3, 6)]
    for a, b in zip(ks, ks[1:]):
        assert a.mean - b.mean > 4 * np.hypot(a.stderr, b.stderr)


def test_point_bush_reduces_to_plain_walk():
    s = snake_escape_probability((1, 0), OffspringLaw.point_bush(), 2, Ball(), 8, 40000,
                                 stream=RandomStream(9))
    exact = solve_escape(IndicatorSet(((0, 0),), 1.0), Ball(), 8, 2).value_at((1, 0))
    assert s.zscore(exact) < 4


def test_snake_matches_killed_walk_with_estimated_killing():
    tab = tabulate_k(GEO, 4, 6, 0, exact_radius=6.5, min_per_cell=3000, node_cap=2000,
                     stream=RandomStream(10), cap_policy="miss")
    s = snake_escape_probability((2, 0, 0, 0), GEO, 4, Ball(), 5, 40000, node_cap=2000,
                                 stream=RandomStream(11), cap_policy="miss")
    k = krw_escape_mc(tab, (2, 0, 0, 0), Ball(), 5, 40000, stream=RandomStream(12))
    assert abs(s.mean - k.mean) < 4 * np.hypot(s.stderr, k.stderr)


def test_checking_the_exit_bush_can_only_lower_escape():
    a = snake_escape_probability((2, 0, 0, 0), GEO, 4, Ball(), 4, 20000, node_cap=2000,
                                 stream=RandomStream(13))
    b = snake_escape_probability((2, 0, 0, 0), GEO, 4, Ball(), 4, 20000, node_cap=2000,
                                 stream=RandomStream(14),
                                 include_exit_bush=True)
    assert b.mean < a.mean + 4 * np.hypot(a.stderr, b.stderr)


def test_snake_rejects_origin_start():
    with pytest.raises(ValueError):
        snake_escape_probability((0, 0), GEO, 2, Ball(), 4, 10)


def test_conditioned_snake_avoids_origin():
    tab = tabulate_k(GEO, 4, 4, 0, exact_radius=4.5, min_per_cell=500, stream=RandomStream(15))
    sol = solve_escape(tab.as_killing(), Ball(), 10, 4)
    snake = sample_conditioned_snake((2, 0, 0, 0), GEO, 4, solution_weight(sol), tab, 6,
                                     stream=RandomStream(16), node_cap=2000)
    tree = snake.to_tree()
    tree.check()
    assert not tree.contains_label((0, 0, 0, 0))
    assert len(snake.bushes) == 6 and np.all(snake.tries >= 1)


def test_truncated_snake_export(tmp_path):
    tree = sample_truncated_snake((1, 1), GEO, 2, 5, RandomStream(17), node_cap=1000)
    tree.check()
    text = tree.to_edge_list(tmp_path / "snake.txt")
    assert text.startswith("# node parent x1 x2 spine bush")
    assert len(text.splitlines()) == tree.size + 1


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_index_walk_steps_are_units(seed):
    t = sample_gw_tree(GEO, 500, RandomStream(seed))
    index_walk(t, (0, 0), 2, RandomStream(seed, 1)).check()
