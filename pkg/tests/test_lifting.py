import numpy as np
import pytest

from hmdp.errors import GraphChange
from hmdp.generate import chain_template, success_template, token_template
from hmdp.lifting import CompiledTemplate, TemplateAnalyzer, bound_results_for_set, check_one, to_region
from hmdp.model import Mode, Region, instantiate
from hmdp.numerics import max_expected_reward, policy_value, reachability_probability


def test_token_check_one_is_two_over_p():
    t = token_template()
    for p in (0.05, 8 / 25, 0.5, 25 / 32, 0.95):
        res = check_one(t, (p,))
        assert res.probs == (1.0,)
        assert res.reward == pytest.approx(2 / p, rel=1e-10)


def test_token_set_bounds():
    t = token_template()
    b = bound_results_for_set(t, to_region([(8 / 25,), (2 / 5,), (1 / 2,), (1 / 2,), (5 / 8,), (25 / 32,)]))
    assert (b.lower.reward, b.upper.reward) == pytest.approx((2.56, 6.25), abs=1e-9)
    b = bound_results_for_set(t, Region((0.5,), (25 / 32,)))
    assert (b.lower.reward, b.upper.reward) == pytest.approx((2.56, 4.0), abs=1e-9)
    b = bound_results_for_set(t, Region((8 / 25,), (2 / 5,)))
    assert (b.lower.reward, b.upper.reward) == pytest.approx((5.0, 6.25), abs=1e-9)


def test_point_region_matches_check_one():
    t = chain_template(8, 2, True, 3)
    a = TemplateAnalyzer(t)
    v = (0.37, 0.61)
    b = a.check_set(Region.point(v))
    r = a.check_one(v)
    assert b.lower.reward == pytest.approx(r.reward, rel=1e-8)
    assert b.upper.reward == pytest.approx(r.reward, rel=1e-8)


def test_to_region():
    r = to_region([(0.2, 0.9), (0.4, 0.1), (0.3, 0.5)])
    assert r.lower == (0.2, 0.1) and r.upper == (0.4, 0.9)


def test_instantiation_matches_symbolic_substitution():
    t = chain_template(6, 2, True, 1)
    ct = CompiledTemplate(t)
    v = (0.3, 0.7)
    fast = max_expected_reward(ct.instantiate(v))[0].values[ct.initial]
    slow = max_expected_reward(instantiate(t.pmdp, v))[0].values[t.pmdp.initial]
    assert fast == pytest.approx(slow, rel=1e-10)


def test_graph_change_outside_support():
    t = token_template()
    with pytest.raises(GraphChange):
        bound_results_for_set(t, Region((0.0,), (0.5,)))


def test_success_mode_check_one_uses_success_policy():
    t = success_template(3, seed=2)
    a = TemplateAnalyzer(t, Mode.SUCCESS, 0)
    v = (0.6, 0.7)
    res = a.check_one(v)
    m = a.compiled.instantiate(v)
    # brute force over the 2^3 deterministic policies: maximise success first
    best = None
    for bits in range(8):
        choice = [(bits >> k) & 1 for k in range(3)] + [-1, -1]
        ok = reachability_probability(m, choice, [t.exits[0]]).values[0]
        if best is None or ok > best[0] + 1e-12:
            best = (ok, policy_value(m, choice).values[0])
    assert res.probs[0] == pytest.approx(best[0], abs=1e-9)
    assert res.probs[0] + res.probs[1] == pytest.approx(1.0, abs=1e-9)
    assert res.reward == pytest.approx(best[1], abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_region_bounds_contain_samples(seed):
    rng = np.random.default_rng(seed)
    t = chain_template(int(rng.integers(2, 12)), 2, True, seed)
    lo = rng.uniform(0.1, 0.5, 2)
    hi = lo + rng.uniform(0.01, 0.4, 2)
    region = Region(tuple(lo), tuple(hi))
    b = bound_results_for_set(t, region)
    for v in rng.uniform(lo, hi, size=(30, 2)):
        r = check_one(t, tuple(v))
        assert b.lower.reward - 1e-7 <= r.reward <= b.upper.reward + 1e-7
