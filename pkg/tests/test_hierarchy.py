from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from hmdp.errors import CapExceeded, CoverageGap
from hmdp.generate import chain_grid_model, chain_template, success_model, token_model
from hmdp.hierarchy import (UncertainMacro, check_local_optimality, enumerate_baseline, flat_state_count,
                            flatten, flatten_and_solve, suitable_region)
from hmdp.lifting import bound_results_for_set
from hmdp.io import parse_template
from hmdp.model import Call, Concrete, HierarchicalModel, Mode, Region, ResultVector
from hmdp.numerics import robust_value_bounds

from oracles import brute_force_max

TOKEN_EXACT = 12.865


def token_oracle():
    # hand-written closed form: every call costs 2/p, visit weights 1, 1/2, 1/2, 1/2, 1/4, 1/4
    p = [Fraction(1, 2), Fraction(2, 5), Fraction(5, 8), Fraction(8, 25), Fraction(1, 2), Fraction(25, 32)]
    w = [1, Fraction(1, 2), Fraction(1, 2), Fraction(1, 2), Fraction(1, 4), Fraction(1, 4)]
    return sum(wi * 2 / pi for wi, pi in zip(w, p))


def test_token_oracle_value():
    assert token_oracle() == Fraction(12865, 1000)


def test_token_enumerate_and_flatten():
    m = token_model(3)
    base = enumerate_baseline(m)
    assert base.value == pytest.approx(TOKEN_EXACT, abs=1e-9)
    assert base.distinct_checks == 5
    assert flatten_and_solve(m) == pytest.approx(TOKEN_EXACT, abs=1e-9)


def test_flat_state_count_matches_construction():
    for m in (token_model(3), token_model(4), chain_grid_model(3, 4, chain_template(7), 1), success_model(4)):
        assert flatten(m).n == flat_state_count(m)


def test_flatten_cap():
    m = chain_grid_model(3, 4, chain_template(7), 1)
    with pytest.raises(CapExceeded):
        flatten(m, cap=flat_state_count(m) - 1)


def test_flatten_single_call_equals_template_value():
    t = chain_template(5, 1, True, 0)
    m = chain_grid_model(1, 1, t, fixed=(0.4,))
    assert flatten_and_solve(m) == pytest.approx(enumerate_baseline(m).value, abs=1e-9)


def test_flatten_matches_brute_force_on_small_grid():
    t = chain_template(2, 1, True, 4)
    m = chain_grid_model(2, 2, t, 4, resolution=10)
    flat = flatten(m)
    n = flat.n
    rows = {}
    P = flat.P.toarray()
    for s in range(n):
        acts = []
        for g in range(flat.state_ptr[s], flat.state_ptr[s + 1]):
            r = flat.group_ptr[g]
            acts.append((flat.reward[r], {int(t): P[r, t] for t in np.flatnonzero(P[r])}))
        if acts:
            rows[s] = acts
    assert brute_force_max(n, rows, m.initial) == pytest.approx(flatten_and_solve(m), abs=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_success_mode_enumerate_equals_flatten(seed):
    m = success_model(4, seed)
    assert enumerate_baseline(m).value == pytest.approx(flatten_and_solve(m), abs=1e-7)


def test_local_optimality_report():
    assert check_local_optimality(token_model(3))
    assert check_local_optimality(success_model(2))
    m = success_model(2)
    bad = replace(m, mode=Mode.SINGLE, success_exit=None)
    rep = check_local_optimality(bad)
    assert not rep and rep.offending == list(bad.call_indices)


def test_local_optimality_holds_without_choices():
    t = parse_template(
        "template fork\nparam p [0.1, 0.9]\nentry s\nexits l r\n"
        "s | go | s: 1/2, l: p/2, r: 1/2 - p/2 | 1\n"
    )
    m = HierarchicalModel((Call("c", (0.5,), (1, 1)), Concrete("g")), 0, t, frozenset({1}))
    assert check_local_optimality(m)


def test_uncertain_macro_instantiation():
    m = token_model(3)
    um = UncertainMacro(m)
    assert um.n_calls == 6 and um.y == 1
    rew = np.array([2 / float(m.states[s].valuation[0]) for s in um.call_state])
    from hmdp.numerics import max_expected_reward
    v, _ = max_expected_reward(um.instantiate(np.ones((6, 1)), rew))
    assert v.values[m.initial] == pytest.approx(TOKEN_EXACT, abs=1e-9)


def test_suitable_region_and_robust_bounds():
    m = token_model(3)
    um = UncertainMacro(m)
    b = bound_results_for_set(m.template, Region((8 / 25,), (25 / 32,)))
    region = suitable_region(um, {i: b for i in m.call_indices})
    res = robust_value_bounds(um.with_region(region))
    assert (res.lb, res.ub) == pytest.approx((7.68, 18.75), abs=1e-6)
    exact = {i: ResultVector((1.0,), 2 / m.states[i].valuation[0]) for i in m.call_indices}
    res = robust_value_bounds(um.with_region(suitable_region(um, exact)))
    assert res.lb == pytest.approx(TOKEN_EXACT, abs=1e-6) and res.ub == pytest.approx(TOKEN_EXACT, abs=1e-6)


def test_suitable_region_coverage_gap():
    m = token_model(3)
    um = UncertainMacro(m)
    with pytest.raises(CoverageGap):
        suitable_region(um, {0: ResultVector((1.0,), 4.0)})


def test_plain_macro_without_calls():
    t = chain_template(2)
    m = HierarchicalModel((Concrete("a", (("go", ((1, Fraction(1)),)),), Fraction(3)), Concrete("g")),
                          0, t, frozenset({1}))
    assert enumerate_baseline(m).value == pytest.approx(3.0)
    assert flatten_and_solve(m) == pytest.approx(3.0)


def test_call_into_shared_successor():
    # two calls wired to the same continuation
    t = chain_template(3, 1, True, 0)
    states = (Call("a", (0.3,), (2,)), Call("b", (0.6,), (2,)),
              Concrete("c", (("go", ((3, Fraction(1)),)),), Fraction(1)), Concrete("g"))
    m = HierarchicalModel(states, 0, t, frozenset({3}))
    assert enumerate_baseline(m).value == pytest.approx(flatten_and_solve(m), abs=1e-9)
