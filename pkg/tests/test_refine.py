import math
from dataclasses import replace

import numpy as np
import pytest

from hmdp.errors import IterationCapExceeded, ValidationError
from hmdp.generate import chain_grid_model, chain_template, success_model, token_model
from hmdp.hierarchy import enumerate_baseline
from hmdp.model import Mode, ResultBounds
from hmdp.refine import (Binding, RefineConfig, RefinementState, force_split, interleave_count,
                         interleave_individual, macro_check, pop_and_refine, run, split, update_weights)

EPS = 1e-8


def token_state(**kw):
    return RefinementState.initial(token_model(3), RefineConfig(**kw))


def members(state, values):
    return sorted(i for i in state.model.call_indices if state.model.states[i].valuation[0] in values)


def test_initial_state():
    st = token_state()
    assert st.queue_size == 1 and st.res == {}
    assert st.bindings[0].bounds == ResultBounds.trivial(1)
    assert list(st.weights[list(st.model.call_indices)]) == [1.0] * 6


def test_root_pop_bounds_and_children():
    st = token_state()
    pop_and_refine(st)
    assert st.queue_size == 2
    for b in st.bindings:
        assert (b.bounds.lower.reward, b.bounds.upper.reward) == pytest.approx((2.56, 6.25), abs=1e-9)
    # both children cover the calls exactly once
    assert sorted(np.concatenate([b.members for b in st.bindings]).tolist()) == list(range(6))


def test_child_bounds_after_forced_split():
    st = token_state()
    pop_and_refine(st)
    lo, hi = force_split(st, [members(st, (0.32, 0.4)), members(st, (0.5, 0.625, 0.78125))])
    assert st.queue_size == len(st._heap) == 2
    assert (lo.bounds.lower.reward, lo.bounds.upper.reward) == pytest.approx((5.0, 6.25), abs=1e-9)
    assert (hi.bounds.lower.reward, hi.bounds.upper.reward) == pytest.approx((2.56, 4.0), abs=1e-9)
    macro_check(st)
    assert (st.lb, st.ub) == pytest.approx((10.12, 14.25), abs=1e-6)


def test_split_midpoint_rule():
    st = token_state()
    calls = np.array(st.model.call_indices)
    left, right = split(st, Binding(calls, ResultBounds.trivial(1)))
    lv = sorted(st.valuations[left.members, 0])
    rv = sorted(st.valuations[right.members, 0])
    # midpoint of [8/25, 25/32] is 0.55
    assert lv == pytest.approx([0.32, 0.4, 0.5, 0.5]) and rv == pytest.approx([0.625, 0.78125])


def test_split_two_members_gives_singletons():
    st = token_state()
    a, b = split(st, Binding(np.array([1, 2]), ResultBounds.trivial(1)))
    assert a.members.tolist() == [1] and b.members.tolist() == [2]


def test_split_identical_points_falls_back():
    st = token_state()
    a, b = split(st, Binding(np.array([0, 4]), ResultBounds.trivial(1)))  # both at p = 1/2
    assert a.size == 1 and b.size == 1


def test_split_median_fallback():
    t = chain_template(3)
    m = chain_grid_model(1, 4, t, fixed=(0.5,))
    states = list(m.states)
    states[3] = replace(states[3], valuation=(np.nextafter(0.5, 1),))
    st = RefinementState.initial(replace(m, states=tuple(states)))
    a, b = split(st, Binding(np.arange(4), ResultBounds.trivial(1)))
    assert a.size + b.size == 4 and a.size > 0 and b.size > 0


def test_split_normalises_by_box_width():
    t = chain_template(3, 2)
    t = replace(t, box=replace(t.box, lower=(0.1, 0.45), upper=(0.9, 0.55)))
    m = chain_grid_model(1, 2, t, fixed=(0.5, 0.5))
    states = list(m.states)
    states[0] = replace(states[0], valuation=(0.3, 0.46))
    states[1] = replace(states[1], valuation=(0.5, 0.54))
    st = RefinementState.initial(replace(m, states=tuple(states)))
    # raw extents 0.2 vs 0.08, normalised 0.25 vs 0.8: the second axis wins
    a, b = split(st, Binding(np.array([0, 1]), ResultBounds.trivial(1)))
    assert st.valuations[a.members[0], 1] == 0.46


def test_singleton_pop_stores_exact_result():
    st = token_state()
    st.bindings = []
    st.reheap()
    st.push(Binding(np.array([2]), ResultBounds.trivial(1)))
    for i in (0, 1, 3, 4, 5):
        st.res[i] = st.check_one(i)
    pop_and_refine(st)
    assert st.queue_size == 0 and st.res[2].reward == pytest.approx(2 / 0.625)


def test_first_macro_check():
    st = token_state()
    pop_and_refine(st)
    out = macro_check(st)
    assert (out.lb, out.ub) == pytest.approx((7.68, 18.75), abs=1e-6)
    assert st.trace[-1]["queue_size"] == 2 and st.trace[-1]["refined_count"] == 0


def test_update_weights_token_visits():
    st = token_state()
    pop_and_refine(st)
    macro_check(st)
    w = update_weights(st)
    assert w[list(st.model.call_indices)] == pytest.approx([1, 0.5, 0.5, 0.5, 0.25, 0.25])


def test_interleave_refines_heaviest_first():
    st = token_state()
    pop_and_refine(st)
    st.iter = 1
    macro_check(st)
    update_weights(st)
    chosen = interleave_individual(st)
    assert chosen == [0]
    assert 0 in st.res and all(0 not in b.members for b in st.bindings)


def test_interleave_noop_when_all_solved():
    st = token_state()
    st.solve_many(st.model.call_indices)
    st.bindings = []
    st.weights[:] = 1
    assert interleave_individual(st) == []


@pytest.mark.parametrize("it, remaining, expected", [
    (1, 10_000, math.ceil(1.0625 / 100 * 10_000)),
    (1, 6, 1),
    (16, 100, 2),
    (1000, 10_000, 150),
    (5, 0, 0),
])
def test_interleave_count(it, remaining, expected):
    assert interleave_count(it, remaining) == expected


@pytest.mark.parametrize("eta", [0.5, 0.9, 1.0])
def test_run_token(eta):
    lb, ub, policy, trace = run(token_model(3), eta)
    assert eta * ub <= lb + 2 * EPS
    assert trace[0]["lb"] == pytest.approx(7.68, abs=1e-6)
    assert lb - 2 * EPS <= 12.865 <= ub + 2 * EPS
    assert policy is not None
    if eta == 1.0:
        assert lb == pytest.approx(12.865, abs=1e-6) and ub == pytest.approx(12.865, abs=1e-6)


def test_eta_zero_stops_after_first_check():
    lb, ub, _, trace = run(token_model(3), 0.0)
    assert len(trace) == 1 and (lb, ub) == pytest.approx((7.68, 18.75), abs=1e-6)


def test_iteration_cap():
    with pytest.raises(IterationCapExceeded) as exc:
        run(token_model(3), 1.0, RefineConfig(max_iter=3))
    assert len(exc.value.trace) == 1


def test_bad_eta():
    with pytest.raises(ValueError):
        run(token_model(3), 1.5)


def test_local_optimality_guard():
    m = replace(success_model(2), mode=Mode.SINGLE, success_exit=None)
    with pytest.raises(ValidationError):
        run(m, 0.5)


def test_callback_and_determinism():
    m = chain_grid_model(3, 6, chain_template(6, 2, True, 2), 2)
    seen = []
    a = run(m, 1.0, RefineConfig(k=2, callback=seen.append))
    b = run(m, 1.0, RefineConfig(k=2, workers=3))
    strip = lambda tr: [{k: v for k, v in e.items() if k != "wall_ms"} for e in tr]  # noqa: E731
    assert strip(a.trace) == strip(b.trace) == strip(seen)


@pytest.mark.parametrize("seed", range(6))
def test_anytime_soundness_and_partition(seed):
    rng = np.random.default_rng(seed)
    t = chain_template(int(rng.integers(2, 10)), int(rng.integers(1, 3)), True, seed)
    m = chain_grid_model(int(rng.integers(2, 5)), int(rng.integers(2, 8)), t, seed, resolution=50)
    oracle = enumerate_baseline(m).value
    st = RefinementState.initial(m, RefineConfig(eta=1.0))
    while st.bindings:
        st.iter += 1
        pop_and_refine(st)
        covered = sorted(list(st.res) + np.concatenate([b.members for b in st.bindings] or [[]]).astype(int).tolist())
        assert covered == list(m.call_indices)
        if st.iter % 2 == 1 or not st.bindings:
            macro_check(st)
            assert st.lb - 2 * EPS <= oracle <= st.ub + 2 * EPS
    assert st.lb == pytest.approx(oracle, abs=1e-6) and st.ub == pytest.approx(oracle, abs=1e-6)


def test_success_mode_run():
    m = success_model(5, 3)
    oracle = enumerate_baseline(m).value
    lb, ub, _, trace = run(m, 1.0, RefineConfig(k=1))
    assert lb == pytest.approx(oracle, abs=1e-6) and ub == pytest.approx(oracle, abs=1e-6)
    for e in trace:
        assert e["lb"] - 2 * EPS <= oracle <= e["ub"] + 2 * EPS
