"""Anytime abstraction-refinement loop over call states sharing one template."""

from __future__ import annotations

import heapq
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import CoverageGap, IterationCapExceeded, ValidationError
from .hierarchy import SlotRegion, UncertainMacro, check_local_optimality, suitable_region
from .lifting import TemplateAnalyzer, to_region
from .model import Diagnostic, HierarchicalModel, Mode, Policy, ResultBounds, ResultVector
from .numerics import DEFAULT_EPS, RobustResult, expected_visits, induced_chain, robust_value_bounds

INTERLEAVE_CAP = 150


@dataclass
class RefineConfig:
    eta: float = 0.9
    epsilon: float = DEFAULT_EPS
    k: int = 8
    max_iter: int = 10**6
    override_local_optimality: bool = False
    interleave: bool = True
    workers: int = 1
    callback: Callable[[dict], None] | None = None


@dataclass(eq=False)
class Binding:
    """A set of call states sharing one sound bound on their result vectors."""

    members: np.ndarray
    bounds: ResultBounds
    weight: float = 1.0

    @property
    def size(self) -> int:
        return len(self.members)


class RefineResult(NamedTuple):
    lb: float
    ub: float
    policy: Policy | None
    trace: list


@dataclass
class RefinementState:
    model: HierarchicalModel
    config: RefineConfig
    analyzer: TemplateAnalyzer
    umacro: UncertainMacro
    valuations: np.ndarray  # indexed by macro state, nan for concrete states
    res: dict[int, ResultVector] = field(default_factory=dict)
    bindings: list[Binding] = field(default_factory=list)
    weights: np.ndarray | None = None
    lb: float = -math.inf
    ub: float = math.inf
    iter: int = 0
    trace: list = field(default_factory=list)
    policy: Policy | None = None
    last: RobustResult | None = None
    region: SlotRegion | None = None
    started: float = field(default_factory=time.perf_counter)
    memo: dict = field(default_factory=dict)
    _heap: list = field(default_factory=list)
    _tick: itertools.count = field(default_factory=itertools.count)

    @classmethod
    def initial(cls, model: HierarchicalModel, config: RefineConfig | None = None) -> RefinementState:
        config = config or RefineConfig()
        analyzer = TemplateAnalyzer(model.template, model.mode, model.success_exit, config.epsilon)
        um = UncertainMacro(model)
        vals = np.full((len(model.states), len(model.template.params)), np.nan)
        for i in model.call_indices:
            vals[i] = model.states[i].valuation
        st = cls(model, config, analyzer, um, vals)
        st.weights = np.zeros(len(model.states))
        st.weights[list(model.call_indices)] = 1.0
        if model.n_calls:
            root = Binding(np.asarray(model.call_indices, dtype=np.int64),
                           ResultBounds.trivial(model.template.n_exits))
            st.push(root)
        return st

    # queue ----------------------------------------------------------------

    def priority(self, b: Binding) -> float:
        lo, hi = b.bounds.lower, b.bounds.upper
        width = hi.reward - lo.reward
        if self.model.mode is Mode.SUCCESS:
            j = self.model.success_exit
            scale = self.ub if math.isfinite(self.ub) else 1.0
            width += (hi.probs[j] - lo.probs[j]) * scale
        w = float(self.weights[b.members].sum())
        if w == 0.0 or width == 0.0:
            return 0.0
        return width * w

    def _entry(self, b: Binding):
        return (-self.priority(b), -b.size, int(b.members.min()), next(self._tick), b)

    def push(self, b: Binding):
        self.bindings.append(b)
        heapq.heappush(self._heap, self._entry(b))

    def pop(self) -> Binding:
        b = heapq.heappop(self._heap)[-1]
        self.bindings.remove(b)
        return b

    def remove(self, b: Binding):
        self.bindings.remove(b)
        self.reheap()

    def reheap(self):
        self._heap = [self._entry(b) for b in self.bindings]
        heapq.heapify(self._heap)

    @property
    def queue_size(self) -> int:
        return len(self.bindings)

    # single calls ---------------------------------------------------------

    def check_one(self, i: int) -> ResultVector:
        v = tuple(self.model.states[i].valuation)
        out = self.memo.get(v)
        if out is None:
            out = self.memo[v] = self.analyzer.check_one(v)
        return out

    def solve_many(self, calls) -> None:
        calls = [int(i) for i in calls]
        todo = sorted({tuple(self.model.states[i].valuation) for i in calls} - self.memo.keys())
        if self.config.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.config.workers) as ex:
                for v, r in zip(todo, ex.map(self.analyzer.check_one, todo)):
                    self.memo[v] = r
        for i in calls:
            self.res[i] = self.check_one(i)


def split(state: RefinementState, b: Binding) -> tuple[Binding, Binding]:
    """Halve a binding along its widest (box-normalised) parameter axis."""
    if b.size < 2:
        raise ValueError("cannot split a binding with fewer than two members")
    members = np.sort(b.members)
    V = state.valuations[members]
    box = state.model.template.box
    width = np.asarray(box.upper, dtype=float) - np.asarray(box.lower, dtype=float)
    width = np.where(width > 0, width, 1.0)
    lo, hi = V.min(axis=0), V.max(axis=0)
    axis = int(np.argmax((hi - lo) / width)) if V.shape[1] else 0
    if V.shape[1]:
        col = V[:, axis]
        left = col <= (lo[axis] + hi[axis]) / 2
        if left.all() or not left.any():
            left = col <= np.median(col)
            if left.all() or not left.any():
                left = np.arange(len(members)) < len(members) // 2
    else:
        left = np.arange(len(members)) < len(members) // 2
    return (Binding(members[left], b.bounds, b.weight), Binding(members[~left], b.bounds, b.weight))


def refine_binding(state: RefinementState, b: Binding) -> None:
    """Re-bound a binding that left the queue: singletons and point regions are
    solved exactly, larger sets get fresh region bounds and are split."""
    if b.size == 1:
        state.solve_many(b.members)
        return
    region = to_region(state.valuations[b.members])
    if region.is_point():
        state.solve_many(b.members)
        return
    bounds = state.analyzer.check_set(region)
    for child in split(state, Binding(b.members, bounds, b.weight)):
        state.push(child)


def pop_and_refine(state: RefinementState, binding: Binding | None = None) -> RefinementState:
    if binding is None:
        binding = state.pop()
    else:
        state.remove(binding)
    refine_binding(state, binding)
    return state


def force_split(state: RefinementState, groups) -> list[Binding]:
    """Replace the queue with one freshly bounded binding per group of call indices."""
    groups = [np.sort(np.asarray(g, dtype=np.int64)) for g in groups]
    flat = np.concatenate(groups) if groups else np.zeros(0, np.int64)
    pending = np.concatenate([b.members for b in state.bindings]) if state.bindings else np.zeros(0, np.int64)
    if sorted(flat.tolist()) != sorted(pending.tolist()):
        raise ValueError("groups must partition the call states still in the queue")
    state.bindings = []
    state.reheap()
    out = []
    for g in groups:
        b = Binding(g, state.analyzer.check_set(to_region(state.valuations[g])))
        state.push(b)
        out.append(b)
    return out


def _sources(state: RefinementState) -> dict:
    src: dict = dict(state.res)
    for b in state.bindings:
        for i in b.members:
            src[int(i)] = b.bounds
    return src


def macro_check(state: RefinementState) -> RobustResult | None:
    """Robust bounds on the uncertain macro at the current suitable region."""
    um = state.umacro
    covered = len(state.res) + sum(b.size for b in state.bindings)
    if covered != um.n_calls:
        raise CoverageGap(f"{covered} of {um.n_calls} call states covered")
    region = suitable_region(um, _sources(state))
    out = robust_value_bounds(um.with_region(region), state.config.epsilon)
    state.region = region
    state.last = out
    state.lb = max(state.lb, out.lb)
    state.ub = min(state.ub, out.ub)
    state.policy = out.lower_policy
    entry = {
        "iter": state.iter,
        "lb": state.lb,
        "ub": state.ub,
        "wall_ms": (time.perf_counter() - state.started) * 1000.0,
        "queue_size": state.queue_size,
        "refined_count": len(state.res),
    }
    state.trace.append(entry)
    if state.config.callback is not None:
        state.config.callback(entry)
    return out


def update_weights(state: RefinementState, policy: Policy | None = None) -> np.ndarray:
    """Expected visits of every call state under the witness policy at the region centre."""
    policy = policy or state.policy
    um = state.umacro
    if state.region is None or policy is None:
        return state.weights
    pc, rc = state.region.center()
    pc = pc / pc.sum(axis=1, keepdims=True) if pc.size else pc
    inst = um.instantiate(pc, rc)
    choice = np.asarray(policy.choice, dtype=np.int64)
    choice = np.where((choice < 0) & ~inst.absorbing, 0, choice)
    P, _ = induced_chain(inst, choice)
    xi = expected_visits(P, inst.initial, inst.absorbing).values
    w = np.zeros(len(state.model.states))
    w[um.call_state] = xi[um.call_state]
    state.weights = w
    for b in state.bindings:
        b.weight = float(w[b.members].sum())
    state.reheap()
    return w


def interleave_count(iteration: int, remaining: int) -> int:
    if remaining <= 0:
        return 0
    return min(INTERLEAVE_CAP, remaining, math.ceil((1 + iteration / 16) / 100 * remaining))


def interleave_individual(state: RefinementState) -> list[int]:
    """Solve the heaviest still-unsolved calls individually."""
    pending = np.concatenate([b.members for b in state.bindings]) if state.bindings else np.zeros(0, np.int64)
    n = interleave_count(state.iter, len(pending))
    if n == 0:
        return []
    w = state.weights[pending]
    order = np.lexsort((pending, -w))
    chosen = [int(i) for i in pending[order[:n]] if state.weights[i] > 0]
    if not chosen:
        return []
    state.solve_many(chosen)
    gone = set(chosen)
    kept = []
    for b in state.bindings:
        mask = np.array([int(i) not in gone for i in b.members])
        if mask.all():
            kept.append(b)
        elif mask.any():
            b.members = b.members[mask]
            b.weight = float(state.weights[b.members].sum())
            kept.append(b)
    state.bindings = kept
    state.reheap()
    return chosen


def _done(state: RefinementState) -> bool:
    return bool(state.trace) and not (state.config.eta * state.ub > state.lb)


def run(model: HierarchicalModel, eta: float | None = None, config: RefineConfig | None = None) -> RefineResult:
    """Refine until ``eta * ub <= lb``; returns bounds on the maximal expected reward."""
    config = config or RefineConfig()
    if eta is not None:
        config.eta = eta
    if not 0.0 <= config.eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if config.k < 1:
        raise ValueError("cadence k must be positive")
    report = check_local_optimality(model)
    if not report and not config.override_local_optimality:
        raise ValidationError([Diagnostic("local-optimality", report.reason, model.name)])
    state = RefinementState.initial(model, config)
    while not _done(state):
        if state.iter >= config.max_iter:
            raise IterationCapExceeded(
                f"eta*ub > lb after {state.iter} iterations ({state.lb:.6g}, {state.ub:.6g})", state.trace)
        state.iter += 1
        if state.bindings:
            pop_and_refine(state)
        if (state.iter - 1) % config.k == 0 or not state.bindings:
            out = macro_check(state)
            if not state.bindings:
                break
            if config.interleave and not _done(state):
                update_weights(state, out.lower_policy)
                interleave_individual(state)
    return RefineResult(state.lb, state.ub, state.policy, state.trace)
