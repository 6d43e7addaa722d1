"""Macro-level constructions over a :class:`HierarchicalModel`."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import CapExceeded, CoverageGap
from .lifting import TemplateAnalyzer
from .model import Call, Concrete, HierarchicalModel, Mode, Policy, ResultBounds, ResultVector
from .numerics import DEFAULT_EPS, ChoiceModel, IntervalModel, max_expected_reward, solve_game

DEFAULT_FLAT_CAP = 10**7


@dataclass
class LocalOptimalityReport:
    ok: bool
    offending: list[int] = field(default_factory=list)
    reason: str = ""

    def __bool__(self):
        return self.ok


def check_local_optimality(model: HierarchicalModel) -> LocalOptimalityReport:
    """Whether gluing locally optimal template policies is globally optimal.

    Holds when the template has a single exit, has no choices, or the model
    uses success-target semantics for two exits.
    """
    t = model.template
    if t.n_exits == 1 or not t.pmdp.has_choices() or model.mode is Mode.SUCCESS:
        return LocalOptimalityReport(True)
    return LocalOptimalityReport(
        False,
        list(model.call_indices),
        f"template has {t.n_exits} exits and nondeterministic choices",
    )


@dataclass
class SlotRegion:
    """Interval for every slot of the uncertain macro: exit probabilities and reward per call."""

    plo: np.ndarray
    phi: np.ndarray
    rlo: np.ndarray
    rhi: np.ndarray

    def center(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.plo + self.phi) / 2, (self.rlo + self.rhi) / 2

    def is_point(self) -> bool:
        return bool(np.all(self.plo == self.phi) and np.all(self.rlo == self.rhi))


class UncertainMacro:
    """Macro skeleton whose call states carry symbolic exit-probability and reward slots.

    Slot ``k`` belongs to the call state ``call_state[k]``; its exit
    probability slots point to the macro states in ``succ[k]``.
    """

    def __init__(self, model: HierarchicalModel):
        self.model = model
        n = len(model.states)
        self.n = n
        rows, cols, vals, rew = [], [], [], []
        group_ptr = [0]
        state_ptr = [0]
        calls, succ = [], []
        r = 0
        for i, st in enumerate(model.states):
            if isinstance(st, Call):
                calls.append(i)
                succ.append(st.exits)
            elif i not in model.targets:
                for _, row in st.actions:
                    for t, p in row:
                        rows.append(r); cols.append(t); vals.append(float(p))
                    rew.append(float(st.reward))
                    r += 1
                    group_ptr.append(r)
            state_ptr.append(len(group_ptr) - 1)
        self.base = ChoiceModel(
            sp.csr_matrix((vals, (rows, cols)), shape=(r, n)), np.array(rew),
            np.array(group_ptr), np.array(state_ptr), model.initial, np.zeros(n),
        )
        y = model.template.n_exits
        self.y = y
        self.call_state = np.asarray(calls, dtype=np.int64)
        self.succ = np.asarray(succ, dtype=np.int64).reshape(len(calls), y)
        self.slot_of = {int(s): k for k, s in enumerate(calls)}
        targets = np.zeros(n, dtype=bool)
        targets[list(model.targets)] = True
        self.targets = targets

    @property
    def n_calls(self) -> int:
        return len(self.call_state)

    def slot_names(self) -> list[str]:
        names = []
        for s in self.call_state:
            nm = self.model.states[s].name
            names.extend(f"p[{nm},{j}]" for j in range(self.y))
            names.append(f"q[{nm}]")
        return names

    def with_region(self, region: SlotRegion) -> IntervalModel:
        return IntervalModel(self.base, self.call_state, self.succ, region.plo, region.phi,
                             region.rlo, region.rhi, self.targets)

    def instantiate(self, probs: np.ndarray, rewards: np.ndarray) -> ChoiceModel:
        """Parameter-free macro MDP with every slot set to a point value."""
        base = self.base
        n = self.n
        state_rows: list[tuple[int, int]] = []  # (state, row id in combined list)
        is_call = np.zeros(n, dtype=bool)
        is_call[self.call_state] = True
        rs = base.row_state()
        coo = base.P.tocoo()
        rows_all = [coo.row]
        cols_all = [coo.col]
        vals_all = [coo.data]
        k = len(self.call_state)
        call_rows = base.n_rows + np.arange(k)
        rows_all.append(np.repeat(call_rows, self.y))
        cols_all.append(self.succ.ravel())
        vals_all.append(np.asarray(probs, dtype=float).ravel())
        row_state = np.concatenate((rs, self.call_state))
        reward = np.concatenate((base.reward, np.asarray(rewards, dtype=float)))
        order = np.argsort(row_state, kind="stable")
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        P = sp.csr_matrix(
            (np.concatenate(vals_all), (inv[np.concatenate(rows_all)], np.concatenate(cols_all))),
            shape=(len(order), n),
        )
        # one row per action group in the instantiated macro
        counts = np.bincount(row_state, minlength=n)
        return ChoiceModel(P, reward[order], np.arange(len(order) + 1), np.concatenate(([0], np.cumsum(counts))),
                           self.model.initial, np.zeros(n))


def build_uncertain_macro(model: HierarchicalModel) -> UncertainMacro:
    return UncertainMacro(model)


def suitable_region(umacro: UncertainMacro,
                    sources: Mapping[int, ResultBounds | ResultVector]) -> SlotRegion:
    """Slot intervals from per-call sound bounds; exact result vectors give point intervals."""
    k, y = umacro.n_calls, umacro.y
    plo = np.empty((k, y)); phi = np.empty((k, y))
    rlo = np.empty(k); rhi = np.empty(k)
    for slot, s in enumerate(umacro.call_state):
        src = sources.get(int(s))
        if src is None:
            raise CoverageGap(f"call state {umacro.model.states[s].name} has no bounds source")
        if isinstance(src, ResultVector):
            lo = hi = src
        else:
            lo, hi = src.lower, src.upper
        plo[slot] = lo.probs
        phi[slot] = hi.probs
        rlo[slot] = lo.reward
        rhi[slot] = hi.reward
    return SlotRegion(plo, phi, rlo, rhi)


@dataclass
class BaselineResult:
    value: float
    policy: Policy
    results: dict[int, ResultVector]
    distinct_checks: int


def _analyzer(model: HierarchicalModel, eps: float) -> TemplateAnalyzer:
    return TemplateAnalyzer(model.template, model.mode, model.success_exit, eps)


def solve_calls(model: HierarchicalModel, analyzer: TemplateAnalyzer | None = None,
                eps: float = DEFAULT_EPS) -> tuple[dict[int, ResultVector], int]:
    """check_one for every call state, memoised on identical valuations."""
    analyzer = analyzer or _analyzer(model, eps)
    memo: dict[tuple, ResultVector] = {}
    out = {}
    for i in model.call_indices:
        v = tuple(model.states[i].valuation)
        if v not in memo:
            memo[v] = analyzer.check_one(v)
        out[i] = memo[v]
    return out, len(memo)


def enumerate_baseline(model: HierarchicalModel, eps: float = DEFAULT_EPS,
                       analyzer: TemplateAnalyzer | None = None) -> BaselineResult:
    """Solve every call, instantiate the macro with the exact results, solve the macro."""
    results, distinct = solve_calls(model, analyzer, eps)
    um = UncertainMacro(model)
    probs = np.array([results[int(s)].probs for s in um.call_state]).reshape(um.n_calls, um.y)
    rewards = np.array([results[int(s)].reward for s in um.call_state])
    values, policy = max_expected_reward(um.instantiate(probs, rewards), eps)
    return BaselineResult(float(values.values[model.initial]), policy, results, distinct)


def flat_state_count(model: HierarchicalModel) -> int:
    t = model.template
    inner = t.pmdp.n_states - t.n_exits - 1
    return len(model.states) + model.n_calls * inner


def flatten(model: HierarchicalModel, cap: int = DEFAULT_FLAT_CAP, eps: float = DEFAULT_EPS) -> ChoiceModel:
    """Explicit hierarchical MDP: one template copy spliced in per call state.

    The entry copy takes the call state's index, template exits are rewired to
    the macro successors.  In success-target mode each copy keeps only the
    actions of its success-maximising local policy.
    """
    size = flat_state_count(model)
    if size > cap:
        raise CapExceeded(f"flat model would have {size} states (cap {cap})")
    t = model.template
    analyzer = _analyzer(model, eps)
    ct = analyzer.compiled
    nt = ct.n
    n_macro = len(model.states)
    exits = list(t.exits)
    inner_states = [s for s in range(nt) if s != ct.initial and s not in exits]
    inner_pos = np.full(nt, -1, dtype=np.int64)
    inner_pos[inner_states] = np.arange(len(inner_states))

    row_state_parts, col_parts, row_parts, val_parts, rew_parts, grp_parts = [], [], [], [], [], []
    n_rows = 0
    um = UncertainMacro(model)
    base = um.base
    if base.n_rows:
        coo = base.P.tocoo()
        row_state_parts.append(base.row_state())
        row_parts.append(coo.row)
        col_parts.append(coo.col)
        val_parts.append(coo.data)
        rew_parts.append(base.reward)
        n_rows = base.n_rows

    memo: dict[tuple, tuple] = {}
    next_id = n_macro
    for i in model.call_indices:
        st = model.states[i]
        v = tuple(st.valuation)
        if v not in memo:
            inst = ct.instantiate(v)
            keep_rows = np.arange(inst.n_rows)
            if model.mode is Mode.SUCCESS:
                reach = inst.with_objective(reward=np.zeros(inst.n_rows), terminal=ct.exit_terminal(analyzer.success_exit))
                sol = solve_game(reach, "max", "max", eps)
                chosen = sol.rows[sol.rows >= 0]
                keep_rows = np.sort(chosen)
            sub = inst.P[keep_rows].tocoo()
            memo[v] = (keep_rows, sub, inst.reward[keep_rows], ct.row_state[keep_rows])
        keep_rows, sub, rew, rstate = memo[v]
        mapping = np.empty(nt, dtype=np.int64)
        mapping[ct.initial] = i
        for j, e in enumerate(exits):
            mapping[e] = st.exits[j]
        mapping[inner_states] = next_id + inner_pos[inner_states]
        next_id += len(inner_states)
        row_state_parts.append(mapping[rstate])
        row_parts.append(sub.row + n_rows)
        col_parts.append(mapping[sub.col])
        val_parts.append(sub.data)
        rew_parts.append(rew)
        n_rows += len(keep_rows)

    n_flat = next_id
    row_state = np.concatenate(row_state_parts) if row_state_parts else np.zeros(0, dtype=np.int64)
    order = np.argsort(row_state, kind="stable")
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    rows = np.concatenate(row_parts) if row_parts else np.zeros(0, dtype=np.int64)
    P = sp.csr_matrix(
        (np.concatenate(val_parts) if val_parts else np.zeros(0), (inv[rows], np.concatenate(col_parts) if col_parts else rows)),
        shape=(n_rows, n_flat),
    )
    reward = np.concatenate(rew_parts)[order] if rew_parts else np.zeros(0)
    counts = np.bincount(row_state, minlength=n_flat)
    return ChoiceModel(P, reward, np.arange(n_rows + 1), np.concatenate(([0], np.cumsum(counts))),
                       model.initial, np.zeros(n_flat))


def flatten_and_solve(model: HierarchicalModel, cap: int = DEFAULT_FLAT_CAP, eps: float = DEFAULT_EPS) -> float:
    """Monolithic maximal expected reward of the explicit hierarchical MDP."""
    values, _ = max_expected_reward(flatten(model, cap, eps), eps)
    return float(values.values[model.initial])
