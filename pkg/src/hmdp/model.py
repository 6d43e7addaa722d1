"""Domain types for parametric MDPs and hierarchical models, plus validation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .errors import NotWellDefined
from .expr import MultilinearExpr, to_fraction

Valuation = tuple  # one value per parameter index

PROB_TOL = 1e-9


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    location: str = ""

    def __str__(self):
        return f"{self.location}: {self.message}" if self.location else self.message


@dataclass(frozen=True)
class Choice:
    label: str
    transitions: tuple[tuple[int, MultilinearExpr], ...]


@dataclass(frozen=True)
class Pmdp:
    """A (parametric) MDP.  Parameter-free models simply have ``params == ()``."""

    states: tuple[str, ...]
    actions: tuple[tuple[Choice, ...], ...]
    rewards: tuple[MultilinearExpr, ...]
    initial: int
    params: tuple[str, ...] = ()
    targets: frozenset[int] = frozenset()

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_choices(self) -> int:
        return sum(len(a) for a in self.actions)

    @property
    def n_transitions(self) -> int:
        return sum(len(c.transitions) for acts in self.actions for c in acts)

    def is_parameter_free(self) -> bool:
        return not self.params

    def has_choices(self) -> bool:
        return any(len(a) > 1 for s, a in enumerate(self.actions) if s not in self.targets)

    def state_index(self, name: str) -> int:
        return self.states.index(name)


@dataclass(frozen=True)
class Region:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @classmethod
    def point(cls, v: Sequence[float]) -> Region:
        v = tuple(float(x) for x in v)
        return cls(v, v)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def is_point(self) -> bool:
        return self.lower == self.upper

    def contains(self, v: Sequence[float], tol: float = 0.0) -> bool:
        return all(lo - tol <= x <= hi + tol for lo, x, hi in zip(self.lower, v, self.upper))

    def center(self) -> tuple[float, ...]:
        return tuple((lo + hi) / 2 for lo, hi in zip(self.lower, self.upper))

    def widths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in zip(self.lower, self.upper))


@dataclass(frozen=True)
class Policy:
    """Memoryless policy; ``choice[s] == -1`` marks states without a decision."""

    choice: tuple[int, ...]

    def __getitem__(self, s: int) -> int:
        return self.choice[s]

    def __len__(self):
        return len(self.choice)


@dataclass(frozen=True)
class Template:
    """The parametric subMDP shared by all call states.

    ``pmdp.initial`` is the entry state; ``exits`` are the ordered successor
    stand-ins and form the template's target set.
    """

    pmdp: Pmdp
    exits: tuple[int, ...]
    box: Region
    name: str = "template"

    @property
    def n_exits(self) -> int:
        return len(self.exits)

    @property
    def params(self) -> tuple[str, ...]:
        return self.pmdp.params


class Mode(enum.Enum):
    SINGLE = "single"
    SUCCESS = "success"


@dataclass(frozen=True)
class Concrete:
    name: str
    actions: tuple[tuple[str, tuple[tuple[int, Fraction], ...]], ...] = ()
    reward: Fraction = Fraction(0)


@dataclass(frozen=True)
class Call:
    name: str
    valuation: tuple[float, ...]
    exits: tuple[int, ...]


@dataclass(frozen=True)
class HierarchicalModel:
    """Macro skeleton plus template: the factored form of a hierarchical MDP."""

    states: tuple[Concrete | Call, ...]
    initial: int
    template: Template
    targets: frozenset[int]
    mode: Mode = Mode.SINGLE
    success_exit: int | None = None
    name: str = "macro"

    @property
    def call_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.states) if isinstance(s, Call))

    @property
    def n_calls(self) -> int:
        return sum(1 for s in self.states if isinstance(s, Call))

    def state_index(self, name: str) -> int:
        for i, s in enumerate(self.states):
            if s.name == name:
                return i
        raise KeyError(name)


@dataclass(frozen=True)
class ResultVector:
    probs: tuple[float, ...]
    reward: float

    def as_tuple(self) -> tuple[float, ...]:
        return self.probs + (self.reward,)


@dataclass(frozen=True)
class ResultBounds:
    lower: ResultVector
    upper: ResultVector

    @classmethod
    def exact(cls, res: ResultVector) -> ResultBounds:
        return cls(res, res)

    @classmethod
    def trivial(cls, n_exits: int) -> ResultBounds:
        return cls(
            ResultVector((0.0,) * n_exits, 0.0),
            ResultVector((1.0,) * n_exits, float("inf")),
        )

    def contains(self, res: ResultVector, tol: float = 0.0) -> bool:
        lo, hi, x = self.lower.as_tuple(), self.upper.as_tuple(), res.as_tuple()
        return all(a - tol <= v <= b + tol for a, v, b in zip(lo, x, hi))


# --------------------------------------------------------------------------
# validation


def _validate_pmdp(m: Pmdp, where: str = "") -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    n = m.n_states
    pre = f"{where}" if where else ""

    def loc(s, a=None):
        base = f"{pre}state {m.states[s]}" if 0 <= s < n else f"{pre}state #{s}"
        return base if a is None else f"{base}, action {a}"

    if len(m.actions) != n or len(m.rewards) != n:
        diags.append(Diagnostic("shape", "actions/rewards length differs from state count", pre.rstrip(": ")))
        return diags
    if not 0 <= m.initial < n:
        diags.append(Diagnostic("initial", "initial state out of range", pre.rstrip(": ")))
    for t in m.targets:
        if not 0 <= t < n:
            diags.append(Diagnostic("target", f"target index {t} out of range", pre.rstrip(": ")))
    nparams = len(m.params)
    for s in range(n):
        acts = m.actions[s]
        if s in m.targets:
            if acts:
                diags.append(Diagnostic("target-actions", "target state has outgoing actions", loc(s)))
        elif not acts:
            diags.append(Diagnostic("no-action", "non-target state has no enabled action", loc(s)))
        bad = [i for i in m.rewards[s].params if i >= nparams]
        if bad:
            diags.append(Diagnostic("undeclared-param", "reward uses undeclared parameter", loc(s)))
        for choice in acts:
            succs = [t for t, _ in choice.transitions]
            if len(set(succs)) != len(succs):
                diags.append(Diagnostic("duplicate-successor", "duplicate successor in row", loc(s, choice.label)))
            if any(not 0 <= t < n for t in succs):
                diags.append(Diagnostic("successor-range", "successor out of range", loc(s, choice.label)))
            if any(i >= nparams for _, e in choice.transitions for i in e.params):
                diags.append(Diagnostic("undeclared-param", "transition uses undeclared parameter", loc(s, choice.label)))
            total = MultilinearExpr()
            for _, e in choice.transitions:
                total = total + e
            if total != MultilinearExpr.const(1):
                diags.append(Diagnostic("row-not-stochastic", "row not stochastic", loc(s, choice.label)))
    return diags


def region_diagnostics(m: Pmdp, region: Region, where: str = "", strict_support: bool = True) -> list[Diagnostic]:
    """Well-definedness (and, if ``strict_support``, graph preservation) of ``m`` over ``region``."""
    diags = []
    if len(region.lower) != len(m.params) or len(region.upper) != len(m.params):
        return [Diagnostic("region-dim", "region dimension differs from parameter count", where)]
    if any(lo > hi for lo, hi in zip(region.lower, region.upper)):
        return [Diagnostic("region-order", "region lower bound exceeds upper bound", where)]
    for s, acts in enumerate(m.actions):
        lo, _ = m.rewards[s].bounds(region.lower, region.upper)
        if lo < -PROB_TOL:
            diags.append(Diagnostic("negative-reward", "reward may be negative", f"{where}state {m.states[s]}"))
        for choice in acts:
            for t, e in choice.transitions:
                if e.is_zero():
                    continue
                lo, hi = e.bounds(region.lower, region.upper)
                place = f"{where}state {m.states[s]}, action {choice.label}, successor {m.states[t]}"
                if lo < -PROB_TOL or hi > 1 + PROB_TOL:
                    diags.append(Diagnostic("probability-range", "probability leaves [0, 1]", place))
                elif strict_support and not e.is_constant() and lo <= 0.0:
                    diags.append(Diagnostic("support-change", "support changes inside region", place))
    return diags


def _validate_template(t: Template) -> list[Diagnostic]:
    m = t.pmdp
    diags = _validate_pmdp(m, "template: ")
    if not t.exits:
        diags.append(Diagnostic("exits", "template declares no exits", "template"))
    if set(t.exits) != set(m.targets):
        diags.append(Diagnostic("exits", "template targets must be exactly its exits", "template"))
    if len(set(t.exits)) != len(t.exits):
        diags.append(Diagnostic("exits", "duplicate exit", "template"))
    if m.initial in t.exits:
        diags.append(Diagnostic("entry", "entry state is an exit", "template"))
    for e in t.exits:
        if 0 <= e < m.n_states and not m.rewards[e].is_zero():
            diags.append(Diagnostic("exit-reward", "exit state carries reward", f"template: state {m.states[e]}"))
    if not diags:
        diags.extend(region_diagnostics(m, t.box, "template box: "))
    return diags


def _validate_hierarchical(h: HierarchicalModel) -> list[Diagnostic]:
    diags = _validate_template(h.template)
    y = h.template.n_exits
    n = len(h.states)
    nparams = len(h.template.params)
    if not 0 <= h.initial < n:
        diags.append(Diagnostic("initial", "initial macro state out of range", "macro"))
    if h.mode is Mode.SINGLE and y != 1:
        diags.append(Diagnostic("mode-arity", f"single-successor mode requires one exit, template has {y}", "macro"))
    if h.mode is Mode.SUCCESS:
        if y != 2:
            diags.append(Diagnostic("mode-arity", f"success-target mode requires two exits, template has {y}", "macro"))
        if h.success_exit is None or not 0 <= h.success_exit < y:
            diags.append(Diagnostic("success-exit", "success exit index invalid", "macro"))
    names = [s.name for s in h.states]
    if len(set(names)) != len(names):
        diags.append(Diagnostic("duplicate-state", "duplicate macro state name", "macro"))
    for i, st in enumerate(h.states):
        where = f"macro state {st.name}"
        if isinstance(st, Call):
            if i in h.targets:
                diags.append(Diagnostic("call-target", "call state cannot be a target", where))
            if len(st.exits) != y:
                diags.append(Diagnostic("exit-arity", f"exit arity mismatch: {len(st.exits)} wired, template has {y}", where))
            if any(not 0 <= e < n for e in st.exits):
                diags.append(Diagnostic("exit-range", "exit wired to unknown macro state", where))
            if len(st.valuation) != nparams:
                diags.append(Diagnostic("valuation-arity", "valuation does not cover template parameters", where))
            elif not h.template.box.contains(st.valuation, tol=1e-12):
                diags.append(Diagnostic("valuation-box", "valuation outside admissible box", where))
        else:
            if i in h.targets:
                if st.actions:
                    diags.append(Diagnostic("target-actions", "target state has outgoing actions", where))
                continue
            if not st.actions:
                diags.append(Diagnostic("no-action", "non-target state has no enabled action", where))
            if st.reward < 0:
                diags.append(Diagnostic("negative-reward", "negative reward", where))
            for label, row in st.actions:
                if any(not 0 <= t < n for t, _ in row):
                    diags.append(Diagnostic("successor-range", "successor out of range", f"{where}, action {label}"))
                if any(p < 0 or p > 1 for _, p in row):
                    diags.append(Diagnostic("probability-range", "probability leaves [0, 1]", f"{where}, action {label}"))
                if sum((p for _, p in row), Fraction(0)) != 1:
                    diags.append(Diagnostic("row-not-stochastic", "row not stochastic", f"{where}, action {label}"))
    return diags


def validate(model) -> list[Diagnostic]:
    """All invariant violations of a :class:`Pmdp`, :class:`Template` or :class:`HierarchicalModel`."""
    if isinstance(model, HierarchicalModel):
        return _validate_hierarchical(model)
    if isinstance(model, Template):
        return _validate_template(model)
    if isinstance(model, Pmdp):
        return _validate_pmdp(model)
    raise TypeError(f"cannot validate {type(model).__name__}")


def instantiate(m: Pmdp, u: Sequence) -> Pmdp:
    """Substitute the valuation ``u`` everywhere, yielding a parameter-free model."""
    if len(u) != len(m.params):
        raise NotWellDefined(f"valuation has {len(u)} entries, model has {len(m.params)} parameters")
    exact = {i: to_fraction(x) for i, x in enumerate(u)}
    actions = []
    for s, acts in enumerate(m.actions):
        new_acts = []
        for choice in acts:
            row = []
            for t, e in choice.transitions:
                v = e.substitute(exact)
                p = v.constant_value()
                if p < 0 or p > 1:
                    raise NotWellDefined(
                        f"probability {float(p):.6g} at state {m.states[s]}, action {choice.label}"
                    )
                row.append((t, v))
            new_acts.append(Choice(choice.label, tuple(row)))
        actions.append(tuple(new_acts))
    rewards = []
    for s, r in enumerate(m.rewards):
        v = r.substitute(exact)
        if v.constant_value() < 0:
            raise NotWellDefined(f"negative reward at state {m.states[s]}")
        rewards.append(v)
    return Pmdp(m.states, tuple(actions), tuple(rewards), m.initial, (), m.targets)
