"""Parameter lifting of the template over rectangular regions.

The template is compiled once into sparse coefficient matrices over the set
of monomials it uses, so instantiating it at a valuation or at a region
vertex is a sparse matrix-vector product.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import GraphChange, NotWellDefined
from .expr import MAX_VERTEX_PARAMS
from .model import Mode, Region, ResultBounds, ResultVector, Template
from .numerics import (
    DEFAULT_EPS,
    ChoiceModel,
    induced_chain,
    policy_value,
    reachability_probability,
    solve_game,
)

_PROB_TOL = 1e-12


class CompiledTemplate:
    """Numeric skeleton of a template with expression coefficients over monomials."""

    def __init__(self, template: Template):
        self.template = template
        m = template.pmdp
        self.n = m.n_states
        self.n_params = len(m.params)
        mono_index: dict[tuple[int, ...], int] = {}

        def mono_id(mono):
            if mono not in mono_index:
                mono_index[mono] = len(mono_index)
            return mono_index[mono]

        e_row, e_col, c_i, c_j, c_v = [], [], [], [], []
        r_i, r_j, r_v = [], [], []
        group_ptr = [0]
        state_ptr = [0]
        row_state = []
        local = []
        nonconst = []
        r = 0
        for s in range(m.n_states):
            for coeff, mono in m.rewards[s].terms:
                r_i.append(s); r_j.append(mono_id(mono)); r_v.append(float(coeff))
            ps = set(m.rewards[s].params)
            if s not in m.targets:
                for choice in m.actions[s]:
                    for t, e in choice.transitions:
                        k = len(e_row)
                        e_row.append(r)
                        e_col.append(t)
                        nonconst.append(not e.is_constant())
                        for coeff, mono in e.terms:
                            c_i.append(k); c_j.append(mono_id(mono)); c_v.append(float(coeff))
                        ps |= e.params
                    row_state.append(s)
                    r += 1
                    group_ptr.append(r)
            state_ptr.append(len(group_ptr) - 1)
            local.append(tuple(sorted(ps)))
        self.monomials = sorted(mono_index, key=mono_index.get)
        n_mono = len(self.monomials)
        self.entry_row = np.asarray(e_row, dtype=np.int64)
        self.entry_col = np.asarray(e_col, dtype=np.int64)
        self.entry_nonconst = np.asarray(nonconst, dtype=bool)
        self.C = sp.csr_matrix((c_v, (c_i, c_j)), shape=(len(e_row), n_mono))
        self.R = sp.csr_matrix((r_v, (r_i, r_j)), shape=(self.n, n_mono))
        self.group_ptr = np.asarray(group_ptr, dtype=np.int64)
        self.state_ptr = np.asarray(state_ptr, dtype=np.int64)
        self.row_state = np.asarray(row_state, dtype=np.int64)
        self.n_rows = r
        self.local_params = local
        self.initial = m.initial
        self.exits = template.exits
        self.has_choices = m.has_choices()
        # monomial -> parameter incidence for vectorised evaluation
        self._mono_params = [np.asarray(mono, dtype=np.int64) for mono in self.monomials]

    def monomial_values(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([float(np.prod(x[ix])) if len(ix) else 1.0 for ix in self._mono_params])

    def instantiate(self, x: Sequence[float], check: bool = True) -> ChoiceModel:
        mv = self.monomial_values(x)
        probs = self.C @ mv
        rewards = self.R @ mv
        if check:
            if np.any(probs < -_PROB_TOL) or np.any(probs > 1 + _PROB_TOL):
                raise NotWellDefined("valuation yields a probability outside [0, 1]")
            if np.any(rewards < -_PROB_TOL):
                raise NotWellDefined("valuation yields a negative reward")
        P = sp.csr_matrix((probs, (self.entry_row, self.entry_col)), shape=(self.n_rows, self.n))
        return ChoiceModel(P, rewards[self.row_state], self.group_ptr, self.state_ptr, self.initial, np.zeros(self.n))

    def exit_terminal(self, exit_pos: int) -> np.ndarray:
        t = np.zeros(self.n)
        t[self.exits[exit_pos]] = 1.0
        return t


class VertexRelaxation:
    """Each action of each state is expanded into one row per vertex of the
    region projected onto the parameters occurring at that state."""

    def __init__(self, compiled: CompiledTemplate, region: Region):
        self.compiled = compiled
        self.region = region
        ct = compiled
        lower = np.asarray(region.lower, dtype=float)
        upper = np.asarray(region.upper, dtype=float)
        if np.any(lower > upper):
            raise NotWellDefined("region lower bound exceeds upper bound")
        sig_of_state = ct.local_params
        if any(len(sig) > MAX_VERTEX_PARAMS for sig in sig_of_state):
            raise ValueError(f"more than {MAX_VERTEX_PARAMS} parameters at one state")
        n_vert_state = np.array([1 << len(sig) for sig in sig_of_state], dtype=np.int64)
        nv_row = n_vert_state[ct.row_state]
        row_start = np.concatenate(([0], np.cumsum(nv_row)))
        self.n_vertices = n_vert_state
        entry_state = ct.row_state[ct.entry_row]

        signatures: dict[tuple[int, ...], list[int]] = {}
        for s, sig in enumerate(sig_of_state):
            signatures.setdefault(sig, []).append(s)

        total_rows = int(row_start[-1])
        rew = np.zeros(total_rows)
        rows_out, cols_out, vals_out = [], [], []
        row_vertex = np.zeros(total_rows, dtype=np.int64)
        state_sig_id = np.zeros(ct.n, dtype=np.int64)
        sig_list = list(signatures)
        for k, sig in enumerate(sig_list):
            state_sig_id[signatures[sig]] = k
        entry_sig = state_sig_id[entry_state]
        row_sig = state_sig_id[ct.row_state] if ct.n_rows else np.zeros(0, dtype=np.int64)
        for k, sig in enumerate(sig_list):
            e_mask = entry_sig == k
            r_mask = row_sig == k
            e_idx = np.flatnonzero(e_mask)
            r_idx = np.flatnonzero(r_mask)
            for v, bits in enumerate(itertools.product((0, 1), repeat=len(sig))):
                x = lower.copy()
                for p, b in zip(sig, bits):
                    x[p] = upper[p] if b else lower[p]
                mv = ct.monomial_values(x)
                if len(e_idx):
                    vals = ct.C[e_idx] @ mv
                    if np.any(vals < -_PROB_TOL) or np.any(vals > 1 + _PROB_TOL):
                        raise NotWellDefined("region admits a probability outside [0, 1]")
                    if np.any(ct.entry_nonconst[e_idx] & (vals <= 0.0)):
                        raise GraphChange("region changes the support of a distribution")
                    rows_out.append(row_start[ct.entry_row[e_idx]] + v)
                    cols_out.append(ct.entry_col[e_idx])
                    vals_out.append(vals)
                if len(r_idx):
                    srew = ct.R[ct.row_state[r_idx]] @ mv
                    if np.any(srew < -_PROB_TOL):
                        raise NotWellDefined("region admits a negative reward")
                    rew[row_start[r_idx] + v] = srew
                    row_vertex[row_start[r_idx] + v] = v
        if rows_out:
            P = sp.csr_matrix(
                (np.concatenate(vals_out), (np.concatenate(rows_out), np.concatenate(cols_out))),
                shape=(total_rows, ct.n),
            )
        else:
            P = sp.csr_matrix((total_rows, ct.n))
        group_ptr = row_start[ct.group_ptr]
        self.row_vertex = row_vertex
        self.model = ChoiceModel(P, rew, group_ptr, ct.state_ptr, ct.initial, np.zeros(ct.n))

    def vertex_valuation(self, state: int, vertex: int) -> tuple[float, ...]:
        sig = self.compiled.local_params[state]
        x = list(self.region.lower)
        for j, p in enumerate(sig):
            bit = (vertex >> (len(sig) - 1 - j)) & 1
            x[p] = self.region.upper[p] if bit else self.region.lower[p]
        return tuple(x)


def to_region(valuations: Iterable[Sequence[float]]) -> Region:
    """Smallest box containing every valuation."""
    arr = np.asarray([tuple(v) for v in valuations], dtype=float)
    if arr.size == 0 and len(arr) == 0:
        raise ValueError("to_region needs at least one valuation")
    if arr.ndim == 1:
        arr = arr.reshape(len(arr), 0)
    return Region(tuple(arr.min(axis=0).tolist()), tuple(arr.max(axis=0).tolist()))


class TemplateAnalyzer:
    """check_one / check_set for one template under a fixed result semantics."""

    def __init__(self, template: Template, mode: Mode = Mode.SINGLE, success_exit: int | None = None,
                 eps: float = DEFAULT_EPS):
        self.template = template
        self.mode = mode
        self.success_exit = 0 if success_exit is None else success_exit
        self.eps = eps
        self.compiled = CompiledTemplate(template)
        self.n_exits = template.n_exits

    # individual ---------------------------------------------------------
    def check_one(self, v: Sequence[float]) -> ResultVector:
        ct = self.compiled
        model = ct.instantiate(v)
        y = self.n_exits
        if self.mode is Mode.SUCCESS:
            reach = model.with_objective(reward=np.zeros(model.n_rows), terminal=ct.exit_terminal(self.success_exit))
            sol = solve_game(reach, "max", "max", self.eps)
            policy = sol.policy
            reward = policy_value(model, policy).values[ct.initial]
        else:
            sol = solve_game(model, "max", "max", self.eps)
            policy = sol.policy
            reward = sol.values.values[ct.initial]
        if y == 1:
            probs = (1.0,)
        else:
            probs = tuple(
                float(reachability_probability(model, policy, [ct.exits[j]], self.eps).values[ct.initial])
                for j in range(y)
            )
        return ResultVector(tuple(min(1.0, max(0.0, p)) for p in probs), float(reward))

    # set-based ----------------------------------------------------------
    def relax(self, region: Region) -> VertexRelaxation:
        return VertexRelaxation(self.compiled, region)

    def check_set(self, region: Region) -> ResultBounds:
        ct = self.compiled
        relax = self.relax(region)
        model = relax.model
        y = self.n_exits
        eps = self.eps
        success = self.mode is Mode.SUCCESS
        # the policy class in success mode is not reward-optimal, so the
        # lower reward bound must range over all policies when choices exist
        lb_actions = "min" if (success and ct.has_choices) else "max"
        lo_sol = solve_game(model, lb_actions, "min", eps)
        hi_sol = solve_game(model, "max", "max", eps)
        r_lo = max(0.0, lo_sol.values.values[ct.initial] - lo_sol.values.residual)
        r_hi = hi_sol.values.values[ct.initial] + hi_sol.values.residual
        zero = np.zeros(model.n_rows)
        if y == 1:
            p_lo, p_hi = [1.0], [1.0]
        elif success:
            reach = model.with_objective(reward=zero, terminal=ct.exit_terminal(self.success_exit))
            a = solve_game(reach, "max", "min", eps).values
            b = solve_game(reach, "max", "max", eps).values
            s_lo = min(1.0, max(0.0, a.values[ct.initial] - a.residual))
            s_hi = min(1.0, max(0.0, b.values[ct.initial] + b.residual))
            p_lo, p_hi = [0.0] * y, [0.0] * y
            p_lo[self.success_exit], p_hi[self.success_exit] = s_lo, s_hi
            other = 1 - self.success_exit
            p_lo[other], p_hi[other] = 1.0 - s_hi, 1.0 - s_lo
        else:
            p_lo, p_hi = [], []
            for j in range(y):
                reach = model.with_objective(reward=zero, terminal=ct.exit_terminal(j))
                a = solve_game(reach, "min", "min", eps).values
                b = solve_game(reach, "max", "max", eps).values
                p_lo.append(min(1.0, max(0.0, a.values[ct.initial] - a.residual)))
                p_hi.append(min(1.0, max(0.0, b.values[ct.initial] + b.residual)))
        return ResultBounds(ResultVector(tuple(p_lo), float(r_lo)), ResultVector(tuple(p_hi), float(r_hi)))


_ANALYZERS: dict[tuple, TemplateAnalyzer] = {}


def _analyzer(template: Template, mode: Mode, success_exit, eps) -> TemplateAnalyzer:
    key = (id(template), mode, success_exit, eps)
    hit = _ANALYZERS.get(key)
    if hit is None or hit.template is not template:
        if len(_ANALYZERS) > 32:
            _ANALYZERS.clear()
        hit = _ANALYZERS[key] = TemplateAnalyzer(template, mode, success_exit, eps)
    return hit


def check_one(template: Template, v: Sequence[float], mode: Mode = Mode.SINGLE,
              success_exit: int | None = None, eps: float = DEFAULT_EPS) -> ResultVector:
    """Exact result vector of the template instantiated at ``v``."""
    return _analyzer(template, mode, success_exit, eps).check_one(v)


def bound_results_for_set(template: Template, region: Region, mode: Mode = Mode.SINGLE,
                          success_exit: int | None = None, eps: float = DEFAULT_EPS) -> ResultBounds:
    """Result bounds valid for every instantiation inside ``region``."""
    return _analyzer(template, mode, success_exit, eps).check_set(region)
