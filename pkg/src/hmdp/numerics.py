"""Value-iteration engines over sparse choice models.

A :class:`ChoiceModel` stores rows grouped into *actions* and actions grouped
into *states*.  Plain MDPs have one row per action; a vertex relaxation has
one row per region vertex inside each action, so a single backup can apply
one optimisation direction over vertices and another over actions.

Every engine runs Jacobi value iteration and periodically evaluates the
current greedy strategy exactly with a sparse linear solve.  The returned
values are those of the evaluated strategy once its Bellman residual is
below ``eps``; the residual is always reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .errors import DivergentReward, EngineError, SuitabilityViolation
from .model import Policy, Pmdp

DEFAULT_EPS = 1e-8
DEFAULT_MAX_ITER = 10**6
TIE_TOL = 1e-10


@dataclass
class ChoiceModel:
    """Sparse MDP/game structure.

    ``group_ptr[g]:group_ptr[g+1]`` are the rows of action group ``g`` and
    ``state_ptr[s]:state_ptr[s+1]`` the groups of state ``s``.  States without
    groups are absorbing with value ``terminal[s]``.
    """

    P: sp.csr_matrix
    reward: np.ndarray
    group_ptr: np.ndarray
    state_ptr: np.ndarray
    initial: int
    terminal: np.ndarray

    def __post_init__(self):
        self.P = sp.csr_matrix(self.P)
        self.reward = np.asarray(self.reward, dtype=float)
        self.group_ptr = np.asarray(self.group_ptr, dtype=np.int64)
        self.state_ptr = np.asarray(self.state_ptr, dtype=np.int64)
        self.terminal = np.asarray(self.terminal, dtype=float)
        if self.P.shape != (self.n_rows, self.n):
            raise ValueError("transition matrix shape mismatch")
        if np.any(np.diff(self.group_ptr) <= 0):
            raise ValueError("every action group needs at least one row")

    @property
    def n(self) -> int:
        return len(self.state_ptr) - 1

    @property
    def n_rows(self) -> int:
        return int(self.group_ptr[-1])

    @property
    def n_groups(self) -> int:
        return len(self.group_ptr) - 1

    @property
    def absorbing(self) -> np.ndarray:
        return np.diff(self.state_ptr) == 0

    def row_state(self) -> np.ndarray:
        groups_per_state = np.diff(self.state_ptr)
        group_state = np.repeat(np.arange(self.n), groups_per_state)
        return np.repeat(group_state, np.diff(self.group_ptr))

    def group_state(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), np.diff(self.state_ptr))

    def state_graph(self) -> sp.csr_matrix:
        """Boolean state-to-state adjacency over all rows."""
        rs = self.row_state()
        coo = self.P.tocoo()
        mask = coo.data > 0
        g = sp.csr_matrix(
            (np.ones(int(mask.sum())), (rs[coo.row[mask]], coo.col[mask])), shape=(self.n, self.n)
        )
        g.sum_duplicates()
        return g

    def restrict(self, keep: np.ndarray) -> ChoiceModel:
        """Sub-model on the (successor-closed) state mask ``keep``."""
        keep = np.asarray(keep, dtype=bool)
        gs = self.group_state()
        rs = self.row_state()
        row_keep = keep[rs]
        group_keep = keep[gs]
        P = self.P[np.flatnonzero(row_keep)][:, np.flatnonzero(keep)]
        rows_per_group = np.diff(self.group_ptr)[group_keep]
        groups_per_state = np.diff(self.state_ptr)[keep]
        new_index = np.cumsum(keep) - 1
        return ChoiceModel(
            P,
            self.reward[row_keep],
            np.concatenate(([0], np.cumsum(rows_per_group))),
            np.concatenate(([0], np.cumsum(groups_per_state))),
            int(new_index[self.initial]),
            self.terminal[keep],
        )

    def with_objective(self, reward=None, terminal=None) -> ChoiceModel:
        return ChoiceModel(
            self.P,
            self.reward if reward is None else reward,
            self.group_ptr,
            self.state_ptr,
            self.initial,
            self.terminal if terminal is None else terminal,
        )


def choice_model_from_pmdp(m: Pmdp) -> ChoiceModel:
    """Numeric form of a parameter-free :class:`Pmdp` (targets become absorbing)."""
    if m.params:
        raise ValueError("model is parametric; instantiate it first")
    rows, cols, vals, rew = [], [], [], []
    group_ptr = [0]
    state_ptr = [0]
    r = 0
    for s in range(m.n_states):
        if s not in m.targets:
            reward = float(m.rewards[s].constant_value())
            for choice in m.actions[s]:
                for t, e in choice.transitions:
                    rows.append(r)
                    cols.append(t)
                    vals.append(float(e.constant_value()))
                rew.append(reward)
                r += 1
                group_ptr.append(r)
        state_ptr.append(len(group_ptr) - 1)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(r, m.n_states))
    return ChoiceModel(P, np.array(rew), np.array(group_ptr), np.array(state_ptr), m.initial, np.zeros(m.n_states))


@dataclass
class ValueVector:
    values: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    @property
    def initial_value(self) -> float:
        return float(self.values[self.initial])

    initial: int = 0


@dataclass
class VisitVector:
    values: np.ndarray


# ---------------------------------------------------------------------------
# graph prechecks


def _attractor(n, row_state, indptr, indices, lo, hi, absorbing) -> np.ndarray:
    """States from which every choice (including nature's) reaches an absorbing state a.s.

    A row escapes the complement once the mass it must put into the attractor
    is positive: ``sum(lo inside) > 0`` or ``sum(hi outside) < 1``.
    """
    n_rows = len(row_state)
    nnz = len(indices)
    entry_row = np.repeat(np.arange(n_rows), np.diff(indptr))
    hi_out = np.bincount(entry_row, weights=hi, minlength=n_rows).tolist()
    lo_in = [0.0] * n_rows
    by_col = sp.csr_matrix((np.arange(1, nnz + 1), indices, indptr), shape=(n_rows, n)).tocsc()
    col_ptr = by_col.indptr.tolist()
    col_rows = by_col.indices.tolist()
    col_pos = (by_col.data - 1).tolist()
    lo_l = np.asarray(lo, dtype=float).tolist()
    hi_l = np.asarray(hi, dtype=float).tolist()
    rs = np.asarray(row_state).tolist()
    pend = np.bincount(row_state, minlength=n).tolist() if n_rows else [0] * n
    esc = [False] * n_rows
    attr = np.asarray(absorbing, dtype=bool).tolist()
    stack = [s for s in range(n) if attr[s]]
    while stack:
        t = stack.pop()
        for k in range(col_ptr[t], col_ptr[t + 1]):
            r = col_rows[k]
            if esc[r]:
                continue
            pos = col_pos[k]
            lo_in[r] += lo_l[pos]
            hi_out[r] -= hi_l[pos]
            if lo_in[r] > 0 or hi_out[r] < 1 - 1e-12:
                esc[r] = True
                s = rs[r]
                pend[s] -= 1
                if pend[s] == 0 and not attr[s]:
                    attr[s] = True
                    stack.append(s)
    return np.array(attr, dtype=bool)


def _reachable(graph: sp.csr_matrix, source: int) -> np.ndarray:
    order = csgraph.breadth_first_order(graph, source, directed=True, return_predecessors=False)
    mask = np.zeros(graph.shape[0], dtype=bool)
    mask[order] = True
    return mask


def proper_states(model: ChoiceModel, lo=None, hi=None) -> np.ndarray:
    """Mask of states where every strategy profile reaches an absorbing state a.s."""
    P = model.P
    data_lo = P.data if lo is None else lo
    data_hi = P.data if hi is None else hi
    return _attractor(
        model.n, model.row_state(), P.indptr, P.indices,
        np.asarray(data_lo, dtype=float), np.asarray(data_hi, dtype=float), model.absorbing,
    )


def _prepare(model: ChoiceModel) -> tuple[ChoiceModel, np.ndarray]:
    reach = _reachable(model.state_graph(), model.initial)
    good = proper_states(model)
    if np.any(reach & ~good):
        bad = np.flatnonzero(reach & ~good)
        raise DivergentReward(
            f"{len(bad)} reachable state(s) can avoid the targets forever (e.g. state {int(bad[0])})"
        )
    return model.restrict(reach), np.flatnonzero(reach)


# ---------------------------------------------------------------------------
# solver core


def _segment_best(values: np.ndarray, starts: np.ndarray, maximize: bool):
    """Per-segment optimum and the first (lowest-index) row attaining it."""
    if len(starts) == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    red = np.maximum.reduceat if maximize else np.minimum.reduceat
    best = red(values, starts)
    counts = np.diff(np.append(starts, len(values)))
    rep = np.repeat(best, counts)
    tol = TIE_TOL * (1.0 + np.abs(rep))
    hit = values >= rep - tol if maximize else values <= rep + tol
    idx = np.where(hit, np.arange(len(values)), len(values))
    return best, np.minimum.reduceat(idx, starts)


class _GameOperator:
    def __init__(self, model: ChoiceModel, action_max: bool, vertex_max: bool):
        self.m = model
        self.action_max = action_max
        self.vertex_max = vertex_max
        self.n = model.n
        self.active = ~model.absorbing
        self.group_starts = model.group_ptr[:-1]
        self.state_starts = model.state_ptr[:-1][self.active]
        zero = sp.csr_matrix((1, self.n))
        self.P_ext = sp.vstack([model.P, zero]).tocsr()
        self.r_ext = np.append(model.reward, 0.0)

    def start(self):
        return self.m.terminal.copy()

    def backup(self, v):
        q = self.m.reward + self.m.P @ v
        gbest, grow = _segment_best(q, self.group_starts, self.vertex_max)
        sbest, sgroup = _segment_best(gbest, self.state_starts, self.action_max)
        new = self.m.terminal.copy()
        new[self.active] = sbest
        strat = np.full(self.n, -1, dtype=np.int64)
        strat[self.active] = grow[sgroup]
        return new, strat

    def chain(self, strat):
        idx = np.where(strat < 0, self.m.n_rows, strat)
        P = self.P_ext[idx]
        c = self.r_ext[idx] + np.where(strat < 0, self.m.terminal, 0.0)
        return P, c


def _evaluate(P: sp.csr_matrix, c: np.ndarray) -> np.ndarray | None:
    n = P.shape[0]
    A = (sp.identity(n, format="csc") - P.tocsc())
    try:
        x = spsolve(A, c)
    except Exception:  # singular factorisation
        return None
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        return None
    return x


def _solve(op, eps: float, max_iter: int):
    v = op.start()
    it = 0
    sweeps = 1
    while True:
        res = np.inf
        strat = None
        for _ in range(sweeps):
            new, strat = op.backup(v)
            it += 1
            res = float(np.max(np.abs(new - v))) if len(v) else 0.0
            v = new
            if res <= eps:
                break
        x = _evaluate(*op.chain(strat))
        if x is not None:
            x_new, strat2 = op.backup(x)
            r2 = float(np.max(np.abs(x_new - x))) if len(x) else 0.0
            if r2 <= eps:
                return x, strat2, it, r2
            if r2 < res:
                v = x_new
        if res <= eps:
            return v, op.backup(v)[1], it, res
        if it >= max_iter:
            raise EngineError(f"value iteration did not converge within {max_iter} iterations")
        sweeps = min(2 * sweeps, 512)


def _policy_from_rows(model: ChoiceModel, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-state (action index, vertex index) for chosen global rows."""
    n = model.n
    action = np.full(n, -1, dtype=np.int64)
    vertex = np.full(n, -1, dtype=np.int64)
    has = rows >= 0
    if np.any(has):
        group = np.searchsorted(model.group_ptr, rows[has], side="right") - 1
        states = np.flatnonzero(has)
        action[has] = group - model.state_ptr[states]
        vertex[has] = rows[has] - model.group_ptr[group]
    return action, vertex


@dataclass
class GameSolution:
    values: ValueVector
    policy: Policy
    vertex_choice: np.ndarray
    rows: np.ndarray


def solve_game(model: ChoiceModel, action_role: str = "max", vertex_role: str = "max",
               eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER) -> GameSolution:
    sub, keep = _prepare(model)
    op = _GameOperator(sub, action_role == "max", vertex_role == "max")
    x, strat, it, res = _solve(op, eps, max_iter)
    values = np.full(model.n, np.nan)
    values[keep] = x
    rows = np.full(model.n, -1, dtype=np.int64)
    # map sub-model rows back to the full model
    sub_action, sub_vertex = _policy_from_rows(sub, strat)
    action = np.full(model.n, -1, dtype=np.int64)
    vertex = np.full(model.n, -1, dtype=np.int64)
    action[keep] = sub_action
    vertex[keep] = sub_vertex
    # unreachable decision states default to their first action and vertex
    idle = ~model.absorbing
    idle[keep] = False
    action[idle] = 0
    vertex[idle] = 0
    has = action >= 0
    gidx = model.state_ptr[:-1][has] + action[has]
    rows[has] = model.group_ptr[gidx] + vertex[has]
    return GameSolution(ValueVector(values, it, res, model.initial), Policy(tuple(action.tolist())), vertex, rows)


# ---------------------------------------------------------------------------
# public engines


def max_expected_reward(m: Pmdp | ChoiceModel, eps: float = DEFAULT_EPS,
                        max_iter: int = DEFAULT_MAX_ITER) -> tuple[ValueVector, Policy]:
    """Maximal expected reward until the targets, with a lowest-index greedy optimal policy."""
    model = m if isinstance(m, ChoiceModel) else choice_model_from_pmdp(m)
    sol = solve_game(model, "max", "max", eps, max_iter)
    return sol.values, sol.policy


def induced_chain(model: ChoiceModel, policy: Policy | Sequence[int]) -> tuple[sp.csr_matrix, np.ndarray]:
    """Transition matrix and reward vector of the Markov chain under ``policy``."""
    choice = np.asarray(policy.choice if isinstance(policy, Policy) else policy, dtype=np.int64)
    active = ~model.absorbing
    if np.any(active & (choice < 0)):
        raise ValueError("policy is not total on non-absorbing states")
    if np.any(choice[active] >= np.diff(model.state_ptr)[active]):
        raise ValueError("policy chooses a disabled action")
    rows = np.full(model.n, model.n_rows, dtype=np.int64)
    g = model.state_ptr[:-1][active] + choice[active]
    rows[active] = model.group_ptr[g]
    P_ext = sp.vstack([model.P, sp.csr_matrix((1, model.n))]).tocsr()
    r_ext = np.append(model.reward, 0.0)
    return P_ext[rows], r_ext[rows]


def _reach_from_set(graph: sp.csr_matrix, sources: np.ndarray) -> np.ndarray:
    """States reachable from any state in the boolean mask ``sources``."""
    n = graph.shape[0]
    src = np.flatnonzero(sources)
    if len(src) == 0:
        return np.zeros(n, dtype=bool)
    coo = graph.tocoo()
    aug = sp.csr_matrix(
        (np.ones(coo.nnz + len(src)),
         (np.concatenate((coo.row, np.full(len(src), n))), np.concatenate((coo.col, src)))),
        shape=(n + 1, n + 1),
    )
    return _reachable(aug, n)[:n]


def _chain_reach(P: sp.csr_matrix, target: np.ndarray) -> np.ndarray:
    """States of the chain ``P`` that reach ``target`` with positive probability."""
    backward = (P > 0).astype(float).T.tocsr()
    return _reach_from_set(backward, target)


def reachability_probability(m: Pmdp | ChoiceModel, policy: Policy | Sequence[int],
                             target_set, eps: float = DEFAULT_EPS) -> ValueVector:
    """Probability of eventually reaching ``target_set`` in the chain induced by ``policy``."""
    model = m if isinstance(m, ChoiceModel) else choice_model_from_pmdp(m)
    P, _ = induced_chain(model, policy)
    target = np.zeros(model.n, dtype=bool)
    target[list(target_set)] = True
    P = P.tolil()
    for t in np.flatnonzero(target):
        P.rows[t] = []
        P.data[t] = []
    P = P.tocsr()
    can = _chain_reach(P, target)
    solve_mask = can & ~target
    x = np.zeros(model.n)
    x[target] = 1.0
    if np.any(solve_mask):
        idx = np.flatnonzero(solve_mask)
        A = sp.identity(len(idx), format="csc") - P[idx][:, idx].tocsc()
        b = np.asarray(P[idx][:, np.flatnonzero(target)].sum(axis=1)).ravel()
        x[idx] = np.atleast_1d(spsolve(A, b))
    resid_vec = np.where(target, 1.0, P @ x) - x
    resid_vec[target] = 0.0
    return ValueVector(x, 0, float(np.max(np.abs(resid_vec))) if len(x) else 0.0, model.initial)


def expected_visits(P: sp.csr_matrix, initial: int, absorbing: np.ndarray | None = None) -> VisitVector:
    """Expected number of visits per state in a Markov chain started in ``initial``.

    Absorbing states (no outgoing mass, or flagged in ``absorbing``) are
    counted once per arrival.
    """
    P = sp.csr_matrix(P, dtype=float)
    n = P.shape[0]
    out_mass = np.asarray(P.sum(axis=1)).ravel()
    absorb = out_mass == 0 if absorbing is None else (np.asarray(absorbing, dtype=bool) | (out_mass == 0))
    P = sp.diags((~absorb).astype(float)) @ P
    reach = _reachable((P > 0).astype(float).tocsr(), initial)
    transient = reach & ~absorb
    # any reachable transient state must reach an absorbing state with probability 1
    can = _chain_reach(P, absorb)
    if np.any(transient & ~can):
        raise DivergentReward("chain has a recurrent class without absorbing states")
    idx = np.flatnonzero(transient)
    xi = np.zeros(n)
    if len(idx):
        A = sp.identity(len(idx), format="csc") - P[idx][:, idx].T.tocsc()
        e = np.zeros(len(idx))
        pos = np.searchsorted(idx, initial)
        if pos < len(idx) and idx[pos] == initial:
            e[pos] = 1.0
        x = np.atleast_1d(spsolve(A, e))
        if not np.all(np.isfinite(x)):
            raise DivergentReward("expected visits diverge")
        xi[idx] = x
    inflow = P.T @ xi
    absorbed = np.flatnonzero(absorb & reach)
    xi[absorbed] = inflow[absorbed]
    if absorb[initial]:
        xi[initial] += 1.0
    return VisitVector(xi)


# ---------------------------------------------------------------------------
# interval (robust) models


@dataclass
class IntervalModel:
    """A choice model whose ``call`` states carry one interval-valued row each.

    ``base`` holds the constant rows; call states have no groups in ``base``
    and are listed in ``call_state`` with successor matrix ``succ`` (shape
    ``(n_calls, Y)``), probability bounds ``plo``/``phi`` and reward bounds
    ``rlo``/``rhi``.
    """

    base: ChoiceModel
    call_state: np.ndarray
    succ: np.ndarray
    plo: np.ndarray
    phi: np.ndarray
    rlo: np.ndarray
    rhi: np.ndarray
    targets: np.ndarray

    def check(self):
        if np.any(self.plo > self.phi + 1e-15) or np.any(self.rlo > self.rhi + 1e-15):
            raise SuitabilityViolation("interval with lower end above upper end")
        if np.any(self.plo.sum(axis=1) > 1 + 1e-9) or np.any(self.phi.sum(axis=1) < 1 - 1e-9):
            raise SuitabilityViolation("probability intervals admit no distribution")

    def vertex_support_model(self) -> tuple[ChoiceModel, np.ndarray, np.ndarray]:
        """Base model plus interval rows, with per-entry (lo, hi) for the graph precheck."""
        base = self.base
        n = base.n
        y = self.succ.shape[1] if self.succ.size else 0
        call_pos = {int(s): k for k, s in enumerate(self.call_state)}
        rows, cols, lo, hi, rew = [], [], [], [], []
        group_ptr = [0]
        state_ptr = [0]
        r = 0
        bP = base.P.tocsr()
        for s in range(n):
            k = call_pos.get(s)
            if k is not None:
                agg: dict[int, list[float]] = {}
                for j in range(y):
                    t = int(self.succ[k, j])
                    a = agg.setdefault(t, [0.0, 0.0])
                    a[0] += self.plo[k, j]
                    a[1] += self.phi[k, j]
                for t, (a, b) in agg.items():
                    if b > 0:
                        rows.append(r); cols.append(t); lo.append(a); hi.append(min(b, 1.0))
                rew.append(0.0)
                r += 1
                group_ptr.append(r)
            else:
                for g in range(base.state_ptr[s], base.state_ptr[s + 1]):
                    for row in range(base.group_ptr[g], base.group_ptr[g + 1]):
                        lo_i, hi_i = bP.indptr[row], bP.indptr[row + 1]
                        for t, p in zip(bP.indices[lo_i:hi_i], bP.data[lo_i:hi_i]):
                            if p > 0:
                                rows.append(r); cols.append(int(t)); lo.append(p); hi.append(p)
                        rew.append(0.0)
                        r += 1
                    group_ptr.append(r)
            state_ptr.append(len(group_ptr) - 1)
        order = np.lexsort((cols, rows)) if rows else np.zeros(0, dtype=np.int64)
        rows_a, cols_a = np.asarray(rows, dtype=np.int64)[order], np.asarray(cols, dtype=np.int64)[order]
        lo_a, hi_a = np.asarray(lo)[order], np.asarray(hi)[order]
        indptr = np.concatenate(([0], np.cumsum(np.bincount(rows_a, minlength=r)))) if r else np.zeros(1, dtype=np.int64)
        P = sp.csr_matrix((hi_a, cols_a, indptr), shape=(r, n))
        model = ChoiceModel(P, np.zeros(r), np.array(group_ptr), np.array(state_ptr), base.initial, np.zeros(n))
        return model, lo_a, hi_a


class _IntervalOperator:
    def __init__(self, im: IntervalModel, upper: bool):
        self.im = im
        self.upper = upper
        base = im.base
        self.n = base.n
        self.call_mask = np.zeros(self.n, dtype=bool)
        self.call_mask[im.call_state] = True
        self.concrete = ~base.absorbing
        self.group_starts = base.group_ptr[:-1]
        self.state_starts = base.state_ptr[:-1][self.concrete]
        self.rcall = im.rhi if upper else im.rlo
        self.P_ext = sp.vstack([base.P, sp.csr_matrix((1, self.n))]).tocsr()
        self.r_ext = np.append(base.reward, 0.0)
        self.terminal = np.where(self.call_mask, 0.0, base.terminal)

    def start(self):
        return self.terminal.copy()

    def _dist(self, v):
        im = self.im
        vals = v[im.succ]
        order = np.argsort(-vals if self.upper else vals, axis=1, kind="stable")
        lo = np.take_along_axis(im.plo, order, axis=1)
        cap = np.take_along_axis(im.phi, order, axis=1) - lo
        rem = 1.0 - lo.sum(axis=1, keepdims=True)
        before = np.cumsum(cap, axis=1) - cap
        add = np.clip(rem - before, 0.0, cap)
        p_sorted = lo + add
        p = np.empty_like(p_sorted)
        np.put_along_axis(p, order, p_sorted, axis=1)
        return p

    def backup(self, v):
        base = self.im.base
        new = self.terminal.copy()
        strat = np.full(self.n, -1, dtype=np.int64)
        if base.n_rows:
            q = base.reward + base.P @ v
            gbest, grow = _segment_best(q, self.group_starts, True)
            sbest, sgroup = _segment_best(gbest, self.state_starts, True)
            new[self.concrete] = sbest
            strat[self.concrete] = grow[sgroup]
        dist = None
        if len(self.im.call_state):
            dist = self._dist(v)
            new[self.im.call_state] = self.rcall + (dist * v[self.im.succ]).sum(axis=1)
        return new, (strat, dist)

    def chain(self, strategy):
        strat, dist = strategy
        idx = np.where(strat < 0, self.im.base.n_rows, strat)
        P = self.P_ext[idx]
        c = self.r_ext[idx] + np.where(strat < 0, self.terminal, 0.0)
        if dist is not None and len(self.im.call_state):
            k, y = dist.shape
            rows = np.repeat(self.im.call_state, y)
            extra = sp.csr_matrix((dist.ravel(), (rows, self.im.succ.ravel())), shape=(self.n, self.n))
            P = (P + extra).tocsr()
            c[self.im.call_state] += self.rcall
        return P, c


@dataclass
class RobustResult:
    lb: float
    ub: float
    lower_policy: Policy
    upper_policy: Policy
    lower_values: np.ndarray
    upper_values: np.ndarray
    residual: float


def _restrict_interval(im: IntervalModel, keep: np.ndarray) -> IntervalModel:
    new_index = np.cumsum(keep) - 1
    sel = keep[im.call_state]
    return IntervalModel(
        im.base.restrict(keep),
        new_index[im.call_state[sel]],
        new_index[im.succ[sel]],
        im.plo[sel], im.phi[sel], im.rlo[sel], im.rhi[sel],
        im.targets[keep],
    )


def robust_value_bounds(im: IntervalModel, eps: float = DEFAULT_EPS,
                        max_iter: int = DEFAULT_MAX_ITER) -> RobustResult:
    """Lower/upper bounds on the maximal expected reward over all interval instantiations.

    Policies maximise in both passes; nature picks the reward end point and the
    exit distribution that minimise (lower pass) or maximise (upper pass) the
    successor values.  Bounds are widened by the final Bellman residual.
    """
    im.check()
    aux, lo, hi = im.vertex_support_model()
    reach = _reachable(aux.state_graph(), aux.initial)
    good = proper_states(aux, lo, hi)
    if np.any(reach & ~good):
        raise DivergentReward("uncertain macro model admits runs that avoid the targets")
    sub = _restrict_interval(im, reach)
    keep = np.flatnonzero(reach)
    out = []
    for upper in (False, True):
        op = _IntervalOperator(sub, upper)
        x, (strat, _), it, res = _solve(op, eps, max_iter)
        full = np.full(im.base.n, np.nan)
        full[keep] = x
        act = np.full(im.base.n, -1, dtype=np.int64)
        sub_act, _ = _policy_from_rows(sub.base, strat)
        act[keep] = sub_act
        act[keep[sub.call_state]] = 0
        act[~reach & ~im.base.absorbing] = 0
        act[im.call_state[~reach[im.call_state]]] = 0
        out.append((full, Policy(tuple(act.tolist())), res))
    (lv, lp, lres), (uv, up, ures) = out
    init = im.base.initial
    return RobustResult(
        float(lv[init] - lres), float(uv[init] + ures), lp, up, lv, uv, max(lres, ures)
    )


def policy_value(m: Pmdp | ChoiceModel, policy: Policy | Sequence[int]) -> ValueVector:
    """Expected reward until absorption in the chain induced by ``policy``."""
    model = m if isinstance(m, ChoiceModel) else choice_model_from_pmdp(m)
    P, r = induced_chain(model, policy)
    c = r + np.where(model.absorbing, model.terminal, 0.0)
    reach = _reachable((P > 0).astype(float).tocsr(), model.initial)
    can = _chain_reach(P, model.absorbing)
    if np.any(reach & ~can):
        raise DivergentReward("policy admits runs that never reach the targets")
    idx = np.flatnonzero(reach)
    x = np.full(model.n, np.nan)
    sub = _evaluate(P[idx][:, idx], c[idx])
    if sub is None:
        raise DivergentReward("policy evaluation is singular")
    x[idx] = sub
    resid = np.abs(c[idx] + P[idx][:, idx] @ sub - sub)
    return ValueVector(x, 0, float(resid.max()) if len(resid) else 0.0, model.initial)


def game_value_iteration(relaxed, action_role: str = "max", vertex_role: str = "min",
                         eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER) -> ValueVector:
    """Value of the lifting game: ``vertex_role`` over vertices inside each action,
    ``action_role`` over actions."""
    model = getattr(relaxed, "model", relaxed)
    return solve_game(model, action_role, vertex_role, eps, max_iter).values
