"""Benchmark model generators and on-disk bundles."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .expr import MultilinearExpr, parse_expr
from .io import parse_macro, parse_template, serialize_macro, serialize_template
from .model import Call, Choice, Concrete, HierarchicalModel, Mode, Pmdp, Region, Template

TEMPLATE_FILE = "template.tpl"
MACRO_FILE = "macro.hm"
CONFIG_FILE = "bundle.json"

# token-passing example: six calls, junctions branch with probability 1/2
TOKEN_VALUATIONS = (Fraction(1, 2), Fraction(2, 5), Fraction(5, 8), Fraction(8, 25), Fraction(1, 2), Fraction(25, 32))
TOKEN_EDGES = {0: (1, 2), 1: (3, 4), 2: (3, 5)}


@dataclass
class RunConfig:
    eta: float = 0.9
    epsilon: float = 1e-8
    k: int = 8
    max_iter: int = 10**6
    flat_cap: int = 10**7
    mode: str = "single"
    seed: int = 0


@dataclass
class ModelBundle:
    macro_path: Path
    template_path: Path
    config: RunConfig = field(default_factory=RunConfig)

    def load(self, allow: tuple[str, ...] = ()) -> HierarchicalModel:
        template = parse_template(Path(self.template_path).read_text())
        return parse_macro(Path(self.macro_path).read_text(), template, allow=allow)


def token_template() -> Template:
    params = ("p",)

    def e(text):
        return parse_expr(text, params)

    pmdp = Pmdp(
        ("s0", "s1", "s2"),
        (
            (Choice("send", ((0, e("1-p")), (1, e("p")))),),
            (Choice("ack", ((1, e("1-p")), (2, e("p")))),),
            (),
        ),
        (MultilinearExpr.const(1), MultilinearExpr.const(1), MultilinearExpr()),
        0,
        params,
        frozenset({2}),
    )
    return Template(pmdp, (2,), Region((0.05,), (0.95,)), "passToken")


def token_model(depth: int = 3) -> HierarchicalModel:
    """Token-passing macro over the passToken template.

    Depth 3 gives the six-call reference layout; other depths build the
    recombining lattice where the channel quality is scaled by 4/5 or 5/4 at
    every step (clipped to the admissible box).
    """
    template = token_template()
    if depth == 3:
        vals = list(TOKEN_VALUATIONS)
        children = dict(TOKEN_EDGES)
        names = [f"m{i}" for i in range(6)]
    else:
        if depth < 1:
            raise ValueError("depth must be at least 1")
        names, vals, children = [], [], {}
        pos = {}
        lo, hi = Fraction(1, 20), Fraction(19, 20)
        for d in range(depth):
            for a in range(d + 1):
                pos[(d, a)] = len(names)
                names.append(f"m{d}_{a}")
                p = Fraction(1, 2) * Fraction(4, 5) ** a * Fraction(5, 4) ** (d - a)
                vals.append(min(hi, max(lo, p)))
        for d in range(depth - 1):
            for a in range(d + 1):
                children[pos[(d, a)]] = (pos[(d + 1, a + 1)], pos[(d + 1, a)])
    n_calls = len(names)
    junction = {i: n_calls + k for k, i in enumerate(sorted(children))}
    goal = n_calls + len(junction)
    states: list = []
    for i in range(n_calls):
        exit_to = junction.get(i, goal)
        states.append(Call(names[i], (float(vals[i]),), (exit_to,)))
    for i in sorted(children):
        a, b = children[i]
        row = ((a, Fraction(1, 2)), (b, Fraction(1, 2))) if a != b else ((a, Fraction(1)),)
        states.append(Concrete(f"j{i}" if depth == 3 else f"j_{names[i]}", (("flip", row),), Fraction(0)))
    states.append(Concrete("goal"))
    return HierarchicalModel(tuple(states), 0, template, frozenset({goal}), Mode.SINGLE, None, f"token{depth}")


def chain_template(n: int = 10, n_params: int = 1, choices: bool = True, seed: int = 0) -> Template:
    """Retry chain of ``n`` working states plus one exit.

    Action ``step`` advances with probability ``p``; with ``choices`` an
    action ``jump`` skips ahead with probability ``p*q`` (or ``p/2``).
    """
    if n < 1:
        raise ValueError("chain template needs at least one working state")
    rng = np.random.default_rng(seed)
    params = ("p", "q")[:n_params] if n_params <= 2 else tuple(f"x{i}" for i in range(n_params))

    def e(text):
        return parse_expr(text, params)

    p0 = params[0]
    jump = f"{p0}*{params[1]}" if n_params >= 2 else f"{p0}/2"
    states = tuple(f"t{k}" for k in range(n)) + ("done",)
    actions = []
    rewards = []
    for k in range(n):
        nxt = k + 1
        acts = [Choice("step", ((k, e(f"1-{p0}")), (nxt, e(p0))))]
        if choices:
            far = min(k + 2, n)
            acts.append(Choice("jump", ((k, e(f"1-({jump})")), (far, e(jump)))))
        actions.append(tuple(acts))
        rewards.append(MultilinearExpr.const(int(rng.integers(1, 4))))
    actions.append(())
    rewards.append(MultilinearExpr())
    box = Region((0.1,) * len(params), (0.9,) * len(params))
    pmdp = Pmdp(states, tuple(actions), tuple(rewards), 0, params, frozenset({n}))
    return Template(pmdp, (n,), box, f"chain{n}")


def chain_grid_model(depth: int, breadth: int, template: Template | None = None, seed: int = 0,
                     resolution: int = 1000, fixed: tuple[float, ...] | None = None) -> HierarchicalModel:
    """``depth`` levels of ``breadth`` calls; nondeterministic junctions between levels.

    Valuations are drawn from ``seed`` on a grid of step ``1/resolution``
    inside the template box, or set to ``fixed`` for every call.
    """
    if depth < 1 or breadth < 1:
        raise ValueError("depth and breadth must be positive")
    template = template or chain_template(seed=seed)
    rng = np.random.default_rng(seed)
    n_calls = depth * breadth
    names = [f"c{l}_{b}" for l in range(depth) for b in range(breadth)]
    start = n_calls
    junction_base = start + 1
    n_junctions = (depth - 1) * breadth
    goal = junction_base + n_junctions
    lo = np.asarray(template.box.lower)
    hi = np.asarray(template.box.upper)
    states: list = []
    for idx in range(n_calls):
        l, b = divmod(idx, breadth)
        if fixed is not None:
            v = tuple(float(x) for x in fixed)
        else:
            steps = np.floor((hi - lo) * resolution).astype(int)
            v = tuple(float(Fraction(int(round(a * resolution)) + int(rng.integers(0, s + 1)), resolution))
                      for a, s in zip(lo, steps))
        exit_to = junction_base + idx if l < depth - 1 else goal
        states.append(Call(names[idx], v, (exit_to,)))
    states.append(Concrete("start", (("go", tuple((b, Fraction(1, breadth)) for b in range(breadth))),)))
    for idx in range(n_junctions):
        l, b = divmod(idx, breadth)
        nxt = (l + 1) * breadth
        acts = []
        for a in range(2):
            t1, t2 = (int(x) for x in rng.integers(0, breadth, size=2))
            w = Fraction(int(rng.integers(1, 4)), 4)
            row = ((nxt + t1, w), (nxt + t2, 1 - w)) if t1 != t2 else ((nxt + t1, Fraction(1)),)
            acts.append((f"a{a}", row))
        states.append(Concrete(f"j{l}_{b}", tuple(acts), Fraction(int(rng.integers(0, 2)))))
    states.append(Concrete("goal"))
    return HierarchicalModel(tuple(states), start, template, frozenset({goal}), Mode.SINGLE, None,
                             f"grid{depth}x{breadth}")


def success_template(n: int = 4, seed: int = 0) -> Template:
    """Two-exit template: each stage either succeeds onwards or fails out.

    Every working state offers a cautious action (retry more) and a fast
    action (fail more often).
    """
    rng = np.random.default_rng(seed)
    params = ("p", "q")

    def e(text):
        return parse_expr(text, params)

    states = tuple(f"t{k}" for k in range(n)) + ("ok", "fail")
    ok, fail = n, n + 1
    actions, rewards = [], []
    for k in range(n):
        nxt = k + 1 if k + 1 < n else ok
        actions.append((
            Choice("careful", ((k, e("1-p")), (nxt, e("p*q")), (fail, e("p-p*q")))),
            Choice("fast", ((nxt, e("q")), (fail, e("1-q")))),
        ))
        rewards.append(MultilinearExpr.const(int(rng.integers(1, 3))))
    actions += [(), ()]
    rewards += [MultilinearExpr(), MultilinearExpr()]
    pmdp = Pmdp(states, tuple(actions), tuple(rewards), 0, params, frozenset({ok, fail}))
    return Template(pmdp, (ok, fail), Region((0.2, 0.5), (0.9, 0.95)), f"stage{n}")


def success_model(n_calls: int = 3, seed: int = 0, template: Template | None = None) -> HierarchicalModel:
    """A sequence of tasks; failure of any task aborts to a penalty-free sink."""
    template = template or success_template(seed=seed)
    rng = np.random.default_rng(seed)
    lo = np.asarray(template.box.lower)
    hi = np.asarray(template.box.upper)
    goal = n_calls
    states = []
    for i in range(n_calls):
        v = tuple(float(Fraction(int(round(x * 100)), 100)) for x in rng.uniform(lo, hi))
        nxt = i + 1 if i + 1 < n_calls else goal
        states.append(Call(f"task{i}", v, (nxt, goal)))
    states.append(Concrete("goal"))
    return HierarchicalModel(tuple(states), 0, template, frozenset({goal}), Mode.SUCCESS, 0, f"tasks{n_calls}")


def generate(family: str, out_dir, seed: int = 0, **params) -> ModelBundle:
    """Write a model bundle for ``family`` (``token``, ``chain-grid`` or ``tasks``)."""
    if family == "token":
        model = token_model(int(params.get("depth", 3)))
    elif family == "chain-grid":
        template = chain_template(int(params.get("template_states", 10)), int(params.get("n_params", 1)),
                                  bool(params.get("choices", True)), seed)
        fixed = params.get("fixed")
        model = chain_grid_model(int(params.get("depth", 3)), int(params.get("breadth", 4)), template, seed,
                                 int(params.get("resolution", 1000)), fixed)
    elif family == "tasks":
        model = success_model(int(params.get("calls", 3)), seed,
                              success_template(int(params.get("template_states", 4)), seed))
    else:
        raise ValueError(f"unknown family {family!r}")
    return write_bundle(model, out_dir, RunConfig(seed=seed, mode=model.mode.value))


def write_bundle(model: HierarchicalModel, out_dir, config: RunConfig | None = None) -> ModelBundle:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = config or RunConfig(mode=model.mode.value)
    (out / TEMPLATE_FILE).write_text(serialize_template(model.template))
    (out / MACRO_FILE).write_text(serialize_macro(model))
    (out / CONFIG_FILE).write_text(json.dumps(asdict(config), indent=2) + "\n")
    return ModelBundle(out / MACRO_FILE, out / TEMPLATE_FILE, config)


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    cfg = RunConfig()
    if (path / CONFIG_FILE).exists():
        raw = json.loads((path / CONFIG_FILE).read_text())
        cfg = RunConfig(**{k: v for k, v in raw.items() if k in RunConfig.__dataclass_fields__})
    return ModelBundle(path / MACRO_FILE, path / TEMPLATE_FILE, cfg)
