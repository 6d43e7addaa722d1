"""Line-oriented text formats for templates and macro models.

Template file::

    template passToken
    param p [1/20, 19/20]
    entry s0
    exits s2
    s0 | go | s0: 1-p, s1: p | 1
    s1 | go | s1: 1-p, s2: p | 1

Macro file::

    macro token
    mode single
    initial m0
    call m0 p=1/2 exits=j0
    concrete j0 go | m1: 1/2, m2: 1/2 | 0
    target goal

``#`` starts a comment.  Numbers are decimals or ``a/b`` rationals.  An
optional ``states`` line in a template fixes the state order.
"""

from __future__ import annotations

import re
from fractions import Fraction

from .errors import ParseError, ValidationError
from .expr import ExprError, MultilinearExpr, UndeclaredParameter, parse_expr, to_fraction
from .model import (
    Call,
    Choice,
    Concrete,
    Diagnostic,
    HierarchicalModel,
    Mode,
    Pmdp,
    Region,
    Template,
    validate,
)

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*$")


def _lines(text: str):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if line.strip():
            yield no, raw, line


def _col(raw: str, token: str) -> int:
    pos = raw.find(token)
    return pos + 1 if pos >= 0 else 1


def _number(token: str, no: int, raw: str) -> Fraction:
    try:
        return to_fraction(token)
    except ExprError:
        raise ParseError(f"expected a number, got {token!r}", no, _col(raw, token)) from None


def _name(token: str, no: int, raw: str) -> str:
    if not _NAME.match(token):
        raise ParseError(f"invalid name {token!r}", no, _col(raw, token))
    return token


def _split_succs(field: str, no: int, raw: str) -> list[tuple[str, str]]:
    out = []
    for part in field.split(","):
        part = part.strip()
        if not part:
            raise ParseError("empty successor entry", no, _col(raw, field))
        if ":" not in part:
            raise ParseError(f"expected 'state: value', got {part!r}", no, _col(raw, part))
        succ, val = part.split(":", 1)
        out.append((_name(succ.strip(), no, raw), val.strip()))
    return out


def parse_template(text: str, check: bool = True) -> Template:
    name = "template"
    params: list[str] = []
    box_lo: list[Fraction] = []
    box_hi: list[Fraction] = []
    entry = None
    exits: list[str] | None = None
    declared_order: list[str] | None = None
    rows: list[tuple[int, str, str, str, str, str]] = []
    for no, raw, line in _lines(text):
        if "|" in line:
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 4:
                raise ParseError("template rows need 4 '|'-separated fields", no, 1)
            src, action, succs, reward = parts
            rows.append((no, raw, _name(src, no, raw), _name(action, no, raw), succs, reward))
            continue
        tokens = line.split()
        key = tokens[0]
        if key == "template":
            if len(tokens) != 2:
                raise ParseError("expected 'template <name>'", no, 1)
            name = tokens[1]
        elif key == "param":
            m = re.match(r"\s*param\s+(\S+)\s*\[\s*([^,\]]+)\s*,\s*([^\]]+)\]\s*$", line)
            if not m:
                raise ParseError("expected 'param <name> [lo, hi]'", no, 1)
            pname = _name(m.group(1), no, raw)
            if pname in params:
                raise ParseError(f"parameter {pname!r} declared twice", no, _col(raw, pname))
            params.append(pname)
            box_lo.append(_number(m.group(2).strip(), no, raw))
            box_hi.append(_number(m.group(3).strip(), no, raw))
        elif key == "entry":
            if len(tokens) != 2:
                raise ParseError("expected 'entry <state>'", no, 1)
            entry = _name(tokens[1], no, raw)
        elif key == "exits":
            if len(tokens) < 2:
                raise ParseError("expected 'exits <state> ...'", no, 1)
            exits = [_name(t, no, raw) for t in tokens[1:]]
        elif key == "states":
            declared_order = [_name(t, no, raw) for t in tokens[1:]]
        else:
            raise ParseError(f"unknown directive {key!r}", no, _col(raw, key))
    if not rows and entry is None:
        raise ParseError("empty template", 1, 1)
    if entry is None:
        raise ParseError("missing 'entry' line", 1, 1)
    if exits is None:
        raise ParseError("missing 'exits' line", 1, 1)

    diags: list[Diagnostic] = []
    parsed_rows = []
    for no, raw, src, action, succs, reward in rows:
        entries = []
        for succ, val in _split_succs(succs, no, raw):
            try:
                entries.append((succ, parse_expr(val, params)))
            except UndeclaredParameter as exc:
                diags.append(Diagnostic("undeclared-param", str(exc), f"line {no}"))
            except ExprError as exc:
                raise ParseError(str(exc), no, _col(raw, val)) from None
        try:
            rew = parse_expr(reward, params)
        except UndeclaredParameter as exc:
            diags.append(Diagnostic("undeclared-param", str(exc), f"line {no}"))
            rew = MultilinearExpr()
        except ExprError as exc:
            raise ParseError(str(exc), no, _col(raw, reward)) from None
        parsed_rows.append((no, src, action, entries, rew))

    if declared_order is not None:
        order = list(declared_order)
    else:
        order = []
        for _, src, _, _, _ in parsed_rows:
            if src not in order:
                order.append(src)
        for cand in [entry] + [s for _, _, _, ents, _ in parsed_rows for s, _ in ents] + list(exits):
            if cand not in order:
                order.append(cand)
    index = {s: i for i, s in enumerate(order)}
    actions: list[list[Choice]] = [[] for _ in order]
    rewards: list[MultilinearExpr | None] = [None] * len(order)
    for no, src, action, entries, rew in parsed_rows:
        missing = [s for s in [src] + [t for t, _ in entries] if s not in index]
        if missing:
            diags.append(Diagnostic("unknown-state", f"state {missing[0]!r} not in declared states", f"line {no}"))
            continue
        s = index[src]
        if rewards[s] is None:
            rewards[s] = rew
        elif rewards[s] != rew:
            diags.append(Diagnostic("inconsistent-reward", f"state {src} has differing rewards", f"line {no}"))
        actions[s].append(Choice(action, tuple((index[t], e) for t, e in entries)))
    for s_name in [entry] + list(exits):
        if s_name not in index:
            diags.append(Diagnostic("unknown-state", f"state {s_name!r} not in declared states", "template"))
    if diags:
        raise ValidationError(diags)
    pmdp = Pmdp(
        tuple(order),
        tuple(tuple(a) for a in actions),
        tuple(r if r is not None else MultilinearExpr() for r in rewards),
        index[entry],
        tuple(params),
        frozenset(index[e] for e in exits),
    )
    template = Template(
        pmdp,
        tuple(index[e] for e in exits),
        Region(tuple(float(x) for x in box_lo), tuple(float(x) for x in box_hi)),
        name,
    )
    if check:
        diags = validate(template)
        if diags:
            raise ValidationError(diags)
    return template


def parse_macro(text: str, template: Template, check: bool = True,
                allow: tuple[str, ...] = ()) -> HierarchicalModel:
    """Parse a macro file against ``template``.

    Diagnostics whose code is listed in ``allow`` do not abort parsing.
    """
    name = "macro"
    mode = Mode.SINGLE
    success_token = None
    initial = None
    defs: list[tuple[str, str]] = []  # (state name, kind)
    calls: dict[str, tuple[int, dict[str, Fraction], list[str]]] = {}
    concrete_rows: dict[str, list[tuple[int, str, list[tuple[str, str]], str]]] = {}
    targets: list[str] = []
    first_line = None
    for no, raw, line in _lines(text):
        first_line = first_line or no
        tokens = line.split()
        key = tokens[0]
        if key == "macro":
            if len(tokens) != 2:
                raise ParseError("expected 'macro <name>'", no, 1)
            name = tokens[1]
        elif key == "mode":
            if len(tokens) == 2 and tokens[1] == "single":
                mode = Mode.SINGLE
            elif len(tokens) == 3 and tokens[1] == "success":
                mode = Mode.SUCCESS
                success_token = tokens[2]
            else:
                raise ParseError("expected 'mode single' or 'mode success <exit>'", no, 1)
        elif key == "initial":
            if len(tokens) != 2:
                raise ParseError("expected 'initial <state>'", no, 1)
            initial = _name(tokens[1], no, raw)
        elif key == "target":
            for t in tokens[1:]:
                t = _name(t, no, raw)
                targets.append(t)
                defs.append((t, "target"))
        elif key == "call":
            if len(tokens) < 3:
                raise ParseError("expected 'call <state> <param>=<value> ... exits=<states>'", no, 1)
            sname = _name(tokens[1], no, raw)
            vals: dict[str, Fraction] = {}
            wiring = None
            for tok in tokens[2:]:
                if "=" not in tok:
                    raise ParseError(f"expected key=value, got {tok!r}", no, _col(raw, tok))
                k, v = tok.split("=", 1)
                if k == "exits":
                    wiring = [_name(x, no, raw) for x in v.split(",") if x]
                else:
                    vals[_name(k, no, raw)] = _number(v, no, raw)
            if wiring is None:
                raise ParseError("call without exits=", no, 1)
            if sname in calls:
                raise ParseError(f"call state {sname!r} defined twice", no, _col(raw, sname))
            calls[sname] = (no, vals, wiring)
            defs.append((sname, "call"))
        elif key == "concrete" and len(tokens) == 2 and "|" not in line:
            sname = _name(tokens[1], no, raw)
            if sname not in concrete_rows:
                concrete_rows[sname] = []
                defs.append((sname, "concrete"))
        elif key == "concrete":
            if "|" not in line:
                raise ParseError("expected 'concrete <state> <action> | succ: p, ... | reward'", no, 1)
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 3:
                raise ParseError("concrete rows need 3 '|'-separated fields", no, 1)
            head = parts[0].split()
            if len(head) != 3:
                raise ParseError("expected 'concrete <state> <action>'", no, 1)
            sname = _name(head[1], no, raw)
            action = _name(head[2], no, raw)
            succs = _split_succs(parts[1], no, raw)
            if sname not in concrete_rows:
                concrete_rows[sname] = []
                defs.append((sname, "concrete"))
            concrete_rows[sname].append((no, action, succs, parts[2]))
        else:
            raise ParseError(f"unknown directive {key!r}", no, _col(raw, key))
    if first_line is None:
        raise ParseError("empty macro file", 1, 1)
    if initial is None:
        raise ParseError("missing 'initial' line", 1, 1)

    diags: list[Diagnostic] = []
    order: list[str] = []
    kinds: dict[str, list[str]] = {}
    for s, kind in defs:
        if s not in kinds:
            order.append(s)
        kinds.setdefault(s, []).append(kind)
    for s, ks in kinds.items():
        if ks.count("call") > 1 or ("call" in ks and len(ks) > 1):
            diags.append(Diagnostic("duplicate-state", f"state {s!r} defined more than once", "macro"))
    index = {s: i for i, s in enumerate(order)}
    pnames = template.params
    states = []
    for s in order:
        if s in calls:
            no, vals, wiring = calls[s]
            unknown = [k for k in vals if k not in pnames]
            missing = [p for p in pnames if p not in vals]
            if unknown:
                diags.append(Diagnostic("undeclared-param", f"unknown parameter {unknown[0]!r}", f"line {no}"))
            if missing:
                diags.append(Diagnostic("valuation-arity", f"missing value for parameter {missing[0]!r}", f"line {no}"))
            bad = [w for w in wiring if w not in index]
            if bad:
                diags.append(Diagnostic("unknown-exit", f"exit label {bad[0]!r} is not a macro state", f"line {no}"))
            states.append(Call(s, tuple(float(vals.get(p, 0)) for p in pnames),
                               tuple(index.get(w, -1) for w in wiring)))
        elif s in concrete_rows:
            acts = []
            rewards = set()
            for no, action, succs, reward in concrete_rows[s]:
                row = []
                for t, val in succs:
                    if t not in index:
                        diags.append(Diagnostic("unknown-state", f"successor {t!r} is not a macro state", f"line {no}"))
                        continue
                    try:
                        row.append((index[t], to_fraction(val)))
                    except ExprError:
                        diags.append(Diagnostic("number", f"bad probability {val!r}", f"line {no}"))
                try:
                    rewards.add(to_fraction(reward))
                except ExprError:
                    diags.append(Diagnostic("number", f"bad reward {reward!r}", f"line {no}"))
                acts.append((action, tuple(row)))
            if len(rewards) > 1:
                diags.append(Diagnostic("inconsistent-reward", f"state {s} has differing rewards", "macro"))
            states.append(Concrete(s, tuple(acts), next(iter(rewards)) if rewards else Fraction(0)))
        else:
            states.append(Concrete(s))
    if initial not in index:
        diags.append(Diagnostic("initial", f"initial state {initial!r} undefined", "macro"))
    success_exit = None
    if mode is Mode.SUCCESS:
        exit_names = [template.pmdp.states[e] for e in template.exits]
        if success_token in exit_names:
            success_exit = exit_names.index(success_token)
        else:
            try:
                success_exit = int(success_token)
            except ValueError:
                diags.append(Diagnostic("success-exit", f"unknown success exit {success_token!r}", "macro"))
    model = HierarchicalModel(
        tuple(states), index.get(initial, 0), template, frozenset(index[t] for t in targets if t in index),
        mode, success_exit, name,
    )
    if check:
        diags.extend(validate(model))
    diags = [d for d in diags if d.code not in allow]
    if diags:
        raise ValidationError(diags)
    return model


def _fmt_number(x) -> str:
    q = to_fraction(x)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def serialize_template(t: Template) -> str:
    m = t.pmdp
    out = [f"template {t.name}"]
    for i, p in enumerate(m.params):
        out.append(f"param {p} [{_fmt_number(t.box.lower[i])}, {_fmt_number(t.box.upper[i])}]")
    out.append("states " + " ".join(m.states))
    out.append(f"entry {m.states[m.initial]}")
    out.append("exits " + " ".join(m.states[e] for e in t.exits))
    for s, acts in enumerate(m.actions):
        rew = m.rewards[s].to_string(m.params)
        for c in acts:
            succ = ", ".join(f"{m.states[u]}: {e.to_string(m.params)}" for u, e in c.transitions)
            out.append(f"{m.states[s]} | {c.label} | {succ} | {rew}")
    return "\n".join(out) + "\n"


def serialize_macro(h: HierarchicalModel) -> str:
    out = [f"macro {h.name}"]
    if h.mode is Mode.SUCCESS:
        out.append(f"mode success {h.success_exit}")
    else:
        out.append("mode single")
    out.append(f"initial {h.states[h.initial].name}")
    params = h.template.params
    for i, st in enumerate(h.states):
        if isinstance(st, Call):
            vals = " ".join(f"{p}={_fmt_number(v)}" for p, v in zip(params, st.valuation))
            wiring = ",".join(h.states[e].name for e in st.exits)
            out.append(f"call {st.name} {vals} exits={wiring}".replace("  ", " "))
        elif i in h.targets:
            out.append(f"target {st.name}")
        elif not st.actions:
            out.append(f"concrete {st.name}")
        else:
            for label, row in st.actions:
                succ = ", ".join(f"{h.states[t].name}: {_fmt_number(p)}" for t, p in row)
                out.append(f"concrete {st.name} {label} | {succ} | {_fmt_number(st.reward)}")
    return "\n".join(out) + "\n"
