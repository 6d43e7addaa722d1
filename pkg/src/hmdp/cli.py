"""Command-line front end: ``hmdp gen|solve|enumerate|flatten|info``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from .errors import HmdpError, IterationCapExceeded, ParseError, ValidationError
from .generate import generate, load_bundle
from .hierarchy import check_local_optimality, enumerate_baseline, flat_state_count, flatten
from .model import Mode
from .numerics import max_expected_reward
from .refine import RefineConfig, run

EXIT_OK, EXIT_DIAG, EXIT_ENGINE = 0, 1, 2


def _load(args):
    bundle = load_bundle(args.bundle)
    allow = ("mode-arity",) if getattr(args, "override_local_optimality", False) else ()
    model = bundle.load(allow=allow)
    mode = getattr(args, "mode", None)
    if mode:
        success = args.success_exit if mode == "success" else None
        model = dataclasses.replace(model, mode=Mode(mode), success_exit=success)
    return bundle, model


def _write_trace(path, trace):
    if path:
        Path(path).write_text(json.dumps(trace, indent=1) + "\n")


def cmd_gen(args) -> int:
    params = {}
    for item in args.param or []:
        k, _, v = item.partition("=")
        params[k.replace("-", "_")] = json.loads(v) if v[:1] in "[{" else float(v) if "." in v else int(v)
    bundle = generate(args.family, args.out, seed=args.seed, **params)
    print(f"wrote {bundle.macro_path.parent}")
    return EXIT_OK


def cmd_solve(args) -> int:
    bundle, model = _load(args)
    cfg = bundle.config
    trace = []

    def emit(entry):
        trace.append(entry)
        if args.verbose:
            print(json.dumps(entry), file=sys.stderr)

    config = RefineConfig(
        eta=cfg.eta if args.eta is None else args.eta,
        epsilon=cfg.epsilon if args.epsilon is None else args.epsilon,
        k=cfg.k if args.k is None else args.k,
        max_iter=cfg.max_iter if args.max_iter is None else args.max_iter,
        override_local_optimality=args.override_local_optimality,
        workers=args.workers,
        callback=emit,
    )
    try:
        lb, ub, _, _ = run(model, config=config)
    except IterationCapExceeded:
        _write_trace(args.trace, trace)
        raise
    _write_trace(args.trace, trace)
    print(json.dumps({"lb": lb, "ub": ub, "iterations": trace[-1]["iter"] if trace else 0}))
    return EXIT_OK


def cmd_enumerate(args) -> int:
    _, model = _load(args)
    report = check_local_optimality(model)
    if not report and not args.override_local_optimality:
        print(f"error: {report.reason}; pass --override-local-optimality to proceed", file=sys.stderr)
        return EXIT_DIAG
    t0 = time.perf_counter()
    res = enumerate_baseline(model, args.epsilon or 1e-8)
    print(json.dumps({"value": res.value, "distinct_checks": res.distinct_checks,
                      "wall_ms": (time.perf_counter() - t0) * 1000.0}))
    return EXIT_OK


def cmd_flatten(args) -> int:
    _, model = _load(args)
    eps = args.epsilon or 1e-8
    flat = flatten(model, args.cap, eps)
    values, _ = max_expected_reward(flat, eps)
    print(json.dumps({"value": float(values.values[model.initial]), "states": flat.n,
                      "choices": flat.n_groups, "transitions": int(flat.P.nnz)}))
    return EXIT_OK


def cmd_info(args) -> int:
    _, model = _load(args)
    t = model.template
    info = {
        "name": model.name,
        "mode": model.mode.value,
        "calls": model.n_calls,
        "distinct_valuations": len({model.states[i].valuation for i in model.call_indices}),
        "macro_states": len(model.states),
        "template_states": t.pmdp.n_states,
        "template_choices": t.pmdp.n_choices,
        "template_params": len(t.params),
        "exits": t.n_exits,
        "flat_states": flat_state_count(model),
        "local_optimality": bool(check_local_optimality(model)),
    }
    print(json.dumps(info, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hmdp", description="Hierarchical MDP abstraction-refinement solver")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a generated model bundle")
    g.add_argument("family", choices=["token", "chain-grid", "tasks"])
    g.add_argument("out")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="family parameter, e.g. depth=4 breadth=10 template-states=50")
    g.set_defaults(func=cmd_gen)

    def common(p):
        p.add_argument("bundle", help="bundle directory")
        p.add_argument("--epsilon", type=float)
        p.add_argument("--mode", choices=["single", "success"])
        p.add_argument("--success-exit", type=int, default=0)
        p.add_argument("--override-local-optimality", action="store_true")

    s = sub.add_parser("solve", help="anytime bounds by abstraction refinement")
    common(s)
    s.add_argument("--eta", type=float)
    s.add_argument("--k", type=int, help="macro re-check cadence (default 8)")
    s.add_argument("--trace", help="write trace JSON here")
    s.add_argument("--seed", type=int, default=0, help="accepted for reproducibility; the solver is deterministic")
    s.add_argument("--max-iter", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("enumerate", help="solve every call, then the macro")
    common(e)
    e.set_defaults(func=cmd_enumerate)

    f = sub.add_parser("flatten", help="solve the explicit flat model")
    common(f)
    f.add_argument("--cap", type=int, default=10**7)
    f.set_defaults(func=cmd_flatten)

    i = sub.add_parser("info", help="model statistics")
    common(i)
    i.set_defaults(func=cmd_info)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIAG
    except (HmdpError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
