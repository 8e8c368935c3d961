"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 input error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .agent import AgentConfig, run_episodes
from .documents import (
    DocumentError,
    dumps,
    load_model,
    load_schedule,
    load_spec,
    model_document,
    read,
    schedule_document,
    spec_document,
    write,
)
from .fixtures import GRID_B_LAYOUTS, FIXTURES, make_fixture
from .incentives import backward_induction, strictness_check
from .lp import LpError, dump_problems
from .oracle import OracleCapError, crosscheck
from .pipeline import DEFAULT_EPSILON_BAR, PipelineError, lift, synthesize
from .scltl import CoSafetyError, DfaFormatError, ScltlSyntaxError, UnknownAtomError

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
TIES = {"first": "first-index", "random": "uniform-random", "adversarial": "adversarial"}
INPUT_ERRORS = (DocumentError, ScltlSyntaxError, CoSafetyError, UnknownAtomError, DfaFormatError, OracleCapError)
NUMERIC_STAGES = {"reach-lp", "cost-lp", "time-lp", "extraction"}


class _Out:
    def __init__(self, fmt: str):
        self.fmt = fmt

    def emit(self, doc: dict, lines: list[str]) -> None:
        if self.fmt == "json":
            sys.stdout.write(dumps(doc))
        else:
            sys.stdout.write("\n".join(lines) + "\n")


def _load(model_path: str, spec_path: str):
    m, N, meta = load_model(read(model_path))
    dfa = load_spec(read(spec_path), m.atomic_props)
    return m, N, meta, dfa


def _is_deterministic(m) -> bool:
    return all(sum(1 for p in m.successors(s, a).values() if p > 0) == 1 for s, a in m.pairs)


def cmd_partition(args) -> int:
    m, N, _, dfa = _load(args.model, args.spec)
    pm, part, _ = lift(m, N, dfa)
    groups = {name: sorted(getattr(part, name), key=pm.mdp.states.index) for name in ("target", "zero", "rest")}
    doc = {"initial": pm.mdp.initial, **{k: [pm.origin[x]._asdict() for x in v] for k, v in groups.items()}}
    lines = [f"product states: {len(pm.mdp.states)} (initial {pm.mdp.initial})"]
    lines += [f"{k}: {len(v)}  " + " ".join(v[:12]) + (" ..." if len(v) > 12 else "") for k, v in groups.items()]
    _Out(args.format).emit(doc, lines)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    m, N, _, dfa = _load(args.model, args.spec)
    r = synthesize(m, N, dfa, epsilon_bar=args.epsilon_bar, epsilon=args.epsilon)
    if args.dump_lp and r.problems:
        dump_problems(r.problems, args.dump_lp)
    sched_doc = schedule_document(r.design)
    if args.out:
        write(args.out, sched_doc)
    rep = r.report()
    lines = [
        f"verdict: {rep['verdict']}",
        f"x*: {rep['x_star']:.12g}",
        f"upsilon*: {rep['upsilon_star']:.12g}",
        f"f0 (zero margin): {rep['f0']:.12g}",
        f"epsilon: {rep['epsilon']:.12g}",
        f"epsilon_bar: {rep['epsilon_bar']}",
        f"total residence: {rep['total_residence']:.12g}",
        f"expected payment: {rep['expected_payment']:.12g} = f0 + epsilon * total residence",
    ]
    if "share_witness" in rep:
        w = rep["share_witness"]
        lines.append(f"share required: state {w['state']} at stage {w['stage']} holds memories {w['memories']}")
    if args.out:
        lines.append(f"design written to {args.out}")
    _Out(args.format).emit(rep, lines)
    return EXIT_OK


def cmd_simulate(args) -> int:
    m, N, _, dfa = _load(args.model, args.spec)
    sched = load_schedule(read(args.design))
    cfg = AgentConfig(sched.horizon, TIES[args.ties], args.seed)
    records, summary = run_episodes(m, sched, dfa, args.trajectories, args.max_blocks, cfg)
    doc = summary.to_document()
    if args.dump_episodes:
        write(args.dump_episodes, {"schema_version": 1, "episodes": [r.to_document() for r in records]})
    lines = [
        f"episodes: {summary.episodes}",
        f"satisfied: {summary.satisfied_fraction:.6f} +/- {summary.stderr:.3g}",
        f"mean paid: {summary.mean_paid:.12g} +/- {summary.paid_stderr:.3g}",
        f"capped: {summary.capped}",
    ]
    _Out(args.format).emit(doc, lines)
    return EXIT_OK


def cmd_verify(args) -> int:
    m, N, _, dfa = _load(args.model, args.spec)
    sched = load_schedule(read(args.design))
    vt = backward_induction(m, sched.horizon)
    rep = strictness_check(m, sched, vt, dfa)
    lines = [f"strictness: {'PASS' if rep.ok else 'FAIL'} ({rep.checked} situations audited)"]
    lines += [f"  {v}" for v in rep.violations[:20]]
    ok = rep.ok
    doc = {"strictness_ok": rep.ok, "violations": [str(v) for v in rep.violations], "checked": rep.checked}
    expected = sched.provenance.get("upsilon_star")
    if expected is not None:
        cfg = AgentConfig(sched.horizon, "adversarial", args.seed)
        _, summary = run_episodes(m, sched, dfa, args.trajectories, args.max_blocks, cfg)
        exact = _is_deterministic(m)
        tol = 1e-9 * max(1.0, abs(expected)) if exact else 3 * summary.paid_stderr + 1e-9
        agree = abs(summary.mean_paid - expected) <= tol
        ok = ok and agree
        lines.append(
            f"payment agreement: {'PASS' if agree else 'FAIL'} simulated {summary.mean_paid:.12g} "
            f"vs LP {expected:.12g} (tolerance {tol:.3g})"
        )
        doc.update(simulated_paid=summary.mean_paid, lp_paid=expected, payment_ok=agree)
    doc["ok"] = ok
    _Out(args.format).emit(doc, lines)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_oracle(args) -> int:
    m, N, _, dfa = _load(args.model, args.spec)
    r = synthesize(m, N, dfa, epsilon_bar=args.epsilon_bar)
    if r.verdict == "TRIVIAL":
        _Out(args.format).emit({"ok": True, "trivial": True}, ["PASS trivial instance"])
        return EXIT_OK
    rep = crosscheck(r.modified, r.partition, r.coc, r.solution)
    doc = {
        "ok": rep.ok,
        "lp": {"x_star": rep.lp_reach, "upsilon_star": rep.lp_cost},
        "oracle": {
            "best_reach": rep.oracle.best_reach,
            "best_cost_at_max_reach": rep.oracle.best_cost_at_max_reach,
            "enumerated": rep.oracle.enumerated_count,
        },
    }
    _Out(args.format).emit(doc, rep.lines())
    return EXIT_OK if rep.ok else EXIT_VERIFY


def cmd_fixtures(args) -> int:
    fx = make_fixture(args.name, seed=args.seed, layout=args.layout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mpath = out / f"{fx.name}.model.json"
    spath = out / f"{fx.name}.spec.json"
    write(mpath, model_document(fx.model, fx.horizon, fx.metadata, fx.name))
    write(spath, spec_document(scltl=fx.spec))
    _Out(args.format).emit({"model": str(mpath), "spec": str(spath)}, [str(mpath), str(spath)])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="incentive-design", description=__doc__.splitlines()[0])
    p.add_argument("--format", choices=("text", "json"), default="text")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--format", choices=("text", "json"), default=argparse.SUPPRESS)

    sp = sub.add_parser("partition", help="partition the lifted product into target, zero and rest states")
    sp.add_argument("model")
    sp.add_argument("spec")
    common(sp)
    sp.set_defaults(func=cmd_partition)

    sp = sub.add_parser("synthesize", help="synthesize an incentive design")
    sp.add_argument("model")
    sp.add_argument("spec")
    sp.add_argument("--epsilon-bar", type=float, default=DEFAULT_EPSILON_BAR)
    sp.add_argument("--epsilon", type=float, default=None, help="fixed margin (overrides --epsilon-bar)")
    sp.add_argument("--out", help="where to write the design document")
    sp.add_argument("--dump-lp", help="directory for plain-text LP listings")
    common(sp)
    sp.set_defaults(func=cmd_synthesize)

    for name, fn, helptext in (
        ("simulate", cmd_simulate, "simulate the replanning agent under a design"),
        ("verify", cmd_verify, "audit strictness and payment agreement of a design"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("model")
        sp.add_argument("design")
        sp.add_argument("spec")
        sp.add_argument("--trajectories", type=int, default=10000 if name == "simulate" else 2000)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--max-blocks", type=int, default=1000)
        if name == "simulate":
            sp.add_argument("--ties", choices=tuple(TIES), default="adversarial")
            sp.add_argument("--dump-episodes", help="write per-episode records to this path")
        common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("oracle", help="cross-check LP values against policy enumeration")
    sp.add_argument("model")
    sp.add_argument("spec")
    sp.add_argument("--epsilon-bar", type=float, default=DEFAULT_EPSILON_BAR)
    common(sp)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("fixtures", help="write a named fixture's model and spec documents")
    sp.add_argument("name", choices=sorted(FIXTURES))
    sp.add_argument("--out", default=".")
    sp.add_argument("--seed", type=int, default=0, help="reward seed for grid-a")
    sp.add_argument("--layout", choices=sorted(GRID_B_LAYOUTS), default="default", help="label layout for grid-b")
    common(sp)
    sp.set_defaults(func=cmd_fixtures)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PipelineError as exc:
        code = EXIT_NUMERIC if exc.stage in NUMERIC_STAGES or isinstance(exc.cause, LpError) else EXIT_INPUT
        print(f"synthesis failed at stage {exc}", file=sys.stderr)
        return code
    except LpError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
