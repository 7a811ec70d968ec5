"""Command-line front end: ``check``, ``explore`` and ``trace``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from . import formulas as F
from .dsl import DSLError, load_properties, load_protocol, load_scenario, parse_formula
from .model import Bounds, Property, ProtocolSpec, Scenario
from .properties import PropertyError, builtin_properties, eval_formula
from .report import ReportError, RunReport, read_report, render_trace
from .runtime import ModelError
from .search import ATTACK, BOUNDED, MODEL_ERROR, SAFE, DivergenceError, explore, replay
from .terms import Var

EXIT = {SAFE: 0, ATTACK: 1, MODEL_ERROR: 2, BOUNDED: 3}
CORPUS_ENV = "NRCHECK_CORPUS"
BUILTIN_NAMES = ("fairness", "nro", "nrr", "nr")


class UsageError(Exception):
    pass


def corpus_dirs() -> list[Path]:
    dirs = []
    env = os.environ.get(CORPUS_ENV)
    if env:
        dirs.append(Path(env))
    dirs.append(Path(__file__).resolve().parent / "corpus")
    return dirs


def resolve_input(name: str) -> Path:
    """A path as given if it exists, else looked up in the corpus directories."""
    p = Path(name)
    if p.exists() or p.is_absolute():
        return p.resolve() if p.exists() else p
    for d in corpus_dirs():
        if (d / p).exists():
            return (d / p).resolve()
    return p


def property_files_for(proto_path: Path) -> list[Path]:
    """``<stem>.prop`` and ``<stem>_*.prop`` next to the protocol."""
    stem = proto_path.stem
    d = proto_path.parent
    found = [d / f"{stem}.prop"] + sorted(d.glob(f"{stem}_*.prop"))
    return [p for p in found if p.exists()]


def select_properties(
    spec: ProtocolSpec,
    scn: Scenario,
    proto_path: Path,
    selectors: Sequence[str],
    fairness_mode: str = "terminal",
) -> list[Property]:
    """Resolve ``--prop`` selectors.

    The names ``fairness``, ``nro``, ``nrr`` and ``nr`` always denote the
    generated properties; other names are looked up in the property files
    shipped next to the protocol; an existing ``.prop`` path selects every
    property of that file.  Without selectors all generated properties are
    checked.
    """
    builtins = builtin_properties(spec, [s.name for s in scn.sessions], fairness_mode)
    if not selectors:
        return list(builtins.properties)
    out: list[Property] = []
    for sel in selectors:
        if sel in BUILTIN_NAMES:
            if sel in builtins.names():
                out.append(builtins.get(sel))
                continue
            raise UsageError(f"protocol {spec.name} declares no evidence for property {sel!r}")
        path = Path(sel)
        if sel.endswith(".prop") or path.exists():
            path = resolve_input(sel)
            out.extend(load_properties(path).properties)
            continue
        for f in property_files_for(proto_path):
            pf = load_properties(f)
            if sel in pf.names():
                out.append(pf.get(sel))
                break
        else:
            raise UsageError(f"unknown property {sel!r}")
    return out


def _bounds(args, scn: Scenario) -> Bounds:
    b = scn.bounds
    return Bounds(
        args.max_states if args.max_states is not None else b.max_states,
        args.max_depth if args.max_depth is not None else b.max_depth,
        args.fresh_budget if args.fresh_budget is not None else b.intruder_fresh_budget,
    )


def _load(args):
    proto_path = resolve_input(args.protocol)
    scn_path = resolve_input(args.scenario)
    spec = load_protocol(proto_path)
    scn = load_scenario(scn_path, spec)
    try:
        bounds = _bounds(args, scn)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return spec, scn, proto_path, scn_path, bounds


def cmd_check(args, out, err) -> int:
    spec, scn, proto_path, scn_path, bounds = _load(args)
    props = select_properties(spec, scn, proto_path, args.prop or (), args.fairness_mode)
    result = explore(spec, scn, props, bounds, workers=args.workers, search=args.search)
    report = RunReport.from_result(result, spec, scn, proto_path, scn_path, props)
    if args.report:
        Path(args.report).write_text(report.machine(), encoding="utf-8")
    out.write(report.machine() if args.format == "machine" else report.human_text())
    if result.verdict == MODEL_ERROR:
        err.write(f"nrcheck: model error: {result.error}\n")
    return EXIT[result.verdict]


def cmd_explore(args, out, err) -> int:
    spec, scn, proto_path, scn_path, bounds = _load(args)
    result = explore(spec, scn, None, bounds, workers=args.workers, search=args.search)
    rec = {"record": "stats", "verdict": result.verdict, "bound": result.bound, **result.stats.as_record()}
    if result.error:
        rec["error"] = result.error
    if args.format == "machine":
        out.write(json.dumps(rec, sort_keys=True) + "\n")
    else:
        out.write(f"verdict: {result.verdict}\n")
        if result.bound:
            out.write(f"bound reached: {result.bound}\n")
        out.write(
            f"states: {rec['states']}  terminals: {rec['terminals']}  transitions: {rec['transitions']}  "
            f"depth: {rec['depth']}  time: {rec['milliseconds']} ms\n"
        )
    if result.verdict == MODEL_ERROR:
        err.write(f"nrcheck: model error: {result.error}\n")
    return EXIT[result.verdict]


def _evidence_lines(spec: ProtocolSpec, scn: Scenario, state) -> list[str]:
    lines = []
    for s in scn.sessions:
        for ev in spec.evidence:
            for pred in (F.Aknows, F.Deduce):
                f = pred(ev.owner, s.name, Var(ev.name))
                lines.append(f"{F.render_formula(f)} = {str(eval_formula(state, f)).lower()}")
    return lines


def cmd_trace(args, out, err) -> int:
    report = read_report(args.report)
    if report.trace is None:
        raise UsageError(f"{args.report} contains no trace")
    if args.format == "machine" and not args.replay:
        out.write(report.machine())
        return 0
    if not (report.protocol_path and report.scenario_path):
        raise UsageError("report does not name its protocol and scenario")
    spec = load_protocol(report.protocol_path)
    scn = load_scenario(report.scenario_path, spec)
    lines = [f"verdict: {report.verdict}"]
    if report.prop_name:
        lines.append(f"property: {report.prop_name} ({report.prop_mode}) {report.prop_formula}")
    if args.replay:
        state = replay(spec, scn, report.trace)
        lines.extend(render_trace(spec, scn, report.trace))
        lines.append(f"replayed {len(report.trace)} transitions")
        if report.prop_formula:
            _, f = parse_formula(report.prop_formula)
            lines.append(f"{report.prop_name} = {str(eval_formula(state, f)).lower()}")
        lines.extend(_evidence_lines(spec, scn, state))
    else:
        lines.extend(render_trace(spec, scn, report.trace))
    out.write("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nrcheck", description=__doc__)
    p.add_argument("--version", action="version", version=f"nrcheck {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def model_args(sp):
        sp.add_argument("protocol", help="protocol file (.proto); looked up in the corpus if not found")
        sp.add_argument("scenario", help="scenario file (.scn)")
        sp.add_argument("--max-states", type=int)
        sp.add_argument("--max-depth", type=int)
        sp.add_argument("--fresh-budget", type=int, help="values the intruder may generate")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--search", choices=("bfs", "dfs"), default="bfs")
        sp.add_argument("--format", choices=("human", "machine"), default="human")

    c = sub.add_parser("check", help="explore and check properties")
    model_args(c)
    c.add_argument("--prop", action="append", metavar="NAME|FILE")
    c.add_argument("--fairness-mode", choices=("terminal", "invariant"), default="terminal")
    c.add_argument("--report", metavar="PATH", help="also write the machine report here")
    c.set_defaults(run=cmd_check)

    e = sub.add_parser("explore", help="explore without properties and print statistics")
    model_args(e)
    e.set_defaults(run=cmd_explore)

    t = sub.add_parser("trace", help="render a trace from a machine report")
    t.add_argument("report")
    t.add_argument("--replay", action="store_true", help="re-execute and re-evaluate the property")
    t.add_argument("--format", choices=("human", "machine"), default="human")
    t.set_defaults(run=cmd_trace)
    return p


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        err.write("nrcheck: error: --workers must be at least 1\n")
        return 2
    try:
        return args.run(args, out, err)
    except (DSLError, PropertyError, ReportError, DivergenceError, ModelError, UsageError, OSError) as exc:
        err.write(f"nrcheck: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
