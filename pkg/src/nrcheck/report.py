"""Run reports: a versioned JSON-lines stream for machines and numbered
Alice&Bob lines for people.  Both are produced from the same transitions."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from . import terms as T
from .formulas import render_formula
from .model import ProtocolSpec, Scenario
from .runtime import AknowsFact, RequestFact, Transition, WitnessFact
from .search import ExplorationResult, Trace, walk
from .terms import Term, render

FORMAT = "nrcheck-report"
FORMAT_VERSION = 1

_TERM_CLASSES = {c.__name__: c for c in (T.Atom, T.Var, T.Pair, T.SEnc, T.AEnc, T.Sign, T.Hash, T.Pk, T.Inv)}


class ReportError(ValueError):
    """A report file is malformed or of an unsupported version."""


# ---------------------------------------------------------------------------
# term and transition encoding


def term_to_json(t: Term):
    if isinstance(t, T.Atom):
        return ["Atom", t.kind, t.name, list(t.origin) if t.origin is not None else None]
    if isinstance(t, T.Var):
        return ["Var", t.name, t.sort]
    return [type(t).__name__, *(term_to_json(c) for c in t.children)]


def term_from_json(data) -> Term:
    try:
        tag, *args = data
        cls = _TERM_CLASSES[tag]
        if cls is T.Atom:
            kind, name, origin = args
            return T.Atom(kind, name, tuple(origin) if origin is not None else None)
        if cls is T.Var:
            return T.Var(*args)
        return cls(*(term_from_json(a) for a in args))
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportError(f"malformed term {data!r}") from exc


def transition_to_json(t: Transition) -> dict:
    rec = {"session": t.session, "role": t.role, "thread": t.thread, "action": t.action}
    if t.message is not None:
        rec["message"] = term_to_json(t.message)
        rec["message_text"] = render(t.message)
    if t.entry is not None:
        rec["entry"] = t.entry
    return rec


def transition_from_json(rec: dict) -> Transition:
    try:
        msg = rec.get("message")
        return Transition(
            rec["session"],
            rec["role"],
            rec["thread"],
            rec["action"],
            term_from_json(msg) if msg is not None else None,
            rec.get("entry"),
        )
    except KeyError as exc:
        raise ReportError(f"transition record lacks {exc}") from None


# ---------------------------------------------------------------------------
# human rendering


def _step_lines(t: Transition, effects: list, script: str) -> list[str]:
    """Alice&Bob lines for one transition from its recorded effects.

    ``script`` is the sub-protocol the thread runs once the step is taken.
    """
    out = []
    for e in effects:
        kind = e[0]
        if kind == "recv":
            _, agent, role, peer_agent, peer_role, msg, source = e
            sender = peer_agent if source == "secure" else f"I({peer_agent})"
            tag = " [secure]" if source == "secure" else ""
            out.append(f"{sender} -> {agent} ({role}/{script}){tag} : {render(msg)}")
        elif kind == "enter":
            _, agent, role, sub = e
            out.append(f"{agent} ({role}) enters {sub}")
        elif kind == "send":
            _, agent, role, peer_agent, peer_role, msg, channel = e
            target = peer_agent if channel == "secure" else f"I({peer_agent})"
            tag = " [secure]" if channel == "secure" else ""
            out.append(f"  {agent} -> {target}{tag} : {render(msg)}")
        elif kind == "branch":
            _, agent, pred, term, taken = e
            out.append(f"  {agent} checks {pred}({render(term)}): {'yes' if taken else 'no'}")
        elif kind == "insert":
            _, agent, pred, term = e
            out.append(f"  {agent} records {pred}({render(term)})")
        elif kind == "fact":
            f = e[1]
            if isinstance(f, AknowsFact):
                out.append(f"  aknows({f.agent},{f.session},{render(f.term)})")
            elif isinstance(f, (WitnessFact, RequestFact)):
                word = "witness" if isinstance(f, WitnessFact) else "request"
                out.append(f"  {word}({f.agent},{f.peer},{render(f.data)})")
        elif kind == "intruder-fresh":
            out.append("  intruder generates " + ", ".join(render(a) for a in e[1]))
    if t.action == "start":
        out.insert(0, f"{t.role}/{script} starts in {t.session}")
    return out


def render_trace(spec: ProtocolSpec, scn: Scenario, trace: Trace) -> list[str]:
    """Numbered Alice&Bob lines, one block per transition, by replaying."""
    lines = []
    for i, (t, effects, state) in enumerate(walk(spec, scn, trace), 1):
        script = state.thread(t.session, t.role, t.thread).script
        body = _step_lines(t, effects, script)
        lines.append(f"{i:>3}. {body[0]}")
        lines.extend(f"     {b}" for b in body[1:])
    return lines


# ---------------------------------------------------------------------------
# reports


def _digest_file(path: Optional[str]) -> Optional[str]:
    if not path:
        return None
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return None


@dataclass
class RunReport:
    verdict: str
    stats: dict
    protocol_path: Optional[str] = None
    scenario_path: Optional[str] = None
    protocol_name: str = ""
    scenario_name: str = ""
    prop_name: Optional[str] = None
    prop_mode: Optional[str] = None
    prop_formula: Optional[str] = None
    trace: Optional[Trace] = None
    trace_kind: Optional[str] = None  # "counterexample", "witness" or "error"
    bound: Optional[str] = None
    error: Optional[str] = None
    versions: dict = field(default_factory=dict)
    human: list[str] = field(default_factory=list)

    @classmethod
    def from_result(
        cls,
        result: ExplorationResult,
        spec: ProtocolSpec,
        scn: Scenario,
        protocol_path=None,
        scenario_path=None,
        checked: Iterable = (),
    ) -> "RunReport":
        from . import __version__

        trace, kind = None, None
        if result.trace is not None:
            trace, kind = result.trace, ("error" if result.error else "counterexample")
        elif result.witness is not None:
            trace, kind = result.witness, "witness"
        prop = result.violated
        checked = list(checked)
        if prop is None and len(checked) == 1:
            prop = checked[0]
        rep = cls(
            verdict=result.verdict,
            stats=result.stats.as_record(),
            protocol_path=str(protocol_path) if protocol_path else None,
            scenario_path=str(scenario_path) if scenario_path else None,
            protocol_name=spec.name,
            scenario_name=scn.name,
            prop_name=prop.name if prop else None,
            prop_mode=prop.mode if prop else None,
            prop_formula=render_formula(prop.formula) if prop else None,
            trace=trace,
            trace_kind=kind,
            bound=result.bound,
            error=result.error,
            versions={
                "tool": __version__,
                "format": FORMAT_VERSION,
                "protocol_sha256": _digest_file(protocol_path),
                "scenario_sha256": _digest_file(scenario_path),
            },
        )
        if trace is not None and kind != "error":
            rep.human = render_trace(spec, scn, trace)
        elif trace is not None:
            rep.human = [f"{i:>3}. {t.describe()}" for i, t in enumerate(trace.transitions, 1)]
        return rep

    # machine format -------------------------------------------------------

    def header(self) -> dict:
        return {
            "record": "header",
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "verdict": self.verdict,
            "property": self.prop_name,
            "mode": self.prop_mode,
            "formula": self.prop_formula,
            "protocol": {"name": self.protocol_name, "path": self.protocol_path},
            "scenario": {"name": self.scenario_name, "path": self.scenario_path},
            "versions": self.versions,
            "stats": self.stats,
            "bound": self.bound,
            "error": self.error,
            "trace": self.trace_kind,
            "initial_digest": self.trace.initial_digest if self.trace else None,
        }

    def machine_lines(self) -> list[str]:
        out = [json.dumps(self.header(), sort_keys=True)]
        steps = self.trace.transitions if self.trace else ()
        for i, t in enumerate(steps, 1):
            rec = {"record": "step", "index": i, **transition_to_json(t)}
            out.append(json.dumps(rec, sort_keys=True))
        out.append(json.dumps({"record": "end", "steps": len(steps)}, sort_keys=True))
        return out

    def machine(self) -> str:
        return "\n".join(self.machine_lines()) + "\n"

    # human format ---------------------------------------------------------

    def human_lines(self) -> list[str]:
        out = [f"verdict: {self.verdict}"]
        if self.prop_name:
            label = "violated" if self.verdict == "attack" else "property"
            out.append(f"{label}: {self.prop_name} ({self.prop_mode}) {self.prop_formula}")
        if self.bound:
            out.append(f"bound reached: {self.bound}")
        if self.error:
            out.append(f"error: {self.error}")
        s = self.stats
        out.append(
            f"states: {s['states']}  terminals: {s['terminals']}  depth: {s['depth']}  "
            f"time: {s['milliseconds']} ms  workers: {s['workers']}"
        )
        if self.trace is not None:
            title = {"counterexample": "attack trace", "witness": "longest complete run", "error": "trace"}
            out.append(f"{title[self.trace_kind]} ({len(self.trace)} transitions):")
            out.extend(self.human)
        return out

    def human_text(self) -> str:
        return "\n".join(self.human_lines()) + "\n"


def parse_report(text: str) -> RunReport:
    """Read the machine format back."""
    records = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ReportError(f"line {n}: not JSON ({exc.msg})") from None
    if not records or records[0].get("record") != "header" or records[0].get("format") != FORMAT:
        raise ReportError("not an nrcheck report: missing header record")
    h = records[0]
    if h.get("version") != FORMAT_VERSION:
        raise ReportError(f"unsupported report version {h.get('version')!r}")
    steps = [r for r in records[1:] if r.get("record") == "step"]
    if [r.get("index") for r in steps] != list(range(1, len(steps) + 1)):
        raise ReportError("step records are missing or out of order")
    end = [r for r in records if r.get("record") == "end"]
    if not end or end[-1].get("steps") != len(steps):
        raise ReportError("report is truncated")
    trace = None
    if h.get("trace"):
        trace = Trace(h.get("initial_digest") or "", tuple(transition_from_json(r) for r in steps))
    return RunReport(
        verdict=h["verdict"],
        stats=h.get("stats") or {},
        protocol_path=h["protocol"].get("path"),
        scenario_path=h["scenario"].get("path"),
        protocol_name=h["protocol"].get("name", ""),
        scenario_name=h["scenario"].get("name", ""),
        prop_name=h.get("property"),
        prop_mode=h.get("mode"),
        prop_formula=h.get("formula"),
        trace=trace,
        trace_kind=h.get("trace"),
        bound=h.get("bound"),
        error=h.get("error"),
        versions=h.get("versions") or {},
    )


def read_report(path) -> RunReport:
    return parse_report(Path(path).read_text(encoding="utf-8"))
