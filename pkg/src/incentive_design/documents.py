"""JSON documents for models, objectives, schedules and reports.

Every document is UTF-8 JSON carrying ``schema_version``. Float values
are written with full round-trip precision by the standard encoder.
"""

from __future__ import annotations

import json
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

from .incentives import IncentiveSchedule
from .lifting import Origin
from .mdp import Mdp, validate_model
from .scltl import Dfa, parse_scltl, to_dfa

SCHEMA_VERSION = 1


class DocumentError(ValueError):
    """A document is malformed or describes an invalid object."""


def _check_version(doc: Mapping, kind: str) -> None:
    if not isinstance(doc, Mapping):
        raise DocumentError(f"{kind} document must be a JSON object")
    v = doc.get("schema_version")
    if v != SCHEMA_VERSION:
        raise DocumentError(f"{kind} document has schema_version {v!r}, expected {SCHEMA_VERSION}")


def dumps(doc: Mapping) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def write(path: str | Path, doc: Mapping) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def read(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DocumentError(f"cannot read {path}: {exc}") from exc


# -- models --------------------------------------------------------------------------


def mdp_from_dict(d: Mapping) -> Mdp:
    try:
        transitions = {(t["state"], t["action"]): dict(t["next"]) for t in d["transitions"]}
        rewards = {(r["state"], r["action"]): float(r["value"]) for r in d.get("rewards", ())}
        return Mdp(
            states=tuple(d["states"]),
            initial=d["initial"],
            actions=tuple(d["actions"]),
            enabled={s: tuple(a) for s, a in d["enabled"].items()},
            transitions=transitions,
            atomic_props=frozenset(d.get("atomic_props", ())),
            labels={s: frozenset(v) for s, v in d.get("labels", {}).items()},
            rewards=rewards,
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise DocumentError(f"malformed model: {exc!r}") from exc


def model_document(m: Mdp, horizon: int, metadata: Mapping | None = None, name: str | None = None) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "model"}
    if name:
        doc["name"] = name
    doc["horizon"] = horizon
    doc["model"] = m.to_dict()
    doc["metadata"] = dict(metadata or {})
    return doc


def load_model(doc: Mapping) -> tuple[Mdp, int, dict]:
    """Parse and validate a model document; returns ``(model, horizon, metadata)``."""
    _check_version(doc, "model")
    m = mdp_from_dict(doc.get("model", {}))
    problems = validate_model(m)
    if problems:
        raise DocumentError("invalid model: " + "; ".join(str(v) for v in problems))
    N = doc.get("horizon")
    if not isinstance(N, int) or N < 1:
        raise DocumentError(f"horizon must be a positive integer, got {N!r}")
    return m, N, dict(doc.get("metadata", {}))


# -- objectives -----------------------------------------------------------------------


def spec_document(scltl: str | None = None, dfa: Dfa | None = None) -> dict:
    if (scltl is None) == (dfa is None):
        raise ValueError("give exactly one of scltl or dfa")
    doc = {"schema_version": SCHEMA_VERSION, "kind": "spec"}
    if scltl is not None:
        doc["scltl"] = scltl
    else:
        doc["dfa"] = dfa.to_document()
    return doc


def load_spec(doc: Mapping, ap) -> Dfa:
    """Objective automaton from a spec document (formula or explicit DFA)."""
    _check_version(doc, "spec")
    has_f, has_d = "scltl" in doc, "dfa" in doc
    if has_f == has_d:
        raise DocumentError("spec document needs exactly one of 'scltl' or 'dfa'")
    if has_f:
        return to_dfa(parse_scltl(doc["scltl"]), ap)
    return Dfa.from_document(doc["dfa"])


# -- schedules -------------------------------------------------------------------------


def _origin_doc(o: Origin) -> dict:
    return {"state": o.state, "stage": o.stage, "memory": o.memory}


def schedule_document(s: IncentiveSchedule) -> dict:
    def order(k):
        t, st, q, a = k
        return (t, st, q or "", a)

    payments = []
    for k in sorted(s.payments, key=order):
        t, st, q, a = k
        entry = {"stage": t, "state": st}
        if q is not None:
            entry["memory"] = q
        entry["action"] = a
        entry["amount"] = s.payments[k]
        payments.append(entry)
    key = lambda o: (o.stage, o.state, o.memory or "")
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "incentive_schedule",
        "level": s.level,
        "horizon": s.horizon,
        "epsilon": s.epsilon,
        "epsilon_bar": s.epsilon_bar,
        "last_stage": s.last_stage,
        "switch_mode": s.switch_mode,
        "payments": payments,
        "target_states": [_origin_doc(o) for o in sorted(s.target_states, key=key)],
        "zero_states": [_origin_doc(o) for o in sorted(s.zero_states, key=key)],
        "provenance": dict(s.provenance),
    }


def load_schedule(doc: Mapping) -> IncentiveSchedule:
    _check_version(doc, "schedule")
    try:
        payments = {}
        for e in doc["payments"]:
            payments[(int(e["stage"]), e["state"], e.get("memory"), e["action"])] = float(e["amount"])
        origins = lambda xs: frozenset(Origin(o["state"], int(o["stage"]), o.get("memory")) for o in xs)
        return IncentiveSchedule(
            doc["level"],
            int(doc["horizon"]),
            float(doc["epsilon"]),
            MappingProxyType(payments),
            origins(doc.get("target_states", ())),
            origins(doc.get("zero_states", ())),
            doc.get("epsilon_bar"),
            doc.get("last_stage"),
            MappingProxyType(dict(doc.get("provenance", {}))),
            bool(doc.get("switch_mode", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DocumentError(f"malformed schedule: {exc}") from exc
