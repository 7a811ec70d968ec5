"""Bounded model checking of non-repudiation and fair-exchange protocols
under a Dolev-Yao intruder."""

from __future__ import annotations

__version__ = "0.1.0"

from .dsl import (
    DSLError,
    load_properties,
    load_protocol,
    load_scenario,
    parse_formula,
    parse_properties,
    parse_protocol,
    parse_scenario,
    parse_term,
)
from .knowledge import KnowledgeBase, add, can_deduce, eval_term_formula
from .model import Bounds, Property, PropertyFile, ProtocolSpec, Scenario
from .properties import (
    builtin_properties,
    check_well_formed,
    eval_formula,
    fairness_property,
    nr_service_properties,
)
from .runtime import AnnotationUnsound, GlobalState, ModelError, Transition, enabled, initial_state, is_terminal, step
from .search import ATTACK, BOUNDED, SAFE, DivergenceError, ExplorationResult, Trace, canonical_digest, explore, replay
from .terms import match, substitute, subterms

__all__ = [
    "ATTACK",
    "AnnotationUnsound",
    "BOUNDED",
    "Bounds",
    "DSLError",
    "DivergenceError",
    "ExplorationResult",
    "GlobalState",
    "KnowledgeBase",
    "ModelError",
    "Property",
    "PropertyFile",
    "ProtocolSpec",
    "SAFE",
    "Scenario",
    "Trace",
    "Transition",
    "__version__",
    "add",
    "builtin_properties",
    "can_deduce",
    "canonical_digest",
    "check_well_formed",
    "enabled",
    "eval_formula",
    "eval_term_formula",
    "explore",
    "fairness_property",
    "initial_state",
    "is_terminal",
    "load_properties",
    "load_protocol",
    "load_scenario",
    "match",
    "nr_service_properties",
    "parse_formula",
    "parse_properties",
    "parse_protocol",
    "parse_scenario",
    "parse_term",
    "replay",
    "step",
    "substitute",
    "subterms",
]
