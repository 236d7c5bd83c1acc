"""Temporal-logic path planning with live replanning under uncertainty."""

__version__ = "0.1.0"

from .ltlf import (  # noqa: F401
    Dfa,
    Formula,
    accepting_one_hop,
    compute_bad_states,
    evaluate,
    forbidden_zones,
    parse,
    preprocess,
    step,
    to_dfa,
)
from .planner import Planner, PlannerConfig, SolutionLibrary, h_signature  # noqa: F401
from .sim import (  # noqa: F401
    BUILTIN_NAMES,
    RunMetrics,
    Scenario,
    batch,
    builtin_document,
    load_scenario,
    run,
    run_baseline,
)
from .tree import PlanGraph, near_radius, steer  # noqa: F401
from .workspace import (  # noqa: F401
    Knowledge,
    KnowledgeBase,
    Obstacle,
    Region,
    Workspace,
    edge_trace,
    is_free,
    label_of,
    sense,
)
