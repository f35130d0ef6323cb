"""
graph/workflow.py
=================
Scoring Graph Assembly.

Builds and compiles the StateGraph that scores one token grid.

Architecture:
┌─────────────────────────────────────────────────────────────────────┐
│                        PER-IMAGE SCORING GRAPH                      │
│                                                                     │
│  START → intake → projection → router                               │
│                                                                     │
│  router ──dynamic_ot/van──→ base_alignment → dynamic_alignment ─┐   │
│  router ──base_only───────→ base_alignment ─────────────────────┤   │
│  router ──dynamic_only────→ dynamic_alignment ──────────────────┤   │
│                                              fusion ←───────────┘   │
│                                              fusion → output → END  │
│  intake ──REJECTED──────────────────────────────────→ output → END  │
└─────────────────────────────────────────────────────────────────────┘

Each node receives the full state and returns the mutated state. When
LangGraph is not installed the same nodes run through a sequential
runner with identical behaviour.
"""

from __future__ import annotations

from typing import Callable, Optional

try:
    from langgraph.graph import END, StateGraph
    LANGGRAPH_AVAILABLE = True
except ImportError:
    LANGGRAPH_AVAILABLE = False

from alignment_engine.config import TrainConfig
from alignment_engine.semantics import SubspaceModel
from data_io.samples import LabeledSample, TokenGrid
from graph.nodes.alignment import base_alignment_node, dynamic_alignment_node
from graph.nodes.fusion import fusion_node
from graph.nodes.intake import intake_node
from graph.nodes.output import output_node
from graph.nodes.projection import projection_node
from graph.nodes.router import BASE_ROUTES, DYNAMIC_ROUTES, router_node
from graph.state import ScoringState

Runner = Callable[[ScoringState], ScoringState]


# ── Routing Functions ─────────────────────────────────────────────────────────

def _route_after_intake(state: ScoringState) -> str:
    return "output" if state.status == "REJECTED" else "projection"


def _route_after_router(state: ScoringState) -> str:
    return "base_alignment" if state.route_taken in BASE_ROUTES else "dynamic_alignment"


def _route_after_base(state: ScoringState) -> str:
    return "dynamic_alignment" if state.route_taken in DYNAMIC_ROUTES else "fusion"


# ── Graph Builder ─────────────────────────────────────────────────────────────

def build_workflow(use_langgraph: bool = True) -> Runner:
    """
    Return a callable ScoringState -> ScoringState.

    The compiled LangGraph graph is used when available and requested;
    otherwise the sequential fallback runner.
    """
    if not (use_langgraph and LANGGRAPH_AVAILABLE):
        return _build_sequential_runner()

    graph = StateGraph(ScoringState)

    graph.add_node("intake",            intake_node)
    graph.add_node("projection",        projection_node)
    graph.add_node("router",            router_node)
    graph.add_node("base_alignment",    base_alignment_node)
    graph.add_node("dynamic_alignment", dynamic_alignment_node)
    graph.add_node("fusion",            fusion_node)
    graph.add_node("output",            output_node)

    graph.set_entry_point("intake")

    graph.add_conditional_edges(
        "intake",
        _route_after_intake,
        {"output": "output", "projection": "projection"},
    )
    graph.add_edge("projection", "router")
    graph.add_conditional_edges(
        "router",
        _route_after_router,
        {"base_alignment": "base_alignment", "dynamic_alignment": "dynamic_alignment"},
    )
    graph.add_conditional_edges(
        "base_alignment",
        _route_after_base,
        {"dynamic_alignment": "dynamic_alignment", "fusion": "fusion"},
    )
    graph.add_edge("dynamic_alignment", "fusion")
    graph.add_edge("fusion", "output")
    graph.add_edge("output", END)

    compiled = graph.compile()

    def invoke_wrapper(state: ScoringState) -> ScoringState:
        return ScoringState.coerce(compiled.invoke(state))
    return invoke_wrapper


def _build_sequential_runner() -> Runner:
    """Mirrors the graph's node sequence without the LangGraph dependency."""
    def run(state: ScoringState) -> ScoringState:
        state = intake_node(state)
        if _route_after_intake(state) == "output":
            return output_node(state)

        state = projection_node(state)
        state = router_node(state)

        if _route_after_router(state) == "base_alignment":
            state = base_alignment_node(state)
            if _route_after_base(state) == "dynamic_alignment":
                state = dynamic_alignment_node(state)
        else:
            state = dynamic_alignment_node(state)

        state = fusion_node(state)
        return output_node(state)

    return run


def score_sample(
    model: SubspaceModel,
    cfg: TrainConfig,
    sample: LabeledSample | TokenGrid,
    runner: Optional[Runner] = None,
) -> ScoringState:
    """Score one sample (pixel maps at mask resolution) or one bare grid (patch maps)."""
    runner = runner or build_workflow()
    if isinstance(sample, LabeledSample):
        state = ScoringState(
            grid=sample.grid, model=model, config=cfg,
            pixel_shape=tuple(sample.mask.shape), name=sample.name, label=sample.label,
        )
    else:
        state = ScoringState(grid=sample, model=model, config=cfg)
    return runner(state)
