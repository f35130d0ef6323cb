"""
graph/nodes/output.py
=====================
Output Node: final node in every execution path.

Ensures a terminal status is set regardless of the path taken and packs
the per-image ScoreResult. Rejected grids keep their intake errors and
carry no maps.
"""

from __future__ import annotations

from graph.state import ScoreResult, ScoringState


def output_node(state: ScoringState) -> ScoringState:
    state.node_path.append("output")

    if state.status is None:
        state.status = "SCORED"

    scored = state.status == "SCORED"
    state.result = ScoreResult(
        name=state.name,
        label=state.label,
        status=state.status,
        route=state.route_taken or "unrouted",
        image_score=state.image_score if scored else None,
        pixel_map=state.pixel_map if scored else None,
        node_path=tuple(state.node_path),
    )
    return state
