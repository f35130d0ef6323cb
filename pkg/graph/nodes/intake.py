"""
graph/nodes/intake.py
=====================
Intake Node: first node of the scoring graph.

Responsibilities:
  - Validate the token grid: layout, finite entries, no zero-norm tokens.
  - Check the token width against the model width.
  - On failure, mark the state REJECTED; the graph then skips straight to output.
"""

from __future__ import annotations

from graph.state import ScoringState
from middleware.guards import AlignmentError


def _reject(state: ScoringState, message: str) -> ScoringState:
    state.errors.append(f"Intake: {message}")
    state.status = "REJECTED"
    state.route_taken = "rejected"
    return state


def intake_node(state: ScoringState) -> ScoringState:
    state.node_path.append("intake")

    if state.grid is None or state.model is None or state.config is None:
        return _reject(state, "grid, model and config are all required.")

    try:
        state.grid.validate()
    except AlignmentError as e:
        return _reject(state, str(e))

    if state.grid.d != state.model.d:
        return _reject(state, f"token width {state.grid.d} does not match model width {state.model.d}.")

    if state.pixel_shape is not None:
        ph, pw = state.pixel_shape
        if ph < state.grid.h or pw < state.grid.w:
            return _reject(state, f"pixel shape {ph}x{pw} is smaller than the {state.grid.h}x{state.grid.w} grid.")

    return state
