"""
graph/nodes/router.py
=====================
Router Node: picks the alignment route from the module switches.

Routing Logic:
┌──────────────────────────────────────────────────────────────────┐
│  use_base │ use_dynamic │ assignment │ Route                      │
├───────────┼─────────────┼────────────┼────────────────────────────│
│  true     │ true        │ ot         │ dynamic_ot                 │
│  true     │ true        │ van        │ dynamic_van                │
│  true     │ false       │ any        │ base_only                  │
│  false    │ true        │ any        │ dynamic_only               │
└──────────────────────────────────────────────────────────────────┘
"""

from __future__ import annotations

from graph.state import ScoringState

BASE_ROUTES = {"dynamic_ot", "dynamic_van", "base_only"}
DYNAMIC_ROUTES = {"dynamic_ot", "dynamic_van", "dynamic_only"}


def select_route(use_base: bool, use_dynamic: bool, assignment: str) -> str:
    if use_base and use_dynamic:
        return "dynamic_van" if assignment == "van" else "dynamic_ot"
    if use_base:
        return "base_only"
    return "dynamic_only"


def router_node(state: ScoringState) -> ScoringState:
    state.node_path.append("router")

    # ── Guard: already terminated by intake ───────────────────────────────────
    if state.status is not None:
        return state

    cfg = state.config
    state.route_taken = select_route(cfg.use_base, cfg.use_dynamic, cfg.assignment)
    return state
