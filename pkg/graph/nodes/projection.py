"""
graph/nodes/projection.py
=========================
Projection Node: derives the per-image-independent textual side: the
subspace bank o_c^j = W_c^j l_c + b_c^j and the global prompts g_bar_c.
"""

from __future__ import annotations

from alignment_engine.objective import global_prompts
from alignment_engine.semantics import project_subspaces
from graph.state import ScoringState


def projection_node(state: ScoringState) -> ScoringState:
    state.node_path.append("projection")

    if state.config.use_dynamic:
        state.bank = project_subspaces(state.model)

    prompts = global_prompts(state.model, state.config)
    state.g_bar_n, state.g_bar_a = prompts["n"], prompts["a"]
    return state
