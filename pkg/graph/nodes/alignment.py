"""
graph/nodes/alignment.py
========================
Alignment Nodes: the two branches that produce patch-level anomaly maps.

  base_alignment_node     every token against the shared (l_n, l_a) pair
  dynamic_alignment_node  per-class cost matrix → Sinkhorn (or argmax) →
                          top-k sparse assignment → dynamic logits → S_a^da
"""

from __future__ import annotations

from alignment_engine.assignment import base_score_map, dynamic_logits, score_map_from_logits
from alignment_engine.objective import compute_assignments
from graph.state import ScoringState


def base_alignment_node(state: ScoringState) -> ScoringState:
    state.node_path.append("base_alignment")
    _, s_a = base_score_map(state.grid, state.model.l_n, state.model.l_a, state.config.tau)
    state.base_map = s_a
    return state


def dynamic_alignment_node(state: ScoringState) -> ScoringState:
    state.node_path.append("dynamic_alignment")
    grid, cfg = state.grid, state.config

    sims, plans, assignments = compute_assignments(grid.tokens, state.bank, cfg)
    z_n, z_a = dynamic_logits(assignments["n"], assignments["a"], sims["n"], sims["a"])
    _, s_a = score_map_from_logits(z_n, z_a, cfg.tau, (grid.h, grid.w))

    state.plans = plans
    state.assignments = assignments
    state.dynamic_map = s_a
    return state
