"""
graph/nodes/fusion.py
=====================
Fusion Node: combines the branch maps and scores the image.

  patch map   : (S_a^da + S_a) / 2, or the single active branch
  pixel map   : bilinear (align-corners) upsampling to pixel_shape
  P_a         : softmax of cos(g_bar_c, f) / tau
  image score : image_score(P_a, pixel map, config.image_score_formula)
"""

from __future__ import annotations

from alignment_engine.assignment import AnomalyMap, fuse_pixel_scores, global_anomaly_probability, image_score
from alignment_engine.objective import bilinear_upsample
from graph.state import ScoringState


def fusion_node(state: ScoringState) -> ScoringState:
    state.node_path.append("fusion")
    cfg = state.config

    if state.base_map is not None and state.dynamic_map is not None:
        state.patch_map = fuse_pixel_scores(state.dynamic_map, state.base_map)
    else:
        state.patch_map = state.dynamic_map if state.dynamic_map is not None else state.base_map

    if state.pixel_shape is None:
        state.pixel_map = state.patch_map
    else:
        upsampled = bilinear_upsample(state.patch_map.as_grid(), *state.pixel_shape)
        state.pixel_map = AnomalyMap.from_grid(upsampled, resolution="pixel")

    state.p_a_global = global_anomaly_probability(
        state.g_bar_n, state.g_bar_a, state.grid.image_embedding(), cfg.tau
    )
    state.image_score = image_score(state.p_a_global, state.pixel_map, cfg.image_score_formula)
    return state
