"""
graph/state.py
==============
Defines the state object that flows through every node of the per-image
scoring graph. All fields are typed; None means "not yet populated".
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Literal, Optional

import numpy as np

from alignment_engine.assignment import AnomalyMap, AssignmentMatrix
from alignment_engine.config import TrainConfig
from alignment_engine.semantics import SubspaceBank, SubspaceModel
from alignment_engine.transport import TransportPlan
from data_io.samples import TokenGrid

# ── Status Set ────────────────────────────────────────────────────────────────
#   SCORED    → maps and image score computed
#   REJECTED  → the token grid failed intake validation; nothing was scored
ScoringStatus = Literal["SCORED", "REJECTED"]

# ── Routes ────────────────────────────────────────────────────────────────────
#   dynamic_ot    → base map + OT-assigned dynamic map, fused
#   dynamic_van   → base map + argmax-assigned dynamic map, fused
#   base_only     → indiscriminate base map alone
#   dynamic_only  → dynamic map alone (OT or argmax per config)
Route = Literal["dynamic_ot", "dynamic_van", "base_only", "dynamic_only", "rejected"]


@dataclass(frozen=True)
class ScoreResult:
    name: str
    label: Optional[int]
    status: ScoringStatus
    route: str
    image_score: Optional[float]
    pixel_map: Optional[AnomalyMap]
    node_path: tuple[str, ...] = ()


@dataclass
class ScoringState:
    """
    Central state object passed between every node of the scoring graph.
    Fields are populated progressively as execution moves through the graph.
    """

    # ── Inputs ────────────────────────────────────────────────────────────────
    grid: Optional[TokenGrid] = None
    model: Optional[SubspaceModel] = None
    config: Optional[TrainConfig] = None
    pixel_shape: Optional[tuple[int, int]] = None   # None → patch resolution
    name: str = ""
    label: Optional[int] = None

    # ── After projection ──────────────────────────────────────────────────────
    bank: Optional[SubspaceBank] = None
    g_bar_n: Optional[np.ndarray] = None
    g_bar_a: Optional[np.ndarray] = None

    # ── After router ──────────────────────────────────────────────────────────
    route_taken: Optional[str] = None

    # ── After alignment branches ──────────────────────────────────────────────
    base_map: Optional[AnomalyMap] = None           # S_a of the base branch
    dynamic_map: Optional[AnomalyMap] = None        # S_a^da of the dynamic branch
    plans: Optional[dict[str, Optional[TransportPlan]]] = None
    assignments: Optional[dict[str, AssignmentMatrix]] = None

    # ── After fusion ──────────────────────────────────────────────────────────
    patch_map: Optional[AnomalyMap] = None
    pixel_map: Optional[AnomalyMap] = None
    p_a_global: Optional[float] = None
    image_score: Optional[float] = None

    # ── Final output ──────────────────────────────────────────────────────────
    status: Optional[ScoringStatus] = None
    result: Optional[ScoreResult] = None
    node_path: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @classmethod
    def coerce(cls, value: "ScoringState | dict") -> "ScoringState":
        """Compiled graphs hand back a plain dict of channel values."""
        if isinstance(value, cls):
            return value
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in value.items() if k in names})
