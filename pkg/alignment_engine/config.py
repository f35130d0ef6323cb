"""
alignment_engine/config.py
==========================
Training / alignment / inference configuration.

Config files are line-based `key = value` text with `#` comments:

    # sweep cell
    n_subspaces = 4
    epsilon     = 0.3     # threshold on row-normalised plan entries

Files are read with python-dotenv (`dotenv_values`, interpolation off) and
coerced against the dataclass field types. Unknown keys are errors.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, fields, replace
from typing import Any, TypeVar

from dotenv import dotenv_values

from alignment_engine.assignment import IMAGE_SCORE_FORMULAS
from middleware.guards import ConfigError

T = TypeVar("T")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class TrainConfig:
    # ── loss weights and loss shapes ──────────────────────────────────────────
    eta: float = 5.0              # hinge weight
    xi: float = 100.0             # orthogonality weight
    gamma_focal: float = 2.0
    dice_smooth: float = 1.0
    delta_minus: float = 0.5
    delta_plus: float = 0.5
    hinge_literal: bool = False
    tau: float = 0.07

    # ── optimisation ──────────────────────────────────────────────────────────
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0

    # ── dynamic alignment ─────────────────────────────────────────────────────
    n_subspaces: int = 3
    k: int = 2
    epsilon: float = 0.2
    sinkhorn_lambda: float = 0.01
    sinkhorn_iters: int = 100
    sinkhorn_tol: float = 1e-9
    sinkhorn_refine_steps: int = 30
    assignment: str = "ot"        # "ot" | "van"

    # ── module switches + inference ───────────────────────────────────────────
    use_base: bool = True
    use_dynamic: bool = True
    decouple_global: bool = True
    image_score_formula: str = "paper"       # "paper" (alias "half_peak") | "balanced"

    # ── initialisation ────────────────────────────────────────────────────────
    head_noise: float = 0.1
    fuse_noise: float = 0.1

    def validate(self) -> "TrainConfig":
        problems = []
        if self.eta < 0 or self.xi < 0:
            problems.append("eta and xi must be >= 0")
        if self.gamma_focal < 0:
            problems.append("gamma_focal must be >= 0")
        if not self.dice_smooth > 0:
            problems.append("dice_smooth must be > 0")
        for name in ("delta_minus", "delta_plus"):
            if not 0.0 < getattr(self, name) < 1.0:
                problems.append(f"{name} must lie in (0, 1)")
        if not self.tau > 0:
            problems.append("tau must be > 0")
        if not self.lr >= 0:
            problems.append("lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            problems.append("batch_size and epochs must be >= 1")
        if self.n_subspaces < 1 or self.k < 1:
            problems.append("n_subspaces and k must be >= 1")
        if not 0.0 <= self.epsilon < 1.0:
            problems.append("epsilon must lie in [0, 1)")
        if not self.sinkhorn_lambda > 0 or self.sinkhorn_iters < 1 or not self.sinkhorn_tol > 0:
            problems.append("sinkhorn_lambda, sinkhorn_tol must be > 0 and sinkhorn_iters >= 1")
        if self.sinkhorn_refine_steps < 0:
            problems.append("sinkhorn_refine_steps must be >= 0")
        if self.assignment not in ("ot", "van"):
            problems.append(f"assignment must be 'ot' or 'van' (got '{self.assignment}')")
        if self.image_score_formula not in IMAGE_SCORE_FORMULAS:
            problems.append(f"image_score_formula must be 'paper', 'half_peak' or 'balanced' (got '{self.image_score_formula}')")
        if not (self.use_base or self.use_dynamic):
            problems.append("at least one of use_base / use_dynamic must be true")
        if problems:
            raise ConfigError("Invalid TrainConfig: " + "; ".join(problems) + ".")
        return self

    def with_overrides(self, **overrides: Any) -> "TrainConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _coerce(key: str, raw: str | None, target: Any) -> Any:
    if raw is None or raw.strip() == "":
        raise ConfigError(f"Config: key '{key}' has no value.")
    text = raw.strip()
    try:
        if target is bool or target == "bool":
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if target is int or target == "int":
            return int(text)
        if target is float or target == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"Config: key '{key}' cannot be parsed from '{text}'.") from None
    return text


def parse_config_text(text: str, schema: type[T], base: T | None = None) -> T:
    """Parse `key = value` text into a dataclass instance of `schema`."""
    values = dotenv_values(stream=io.StringIO(text), interpolate=False)
    types = {f.name: f.type for f in fields(schema)}
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"Config: unknown key(s) {unknown}. Valid keys: {sorted(types)}")
    parsed = {key: _coerce(key, raw, types[key]) for key, raw in values.items()}
    return replace(base, **parsed) if base is not None else schema(**parsed)


def load_config_file(path: str | os.PathLike, schema: type[T] = TrainConfig, base: T | None = None) -> T:
    with open(path) as f:
        return parse_config_text(f.read(), schema, base)


def config_to_text(config: Any) -> str:
    """Serialise a config dataclass back to `key = value` lines (round-trips)."""
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
