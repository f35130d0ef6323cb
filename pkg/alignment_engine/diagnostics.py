"""
alignment_engine/diagnostics.py
===============================
Property suite for the Sinkhorn solver, run by `main.py sinkhorn-check`.

Per random cosine-cost instance:
  mass              |sum T - 1| and min(T, 0) together, threshold 1e-9
  marginals         max of row / column residuals, threshold 1e-6
  fixed_point       double-centred residual of log T + C / lam, threshold 1e-5
  shift_invariance  plan change when a constant is added to C, threshold 1e-9
  permutation       T(P C Q) vs P T(C) Q, threshold 1e-9
and on random 3x3 instances at lam = 1e-3:
  exact_ot          |<T, C> - exact optimum|, threshold 1e-2
plus one batch_seconds row: total solve time over the random batch
(the shift and permutation re-solves are not counted).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import pandas as pd

from alignment_engine.transport import (
    CostMatrix,
    Marginals,
    SinkhornConfig,
    build_cost_matrix,
    exact_ot_oracle,
    marginal_residuals,
    sinkhorn,
)

CHECK_COLUMNS = ["check", "instance", "value", "threshold", "passed"]


@dataclass(frozen=True)
class CheckSuiteConfig:
    n_instances: int = 100
    max_tokens: int = 64
    max_subspaces: int = 8
    lam: float = 0.01
    max_iters: int = 100
    n_oracle_instances: int = 50
    oracle_lam: float = 1e-3
    oracle_max_iters: int = 1000
    batch_seconds: float = 1.0
    seed: int = 0


def double_centered_residual(plan: np.ndarray, cost: np.ndarray, lam: float) -> float:
    """max |M_ij - rowmean_i - colmean_j + grandmean| with M = log T + C / lam."""
    with np.errstate(divide="ignore"):
        m = np.log(plan) + cost / lam
    if not np.all(np.isfinite(m)):
        return float("inf")
    centred = m - m.mean(axis=1, keepdims=True) - m.mean(axis=0, keepdims=True) + m.mean()
    return float(np.max(np.abs(centred)))


def _random_cost(rng: np.random.Generator, max_tokens: int, max_subspaces: int) -> CostMatrix:
    n = int(rng.integers(2, max_tokens + 1))
    q = int(rng.integers(2, max_subspaces + 1))
    d = 8
    return build_cost_matrix(rng.normal(size=(n, d)), rng.normal(size=(q, d)))


def _row(check: str, instance: int, value: float, threshold: float) -> dict:
    return {"check": check, "instance": instance, "value": float(value),
            "threshold": threshold, "passed": bool(value < threshold)}


def run_sinkhorn_checks(cfg: CheckSuiteConfig = CheckSuiteConfig()) -> pd.DataFrame:
    rng = np.random.default_rng(cfg.seed)
    solver = SinkhornConfig(lam=cfg.lam, max_iters=cfg.max_iters)
    rows = []

    elapsed = 0.0
    for i in range(cfg.n_instances):
        cost = _random_cost(rng, cfg.max_tokens, cfg.max_subspaces)
        n, q = cost.entries.shape
        marginals = Marginals.uniform(n, q)
        started = time.perf_counter()
        result = sinkhorn(cost, marginals, solver)
        elapsed += time.perf_counter() - started
        plan = result.plan

        mass_err = max(abs(float(plan.sum()) - 1.0), float(max(-plan.min(), 0.0)))
        rows.append(_row("mass", i, mass_err, 1e-9))
        rows.append(_row("marginals", i, max(marginal_residuals(plan, marginals)), 1e-6))
        rows.append(_row("fixed_point", i, double_centered_residual(plan, cost.entries, cfg.lam), 1e-5))

        shifted = sinkhorn(CostMatrix(cost.entries + float(rng.uniform(-1.0, 1.0))), marginals, solver)
        rows.append(_row("shift_invariance", i, np.max(np.abs(shifted.plan - plan)), 1e-9))

        rp, cp = rng.permutation(n), rng.permutation(q)
        permuted = sinkhorn(CostMatrix(cost.entries[rp][:, cp]), marginals, solver)
        rows.append(_row("permutation", i, np.max(np.abs(permuted.plan - plan[rp][:, cp])), 1e-9))

    oracle_solver = SinkhornConfig(lam=cfg.oracle_lam, max_iters=cfg.oracle_max_iters)
    for i in range(cfg.n_oracle_instances):
        cost = build_cost_matrix(rng.normal(size=(3, 8)), rng.normal(size=(3, 8)))
        plan = sinkhorn(cost, None, oracle_solver).plan
        _, optimum = exact_ot_oracle(cost)
        rows.append(_row("exact_ot", i, abs(float(np.sum(plan * cost.entries)) - optimum), 1e-2))

    rows.append(_row("batch_seconds", 0, elapsed, cfg.batch_seconds))
    return pd.DataFrame(rows, columns=CHECK_COLUMNS)
