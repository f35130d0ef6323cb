"""
alignment_engine/transport.py
=============================
Entropic optimal transport between patch tokens and textual subspaces.

    C_ij   = 1 - cos(v_i, o_j)                           (cosine cost, in [0, 2])
    T*     = argmin_{T in Pi(u, v)} <T, C> + lam * sum T log T
           = diag(u^t) exp(-C / lam) diag(v^t)            (Sinkhorn-Knopp fixed point)

The scaling vectors are kept as log potentials f, g: with lam = 0.01 and
costs near 2 the kernel exp(-C / lam) sits around e^-200, and at smaller
lam it underflows outright. Sweeps stop when the max-norm column residual
drops below `tol` (rows are exact between sweeps), or after `max_iters`.
A short damped Newton solve on g then takes the residual to
`tol * REFINE_TARGET_FACTOR`.

exact_ot_oracle() is an independent brute-force solver of the unregularised
problem for instances up to 3x3, used to check the lam -> 0 limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from middleware.guards import (
    ConfigError,
    NonFiniteError,
    ShapeMismatchError,
    UnsupportedSizeError,
    check_finite,
    check_nonzero_rows,
)

# ── Defaults (lam and iteration count follow the reference training setup) ───
DEFAULT_LAMBDA = 0.01
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-9
DEFAULT_REFINE_STEPS = 30
REFINE_TARGET_FACTOR = 1e-3
REFINE_HALVINGS = 30
MIN_SWEEP_MASS = 1e-200

MARGINAL_SUM_TOL = 1e-12
ORACLE_MAX_SIDE = 3


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray      # (N, Q)

    @property
    def n_tokens(self) -> int:
        return self.entries.shape[0]

    @property
    def n_subspaces(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class Marginals:
    u: np.ndarray            # (N,) token weights
    v: np.ndarray            # (Q,) subspace weights

    def __post_init__(self):
        for name, w in (("u", self.u), ("v", self.v)):
            if np.any(np.asarray(w) <= 0):
                raise ConfigError(f"Marginals: every entry of {name} must be > 0.")
            if abs(float(np.sum(w)) - 1.0) > MARGINAL_SUM_TOL:
                raise ConfigError(f"Marginals: {name} sums to {float(np.sum(w))!r}, expected 1.")

    @classmethod
    def uniform(cls, n_tokens: int, n_subspaces: int) -> "Marginals":
        return cls(np.full(n_tokens, 1.0 / n_tokens), np.full(n_subspaces, 1.0 / n_subspaces))


@dataclass(frozen=True)
class SinkhornConfig:
    lam: float = DEFAULT_LAMBDA
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    refine_steps: int = DEFAULT_REFINE_STEPS

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"SinkhornConfig: lambda must be > 0 (got {self.lam}).")
        if self.max_iters < 1:
            raise ConfigError(f"SinkhornConfig: max_iters must be >= 1 (got {self.max_iters}).")
        if not self.tol > 0:
            raise ConfigError(f"SinkhornConfig: tol must be > 0 (got {self.tol}).")
        if self.refine_steps < 0:
            raise ConfigError(f"SinkhornConfig: refine_steps must be >= 0 (got {self.refine_steps}).")


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray         # (N, Q), total mass 1
    iters_used: int
    row_residual: float
    col_residual: float
    refine_steps_used: int = 0


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(N, d) x (M, d) -> (N, M) matrix of cosine similarities."""
    a_norm = check_nonzero_rows("tokens", a)
    b_norm = check_nonzero_rows("subspaces", b)
    return (a @ b.T) / (a_norm[:, None] * b_norm[None, :])


def build_cost_matrix(tokens: np.ndarray, subspaces: np.ndarray) -> CostMatrix:
    """Cosine-distance cost between every token and every subspace."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=float))
    subspaces = np.atleast_2d(np.asarray(subspaces, dtype=float))
    if tokens.shape[1] != subspaces.shape[1]:
        raise ShapeMismatchError(
            f"build_cost_matrix: token width {tokens.shape[1]} != subspace width {subspaces.shape[1]}."
        )
    return CostMatrix(1.0 - cosine_matrix(tokens, subspaces))


def marginal_residuals(plan: TransportPlan | np.ndarray, marginals: Marginals) -> tuple[float, float]:
    """Max-norm deviation of the plan's row sums from u and column sums from v."""
    t = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    if t.shape != (marginals.u.size, marginals.v.size):
        raise ShapeMismatchError(
            f"marginal_residuals: plan shape {t.shape} vs marginals ({marginals.u.size}, {marginals.v.size})."
        )
    row_err = float(np.max(np.abs(t.sum(axis=1) - marginals.u)))
    col_err = float(np.max(np.abs(t.sum(axis=0) - marginals.v)))
    return row_err, col_err


def sinkhorn(
    cost: CostMatrix,
    marginals: Marginals | None = None,
    config: SinkhornConfig | None = None,
) -> TransportPlan:
    """
    Solve the entropic OT problem by Sinkhorn-Knopp on log scalings.

    The returned plan is exp(-C/lam + f_i + g_j). f starts as the exact row
    fit for g = 0 (v^0 = 1); each sweep refits g on the columns, then f on
    the rows, so row sums are exact between sweeps and the column residual
    is the stopping test. The working plan is updated in place by the
    sweep ratios; a column or row whose mass underflows is refitted
    through logsumexp instead.

    When the sweeps stop above `tol * REFINE_TARGET_FACTOR`, up to
    `refine_steps` damped Newton steps on g finish the solve (see
    _refine_column_potential). refine_steps = 0 gives plain Sinkhorn.
    """
    cfg = config or SinkhornConfig()
    C = check_finite("sinkhorn cost", cost.entries)
    n, q = C.shape
    m = marginals or Marginals.uniform(n, q)
    if m.u.size != n or m.v.size != q:
        raise ShapeMismatchError(f"sinkhorn: marginals ({m.u.size}, {m.v.size}) vs cost {C.shape}.")

    log_kernel = -C / cfg.lam
    log_u = np.log(m.u)
    log_v = np.log(m.v)
    g = np.zeros(q)
    f = log_u - logsumexp(log_kernel, axis=1)
    plan = np.exp(log_kernel + f[:, None])

    iters = 0
    while iters < cfg.max_iters:
        col = plan.sum(axis=0)
        if np.max(np.abs(col - m.v)) < cfg.tol:
            break
        iters += 1
        if np.all(col > MIN_SWEEP_MASS):
            ratio = m.v / col
            g += np.log(ratio)
            plan *= ratio[None, :]
        else:
            g = log_v - logsumexp(log_kernel + f[:, None], axis=0)
            plan = np.exp(log_kernel + f[:, None] + g[None, :])
        row = plan.sum(axis=1)
        if np.all(row > MIN_SWEEP_MASS):
            ratio = m.u / row
            f += np.log(ratio)
            plan *= ratio[:, None]
        else:
            f = log_u - logsumexp(log_kernel + g[None, :], axis=1)
            plan = np.exp(log_kernel + f[:, None] + g[None, :])

    plan = np.exp(log_kernel + f[:, None] + g[None, :])
    row_err, col_err = marginal_residuals(plan, m)
    steps = 0
    if cfg.refine_steps and max(row_err, col_err) >= cfg.tol * REFINE_TARGET_FACTOR:
        plan, steps = _refine_column_potential(log_kernel, m, g, cfg.refine_steps, cfg.tol * REFINE_TARGET_FACTOR)
        row_err, col_err = marginal_residuals(plan, m)

    if not np.all(np.isfinite(plan)):
        raise NonFiniteError("sinkhorn: plan became non-finite.")
    return TransportPlan(plan=plan, iters_used=iters, row_residual=row_err, col_residual=col_err,
                         refine_steps_used=steps)


def _refine_column_potential(
    log_kernel: np.ndarray,
    m: Marginals,
    g: np.ndarray,
    max_steps: int,
    target: float,
) -> tuple[np.ndarray, int]:
    """
    Damped Newton on the column potential g, with f(g) refitted exactly on
    the rows at every evaluation.

    The column residual r(g) = v - colsum(T(g)) has Jacobian -A with
    A = diag(colsum) - T^T diag(1/u) T, symmetric PSD with null vector 1.
    The step solves (A + c 11^T) d = r, c = trace(A) / Q, and is halved
    until ||r|| decreases. Stops at max|r| < target, on a failed line
    search, or after max_steps.
    """
    log_u = np.log(m.u)
    q = m.v.size

    def evaluate(g_try: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f = log_u - logsumexp(log_kernel + g_try[None, :], axis=1)
        plan = np.exp(log_kernel + f[:, None] + g_try[None, :])
        return plan, m.v - plan.sum(axis=0)

    plan, r = evaluate(g)
    norm = float(np.linalg.norm(r))
    steps = 0
    while steps < max_steps and np.max(np.abs(r)) >= target:
        col = plan.sum(axis=0)
        a = np.diag(col) - plan.T @ (plan / m.u[:, None])
        c = float(np.trace(a)) / q
        try:
            d = np.linalg.solve(a + (c if c > 0 else 1.0) * np.ones((q, q)), r)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(d)):
            break
        t = 1.0
        for _ in range(REFINE_HALVINGS):
            trial_plan, trial_r = evaluate(g + t * d)
            trial_norm = float(np.linalg.norm(trial_r))
            if np.all(np.isfinite(trial_plan)) and trial_norm <= (1.0 - 1e-4 * t) * norm:
                break
            t *= 0.5
        else:
            break
        g = g + t * d
        plan, r, norm = trial_plan, trial_r, trial_norm
        steps += 1
    return plan, steps


def entropic_objective(plan: TransportPlan | np.ndarray, cost: CostMatrix, lam: float) -> float:
    """<T, C> + lam * sum T log T, with 0 log 0 := 0."""
    t = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    if t.shape != cost.entries.shape:
        raise ShapeMismatchError(f"entropic_objective: plan {t.shape} vs cost {cost.entries.shape}.")
    return float(np.sum(t * cost.entries) + lam * np.sum(xlogy(t, t)))


def exact_ot_oracle(
    cost: CostMatrix,
    marginals: Marginals | None = None,
    grid_steps: int = 31,
) -> tuple[np.ndarray, float]:
    """
    Brute-force the unregularised OT problem on tiny instances.

    The top-left (N-1)x(Q-1) block is the free part of the transportation
    polytope; each free entry is swept over [0, min(u_i, v_j)] in
    `grid_steps` points and the last row/column are completed from the
    marginals. Infeasible completions (negative entries) are discarded.
    """
    C = check_finite("exact_ot_oracle cost", cost.entries)
    n, q = C.shape
    if n > ORACLE_MAX_SIDE or q > ORACLE_MAX_SIDE:
        raise UnsupportedSizeError(
            f"exact_ot_oracle: {n}x{q} exceeds the supported {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE} instances."
        )
    if grid_steps < 2:
        raise ConfigError("exact_ot_oracle: grid_steps must be >= 2.")
    m = marginals or Marginals.uniform(n, q)
    u, v = m.u, m.v

    free = [(i, j) for i in range(n - 1) for j in range(q - 1)]
    axes = [np.linspace(0.0, min(u[i], v[j]), grid_steps) for i, j in free]

    if free:
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([g.ravel() for g in mesh], axis=1)
    else:
        points = np.zeros((1, 0))
    t = np.zeros((points.shape[0], n, q))
    for col, (i, j) in enumerate(free):
        t[:, i, j] = points[:, col]
    t[:, : n - 1, q - 1] = u[None, : n - 1] - t[:, : n - 1, : q - 1].sum(axis=2)
    t[:, n - 1, :] = v[None, :] - t[:, : n - 1, :].sum(axis=1)

    feasible = np.all(t >= -1e-12, axis=(1, 2))
    t = np.clip(t[feasible], 0.0, None)
    costs = np.einsum("mij,ij->m", t, C)
    best = int(np.argmin(costs))
    return t[best], float(costs[best])
