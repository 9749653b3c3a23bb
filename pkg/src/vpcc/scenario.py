"""Scenario baseline: impose the constraints on sampled trajectories.

Draw N_S independent realisations of the horizon's state matrices, require
every constraint row on every sampled trajectory (each such row is affine
in the stacked input once the matrices are fixed), and solve the single
resulting convex program. With

    N_S >= (2 / alpha) (ln(1 / beta) + 2)

samples, any solution satisfies the chance constraint at level alpha with
confidence 1 - beta. The sample count uses the ceiling of the bound; when
the ceiling differs from the floor the report notes both values, since the
bound is often quoted rounded down.

Sampling uses one counter-based child stream per scenario, so results are a
pure function of the seed and scenarios can be drawn in parallel without
changing the outcome.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import conic
from .acs import Cost
from .conic import ConicProgram
from .errors import DomainError
from .moments import SystemSpec
from .report import (
    STATUS_ERROR,
    STATUS_INFEASIBLE,
    STATUS_ITERATION_LIMIT,
    STATUS_OPTIMAL,
    SolveReport,
)
from .stochastics import child_seed


@dataclass(frozen=True)
class ScenarioConfig:
    alpha: float
    beta: float = 0.001
    sample_count: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not (0.0 < self.beta < 1.0):
            raise DomainError(f"beta must lie in (0, 1), got {self.beta!r}")
        if self.sample_count is not None and self.sample_count < 1:
            raise DomainError("explicit sample_count must be >= 1")


def required_samples(alpha: float, beta: float) -> int:
    """Smallest integer satisfying N_S >= (2/alpha)(ln(1/beta) + 2).

    alpha = 1 is admitted for the bare formula even though ScenarioConfig
    keeps its violation level strictly inside (0, 1).
    """
    if not (0.0 < alpha <= 1.0) or not (0.0 < beta < 1.0):
        raise DomainError("need 0 < alpha <= 1 and 0 < beta < 1")
    return int(math.ceil((2.0 / alpha) * (math.log(1.0 / beta) + 2.0)))


def sample_count_note(alpha: float, beta: float) -> str:
    bound = (2.0 / alpha) * (math.log(1.0 / beta) + 2.0)
    ceiled = int(math.ceil(bound))
    floored = int(math.floor(bound))
    if ceiled != floored:
        return (
            f"sample bound (2/alpha)(ln(1/beta)+2) = {bound:.6f}; using ceil = {ceiled} "
            f"(rounding down would give {floored})"
        )
    return f"sample bound (2/alpha)(ln(1/beta)+2) = {bound:.6f} is integral; using {ceiled}"


def sample_state_matrices(spec: SystemSpec, seed: int, count: int) -> np.ndarray:
    """(count, N, n, n) realisations, one child stream per scenario."""
    out = np.empty((count, spec.horizon, spec.n, spec.n))
    for s in range(count):
        rng = np.random.default_rng(child_seed(seed, s))
        for t, model in enumerate(spec.a_models):
            out[s, t] = model.sample(rng)
    return out


def _scenario_rows(spec: SystemSpec, matrices: np.ndarray, rows) -> tuple[np.ndarray, np.ndarray]:
    """Affine constraint rows in the stacked input, one per (scenario, row).

    Per scenario the state is x(k) = Phi_k x0 + R_k U with
    Phi_k = A(k-1) Phi_{k-1} and R_k = A(k-1) R_{k-1} + (injection of B into
    the u(k-1) block), so each constraint row pulls one row out of R_k.
    """
    n, m, N = spec.n, spec.m, spec.horizon
    rows_by_k: dict[int, list] = {}
    for row in rows:
        rows_by_k.setdefault(int(row.k), []).append(row)
    max_k = max(rows_by_k)

    count = matrices.shape[0]
    coef_rows = []
    rhs_vals = []
    for s in range(count):
        phi = spec.x0.copy()
        reach = np.zeros((n, N * m))
        for t in range(max_k):
            a_t = matrices[s, t]
            phi = a_t @ phi
            reach = a_t @ reach
            reach[:, t * m : (t + 1) * m] += spec.B
            for row in rows_by_k.get(t + 1, ()):
                coef_rows.append(row.G @ reach)
                rhs_vals.append(row.h - float(row.G @ phi))
    return np.asarray(coef_rows), np.asarray(rhs_vals)


def solve_scenario(
    spec: SystemSpec,
    jcc,
    cost: Cost,
    sc: ScenarioConfig,
    solver_opts: conic.SolverOptions | None = None,
    inputs_echo: dict | None = None,
) -> SolveReport:
    """Sample, assemble, solve; the report's wall time covers all three.

    ``jcc`` needs ``rows`` and ``alpha``. Identical seeds give bitwise
    identical constraint matrices and hence identical solutions. Sampled
    rows are deduplicated only on exact coefficient equality; no
    tolerance-based pruning, since the guarantee counts samples.
    """
    start = time.perf_counter()
    n_s = sc.sample_count if sc.sample_count is not None else required_samples(sc.alpha, sc.beta)
    notes = [sample_count_note(sc.alpha, sc.beta)] if sc.sample_count is None else []

    matrices = sample_state_matrices(spec, sc.rng_seed, n_s)
    coef, rhs = _scenario_rows(spec, matrices, jcc.rows)
    A_poly, b_poly = spec.stacked_polytope()
    A_all = np.vstack([coef, A_poly])
    b_all = np.concatenate([rhs, b_poly])
    stacked = np.unique(np.hstack([A_all, b_all[:, None]]), axis=0)
    A_all, b_all = stacked[:, :-1], stacked[:, -1]

    P, c = cost.stacked()
    program = ConicProgram(P=P, c=c, A_u=A_all, b_u=b_all)
    outcome = conic.solve(program, solver_opts)

    status_map = {
        conic.STATUS_OPTIMAL: STATUS_OPTIMAL,
        conic.STATUS_INFEASIBLE: STATUS_INFEASIBLE,
        conic.STATUS_ITERATION_LIMIT: STATUS_ITERATION_LIMIT,
        conic.STATUS_NUMERICAL_FAILURE: STATUS_ERROR,
    }
    report = SolveReport(
        method="scenario",
        status=status_map[outcome.status],
        alpha=float(jcc.alpha),
        sample_count=n_s,
        seed=sc.rng_seed,
        notes=notes,
        wall_time_ms=(time.perf_counter() - start) * 1e3,
        inputs=inputs_echo,
    )
    if outcome.x is not None and outcome.status == conic.STATUS_OPTIMAL:
        report.U = outcome.x.reshape(spec.horizon, spec.m).tolist()
        report.objective = cost.value(outcome.x)
        report.objective_per_step = cost.per_step_values(outcome.x)
    elif outcome.diagnostic:
        report.notes.append(outcome.diagnostic)
    return report
