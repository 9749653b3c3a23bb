"""Alternating convex search over (input sequence, risk multipliers).

The reformulated system couples the stacked input U to the multipliers
lam through E_i(U) + lam_i * Std_i(U) <= h_i together with the budget
sum 4 / (9 (lam_i^2 + 1)) <= alpha. Each slice is convex: for fixed
multipliers the input step is a quadratic-objective SOCP, and for a fixed
input the multipliers can be retightened row by row in closed form. The
search alternates the two until the objective settles; any iterate is a
certified conservative solution, so a budget-limited run can still return
its best feasible iterate.

Multiplier step policies:

``tight``
    lam_i = (h_i - E_i(U)) / Std_i(U), the largest multiplier the current
    input supports, which carries the minimal total risk. Rows whose margin
    is deterministic take an infinite sentinel and zero risk.

``uniform-relax`` (default)
    after tightening, surplus budget alpha - sum(risk) is redistributed by
    scaling every row risk proportionally (capped so multipliers stay above
    the sqrt(5/3) floor). Lower multipliers loosen the next input step while
    the budget stays exactly met.

The uniform-risk initial allocation can be infeasible even when the problem
is not (tight budgets want very uneven allocations). When the first input
step fails, a restoration phase runs: first a floor-multiplier margin solve,
which yields a sound infeasibility verdict whenever it fails since no
admissible multiplier is smaller; then a few rounds of convex risk descent
(gradient-weighted margin minimisation) until the tightened allocation fits
the budget. If the minimal found risk still exceeds alpha the run reports
infeasibility.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .conic import ConicProgram, SocRow, SolverOptions, SolverOutcome
from .errors import AllocationInfeasible, DomainError
from .moments import SystemSpec
from .reformulate import (
    LAMBDA_FLOOR,
    LAMBDA_MARGIN,
    LAMBDA_MAX,
    JointChanceConstraint,
    ReformulatedConstraint,
    RiskAllocation,
    build_reformulation,
    check_feasibility,
    risk_to_lambda,
    vp_bound,
)
from .report import (
    STATUS_ERROR,
    STATUS_INFEASIBLE,
    STATUS_ITERATION_LIMIT,
    STATUS_OPTIMAL,
    SolveReport,
)

_STD_ZERO = 1e-12
_DETERMINISTIC_SLACK = 1e-9


@dataclass(frozen=True)
class Cost:
    """Per-step quadratic cost sum u(k)' R_k u(k) + r_k' u(k)."""

    quadratic: tuple
    linear: tuple

    def __post_init__(self):
        quads = tuple(np.asarray(Rk, dtype=float) for Rk in self.quadratic)
        lins = tuple(np.asarray(rk, dtype=float) for rk in self.linear)
        if len(quads) != len(lins) or not quads:
            raise DomainError("cost needs matching, nonempty per-step terms")
        m = lins[0].shape[0]
        for Rk, rk in zip(quads, lins):
            if Rk.shape != (m, m) or rk.shape != (m,):
                raise DomainError("cost term dimensions are inconsistent")
        object.__setattr__(self, "quadratic", quads)
        object.__setattr__(self, "linear", lins)

    @classmethod
    def repeated(cls, R, r, horizon: int) -> "Cost":
        return cls(tuple([R] * horizon), tuple([r] * horizon))

    @property
    def horizon(self) -> int:
        return len(self.quadratic)

    @property
    def m(self) -> int:
        return self.linear[0].shape[0]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """(P, c) with the solver's 0.5 x'Px convention, so P = 2 blkdiag(R_k)."""
        m, N = self.m, self.horizon
        P = np.zeros((N * m, N * m))
        c = np.zeros(N * m)
        for k in range(N):
            P[k * m : (k + 1) * m, k * m : (k + 1) * m] = 2.0 * self.quadratic[k]
            c[k * m : (k + 1) * m] = self.linear[k]
        return P, c

    def per_step_values(self, U: np.ndarray) -> list[float]:
        U = np.asarray(U, dtype=float).reshape(self.horizon, self.m)
        return [float(u @ Rk @ u + rk @ u) for u, Rk, rk in zip(U, self.quadratic, self.linear)]

    def value(self, U: np.ndarray) -> float:
        return float(sum(self.per_step_values(U)))


@dataclass(frozen=True)
class AcsConfig:
    lambda_init_policy: str = "uniform-risk"
    user_lambdas: dict | None = None
    lambda_step_policy: str = "uniform-relax"
    max_outer_iters: int = 50
    convergence_rel_tol: float = 1e-6
    solver: SolverOptions = field(default_factory=SolverOptions)
    restoration: bool = True
    restoration_rounds: int = 30
    feasibility_tol: float = 1e-6

    def __post_init__(self):
        if self.lambda_init_policy not in ("uniform-risk", "user-supplied"):
            raise DomainError(f"unknown init policy {self.lambda_init_policy!r}")
        if self.lambda_step_policy not in ("tight", "uniform-relax"):
            raise DomainError(f"unknown multiplier step policy {self.lambda_step_policy!r}")
        if self.lambda_init_policy == "user-supplied" and not self.user_lambdas:
            raise DomainError("user-supplied init policy requires user_lambdas")
        if self.max_outer_iters < 1 or self.restoration_rounds < 1:
            raise DomainError("iteration limits must be >= 1")
        if self.convergence_rel_tol <= 0 or self.feasibility_tol <= 0:
            raise DomainError("tolerances must be positive")


# ---------------------------------------------------------------------------
# Allocation steps
# ---------------------------------------------------------------------------


def init_lambdas(jcc: JointChanceConstraint, policy: str = "uniform-risk", user: dict | None = None) -> RiskAllocation:
    """Initial allocation: uniform splits alpha evenly over all rows."""
    if policy == "user-supplied":
        if not user:
            raise DomainError("user-supplied policy needs explicit multipliers")
        return RiskAllocation(jcc.alpha, dict(user))
    omega = jcc.alpha / len(jcc.rows)
    lam = risk_to_lambda(omega)
    return RiskAllocation(jcc.alpha, {row.id: lam for row in jcc.rows})


def lambda_step(
    rows: list[ReformulatedConstraint],
    U: np.ndarray,
    alpha: float,
    policy: str = "uniform-relax",
) -> RiskAllocation:
    """Retighten multipliers for a fixed input, then optionally relax.

    Raises AllocationInfeasible when the input cannot be certified: a row
    margin fails outright, a tight multiplier falls below the sqrt(5/3)
    floor, or the tightened risks already exceed the budget.
    """
    tight: dict[str, float] = {}
    violated: list[str] = []
    for rc in rows:
        mean = rc.mean(U)
        std = rc.std(U)
        slack_scale = max(1.0, abs(rc.h))
        if rc.moments.structurally_deterministic or std <= _STD_ZERO:
            if mean <= rc.h + _DETERMINISTIC_SLACK * slack_scale:
                if rc.moments.structurally_deterministic:
                    tight[rc.id] = math.inf
                else:
                    # Random row whose deviation vanishes at this input: keep a
                    # finite capped multiplier so the next input step stays sound.
                    tight[rc.id] = LAMBDA_MAX
            else:
                violated.append(rc.id)
            continue
        ratio = (rc.h - mean) / std
        if ratio < LAMBDA_FLOOR + LAMBDA_MARGIN:
            violated.append(rc.id)
            continue
        tight[rc.id] = min(ratio, LAMBDA_MAX)

    risk_sum = sum(0.0 if math.isinf(lam) else vp_bound(lam) for lam in tight.values())
    if violated:
        raise AllocationInfeasible(
            f"rows cannot be certified at this input: {', '.join(violated)}",
            detail={"violated": violated, "risk_sum": risk_sum},
        )
    if risk_sum > alpha * (1.0 + 1e-12):
        raise AllocationInfeasible(
            f"tightened risk sum {risk_sum:.6g} exceeds budget {alpha:.6g}",
            detail={"risk_sum": risk_sum},
        )
    if policy == "tight" or risk_sum == 0.0:
        return RiskAllocation(alpha, tight)

    scale = alpha / risk_sum
    if scale <= 1.0:
        return RiskAllocation(alpha, tight)
    omega_cap = vp_bound(LAMBDA_FLOOR + LAMBDA_MARGIN)
    relaxed = {}
    for rid, lam in tight.items():
        if math.isinf(lam):
            relaxed[rid] = lam
            continue
        omega = min(vp_bound(lam) * scale, omega_cap)
        relaxed[rid] = risk_to_lambda(omega)
    return RiskAllocation(alpha, relaxed)


# ---------------------------------------------------------------------------
# Input step
# ---------------------------------------------------------------------------


def build_input_program(
    spec: SystemSpec,
    rows: list[ReformulatedConstraint],
    lambdas: RiskAllocation,
    cost: Cost,
) -> ConicProgram:
    """Fixed-multiplier input subproblem: cost over the input polytope plus
    one cone row E + lam * ||norm form|| <= h per constraint."""
    P, c = cost.stacked()
    A_u, b_u = spec.stacked_polytope()
    soc = []
    for rc in rows:
        lam = lambdas.lam(rc.id)
        m = rc.moments
        if m.structurally_deterministic:
            # The deviation is identically zero, so the multiplier is moot;
            # normalising it keeps the program a pure function of the row.
            soc.append(SocRow(a=m.a, b=m.b, lam=0.0, L=np.zeros((m.a.shape[0], 0)), v=np.zeros(0), s=0.0, h=rc.h))
        elif math.isinf(lam):
            raise DomainError(f"row {rc.id}: infinite multiplier on a row with input-dependent deviation")
        else:
            soc.append(SocRow(a=m.a, b=m.b, lam=lam, L=m.L, v=m.v, s=m.s, h=rc.h))
    return ConicProgram(P=P, c=c, A_u=A_u, b_u=b_u, soc=tuple(soc))


def _program_fingerprint(program: ConicProgram) -> bytes:
    parts = [program.P.tobytes(), program.c.tobytes(), program.A_u.tobytes(), program.b_u.tobytes()]
    for row in program.soc:
        parts.extend(
            (
                row.a.tobytes(),
                row.b.hex(),
                row.lam.hex(),
                row.L.tobytes(),
                row.v.tobytes(),
                row.s.hex(),
                row.h.hex(),
            )
        )
    return b"|".join(p if isinstance(p, bytes) else p.encode() for p in parts)


def u_step(
    spec: SystemSpec,
    rows: list[ReformulatedConstraint],
    lambdas: RiskAllocation,
    cost: Cost,
    opts: SolverOptions | None = None,
    x_hint: np.ndarray | None = None,
) -> SolverOutcome:
    """Solve the fixed-multiplier input subproblem."""
    return conic.solve(build_input_program(spec, rows, lambdas, cost), opts, x_hint=x_hint)


# ---------------------------------------------------------------------------
# Feasibility restoration
# ---------------------------------------------------------------------------


def _floor_rows(rows: list[ReformulatedConstraint]) -> list[SocRow]:
    floor = LAMBDA_FLOOR + LAMBDA_MARGIN
    out = []
    for rc in rows:
        m = rc.moments
        lam = 0.0 if m.structurally_deterministic else floor
        out.append(SocRow(a=m.a, b=m.b, lam=lam, L=m.L, v=m.v, s=m.s, h=rc.h))
    return out


def _floor_margin_solve(spec: SystemSpec, rows, opts: SolverOptions):
    """Minimise the worst floor-multiplier margin over the polytope.

    A strictly positive optimum proves the whole problem infeasible: every
    admissible multiplier is at least the floor and only tightens rows.
    """
    d = spec.input_dim
    A_u, b_u = spec.stacked_polytope()
    scale = max(1.0, float(np.abs(b_u).max())) if b_u.size else 1.0
    cap = 100.0 * scale

    A_ext = np.hstack([A_u, np.zeros((A_u.shape[0], 1))])
    guard = np.zeros((1, d + 1))
    guard[0, d] = -1.0
    A_ext = np.vstack([A_ext, guard])
    b_ext = np.concatenate([b_u, [cap]])

    soc = []
    for row in _floor_rows(rows):
        soc.append(
            SocRow(
                a=np.concatenate([row.a, [-1.0]]),
                b=row.b,
                lam=row.lam,
                L=np.vstack([row.L, np.zeros((1, row.L.shape[1]))]),
                v=row.v,
                s=row.s,
                h=row.h,
            )
        )
    c = np.zeros(d + 1)
    c[d] = 1.0
    program = ConicProgram(P=np.zeros((d + 1, d + 1)), c=c, A_u=A_ext, b_u=b_ext, soc=tuple(soc))
    return conic.solve(program, opts)


def _risk_descent_program(spec, rows, ratios, weights, opts):
    """One convex risk-descent subproblem.

    Minimise sum_i w_i (E_i(U) + t_i * Std_i(U)) over the polytope
    intersected with the floor-multiplier rows; epigraph variables carry the
    deviation of rows whose Std depends on the input.
    """
    d = spec.input_dim
    A_u, b_u = spec.stacked_polytope()
    epis = [i for i, rc in enumerate(rows) if rc.moments.L.size > 0]
    dim = d + len(epis)
    pos = {i: d + slot for slot, i in enumerate(epis)}

    c = np.zeros(dim)
    for i, rc in enumerate(rows):
        c[:d] += weights[i] * rc.moments.a
        if i in pos:
            c[pos[i]] = weights[i] * ratios[i]

    A_ext = np.hstack([A_u, np.zeros((A_u.shape[0], len(epis)))])
    soc = []
    for i, rc in enumerate(rows):
        m = rc.moments
        lam = 0.0 if m.structurally_deterministic else LAMBDA_FLOOR + LAMBDA_MARGIN
        soc.append(
            SocRow(
                a=np.concatenate([m.a, np.zeros(len(epis))]),
                b=m.b,
                lam=lam,
                L=np.vstack([m.L, np.zeros((len(epis), m.L.shape[1]))]),
                v=m.v,
                s=m.s,
                h=rc.h,
            )
        )
        if i in pos:
            # ||(L' U + v ; sqrt(s))|| <= tau_i
            a_epi = np.zeros(dim)
            a_epi[pos[i]] = -1.0
            soc.append(
                SocRow(
                    a=a_epi,
                    b=0.0,
                    lam=1.0,
                    L=np.vstack([m.L, np.zeros((len(epis), m.L.shape[1]))]),
                    v=m.v,
                    s=m.s,
                    h=0.0,
                )
            )
    program = ConicProgram(P=np.zeros((dim, dim)), c=c, A_u=A_ext, b_u=b_u, soc=tuple(soc))
    return conic.solve(program, opts), d


def _tight_risk(rows, U) -> tuple[float, dict, list]:
    """Tightened per-row risks at U; uncertifiable rows are listed, not summed."""
    risks = {}
    ratios = []
    bad = []
    for rc in rows:
        std = rc.std(U)
        mean = rc.mean(U)
        if rc.moments.structurally_deterministic or std <= _STD_ZERO:
            ratios.append(math.inf)
            if mean > rc.h + _DETERMINISTIC_SLACK * max(1.0, abs(rc.h)):
                bad.append(rc.id)
            else:
                risks[rc.id] = 0.0
            continue
        ratio = (rc.h - mean) / std
        ratios.append(ratio)
        if ratio < LAMBDA_FLOOR + LAMBDA_MARGIN:
            bad.append(rc.id)
        else:
            risks[rc.id] = vp_bound(min(ratio, LAMBDA_MAX))
    if bad:
        return math.inf, risks, ratios
    return sum(risks.values()), risks, ratios


def _restore_allocation(spec, rows, alpha, config: AcsConfig):
    """Search for a certifiable allocation when uniform-risk init fails.

    Returns (allocation, U_seed, note) or raises AllocationInfeasible with
    the best risk found. The floor-margin failure branch is a sound
    infeasibility certificate; the risk-descent branch is exact when row
    deviations do not depend on the input (margins affine) and a documented
    local heuristic otherwise.
    """
    out = _floor_margin_solve(spec, rows, config.solver)
    if out.status != conic.STATUS_OPTIMAL or out.x is None:
        raise AllocationInfeasible(
            "floor-multiplier margin solve failed; no admissible allocation exists"
            f" ({out.status}: {out.diagnostic})",
            detail={"phase": "floor-margin", "status": out.status},
        )
    sigma = float(out.x[-1])
    if sigma > 0.0:
        raise AllocationInfeasible(
            f"even floor multipliers violate the constraints by {sigma:.6g}; problem is infeasible",
            detail={"phase": "floor-margin", "sigma": sigma},
        )
    U = out.x[: spec.input_dim].copy()

    # Descend the tightened total risk to (a local) minimum before handing
    # over, so the relaxed allocation starts with maximal surplus budget.
    best_risk, _, _ = _tight_risk(rows, U)
    best_U = U.copy()
    rounds = 0
    while rounds < config.restoration_rounds:
        rounds += 1
        _, _, ratios = _tight_risk(rows, U)
        weights = []
        for rc, ratio in zip(rows, ratios):
            std = rc.std(U)
            if math.isinf(ratio) or std <= _STD_ZERO:
                weights.append(0.0)
            else:
                t = max(ratio, LAMBDA_FLOOR + LAMBDA_MARGIN)
                weights.append(8.0 * t / (9.0 * (t * t + 1.0) ** 2) / std)
        top = max(weights, default=0.0)
        if top <= 0.0:
            break
        weights = [w / top for w in weights]
        ratios_c = [0.0 if math.isinf(t) else max(t, LAMBDA_FLOOR + LAMBDA_MARGIN) for t in ratios]
        sub, d = _risk_descent_program(spec, rows, ratios_c, weights, config.solver)
        if sub.status != conic.STATUS_OPTIMAL or sub.x is None:
            break
        U = sub.x[:d].copy()
        risk_new, _, _ = _tight_risk(rows, U)
        if risk_new < best_risk - max(1e-12, 1e-9 * alpha):
            best_risk = risk_new
            best_U = U.copy()
        else:
            break

    if best_risk > alpha:
        raise AllocationInfeasible(
            f"minimal certifiable risk found is {best_risk:.6g} > budget {alpha:.6g}",
            detail={"phase": "risk-descent", "best_risk": best_risk, "rounds": rounds},
        )
    allocation = lambda_step(rows, best_U, alpha, policy=config.lambda_step_policy)
    note = f"restoration: uniform-risk start infeasible; recovered allocation in {rounds} descent round(s)"
    return allocation, best_U, note


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------


def run(
    spec: SystemSpec,
    jcc: JointChanceConstraint,
    cost: Cost,
    config: AcsConfig | None = None,
    inputs_echo: dict | None = None,
) -> SolveReport:
    """Alternate input and multiplier steps until the objective settles.

    The caller attests the modelling assumptions (entry independence and
    marginal unimodality of every row); nothing here can verify them. The
    returned allocation is the one that produced the returned input, so the
    pair passes the feasibility check as-is and re-solving from it is a
    fixed point.
    """
    config = config or AcsConfig()
    start = time.perf_counter()
    rows = build_reformulation(spec, jcc)
    alloc = init_lambdas(jcc, config.lambda_init_policy, config.user_lambdas)
    trace: list[dict] = []
    notes: list[str] = []

    def finish(status, U=None, alloc_used=None, extra_note=None):
        if extra_note:
            notes.append(extra_note)
        report = SolveReport(
            method="proposed",
            status=status,
            alpha=jcc.alpha,
            trace=trace,
            notes=notes,
            wall_time_ms=(time.perf_counter() - start) * 1e3,
            inputs=inputs_echo,
        )
        if U is not None:
            report.U = np.asarray(U).reshape(spec.horizon, spec.m).tolist()
            report.objective = cost.value(U)
            report.objective_per_step = cost.per_step_values(U)
        if alloc_used is not None:
            report.lambdas = dict(alloc_used.lambdas)
            report.risks = alloc_used.risks
            report.risk_sum = alloc_used.risk_sum
            if U is not None:
                report.feasibility = check_feasibility(rows, U, alloc_used, config.feasibility_tol).to_dict()
        return report

    restored = False
    prev_objective = None
    best: tuple[float, np.ndarray, RiskAllocation] | None = None
    U = None
    alloc_used = None
    status = STATUS_ITERATION_LIMIT

    iteration = 0
    while iteration < config.max_outer_iters:
        iteration += 1
        step_start = time.perf_counter()
        program = build_input_program(spec, rows, alloc, cost)
        # No warm start: the solve must be a pure function of the program so
        # restarting from the reported allocation reproduces the input exactly.
        outcome = conic.solve(program, config.solver)
        if outcome.status == conic.STATUS_INFEASIBLE:
            if iteration == 1 and config.restoration and not restored:
                try:
                    alloc, _, note = _restore_allocation(spec, rows, jcc.alpha, config)
                except AllocationInfeasible as exc:
                    trace.append(
                        {
                            "iteration": iteration,
                            "phase": "restoration",
                            "objective": None,
                            "risk_sum": None,
                            "lambdas": None,
                            "inner_status": conic.STATUS_INFEASIBLE,
                            "inner_iterations": outcome.iterations,
                            "wall_time_ms": (time.perf_counter() - step_start) * 1e3,
                        }
                    )
                    return finish(STATUS_INFEASIBLE, extra_note=f"infeasible: {exc}")
                restored = True
                notes.append(note)
                iteration -= 1  # restoration does not consume an outer iteration
                continue
            if best is not None:
                return finish(STATUS_ERROR, best[1], best[2], extra_note=f"input step failed at iteration {iteration}: {outcome.diagnostic}")
            return finish(STATUS_INFEASIBLE, extra_note=f"infeasible at iteration {iteration}: {outcome.diagnostic}")
        if outcome.status != conic.STATUS_OPTIMAL:
            if best is not None:
                return finish(STATUS_ITERATION_LIMIT, best[1], best[2], extra_note=f"inner solver returned {outcome.status}")
            return finish(STATUS_ERROR, extra_note=f"inner solver returned {outcome.status}: {outcome.diagnostic}")

        U = outcome.x
        alloc_used = alloc
        objective = cost.value(U)
        trace.append(
            {
                "iteration": iteration,
                "phase": "acs",
                "objective": objective,
                "risk_sum": alloc.risk_sum,
                "lambdas": {k: (v if math.isfinite(v) else "inf") for k, v in alloc.lambdas.items()},
                "inner_status": outcome.status,
                "inner_iterations": outcome.iterations,
                "wall_time_ms": (time.perf_counter() - step_start) * 1e3,
            }
        )
        if best is None or objective <= best[0]:
            best = (objective, U.copy(), alloc_used)

        try:
            alloc_next = lambda_step(rows, U, jcc.alpha, policy=config.lambda_step_policy)
        except AllocationInfeasible as exc:
            return finish(STATUS_ERROR, U, alloc_used, extra_note=f"allocation step failed: {exc}")

        if prev_objective is not None and abs(objective - prev_objective) <= config.convergence_rel_tol * max(1.0, abs(prev_objective)):
            status = STATUS_OPTIMAL
            break
        next_program = build_input_program(spec, rows, alloc_next, cost)
        if _program_fingerprint(next_program) == _program_fingerprint(program):
            # The multiplier step left the input subproblem bit-identical, so
            # the next input step would reproduce U exactly.
            status = STATUS_OPTIMAL
            break
        prev_objective = objective
        alloc = alloc_next
    else:
        status = STATUS_ITERATION_LIMIT
        if best is not None:
            U, alloc_used = best[1], best[2]
            notes.append("outer iteration limit reached; returning best feasible iterate")

    return finish(status, U, alloc_used)
