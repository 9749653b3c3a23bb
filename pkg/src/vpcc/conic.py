"""Quadratic-objective second-order-cone programs and a self-contained solver.

Problem form over x in R^d:

    minimize    0.5 x' P x + c' x + c0
    subject to  A_u x <= b_u                                     (linear rows)
                a' x + b + lam ||(L' x + v ; sqrt(s))|| <= h     (cone rows)

with P symmetric PSD, lam >= 0 and s >= 0. The solver is a two-phase
log-barrier path-following method. Phase 1 minimizes the worst constraint
margin over (x, sigma); it exits early once a strictly feasible point is
found, declares infeasibility when the certified lower bound on the margin
is positive, and falls back to a stall rule (no margin progress above the
tolerance for 50 Newton steps) so it detects rather than hangs. Phase 2
follows the central path with damped Newton steps and a backtracking line
search, stopping when the barrier duality gap nu / t is below the requested
relative tolerance.

Everything is dense numpy with a fixed iteration order and no randomness,
so identical inputs produce identical iterates. Problem sizes in scope are
desk scale (a few hundred variables, a few thousand rows).

``solve_reference`` adapts the same program onto cvxpy for cross-validation;
cvxpy is imported on use only.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_ITERATION_LIMIT = "iteration_limit"
STATUS_NUMERICAL_FAILURE = "numerical_failure"

_MU = 20.0  # barrier parameter growth per outer step
_CENTER_TOL = 1e-10  # Newton decrement^2 / 2 threshold
_INNER_CAP = 50  # Newton steps per centering
_LS_CAP = 60  # backtracking halvings
_STALL_LIMIT = 50  # phase-1 Newton steps without progress before giving up


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SocRow:
    """One cone row a' x + b + lam ||(L' x + v ; sqrt(s))|| <= h."""

    a: np.ndarray
    b: float
    lam: float
    L: np.ndarray
    v: np.ndarray
    s: float
    h: float

    def __post_init__(self):
        a = _readonly(self.a)
        L = np.array(self.L, dtype=float)
        if L.ndim == 1:
            L = L.reshape(len(a), -1) if L.size else np.zeros((len(a), 0))
        L.setflags(write=False)
        v = _readonlyv(self.v, L.shape[1])
        if self.lam < 0:
            raise DomainError("cone multiplier must be nonnegative")
        if self.s < 0:
            raise DomainError("cone offset s must be nonnegative")
        if L.shape[0] != a.shape[0]:
            raise DomainError(f"L must have {a.shape[0]} rows, got {L.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "h", float(self.h))

    def deviation(self, x: np.ndarray) -> float:
        resid = self.L.T @ x + self.v if self.L.size else self.v
        return float(math.sqrt(resid @ resid + self.s))

    def margin(self, x: np.ndarray) -> float:
        """Constraint value minus bound; feasible iff <= 0."""
        return float(self.a @ x + self.b + self.lam * self.deviation(x) - self.h)


def _readonlyv(values, width: int) -> np.ndarray:
    v = np.array(values, dtype=float).reshape(-1)
    if v.shape != (width,):
        raise DomainError(f"v must have length {width}, got {v.shape}")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class ConicProgram:
    """Exchange model for the solver; also JSON-serializable for debugging."""

    P: np.ndarray
    c: np.ndarray
    A_u: np.ndarray
    b_u: np.ndarray
    soc: tuple = ()
    constant: float = 0.0

    def __post_init__(self):
        c = _readonly(self.c)
        d = c.shape[0]
        P = np.array(self.P, dtype=float)
        if P.shape != (d, d):
            raise DomainError(f"P must be {d} x {d}, got {P.shape}")
        skew = np.abs(P - P.T).max() if P.size else 0.0
        if skew > 1e-8 * (1.0 + np.abs(P).max()):
            raise DomainError("P must be symmetric")
        P = 0.5 * (P + P.T)
        if P.size:
            wmin = float(np.linalg.eigvalsh(P).min())
            if wmin < -1e-9 * max(1.0, np.abs(P).max()):
                raise DomainError(f"P must be PSD; smallest eigenvalue {wmin:.3e}")
        P.setflags(write=False)
        A_u = np.array(self.A_u, dtype=float)
        if A_u.size == 0:
            A_u = A_u.reshape(0, d)
        if A_u.ndim != 2 or A_u.shape[1] != d:
            raise DomainError(f"A_u must have {d} columns, got {A_u.shape}")
        A_u.setflags(write=False)
        b_u = _readonly(self.b_u)
        if b_u.shape != (A_u.shape[0],):
            raise DomainError("b_u length must match A_u rows")
        soc = tuple(self.soc)
        for row in soc:
            if row.a.shape != (d,):
                raise DomainError("cone row dimension mismatch")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_u", A_u)
        object.__setattr__(self, "b_u", b_u)
        object.__setattr__(self, "soc", soc)
        object.__setattr__(self, "constant", float(self.constant))

    @property
    def d(self) -> int:
        return self.c.shape[0]

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.c @ x + self.constant)

    def margins(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """All constraint values minus bounds, with ("linear"|"soc", index) labels."""
        vals = []
        labels = []
        if self.A_u.shape[0]:
            lin = self.A_u @ x - self.b_u
            vals.extend(lin.tolist())
            labels.extend(("linear", i) for i in range(self.A_u.shape[0]))
        for i, row in enumerate(self.soc):
            vals.append(row.margin(x))
            labels.append(("soc", i))
        return np.asarray(vals), labels

    # -- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "c": self.c.tolist(),
            "constant": self.constant,
            "A_u": self.A_u.tolist(),
            "b_u": self.b_u.tolist(),
            "soc": [
                {
                    "a": row.a.tolist(),
                    "b": row.b,
                    "lambda": row.lam,
                    "L": row.L.tolist(),
                    "v": row.v.tolist(),
                    "s": row.s,
                    "h": row.h,
                }
                for row in self.soc
            ],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> "ConicProgram":
        soc = tuple(
            SocRow(
                a=row["a"],
                b=row["b"],
                lam=row["lambda"],
                L=row["L"],
                v=row["v"],
                s=row["s"],
                h=row["h"],
            )
            for row in data.get("soc", [])
        )
        return cls(
            P=data["P"],
            c=data["c"],
            A_u=data["A_u"],
            b_u=data["b_u"],
            soc=soc,
            constant=data.get("constant", 0.0),
        )

    @classmethod
    def from_json(cls, text: str) -> "ConicProgram":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 500

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise DomainError("solver options need tol > 0 and max_iter >= 1")


@dataclass
class SolverOutcome:
    status: str
    x: np.ndarray | None
    objective: float | None
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    wall_time_ms: float
    diagnostic: str | None = None

    @property
    def kkt_residuals(self) -> tuple[float, float, float]:
        return (self.primal_residual, self.dual_residual, self.gap)


# ---------------------------------------------------------------------------
# Barrier machinery
# ---------------------------------------------------------------------------


class _Cone:
    """Internal form t0 - a'x >= ||(W x + w ; zeta)||, barrier -log(t^2 - |z|^2)."""

    __slots__ = ("W", "w", "zeta2", "a", "t0")

    def __init__(self, W, w, zeta, a, t0):
        self.W = W
        self.w = w
        self.zeta2 = zeta * zeta
        self.a = a
        self.t0 = t0


class _Barrier:
    def __init__(self, lin_A: np.ndarray, lin_b: np.ndarray, cones: list[_Cone]):
        self.lin_A = lin_A
        self.lin_b = lin_b
        self.cones = cones
        self.nu = lin_A.shape[0] + 2 * len(cones)

    def strictly_feasible(self, x: np.ndarray) -> bool:
        if self.lin_A.shape[0]:
            if (self.lin_b - self.lin_A @ x).min() <= 0.0:
                return False
        for cone in self.cones:
            t = cone.t0 - cone.a @ x
            if t <= 0.0:
                return False
            z = cone.W @ x + cone.w
            if t * t - z @ z - cone.zeta2 <= 0.0:
                return False
        return True

    def value(self, x: np.ndarray) -> float:
        out = 0.0
        if self.lin_A.shape[0]:
            resid = self.lin_b - self.lin_A @ x
            out -= float(np.log(resid).sum())
        for cone in self.cones:
            t = cone.t0 - cone.a @ x
            z = cone.W @ x + cone.w
            out -= math.log(t * t - z @ z - cone.zeta2)
        return out

    def value_grad_hess(self, x: np.ndarray):
        d = x.shape[0]
        val = 0.0
        grad = np.zeros(d)
        hess = np.zeros((d, d))
        if self.lin_A.shape[0]:
            resid = self.lin_b - self.lin_A @ x
            val -= float(np.log(resid).sum())
            inv = 1.0 / resid
            grad += self.lin_A.T @ inv
            hess += (self.lin_A * (inv * inv)[:, None]).T @ self.lin_A
        for cone in self.cones:
            t = cone.t0 - cone.a @ x
            z = cone.W @ x + cone.w
            cval = t * t - z @ z - cone.zeta2
            val -= math.log(cval)
            gc = -2.0 * t * cone.a - 2.0 * (cone.W.T @ z)
            grad -= gc / cval
            hess += np.outer(gc, gc) / (cval * cval)
            hess -= (2.0 * np.outer(cone.a, cone.a) - 2.0 * cone.W.T @ cone.W) / cval
        return val, grad, hess


def _canonical(program: ConicProgram):
    """Split into plain linear rows and genuine cones (degenerate cones with a
    zero deviation map reduce to affine rows with a constant offset)."""
    lin_rows = [program.A_u]
    lin_rhs = [program.b_u]
    cones: list[_Cone] = []
    for row in program.soc:
        has_map = row.L.size > 0 and bool(np.any(row.L))
        if row.lam == 0.0 or not has_map:
            lin_rows.append(row.a.reshape(1, -1))
            lin_rhs.append(np.array([row.h - row.b - row.lam * math.sqrt(row.s)]))
        else:
            cones.append(
                _Cone(
                    W=row.lam * row.L.T,
                    w=row.lam * row.v,
                    zeta=row.lam * math.sqrt(row.s),
                    a=row.a.copy(),
                    t0=row.h - row.b,
                )
            )
    lin_A = np.vstack(lin_rows)
    lin_b = np.concatenate(lin_rhs)
    return lin_A, lin_b, cones


def _solve_step(H: np.ndarray, rhs: np.ndarray) -> np.ndarray | None:
    """Solve H step = rhs for PD H, escalating a ridge on breakdown."""
    scale = max(1.0, float(np.trace(H)) / max(1, H.shape[0]))
    eye = np.eye(H.shape[0])
    ridge = 0.0
    for _ in range(6):
        regularised = H + ridge * eye if ridge else H
        try:
            np.linalg.cholesky(regularised)
            step = np.linalg.solve(regularised, rhs)
            if np.all(np.isfinite(step)):
                return step
        except np.linalg.LinAlgError:
            pass
        ridge = max(ridge * 100.0, 1e-14 * scale)
    return None


class _Budget:
    __slots__ = ("limit", "spent", "diagnostic")

    def __init__(self, limit: int):
        self.limit = limit
        self.spent = 0
        self.diagnostic: str | None = None

    @property
    def exhausted(self) -> bool:
        return self.spent >= self.limit


def _conditioning_diag(H: np.ndarray) -> str:
    if not np.all(np.isfinite(H)):
        return "Newton system contains non-finite entries"
    try:
        cond = float(np.linalg.cond(H))
    except np.linalg.LinAlgError:  # pragma: no cover - cond itself failing
        return "Newton system condition number could not be estimated"
    return f"Newton system is ill-conditioned (condition estimate {cond:.3e})"


def _center(P, c, barrier: _Barrier, x, t_bar, budget: _Budget, early_exit=None):
    """Damped Newton minimisation of t*f0 + phi from a strictly feasible x.

    Returns (x, flag) with flag one of "centered", "early", "stalled",
    "budget", "numfail".
    """

    def psi(pt, bval):
        return t_bar * (0.5 * pt @ P @ pt + c @ pt) + bval

    for _ in range(_INNER_CAP):
        if budget.exhausted:
            return x, "budget"
        bval, bgrad, bhess = barrier.value_grad_hess(x)
        g = t_bar * (P @ x + c) + bgrad
        H = t_bar * P + bhess
        dx = _solve_step(H, -g)
        if dx is None:
            budget.diagnostic = _conditioning_diag(H)
            return x, "numfail"
        budget.spent += 1
        dec2 = float(-g @ dx)
        if not math.isfinite(dec2) or dec2 <= 2.0 * _CENTER_TOL:
            return x, "centered"
        base = psi(x, bval)
        step = 1.0
        accepted = False
        for _ in range(_LS_CAP):
            xn = x + step * dx
            if barrier.strictly_feasible(xn):
                if psi(xn, barrier.value(xn)) <= base - 0.01 * step * dec2:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            return x, "stalled"
        x = xn
        if early_exit is not None and early_exit(x):
            return x, "early"
    return x, "centered"


# ---------------------------------------------------------------------------
# Phases
# ---------------------------------------------------------------------------


def _phase1(program: ConicProgram, lin_A, lin_b, cones, opts, budget, x_hint):
    """Find a strictly feasible point or evidence that none exists.

    Minimizes sigma over (x, sigma) with every margin pushed below sigma.
    Returns (x, None) on success or (None, outcome_fields) on failure.
    """
    d = program.d
    g0, _ = program.margins(x_hint)
    gmax0 = float(g0.max()) if g0.size else -1.0
    if gmax0 < 0.0:
        return x_hint.copy(), None
    scale = max(1.0, abs(gmax0))
    feas_margin = max(opts.tol, 1e-9) * scale
    sigma0 = gmax0 + 1.0 + 0.1 * scale
    cap = abs(sigma0) + 100.0 * scale

    ext = np.zeros(d + 1)
    ext[:d] = x_hint
    ext[d] = sigma0

    lin_A1 = np.hstack([lin_A, -np.ones((lin_A.shape[0], 1))])
    cap_row = np.zeros((1, d + 1))
    cap_row[0, d] = -1.0
    lin_A1 = np.vstack([lin_A1, cap_row])
    lin_b1 = np.concatenate([lin_b, [cap]])
    cones1 = [
        _Cone(
            W=np.hstack([cone.W, np.zeros((cone.W.shape[0], 1))]),
            w=cone.w,
            zeta=math.sqrt(cone.zeta2),
            a=np.concatenate([cone.a, [-1.0]]),
            t0=cone.t0,
        )
        for cone in cones
    ]
    barrier = _Barrier(lin_A1, lin_b1, cones1)
    if not barrier.strictly_feasible(ext):  # pragma: no cover - sigma0 guarantees this
        ext[d] = gmax0 + 10.0 * scale

    c1 = np.zeros(d + 1)
    c1[d] = 1.0
    P1 = np.zeros((d + 1, d + 1))

    best_sigma = ext[d]
    best_x = ext[:d].copy()
    stall = 0
    t_bar = barrier.nu / max(1.0, abs(sigma0))

    def early(pt):
        return pt[d] <= -feas_margin

    while True:
        ext, flag = _center(P1, c1, barrier, ext, t_bar, budget, early_exit=early)
        sigma = float(ext[d])
        if sigma < best_sigma - opts.tol * scale:
            best_sigma = sigma
            best_x = ext[:d].copy()
            stall = 0
        else:
            stall += 1
        if flag == "early" or sigma <= -feas_margin:
            return ext[:d].copy(), None
        if flag == "numfail":
            return None, (STATUS_NUMERICAL_FAILURE, best_x, f"phase 1: {budget.diagnostic}")
        # sigma - nu/t lower-bounds the optimal margin only near the central
        # path, so the infeasibility certificate is gated on centering.
        if flag == "centered" and sigma - barrier.nu / t_bar > opts.tol * scale:
            return None, (STATUS_INFEASIBLE, best_x, _violation_diag(program, best_x))
        if flag in ("stalled", "centered") and barrier.nu / t_bar <= opts.tol * scale:
            # Margin minimised to tolerance without reaching strict feasibility.
            if sigma > -feas_margin:
                return None, (STATUS_INFEASIBLE, best_x, _violation_diag(program, best_x))
            return ext[:d].copy(), None
        if stall > _STALL_LIMIT:
            return None, (STATUS_INFEASIBLE, best_x, _violation_diag(program, best_x) + " (phase-1 stall)")
        if budget.exhausted:
            return None, (STATUS_ITERATION_LIMIT, best_x, "iteration budget exhausted in phase 1")
        t_bar *= _MU


def _violation_diag(program: ConicProgram, x: np.ndarray) -> str:
    vals, labels = program.margins(x)
    if not vals.size:
        return "no constraints"
    idx = int(np.argmax(vals))
    kind, pos = labels[idx]
    return f"most violated constraint at least-infeasible point: {kind}[{pos}] margin {vals[idx]:.6e}"


def solve(program: ConicProgram, opts: SolverOptions | None = None, x_hint: np.ndarray | None = None) -> SolverOutcome:
    """Solve the program to relative tolerance ``opts.tol``.

    On "optimal" the returned point is strictly feasible and the relative
    barrier duality gap is at most tol. "infeasible" carries a diagnostic
    naming the most violated constraint at the least-infeasible point found.
    """
    opts = opts or SolverOptions()
    start = time.perf_counter()
    d = program.d
    budget = _Budget(opts.max_iter)

    def done(status, x, diagnostic=None, gap=0.0):
        obj = program.objective(x) if x is not None else None
        if x is not None:
            vals, _ = program.margins(x)
            primal = float(max(0.0, vals.max())) if vals.size else 0.0
        else:
            primal = math.inf
        return SolverOutcome(
            status=status,
            x=None if x is None else np.array(x, dtype=float),
            objective=obj,
            primal_residual=primal,
            dual_residual=0.0,
            gap=gap,
            iterations=budget.spent,
            wall_time_ms=(time.perf_counter() - start) * 1e3,
            diagnostic=diagnostic,
        )

    lin_A, lin_b, cones = _canonical(program)

    # Constraint-free program: plain quadratic minimisation.
    if lin_A.shape[0] == 0 and not cones:
        try:
            x = np.linalg.lstsq(program.P, -program.c, rcond=None)[0]
        except np.linalg.LinAlgError:
            return done(STATUS_NUMERICAL_FAILURE, None, "quadratic solve failed")
        resid = np.linalg.norm(program.P @ x + program.c)
        if resid > opts.tol * max(1.0, np.linalg.norm(program.c)):
            return done(STATUS_NUMERICAL_FAILURE, None, f"stationarity residual {resid:.3e}; objective may be unbounded")
        return done(STATUS_OPTIMAL, x)

    hint = np.zeros(d) if x_hint is None else np.asarray(x_hint, dtype=float)
    x0, failure = _phase1(program, lin_A, lin_b, cones, opts, budget, hint)
    if x0 is None:
        status, _, diag = failure
        return done(status, None, diag)

    barrier = _Barrier(lin_A, lin_b, cones)
    nu = barrier.nu
    x = x0
    t_bar = nu / max(1.0, abs(program.objective(x0)))
    t_bar = min(max(t_bar, 1e-8), 1e8)
    while True:
        x, flag = _center(program.P, program.c, barrier, x, t_bar, budget)
        if flag == "numfail":
            return done(STATUS_NUMERICAL_FAILURE, x, f"phase 2: {budget.diagnostic}")
        gap = nu / t_bar
        if gap <= opts.tol * max(1.0, abs(program.objective(x))):
            break
        if budget.exhausted:
            out = done(STATUS_ITERATION_LIMIT, x, "iteration budget exhausted in phase 2", gap=gap)
            return out
        t_bar *= _MU

    _, bgrad, _ = barrier.value_grad_hess(x)
    dual_res = float(np.abs(program.P @ x + program.c + bgrad / t_bar).max())
    out = done(STATUS_OPTIMAL, x, gap=nu / t_bar)
    out.dual_residual = dual_res
    return out


# ---------------------------------------------------------------------------
# Independent reference solver (cross-validation seam)
# ---------------------------------------------------------------------------


def solve_reference(program: ConicProgram, solver: str = "CLARABEL") -> SolverOutcome:
    """Solve with cvxpy as an independent cross-check. Optional dependency."""
    try:
        import cvxpy as cp
    except ImportError as exc:  # pragma: no cover - environment dependent
        raise RuntimeError("solve_reference requires the optional cvxpy dependency") from exc

    start = time.perf_counter()
    x = cp.Variable(program.d)
    objective = 0.5 * cp.quad_form(x, cp.psd_wrap(program.P)) + program.c @ x + program.constant
    constraints = []
    if program.A_u.shape[0]:
        constraints.append(program.A_u @ x <= program.b_u)
    for row in program.soc:
        rhs = row.h - row.b - row.a @ x
        if row.lam == 0.0 or not (row.L.size and np.any(row.L)):
            # Same reduction as the in-repo canonicaliser: a constant
            # deviation makes the row affine (cvxpy mishandles constant cones).
            constraints.append(rhs >= row.lam * math.sqrt(row.s))
            continue
        parts = [row.L.T @ x + row.v, np.array([math.sqrt(row.s)])]
        constraints.append(cp.SOC(rhs, row.lam * cp.hstack(parts)))
    problem = cp.Problem(cp.Minimize(objective), constraints)
    problem.solve(solver=solver, verbose=False)
    status_map = {
        cp.OPTIMAL: STATUS_OPTIMAL,
        cp.OPTIMAL_INACCURATE: STATUS_OPTIMAL,
        cp.INFEASIBLE: STATUS_INFEASIBLE,
        cp.INFEASIBLE_INACCURATE: STATUS_INFEASIBLE,
    }
    status = status_map.get(problem.status, STATUS_NUMERICAL_FAILURE)
    xv = None if x.value is None else np.asarray(x.value, dtype=float)
    return SolverOutcome(
        status=status,
        x=xv,
        objective=None if xv is None else program.objective(xv),
        primal_residual=0.0,
        dual_residual=0.0,
        gap=0.0,
        iterations=0,
        wall_time_ms=(time.perf_counter() - start) * 1e3,
        diagnostic=f"cvxpy/{solver}: {problem.status}",
    )
