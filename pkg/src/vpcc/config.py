"""Versioned JSON problem configurations and builders for the solver stack.

Schema 1 layout (matrices are row-major nested lists):

    {
      "schema": 1,
      "seed": 0,
      "system": {"n", "m", "horizon", "x0", "B",
                 "A": {"all": grid} | {"per_step": [grid, ...]}},
      "constraints": {"alpha", "rows": [{"id", "G", "h", "k": int | "all"}]},
      "cost": {"quadratic", "linear"} | {"per_step": [{...}, ...]},
      "input_polytope": {"A_u", "b_u"},
      "assumptions": {"independence": "attested", "unimodal": "attested"},
      "methods": {"acs": {...}, "scenario": {...}, "mc": {...}}
    }

A grid cell is either a number (deterministic entry) or a distribution
object such as {"family": "weibull", "scale": 5, "shape": 30, "power": 3},
{"family": "beta", "a": 50, "b": 50}, {"family": "finite", "values": [...],
"probs": [...]} or {"family": "constant", "value": 2}.

Both attestation flags must read "attested" before any solve is allowed;
they declare the modelling assumptions (entry independence, marginal
unimodality of every constraint row) that cannot be machine-checked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .acs import AcsConfig, Cost
from .conic import SolverOptions
from .errors import ConfigError, DomainError
from .moments import RandomMatrixModel, SystemSpec
from .reformulate import ALPHA_MAX, ConstraintRow, JointChanceConstraint, RowSet
from .scenario import ScenarioConfig
from .stochastics import DistributionSpec

SCHEMA_VERSION = 1


def _need(mapping, key, path, kind=None):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    value = mapping[key]
    if kind is not None and not isinstance(value, kind):
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{path}.{key}" if path else key, f"expected {names}, got {type(value).__name__}")
    return value


def _matrix(value, path, rows=None, cols=None):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, f"not a numeric matrix: {exc}") from None
    if arr.ndim != 2:
        raise ConfigError(path, f"expected a 2-d matrix, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ConfigError(path, f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ConfigError(path, f"expected {cols} columns, got {arr.shape[1]}")
    return arr


def _vector(value, path, length=None):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, f"not a numeric vector: {exc}") from None
    if arr.ndim != 1:
        raise ConfigError(path, f"expected a 1-d vector, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ConfigError(path, f"expected length {length}, got {arr.shape[0]}")
    return arr


def parse_entry(cell, path) -> DistributionSpec | float:
    if isinstance(cell, (int, float)) and not isinstance(cell, bool):
        return float(cell)
    if not isinstance(cell, dict):
        raise ConfigError(path, "matrix entries are numbers or distribution objects")
    family = _need(cell, "family", path, str)
    power = cell.get("power", 1)
    try:
        if family == "weibull":
            return DistributionSpec("weibull", (float(_need(cell, "scale", path)), float(_need(cell, "shape", path))), power)
        if family == "beta":
            return DistributionSpec("beta", (float(_need(cell, "a", path)), float(_need(cell, "b", path))), power)
        if family == "finite":
            values = tuple(_vector(_need(cell, "values", path), f"{path}.values"))
            probs = tuple(_vector(_need(cell, "probs", path), f"{path}.probs"))
            return DistributionSpec("finite", (values, probs), power)
        if family == "constant":
            return DistributionSpec("constant", (float(_need(cell, "value", path)),), power)
    except DomainError as exc:
        raise ConfigError(path, str(exc)) from None
    raise ConfigError(f"{path}.family", f"unknown family {family!r}")


def _entry_to_json(entry) -> object:
    if isinstance(entry, float):
        return entry
    spec: DistributionSpec = entry
    out: dict = {"family": spec.family}
    if spec.family == "weibull":
        out["scale"], out["shape"] = spec.params
    elif spec.family == "beta":
        out["a"], out["b"] = spec.params
    elif spec.family == "finite":
        out["values"], out["probs"] = list(spec.params[0]), list(spec.params[1])
    else:
        out["value"] = spec.params[0]
    if spec.power != 1:
        out["power"] = spec.power
    return out


@dataclass(frozen=True)
class ProblemConfig:
    seed: int
    n: int
    m: int
    horizon: int
    x0: np.ndarray
    B: np.ndarray
    a_grids: tuple  # one grid per step; grid cell is float | DistributionSpec
    alpha: float
    row_specs: tuple  # (id, G, h, k int | "all")
    cost_quadratic: tuple
    cost_linear: tuple
    A_u: np.ndarray
    b_u: np.ndarray
    assumptions: dict
    acs_options: dict
    scenario_options: dict
    mc_options: dict

    # -- builders ---------------------------------------------------------

    def system_spec(self) -> SystemSpec:
        models = tuple(RandomMatrixModel.from_grid(grid) for grid in self.a_grids)
        return SystemSpec(
            horizon=self.horizon, a_models=models, B=self.B, x0=self.x0, A_u=self.A_u, b_u=self.b_u
        )

    def constraint_rows(self) -> list[ConstraintRow]:
        rows = []
        for rid, G, h, k in self.row_specs:
            if k == "all":
                for kk in range(1, self.horizon + 1):
                    rows.append(ConstraintRow(G=G, h=h, k=kk, id=f"{rid}@k{kk}"))
            else:
                rows.append(ConstraintRow(G=G, h=h, k=int(k), id=f"{rid}@k{int(k)}"))
        return rows

    def row_set(self) -> RowSet:
        return RowSet(tuple(self.constraint_rows()), self.alpha)

    def jcc(self) -> JointChanceConstraint:
        if self.alpha >= ALPHA_MAX:
            raise ConfigError(
                "constraints.alpha",
                f"alpha = {self.alpha!r} requires multipliers below the sqrt(5/3) floor; "
                "the reformulation needs alpha < 1/6",
            )
        return JointChanceConstraint(tuple(self.constraint_rows()), self.alpha)

    def cost(self) -> Cost:
        return Cost(self.cost_quadratic, self.cost_linear)

    def acs_config(self) -> AcsConfig:
        opts = dict(self.acs_options)
        solver = opts.pop("solver", {})
        return AcsConfig(solver=SolverOptions(**solver), **opts)

    def scenario_config(self, seed: int | None = None) -> ScenarioConfig:
        opts = dict(self.scenario_options)
        return ScenarioConfig(
            alpha=self.alpha,
            beta=opts.get("beta", 0.001),
            sample_count=opts.get("sample_count"),
            rng_seed=self.seed if seed is None else seed,
        )

    @property
    def mc_samples(self) -> int:
        return int(self.mc_options.get("samples", 100000))

    def attested(self) -> bool:
        return (
            self.assumptions.get("independence") == "attested"
            and self.assumptions.get("unimodal") == "attested"
        )

    def require_attested(self):
        if not self.attested():
            raise ConfigError(
                "assumptions",
                'both "independence" and "unimodal" must read "attested" before solving',
            )

    def with_alpha(self, alpha: float) -> "ProblemConfig":
        data = self.to_dict()
        data["constraints"]["alpha"] = float(alpha)
        return parse_config(data)

    def with_seed(self, seed: int) -> "ProblemConfig":
        data = self.to_dict()
        data["seed"] = int(seed)
        return parse_config(data)

    # -- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        grids = [[[_entry_to_json(cell) for cell in row] for row in grid] for grid in self.a_grids]
        same = all(g == grids[0] for g in grids[1:])
        a_field = {"all": grids[0]} if same else {"per_step": grids}
        quads = [Rk.tolist() for Rk in self.cost_quadratic]
        lins = [rk.tolist() for rk in self.cost_linear]
        if all(q == quads[0] for q in quads) and all(l == lins[0] for l in lins):
            cost_field: dict = {"quadratic": quads[0], "linear": lins[0]}
        else:
            cost_field = {"per_step": [{"quadratic": q, "linear": l} for q, l in zip(quads, lins)]}
        return {
            "schema": SCHEMA_VERSION,
            "seed": self.seed,
            "system": {
                "n": self.n,
                "m": self.m,
                "horizon": self.horizon,
                "x0": self.x0.tolist(),
                "B": self.B.tolist(),
                "A": a_field,
            },
            "constraints": {
                "alpha": self.alpha,
                "rows": [
                    {"id": rid, "G": np.asarray(G).tolist(), "h": h, "k": k}
                    for rid, G, h, k in self.row_specs
                ],
            },
            "cost": cost_field,
            "input_polytope": {"A_u": self.A_u.tolist(), "b_u": self.b_u.tolist()},
            "assumptions": dict(self.assumptions),
            "methods": {
                "acs": json.loads(json.dumps(self.acs_options)),
                "scenario": dict(self.scenario_options),
                "mc": dict(self.mc_options),
            },
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def parse_config(data: dict, source: str = "<config>") -> ProblemConfig:
    if not isinstance(data, dict):
        raise ConfigError("", f"{source}: configuration must be a JSON object")
    schema = _need(data, "schema", "", int)
    if schema != SCHEMA_VERSION:
        raise ConfigError("schema", f"unsupported schema version {schema}; this build reads {SCHEMA_VERSION}")
    seed = int(data.get("seed", 0))

    system = _need(data, "system", "", dict)
    n = _need(system, "n", "system", int)
    m = _need(system, "m", "system", int)
    horizon = _need(system, "horizon", "system", int)
    if n < 1 or m < 1 or horizon < 1:
        raise ConfigError("system", "n, m and horizon must be positive")
    x0 = _vector(_need(system, "x0", "system"), "system.x0", n)
    B = _matrix(_need(system, "B", "system"), "system.B", n, m)

    a_spec = _need(system, "A", "system", dict)
    if "all" in a_spec:
        grid = _parse_grid(a_spec["all"], "system.A.all", n)
        a_grids = tuple(grid for _ in range(horizon))
    elif "per_step" in a_spec:
        steps = a_spec["per_step"]
        if not isinstance(steps, list) or len(steps) != horizon:
            raise ConfigError("system.A.per_step", f"expected {horizon} grids")
        a_grids = tuple(_parse_grid(g, f"system.A.per_step[{t}]", n) for t, g in enumerate(steps))
    else:
        raise ConfigError("system.A", 'expected an "all" or "per_step" field')

    constraints = _need(data, "constraints", "", dict)
    alpha = float(_need(constraints, "alpha", "constraints", (int, float)))
    if not (0.0 < alpha < 1.0):
        raise ConfigError("constraints.alpha", f"alpha must lie in (0, 1), got {alpha}")
    raw_rows = _need(constraints, "rows", "constraints", list)
    if not raw_rows:
        raise ConfigError("constraints.rows", "need at least one row")
    row_specs = []
    for i, row in enumerate(raw_rows):
        path = f"constraints.rows[{i}]"
        G = _vector(_need(row, "G", path), f"{path}.G", n)
        h = float(_need(row, "h", path, (int, float)))
        k = row.get("k", "all")
        if k != "all":
            if not isinstance(k, int) or not (1 <= k <= horizon):
                raise ConfigError(f"{path}.k", f'k must be "all" or an integer in [1, {horizon}]')
        rid = str(row.get("id", f"row{i}"))
        row_specs.append((rid, G, h, k))
    if len(set(r[0] for r in row_specs)) != len(row_specs):
        raise ConfigError("constraints.rows", "row ids must be unique")

    cost = _need(data, "cost", "", dict)
    if "per_step" in cost:
        steps = cost["per_step"]
        if not isinstance(steps, list) or len(steps) != horizon:
            raise ConfigError("cost.per_step", f"expected {horizon} entries")
        quads = tuple(_matrix(_need(s, "quadratic", f"cost.per_step[{t}]"), f"cost.per_step[{t}].quadratic", m, m) for t, s in enumerate(steps))
        lins = tuple(_vector(_need(s, "linear", f"cost.per_step[{t}]"), f"cost.per_step[{t}].linear", m) for t, s in enumerate(steps))
    else:
        Rk = _matrix(_need(cost, "quadratic", "cost"), "cost.quadratic", m, m)
        rk = _vector(_need(cost, "linear", "cost"), "cost.linear", m)
        quads = tuple(Rk for _ in range(horizon))
        lins = tuple(rk for _ in range(horizon))

    polytope = _need(data, "input_polytope", "", dict)
    A_u = _matrix(_need(polytope, "A_u", "input_polytope"), "input_polytope.A_u", None, m)
    b_u = _vector(_need(polytope, "b_u", "input_polytope"), "input_polytope.b_u", A_u.shape[0])

    assumptions = data.get("assumptions", {})
    if not isinstance(assumptions, dict):
        raise ConfigError("assumptions", "expected an object")

    methods = data.get("methods", {})
    if not isinstance(methods, dict):
        raise ConfigError("methods", "expected an object")
    acs_options = dict(methods.get("acs", {}))
    scenario_options = dict(methods.get("scenario", {}))
    mc_options = dict(methods.get("mc", {}))

    cfg = ProblemConfig(
        seed=seed,
        n=n,
        m=m,
        horizon=horizon,
        x0=x0,
        B=B,
        a_grids=a_grids,
        alpha=alpha,
        row_specs=tuple(row_specs),
        cost_quadratic=quads,
        cost_linear=lins,
        A_u=A_u,
        b_u=b_u,
        assumptions=dict(assumptions),
        acs_options=acs_options,
        scenario_options=scenario_options,
        mc_options=mc_options,
    )
    try:
        cfg.acs_config()
        cfg.scenario_config()
        cfg.cost()
    except (DomainError, TypeError) as exc:
        raise ConfigError("methods", f"invalid method options: {exc}") from None
    return cfg


def _parse_grid(grid, path, n):
    if not isinstance(grid, list) or len(grid) != n:
        raise ConfigError(path, f"expected {n} rows")
    out = []
    for i, row in enumerate(grid):
        if not isinstance(row, list) or len(row) != n:
            raise ConfigError(f"{path}[{i}]", f"expected {n} entries")
        out.append(tuple(parse_entry(cell, f"{path}[{i}][{j}]") for j, cell in enumerate(row)))
    return tuple(out)


def load_config(path) -> ProblemConfig:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"{path}: invalid JSON ({exc})") from None
    return parse_config(data, source=str(path))


def two_bus_config_path() -> str:
    """Bundled two-bus dispatch example (wind plus stochastic load)."""
    return str(resources.files("vpcc").joinpath("data/two_bus.json"))


def load_two_bus() -> ProblemConfig:
    return load_config(two_bus_config_path())
