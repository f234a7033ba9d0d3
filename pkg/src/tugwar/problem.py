"""Problem files and the epsilon -> 0 convergence study."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import expr as ex
from .dpp import NoConvergence, SolverConfig, ValueField, solve_dpp
from .geometry import (
    BoundaryRule,
    Disk,
    DomainSpec,
    GeometryError,
    GridDomain,
    NodeClass,
    Polygon,
    Rectangle,
    check_domain_hypothesis,
    discretize,
    neighbor_table,
)
from .verify import interpolate

__all__ = [
    "SchemaError",
    "ProblemFile",
    "ConvergenceReport",
    "load_problem",
    "parse_problem",
    "write_problem",
    "run_convergence",
]

SOLVER_KEYS = {"tol": float, "max_iters": int, "sweep": str, "init": str}


class SchemaError(ValueError):
    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


@dataclass(frozen=True)
class ProblemFile:
    domain: DomainSpec
    payoff: str
    epsilon: float
    h: float
    solver: dict = field(default_factory=dict)
    seed: int = 0
    payoff_expr: ex.Expr = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.payoff_expr is None:
            object.__setattr__(self, "payoff_expr", ex.parse(self.payoff))

    def solver_config(self, epsilon: float | None = None) -> SolverConfig:
        return SolverConfig(epsilon=self.epsilon if epsilon is None else epsilon, **self.solver)

    def grid(self, h: float | None = None) -> GridDomain:
        return discretize(self.domain, self.h if h is None else h)

    def to_dict(self) -> dict:
        shape = self.domain.shape
        if isinstance(shape, Rectangle):
            dom = {"shape": "rectangle", "lo": list(shape.lo), "hi": list(shape.hi)}
        elif isinstance(shape, Disk):
            dom = {"shape": "disk", "center": list(shape.center), "radius": shape.radius}
        else:
            dom = {"shape": "polygon", "vertices": [list(v) for v in shape.vertices]}
        return {
            "domain": dom,
            "boundary": [{"where": r.where, "kind": r.kind} for r in self.domain.rules],
            "payoff": self.payoff,
            "epsilon": self.epsilon,
            "h": self.h,
            "solver": dict(self.solver),
            "seed": self.seed,
        }


def _num(doc: dict, key: str, where: str) -> float:
    v = doc.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(where, "must be a finite number")
    return float(v)


def _point(v, where: str) -> tuple:
    if not isinstance(v, list) or not v or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v):
        raise SchemaError(where, "must be a list of numbers")
    return tuple(float(c) for c in v)


def _expr(src, where: str) -> ex.Expr:
    if not isinstance(src, str):
        raise SchemaError(where, "must be an expression string")
    try:
        return ex.parse(src)
    except ex.ParseError as err:
        err.field = where
        raise


def _shape(dom) -> object:
    if not isinstance(dom, dict):
        raise SchemaError("domain", "must be an object")
    kind = dom.get("shape")
    try:
        if kind == "rectangle":
            return Rectangle(_point(dom.get("lo"), "domain.lo"), _point(dom.get("hi"), "domain.hi"))
        if kind == "disk":
            return Disk(_point(dom.get("center"), "domain.center"), _num(dom, "radius", "domain.radius"))
        if kind == "polygon":
            verts = dom.get("vertices")
            if not isinstance(verts, list):
                raise SchemaError("domain.vertices", "must be a list of points")
            return Polygon(tuple(_point(v, "domain.vertices") for v in verts))
    except GeometryError as err:
        raise SchemaError("domain", str(err)) from err
    raise SchemaError("domain.shape", "must be one of 'rectangle', 'disk', 'polygon'")


def parse_problem(doc) -> ProblemFile:
    if not isinstance(doc, dict):
        raise SchemaError("<root>", "must be a JSON object")
    known = {"domain", "boundary", "payoff", "epsilon", "h", "solver", "seed"}
    extra = set(doc) - known
    if extra:
        raise SchemaError(sorted(extra)[0], "unknown key")
    shape = _shape(doc.get("domain"))

    rules_doc = doc.get("boundary")
    if not isinstance(rules_doc, list) or not rules_doc:
        raise SchemaError("boundary", "must be a non-empty list of rules")
    rules = []
    for k, r in enumerate(rules_doc):
        if not isinstance(r, dict) or set(r) != {"where", "kind"}:
            raise SchemaError(f"boundary[{k}]", "must have exactly the keys 'where' and 'kind'")
        if r["kind"] not in ("dirichlet", "neumann"):
            raise SchemaError(f"boundary[{k}].kind", "must be 'dirichlet' or 'neumann'")
        rules.append(BoundaryRule(r["where"], r["kind"], _expr(r["where"], f"boundary[{k}].where")))
    try:
        domain = DomainSpec(shape, tuple(rules))
    except GeometryError as err:
        raise SchemaError("boundary", str(err)) from err

    payoff = doc.get("payoff")
    payoff_expr = _expr(payoff, "payoff")
    eps = _num(doc, "epsilon", "epsilon")
    h = _num(doc, "h", "h")
    if h <= 0:
        raise SchemaError("h", "must be > 0")
    if eps < 2 * h * (1 - 1e-12):
        raise SchemaError("epsilon", "must be ≥ 2h")

    solver = doc.get("solver", {})
    if not isinstance(solver, dict):
        raise SchemaError("solver", "must be an object")
    for key, val in solver.items():
        typ = SOLVER_KEYS.get(key)
        if typ is None:
            raise SchemaError(f"solver.{key}", "unknown solver option")
        if typ is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
            raise SchemaError(f"solver.{key}", "must be a number")
        if typ is not float and (isinstance(val, bool) or not isinstance(val, typ)):
            raise SchemaError(f"solver.{key}", f"must be of type {typ.__name__}")
    try:
        SolverConfig(epsilon=eps, **solver)
    except ValueError as err:
        raise SchemaError("solver", str(err)) from err

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise SchemaError("seed", "must be an integer in [0, 2^64)")
    return ProblemFile(domain, payoff, eps, h, dict(solver), seed, payoff_expr)


def load_problem(path) -> ProblemFile:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise SchemaError("<root>", f"invalid JSON: {err}") from err
    return parse_problem(doc)


def write_problem(p: ProblemFile, path) -> None:
    Path(path).write_text(json.dumps(p.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# convergence study


@dataclass
class ConvergenceReport:
    levels: list
    hypothesis: dict | None
    failed_level: int | None = None
    error: str | None = None

    def to_dict(self, timings: bool = False) -> dict:
        levels = [dict(lv) for lv in self.levels]
        if not timings:
            for lv in levels:
                lv.pop("wall_time", None)
        return {
            "levels": levels,
            "hypothesis": self.hypothesis,
            "failed_level": self.failed_level,
            "error": self.error,
        }


def _step_oscillation(u: ValueField) -> float:
    """Largest change of u over one epsilon-step (Lipschitz constant w.r.t. the step-count distance)."""
    g = u.grid
    t = neighbor_table(g, u.epsilon)
    vals = u.values[t.table]
    return float(np.max(np.abs(vals - u.values[t.centers][:, None])))


def _sup_diff(coarse: ValueField, fine: ValueField) -> float:
    """sup |coarse - fine| on fine interior nodes whose coarse stencil is all interior."""
    cg, fg = coarse.grid, fine.grid
    nodes = fg.ids(NodeClass.INTERIOR)
    interior_only = coarse.with_values(np.where(cg.cls == NodeClass.INTERIOR, coarse.values, np.nan))
    # a stencil touching a non-interior coarse node loses weight; require full weight
    ones = coarse.with_values(np.where(cg.cls == NodeClass.INTERIOR, 1.0, 0.0))
    full = np.abs(interpolate(ones, fg.points[nodes]) - 1.0) < 1e-12
    pts = fg.points[nodes[full]]
    if pts.size == 0:
        return float("nan")
    diff = np.abs(interpolate(interior_only, pts) - fine.values[nodes[full]])
    return float(np.nanmax(diff))


def run_convergence(p: ProblemFile, n_levels: int, exact: str | ex.Expr | None = None) -> ConvergenceReport:
    """Solve at eps_k = eps * 2^-k with h_k = eps_k / 4, k = 0 .. n_levels-1."""
    if n_levels < 2:
        raise ValueError("n_levels must be >= 2")
    exact_expr = ex.parse(exact) if isinstance(exact, str) else exact
    levels = []
    prev = None
    report = ConvergenceReport(levels, None)
    grid = None
    for k in range(n_levels):
        eps = p.epsilon * 2.0**-k
        h = eps / 4
        grid = discretize(p.domain, h)
        t0 = time.perf_counter()
        try:
            u = solve_dpp(grid, p.payoff_expr, p.solver_config(eps))
        except NoConvergence as err:
            report.failed_level = k
            report.error = str(err)
            break
        level = {
            "epsilon": eps,
            "h": h,
            "iterations": u.iterations,
            "final_residual": u.final_residual,
            "sup_diff_to_previous": None if prev is None else _sup_diff(prev, u),
            "exact_error": None,
            "discrete_lipschitz": _step_oscillation(u),
            "wall_time": time.perf_counter() - t0,
        }
        if exact_expr is not None:
            act = grid.active
            level["exact_error"] = float(np.max(np.abs(u.values[act] - ex.evaluate_many(exact_expr, grid.points[act]))))
        levels.append(level)
        prev = u
    if grid is not None and grid.neumann.size:
        report.hypothesis = check_domain_hypothesis(grid, "strict").to_dict()
    return report
