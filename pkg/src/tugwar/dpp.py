"""Fixed point of the dynamic programming principle for the epsilon game.

On every free node (interior or neumann)

    2 u(x) = max_{N(x)} u + min_{N(x)} u,

where N(x) is the closed epsilon-ball clipped to the domain, and u = F on
dirichlet nodes.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numba import njit

from . import expr as ex
from .geometry import EmptyDirichlet, GridDomain, NeighborTable, NodeClass, neighbor_table

__all__ = [
    "SolverConfig",
    "ValueField",
    "NoConvergence",
    "dirichlet_values",
    "dpp_operator",
    "dpp_residual_field",
    "certified_residual",
    "solve_dpp",
]

log = logging.getLogger(__name__)

SWEEPS = ("jacobi", "gauss-seidel")
INITS = ("zero", "mcshane")


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float
    tol: float = 1e-10
    max_iters: int = 200_000
    sweep: str = "gauss-seidel"
    init: str = "mcshane"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {SWEEPS}, got {self.sweep!r}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")


@dataclass(eq=False)
class ValueField:
    """Scalar field over the lattice; exterior entries are NaN."""

    grid: GridDomain
    values: np.ndarray
    epsilon: float
    iterations: int = 0
    final_residual: float = float("nan")

    def at(self, point) -> float:
        return float(self.values[self.grid.node_at(point)])

    def with_values(self, values: np.ndarray) -> "ValueField":
        return replace(self, values=np.asarray(values, dtype=float))

    def to_csv(self, dest=None) -> str:
        """``x,y,class,value`` rows for non-exterior nodes, ascending id."""
        g = self.grid
        buf = io.StringIO()
        buf.write("x,y,class,value\n")
        for node in g.active:
            p = g.points[node]
            y = p[1] if g.dim == 2 else 0.0
            label = NodeClass(int(g.cls[node])).label
            buf.write(f"{p[0]:.17g},{y:.17g},{label},{self.values[node]:.17g}\n")
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, grid: GridDomain, src, epsilon: float) -> "ValueField":
        text = Path(src).read_text(encoding="utf-8") if not isinstance(src, io.StringIO) else src.getvalue()
        lines = text.strip().splitlines()
        if not lines or lines[0].strip() != "x,y,class,value":
            raise ValueError("field CSV must start with the header 'x,y,class,value'")
        rows = lines[1:]
        if len(rows) != len(grid.active):
            raise ValueError(f"field CSV has {len(rows)} rows, grid has {len(grid.active)} active nodes")
        values = np.full(grid.n_nodes, np.nan)
        for node, row in zip(grid.active, rows):
            x, y, label, v = row.split(",")
            p = grid.points[node]
            q = np.array([float(x), float(y)])[: grid.dim]
            if not np.allclose(p, q, atol=1e-12) or label != NodeClass(int(grid.cls[node])).label:
                raise ValueError(f"field CSV row {row!r} does not match node {node}")
            values[node] = float(v)
        return cls(grid, values, float(epsilon))


class NoConvergence(RuntimeError):
    def __init__(self, final_residual: float, field: ValueField):
        self.final_residual = final_residual
        self.field = field
        super().__init__(
            f"no convergence after {field.iterations} iterations; certified residual {final_residual:.3e}"
        )


def dirichlet_values(g: GridDomain, F: ex.Expr) -> np.ndarray:
    return ex.evaluate_many(F, g.points[g.dirichlet])


def _free_table(g: GridDomain, eps: float) -> NeighborTable:
    return neighbor_table(g, eps, centers=g.free)


def dpp_operator(u: np.ndarray, table: NeighborTable) -> np.ndarray:
    """One simultaneous (Jacobi) application of the DPP on the table's centers."""
    vals = u[table.table]
    return 0.5 * (vals.max(axis=1) + vals.min(axis=1))


def _signed_residual(u: np.ndarray, table: NeighborTable) -> np.ndarray:
    vals = u[table.table]
    return 2.0 * u[table.centers] - vals.max(axis=1) - vals.min(axis=1)


def dpp_residual_field(u: ValueField) -> np.ndarray:
    """Signed residual 2u - max - min on free nodes; NaN elsewhere."""
    table = _free_table(u.grid, u.epsilon)
    out = np.full(u.grid.n_nodes, np.nan)
    out[table.centers] = _signed_residual(u.values, table)
    return out


def certified_residual(u: ValueField) -> float:
    r = dpp_residual_field(u)
    free = u.grid.free
    return float(np.max(np.abs(r[free]))) if free.size else 0.0


@njit(cache=True)
def _gauss_seidel_sweep(u, centers, table):
    for r in range(centers.shape[0]):
        hi = -np.inf
        lo = np.inf
        for k in range(table.shape[1]):
            v = u[table[r, k]]
            if v > hi:
                hi = v
            if v < lo:
                lo = v
        u[centers[r]] = 0.5 * (hi + lo)


def _initial_field(g: GridDomain, F: ex.Expr, init: str) -> np.ndarray:
    u = np.full(g.n_nodes, np.nan)
    fd = dirichlet_values(g, F)
    u[g.dirichlet] = fd
    if init == "zero":
        u[g.free] = 0.0
        return u
    q = g.points[g.dirichlet]
    L = ex.lipschitz_on(F, q) if len(q) >= 2 else 0.0
    for start in range(0, g.free.size, 2048):
        rows = g.free[start : start + 2048]
        dist = np.linalg.norm(g.points[rows, None, :] - q[None], axis=-1)
        u[rows] = (fd[None, :] + L * dist).min(axis=1)
    return u


def solve_dpp(g: GridDomain, F: ex.Expr, cfg: SolverConfig, check_every: int = 4) -> ValueField:
    """Iterate the DPP until the simultaneous residual is at most ``2 * cfg.tol``.

    Gauss-Seidel sweeps run in ascending node-id order; whichever sweep is
    used, the stopping certificate is always the Jacobi residual of the
    returned field.
    """
    if g.dirichlet.size == 0:
        raise EmptyDirichlet("no dirichlet nodes")
    table = _free_table(g, cfg.epsilon)
    u = _initial_field(g, F, cfg.init)
    threshold = 2.0 * cfg.tol
    field = ValueField(g, u, cfg.epsilon)

    if table.centers.size == 0:
        field.final_residual = 0.0
        return field

    centers = table.centers.astype(np.int64)
    tab = table.table.astype(np.int64)
    residual = np.inf
    it = 0
    while True:
        if cfg.sweep == "jacobi":
            # residual of the current iterate, not of the update
            residual = float(np.max(np.abs(_signed_residual(u, table))))
            if residual <= threshold or it >= cfg.max_iters:
                break
            u[centers] = dpp_operator(u, table)
            it += 1
        else:
            if it % check_every == 0 or it >= cfg.max_iters:
                residual = float(np.max(np.abs(_signed_residual(u, table))))
                if residual <= threshold or it >= cfg.max_iters:
                    break
            _gauss_seidel_sweep(u, centers, tab)
            it += 1

    field.iterations = it
    field.final_residual = residual
    log.debug("dpp solve: %d iterations, residual %.3e", it, residual)
    if residual > threshold:
        raise NoConvergence(residual, field)
    return field
