"""Numerical certificates that a field solves the mixed boundary problem.

Three families of checks:

* finite-difference infinity-Laplacian residuals at interior nodes,
* normal-derivative residuals on neumann nodes and the dirichlet error,
* comparison with quadratic distance functions from above and below.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from . import expr as ex
from .dpp import ValueField
from .geometry import GridDomain, NodeClass

__all__ = [
    "TooCloseToBoundary",
    "PreconditionViolated",
    "FDResult",
    "ResidualReport",
    "QuadraticDistanceFn",
    "ComparisonResult",
    "SweepResult",
    "interpolate",
    "clearance",
    "grad_and_infinity_laplacian_fd",
    "residual_report",
    "relative_boundary",
    "check_comparison",
    "comparison_sweep",
]

COMPARISON_TOL = 1e-9


class TooCloseToBoundary(ValueError):
    pass


class PreconditionViolated(ValueError):
    pass


# --------------------------------------------------------------------------
# sampling


def interpolate(u: ValueField, points) -> np.ndarray:
    """Bilinear (linear in 1D) interpolation of ``u`` at arbitrary points.

    Corners that are exterior are dropped and the remaining weights
    renormalized; a point with no usable corner gets NaN.
    """
    g = u.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    s = (pts - g.origin) / g.h
    base = np.floor(s).astype(np.int64)
    t = s - base
    nx, ny = g.shape
    if g.dim == 1:
        corners = [(0, 0), (1, 0)]
    else:
        corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
    num = np.zeros(len(pts))
    den = np.zeros(len(pts))
    for di, dj in corners:
        i = base[:, 0] + di
        j = (base[:, 1] + dj) if g.dim == 2 else np.zeros_like(i)
        w = t[:, 0] if di else 1 - t[:, 0]
        if g.dim == 2:
            w = w * (t[:, 1] if dj else 1 - t[:, 1])
        inside = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
        node = np.where(inside, j * nx + i, 0)
        val = u.values[node]
        ok = inside & np.isfinite(val) & (g.cls[node] != NodeClass.EXTERIOR)
        num += np.where(ok, w * np.where(ok, val, 0.0), 0.0)
        den += np.where(ok, w, 0.0)
    out = np.full(len(pts), np.nan)
    good = den > 1e-14
    out[good] = num[good] / den[good]
    return out


def clearance(g: GridDomain) -> np.ndarray:
    """Distance from each node to the nearest non-interior node (0 off the interior)."""
    nx, ny = g.shape
    mask = g.cls.reshape(ny, nx) == NodeClass.INTERIOR
    if g.dim == 1:
        d = ndimage.distance_transform_edt(mask[0])
    else:
        d = ndimage.distance_transform_edt(mask)
    return np.asarray(d, dtype=float).ravel() * g.h


# --------------------------------------------------------------------------
# infinity laplacian


@dataclass(frozen=True)
class FDResult:
    """Gradient and infinity-Laplacian estimate at one node.

    When the gradient is below the floor, ``degenerate`` is set,
    ``lap_inf`` is the mean of the axis second differences and ``spread``
    is their max minus min.
    """

    gradient: tuple
    lap_inf: float
    degenerate: bool = False
    spread: float | None = None


def _fd_batch(u: ValueField, nodes: np.ndarray, delta: float, floor: float):
    g = u.grid
    x = g.points[nodes]
    u0 = u.values[nodes]
    d = g.dim
    grad = np.empty((len(nodes), d))
    axis_d2 = np.empty((len(nodes), d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = delta
        up = interpolate(u, x + e)
        dn = interpolate(u, x - e)
        grad[:, k] = (up - dn) / (2 * delta)
        axis_d2[:, k] = (up - 2 * u0 + dn) / delta**2
    gn = np.linalg.norm(grad, axis=1)
    degenerate = gn < floor
    v = grad / np.where(degenerate, 1.0, gn)[:, None]
    lap = (interpolate(u, x + delta * v) - 2 * u0 + interpolate(u, x - delta * v)) / delta**2
    lap = np.where(degenerate, axis_d2.mean(axis=1), lap)
    spread = axis_d2.max(axis=1) - axis_d2.min(axis=1)
    return grad, lap, degenerate, spread


def grad_and_infinity_laplacian_fd(u: ValueField, node: int, delta: float, gradient_floor: float = 1e-6) -> FDResult:
    g = u.grid
    if delta < g.h * (1 - 1e-9):
        raise ValueError(f"delta {delta} is below the grid spacing {g.h}")
    if g.cls[node] != NodeClass.INTERIOR or clearance(g)[node] <= delta + 1e-12:
        raise TooCloseToBoundary(f"node {node} is within {delta} of a non-interior node")
    grad, lap, deg, spread = _fd_batch(u, np.array([node]), delta, gradient_floor)
    return FDResult(
        gradient=tuple(float(c) for c in grad[0]),
        lap_inf=float(lap[0]),
        degenerate=bool(deg[0]),
        spread=float(spread[0]) if deg[0] else None,
    )


@dataclass(frozen=True)
class ResidualReport:
    interior_linf_residual: float
    interior_nodes_checked: int
    skipped_small_gradient: int
    skipped_near_boundary: int
    neumann_linf_residual: float
    dirichlet_linf_error: float
    gradient_floor: float
    delta: float
    worst_interior_node: int | None = None
    worst_neumann_node: int | None = None
    degenerate_spread_max: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def residual_report(
    u: ValueField,
    F: ex.Expr,
    delta: float | None = None,
    gradient_floor: float | None = None,
) -> ResidualReport:
    """Interior, neumann and dirichlet residuals of ``u``.

    Interior nodes closer than ``delta`` to a non-interior node are not
    checked (``skipped_near_boundary``); the rest are either checked or
    skipped for a gradient below the floor, so
    ``checked + skipped_small_gradient`` equals the number of eligible nodes.
    """
    g = u.grid
    delta = g.h if delta is None else float(delta)
    if delta < g.h * (1 - 1e-9):
        raise ValueError(f"delta {delta} is below the grid spacing {g.h}")
    fd = ex.evaluate_many(F, g.points[g.dirichlet]) if g.dirichlet.size else np.zeros(0)
    if gradient_floor is None:
        L = ex.lipschitz_on(F, g.points[g.dirichlet]) if g.dirichlet.size >= 2 else 0.0
        gradient_floor = 1e-6 * L if L > 0 else 1e-12

    interior = g.ids(NodeClass.INTERIOR)
    eligible = interior[clearance(g)[interior] > delta + 1e-12]
    worst_int = None
    int_res = 0.0
    spread_max = 0.0
    n_checked = n_skipped = 0
    if eligible.size:
        _, lap, deg, spread = _fd_batch(u, eligible, delta, gradient_floor)
        n_skipped = int(deg.sum())
        n_checked = int((~deg).sum())
        if n_checked:
            a = np.abs(np.where(deg, 0.0, lap))
            k = int(np.argmax(a))
            int_res, worst_int = float(a[k]), int(eligible[k])
        if n_skipped:
            spread_max = float(spread[deg].max())

    neu = g.neumann
    neu_res = 0.0
    worst_neu = None
    if neu.size:
        s = 2 * g.h
        inner = interpolate(u, g.points[neu] - s * g.normals[neu])
        r = np.abs(u.values[neu] - inner) / s
        ok = np.isfinite(r)
        if ok.any():
            k = int(np.argmax(np.where(ok, r, -1.0)))
            neu_res, worst_neu = float(r[k]), int(neu[k])

    dir_err = float(np.max(np.abs(u.values[g.dirichlet] - fd))) if g.dirichlet.size else 0.0
    return ResidualReport(
        interior_linf_residual=int_res,
        interior_nodes_checked=n_checked,
        skipped_small_gradient=n_skipped,
        skipped_near_boundary=int(interior.size - eligible.size),
        neumann_linf_residual=neu_res,
        dirichlet_linf_error=dir_err,
        gradient_floor=float(gradient_floor),
        delta=delta,
        worst_interior_node=worst_int,
        worst_neumann_node=worst_neu,
        degenerate_spread_max=spread_max,
    )


# --------------------------------------------------------------------------
# comparison with quadratic distance functions


@dataclass(frozen=True)
class QuadraticDistanceFn:
    """phi(x) = a r^2 + b r + c with r = |x - z|."""

    z: tuple
    a: float
    b: float
    c: float

    def radius(self, points) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(points) - np.asarray(self.z, dtype=float), axis=-1)

    def __call__(self, points) -> np.ndarray:
        r = self.radius(points)
        return self.a * r * r + self.b * r + self.c

    def negated(self) -> "QuadraticDistanceFn":
        return QuadraticDistanceFn(self.z, -self.a, -self.b, -self.c)

    def center_in(self, points, reach: float = 0.0) -> bool:
        """Whether z lies within ``reach`` of one of ``points``."""
        return bool(np.any(self.radius(points) <= reach + 1e-12))

    def star_increasing_on(self, points, reach: float = 0.0) -> bool:
        """``reach`` > 0 treats a node set as the region it covers."""
        if self.center_in(points, reach):
            return self.b == 0 and self.a > 0
        r = self.radius(points)
        return bool(np.all(2 * self.a * r + self.b > 0))

    def star_decreasing_on(self, points, reach: float = 0.0) -> bool:
        return self.negated().star_increasing_on(points, reach)


@dataclass(frozen=True)
class ComparisonResult:
    passes: bool
    witness: int | None
    margin: float


def relative_boundary(g: GridDomain, V) -> np.ndarray:
    """Nodes of V with an axis lattice neighbor that is non-exterior and outside V."""
    V = np.asarray(sorted(set(int(v) for v in V)), dtype=np.int64)
    inV = np.zeros(g.n_nodes, dtype=bool)
    inV[V] = True
    nx, ny = g.shape
    i, j = V % nx, V // nx
    steps = [(1, 0), (-1, 0)] + ([(0, 1), (0, -1)] if g.dim == 2 else [])
    edge = np.zeros(V.size, dtype=bool)
    for di, dj in steps:
        ii, jj = i + di, j + dj
        ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
        nb = np.where(ok, jj * nx + ii, 0)
        edge |= ok & (g.cls[nb] != NodeClass.EXTERIOR) & ~inV[nb]
    return V[edge]


def _validate_V(g: GridDomain, V) -> np.ndarray:
    V = np.asarray(sorted(set(int(v) for v in V)), dtype=np.int64)
    if V.size == 0:
        raise PreconditionViolated("V is empty")
    if np.any(g.cls[V] == NodeClass.EXTERIOR):
        raise PreconditionViolated("V contains exterior nodes")
    if np.any(g.cls[V] == NodeClass.DIRICHLET):
        raise PreconditionViolated("V intersects the dirichlet boundary")
    return V


def check_comparison(u: ValueField, side: str, V, phi: QuadraticDistanceFn) -> ComparisonResult:
    """Does boundary domination by ``phi`` propagate into V?

    side='above': phi must be *-increasing on V with a <= 0 and phi >= u on
    the relative boundary; the verdict is whether phi >= u on all of V.
    side='below' mirrors this with *-decreasing, a >= 0 and phi <= u.
    A failed precondition raises PreconditionViolated instead of returning
    a verdict.
    """
    g = u.grid
    V = _validate_V(g, V)
    pts = g.points[V]
    if side == "above":
        if phi.a > 0:
            raise PreconditionViolated("comparison from above needs a <= 0")
        if not phi.star_increasing_on(pts, g.h):
            raise PreconditionViolated("phi is not *-increasing on V")
        gap = phi(pts) - u.values[V]
    elif side == "below":
        if phi.a < 0:
            raise PreconditionViolated("comparison from below needs a >= 0")
        if not phi.star_decreasing_on(pts, g.h):
            raise PreconditionViolated("phi is not *-decreasing on V")
        gap = u.values[V] - phi(pts)
    else:
        raise ValueError(f"side must be 'above' or 'below', got {side!r}")

    bd = relative_boundary(g, V)
    if bd.size == 0:
        raise PreconditionViolated("V has an empty relative boundary")
    on_bd = np.isin(V, bd)
    if np.any(gap[on_bd] < -COMPARISON_TOL):
        raise PreconditionViolated("phi does not dominate u on the relative boundary of V")
    bad = np.flatnonzero(gap < -COMPARISON_TOL)
    witness = int(V[bad[0]]) if bad.size else None
    return ComparisonResult(passes=bad.size == 0, witness=witness, margin=float(gap.min()))


@dataclass
class SweepResult:
    trials: int = 0
    passes: int = 0
    precondition_rejects: int = 0
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    key = np.array([seed & ((1 << 64) - 1), trial], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _point_in_domain(g: GridDomain, rng: np.random.Generator, lo, hi) -> np.ndarray:
    shape = g.spec.shape
    while True:
        p = rng.uniform(lo, hi)
        if shape.signed_distance(p[None])[0] <= 0:
            return p


def comparison_sweep(u: ValueField, n_trials: int, seed: int = 0, side: str = "both") -> SweepResult:
    """Randomized comparison checks on grid balls.

    Each trial draws a ball V (center off the dirichlet boundary, radius in
    [2h, diam/3]), a center z in the closed domain (a random active node or
    a uniform random point), a with the side's sign and |a| <= 1, and b with
    the side's sign and |b| <= 2. The constant c is chosen so that phi
    touches u on the relative boundary of V with zero margin. Draws that are
    not *-monotone on V count as precondition rejects. With side='both',
    trials alternate above/below.
    """
    g = u.grid
    out = SweepResult()
    free = g.free
    if free.size == 0:
        return out
    act = g.points[g.active]
    lo, hi = act.min(axis=0), act.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    r_lo, r_hi = 2 * g.h, max(2 * g.h, diam / 3)
    fpts = g.points[free]

    for trial in range(n_trials):
        rng = _trial_rng(seed, trial)
        sd = side if side != "both" else ("above" if trial % 2 == 0 else "below")
        center = g.points[free[rng.integers(free.size)]]
        radius = rng.uniform(r_lo, r_hi)
        V = free[np.linalg.norm(fpts - center, axis=1) <= radius]
        if rng.random() < 0.5:
            z = g.points[g.active[rng.integers(g.active.size)]]
        else:
            z = _point_in_domain(g, rng, lo, hi)
        sign = -1.0 if sd == "above" else 1.0
        a = sign * rng.uniform(0.0, 1.0)
        b = -sign * rng.uniform(0.0, 2.0)
        out.trials += 1
        bd = relative_boundary(g, V)
        if bd.size == 0:
            out.precondition_rejects += 1
            continue
        base = QuadraticDistanceFn(tuple(float(c) for c in z), a, b, 0.0)
        rest = u.values[bd] - base(g.points[bd])
        c = float(rest.max() if sd == "above" else rest.min())
        phi = QuadraticDistanceFn(base.z, a, b, c)
        try:
            res = check_comparison(u, sd, V, phi)
        except PreconditionViolated:
            out.precondition_rejects += 1
            continue
        if res.passes:
            out.passes += 1
        else:
            out.failures.append(
                {
                    "trial": trial,
                    "side": sd,
                    "witness": res.witness,
                    "witness_point": [float(c) for c in g.points[res.witness]],
                    "margin": res.margin,
                }
            )
    return out


def report_json(residuals: ResidualReport, sweep: SweepResult | None = None) -> str:
    doc = {"residuals": residuals.to_dict()}
    if sweep is not None:
        doc["comparison"] = sweep.to_dict()
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


