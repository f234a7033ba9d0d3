"""Domains, their lattice discretization and epsilon-ball neighborhoods."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import expr as ex

__all__ = [
    "NodeClass",
    "GeometryError",
    "DegenerateShape",
    "EmptyDirichlet",
    "EpsTooSmall",
    "Rectangle",
    "Disk",
    "Polygon",
    "BoundaryRule",
    "DomainSpec",
    "GridDomain",
    "Neighborhood",
    "NeighborTable",
    "HypothesisReport",
    "discretize",
    "neighborhood",
    "neighbor_table",
    "check_domain_hypothesis",
]

_TOL = 1e-12


class NodeClass(enum.IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2
    EXTERIOR = 3

    @property
    def label(self) -> str:
        return self.name.lower()


class GeometryError(ValueError):
    pass


class DegenerateShape(GeometryError):
    pass


class EmptyDirichlet(GeometryError):
    pass


class EpsTooSmall(GeometryError):
    pass


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


# --------------------------------------------------------------------------
# shapes. Signed distance is negative inside.


@dataclass(frozen=True)
class Rectangle:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise DegenerateShape("rectangle corners must both be 1- or 2-dimensional")
        if not all(a < b for a, b in zip(lo, hi)):
            raise DegenerateShape(f"rectangle needs lo < hi componentwise, got {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def bbox(self):
        return np.array(self.lo), np.array(self.hi)

    def _q(self, p):
        lo, hi = self.bbox()
        c, half = (lo + hi) / 2, (hi - lo) / 2
        return np.abs(p - c) - half, c

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        q, _ = self._q(p)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def closest_boundary_point(self, p: np.ndarray) -> np.ndarray:
        lo, hi = self.bbox()
        q, c = self._q(p)
        out = np.clip(p, lo, hi)
        inner = q.max(axis=-1) <= 0
        if inner.any():
            axis = q[inner].argmax(axis=-1)
            rows = np.nonzero(inner)[0]
            face = np.where(p[rows, axis] >= c[axis], hi[axis], lo[axis])
            out[rows, axis] = face
        return out

    def normal(self, p: np.ndarray) -> np.ndarray:
        lo, hi = self.bbox()
        q, c = self._q(p)
        side = np.where(p >= c, 1.0, -1.0)
        clamped = np.clip(p, lo, hi)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1) > _TOL
        n = np.where(outside[:, None], p - clamped, 0.0)
        # inside or on the boundary: the nearest faces (several at a corner)
        qmax = q.max(axis=-1, keepdims=True)
        near = q >= qmax - _TOL
        n = np.where(outside[:, None], n, near * side)
        return _unit(n)


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        if len(center) != 2:
            raise DegenerateShape("disk center must be 2-dimensional")
        if not self.radius > 0:
            raise DegenerateShape(f"disk radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return 2

    def bbox(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def _dir(self, p):
        d = p - np.array(self.center)
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        # the center has no preferred direction; pick +x
        return np.where(r > 0, d / np.where(r > 0, r, 1.0), np.array([1.0, 0.0])), r[:, 0]

    def signed_distance(self, p):
        return np.linalg.norm(p - np.array(self.center), axis=-1) - self.radius

    def closest_boundary_point(self, p):
        u, _ = self._dir(p)
        return np.array(self.center) + self.radius * u

    def normal(self, p):
        return self._dir(p)[0]


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with counterclockwise vertices; convexity is not required."""

    vertices: tuple

    def __post_init__(self):
        v = tuple(tuple(float(c) for c in p) for p in self.vertices)
        if len(v) < 3 or any(len(p) != 2 for p in v):
            raise DegenerateShape("polygon needs at least 3 two-dimensional vertices")
        arr = np.array(v)
        if np.any(np.linalg.norm(arr - np.roll(arr, -1, axis=0), axis=1) == 0):
            raise DegenerateShape("polygon has repeated consecutive vertices")
        x, y = arr[:, 0], arr[:, 1]
        area = 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
        if area <= 0:
            raise DegenerateShape("polygon vertices must be in counterclockwise order")
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self) -> int:
        return 2

    @cached_property
    def _edges(self):
        a = np.array(self.vertices)
        b = np.roll(a, -1, axis=0)
        d = b - a
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)
        return a, b, _unit(n)

    @property
    def cross_products(self) -> np.ndarray:
        a = np.array(self.vertices)
        e1 = np.roll(a, -1, axis=0) - a
        e0 = a - np.roll(a, 1, axis=0)
        return e0[:, 0] * e1[:, 1] - e0[:, 1] * e1[:, 0]

    @property
    def is_convex(self) -> bool:
        return bool(np.all(self.cross_products >= 0))

    def bbox(self):
        a = np.array(self.vertices)
        return a.min(axis=0), a.max(axis=0)

    def _closest(self, p):
        a, b, _ = self._edges
        d = b - a
        t = ((p[:, None, :] - a[None]) * d[None]).sum(-1) / (d * d).sum(-1)[None]
        t = np.clip(t, 0.0, 1.0)
        cp = a[None] + t[..., None] * d[None]
        dist = np.linalg.norm(p[:, None, :] - cp, axis=-1)
        return cp, dist, t

    def _inside(self, p):
        a, b, _ = self._edges
        px, py = p[:, 0:1], p[:, 1:2]
        ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
        straddle = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = ax + (py - ay) * (bx - ax) / (by - ay)
        return (np.count_nonzero(straddle & (px < xcross), axis=1) % 2) == 1

    def signed_distance(self, p):
        _, dist, _ = self._closest(p)
        d = dist.min(axis=1)
        return np.where(self._inside(p), -d, d)

    def closest_boundary_point(self, p):
        cp, dist, _ = self._closest(p)
        k = dist.argmin(axis=1)
        return cp[np.arange(len(p)), k]

    def normal(self, p):
        cp, dist, _ = self._closest(p)
        _, _, en = self._edges
        dmin = dist.min(axis=1)
        k = dist.argmin(axis=1)
        rows = np.arange(len(p))
        sign = np.where(self._inside(p), -1.0, 1.0)
        away = (p - cp[rows, k]) * sign[:, None]
        # on the boundary: average the outward normals of every touching edge
        touching = dist <= dmin[:, None] + _TOL
        on_edge = touching.astype(float) @ en
        return _unit(np.where((dmin > _TOL)[:, None], away, on_edge))


Shape = Rectangle | Disk | Polygon


# --------------------------------------------------------------------------
# domain + grid


@dataclass(frozen=True)
class BoundaryRule:
    where: str
    kind: str
    predicate: ex.Expr = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise GeometryError(f"boundary kind must be 'dirichlet' or 'neumann', got {self.kind!r}")
        if self.predicate is None:
            object.__setattr__(self, "predicate", ex.parse(self.where))


@dataclass(frozen=True)
class DomainSpec:
    shape: Shape
    rules: tuple

    def __post_init__(self):
        rules = tuple(r if isinstance(r, BoundaryRule) else BoundaryRule(*r) for r in self.rules)
        if not rules:
            raise GeometryError("at least one boundary rule (the catch-all) is required")
        last = rules[-1].predicate
        if not (ex.is_constant(last) and ex.constant_value(last) > 0.5):
            raise GeometryError("the last boundary rule must be a catch-all constant > 0.5")
        object.__setattr__(self, "rules", rules)

    @property
    def dim(self) -> int:
        return self.shape.dim


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Uniform lattice over the bounding box inflated by one cell.

    Node ids are flat lattice indices with x varying fastest, so
    ``id = j * nx + i``. Exterior nodes keep their ids.
    """

    spec: DomainSpec
    h: float
    dim: int
    origin: np.ndarray
    shape: tuple  # (nx, ny); ny == 1 in one dimension
    points: np.ndarray
    cls: np.ndarray
    normals: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.cls)

    def ids(self, *classes: NodeClass) -> np.ndarray:
        return np.flatnonzero(np.isin(self.cls, [int(c) for c in classes]))

    @cached_property
    def active(self) -> np.ndarray:
        """Non-exterior node ids in ascending order."""
        return np.flatnonzero(self.cls != NodeClass.EXTERIOR)

    @cached_property
    def free(self) -> np.ndarray:
        """Non-exterior, non-dirichlet node ids."""
        return self.ids(NodeClass.INTERIOR, NodeClass.NEUMANN)

    @cached_property
    def dirichlet(self) -> np.ndarray:
        return self.ids(NodeClass.DIRICHLET)

    @cached_property
    def neumann(self) -> np.ndarray:
        return self.ids(NodeClass.NEUMANN)

    def lattice_index(self, node: int) -> tuple[int, int]:
        nx = self.shape[0]
        return node % nx, node // nx

    def node_at(self, point, tol: float | None = None) -> int:
        """Id of the lattice node closest to ``point``; it must lie within ``tol`` (default h/2)."""
        p = np.asarray(point, dtype=float).reshape(-1)
        if p.size != self.dim:
            raise GeometryError(f"point {tuple(p)} has dimension {p.size}, grid has {self.dim}")
        k = np.rint((p - self.origin) / self.h).astype(int)
        nx, ny = self.shape
        i = k[0]
        j = k[1] if self.dim == 2 else 0
        if not (0 <= i < nx and 0 <= j < ny):
            raise GeometryError(f"point {tuple(p)} is outside the lattice")
        node = j * nx + i
        limit = self.h / 2 if tol is None else tol
        if np.linalg.norm(self.points[node] - p) > limit + 1e-12:
            raise GeometryError(f"no lattice node within {limit} of {tuple(p)}")
        return int(node)

    def class_of(self, node: int) -> NodeClass:
        return NodeClass(int(self.cls[node]))

    @cached_property
    def lattice_mask_interior(self) -> np.ndarray:
        nx, ny = self.shape
        return (self.cls == NodeClass.INTERIOR).reshape(ny, nx)


def discretize(spec: DomainSpec, h: float, require_dirichlet: bool = True) -> GridDomain:
    """Lattice with spacing ``h`` and per-node classification.

    A node is exterior when its signed distance exceeds h/2, a boundary
    node when it lies in the band |d| <= h/2 (the outer edge of the band is
    open), interior otherwise. Boundary nodes take the kind of the first
    rule whose predicate exceeds 0.5 at the closest boundary point.
    """
    if not h > 0:
        raise DegenerateShape(f"grid spacing must be positive, got {h}")
    shape = spec.shape
    lo, hi = shape.bbox()
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if np.any(hi - lo < 2 * h - 1e-12):
        raise DegenerateShape(f"bounding box extent {hi - lo} is smaller than 2h = {2 * h}")
    counts = np.floor((hi - lo) / h + 1e-9).astype(int)
    axes = [lo[k] + h * np.arange(-1, counts[k] + 2) for k in range(len(lo))]
    if len(axes) == 1:
        pts = axes[0][:, None]
        lattice_shape = (len(axes[0]), 1)
    else:
        X, Y = np.meshgrid(axes[0], axes[1])
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        lattice_shape = (len(axes[0]), len(axes[1]))

    sd = shape.signed_distance(pts)
    band_tol = 1e-9 * h
    exterior = sd > h / 2 - band_tol
    boundary = ~exterior & (sd >= -h / 2 - band_tol)
    cls = np.full(len(pts), int(NodeClass.INTERIOR), dtype=np.int8)
    cls[exterior] = NodeClass.EXTERIOR

    bidx = np.flatnonzero(boundary)
    normals = np.zeros_like(pts)
    if bidx.size:
        cp = shape.closest_boundary_point(pts[bidx])
        kinds = np.full(bidx.size, -1, dtype=np.int8)
        for rule in spec.rules:
            todo = kinds < 0
            if not todo.any():
                break
            hit = ex.evaluate_many(rule.predicate, cp[todo]) > 0.5
            code = NodeClass.DIRICHLET if rule.kind == "dirichlet" else NodeClass.NEUMANN
            sub = np.flatnonzero(todo)[hit]
            kinds[sub] = code
        cls[bidx] = kinds
        neu = bidx[kinds == NodeClass.NEUMANN]
        if neu.size:
            normals[neu] = shape.normal(pts[neu])

    if require_dirichlet and not np.any(cls == NodeClass.DIRICHLET):
        raise EmptyDirichlet("no node was classified dirichlet; the game could never end")

    return GridDomain(
        spec=spec,
        h=float(h),
        dim=len(lo),
        origin=np.array([a[0] for a in axes]),
        shape=lattice_shape,
        points=pts,
        cls=cls,
        normals=normals,
    )


# --------------------------------------------------------------------------
# neighborhoods


@dataclass(frozen=True)
class Neighborhood:
    center: int
    members: tuple
    epsilon: float


def _check_eps(g: GridDomain, eps: float) -> None:
    if eps < g.h * (1 - 1e-9):
        raise EpsTooSmall(f"epsilon {eps} is below the grid spacing {g.h}")


def _offsets(g: GridDomain, eps: float) -> np.ndarray:
    """Integer lattice offsets within distance eps, sorted so ids ascend."""
    r = eps / g.h
    k = int(math.floor(r + 1e-9))
    rng = np.arange(-k, k + 1)
    if g.dim == 1:
        offs = np.stack([rng, np.zeros_like(rng)], axis=1)
    else:
        dj, di = np.meshgrid(rng, rng, indexing="ij")
        offs = np.stack([di.ravel(), dj.ravel()], axis=1)
    keep = (offs**2).sum(axis=1) <= r * r * (1 + 1e-9)
    return offs[keep]  # already (dj, di)-lexicographic


def neighborhood(g: GridDomain, node: int, eps: float) -> Neighborhood:
    """Non-exterior nodes within Euclidean distance ``eps`` of ``node``."""
    _check_eps(g, eps)
    if g.cls[node] == NodeClass.EXTERIOR:
        raise GeometryError(f"node {node} is exterior")
    nx, ny = g.shape
    i, j = g.lattice_index(node)
    offs = _offsets(g, eps)
    ii, jj = i + offs[:, 0], j + offs[:, 1]
    ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
    ids = jj[ok] * nx + ii[ok]
    ids = ids[g.cls[ids] != NodeClass.EXTERIOR]
    return Neighborhood(int(node), tuple(int(v) for v in ids), float(eps))


@dataclass(frozen=True, eq=False)
class NeighborTable:
    """Padded neighbor lists for a set of center nodes.

    ``table[r]`` lists the members of the ball around ``centers[r]`` in
    ascending id order, padded on the right with the center itself (which
    is always a member, so padding never changes a max or min).
    ``counts[r]`` is the true member count.
    """

    centers: np.ndarray
    table: np.ndarray
    counts: np.ndarray
    epsilon: float


def neighbor_table(g: GridDomain, eps: float, centers=None) -> NeighborTable:
    _check_eps(g, eps)
    centers = g.active if centers is None else np.asarray(centers, dtype=np.int64)
    nx, ny = g.shape
    offs = _offsets(g, eps)
    ci, cj = centers % nx, centers // nx
    ii = ci[:, None] + offs[None, :, 0]
    jj = cj[:, None] + offs[None, :, 1]
    ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
    ids = np.where(ok, jj * nx + ii, 0)
    ok &= g.cls[ids] != NodeClass.EXTERIOR
    counts = ok.sum(axis=1)
    # stable sort moves valid entries to the front without reordering them
    order = np.argsort(~ok, axis=1, kind="stable")
    ids = np.take_along_axis(ids, order, axis=1)
    valid = np.take_along_axis(ok, order, axis=1)
    width = int(counts.max()) if counts.size else 0
    table = np.where(valid, ids, centers[:, None])[:, :width]
    return NeighborTable(centers, np.ascontiguousarray(table), counts, float(eps))


# --------------------------------------------------------------------------
# hypothesis on the Neumann boundary


@dataclass(frozen=True)
class HypothesisReport:
    mode: str
    holds: bool
    worst_pair: tuple  # (z, x_star) as coordinate tuples
    worst_inner_product: float
    direction: tuple | None = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "holds": self.holds,
            "worst_pair": {"z": list(self.worst_pair[0]), "x_star": list(self.worst_pair[1])},
            "worst_inner_product": self.worst_inner_product,
            "direction": None if self.direction is None else list(self.direction),
            "reason": self.reason,
        }


def check_domain_hypothesis(g: GridDomain, mode: str = "strict", tol: float = 1e-12) -> HypothesisReport:
    """Evaluate <(x* - z)/|x* - z|, n(x*)> over node pairs.

    Nodes in the boundary band are first projected onto the continuous
    boundary (x*) or the closed domain (z), so the test sees the shape
    rather than the lattice.
    """
    if mode not in ("strict", "flat-ok"):
        raise ValueError(f"mode must be 'strict' or 'flat-ok', got {mode!r}")
    neu = g.neumann
    if neu.size == 0:
        raise GeometryError("the grid has no neumann nodes")
    shape = g.spec.shape
    xs = shape.closest_boundary_point(g.points[neu])
    ns = g.normals[neu]
    zp = g.points[g.active]
    outside = shape.signed_distance(zp) > 0
    if outside.any():
        zp = zp.copy()
        zp[outside] = shape.closest_boundary_point(zp[outside])

    scale = float(np.max(np.abs(zp))) + 1.0
    worst = math.inf
    worst_pair = ((), ())
    equality = np.zeros(len(neu), dtype=bool)
    for start in range(0, len(zp), 1024):
        z = zp[start : start + 1024]
        d = xs[None, :, :] - z[:, None, :]
        r = np.linalg.norm(d, axis=-1)
        valid = r > 1e-12 * scale
        ip = np.where(valid, (d * ns[None]).sum(-1) / np.where(valid, r, 1.0), np.inf)
        equality |= (ip <= tol).any(axis=0)
        k = np.unravel_index(np.argmin(ip), ip.shape)
        if ip[k] < worst:
            worst = float(ip[k])
            worst_pair = (tuple(float(c) for c in z[k[0]]), tuple(float(c) for c in xs[k[1]]))

    if mode == "strict":
        return HypothesisReport(mode, worst > tol, worst_pair, worst)

    if worst < -tol:
        return HypothesisReport(mode, False, worst_pair, worst, reason="negative inner product")
    if not equality.any():
        return HypothesisReport(mode, True, worst_pair, worst)
    flat_normals = ns[equality]
    candidates = []
    mean = flat_normals.mean(axis=0)
    if np.linalg.norm(mean) > tol:
        candidates.append(mean / np.linalg.norm(mean))
    for k in range(g.dim):
        for s in (1.0, -1.0):
            e = np.zeros(g.dim)
            e[k] = s
            candidates.append(e)
    for p in candidates:
        if np.min(flat_normals @ p) > tol:
            return HypothesisReport(mode, True, worst_pair, worst, direction=tuple(float(c) for c in p))
    return HypothesisReport(
        mode, False, worst_pair, worst, reason="no direction p is positive on every flat-face normal"
    )
