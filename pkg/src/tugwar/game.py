"""Direct simulation of the epsilon tug-of-war game.

A fair coin decides who moves; the winner moves the token anywhere in the
clipped epsilon-ball. The game stops on a dirichlet node and pays F there.
Strategies are Markov: the move depends on the current node only.

Randomness comes from Philox (a counter-based generator) keyed by
``(seed + episode_index, start_node)``; step k consumes the k-th pair of
doubles of that stream (toss, then uniform move choice), so results do not
depend on how episodes are scheduled.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import expr as ex
from .dpp import ValueField
from .geometry import GridDomain, NodeClass, neighbor_table, neighborhood

__all__ = [
    "Strategy",
    "Episode",
    "ValueEstimate",
    "IllegalState",
    "AllTruncated",
    "step",
    "simulate",
    "estimate_value",
    "episode_rng",
    "steps_to_dirichlet",
]

KINDS = ("greedy-max", "greedy-min", "fixed-direction", "uniform-random")
_MASK64 = (1 << 64) - 1
_BLOCK = 64


class IllegalState(ValueError):
    pass


class AllTruncated(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Strategy:
    kind: str
    field: ValueField | None = None
    direction: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"strategy kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind.startswith("greedy") and self.field is None:
            raise ValueError(f"{self.kind} needs a reference field")
        if self.kind == "fixed-direction":
            v = np.asarray(self.direction, dtype=float)
            if v.ndim != 1 or not math.isclose(float(np.linalg.norm(v)), 1.0, abs_tol=1e-9):
                raise ValueError(f"fixed-direction needs a unit vector, got {self.direction}")

    @classmethod
    def greedy_max(cls, field: ValueField) -> "Strategy":
        return cls("greedy-max", field=field)

    @classmethod
    def greedy_min(cls, field: ValueField) -> "Strategy":
        return cls("greedy-min", field=field)

    @classmethod
    def fixed(cls, direction) -> "Strategy":
        return cls("fixed-direction", direction=tuple(float(c) for c in direction))

    @classmethod
    def uniform(cls) -> "Strategy":
        return cls("uniform-random")

    @property
    def deterministic(self) -> bool:
        return self.kind != "uniform-random"

    def choose(self, g: GridDomain, x: int, members: np.ndarray, draw: float, hops=None) -> int:
        """Pick a member of the ball around ``x``; ``members`` ascend by id.

        Greedy ties go to the member fewest epsilon-steps from the
        dirichlet boundary (``hops``), then to the lowest id. Without the
        first rule a flat field lets both players stall forever.
        """
        if self.kind == "uniform-random":
            return int(members[min(int(draw * len(members)), len(members) - 1)])
        if self.kind == "fixed-direction":
            score = (g.points[members] - g.points[x]) @ np.asarray(self.direction, dtype=float)
            return int(members[np.argmax(score)])
        vals = self.field.values[members]
        best = vals.max() if self.kind == "greedy-max" else vals.min()
        tied = members[vals == best]
        if hops is not None and tied.size > 1:
            h = hops[tied]
            tied = tied[h == h.min()]
        return int(tied[0])


@dataclass(frozen=True)
class Episode:
    start: int
    states: tuple
    tosses: tuple
    status: str  # 'absorbed' | 'truncated'
    payoff: float | None
    steps: int

    def to_csv(self, g: GridDomain, field: ValueField | None = None, dest=None) -> str:
        """``step,toss,x,y,value``; the toss column is empty for the start row."""
        buf = io.StringIO()
        buf.write("step,toss,x,y,value\n")
        for k, node in enumerate(self.states):
            p = g.points[node]
            y = p[1] if g.dim == 2 else 0.0
            toss = "" if k == 0 else str(self.tosses[k - 1])
            v = "" if field is None else f"{field.values[node]:.17g}"
            buf.write(f"{k},{toss},{p[0]:.17g},{y:.17g},{v}\n")
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text, encoding="utf-8")
        return text


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    n_episodes: int
    truncated_fraction: float
    step_cap: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n": self.n_episodes,
            "truncated_fraction": self.truncated_fraction,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def episode_rng(seed: int, start: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, start & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def steps_to_dirichlet(g: GridDomain, eps: float) -> np.ndarray:
    """Fewest epsilon-moves from each node to a dirichlet node (inf if unreachable)."""
    t = neighbor_table(g, eps)
    dist = np.full(g.n_nodes, np.inf)
    dist[g.dirichlet] = 0
    k = 0
    while True:
        near = (dist[t.table] == k).any(axis=1) & np.isinf(dist[t.centers])
        if not near.any():
            return dist
        k += 1
        dist[t.centers[near]] = k


class _Mover:
    """Move lookup for one strategy on one grid/epsilon pair."""

    def __init__(self, g: GridDomain, strategy: Strategy, eps: float, table, hops):
        self.g = g
        self.strategy = strategy
        self.table = table
        self.row = {int(c): r for r, c in enumerate(table.centers)}
        self.moves = None
        if strategy.deterministic:
            self.moves = {
                int(c): strategy.choose(g, int(c), table.table[r, : table.counts[r]], 0.0, hops)
                for r, c in enumerate(table.centers)
            }

    def __call__(self, x: int, draw: float) -> int:
        if self.moves is not None:
            return self.moves[x]
        r = self.row[x]
        return self.strategy.choose(self.g, x, self.table.table[r, : self.table.counts[r]], draw)


def _check_state(g: GridDomain, x: int) -> None:
    c = g.cls[x]
    if c == NodeClass.DIRICHLET or c == NodeClass.EXTERIOR:
        raise IllegalState(f"node {x} is {NodeClass(int(c)).label}; no move is defined there")


def step(
    g: GridDomain,
    x: int,
    mover: str,
    s_I: Strategy,
    s_II: Strategy,
    eps: float,
    rng: np.random.Generator | None = None,
) -> int:
    """The move made from ``x`` by the player who won the toss."""
    _check_state(g, x)
    if mover not in ("I", "II"):
        raise ValueError(f"mover must be 'I' or 'II', got {mover!r}")
    s = s_I if mover == "I" else s_II
    members = np.array(neighborhood(g, x, eps).members)
    draw = 0.0
    if not s.deterministic:
        if rng is None:
            raise ValueError("uniform-random strategy needs an rng")
        draw = float(rng.random())
    hops = steps_to_dirichlet(g, eps) if s.kind.startswith("greedy") else None
    return s.choose(g, x, members, draw, hops)


def _play(g, dirichlet_mask, x0, move_I, move_II, eps, step_cap, seed, record):
    """Run one episode. Returns (final node, steps, absorbed, states, tosses)."""
    rng = episode_rng(seed, x0)
    x = x0
    steps = 0
    states = [x0] if record else None
    tosses = [] if record else None
    pts = g.points
    while not dirichlet_mask[x] and steps < step_cap:
        k = steps % _BLOCK
        if k == 0:
            block = rng.random((_BLOCK, 2))
        toss = 1 if block[k, 0] < 0.5 else 0
        nxt = move_I(x, block[k, 1]) if toss else move_II(x, block[k, 1])
        if record:
            if np.linalg.norm(pts[nxt] - pts[x]) > eps * (1 + 1e-9):
                raise AssertionError(f"illegal move {x} -> {nxt}")
            states.append(nxt)
            tosses.append(toss)
        x = nxt
        steps += 1
    return x, steps, bool(dirichlet_mask[x]), states, tosses


def _movers(g, s_I, s_II, eps):
    table = neighbor_table(g, eps, centers=g.free)
    hops = steps_to_dirichlet(g, eps)
    return _Mover(g, s_I, eps, table, hops), _Mover(g, s_II, eps, table, hops)


def simulate(
    g: GridDomain,
    F: ex.Expr,
    x0: int,
    s_I: Strategy,
    s_II: Strategy,
    eps: float,
    step_cap: int,
    seed: int,
) -> Episode:
    if g.cls[x0] == NodeClass.EXTERIOR:
        raise IllegalState(f"start node {x0} is exterior")
    mI, mII = _movers(g, s_I, s_II, eps)
    mask = g.cls == NodeClass.DIRICHLET
    x, steps, absorbed, states, tosses = _play(g, mask, int(x0), mI, mII, eps, step_cap, int(seed), True)
    payoff = ex.evaluate(F, g.points[x]) if absorbed else None
    return Episode(int(x0), tuple(states), tuple(tosses), "absorbed" if absorbed else "truncated", payoff, steps)


def estimate_value(
    g: GridDomain,
    F: ex.Expr,
    x0: int,
    s_I: Strategy,
    s_II: Strategy,
    eps: float,
    step_cap: int = 10_000_000,
    n_episodes: int = 10_000,
    seed: int = 0,
) -> ValueEstimate:
    """Monte Carlo mean payoff; episode i uses seed ``seed + i``.

    Truncated episodes are left out of the mean and reported through
    ``truncated_fraction``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if g.cls[x0] == NodeClass.EXTERIOR:
        raise IllegalState(f"start node {x0} is exterior")
    mask = g.cls == NodeClass.DIRICHLET
    payoff_at = np.full(g.n_nodes, np.nan)
    payoff_at[g.dirichlet] = ex.evaluate_many(F, g.points[g.dirichlet])

    if mask[x0]:
        return ValueEstimate(float(payoff_at[x0]), 0.0, n_episodes, 0.0, step_cap, seed)
    mI, mII = _movers(g, s_I, s_II, eps)
    payoffs = np.empty(n_episodes)
    kept = 0
    truncated = 0
    for i in range(n_episodes):
        x, _, absorbed, _, _ = _play(g, mask, int(x0), mI, mII, eps, step_cap, (seed + i) & _MASK64, False)
        if absorbed:
            payoffs[kept] = payoff_at[x]
            kept += 1
        else:
            truncated += 1
    payoffs = payoffs[:kept]
    if payoffs.size == 0:
        raise AllTruncated(f"all {n_episodes} episodes hit the step cap {step_cap}")
    n = payoffs.size
    std = float(payoffs.std(ddof=1)) if n > 1 else 0.0
    return ValueEstimate(
        mean=float(payoffs.mean()),
        std_error=std / math.sqrt(n),
        n_episodes=n_episodes,
        truncated_fraction=truncated / n_episodes,
        step_cap=step_cap,
        seed=seed,
    )
