from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.sparse import csgraph

from planadapt.distance import DistanceEstimator
from planadapt.env import MazeWorld, Point, sample_free
from planadapt.logger import get_logger

logger = get_logger(__name__)


class PlanStatus(str, Enum):
    FOUND = "Found"
    NO_PATH = "NoPath"


@dataclass(frozen=True, eq=False)
class PlanningGraph:
    """Waypoints, their cutoff-``e`` edges and the all-pairs path cache.

    ``lengths[i, j]`` is the symmetrised edge estimate, +inf where there is no
    edge. ``cache[i, j]`` is the shortest graph-path length and
    ``predecessors`` the matching predecessor matrix (-9999 for none).
    """

    waypoints: np.ndarray
    max_edge_length: float
    lengths: np.ndarray
    cache: np.ndarray
    predecessors: np.ndarray

    @property
    def size(self) -> int:
        return len(self.waypoints)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        i, j = np.nonzero(np.triu(np.isfinite(self.lengths), k=1))
        return [(int(a), int(b), float(self.lengths[a, b])) for a, b in zip(i, j)]

    def waypoint(self, index: int) -> Point:
        return Point(float(self.waypoints[index, 0]), float(self.waypoints[index, 1]))

    def graph_path(self, u: int, v: int) -> list[int]:
        """Waypoint indices of the cached shortest path u -> v (inclusive)."""
        path = [v]
        while path[-1] != u:
            prev = int(self.predecessors[u, path[-1]])
            if prev < 0:
                return []
            path.append(prev)
        return path[::-1]


@dataclass
class PlanResult:
    status: PlanStatus
    path: list[Point] = field(default_factory=list)
    planned_length: float = math.inf
    search_ops: int = 0

    @property
    def found(self) -> bool:
        return self.status is PlanStatus.FOUND

    @property
    def path_waypoints(self) -> int:
        """Intermediate waypoints on the path, endpoints excluded."""
        return max(0, len(self.path) - 2)


def round_waypoint_count(w: float) -> int:
    """Nearest integer (halves round up), never below 1."""
    return max(1, math.floor(w + 0.5))


def graph_from_waypoints(
    world: MazeWorld,
    est: DistanceEstimator,
    waypoints: Sequence[Point] | np.ndarray,
    e: float,
    rng: np.random.Generator | None = None,
) -> PlanningGraph:
    if e <= 0:
        raise ValueError(f"max edge length must be > 0, got {e}")
    points = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        empty = np.zeros((0, 0))
        return PlanningGraph(
            waypoints=points,
            max_edge_length=e,
            lengths=empty,
            cache=empty,
            predecessors=empty.astype(np.int32),
        )
    sym = est.symmetric(world, points, points, rng, limit=est.reach(e))
    lengths = np.where(sym < e, sym, np.inf)
    np.fill_diagonal(lengths, np.inf)
    adjacency = csgraph.csgraph_from_dense(lengths, null_value=np.inf)
    cache, predecessors = csgraph.shortest_path(
        adjacency, method="D", directed=False, return_predecessors=True
    )
    np.fill_diagonal(lengths, 0.0)
    graph = PlanningGraph(
        waypoints=points,
        max_edge_length=e,
        lengths=lengths,
        cache=cache,
        predecessors=predecessors,
    )
    logger.debug(
        f"Planning graph: {graph.size} waypoints, {len(graph.edges)} edges, e={e}"
    )
    return graph


def build_graph(
    world: MazeWorld,
    est: DistanceEstimator,
    w: float,
    e: float,
    rng: np.random.Generator,
) -> PlanningGraph:
    """Sample round(w) waypoints and connect every pair estimated below ``e``."""
    if w < 1:
        raise ValueError(f"waypoint count must be >= 1, got {w}")
    count = round_waypoint_count(w)
    waypoints = [sample_free(world, rng) for _ in range(count)]
    return graph_from_waypoints(world, est, waypoints, e, rng)


def _attach(
    g: PlanningGraph,
    world: MazeWorld,
    est: DistanceEstimator,
    p: Point,
    e: float,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """Edge lengths from a temporary node to every waypoint, +inf if >= e."""
    sym = est.symmetric(world, [p], g.waypoints, rng, limit=est.reach(e))[0]
    return np.where(sym < e, sym, np.inf)


def _direct(
    world: MazeWorld,
    est: DistanceEstimator,
    a: Point,
    b: Point,
    e: float,
    rng: np.random.Generator | None,
) -> float:
    value = est.estimate_sym(world, a, b, rng, limit=est.reach(e))
    return value if value < e else math.inf


def shortest_path(
    g: PlanningGraph,
    world: MazeWorld,
    est: DistanceEstimator,
    start: Point,
    goal: Point,
    e: float,
    rng: np.random.Generator | None = None,
) -> PlanResult:
    """Dijkstra over the graph augmented with temporary start and goal nodes.

    The cached all-pairs distances reduce the augmented search to choosing the
    entry and exit waypoints. A direct start-goal edge wins ties; remaining
    ties go to the smaller waypoint index.
    """
    start, goal = Point(*start), Point(*goal)
    to_start = _attach(g, world, est, start, e, rng)
    to_goal = _attach(g, world, est, goal, e, rng)
    direct = _direct(world, est, start, goal, e, rng)
    ops = 2 * g.size + g.size * g.size

    via, entry, exit_ = math.inf, None, 0
    if g.size:
        # best[v] = min_u to_start[u] + cache[u, v]
        entry_costs = to_start[:, None] + g.cache
        entry = np.argmin(entry_costs, axis=0)
        best = entry_costs[entry, np.arange(g.size)]
        totals = best + to_goal
        exit_ = int(np.argmin(totals))
        via = float(totals[exit_])

    if not math.isfinite(direct) and not math.isfinite(via):
        return PlanResult(status=PlanStatus.NO_PATH, search_ops=ops)
    if direct <= via:
        return PlanResult(
            status=PlanStatus.FOUND,
            path=[start, goal],
            planned_length=direct,
            search_ops=ops,
        )
    hops = g.graph_path(int(entry[exit_]), exit_)
    path = [start] + [g.waypoint(i) for i in hops] + [goal]
    planned = to_start[hops[0]] + to_goal[hops[-1]]
    planned += sum(g.lengths[a, b] for a, b in zip(hops[:-1], hops[1:]))
    return PlanResult(
        status=PlanStatus.FOUND,
        path=path,
        planned_length=float(planned),
        search_ops=ops,
    )


def goal_distances(
    g: PlanningGraph,
    world: MazeWorld,
    est: DistanceEstimator,
    goal: Point,
    e: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Cost from every waypoint to ``goal`` through the graph.

    Computed once per task; each next-waypoint query is then a single scan.
    """
    if g.size == 0:
        return np.zeros(0)
    to_goal = _attach(g, world, est, Point(*goal), e, rng)
    return np.min(g.cache + to_goal[None, :], axis=1)


def select_next(
    g: PlanningGraph,
    world: MazeWorld,
    est: DistanceEstimator,
    s: Point,
    goal: Point,
    e: float,
    rng: np.random.Generator | None = None,
    to_goal: np.ndarray | None = None,
    exclude: np.ndarray | None = None,
) -> tuple[Point | None, int | None]:
    """Next subgoal from state ``s``: the goal itself when within reach,
    otherwise the waypoint minimising est_sym(s, u) + cost(u, goal).

    Returns the subgoal and its waypoint index (None for the goal itself);
    (None, None) when no waypoint qualifies. One O(w) scan per query once
    ``to_goal`` is known.
    """
    if math.isfinite(_direct(world, est, Point(*s), Point(*goal), e, rng)):
        return Point(*goal), None
    if g.size == 0:
        return None, None
    if to_goal is None:
        to_goal = goal_distances(g, world, est, goal, e, rng)
    candidates = _attach(g, world, est, Point(*s), e, rng) + to_goal
    if exclude is not None:
        candidates = np.where(exclude, np.inf, candidates)
    index = int(np.argmin(candidates))
    if not math.isfinite(candidates[index]):
        return None, None
    return g.waypoint(index), index


def next_waypoint(
    g: PlanningGraph,
    world: MazeWorld,
    est: DistanceEstimator,
    s: Point,
    goal: Point,
    e: float,
    rng: np.random.Generator | None = None,
    to_goal: np.ndarray | None = None,
) -> Point | None:
    subgoal, _ = select_next(g, world, est, s, goal, e, rng, to_goal)
    return subgoal


def dump_graph(g: PlanningGraph, directory: Path) -> tuple[Path, Path]:
    """Write waypoints.csv and edges.csv for plotting and debugging."""
    directory.mkdir(parents=True, exist_ok=True)
    waypoints_path = directory / "waypoints.csv"
    edges_path = directory / "edges.csv"
    pd.DataFrame(
        {
            "index": np.arange(g.size),
            "x": g.waypoints[:, 0],
            "y": g.waypoints[:, 1],
        }
    ).to_csv(waypoints_path, index=False)
    pd.DataFrame(g.edges, columns=["i", "j", "length"]).to_csv(
        edges_path, index=False
    )
    return waypoints_path, edges_path
