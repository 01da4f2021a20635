from __future__ import annotations

import logging
import math
import multiprocessing
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from planadapt.distance import DistanceEstimator, connected
from planadapt.env import (
    MazeWorld,
    Point,
    ReactionModel,
    SamplingError,
    euclidean,
    react,
    sample_free,
    step,
)
from planadapt.logger import EPISODE_LOGGER, get_logger
from planadapt.plangraph import (
    PlanningGraph,
    build_graph,
    goal_distances,
    select_next,
    shortest_path,
)

logger = get_logger(__name__)
episode_logger = logging.getLogger(EPISODE_LOGGER)

MAX_TASK_DRAWS = 1000


class OutcomeTag(str, Enum):
    SUCCESS = "Success"
    CANNOT_REACH = "CannotReach"
    NO_PATH = "NoPath"


@dataclass(frozen=True)
class TaskSpec:
    start: Point
    goal: Point
    max_total_steps: int


@dataclass(frozen=True)
class Outcome:
    tag: OutcomeTag
    steps_taken: int = 0
    path_waypoints: int = 0
    search_ops: int = 0

    def task_time(self, lookup_cost: float = 0.0) -> float:
        """Environment steps plus the planning time of every waypoint look-up."""
        return self.steps_taken + lookup_cost * self.search_ops


@dataclass(frozen=True)
class RolloutStats:
    """Outcome frequencies of one evaluation batch.

    ``avg_task_time`` (steps plus weighted look-ups, see ``Outcome.task_time``)
    and ``avg_search_ops`` only count successful episodes and are None when
    there was none.
    """

    rate_success: float
    rate_cannot_reach: float
    rate_no_path: float
    avg_task_time: float | None
    episodes: int
    avg_search_ops: float | None = None

    def rate(self, tag: OutcomeTag) -> float:
        return {
            OutcomeTag.SUCCESS: self.rate_success,
            OutcomeTag.CANNOT_REACH: self.rate_cannot_reach,
            OutcomeTag.NO_PATH: self.rate_no_path,
        }[tag]


@dataclass(frozen=True)
class RolloutProtocol:
    """How many graphs and tasks one evaluation batch uses.

    ``lookup_cost`` is the time charged per waypoint look-up, in steps.
    """

    n_settings: int = 40
    tasks_per_setting: int = 5
    replan: bool = False
    max_total_steps: int | None = None
    workers: int = 1
    lookup_cost: float = 1e-3

    def __post_init__(self):
        if self.n_settings < 1:
            raise ValueError(f"n_settings must be >= 1, got {self.n_settings}")
        if self.tasks_per_setting < 1:
            raise ValueError(
                f"tasks_per_setting must be >= 1, got {self.tasks_per_setting}"
            )
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.lookup_cost < 0:
            raise ValueError(f"lookup_cost must be >= 0, got {self.lookup_cost}")

    @property
    def episodes(self) -> int:
        return self.n_settings * self.tasks_per_setting


def default_max_total_steps(world: MazeWorld) -> int:
    return math.ceil(50 * world.diagonal / world.max_step)


def aggregate(
    outcomes: Sequence[Outcome], lookup_cost: float = 0.0
) -> RolloutStats:
    if not outcomes:
        raise ValueError("cannot aggregate an empty batch")
    counts = {tag: 0 for tag in OutcomeTag}
    for outcome in outcomes:
        counts[outcome.tag] += 1
    total = len(outcomes)
    successes = [o for o in outcomes if o.tag is OutcomeTag.SUCCESS]
    return RolloutStats(
        rate_success=counts[OutcomeTag.SUCCESS] / total,
        rate_cannot_reach=counts[OutcomeTag.CANNOT_REACH] / total,
        rate_no_path=counts[OutcomeTag.NO_PATH] / total,
        avg_task_time=(
            float(np.mean([o.task_time(lookup_cost) for o in successes]))
            if successes
            else None
        ),
        episodes=total,
        avg_search_ops=(
            float(np.mean([o.search_ops for o in successes])) if successes else None
        ),
    )


def sample_task(
    world: MazeWorld,
    rng: np.random.Generator,
    max_total_steps: int | None = None,
    resolution: int = 4,
) -> TaskSpec:
    """Random start/goal pair that the environment itself connects.

    The start never already lies within the goal radius.
    """
    for _ in range(MAX_TASK_DRAWS):
        start = sample_free(world, rng)
        goal = sample_free(world, rng)
        if euclidean(start, goal) <= world.goal_radius:
            continue
        if connected(world, start, goal, resolution):
            return TaskSpec(
                start=start,
                goal=goal,
                max_total_steps=max_total_steps or default_max_total_steps(world),
            )
    raise SamplingError(f"no connected task found in {MAX_TASK_DRAWS} draws")


class _Episode:
    """Mutable bookkeeping of one agent run."""

    def __init__(
        self,
        world: MazeWorld,
        model: ReactionModel,
        est: DistanceEstimator,
        task: TaskSpec,
        e: float,
        rng: np.random.Generator,
    ):
        self.world = world
        self.model = model
        self.est = est
        self.task = task
        self.e = e
        self.rng = rng
        self.position = Point(*task.start)
        self.steps = 0

    def at(self, target: Point) -> bool:
        return euclidean(self.position, target) <= self.world.goal_radius

    def out_of_time(self) -> bool:
        return self.steps >= self.task.max_total_steps

    def budget_for(self, subgoal: Point) -> int:
        # estimates past twice the cutoff only matter as "long", cap them there
        limit = self.est.reach(2.0 * self.e)
        estimate = self.est.estimate_sym(
            self.world, self.position, subgoal, self.rng, limit=limit
        )
        return self.model.budget(min(estimate, 2.0 * self.e))

    def advance(self, subgoal: Point) -> None:
        action = react(self.model, self.world, self.position, subgoal, self.rng)
        self.position = step(self.world, self.position, action, self.rng)
        self.steps += 1


def _follow_path(ep: _Episode, path: list[Point]) -> OutcomeTag:
    goal = ep.task.goal
    for subgoal in path[1:]:
        budget = ep.budget_for(subgoal)
        used = 0
        while not ep.at(subgoal):
            if ep.at(goal):
                return OutcomeTag.SUCCESS
            if used >= budget or ep.out_of_time():
                return OutcomeTag.CANNOT_REACH
            ep.advance(subgoal)
            used += 1
    return OutcomeTag.SUCCESS if ep.at(goal) else OutcomeTag.CANNOT_REACH


def _follow_replanning(ep: _Episode, g: PlanningGraph) -> tuple[OutcomeTag, int]:
    """Re-select the subgoal every step, skipping waypoints already reached.

    A query that finds nothing keeps the current subgoal, whose budget keeps
    running; with no subgoal at all the episode cannot continue.
    """
    goal = ep.task.goal
    to_goal = goal_distances(g, ep.world, ep.est, goal, ep.e, ep.rng)
    ops = g.size * g.size
    visited = np.zeros(g.size, dtype=bool)
    current: int | None = -1
    subgoal: Point | None = None
    budget = used = 0
    while not ep.at(goal):
        candidate, index = select_next(
            g, ep.world, ep.est, ep.position, goal, ep.e, ep.rng, to_goal, visited
        )
        ops += g.size
        if candidate is not None and index != current:
            subgoal, current = candidate, index
            budget, used = ep.budget_for(subgoal), 0
        if subgoal is None:
            return OutcomeTag.CANNOT_REACH, ops
        if used >= budget or ep.out_of_time():
            return OutcomeTag.CANNOT_REACH, ops
        ep.advance(subgoal)
        used += 1
        if current is not None and current >= 0 and ep.at(subgoal):
            visited[current] = True
    return OutcomeTag.SUCCESS, ops


def run_task(
    world: MazeWorld,
    model: ReactionModel,
    est: DistanceEstimator,
    g: PlanningGraph,
    task: TaskSpec,
    e: float,
    rng: np.random.Generator,
    replan: bool = False,
) -> Outcome:
    """Plan on ``g`` and let the agent react along the waypoints."""
    ep = _Episode(world, model, est, task, e, rng)
    if ep.at(task.goal):
        return Outcome(tag=OutcomeTag.SUCCESS)
    plan = shortest_path(g, world, est, task.start, task.goal, e, rng)
    if not plan.found:
        return Outcome(tag=OutcomeTag.NO_PATH, search_ops=plan.search_ops)
    if replan:
        tag, ops = _follow_replanning(ep, g)
        ops += plan.search_ops
    else:
        tag, ops = _follow_path(ep, plan.path), plan.search_ops
    return Outcome(
        tag=tag,
        steps_taken=ep.steps,
        path_waypoints=plan.path_waypoints,
        search_ops=ops,
    )


def _setting_rng(base: int, setting: int) -> np.random.Generator:
    return np.random.default_rng([base, setting])


def _task_rng(base: int, setting: int, task: int) -> np.random.Generator:
    return np.random.default_rng([base, setting, task + 1])


def _evaluate_setting(args) -> list[Outcome]:
    world, model, est, w, e, protocol, base, setting = args
    graph = build_graph(world, est, w, e, _setting_rng(base, setting))
    outcomes = []
    for index in range(protocol.tasks_per_setting):
        rng = _task_rng(base, setting, index)
        task = sample_task(world, rng, protocol.max_total_steps, est.resolution)
        outcome = run_task(world, model, est, graph, task, e, rng, protocol.replan)
        episode_logger.debug(
            f"{setting},{index},{outcome.tag.value},{outcome.steps_taken},"
            f"{outcome.path_waypoints}"
        )
        outcomes.append(outcome)
    return outcomes


def evaluate(
    world: MazeWorld,
    model: ReactionModel,
    est: DistanceEstimator,
    w: float,
    e: float,
    protocol: RolloutProtocol,
    rng: np.random.Generator,
) -> RolloutStats:
    """Run ``tasks_per_setting`` fresh tasks on each of ``n_settings`` fresh graphs.

    Every setting and task derives its own stream from one draw of ``rng``, so
    the result does not depend on ``protocol.workers``.
    """
    base = int(rng.integers(2**63 - 1))
    jobs = [
        (world, model, est, w, e, protocol, base, setting)
        for setting in range(protocol.n_settings)
    ]
    if protocol.workers > 1:
        with multiprocessing.Pool(protocol.workers) as pool:
            batches = pool.map(_evaluate_setting, jobs)
    else:
        batches = [_evaluate_setting(job) for job in jobs]
    stats = aggregate(
        [o for batch in batches for o in batch], protocol.lookup_cost
    )
    logger.debug(
        f"evaluate(w={w:.3f}, e={e:.3f}) returned with success "
        f"{stats.rate_success:.3f}, cannot reach {stats.rate_cannot_reach:.3f}, "
        f"no path {stats.rate_no_path:.3f}"
    )
    return stats
