from __future__ import annotations

import numpy as np
import pytest

from planadapt.distance import DistanceEstimator, EstimatorKind, connected
from planadapt.env import Point, ReactionModel, euclidean, segment_blocked
from planadapt.plangraph import build_graph, graph_from_waypoints, shortest_path
from planadapt.rollout import (
    Outcome,
    OutcomeTag,
    RolloutProtocol,
    TaskSpec,
    aggregate,
    default_max_total_steps,
    evaluate,
    run_task,
    sample_task,
)

ORACLE = DistanceEstimator()
PIERCING = DistanceEstimator(kind=EstimatorKind.WALL_PIERCING, pierce_fraction=1.0)


def test_start_inside_goal_radius_is_immediate_success(default_world, rng) -> None:
    g = graph_from_waypoints(default_world, ORACLE, [Point(20.5, 20.5)], 5.0)
    task = TaskSpec(Point(3.0, 3.0), Point(3.5, 3.5), 100)
    outcome = run_task(default_world, ReactionModel(), ORACLE, g, task, 5.0, rng)
    assert outcome.tag is OutcomeTag.SUCCESS
    assert outcome.steps_taken == 0


def test_zero_waypoints_and_far_goal_is_no_path(default_world, rng) -> None:
    g = graph_from_waypoints(default_world, ORACLE, [], 3.0)
    task = TaskSpec(Point(1.5, 12.5), Point(12.5, 12.5), 100)
    outcome = run_task(default_world, ReactionModel(), ORACLE, g, task, 3.0, rng)
    assert outcome.tag is OutcomeTag.NO_PATH
    assert outcome.steps_taken == 0


def test_straight_corridor_succeeds(default_world) -> None:
    rng = np.random.default_rng(5)
    waypoints = [Point(x, 12.5) for x in (4.5, 7.5, 10.5)]
    g = graph_from_waypoints(default_world, ORACLE, waypoints, 3.5)
    task = TaskSpec(Point(1.5, 12.5), Point(13.5, 12.5), 200)
    outcome = run_task(default_world, ReactionModel(), ORACLE, g, task, 3.5, rng)
    assert outcome.tag is OutcomeTag.SUCCESS
    assert outcome.path_waypoints == 3
    assert outcome.steps_taken >= 6


def test_through_wall_edge_cannot_be_reached(two_rooms) -> None:
    a, b = Point(4.5, 1.5), Point(6.5, 1.5)
    e = 4.0
    g = graph_from_waypoints(two_rooms, PIERCING, [a, b], e)
    assert g.edges and g.edges[0][:2] == (0, 1)
    assert segment_blocked(two_rooms, a, b)

    start, goal = Point(2.0, 1.5), Point(9.0, 1.5)
    plan = shortest_path(g, two_rooms, PIERCING, start, goal, e)
    assert plan.found and plan.path_waypoints == 2

    model = ReactionModel(budget_factor=2.0, budget_floor=5)
    outcome = run_task(
        two_rooms, model, PIERCING, g, TaskSpec(start, goal, 500), e,
        np.random.default_rng(9),
    )
    assert outcome.tag is OutcomeTag.CANNOT_REACH


def test_replanning_mode_runs_the_corridor(default_world) -> None:
    waypoints = [Point(x, 12.5) for x in (4.5, 7.5, 10.5)]
    g = graph_from_waypoints(default_world, ORACLE, waypoints, 3.5)
    task = TaskSpec(Point(1.5, 12.5), Point(13.5, 12.5), 200)
    outcome = run_task(
        default_world, ReactionModel(), ORACLE, g, task, 3.5,
        np.random.default_rng(5), replan=True,
    )
    assert outcome.tag is OutcomeTag.SUCCESS
    # each step scans every waypoint once on top of the initial plan
    assert outcome.search_ops >= outcome.steps_taken * g.size


def test_sample_task_returns_connected_free_points(default_world, rng) -> None:
    for _ in range(20):
        task = sample_task(default_world, rng)
        assert euclidean(task.start, task.goal) > default_world.goal_radius
        assert connected(default_world, task.start, task.goal)
        assert task.max_total_steps == default_max_total_steps(default_world)


def test_aggregate_counts_then_divides() -> None:
    outcomes = (
        [Outcome(OutcomeTag.SUCCESS, steps_taken=10, search_ops=4)] * 3
        + [Outcome(OutcomeTag.CANNOT_REACH, steps_taken=99)] * 2
        + [Outcome(OutcomeTag.NO_PATH)] * 2
    )
    stats = aggregate(outcomes)
    assert stats.episodes == 7
    assert stats.rate_success == 3 / 7
    assert stats.rate_cannot_reach == 2 / 7
    assert stats.rate_no_path == 2 / 7
    assert stats.avg_task_time == 10.0
    assert stats.avg_search_ops == 4.0


def test_aggregate_without_successes_has_no_task_time() -> None:
    stats = aggregate([Outcome(OutcomeTag.NO_PATH)])
    assert stats.avg_task_time is None
    assert stats.rate(OutcomeTag.NO_PATH) == 1.0
    with pytest.raises(ValueError):
        aggregate([])


def test_protocol_episode_count() -> None:
    assert RolloutProtocol(n_settings=40, tasks_per_setting=5).episodes == 200
    with pytest.raises(ValueError):
        RolloutProtocol(n_settings=0)


def test_tiny_edges_give_no_path(default_world) -> None:
    protocol = RolloutProtocol(n_settings=5, tasks_per_setting=4)
    stats = evaluate(
        default_world, ReactionModel(), ORACLE, 1, 0.1, protocol,
        np.random.default_rng(2),
    )
    assert stats.rate_no_path == 1.0
    assert stats.episodes == 20


def test_generous_agent_never_fails_to_reach(open_room) -> None:
    protocol = RolloutProtocol(n_settings=10, tasks_per_setting=5)
    model = ReactionModel(budget_factor=10.0)
    stats = evaluate(
        open_room, model, ORACLE, 4, 2.0, protocol, np.random.default_rng(3)
    )
    assert stats.rate_cannot_reach == 0.0
    total = stats.rate_success + stats.rate_cannot_reach + stats.rate_no_path
    assert total == pytest.approx(1.0)


def test_evaluate_is_deterministic_and_worker_independent(two_rooms) -> None:
    protocol = RolloutProtocol(n_settings=4, tasks_per_setting=3)
    parallel = RolloutProtocol(n_settings=4, tasks_per_setting=3, workers=2)
    args = (two_rooms, ReactionModel(), ORACLE, 12, 4.0)
    first = evaluate(*args, protocol, np.random.default_rng(11))
    second = evaluate(*args, protocol, np.random.default_rng(11))
    fanned_out = evaluate(*args, parallel, np.random.default_rng(11))
    assert first == second == fanned_out


@pytest.mark.parametrize("replan", [False, True])
def test_steps_never_exceed_the_task_limit(default_world, replan) -> None:
    rng = np.random.default_rng(13)
    model = ReactionModel(step_scale=0.5, budget_factor=10.0)
    capped = 0
    for _ in range(30):
        g = build_graph(default_world, ORACLE, 60, 5.0, rng)
        task = sample_task(default_world, rng, max_total_steps=15)
        outcome = run_task(default_world, model, ORACLE, g, task, 5.0, rng, replan)
        assert outcome.steps_taken <= 15
        capped += outcome.steps_taken == 15
    assert capped > 0


def test_generous_agent_reaches_every_subgoal_between_walls(configured_world) -> None:
    protocol = RolloutProtocol(n_settings=10, tasks_per_setting=5)
    model = ReactionModel(budget_factor=10.0)
    stats = evaluate(
        configured_world, model, ORACLE, 300, 2.0, protocol, np.random.default_rng(3)
    )
    assert stats.rate_cannot_reach == 0.0
    assert stats.rate_success > 0.0


def test_task_time_charges_lookups() -> None:
    outcome = Outcome(OutcomeTag.SUCCESS, steps_taken=10, search_ops=2000)
    assert outcome.task_time() == 10
    assert outcome.task_time(1e-3) == pytest.approx(12.0)
    stats = aggregate([outcome, Outcome(OutcomeTag.NO_PATH, search_ops=9999)], 1e-3)
    assert stats.avg_task_time == pytest.approx(12.0)
    with pytest.raises(ValueError):
        RolloutProtocol(lookup_cost=-1.0)
