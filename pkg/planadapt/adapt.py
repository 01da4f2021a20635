from __future__ import annotations

from collections.abc import Callable
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd

from planadapt.distance import DistanceEstimator
from planadapt.env import MazeWorld, ReactionModel
from planadapt.logger import get_logger
from planadapt.rollout import RolloutProtocol, RolloutStats, evaluate

logger = get_logger(__name__)

TRACE_COLUMNS = [
    "iteration",
    "w",
    "e",
    "rate_success",
    "rate_cannot_reach",
    "rate_no_path",
    "avg_task_time",
    "action",
    "d_w",
    "k_w",
    "n_w",
    "d_e",
    "w_eval",
    "e_eval",
    "avg_search_ops",
]


class Variant(str, Enum):
    ALG2 = "alg2"
    ALG3 = "alg3"


class Action(str, Enum):
    DECREASE_E = "DecreaseE"
    INCREASE_BOTH = "IncreaseBoth"
    DECREASE_W = "DecreaseW"


@dataclass(frozen=True)
class PatternSearchState:
    """Search status of one planning parameter.

    ``i`` is the base increment, ``d`` the decrement, ``k`` the current
    increment multiplier and ``n`` the exponential phases left. ``c`` counts
    down the exponential search interval of the ALG3 variant.
    """

    value: float
    i: float = 3.0
    d: float = 1.0
    k: float = 1.0
    n: int = 3
    rho: float = 2.0
    gamma: float = 0.9
    tth: float = 0.1
    count_reset: int = 4
    c: int = 0
    variant: Variant = Variant.ALG2
    floor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.i <= 0:
            raise ValueError(f"increment i must be > 0, got {self.i}")
        if self.d <= 0:
            raise ValueError(f"decrement d must be > 0, got {self.d}")
        if self.k < 1:
            raise ValueError(f"multiplier k must be >= 1, got {self.k}")
        if self.n < 0:
            raise ValueError(f"phases n must be >= 0, got {self.n}")
        if self.rho < 1:
            raise ValueError(f"growth factor rho must be >= 1, got {self.rho}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"reduction factor gamma must be in (0, 1), got {self.gamma}")
        if self.tth <= 0:
            raise ValueError(f"termination threshold tth must be > 0, got {self.tth}")
        if self.count_reset < 1:
            raise ValueError(f"count must be >= 1, got {self.count_reset}")
        if not 0 <= self.c <= self.count_reset:
            raise ValueError(f"countdown c must be in [0, count], got {self.c}")


def terminated(st: PatternSearchState) -> bool:
    return st.d < st.tth


def _clamped(st: PatternSearchState) -> PatternSearchState:
    return replace(st, value=max(st.value, st.floor))


def ps_increase(st: PatternSearchState) -> PatternSearchState:
    """The parameter should grow; an ended search is left untouched."""
    if terminated(st):
        return st
    if st.variant is Variant.ALG2:
        value = st.value + st.k * st.i
        k, d = st.k, st.d
        if st.n > 0:
            k = st.k * st.rho
        else:
            d = st.d * st.gamma
        return _clamped(replace(st, value=value, k=k, d=d))

    k = st.k * st.rho if st.c > 0 else 1.0
    d = st.d * st.gamma if st.n == 0 else st.d
    return _clamped(
        replace(st, value=st.value + k * st.i, k=k, d=d, c=st.count_reset)
    )


def ps_decrease(st: PatternSearchState) -> PatternSearchState:
    """The parameter should shrink; an ended search is left untouched."""
    if terminated(st):
        return st
    if st.variant is Variant.ALG2:
        if st.n > 1:
            updated = replace(
                st, n=st.n - 1, value=st.value - st.k / st.rho * st.i, k=1.0
            )
        elif st.n == 1:
            updated = replace(st, n=0, value=st.value - st.d, k=1.0)
        else:
            updated = replace(st, value=st.value - st.d)
        return _clamped(updated)

    if st.n > 0 and st.c == 1:
        updated = replace(st, n=st.n - 1, value=st.value - st.k * st.i)
    else:
        updated = replace(st, value=st.value - st.d)
    if updated.c > 0:
        updated = replace(updated, c=updated.c - 1)
    return _clamped(updated)


def predict_sr(i: float, cth: float, tth: float) -> float:
    """Success rate expected once w fluctuates around its converged value."""
    if i <= 0 or tth <= 0:
        raise ValueError("i and tth must be > 0")
    if not 0 < cth < 1:
        raise ValueError(f"cth must be in (0, 1), got {cth}")
    return 1.0 - (i * cth / 2.0 + tth * cth) / (i + tth)


def predict_sr_simplified(cth: float) -> float:
    """Limit of ``predict_sr`` when i dominates tth."""
    return 1.0 - cth / 2.0


@dataclass
class AdaptConfig:
    cth: float = 0.05
    w_state: PatternSearchState = field(
        default_factory=lambda: PatternSearchState(value=1.0)
    )
    e_state: PatternSearchState = field(
        default_factory=lambda: PatternSearchState(value=1.0, i=1.0, d=0.25)
    )
    max_iterations: int = 200

    def __post_init__(self):
        if not 0 < self.cth < 1:
            raise ValueError(f"cth must be in (0, 1), got {self.cth}")
        if self.max_iterations < 1:
            raise ValueError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )


def choose_action(stats: RolloutStats, cth: float) -> Action:
    if stats.rate_cannot_reach > cth:
        return Action.DECREASE_E
    elif stats.rate_no_path > cth:
        return Action.INCREASE_BOTH
    return Action.DECREASE_W


def update_once(stats: RolloutStats, cfg: AdaptConfig) -> Action:
    """Apply one outcome-driven update to the search states held in ``cfg``.

    Too many unreachable subgoals mean the edges overestimate what the agent
    can react through, so ``e`` shrinks. Missing paths mean the graph is too
    sparse, so both parameters grow. Otherwise fewer waypoints are tried.
    """
    action = choose_action(stats, cfg.cth)
    if action is Action.DECREASE_E:
        cfg.e_state = ps_decrease(cfg.e_state)
    elif action is Action.INCREASE_BOTH:
        cfg.w_state = ps_increase(cfg.w_state)
        cfg.e_state = ps_increase(cfg.e_state)
    else:
        cfg.w_state = ps_decrease(cfg.w_state)
    return action


def scripted_stats(token: str) -> RolloutStats:
    """Rollout statistics where every episode had the outcome named by ``token``."""
    rates = {
        "S": (1.0, 0.0, 0.0),
        "CR": (0.0, 1.0, 0.0),
        "NP": (0.0, 0.0, 1.0),
    }
    if token not in rates:
        raise ValueError(f"unknown outcome token {token!r}, expected S, CR or NP")
    success, cannot_reach, no_path = rates[token]
    return RolloutStats(
        rate_success=success,
        rate_cannot_reach=cannot_reach,
        rate_no_path=no_path,
        avg_task_time=None,
        episodes=1,
    )


@dataclass
class TraceRecord:
    iteration: int
    w: float
    e: float
    rate_success: float
    rate_cannot_reach: float
    rate_no_path: float
    avg_task_time: float | None
    action: str
    d_w: float
    k_w: float
    n_w: int
    d_e: float
    w_eval: float
    e_eval: float
    avg_search_ops: float | None


@dataclass
class AdaptTrace:
    records: list[TraceRecord] = field(default_factory=list)
    w_terminated: bool = False
    e_terminated: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [asdict(r) for r in self.records], columns=TRACE_COLUMNS
        )

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def run_adaptation(
    world: MazeWorld | None,
    model: ReactionModel | None,
    est: DistanceEstimator | None,
    cfg: AdaptConfig,
    protocol: RolloutProtocol | None,
    rng: np.random.Generator | None,
    evaluator: Callable[[float, float], RolloutStats] | None = None,
) -> AdaptTrace:
    """Evaluate, update, repeat until the w search ends or iterations run out.

    ``evaluator`` replaces the simulated rollout (scripted outcome streams);
    without it every argument must be given.
    """
    if evaluator is None:
        if None in (world, model, est, protocol, rng):
            raise ValueError("simulated adaptation needs world, model, est, protocol and rng")

        def evaluator(w: float, e: float) -> RolloutStats:
            return evaluate(world, model, est, w, e, protocol, rng)

    trace = AdaptTrace()
    logger.info(
        f"run_adaptation called with variant {cfg.w_state.variant.value}, "
        f"w={cfg.w_state.value}, e={cfg.e_state.value}, "
        f"max_iterations={cfg.max_iterations}"
    )
    for iteration in range(1, cfg.max_iterations + 1):
        if terminated(cfg.w_state):
            break
        w_eval, e_eval = cfg.w_state.value, cfg.e_state.value
        stats = evaluator(w_eval, e_eval)
        action = update_once(stats, cfg)
        trace.records.append(
            TraceRecord(
                iteration=iteration,
                w=cfg.w_state.value,
                e=cfg.e_state.value,
                rate_success=stats.rate_success,
                rate_cannot_reach=stats.rate_cannot_reach,
                rate_no_path=stats.rate_no_path,
                avg_task_time=stats.avg_task_time,
                action=action.value,
                d_w=cfg.w_state.d,
                k_w=cfg.w_state.k,
                n_w=cfg.w_state.n,
                d_e=cfg.e_state.d,
                w_eval=w_eval,
                e_eval=e_eval,
                avg_search_ops=stats.avg_search_ops,
            )
        )
        logger.debug(
            f"iteration {iteration}: {action.value} -> w={cfg.w_state.value:.3f}, "
            f"e={cfg.e_state.value:.3f}, d_w={cfg.w_state.d:.4f}"
        )
    trace.w_terminated = terminated(cfg.w_state)
    trace.e_terminated = terminated(cfg.e_state)
    logger.info(
        f"run_adaptation returned with {len(trace)} iterations, "
        f"w={cfg.w_state.value:.3f}, e={cfg.e_state.value:.3f}, "
        f"terminated={trace.w_terminated}"
    )
    return trace
