from __future__ import annotations

from dataclasses import replace

import pytest

from planadapt.adapt import (
    TRACE_COLUMNS,
    Action,
    AdaptConfig,
    PatternSearchState,
    Variant,
    choose_action,
    predict_sr,
    predict_sr_simplified,
    ps_decrease,
    ps_increase,
    run_adaptation,
    scripted_stats,
    terminated,
    update_once,
)
from planadapt.rollout import RolloutStats

# warm-up stream with a spurious success every third iteration
SPURIOUS_SCRIPT = ["NP", "NP", "S"] * 4


def _stats(success: float, cannot_reach: float, no_path: float) -> RolloutStats:
    return RolloutStats(success, cannot_reach, no_path, avg_task_time=None, episodes=100)


def _run_script(script, variant: Variant) -> list[PatternSearchState]:
    cfg = AdaptConfig(
        w_state=PatternSearchState(value=1.0, variant=variant),
        e_state=PatternSearchState(value=1.0, i=1.0, d=0.25, variant=variant),
    )
    states = []
    for token in script:
        update_once(scripted_stats(token), cfg)
        states.append(cfg.w_state)
    return states


@pytest.mark.parametrize(
    ("rates", "action"),
    [
        ((0.9, 0.08, 0.02), Action.DECREASE_E),
        ((0.9, 0.02, 0.08), Action.INCREASE_BOTH),
        ((1.0, 0.0, 0.0), Action.DECREASE_W),
        ((0.5, 0.25, 0.25), Action.DECREASE_E),
        ((0.95, 0.05, 0.0), Action.DECREASE_W),
    ],
)
def test_choose_action_branch_order(rates, action) -> None:
    assert choose_action(_stats(*rates), cth=0.05) is action


def test_alg2_increases_grow_exponentially() -> None:
    st = PatternSearchState(value=1.0)
    values, multipliers = [], []
    for _ in range(3):
        st = ps_increase(st)
        values.append(st.value)
        multipliers.append(st.k)
    assert values == [4.0, 10.0, 22.0]
    assert multipliers == [2.0, 4.0, 8.0]
    assert st.n == 3


def test_alg2_decrease_after_growth() -> None:
    st = PatternSearchState(value=22.0, k=8.0, n=3)
    st = ps_decrease(st)
    assert (st.value, st.k, st.n) == (10.0, 1.0, 2)


def test_alg2_last_phase_and_linear_decrease() -> None:
    st = ps_decrease(PatternSearchState(value=16.0, k=4.0, n=1))
    assert (st.value, st.k, st.n) == (15.0, 1.0, 0)
    st = ps_decrease(PatternSearchState(value=12.0, n=0, d=0.9))
    assert st.value == pytest.approx(11.1)
    assert st.d == 0.9


def test_alg2_increase_without_phases_decays_d() -> None:
    st = ps_increase(PatternSearchState(value=15.0, n=0, d=1.0))
    assert st.value == 18.0
    assert st.d == pytest.approx(0.9)
    assert st.k == 1.0


def test_alg3_increase_restarts_then_grows() -> None:
    st = ps_increase(PatternSearchState(value=1.0, variant=Variant.ALG3))
    assert (st.value, st.k, st.c) == (4.0, 1.0, 4)
    st = ps_increase(st)
    assert (st.value, st.k, st.c) == (10.0, 2.0, 4)


def test_alg3_single_decrease_keeps_exponential_growth() -> None:
    st = PatternSearchState(value=10.0, k=2.0, n=3, c=4, d=1.0, variant="alg3")
    st = ps_decrease(st)
    assert (st.value, st.k, st.n, st.c) == (9.0, 2.0, 3, 3)


def test_alg3_decrease_ends_a_phase_when_interval_runs_out() -> None:
    st = PatternSearchState(value=30.0, k=4.0, n=3, c=1, variant="alg3")
    st = ps_decrease(st)
    assert (st.value, st.n, st.c) == (18.0, 2, 0)
    st = ps_decrease(st)
    assert (st.value, st.n, st.c) == (17.0, 2, 0)


def test_value_never_drops_below_one() -> None:
    for variant in Variant:
        st = PatternSearchState(value=1.5, k=8.0, n=3, c=1, variant=variant)
        for _ in range(10):
            st = ps_decrease(st)
            assert st.value >= 1.0


def test_terminated() -> None:
    assert terminated(PatternSearchState(value=1.0, d=0.09))
    assert not terminated(PatternSearchState(value=1.0, d=1.0))


def test_twenty_two_decays_terminate() -> None:
    st = PatternSearchState(value=5.0, n=0, d=1.0)
    applications = 0
    while not terminated(st):
        st = ps_increase(st)
        applications += 1
    assert applications == 22
    assert st.d == pytest.approx(0.9**22)


def test_terminated_state_ignores_updates() -> None:
    st = PatternSearchState(value=7.0, n=0, d=0.05)
    assert ps_increase(st) == st
    assert ps_decrease(st) == st


def test_state_validation() -> None:
    with pytest.raises(ValueError):
        PatternSearchState(value=1.0, d=0.0)
    with pytest.raises(ValueError):
        PatternSearchState(value=1.0, k=0.5)
    with pytest.raises(ValueError):
        PatternSearchState(value=1.0, c=5, count_reset=4)
    with pytest.raises(ValueError):
        AdaptConfig(cth=1.0)


def test_predict_sr() -> None:
    assert predict_sr(3, 0.05, 0.1) == pytest.approx(0.974194, abs=1e-6)
    assert predict_sr(10, 0.05, 0.1) == pytest.approx(0.974752, abs=1e-6)
    assert predict_sr_simplified(0.05) == pytest.approx(0.975)
    for i in (3, 10):
        assert abs(predict_sr(i, 0.05, 0.1) - predict_sr_simplified(0.05)) < 1e-3
    with pytest.raises(ValueError):
        predict_sr(3, 1.5, 0.1)


def test_scripted_no_path_then_success_alg2() -> None:
    states = _run_script(["NP", "NP", "NP", "S"], Variant.ALG2)
    assert [s.value for s in states] == [4.0, 10.0, 22.0, 10.0]
    assert [s.k for s in states] == [2.0, 4.0, 8.0, 1.0]
    assert [s.n for s in states] == [3, 3, 3, 2]


def test_spurious_success_script_alg2() -> None:
    states = _run_script(SPURIOUS_SCRIPT, Variant.ALG2)
    values = [s.value for s in states]
    assert values[:9] == [4.0, 10.0, 4.0, 7.0, 13.0, 7.0, 10.0, 16.0, 15.0]
    assert values[9:] == pytest.approx([18.0, 21.0, 20.19])
    assert [s.n for s in states][:9] == [3, 3, 2, 2, 2, 1, 1, 1, 0]


def test_spurious_success_script_alg3() -> None:
    states = _run_script(SPURIOUS_SCRIPT, Variant.ALG3)
    assert [s.value for s in states][:7] == [4.0, 10.0, 9.0, 21.0, 45.0, 44.0, 92.0]
    assert all(s.n == 3 for s in states)


def test_alg3_keeps_phases_longer_and_peaks_higher() -> None:
    alg2 = _run_script(SPURIOUS_SCRIPT, Variant.ALG2)
    alg3 = _run_script(SPURIOUS_SCRIPT, Variant.ALG3)
    assert all(b.n >= a.n for a, b in zip(alg2, alg3))
    assert max(s.value for s in alg3) > max(s.value for s in alg2)
    assert not any(terminated(s) for s in alg2 + alg3)


def test_d_never_increases() -> None:
    for variant in Variant:
        states = _run_script(["NP", "S", "S", "NP", "NP", "CR", "S"] * 6, variant)
        ds = [s.d for s in states]
        assert all(b <= a for a, b in zip(ds, ds[1:]))


def test_alg2_k_resets_after_every_decrease() -> None:
    cfg = AdaptConfig()
    for token in ["NP", "NP", "S", "NP", "S", "S", "NP", "NP", "NP", "S"]:
        action = update_once(scripted_stats(token), cfg)
        if action is Action.DECREASE_W:
            assert cfg.w_state.k == 1.0


def test_cannot_reach_only_moves_e() -> None:
    cfg = AdaptConfig(e_state=PatternSearchState(value=5.0, i=1.0, d=0.25))
    w_before = cfg.w_state
    assert update_once(scripted_stats("CR"), cfg) is Action.DECREASE_E
    assert cfg.w_state == w_before
    assert cfg.e_state.value == 4.5
    assert cfg.e_state.n == 2


def test_scripted_stats_rejects_unknown_token() -> None:
    with pytest.raises(ValueError):
        scripted_stats("X")


def test_run_adaptation_with_always_no_path() -> None:
    cfg = AdaptConfig(max_iterations=5)
    trace = run_adaptation(
        None, None, None, cfg, None, None, evaluator=lambda w, e: scripted_stats("NP")
    )
    assert len(trace) == 5
    assert list(trace.column("w")) == [4.0, 10.0, 22.0, 46.0, 94.0]
    assert list(trace.column("w_eval")) == [1.0, 4.0, 10.0, 22.0, 46.0]
    increments = [b - a for a, b in zip(trace.column("w_eval"), trace.column("w"))]
    assert increments == [3.0, 6.0, 12.0, 24.0, 48.0]
    assert [r.iteration for r in trace.records] == [1, 2, 3, 4, 5]


def test_run_adaptation_walks_down_without_terminating() -> None:
    cfg = AdaptConfig(
        w_state=PatternSearchState(value=50.0, n=0, d=0.9), max_iterations=10
    )
    trace = run_adaptation(
        None, None, None, cfg, None, None, evaluator=lambda w, e: scripted_stats("S")
    )
    assert len(trace) == 10
    assert list(trace.column("w")) == pytest.approx([50.0 - 0.9 * k for k in range(1, 11)])
    assert not trace.w_terminated


def test_run_adaptation_stops_when_w_search_ends() -> None:
    cfg = AdaptConfig(
        w_state=PatternSearchState(value=5.0, n=0, d=0.15), max_iterations=50
    )
    trace = run_adaptation(
        None, None, None, cfg, None, None, evaluator=lambda w, e: scripted_stats("NP")
    )
    assert len(trace) == 4
    assert trace.w_terminated


def test_run_adaptation_needs_an_evaluator_or_a_world() -> None:
    with pytest.raises(ValueError):
        run_adaptation(None, None, None, AdaptConfig(), None, None)


def test_trace_frame_columns() -> None:
    cfg = AdaptConfig(max_iterations=3)
    stream = iter(["NP", "CR", "S"])
    trace = run_adaptation(
        None, None, None, cfg, None, None,
        evaluator=lambda w, e: scripted_stats(next(stream)),
    )
    frame = trace.to_frame()
    assert list(frame.columns) == TRACE_COLUMNS
    assert list(frame["action"]) == ["IncreaseBoth", "DecreaseE", "DecreaseW"]
    assert frame["iteration"].is_monotonic_increasing


def test_replace_keeps_variant_type() -> None:
    st = replace(PatternSearchState(value=1.0, variant="alg3"), value=2.0)
    assert st.variant is Variant.ALG3


def _settle_against_threshold(i: float, threshold: float = 120.0):
    cfg = AdaptConfig(w_state=PatternSearchState(value=1.0, i=i), max_iterations=200)
    trace = run_adaptation(
        None, None, None, cfg, None, None,
        evaluator=lambda w, e: scripted_stats("NP" if w < threshold else "S"),
    )
    assert len(trace) == 200
    assert not trace.w_terminated
    return trace.column("w")[-len(trace) // 3 :]


def test_larger_increment_settles_in_a_wider_band_above_the_threshold() -> None:
    fine = _settle_against_threshold(3.0)
    coarse = _settle_against_threshold(10.0)
    assert fine.min() >= 119.0
    assert coarse.min() >= 119.0
    assert fine.max() - fine.min() <= 12.0
    assert coarse.max() - coarse.min() <= 40.0
    assert coarse.mean() > fine.mean()
