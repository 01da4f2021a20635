from __future__ import annotations

import argparse
import copy
import multiprocessing
import sys
import time
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from planadapt import logger as log_setup
from planadapt._version import __version__
from planadapt.adapt import (
    run_adaptation,
    scripted_stats,
    terminated,
    update_once,
)
from planadapt.config import ConfigError, RunConfig, SweepSpec, load_config
from planadapt.logger import get_logger
from planadapt.plangraph import build_graph, dump_graph
from planadapt.plotting import write_plot
from planadapt.rollout import evaluate

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

ADAPT_PLOT_COLUMNS = ["w", "e", "rate_success"]
SWEEP_COLUMNS = [
    "param",
    "value",
    "w",
    "e",
    "repetitions",
    "rate_success",
    "rate_cannot_reach",
    "rate_no_path",
    "avg_task_time",
    "avg_search_ops",
]
TRACE_SEARCH_COLUMNS = [
    "step",
    "token",
    "action",
    "w",
    "k_w",
    "n_w",
    "c_w",
    "d_w",
    "e",
    "k_e",
    "n_e",
    "c_e",
    "d_e",
    "w_terminated",
    "e_terminated",
]


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_adapt(config: RunConfig) -> Path:
    """Adapt w and e on the configured map; writes adapt_trace.csv/.svg."""
    cfg = config.adapt_config()
    trace = run_adaptation(
        config.world(),
        config.reaction_model(),
        config.estimator_spec(),
        cfg,
        config.protocol(),
        np.random.default_rng(config.seed),
    )
    csv_path = _out_dir(config) / "adapt_trace.csv"
    trace.to_frame().to_csv(csv_path, index=False)
    write_plot(csv_path, ADAPT_PLOT_COLUMNS)
    logger.info(
        f"cmd_adapt returned with {len(trace)} iterations, final w="
        f"{cfg.w_state.value:.2f}, e={cfg.e_state.value:.2f} -> {csv_path}"
    )
    return csv_path


def cmd_sweep(config: RunConfig, sweep: SweepSpec) -> Path:
    """Evaluate every swept value ``repetitions`` times and average the stats."""
    world = config.world()
    model = config.reaction_model()
    est = config.estimator_spec()
    protocol = config.protocol()
    rng = np.random.default_rng(config.seed)
    rows = []
    for value in sweep.values:
        params = {sweep.param: value, sweep.fixed_param: sweep.fixed_value}
        batch = [
            evaluate(world, model, est, params["w"], params["e"], protocol, rng)
            for _ in range(sweep.repetitions)
        ]
        rows.append(
            {
                "param": sweep.param,
                "value": value,
                "w": params["w"],
                "e": params["e"],
                "repetitions": sweep.repetitions,
                "rate_success": np.mean([s.rate_success for s in batch]),
                "rate_cannot_reach": np.mean([s.rate_cannot_reach for s in batch]),
                "rate_no_path": np.mean([s.rate_no_path for s in batch]),
                "avg_task_time": _mean_present([s.avg_task_time for s in batch]),
                "avg_search_ops": _mean_present([s.avg_search_ops for s in batch]),
            }
        )
        logger.info(f"sweep {sweep.param}={value}: success {rows[-1]['rate_success']:.3f}")
    csv_path = _out_dir(config) / "sweep.csv"
    pd.DataFrame(rows, columns=SWEEP_COLUMNS).to_csv(csv_path, index=False)
    write_plot(
        csv_path,
        ["rate_success", "rate_cannot_reach", "rate_no_path", "avg_task_time"],
        x="value",
    )
    return csv_path


def _mean_present(values: Sequence[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def cmd_rollout(config: RunConfig) -> Path:
    """One evaluation at (w_init, e_init) plus a dump of the first setting's graph."""
    world = config.world()
    est = config.estimator_spec()
    rng = np.random.default_rng(config.seed)
    # evaluate() derives setting 0 from the first draw of rng; replay it
    peek = np.random.Generator(copy.deepcopy(rng.bit_generator))
    base = int(peek.integers(2**63 - 1))
    stats = evaluate(
        world,
        config.reaction_model(),
        est,
        config.w_init,
        config.e_init,
        config.protocol(),
        rng,
    )
    out = _out_dir(config)
    csv_path = out / "rollout.csv"
    pd.DataFrame(
        [
            {
                "w": config.w_init,
                "e": config.e_init,
                "episodes": stats.episodes,
                "rate_success": stats.rate_success,
                "rate_cannot_reach": stats.rate_cannot_reach,
                "rate_no_path": stats.rate_no_path,
                "avg_task_time": stats.avg_task_time,
                "avg_search_ops": stats.avg_search_ops,
            }
        ]
    ).to_csv(csv_path, index=False)
    graph = build_graph(
        world, est, config.w_init, config.e_init, np.random.default_rng([base, 0])
    )
    dump_graph(graph, out)
    return csv_path


def cmd_trace_search(config: RunConfig, script: Sequence[str]) -> Path:
    """Feed scripted outcomes through update_once and dump every state."""
    if not script:
        raise ConfigError("trace-search needs at least one outcome token")
    stream = [scripted_stats(token) for token in script]
    cfg = config.adapt_config()
    rows = []
    for number, (token, stats) in enumerate(zip(script, stream), start=1):
        action = update_once(stats, cfg)
        w, e = cfg.w_state, cfg.e_state
        rows.append(
            {
                "step": number,
                "token": token,
                "action": action.value,
                "w": w.value,
                "k_w": w.k,
                "n_w": w.n,
                "c_w": w.c,
                "d_w": w.d,
                "e": e.value,
                "k_e": e.k,
                "n_e": e.n,
                "c_e": e.c,
                "d_e": e.d,
                "w_terminated": terminated(w),
                "e_terminated": terminated(e),
            }
        )
    csv_path = _out_dir(config) / "trace_search.csv"
    pd.DataFrame(rows, columns=TRACE_SEARCH_COLUMNS).to_csv(csv_path, index=False)
    return csv_path


def cmd_plot(
    csv_path: str | Path, columns: Sequence[str], x: str | None = None
) -> Path:
    return write_plot(csv_path, columns, x=x)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument(
        "--variant", choices=["alg2", "alg3"], help="pattern-search variant"
    )
    common.add_argument("--verbose", action="store_true", help="debug console log")
    common.add_argument(
        "--log-server",
        action="store_true",
        help="also collect records in logs/log_<session>.log",
    )

    parser = argparse.ArgumentParser(
        prog="planadapt",
        description="Adapt waypoint count and edge length of a planning graph.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("adapt", parents=[common], help="run the online adaptation")
    sweep = sub.add_parser("sweep", parents=[common], help="sweep w or e")
    sweep.add_argument("--param", choices=["w", "e"])
    sweep.add_argument("--values", help="comma separated values")
    sweep.add_argument("--fixed", help="fixed parameter, e.g. e=5")
    sweep.add_argument("--repetitions", type=int)
    sub.add_parser("rollout", parents=[common], help="evaluate (w_init, e_init) once")
    trace = sub.add_parser(
        "trace-search", parents=[common], help="scripted pattern-search trace"
    )
    trace.add_argument("script", nargs="+", help="outcome tokens: S, CR or NP")
    plot = sub.add_parser("plot", parents=[common], help="SVG line plot of a CSV")
    plot.add_argument("csv", type=Path)
    plot.add_argument("--columns", required=True, help="comma separated columns")
    plot.add_argument("--x", help="x axis column (default: first column)")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    overrides = {"seed": args.seed, "out_dir": args.out, "variant": args.variant}
    if args.command == "sweep":
        overrides.update(
            sweep_param=args.param,
            sweep_values=args.values,
            sweep_fixed=args.fixed,
            sweep_repetitions=args.repetitions,
        )
    return overrides


def _check_plot_input(args: argparse.Namespace) -> None:
    if not args.csv.is_file():
        raise ConfigError(f"CSV file {args.csv} does not exist")
    header = pd.read_csv(args.csv, nrows=0).columns
    wanted = [c for c in args.columns.split(",") if c] + ([args.x] if args.x else [])
    missing = [c for c in wanted if c not in header]
    if missing:
        raise ConfigError(f"columns {missing} not in {args.csv}")


def _run(args: argparse.Namespace, config: RunConfig, sweep: SweepSpec | None) -> Path:
    if args.command == "adapt":
        return cmd_adapt(config)
    if args.command == "sweep":
        return cmd_sweep(config, sweep)
    if args.command == "rollout":
        return cmd_rollout(config)
    if args.command == "trace-search":
        return cmd_trace_search(config, args.script)
    return cmd_plot(args.csv, [c for c in args.columns.split(",") if c], args.x)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    log_setup.configure_console(args.verbose)
    if args.log_server:
        multiprocessing.Process(
            target=log_setup.start_log_server,
            args=(time.strftime("%Y%m%d_%H%M%S"),),
            daemon=True,
        ).start()
    logger.info(f"planadapt {args.command} called with {vars(args)}")

    try:
        config = load_config(args.config, _overrides(args))
        sweep = config.sweep_spec() if args.command == "sweep" else None
        if args.command in ("adapt", "sweep", "rollout"):
            config.world()
        if args.command == "trace-search":
            for token in args.script:
                scripted_stats(token)
        if args.command == "plot":
            _check_plot_input(args)
    except (ValueError, OSError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG

    episode_log = None
    if args.verbose and args.command in ("adapt", "sweep", "rollout"):
        episode_log = log_setup.attach_episode_log(_out_dir(config) / "episodes.csv")
    try:
        result = _run(args, config, sweep)
    except Exception:
        logger.exception(f"planadapt {args.command} failed")
        return EXIT_RUNTIME
    finally:
        if episode_log is not None:
            log_setup.detach_episode_log(episode_log)
    logger.info(f"planadapt {args.command} returned with {result}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
