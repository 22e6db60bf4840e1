"""Command-line front end.

Subcommands:

``train``      one run in the configured mode, artifacts to ``--out``
``compare``    the three modes on one seed, side by side
``project``    cost-model runtime/speedup tables for cluster layouts
``gradcheck``  finite-difference audit of the analytic gradient

Exit codes: 0 success, 2 configuration error, 3 non-finite numerics,
4 threshold failure (gradcheck above tolerance).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import write_json, write_jsonl
from .config import MODES, config_to_dict, load_config
from .costmodel import (
    PRESETS,
    cost_params,
    perf_improvement,
    project_runtime,
    scaling_efficiency,
    speedup,
)
from .data import sample_global_batch, synthetic_corpus
from .driver import run_training
from .errors import ConfigError, NumericError
from .model import grad_check, init_params
from .optim import ScheduleConfig
from .topology import build_topology

_EXIT_OK = 0
_EXIT_CONFIG = 2
_EXIT_NUMERIC = 3
_EXIT_THRESHOLD = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", default=None, help="key=value config file")
    parser.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        dest="overrides",
        help="override one config key (repeatable)",
    )
    parser.add_argument("--out", metavar="DIR", default=None, help="artifact output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument(
        "--workers-mode",
        choices=("seq", "par"),
        default=None,
        help="worker scheduling: sequential round-robin or threaded",
    )


def _build_config(args: argparse.Namespace):
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers_mode is not None:
        cfg.workers_mode = args.workers_mode
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pier",
        description="Desk-scale two-level distributed training simulator",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training mode")
    _add_common(p_train)

    p_cmp = sub.add_parser("compare", help="run two or more modes on one seed")
    _add_common(p_cmp)
    p_cmp.add_argument(
        "--modes",
        default=",".join(MODES),
        help="comma-separated mode subset to run (at least two)",
    )

    p_proj = sub.add_parser("project", help="cost-model runtime tables")
    _add_common(p_proj)
    p_proj.add_argument("--preset", choices=sorted(PRESETS), default="a100-node4")
    p_proj.add_argument("--gpus", default="8,16,32,64,128", help="comma-separated GPU counts")
    p_proj.add_argument(
        "--intervals", default="50,100,200,500", help="comma-separated sync intervals"
    )
    p_proj.add_argument("--model-bytes", type=float, default=None)
    p_proj.add_argument("--compute-time", type=float, default=None)
    p_proj.add_argument("--latency", type=float, default=None)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(p_gc)
    p_gc.add_argument("--epsilon", type=float, default=1e-5)
    p_gc.add_argument("--coords", type=int, default=64)
    p_gc.add_argument("--tolerance", type=float, default=None, help="default 1e-4 double, 1e-2 single")
    return parser


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------

def _print_result_line(result) -> None:
    print(
        f"{result.mode:16s} seed={result.seed} iters={result.config['total_iters']} "
        f"final_train={result.final_train_loss:.6f} final_val={result.final_val_loss:.6f} "
        f"comm_bytes={result.comm.total_bytes:.3e} wall={result.wall_time_s:.1f}s"
    )


def _cmd_train(args) -> int:
    cfg = _build_config(args)
    result = run_training(cfg)
    _print_result_line(result)
    if args.out is not None:
        result.write(args.out)
        print(f"artifacts written to {args.out}")
    return _EXIT_OK


def _parse_modes(text: str) -> list[str]:
    requested = [m.strip() for m in text.split(",") if m.strip()]
    unknown = [m for m in requested if m not in MODES]
    if unknown:
        raise ConfigError(f"unknown mode(s) {unknown}; choose from {list(MODES)}")
    if len(set(requested)) != len(requested):
        raise ConfigError(f"duplicate modes in {text!r}")
    if len(requested) < 2:
        raise ConfigError("compare needs at least two modes")
    return requested


def _transition_spike(result, lazy_end: int, interval: int, horizon: int) -> float | None:
    """Worst validation-loss rise over the first three windows past the
    phase switch; None when the run is too short to measure it."""
    points = [lazy_end + i * interval for i in range(4)]
    if lazy_end <= 0 or points[-1] > horizon:
        return None
    vals = {r.iteration: r.val_loss for r in result.records if r.val_loss is not None}
    if any(p not in vals for p in points):
        return None
    return max(vals[b] - vals[a] for a, b in zip(points, points[1:]))


def _cmd_compare(args) -> int:
    cfg = _build_config(args)
    modes = _parse_modes(args.modes)
    results = {}
    for mode in modes:
        run_cfg = replace(cfg, mode=mode)
        results[mode] = run_training(run_cfg.validate())
        _print_result_line(results[mode])
        if args.out is not None:
            results[mode].write(Path(args.out) / mode)

    sched = cfg.schedule_config()
    spikes = {
        m: _transition_spike(results[m], sched.lazy_end, cfg.sync_interval, cfg.total_iters)
        for m in modes
        if m != "adamw_baseline"
    }
    deltas_pct = {}
    if "adamw_baseline" in modes:
        ref = results["adamw_baseline"].final_val_loss
        deltas_pct = {
            m: (results[m].final_val_loss - ref) / ref * 100.0
            for m in modes
            if m != "adamw_baseline"
        }
        for m, gap in deltas_pct.items():
            print(f"{m} vs adamw_baseline final val gap: {gap:+.3f}%")
    if "pier" in results and "diloco_baseline" in results:
        pier, diloco = results["pier"], results["diloco_baseline"]
        print(f"pier <= diloco_baseline final val: {pier.final_val_loss <= diloco.final_val_loss}")
        if spikes.get("pier") is not None and spikes.get("diloco_baseline") is not None:
            print(
                f"post-switch spike: pier {spikes['pier']:+.4f} "
                f"vs diloco_baseline {spikes['diloco_baseline']:+.4f}"
            )
    print(f"uniform-prediction loss ln(vocab) = {float(np.log(cfg.vocab_size)):.4f}")

    # projected wall-clock context for this run's layout and cadence
    proj_params = cost_params("a100-node4")
    base_p = project_runtime(proj_params, cfg.topology(), sched, "adamw_baseline")
    pier_p = project_runtime(proj_params, cfg.topology(), sched, "pier")
    projected = {
        "preset": "a100-node4",
        "speedup": speedup(base_p.total_time, pier_p.total_time),
        "time_saved_pct": perf_improvement(base_p.total_time, pier_p.total_time),
    }

    if args.out is not None:
        val_iters = sorted(
            {r.iteration for m in modes for r in results[m].records if r.val_loss is not None}
        )
        series = {
            m: {r.iteration: r.val_loss for r in results[m].records if r.val_loss is not None}
            for m in modes
        }
        summary = {
            "record": "compare_summary",
            "seed": cfg.seed,
            "modes": modes,
            "final_val": {m: results[m].final_val_loss for m in modes},
            "final_train": {m: results[m].final_train_loss for m in modes},
            "final_val_delta_pct_vs_adamw": deltas_pct or None,
            "pier_vs_adamw_pct": deltas_pct.get("pier"),
            "pier_le_diloco": (
                bool(results["pier"].final_val_loss <= results["diloco_baseline"].final_val_loss)
                if "pier" in results and "diloco_baseline" in results
                else None
            ),
            "transition_spike": spikes or None,
            "comm_total_bytes": {m: results[m].comm.total_bytes for m in modes},
            "projected": projected,
            "val_series": {
                "iters": val_iters,
                **{m: [series[m].get(t) for t in val_iters] for m in modes},
            },
        }
        write_json(Path(args.out) / "compare_summary.json", summary)
    return _EXIT_OK


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise ConfigError(f"{flag} expects positive integers, got {text!r}")
    return values


def _cmd_project(args) -> int:
    cfg = _build_config(args)
    overrides = {}
    if args.model_bytes is not None:
        overrides["model_bytes"] = args.model_bytes
    if args.compute_time is not None:
        overrides["per_iter_compute_time"] = args.compute_time
    if args.latency is not None:
        overrides["per_collective_latency"] = args.latency
    params = cost_params(args.preset, **overrides)
    gpu_counts = _parse_int_list(args.gpus, "--gpus")
    intervals = _parse_int_list(args.intervals, "--intervals")

    rows = []
    print(
        f"preset={args.preset} model_bytes={params.model_bytes:.3e} "
        f"compute={params.per_iter_compute_time}s/iter T={cfg.total_iters}"
    )
    header = (
        f"{'gpus':>5} {'nodes':>5} {'r':>5} {'baseline_s':>12} {'pier_s':>12} "
        f"{'speedup':>8} {'saved%':>7} {'comm%':>7} {'eff':>6}"
    )
    print(header)
    # scaling efficiency is measured against the smallest GPU count at the
    # same sync interval
    eff_base: dict[int, tuple[int, float]] = {}
    for gpus in sorted(gpu_counts):
        if gpus % params.gpus_per_node != 0:
            raise ConfigError(
                f"--gpus value {gpus} is not a multiple of the preset's gpus_per_node "
                f"({params.gpus_per_node})"
            )
        nodes = gpus // params.gpus_per_node
        topo = build_topology(groups=nodes, dp_per_group=params.gpus_per_node, tp_size=1)
        sched = ScheduleConfig(
            total_iters=cfg.total_iters,
            lazy_fraction=cfg.lazy_fraction,
            sync_interval=cfg.sync_interval,
        )
        baseline = project_runtime(params, topo, sched, "adamw_baseline")
        for r in intervals:
            sched_r = ScheduleConfig(
                total_iters=cfg.total_iters,
                lazy_fraction=cfg.lazy_fraction,
                sync_interval=r,
            )
            pier = project_runtime(params, topo, sched_r, "pier")
            s = speedup(baseline.total_time, pier.total_time)
            comm_frac = (pier.inner_comm_time + pier.outer_comm_time) / pier.total_time
            if r not in eff_base:
                eff_base[r] = (gpus, pier.total_time)
            eff = scaling_efficiency(eff_base[r][1], pier.total_time, eff_base[r][0], gpus)
            rows.append(
                {
                    "record": "projection",
                    "preset": args.preset,
                    "gpus": gpus,
                    "nodes": nodes,
                    "sync_interval": r,
                    "baseline_total_s": baseline.total_time,
                    "pier_total_s": pier.total_time,
                    "pier_compute_s": pier.compute_time,
                    "pier_inner_comm_s": pier.inner_comm_time,
                    "pier_outer_comm_s": pier.outer_comm_time,
                    "speedup": s,
                    "saved_pct": perf_improvement(baseline.total_time, pier.total_time),
                    "comm_fraction": comm_frac,
                    "scaling_efficiency_vs_smallest": eff,
                }
            )
            print(
                f"{gpus:>5} {nodes:>5} {r:>5} {baseline.total_time:>12.2f} "
                f"{pier.total_time:>12.2f} {s:>8.3f} "
                f"{perf_improvement(baseline.total_time, pier.total_time):>7.2f} "
                f"{100.0 * comm_frac:>7.2f} {eff:>6.3f}"
            )
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(out / "projection.jsonl", rows)
        print(f"projection written to {out / 'projection.jsonl'}")
    return _EXIT_OK


def _cmd_gradcheck(args) -> int:
    cfg = _build_config(args)
    mcfg = cfg.model_config()
    tolerance = args.tolerance
    if tolerance is None:
        tolerance = 1e-4 if cfg.precision == "double" else 1e-2
    theta = init_params(mcfg, np.random.default_rng([cfg.seed, 100]))
    corpus = synthetic_corpus(
        cfg.seed,
        cfg.corpus_tokens,
        vocab=cfg.vocab_size,
        branching=cfg.markov_branching,
        concentration=cfg.markov_concentration,
    )
    rows = min(8, cfg.global_batch)
    batch = sample_global_batch(corpus, cfg.seed, 1, cfg.global_batch, cfg.seq_len)[:rows]
    err = grad_check(
        theta,
        mcfg,
        batch,
        epsilon=args.epsilon,
        num_coords=args.coords,
        rng=np.random.default_rng(cfg.seed),
    )
    passed = err < tolerance
    verdict = "PASS" if passed else "FAIL"
    print(
        f"grad check ({cfg.precision}, eps={args.epsilon:g}, {args.coords} coords): "
        f"max relative error {err:.3e} vs tolerance {tolerance:.1e} [{verdict}]"
    )
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(
            out / "gradcheck.json",
            {
                "record": "gradcheck",
                "precision": cfg.precision,
                "epsilon": args.epsilon,
                "coords": args.coords,
                "max_rel_error": err,
                "tolerance": tolerance,
                "passed": passed,
                "config": config_to_dict(cfg),
            },
        )
    return _EXIT_OK if passed else _EXIT_THRESHOLD


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "compare": _cmd_compare,
        "project": _cmd_project,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
