"""Command-line entry point: run, matrix, partition, train, evaluate, calibrate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .calibrate import fit_profile, read_measurements
from .config import ExperimentConfig, load_config
from .experiment import evaluate, run_experiment, run_matrix, train_agent, write_rows
from .metrics import emit_report
from .partition import brute_force_partition, random_small_requests
from .rl.dqn import DQNAgent
from .routers import ConfigError

log = logging.getLogger("llmroute")


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if getattr(args, "episodes", None) is not None:
        cfg = replace(cfg, episodes=args.episodes)
    return cfg


def _out(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out if args.out else cfg.output)


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    for seed in cfg.seeds:
        res = run_experiment(cfg, seed)
        target = out if len(cfg.seeds) == 1 else out / f"seed_{seed}"
        emit_report(res.report, target, extra={"config": cfg.to_dict(), "seed": seed})
        print(f"seed {seed}: mean E2E {res.report.mean_e2e:.4f} s, makespan {res.report.makespan:.2f} s -> {target}")
    return 0


def cmd_matrix(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    rows = run_matrix(cfg, progress=lambda r: print(_fmt_row(r), flush=True))
    write_rows(rows, out / "matrix.csv")
    _dump({"config": cfg.to_dict(), "rows": rows}, out / "matrix.json")
    return 0


def _fmt_row(row: dict) -> str:
    keys = [k for k in ("scenario", "routing_policy", "batching_policy", "chunk_size", "seed") if k in row]
    cell = " ".join(f"{k}={row[k]}" for k in keys)
    return f"{cell}: makespan {row['makespan']:.2f} s, mean E2E {row['e2e_mean']:.3f} s"


def cmd_partition(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    rng = np.random.default_rng(cfg.seeds[0])
    reqs = random_small_requests(args.n, rng, args.low, args.high, args.interval)
    c = cfg.cluster
    res = brute_force_partition(
        reqs,
        cfg.profile,
        m=2,
        kv_capacity_tokens=c.kv_capacity_tokens,
        max_batch_size=c.max_batch_size,
        batching_policy=c.batching_policy,
        chunk_size=c.chunk_size,
    )
    summary = {
        "requests": [[r.prompt_tokens, r.true_decode_tokens, r.arrival_time] for r in reqs],
        "best": res.best,
        "worst": res.worst,
        "mean": res.mean,
        "mean_over_best": res.random_over_best,
        "best_assignments": [list(a) for a in res.best_assignments],
    }
    _dump(summary, out / "partition.json")
    write_rows([{"assignment": "".join(map(str, a)), "mean_e2e": v} for a, v in res.log], out / "partition_log.csv")
    print(f"best {res.best:.4f} s, worst {res.worst:.4f} s, mean {res.mean:.4f} s ({100 * res.random_over_best:.2f}% above best)")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)

    def show(st):
        print(
            f"episode {st.episode}: eps {st.epsilon:.2f} reward {st.total_reward:.1f} "
            f"mean E2E {st.mean_e2e:.3f} s",
            flush=True,
        )

    result = train_agent(cfg, seed=cfg.seeds[0], log_fn=show)
    out.mkdir(parents=True, exist_ok=True)
    result.agent.save(out / "agent.bin")
    write_rows([asdict(s) for s in result.stats], out / "training.csv")
    print(f"saved {out / 'agent.bin'}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    checkpoint = args.checkpoint or cfg.checkpoint
    policies = {}
    if checkpoint:
        policies["RL"] = DQNAgent.load(checkpoint)
    names = (cfg.matrix or {}).get("routing_policy") or ["RoundRobin"]
    for name in names:
        if name != "RL":
            policies[name] = name
    seeds = cfg.seeds if args.seed is None else (args.seed,)
    scores = evaluate(cfg, policies, seeds)
    rows = [{"policy": k, "seed": s, "e2e_mean": v} for k, vals in scores.items() for s, v in zip(seeds, vals)]
    write_rows(rows, out / "evaluation.csv")
    summary = {k: float(np.mean(v)) for k, v in scores.items()}
    # stalled runs score inf, written as null
    _dump(
        {"mean_e2e": {k: (v if np.isfinite(v) else None) for k, v in summary.items()}, "seeds": list(seeds)},
        out / "evaluation.json",
    )
    for k, v in summary.items():
        print(f"{k}: mean E2E {v:.4f} s")
    return 0


def cmd_calibrate(args) -> int:
    base = load_config(args.config).profile if args.config else ExperimentConfig().profile
    fit = fit_profile(read_measurements(args.measurements), base)
    out = Path(args.out) if args.out else Path("profile.json")
    target = out / "profile.json" if out.suffix != ".json" else out
    _dump(
        {"profile": fit.profile.to_dict(), "prefill_rmse": fit.prefill_rmse, "decode_rmse": fit.decode_rmse, "notes": fit.notes},
        target,
    )
    for k, v in fit.profile.to_dict().items():
        print(f"{k} = {v:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="llmroute", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, episodes=False):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="override the config's seeds with one seed")
        sp.add_argument("--out", help="output directory (default: config 'output')")
        if episodes:
            sp.add_argument("--episodes", type=int, help="training episodes")

    common(sub.add_parser("run", help="run one experiment and write reports"))
    common(sub.add_parser("matrix", help="run the batching x routing grid"))
    sp = sub.add_parser("partition", help="exhaustive two-replica assignment study")
    common(sp)
    sp.add_argument("--n", type=int, default=8, help="number of requests (<= 14)")
    sp.add_argument("--low", type=int, default=10)
    sp.add_argument("--high", type=int, default=100)
    sp.add_argument("--interval", type=float, default=1.0, help="seconds between arrivals")
    common(sub.add_parser("train", help="train the DQN router"), episodes=True)
    sp = sub.add_parser("evaluate", help="frozen agent against heuristics")
    common(sp)
    sp.add_argument("--checkpoint", help="agent file written by 'train'")
    sp = sub.add_parser("calibrate", help="fit profile slopes from measured iteration times")
    sp.add_argument("measurements", help="CSV with columns phase,batch_tokens,kv_tokens,seconds")
    sp.add_argument("--config", help="config whose profile supplies unfitted values")
    sp.add_argument("--out", help="output directory or .json path")
    return p


COMMANDS = {
    "run": cmd_run,
    "matrix": cmd_matrix,
    "partition": cmd_partition,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "calibrate": cmd_calibrate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
