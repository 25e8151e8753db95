"""Train the three RL router variants at desk scale and compare them with heuristics on held-out seeds."""

import argparse
from dataclasses import asdict
from pathlib import Path

import numpy as np

from llmroute.config import load_config
from llmroute.experiment import RL_VARIANTS, evaluate, rl_config, train_agent, write_rows

HERE = Path(__file__).parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(HERE / "configs" / "desk.json"))
    ap.add_argument("--episodes", type=int)
    ap.add_argument("--variants", nargs="*", default=list(RL_VARIANTS))
    args = ap.parse_args()
    cfg = load_config(args.config)
    out = Path(cfg.output)
    episodes = args.episodes or cfg.episodes
    policies = {name: name for name in (cfg.matrix or {}).get("routing_policy", ["RoundRobin"])}
    for name in args.variants:
        vcfg = rl_config(cfg, RL_VARIANTS[name])
        res = train_agent(
            vcfg,
            episodes=episodes,
            log_fn=lambda s, n=name: print(f"{n} episode {s.episode}: reward {s.total_reward:.1f}, mean E2E {s.mean_e2e:.3f} s", flush=True),
        )
        write_rows([asdict(s) for s in res.stats], out / f"training_{name}.csv")
        res.agent.save(out / f"{name}.bin")
        policies[name] = res.agent
    scores = evaluate(cfg, policies, cfg.seeds)
    rows = [{"policy": k, "seed": s, "e2e_mean": v} for k, vals in scores.items() for s, v in zip(cfg.seeds, vals)]
    write_rows(rows, out / "desk_evaluation.csv")
    rr = np.mean(scores.get("RoundRobin", [np.nan]))
    print("\npolicy               mean E2E (s)   vs RoundRobin")
    for k, v in scores.items():
        m = float(np.mean(v))
        print(f"{k:<20} {m:12.3f}   {100 * (1 - m / rr):+6.2f}%")


if __name__ == "__main__":
    main()
