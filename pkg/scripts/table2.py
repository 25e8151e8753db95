"""Batching x routing grid on the four two-replica scenarios, printed as a table of makespans."""

import argparse
from pathlib import Path

from llmroute.config import load_config
from llmroute.experiment import run_matrix, write_rows

HERE = Path(__file__).parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(HERE / "configs" / "table2.json"))
    ap.add_argument("--n", type=int, help="override the number of requests")
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.n:
        from dataclasses import replace

        cfg = replace(cfg, workload=replace(cfg.workload, n_requests=args.n))
    rows = run_matrix(cfg, progress=lambda r: print(f"{r['scenario']:>13} {r['batching_policy']:>13} {r['routing_policy']:>19} {r['makespan']:9.2f}", flush=True))
    write_rows(rows, Path(cfg.output) / "table2.csv")

    scenarios = list(dict.fromkeys(r["scenario"] for r in rows))
    print("\nmakespan (s)" + "".join(f"{s:>15}" for s in scenarios))
    cells = {(r["batching_policy"], r["routing_policy"], r["scenario"]): r["makespan"] for r in rows}
    for bp in dict.fromkeys(r["batching_policy"] for r in rows):
        for rp in dict.fromkeys(r["routing_policy"] for r in rows):
            print(f"{bp[:5]}/{rp[:14]:<14}" + "".join(f"{cells[bp, rp, s]:15.2f}" for s in scenarios))


if __name__ == "__main__":
    main()
