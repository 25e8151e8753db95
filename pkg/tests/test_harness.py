import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from llmroute.calibrate import fit_profile, read_measurements
from llmroute.cli import main
from llmroute.config import (
    ExperimentConfig,
    WorkloadConfig,
    config_from_dict,
    expand_matrix,
    load_config,
    with_overrides,
)
from llmroute.experiment import StalledError, build_policy, evaluate, run_experiment, run_matrix, train_agent
from llmroute.latency import HardwareProfile, estimate_request_time
from llmroute.partition import brute_force_partition, random_small_requests, simulate_assignment
from llmroute.routers import ConfigError, EnvConfig, state_dim
from llmroute.rl import DQNAgent
from llmroute.workload import ArrivalTrace, Request, write_trace

DATA = Path(__file__).parent / "data"


def small_cfg(**kw):
    base = dict(workload=WorkloadConfig(n_requests=20, arrival_rate=10.0), cluster=EnvConfig(m=2))
    base.update(kw)
    return ExperimentConfig(**base)


# --------------------------------------------------------------------------- run_experiment


@pytest.mark.parametrize("p,d", [(1000, 1000), (200, 50), (30, 400)])
def test_single_request_matches_estimate(tmp_path, p, d):
    path = tmp_path / "one.csv"
    write_trace(ArrivalTrace([Request(0, "x", p, d, 0.0)]), path)
    cfg = ExperimentConfig(workload=WorkloadConfig(kind="trace", trace_path=str(path)), cluster=EnvConfig(m=1))
    e2e = run_experiment(cfg).report.mean_e2e
    assert e2e == pytest.approx(estimate_request_time(cfg.profile, p, d), rel=0.10)


def test_run_deterministic():
    a = run_experiment(small_cfg(), seed=4).report
    b = run_experiment(small_cfg(), seed=4).report
    assert a.aggregates == b.aggregates and a.requests == b.requests


def test_matrix_rows():
    cfg = small_cfg(matrix={"batching_policy": ["FCFS", "LeastWorkLeft"], "routing_policy": ["RoundRobin", "JSQ"]}, seeds=(0, 1))
    assert len(expand_matrix(cfg)) == 4
    rows = run_matrix(cfg)
    assert len(rows) == 8
    assert {(r["batching_policy"], r["routing_policy"]) for r in rows} == {
        ("FCFS", "RoundRobin"), ("FCFS", "JSQ"), ("LeastWorkLeft", "RoundRobin"), ("LeastWorkLeft", "JSQ")
    }


def test_rl_policy_needs_checkpoint():
    with pytest.raises(ConfigError):
        build_policy(small_cfg(routing_policy="RL"))


def test_train_and_run_frozen_agent():
    cfg = small_cfg(workload=WorkloadConfig(n_requests=8, arrival_rate=10.0), agent=replace(ExperimentConfig().agent, batch_size=16, hidden=(8,)))
    res = train_agent(cfg, episodes=2)
    assert [s.episode for s in res.stats] == [0, 1]
    agent = res.agent
    agent.online[-1] = (np.zeros_like(agent.online[-1][0]), np.array([1.0, 0.0, 0.0]))
    out = run_experiment(replace(cfg, routing_policy="RL"), seed=0, agent=agent)
    assert out.report.aggregates["completed"] == 8
    assert {r.instance for r in out.report.requests} == {0}


def test_stalling_agent_scores_inf():
    cfg = small_cfg(workload=WorkloadConfig(n_requests=3, arrival_rate=10.0), cluster=EnvConfig(m=2, max_stall_s=1.0))
    agent = DQNAgent(state_dim(2), 3, replace(ExperimentConfig().agent, hidden=(4,)))
    agent.online[-1] = (np.zeros_like(agent.online[-1][0]), np.array([0.0, 0.0, 1.0]))
    with pytest.raises(StalledError):
        run_experiment(replace(cfg, routing_policy="RL"), agent=agent)
    assert evaluate(cfg, {"RL": agent, "RoundRobin": "RoundRobin"}, [0])["RL"] == [float("inf")]


# --------------------------------------------------------------------------- partition


def test_partition_small_case():
    reqs = random_small_requests(4, np.random.default_rng(0))
    res = brute_force_partition(reqs)
    assert len(res.log) == 16
    assert res.best <= res.mean <= res.worst
    assert res.random_over_best >= 0
    assert simulate_assignment(reqs, res.best_assignments[0]) == res.best


def test_partition_mirror_symmetry():
    base = random_small_requests(3, np.random.default_rng(1))
    dup = base + [Request(3 + r.id, r.task, r.prompt_tokens, r.true_decode_tokens, r.arrival_time) for r in base]
    res = brute_force_partition(dup)
    assert len(res.best_assignments) % 2 == 0
    values = dict(res.log)
    for a, v in res.log:
        assert values[tuple(1 - x for x in a)] == v


def test_partition_refuses_large_sets():
    with pytest.raises(ValueError, match="n <= 14"):
        brute_force_partition(random_small_requests(15, np.random.default_rng(0)))


def test_random_small_requests_ranges():
    reqs = random_small_requests(50, np.random.default_rng(2), 10, 100, 1.0)
    assert all(10 <= r.prompt_tokens <= 100 and 10 <= r.true_decode_tokens <= 100 for r in reqs)
    assert [r.arrival_time for r in reqs] == [float(k) for k in range(50)]


# --------------------------------------------------------------------------- config


def test_config_round_trip():
    cfg = small_cfg(seeds=(1, 2), matrix={"scenario": ["AllRandom"]})
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


@pytest.mark.parametrize(
    "data,where",
    [
        ({"cluster": {"m": 0}}, "config.cluster"),
        ({"cluster": {"kv_size": 5}}, "config.cluster"),
        ({"workload": {"kind": "scenario"}}, "config.workload"),
        ({"reward": {"gamma": 1.5}}, "config.reward"),
        ({"profile": {"prompt_time_per_token": -1}}, "config.profile"),
        ({"routing_policy": "Fastest"}, "config.routing_policy"),
        ({"matrix": {"batching_policy": ["LIFO"]}}, "config.matrix.batching_policy"),
        ({"matrix": {"m": [2]}}, "config.matrix.m"),
        ({"bogus": 1}, "config:"),
        ({"seeds": []}, "config.seeds"),
    ],
)
def test_config_errors_name_the_field(data, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        config_from_dict(data)


def test_invalid_json_reports_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "seeds": [1,\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(p)


def test_overrides():
    cfg = with_overrides(small_cfg(), batching_policy="BinPacking", scenario="LH_then_HL", chunk_size=64)
    assert cfg.cluster.batching_policy == "BinPacking" and cfg.cluster.chunk_size == 64
    assert cfg.workload.kind == "scenario" and cfg.workload.scenario == "LH_then_HL"


# --------------------------------------------------------------------------- calibrate


def test_fit_recovers_synthetic_profile():
    rng = np.random.default_rng(0)
    truth = HardwareProfile(prompt_time_intercept=0.03, prompt_time_per_token=2e-4, decode_time_base=0.015, decode_time_per_token=2e-6)
    from llmroute.calibrate import Measurement
    from llmroute.latency import decode_batch_time, prompt_batch_time

    ms = [Measurement("prefill", n, 0, prompt_batch_time(truth, int(n), 0)) for n in rng.integers(0, 4000, 40)]
    ms += [Measurement("decode", 1, k, decode_batch_time(truth, int(k))) for k in rng.integers(0, 20000, 40)]
    fit = fit_profile(ms).profile
    assert fit.prompt_time_intercept == pytest.approx(0.03) and fit.prompt_time_per_token == pytest.approx(2e-4)
    assert fit.decode_time_base == pytest.approx(0.015) and fit.decode_time_per_token == pytest.approx(2e-6)


def test_fit_measured_prefill_profile():
    fit = fit_profile(read_measurements(DATA / "prefill_profile_v100.csv"))
    assert fit.profile.prompt_time_intercept == pytest.approx(0.026, rel=0.05)
    assert 2.5e-4 < fit.profile.prompt_time_per_token < 3.2e-4


def test_measurement_errors_carry_line(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("phase,batch_tokens,kv_tokens,seconds\nprefill,10,0,0.03\nprefil,20,0,0.03\n")
    with pytest.raises(ValueError, match=":3:"):
        read_measurements(p)
    p.write_text("phase,seconds\n")
    with pytest.raises(ValueError, match="missing columns"):
        read_measurements(p)


# --------------------------------------------------------------------------- CLI


def write_cfg(tmp_path, **data):
    base = {"workload": {"n_requests": 12, "arrival_rate": 10.0}, "cluster": {"m": 2}}
    base.update(data)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(base))
    return p


def test_cli_run_is_byte_identical(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / d)]) == 0
    for name in ("summary.json", "requests.csv", "timeseries.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, cluster={"m": -1})
    assert main(["run", "--config", str(cfg)]) == 2
    assert "config.cluster" in capsys.readouterr().err


def test_cli_missing_file_exit_code(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 1
    assert main(["calibrate", str(tmp_path / "nope.csv")]) == 1


def test_cli_partition(tmp_path, capsys):
    assert main(["partition", "--n", "3", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "partition.json").read_text())
    assert summary["best"] <= summary["mean"] <= summary["worst"]
    assert len((tmp_path / "partition_log.csv").read_text().splitlines()) == 9
    assert main(["partition", "--n", "20", "--out", str(tmp_path)]) == 1


def test_cli_train_then_evaluate(tmp_path, capsys):
    cfg = write_cfg(tmp_path, agent={"batch_size": 16, "hidden": [8]}, matrix={"routing_policy": ["RoundRobin", "JSQ"]})
    assert main(["train", "--config", str(cfg), "--episodes", "1", "--out", str(tmp_path / "t")]) == 0
    ckpt = tmp_path / "t" / "agent.bin"
    assert ckpt.exists() and (tmp_path / "t" / "agent.bin.json").exists()
    assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(ckpt), "--out", str(tmp_path / "e")]) == 0
    res = json.loads((tmp_path / "e" / "evaluation.json").read_text())
    assert set(res["mean_e2e"]) == {"RL", "RoundRobin", "JSQ"}


def test_cli_calibrate(tmp_path, capsys):
    assert main(["calibrate", str(DATA / "prefill_profile_v100.csv"), "--out", str(tmp_path)]) == 0
    prof = json.loads((tmp_path / "profile.json").read_text())["profile"]
    assert prof["decode_time_base"] == HardwareProfile().decode_time_base
