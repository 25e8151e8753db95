import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from llmroute.impact import ImpactConfig, heuristic_h
from llmroute.instance import Instance
from llmroute.latency import HardwareProfile, estimate_request_time
from llmroute.predictor import OraclePredictor
from llmroute.routers import (
    HEURISTICS,
    QUEUE_CLAMP,
    ClusterEnv,
    ConfigError,
    EnvConfig,
    RewardConfig,
    ShapingMode,
    SystemState,
    compute_reward,
    encode_state,
    guidance_discount,
    instance_load,
    make_heuristic,
    outstanding_penalty,
    request_h,
    route_heuristic,
    run_policy,
    shaping_coefficient,
    state_dim,
)
from llmroute.workload import Request, generate_mixture

P = HardwareProfile()


def req(i, p, d, t=0.0):
    return Request(i, "x", p, d, t)


def idle(m):
    return [Instance(index=k) for k in range(m)]


def test_state_dim():
    assert state_dim(4) == 27


def test_idle_state_encoding():
    s = encode_state(SystemState([], idle(4), 0.0))
    assert s.shape == (27,)
    for k in range(4):
        assert list(s[6 * k : 6 * k + 6]) == [0, 0, 0, 0, 1.0, 0.0]
    assert list(s[24:]) == [0, 0, 0]


def test_queue_length_clamped():
    queue = [req(i, 5, 5) for i in range(600)]
    s = encode_state(SystemState(queue, idle(2), 0.0))
    assert s[12] == 1.0 == QUEUE_CLAMP / 512


def test_one_decode_request_on_instance_zero():
    insts = idle(4)
    r = req(0, 10, 101)
    insts[0].enqueue(r)
    insts[0].step()
    s = encode_state(SystemState([], insts, 0.0))
    assert np.count_nonzero(s[6:24] - np.tile([0, 0, 0, 0, 1.0, 0.0], 3)) == 0
    assert s[1] == pytest.approx(1 / 128)
    assert s[5] == round(100 * P.decode_time_base, 2)
    assert s[4] == round(insts[0].capacity(), 2) == 1.0


def test_head_block():
    r = req(0, 512, 10)
    r.predicted_bucket = 2
    s = encode_state(SystemState([r], idle(1), 0.0))
    assert list(s[6:]) == [1 / 512, 0.5, 2]


def test_round_robin_sequence():
    pol = make_heuristic("RoundRobin")
    system = SystemState([req(0, 5, 5)], idle(4), 0.0)
    assert [route_heuristic(pol, system) for _ in range(5)] == [0, 1, 2, 3, 0]


def test_empty_queue_defers_for_every_policy():
    system = SystemState([], idle(3), 0.0)
    for name in HEURISTICS:
        assert make_heuristic(name)(system) == 3


def test_jsq_argmin():
    insts = idle(4)
    for k, load in enumerate((100, 50, 200, 80)):
        insts[k].enqueue(req(k, load - 10, 10))
    system = SystemState([req(9, 5, 5)], insts, 0.0)
    assert make_heuristic("JSQ")(system) == 1


def test_decode_balancer_greedy():
    insts = idle(2)
    insts[0].enqueue(req(0, 5, 1000))
    insts[1].enqueue(req(1, 5, 400))
    incoming = req(2, 5, 300)
    a = make_heuristic("DecodeBalancer")(SystemState([incoming], insts, 0.0))
    assert a == 1
    insts[a].enqueue(incoming)
    assert [i.pending_true_decode() for i in insts] == [1000, 700]


def test_dedicated_split():
    pol = make_heuristic("DedicatedSmallLarge")
    insts = idle(4)
    heavy = [pol(SystemState([req(0, 10, 600)], insts, 0.0)) for _ in range(3)]
    light = [pol(SystemState([req(0, 10, 20)], insts, 0.0)) for _ in range(3)]
    assert heavy == [2, 3, 2] and light == [0, 1, 0]


def test_max_capacity_samples_once_per_interval():
    pol = make_heuristic("MaxCapacity")
    insts = [Instance(kv_capacity_tokens=1000, index=k) for k in range(2)]
    head = req(0, 300, 300)
    assert pol(SystemState([head], insts, 0.0)) == 0
    assert pol(SystemState([head], insts, 0.02)) == 1  # local copy of instance 0 was decremented
    assert pol(SystemState([head], insts, 0.04)) == 2  # both look full until the next sample
    assert pol(SystemState([head], insts, 1.0)) == 0


def test_min_min_prefers_smaller_backlog():
    insts = idle(2)
    insts[0].enqueue(req(0, 500, 500))
    assert make_heuristic("MinMin")(SystemState([req(1, 5, 5)], insts, 0.0)) == 1


def test_least_impact_has_zero_h():
    insts = idle(3)
    insts[0].enqueue(req(0, 800, 50))
    insts[0].step()
    head = req(1, 300, 100)
    a = make_heuristic("LeastImpact")(SystemState([head], insts, 0.0))
    assert request_h(ImpactConfig(), head, insts, a) == 0.0
    assert request_h(ImpactConfig(), head, insts, 0) < 0


def test_unknown_policy():
    with pytest.raises(ConfigError):
        make_heuristic("Random")


def test_instance_load_counts_processed_tokens():
    inst = Instance()
    inst.enqueue(req(0, 100, 10))
    assert instance_load(inst) == 0
    inst.step()
    assert instance_load(inst) == 101


# --------------------------------------------------------------------------- reward


def test_reward_empty_is_zero():
    assert compute_reward([], 0, 0.0, RewardConfig(), 0).total == 0.0


def test_reward_single_completion():
    assert compute_reward([], 1, 0.0, RewardConfig(), 0).total == 60.0


def test_reward_unscheduled_request_term():
    r = req(0, 1, 1)
    r.predicted_decode_tokens = 1
    profile = HardwareProfile(prompt_time_per_token=5.0, decode_time_base=5.0, decode_time_per_token=1e-6)
    assert estimate_request_time(profile, 1, 1) == 10.0
    assert compute_reward([r], 0, 0.0, RewardConfig(), 0, profile).total == pytest.approx(-0.1)


def test_fraction_clamped_at_one():
    r = req(0, 10, 500)
    r.predicted_decode_tokens = 250
    r.tokens_emitted = 400
    assert outstanding_penalty(P, [r]) == 0.0


def test_shaping_schedule():
    cfg = RewardConfig(shaping_mode="guided")
    c = [shaping_coefficient(cfg, k) for k in range(60)]
    assert c[0] == cfg.gamma
    assert all(b < a for a, b in zip(c, c[1:]))
    assert c[50] / c[0] == pytest.approx(math.exp(-25), abs=1e-12)
    assert guidance_discount(cfg, 0) == 0.0
    for k in (0, 5, 50):
        assert cfg.gamma - guidance_discount(cfg, k) == pytest.approx(c[k], abs=1e-15)


def test_shaping_modes():
    assert shaping_coefficient(RewardConfig(), 3) == 0.0
    assert shaping_coefficient(RewardConfig(shaping_mode="additive"), 3) == 1.0
    assert guidance_discount(RewardConfig(), 3) == 0.99


def test_guided_reward_converges_to_unshaped():
    for k, tol in ((0, 1.0), (5, 0.1), (50, 1e-9)):
        parts = compute_reward([], 0, -1.0, RewardConfig(shaping_mode="guided"), k)
        assert abs(parts.total - parts.unshaped) <= tol


def test_reward_config_validation():
    for bad in (dict(r_w=0), dict(gamma=1.0), dict(beta_d=0), dict(shaping_mode="bogus")):
        with pytest.raises(ValueError):
            RewardConfig(**bad)


# --------------------------------------------------------------------------- environment


def test_defer_on_idle_system():
    env = ClusterEnv([req(0, 5, 5, 10.0)], EnvConfig(m=2))
    _, r, done, info = env.step(2)
    assert env.clock == pytest.approx(0.02) and r == 0.0 and not done and info.routed is None


def test_single_request_rollout_ends_with_completion_reward():
    env = ClusterEnv([req(0, 20, 5)], EnvConfig(m=1), record_trajectory=True)
    total = 0.0
    _, r, done, info = env.step(0)
    total += r
    last = r
    while not done:
        _, last, done, info = env.step(1)
        total += last
    assert info.completions == 1 and last == 60.0
    assert env.completed_requests()[0].done


def test_invalid_action_treated_as_defer(caplog):
    env = ClusterEnv([req(0, 90, 30)], EnvConfig(m=1, kv_capacity_tokens=100))
    _, _, _, info = env.step(0)
    assert info.invalid and info.routed is None and len(env.queue) == 1
    assert "cannot fit" in caplog.text


def test_action_bounds():
    env = ClusterEnv([req(0, 5, 5)], EnvConfig(m=2))
    with pytest.raises(ValueError):
        env.step(3)


def test_guided_shaping_more_negative_on_saturated_instance():
    def h_for(action):
        env = ClusterEnv([req(0, 50, 50), req(1, 300, 100, 0.0)], EnvConfig(m=2), reward_config=RewardConfig(shaping_mode="guided"))
        env.step(0)
        for _ in range(10):
            env.step(2)
        _, _, _, info = env.step(action)
        return info.parts.coefficient * info.parts.h

    assert h_for(0) < h_for(1) == 0.0


def test_router_serves_in_arrival_order():
    trace = generate_mixture(40, 20.0, np.random.default_rng(0))
    env = ClusterEnv(trace.requests, EnvConfig(m=2), predictor=OraclePredictor(), compute_rewards=False)
    run_policy(env, make_heuristic("JSQ"))
    routed = sorted(env.requests, key=lambda r: (r.routed_time, r.id))
    assert [r.id for r in routed] == sorted(r.id for r in env.requests)


@given(st.integers(0, 2**31))
def test_trajectory_deterministic_and_shaping_exact(seed):
    trace = generate_mixture(15, 20.0, np.random.default_rng(seed))

    def roll():
        env = ClusterEnv(trace.requests, EnvConfig(m=2), reward_config=RewardConfig(shaping_mode="guided"), record_trajectory=True)
        run_policy(env, make_heuristic("RoundRobin"))
        return env.trajectory

    a, b = roll(), roll()
    assert a == b
    for row in a:
        assert row["reward"] == row["unshaped_reward"] - row["coefficient"] * row["h"]
        assert 0 <= row["action"] <= 2


def test_write_trajectory(tmp_path):
    env = ClusterEnv([req(0, 5, 5)], EnvConfig(m=2), record_trajectory=True)
    run_policy(env, make_heuristic("RoundRobin"))
    path = tmp_path / "traj.csv"
    env.write_trajectory(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "tick,action,reward,queue_len,occupancy_0,occupancy_1"
    assert len(lines) == len(env.trajectory) + 1


def test_stall_cutoff_ends_episode():
    env = ClusterEnv([req(0, 5, 5)], EnvConfig(m=2, max_stall_s=1.0), compute_rewards=False)
    ticks = 0
    while not env.done:
        env.step(2)
        ticks += 1
    # idleness is first observed after the first tick
    assert env.stalled and ticks == 51 and not env.completed_requests()
