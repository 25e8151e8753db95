import math
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from llmroute.latency import (
    PAPER_SLOPES,
    HardwareProfile,
    RequestClass,
    Thresholds,
    classify_request,
    decode_batch_time,
    estimate_instance_available,
    estimate_request_time,
    heavy_decode_min_tokens,
    heavy_prompt_min_tokens,
    prompt_batch_time,
)

P = HardwareProfile()
T = Thresholds()
counts = st.integers(min_value=0, max_value=200_000)


def test_prompt_time_intercept_only():
    assert prompt_batch_time(P, 0, 0) == pytest.approx(0.026)


def test_prompt_time_hand_computed():
    # 0.026 + 3.2e-4 * 1000 + 3.3e-5 * 500
    assert prompt_batch_time(PAPER_SLOPES, 1000, 500) == pytest.approx(0.3625, abs=1e-12)


def test_prompt_time_matches_profiled_point_loosely():
    # profiled 0.8025 s at 2720 tokens; the printed slope overshoots the plotted data by ~12%
    assert prompt_batch_time(P, 2720, 0) == pytest.approx(0.8025, rel=0.15)


def test_decode_time_base_and_slope():
    assert decode_batch_time(P, 0) == P.decode_time_base
    assert decode_batch_time(PAPER_SLOPES, 10_000) == pytest.approx(PAPER_SLOPES.decode_time_base + 0.33)


@given(counts, counts)
def test_batch_times_affine_and_increasing(a, b):
    lo, hi = sorted((a, b))
    assert decode_batch_time(P, lo) <= decode_batch_time(P, hi)
    assert prompt_batch_time(P, lo) <= prompt_batch_time(P, hi)
    assert decode_batch_time(P, 2 * hi) >= decode_batch_time(P, hi)
    mid = decode_batch_time(P, lo) + decode_batch_time(P, hi)
    assert mid == pytest.approx(2 * decode_batch_time(P, (lo + hi) / 2))


def test_estimate_request_time_17_seconds():
    assert estimate_request_time(P, 1000, 1000) == pytest.approx(17.0, rel=0.02)


def test_estimate_request_time_small_cases():
    assert estimate_request_time(P, 1, 0) == P.prompt_time_per_token
    assert estimate_request_time(P, 500, 500) == pytest.approx(500 * 3.2e-4 + 500 * 0.01668)


@given(st.integers(1, 5000), st.integers(0, 5000), st.integers(0, 5000))
def test_estimate_request_time_additive_in_decode(p, d1, d2):
    lhs = estimate_request_time(P, p, d1 + d2)
    rhs = estimate_request_time(P, p, d1) + d2 * P.decode_time_base
    assert lhs == pytest.approx(rhs, abs=1e-9)
    assert estimate_request_time(P, p, 0) == p * P.prompt_time_per_token


def test_instance_available():
    assert estimate_instance_available(P, 0) == 0
    assert estimate_instance_available(P, 100) == pytest.approx(100 * P.decode_time_base)
    assert estimate_instance_available(P, -3) == 0


def test_heavy_prompt_boundary():
    n = heavy_prompt_min_tokens(P, T)
    assert n == math.ceil(0.5 / 3.2e-4) == 1563
    assert classify_request(P, T, n, 1).heavy_prompt
    assert not classify_request(P, T, n - 1, 1).heavy_prompt


def test_heavy_decode_boundary():
    n = heavy_decode_min_tokens(P, T)
    assert n == 300
    assert classify_request(P, T, 1, n).heavy_decode
    assert not classify_request(P, T, 1, n - 1).heavy_decode


def test_classify_small_request():
    assert classify_request(P, T, 10, 10) is RequestClass.LL
    assert classify_request(P, T, 2000, 1000) is RequestClass.HH


@given(st.integers(1, 6000), st.integers(0, 6000), st.floats(0.25, 4.0))
def test_classification_invariant_under_rescaling(p, d, k):
    # scaling both slopes and both thresholds by k keeps every product comparison
    scaled = replace(P, prompt_time_per_token=P.prompt_time_per_token * k, decode_time_base=P.decode_time_base * k)
    t2 = Thresholds(T.heavy_prompt_seconds * k, T.heavy_decode_seconds * k)
    a = classify_request(P, T, p, d)
    b = classify_request(scaled, t2, p, d)
    # exact boundary products can flip under float rounding
    near = abs(p * P.prompt_time_per_token - 0.5) < 1e-9 or abs(d * P.decode_time_base - 5.0) < 1e-9
    assert a is b or near


def test_profile_validation():
    with pytest.raises(ValueError):
        HardwareProfile(prompt_time_per_token=0)
    with pytest.raises(ValueError):
        HardwareProfile(prompt_time_per_token=1e-6, decode_time_per_token=1e-5)
    with pytest.raises(ValueError):
        HardwareProfile.from_dict({"bogus": 1})
    assert HardwareProfile.from_dict(P.to_dict()) == P
    assert P.tokens_per_second_decode == pytest.approx(1 / 0.01668)


def test_threshold_validation():
    with pytest.raises(ValueError):
        Thresholds(5.0, 0.5)
    with pytest.raises(ValueError):
        Thresholds(-1, 5)
