"""Fit latency-profile slopes from measured iteration times."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .latency import HardwareProfile

MEASUREMENT_COLUMNS = ("phase", "batch_tokens", "kv_tokens", "seconds")


@dataclass(frozen=True)
class Measurement:
    phase: str  # "prefill" or "decode"
    batch_tokens: int  # prompt tokens processed (prefill); ignored for decode
    kv_tokens: int  # tokens in flight
    seconds: float


@dataclass
class CalibrationFit:
    profile: HardwareProfile
    prefill_rmse: Optional[float]
    decode_rmse: Optional[float]
    notes: List[str]


def read_measurements(path) -> List[Measurement]:
    path = Path(path)
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MEASUREMENT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}; expected {list(MEASUREMENT_COLUMNS)}")
        for line, row in enumerate(reader, start=2):
            try:
                m = Measurement(row["phase"].strip(), int(row["batch_tokens"]), int(row["kv_tokens"]), float(row["seconds"]))
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
            if m.phase not in ("prefill", "decode"):
                raise ValueError(f"{path}:{line}: phase must be 'prefill' or 'decode', got {m.phase!r}")
            if m.batch_tokens < 0 or m.kv_tokens < 0 or not m.seconds > 0:
                raise ValueError(f"{path}:{line}: token counts must be >= 0 and seconds > 0")
            out.append(m)
    if not out:
        raise ValueError(f"{path}: no measurements")
    return out


def _lstsq(design: np.ndarray, y: np.ndarray):
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    rmse = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return coef, rmse


def fit_profile(measurements: List[Measurement], base: HardwareProfile = HardwareProfile()) -> CalibrationFit:
    """Least-squares fit of the affine iteration-time model.

    Prefill rows fit intercept and per-prompt-token slope; decode rows fit the
    per-iteration base and per-KV-token slope. A slope is only fitted when its
    regressor varies, otherwise the ``base`` value is kept.
    """
    notes = []
    fitted = {}
    pre = [m for m in measurements if m.phase == "prefill"]
    dec = [m for m in measurements if m.phase == "decode"]
    pre_rmse = dec_rmse = None
    if pre:
        x = np.array([m.batch_tokens for m in pre], dtype=float)
        y = np.array([m.seconds for m in pre])
        if np.ptp(x) == 0:
            raise ValueError("prefill measurements need more than one distinct batch size")
        empty = x == 0
        if empty.any():
            # an empty-batch measurement pins the launch overhead directly
            intercept = float(y[empty].mean())
            slope, _ = _lstsq(x[~empty, None], y[~empty] - intercept)
            coef = np.array([intercept, slope[0]])
            pre_rmse = float(np.sqrt(np.mean((coef[0] + coef[1] * x - y) ** 2)))
            notes.append("prefill intercept taken from zero-token rows")
        else:
            coef, pre_rmse = _lstsq(np.column_stack([np.ones_like(x), x]), y)
        fitted["prompt_time_intercept"], fitted["prompt_time_per_token"] = coef
    else:
        notes.append("no prefill rows; prefill parameters kept")
    if dec:
        kv = np.array([m.kv_tokens for m in dec], dtype=float)
        y = np.array([m.seconds for m in dec])
        if np.ptp(kv) == 0:
            fitted["decode_time_base"] = float(y.mean())
            notes.append("decode kv_tokens constant; decode slope kept")
            dec_rmse = float(y.std())
        else:
            coef, dec_rmse = _lstsq(np.column_stack([np.ones_like(kv), kv]), y)
            fitted["decode_time_base"], fitted["decode_time_per_token"] = coef
    else:
        notes.append("no decode rows; decode parameters kept")
    try:
        profile = replace(base, **{k: float(v) for k, v in fitted.items()})
    except ValueError as exc:
        raise ValueError(f"fitted profile is invalid: {exc}") from None
    return CalibrationFit(profile, pre_rmse, dec_rmse, notes)
