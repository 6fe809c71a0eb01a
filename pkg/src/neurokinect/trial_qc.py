"""Bad-trial rejection.

A trial is rejected when the participant reacted too slowly, or when its
per-channel amplitude signature strays too far (RMSE) from a reference built
from the first trials of the session. The signature of one channel is the
largest 5-point moving average of |EEG| in the 1.5 s after LED onset.

Signatures are computed on whatever EEG the trial carries; the pipeline
hands in decimated, de-meaned and bandpassed trials (amplitude information is
lost after standardization).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NotEnoughTrials, SchemaViolation, SpanTooShort
from .ingest import TrialRecord

KEPT = "kept"
REJECTED_RT = "rejected_rt"
REJECTED_RMSE = "rejected_rmse"
REJECTED_SPAN = "rejected_span"
VERDICTS = (KEPT, REJECTED_RT, REJECTED_RMSE, REJECTED_SPAN)

# Two empirically chosen thresholds are in use for this dataset; which subject
# got which is not known, so neither is the default.
RMSE_PRESETS = {"strict": 100.0, "lenient": 150.0}


@dataclass(frozen=True)
class QcConfig:
    rmse_threshold: float
    ma_window: int = 5
    post_led_span_ms: float = 1500.0
    rt_limit_s: float = 0.5
    reference_trials: int = 10

    def __post_init__(self):
        if self.ma_window < 1:
            raise SchemaViolation("qc.ma_window must be >= 1", field="ma_window", reason="range")
        if not self.rt_limit_s > 0:
            raise SchemaViolation("qc.rt_limit_s must be > 0", field="rt_limit_s", reason="range")
        if not self.rmse_threshold > 0:
            raise SchemaViolation("qc.rmse_threshold must be > 0", field="rmse_threshold", reason="range")
        if self.reference_trials < 1:
            raise SchemaViolation("qc.reference_trials must be >= 1", field="reference_trials", reason="range")

    @classmethod
    def preset(cls, name: str, **overrides) -> "QcConfig":
        return cls(rmse_threshold=RMSE_PRESETS[name], **overrides)

    @classmethod
    def response_time_only(cls, **overrides) -> "QcConfig":
        return cls(rmse_threshold=math.inf, **overrides)


@dataclass
class QcReport:
    trial_ids: list[str]
    verdicts: list[str]
    rmse: list[float]
    response_time_s: list[float]
    reference_signature: np.ndarray
    reasons: dict[str, str] = field(default_factory=dict)

    def kept_ids(self) -> list[str]:
        return [t for t, v in zip(self.trial_ids, self.verdicts) if v == KEPT]

    def verdict(self, trial_id: str) -> str:
        return self.verdicts[self.trial_ids.index(trial_id)]

    def counts(self) -> dict[str, int]:
        return {v: self.verdicts.count(v) for v in VERDICTS}

    @property
    def kept_fraction(self) -> float:
        return len(self.kept_ids()) / len(self.trial_ids) if self.trial_ids else 0.0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial_id", "verdict", "response_time_s", "rmse"])
            for row in zip(self.trial_ids, self.verdicts, self.response_time_s, self.rmse):
                w.writerow([row[0], row[1], repr(float(row[2])), repr(float(row[3]))])


def read_qc_csv(path: str | Path) -> dict[str, str]:
    """Map trial_id -> verdict from a report written by :meth:`QcReport.write_csv`."""
    with open(path, newline="") as fh:
        return {row["trial_id"]: row["verdict"] for row in csv.DictReader(fh)}


def moving_average_max(x: np.ndarray, window: int) -> np.ndarray:
    """Row-wise maximum of the ``window``-point moving average of ``|x|``."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    if a.shape[-1] < window:
        raise SpanTooShort(f"span of {a.shape[-1]} samples shorter than window {window}")
    c = np.cumsum(np.pad(a, [(0, 0)] * (a.ndim - 1) + [(1, 0)]), axis=-1)
    sums = c[..., window:] - c[..., :-window]
    return sums.max(axis=-1) / window


def max_moving_average(trial: TrialRecord, cfg: QcConfig) -> np.ndarray:
    """Per-channel signature over [LED onset, LED onset + span)."""
    n = int(math.floor(cfg.post_led_span_ms / 1000.0 * trial.sample_rate_hz + 1e-9))
    start = trial.led_onset_sample
    span = trial.eeg[:, start : start + n]
    if span.shape[1] < cfg.ma_window:
        raise SpanTooShort(
            f"trial {trial.trial_id}: {span.shape[1]} post-LED samples, window is {cfg.ma_window}",
            trial_id=trial.trial_id,
        )
    return moving_average_max(span, cfg.ma_window)


def build_reference(signatures: Sequence[np.ndarray], cfg: QcConfig) -> np.ndarray:
    if len(signatures) < cfg.reference_trials:
        raise NotEnoughTrials(f"need {cfg.reference_trials} reference trials, got {len(signatures)}")
    return np.mean(np.stack(signatures[: cfg.reference_trials]), axis=0)


def flag_bad_trials(trials: Sequence[TrialRecord], cfg: QcConfig) -> QcReport:
    signatures: dict[str, np.ndarray] = {}
    reasons: dict[str, str] = {}
    for t in trials:
        try:
            signatures[t.trial_id] = max_moving_average(t, cfg)
        except SpanTooShort as exc:
            reasons[t.trial_id] = str(exc)

    # first trials in session order, whatever their own verdict
    ref_sigs = [signatures[t.trial_id] for t in trials if t.trial_id in signatures]
    reference = build_reference(ref_sigs, cfg)

    verdicts, rmses = [], []
    for t in trials:
        sig = signatures.get(t.trial_id)
        rmse = float(np.sqrt(np.mean((sig - reference) ** 2))) if sig is not None else math.nan
        if t.response_time_s > cfg.rt_limit_s:
            v = REJECTED_RT
        elif sig is None:
            v = REJECTED_SPAN
        elif rmse > cfg.rmse_threshold:
            v = REJECTED_RMSE
        else:
            v = KEPT
        verdicts.append(v)
        rmses.append(rmse)
    return QcReport(
        trial_ids=[t.trial_id for t in trials],
        verdicts=verdicts,
        rmse=rmses,
        response_time_s=[float(t.response_time_s) for t in trials],
        reference_signature=reference,
        reasons=reasons,
    )
