"""LED-locked epochs, baseline correction and two-stage (trial, then subject) averages."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyInput, InsufficientPrePost, InvalidConfig
from .ingest import Session
from .preprocess import FilterSpec, bandpass, decimate, rate_factor, remove_dc


@dataclass(frozen=True)
class EpochWindow:
    pre_ms: float = 1000.0
    post_ms: float = 6000.0
    baseline_ms: float = 1000.0  # measured from the epoch start

    def samples(self, fs: float) -> tuple[int, int, int]:
        pre = int(round(self.pre_ms * fs / 1000.0))
        post = int(round(self.post_ms * fs / 1000.0))
        base = int(round(self.baseline_ms * fs / 1000.0))
        if pre < 0 or post < 1 or not 1 <= base <= pre + post:
            raise InvalidConfig(f"bad epoch window {self} at {fs} Hz")
        return pre, post, base


@dataclass
class Epochs:
    data: np.ndarray  # (trials, N, T_epoch)
    trial_ids: list[str]
    fs: float
    window: EpochWindow = field(default_factory=EpochWindow)

    @property
    def times_ms(self) -> np.ndarray:
        pre, _, _ = self.window.samples(self.fs)
        return (np.arange(self.data.shape[2]) - pre) * 1000.0 / self.fs


def epoch_trials(session: Session, fs: float | None = None, window: EpochWindow = EpochWindow(),
                 filter_spec: FilterSpec | None = None, trial_ids: Sequence[str] | None = None,
                 exclude_channels: Sequence[int] = ()) -> Epochs:
    """Cut (pre, post) epochs around each LED onset.

    Each whole record is optionally decimated to ``fs``, de-meaned and
    bandpassed before cutting. ``exclude_channels`` drops channel indices
    (for example frontal channels contaminated by eye movements).
    """
    spec = filter_spec or FilterSpec()
    wanted = set(trial_ids) if trial_ids is not None else None
    trials = [t for t in session.trials if wanted is None or t.trial_id in wanted]
    keep = [c for c in range(session.manifest.n_channels) if c not in set(exclude_channels)]
    out, ids = [], []
    target_fs = None
    for t in trials:
        fs_out = t.sample_rate_hz if fs is None else fs
        factor = rate_factor(t.sample_rate_hz, fs_out)
        pre, post, _ = window.samples(fs_out)
        led = t.led_onset_sample // factor
        n_out = t.eeg.shape[1] // factor
        if led - pre < 0 or led + post > n_out:
            raise InsufficientPrePost(
                f"trial {t.trial_id}: needs {pre} samples before and {post} after the LED at {fs_out} Hz, "
                f"has {led} and {n_out - led}", trial_id=t.trial_id)
        eeg = decimate(t.eeg[keep], factor) if factor > 1 else np.asarray(t.eeg[keep], dtype=np.float64)
        eeg = bandpass(remove_dc(eeg), spec, fs_out)
        out.append(eeg[:, led - pre : led + post])
        ids.append(t.trial_id)
        target_fs = fs_out
    if not out:
        raise EmptyInput("no trials to epoch")
    return Epochs(np.stack(out), ids, float(target_fs), window)


def baseline_correct(ep: Epochs) -> Epochs:
    """Subtract each trial/channel mean over the baseline span."""
    _, _, base = ep.window.samples(ep.fs)
    data = ep.data - ep.data[:, :, :base].mean(axis=2, keepdims=True)
    return Epochs(data, list(ep.trial_ids), ep.fs, ep.window)


@dataclass
class ErpResult:
    subject_averages: dict[str, np.ndarray]  # subject -> (N, T)
    grand_average: np.ndarray  # (N, T)
    erp_trace: np.ndarray  # (T,) channel sum of the grand average
    times_ms: np.ndarray
    excluded: list[str] = field(default_factory=list)


def averages(per_subject: Mapping[str, Epochs], kept_fraction: Mapping[str, float] | None = None,
             min_kept_fraction: float = 0.6) -> ErpResult:
    """Average trials within each subject, then subjects with equal weight.

    Subjects whose kept-trial fraction is below ``min_kept_fraction`` are
    left out of the grand average (but still get a subject average).
    """
    subj = {k: v for k, v in per_subject.items() if v.data.shape[0] > 0}
    if not subj:
        raise EmptyInput("no subject has any epochs")
    subject_avg = {k: v.data.mean(axis=0) for k, v in subj.items()}
    kept_fraction = kept_fraction or {}
    included = [k for k in subject_avg if kept_fraction.get(k, 1.0) >= min_kept_fraction]
    excluded = [k for k in subject_avg if k not in included]
    if not included:
        raise EmptyInput("every subject falls below the kept-trial fraction")
    grand = np.mean(np.stack([subject_avg[k] for k in included]), axis=0)
    times = next(iter(subj.values())).times_ms
    return ErpResult(subject_avg, grand, grand.sum(axis=0), times, excluded)


def write_erp_csv(path: str | Path, result: ErpResult) -> None:
    N = result.grand_average.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ms"] + [f"ch_{i + 1}" for i in range(N)] + ["erp_trace"])
        for j, t in enumerate(result.times_ms):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in result.grand_average[:, j]]
                       + [repr(float(result.erp_trace[j]))])


def read_erp_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (times_ms, grand_average (N, T), erp_trace)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    vals = np.array([[float(v) for v in r] for r in rows[1:]])
    return vals[:, 0], vals[:, 1:-1].T, vals[:, -1]
