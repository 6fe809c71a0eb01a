"""Signal conditioning for EEG and wrist kinematics.

Stage order for decoding is decimate -> remove_dc -> bandpass -> (QC) ->
crop/align -> standardize. All functions are pure and operate on
``(channels, samples)`` arrays.

Filter edges
------------
The bandpass is a Kaiser-window FIR with these documented stopband edges:

* lower stop edge = 0.2 * pass_lo_hz (0.1 Hz for the default 0.5 Hz edge)
* upper stop edge = pass_hi_hz + 3 Hz (15 Hz for the default 12 Hz edge)

When the upper stop edge lies at or beyond Nyquist (e.g. fs = 25 Hz) the
upper transition is not realizable and is omitted; the band is then limited
from above by the decimation anti-alias filter. Tap count is grown until a
dense frequency-response check confirms the requested stopband attenuation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import signal

from .errors import (
    DegenerateAxis,
    FactorTooLarge,
    KinLongerThanEeg,
    UnrealizableSpec,
    ZeroVariance,
)
from .ingest import TrialRecord

FILTER_MODES = ("causal", "zero_phase")
ANTIALIAS_MODES = ("on", "paper_literal")

LOW_STOP_RATIO = 0.2
HIGH_STOP_OFFSET_HZ = 3.0
ANTIALIAS_PASS_FRACTION = 0.8


@dataclass(frozen=True)
class ScalerParams:
    ax_min: np.ndarray
    ax_max: np.ndarray


@dataclass(frozen=True)
class ChannelStats:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class FilterSpec:
    pass_lo_hz: float = 0.5
    pass_hi_hz: float = 12.0
    stop_atten_db: float = 60.0
    design: str = "zero_phase"

    @property
    def stop_lo_hz(self) -> float:
        return LOW_STOP_RATIO * self.pass_lo_hz

    @property
    def stop_hi_hz(self) -> float:
        return self.pass_hi_hz + HIGH_STOP_OFFSET_HZ

    def validate(self, fs: float) -> None:
        if self.design not in FILTER_MODES:
            raise UnrealizableSpec(f"unknown filter design {self.design!r}")
        if not (0 < self.pass_lo_hz < self.pass_hi_hz < fs / 2):
            raise UnrealizableSpec(
                f"need 0 < {self.pass_lo_hz} < {self.pass_hi_hz} < fs/2 = {fs / 2}",
                fs=fs,
            )
        if self.stop_atten_db <= 0:
            raise UnrealizableSpec("stop_atten_db must be positive")


@dataclass(frozen=True)
class PreprocessConfig:
    fs_out_hz: float = 25.0
    pass_band: tuple[float, float] = (0.5, 12.0)
    stop_atten_db: float = 60.0
    filter_mode: str = "zero_phase"
    antialias: str = "on"

    @property
    def filter_spec(self) -> FilterSpec:
        lo, hi = self.pass_band
        return FilterSpec(lo, hi, self.stop_atten_db, self.filter_mode)


# --------------------------------------------------------------------------
# kinematics


def scale_kinematics(kin: np.ndarray) -> tuple[np.ndarray, ScalerParams]:
    """Min-max scale each axis of a ``3 x T`` trajectory to [0, 1]."""
    kin = np.asarray(kin, dtype=np.float64)
    if kin.ndim != 2 or kin.shape[1] < 2:
        raise DegenerateAxis(f"need a (3, T>=2) trajectory, got shape {kin.shape}")
    lo = kin.min(axis=1)
    hi = kin.max(axis=1)
    flat = np.flatnonzero(hi == lo)
    if flat.size:
        raise DegenerateAxis(f"axis {int(flat[0])} is constant", axis=int(flat[0]))
    scaled = (kin - lo[:, None]) / (hi - lo)[:, None]
    return scaled, ScalerParams(lo, hi)


def inverse_scale(scaled: np.ndarray, params: ScalerParams) -> np.ndarray:
    lo, hi = params.ax_min, params.ax_max
    return np.asarray(scaled) * (hi - lo)[:, None] + lo[:, None]


# --------------------------------------------------------------------------
# FIR design and application


def _kaiser_taps(atten_db: float, width_norm: float) -> tuple[int, float]:
    numtaps, beta = signal.kaiserord(atten_db, width_norm)
    return numtaps | 1, beta  # odd length -> type I, valid for highpass


def _min_stop_atten(h: np.ndarray, fs: float, stop_bands) -> float:
    worst = np.inf
    for lo, hi in stop_bands:
        f = np.linspace(lo, hi, 512)
        _, H = signal.freqz(h, worN=f, fs=fs)
        worst = min(worst, -20 * np.log10(np.max(np.abs(H)) + 1e-300))
    return worst


@lru_cache(maxsize=64)
def _bandpass_taps(pass_lo: float, pass_hi: float, atten: float, fs: float) -> np.ndarray:
    nyq = fs / 2
    stop_lo = LOW_STOP_RATIO * pass_lo
    stop_hi = pass_hi + HIGH_STOP_OFFSET_HZ
    has_upper = stop_hi < nyq
    widths = [pass_lo - stop_lo] + ([stop_hi - pass_hi] if has_upper else [])
    numtaps, beta = _kaiser_taps(atten, min(widths) / nyq)
    cutoffs = [(pass_lo + stop_lo) / 2] + ([(pass_hi + stop_hi) / 2] if has_upper else [])
    stop_bands = [(0.0, stop_lo)] + ([(stop_hi, nyq)] if has_upper else [])
    for _ in range(100):
        h = signal.firwin(numtaps, cutoffs, window=("kaiser", beta), pass_zero=False, fs=fs)
        if _min_stop_atten(h, fs, stop_bands) >= atten:
            break
        numtaps = (numtaps + max(2, numtaps // 25)) | 1
    else:  # pragma: no cover - kaiserord is never this far off
        raise UnrealizableSpec("filter design did not converge")
    h.setflags(write=False)
    return h


def design_bandpass(spec: FilterSpec, fs: float) -> np.ndarray:
    """Linear-phase FIR taps meeting ``spec`` at sample rate ``fs``."""
    spec.validate(fs)
    return _bandpass_taps(float(spec.pass_lo_hz), float(spec.pass_hi_hz), float(spec.stop_atten_db), float(fs))


@lru_cache(maxsize=16)
def antialias_taps(factor: int, atten_db: float = 60.0) -> np.ndarray:
    """Lowpass passing 0.8 x the decimated Nyquist, stopping at the decimated Nyquist."""
    new_nyq = 0.5 / factor  # cycles per input sample
    pass_edge = ANTIALIAS_PASS_FRACTION * new_nyq
    numtaps, beta = _kaiser_taps(atten_db, (new_nyq - pass_edge) / 0.5)
    h = signal.firwin(numtaps, (pass_edge + new_nyq) / 2, window=("kaiser", beta), fs=1.0)
    h.setflags(write=False)
    return h


def _extend(x: np.ndarray, pad: int, padtype: str = "even") -> np.ndarray:
    """Reflect-extend the last axis by ``pad`` samples on both sides.

    ``even`` mirrors the samples and keeps constants constant, which matters
    for a highpass whose impulse response outlasts a trial. ``odd`` reflects
    through the end value, matching value and slope; that keeps a lowpass
    from ringing on the edge kink that even mirroring creates.
    """
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    if x.shape[-1] == 1:
        return np.pad(x, widths, mode="edge")
    return np.pad(x, widths, mode="reflect", reflect_type=padtype)


def apply_fir(x: np.ndarray, h: np.ndarray, mode: str, padtype: str = "even") -> np.ndarray:
    """Filter along the last axis.

    ``causal`` convolves with zero initial state and carries the full
    (len(h)-1)/2 sample group delay. ``zero_phase`` is forward-backward
    filtering, realized as one centered convolution with h * reversed(h)
    after reflection padding of the edges (see :func:`_extend`).
    """
    x = np.asarray(x, dtype=np.float64)
    T = x.shape[-1]
    if mode == "causal":
        return signal.fftconvolve(x, h.reshape((1,) * (x.ndim - 1) + (-1,)), axes=-1)[..., :T]
    if mode == "zero_phase":
        h2 = np.convolve(h, h[::-1])
        pad = len(h) - 1
        xp = _extend(x, pad, padtype)
        return signal.fftconvolve(xp, h2.reshape((1,) * (x.ndim - 1) + (-1,)), mode="valid", axes=-1)
    raise UnrealizableSpec(f"unknown filter mode {mode!r}")


def bandpass(eeg: np.ndarray, spec: FilterSpec, fs: float) -> np.ndarray:
    h = design_bandpass(spec, fs)
    return apply_fir(eeg, h, spec.design)


def decimate(eeg: np.ndarray, factor: int, antialias: str = "on") -> np.ndarray:
    """Keep every ``factor``-th sample, low-passing first unless ``paper_literal``."""
    if int(factor) != factor or factor < 1:
        raise FactorTooLarge(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    x = np.asarray(eeg, dtype=np.float64)
    T = x.shape[-1]
    n_out = T // factor
    if factor == 1:
        return x.copy()
    if n_out < 2:
        raise FactorTooLarge(f"{T} samples decimated by {factor} leaves {n_out}")
    if antialias == "on":
        x = apply_fir(x, antialias_taps(factor), "zero_phase", padtype="odd")
    elif antialias != "paper_literal":
        raise UnrealizableSpec(f"unknown antialias mode {antialias!r}")
    return x[..., : n_out * factor : factor].copy()


# --------------------------------------------------------------------------
# amplitude normalization


def remove_dc(eeg: np.ndarray) -> np.ndarray:
    eeg = np.asarray(eeg, dtype=np.float64)
    return eeg - eeg.mean(axis=-1, keepdims=True)


def standardize(eeg: np.ndarray) -> tuple[np.ndarray, ChannelStats]:
    """Z-score each channel using the population standard deviation."""
    eeg = np.asarray(eeg, dtype=np.float64)
    mu = eeg.mean(axis=1)
    sigma = eeg.std(axis=1)
    scale = np.max(np.abs(eeg), axis=1)
    bad = np.flatnonzero((sigma == 0) | (sigma <= 1e-12 * scale))
    if bad.size:
        raise ZeroVariance(f"channel {int(bad[0])} is flat", channel=int(bad[0]))
    return (eeg - mu[:, None]) / sigma[:, None], ChannelStats(mu, sigma)


def align_lengths(eeg: np.ndarray, kin: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop trailing EEG samples so both streams have the kinematic length."""
    T_e, T_k = eeg.shape[1], kin.shape[1]
    if T_k > T_e:
        raise KinLongerThanEeg(f"kinematics ({T_k}) longer than EEG ({T_e})")
    return eeg[:, :T_k], kin


# --------------------------------------------------------------------------
# per-trial pipeline


@dataclass(frozen=True)
class Segment:
    """Analysis window of one trial: EEG from LED onset, kinematics from movement start."""

    trial_id: str
    eeg: np.ndarray
    kin: np.ndarray
    scaler: ScalerParams
    response_time_s: float


def rate_factor(fs_in: float, fs_out: float) -> int:
    factor = fs_in / fs_out
    if abs(factor - round(factor)) > 1e-9 or round(factor) < 1:
        raise FactorTooLarge(f"{fs_in} Hz is not an integer multiple of {fs_out} Hz")
    return int(round(factor))


def condition_trial(trial: TrialRecord, cfg: PreprocessConfig) -> TrialRecord:
    """Decimate, de-mean and bandpass the whole trial record.

    Event sample indices are mapped to the output rate; the response time is
    carried over from the source-rate record unchanged.
    """
    factor = rate_factor(trial.sample_rate_hz, cfg.fs_out_hz)
    eeg = decimate(trial.eeg, factor, cfg.antialias)
    eeg = remove_dc(eeg)
    eeg = bandpass(eeg, cfg.filter_spec, cfg.fs_out_hz)
    kin = decimate(trial.kin, factor, cfg.antialias)
    return replace(
        trial,
        eeg=eeg,
        kin=kin,
        led_onset_sample=trial.led_onset_sample // factor,
        movement_start_sample=trial.movement_start_sample // factor,
        movement_stop_sample=trial.movement_stop_sample // factor,
        sample_rate_hz=cfg.fs_out_hz,
        response_time_s=trial.response_time_s,
    )


def extract_segment(trial: TrialRecord) -> Segment:
    """Cut LED-onset..movement-stop EEG and the movement kinematics, scale, align."""
    eeg = trial.eeg[:, trial.led_onset_sample : trial.movement_stop_sample]
    kin = trial.kin[:, trial.movement_start_sample : trial.movement_stop_sample]
    kin_scaled, scaler = scale_kinematics(kin)
    eeg, kin_scaled = align_lengths(eeg, kin_scaled)
    return Segment(trial.trial_id, eeg, kin_scaled, scaler, trial.response_time_s)


def standardize_segment(seg: Segment) -> Segment:
    eeg, _ = standardize(seg.eeg)
    return replace(seg, eeg=eeg)
