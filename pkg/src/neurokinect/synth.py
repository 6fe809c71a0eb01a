"""Synthetic EEG + kinematics sessions with a known lagged linear coupling.

Per trial (record of ``trial_len_s`` seconds, LED at ``pre_led_s``):

* the movement segment spans an even number of 25 Hz frames; three latent
  sources repeat with that period and use only odd harmonics inside
  ``kin_band_hz``, so each source is antiperiodic and every whole segment
  has the same midpoint and range; hand position is the latent triple
  mapped to [0, 1] per axis;
* informative channel ``j`` (one movement axis each) at LED + i carries the
  latent axis at movement start + i + lag_j (lag in 25 Hz frames), so after
  the decoding pipeline aligns LED-locked EEG with movement-locked
  kinematics, frame ``t + l + d`` of the kinematics is present in the EEG
  window whenever ``d <= lag_j <= l + d``;
* every channel carries background activity band-limited to 0.5-12 Hz and
  an LED-locked evoked waveform; informative channels get background at the
  configured SNR below their coupled signal, ``noise_snr_db = inf`` removes it.

Random streams come from numpy's PCG64 generator, one child seed per trial
spawned from ``SeedSequence(seed)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import LaggedDataset
from .errors import InvalidConfig, SingularSystem
from .ingest import Session, SessionManifest, TrialEntry, TrialRecord
from .metrics import MetricsReport, metrics_3d

DECODE_RATE_HZ = 25.0
EEG_BAND_HZ = (0.5, 12.0)

# Per-participant trial counts kept by the 500 ms response-time rule out of
# 294 trials, with mean and SD of the kept response times (s). Participants
# with too few kept trials have no reported statistics; the group values
# (0.36, 0.06) stand in for them.
GAL_TRIALS_PER_SUBJECT = 294
GAL_RESPONSE_TIME_STATS = {
    "P1": (284, 0.33, 0.06),
    "P2": (19, None, None),
    "P3": (293, 0.32, 0.04),
    "P4": (287, 0.32, 0.05),
    "P5": (120, None, None),
    "P6": (213, 0.39, 0.06),
    "P7": (23, None, None),
    "P8": (263, 0.37, 0.06),
    "P9": (236, 0.37, 0.07),
    "P10": (220, 0.38, 0.06),
    "P11": (199, 0.38, 0.06),
    "P12": (154, None, None),
}
GROUP_RT_MEAN_S = 0.36
GROUP_RT_SD_S = 0.06


@dataclass(frozen=True)
class SynthConfig:
    n_channels: int = 32
    fs: float = 500.0
    n_trials: int = 50
    trial_len_s: float = 7.0
    pre_led_s: float = 1.0
    informative_channels: int = 4
    true_lag_samples: tuple[int, ...] = (5, 8, 10, 13)
    noise_snr_db: float = 10.0
    seed: int = 0
    kin_band_hz: tuple[float, float] = (0.6, 2.5)
    eeg_rms_uv: float = 10.0
    evoked_uv: float = 5.0
    rt_mean_s: float = GROUP_RT_MEAN_S
    rt_sd_s: float = GROUP_RT_SD_S
    artifact_fraction: float = 0.0
    artifact_uv: float = 400.0
    subject_id: str = "synth01"

    def __post_init__(self):
        lags = self.true_lag_samples
        if isinstance(lags, (int, np.integer)):
            lags = (int(lags),)
        object.__setattr__(self, "true_lag_samples", tuple(int(v) for v in lags))
        object.__setattr__(self, "kin_band_hz", tuple(float(v) for v in self.kin_band_hz))

    def validate(self) -> None:
        if self.n_channels < 1 or self.n_trials < 1:
            raise InvalidConfig("n_channels and n_trials must be >= 1")
        if not 0 <= self.informative_channels <= self.n_channels:
            raise InvalidConfig("informative_channels must lie in [0, n_channels]")
        if not self.true_lag_samples or min(self.true_lag_samples) < 0:
            raise InvalidConfig("true_lag_samples must be non-empty and >= 0")
        if self.fs <= 2 * EEG_BAND_HZ[1]:
            raise InvalidConfig(f"fs must exceed {2 * EEG_BAND_HZ[1]} Hz")
        if self.pre_led_s < 0 or self.trial_len_s <= self.pre_led_s + 1.0:
            raise InvalidConfig("need pre_led_s >= 0 and at least 1 s of record after the LED")
        lo, hi = self.kin_band_hz
        if not (EEG_BAND_HZ[0] <= lo < hi <= EEG_BAND_HZ[1]):
            raise InvalidConfig("kin_band_hz must lie inside the 0.5-12 Hz EEG band")
        if not 0.0 <= self.artifact_fraction <= 1.0:
            raise InvalidConfig("artifact_fraction must be in [0, 1]")


def band_limited_noise(rng: np.random.Generator, shape: tuple[int, int], fs: float,
                       band: tuple[float, float]) -> np.ndarray:
    """Unit-RMS noise whose spectrum is zero outside ``band`` (per row)."""
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    spec[..., (f < band[0]) | (f > band[1])] = 0.0
    x = np.fft.irfft(spec, n, axis=-1)
    rms = np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True))
    return x / np.where(rms > 0, rms, 1.0)


def evoked_waveform(t: np.ndarray) -> np.ndarray:
    """Smooth LED-locked deflection: positive peak near 100 ms, negative near 200 ms."""
    return (np.exp(-(((t - 0.10) / 0.04) ** 2)) - 1.2 * np.exp(-(((t - 0.20) / 0.06) ** 2))
            + 0.5 * np.exp(-(((t - 0.40) / 0.10) ** 2)))


@dataclass(frozen=True)
class SessionLayout:
    informative: np.ndarray  # channel indices
    mixing: np.ndarray  # (informative, 3)
    lags: np.ndarray  # per informative channel, 25 Hz frames
    evoked_pattern: np.ndarray  # (N,)


def session_layout(cfg: SynthConfig) -> SessionLayout:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed).spawn(1)[0]))
    k = cfg.informative_channels
    informative = np.sort(rng.choice(cfg.n_channels, size=k, replace=False)) if k else np.zeros(0, int)
    # one movement axis per informative channel: per-segment standardization
    # rescales each channel independently, which would distort a denser mixture
    mixing = np.eye(3)[np.arange(k) % 3]
    lags = np.array([cfg.true_lag_samples[j % len(cfg.true_lag_samples)] for j in range(k)], dtype=int)
    pattern = rng.uniform(0.3, 1.0, cfg.n_channels)
    return SessionLayout(informative, mixing, lags, pattern)


def movement_period(rng: np.random.Generator, period: int, fs: float, band: tuple[float, float]) -> np.ndarray:
    """One period (3 x ``period`` samples) of a unit-RMS latent movement.

    Only odd harmonics of ``fs / period`` inside ``band`` are used, so the
    second half-period is the negative of the first: over any whole period
    the signal has zero mean and its minimum equals minus its maximum.
    """
    f = np.fft.rfftfreq(period, 1.0 / fs)
    k = np.arange(f.size)
    use = (k % 2 == 1) & (f >= band[0]) & (f <= band[1])
    if not use.any():
        raise InvalidConfig(f"no odd harmonic of {fs / period:.3f} Hz inside {band}")
    spec = np.zeros((3, f.size), dtype=complex)
    spec[:, use] = rng.standard_normal((3, use.sum())) + 1j * rng.standard_normal((3, use.sum()))
    x = np.fft.irfft(spec, period, axis=-1)
    return x / np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True))


def _trial(cfg: SynthConfig, layout: SessionLayout, k: int, rng: np.random.Generator) -> TrialRecord:
    fs = cfg.fs
    T = int(round(cfg.trial_len_s * fs))
    led = int(round(cfg.pre_led_s * fs))
    rt = float(np.clip(rng.normal(cfg.rt_mean_s, cfg.rt_sd_s), 0.1, 0.9))
    start = led + int(round(rt * fs))

    # The movement lasts an even number of decoding frames and the latent
    # movement repeats with exactly that period. After decimation the
    # movement segment then holds one whole period, so per-segment min-max
    # scaling maps every trial the same way around its midpoint.
    step = max(1, int(round(fs / DECODE_RATE_HZ)))
    start_f = start // step
    n_frames = 2 * ((T // step - start_f) // 2)
    stop = (start_f + n_frames) * step
    period = n_frames * step
    latent = movement_period(rng, period, fs, cfg.kin_band_hz)

    def u(first: int) -> np.ndarray:
        return latent[:, (np.arange(first, first + T) - start_f * step) % period]

    kin_raw = u(0)
    kin = (kin_raw - kin_raw.min(axis=1, keepdims=True)) / np.ptp(kin_raw, axis=1, keepdims=True)

    eeg = cfg.eeg_rms_uv * band_limited_noise(rng, (cfg.n_channels, T), fs, EEG_BAND_HZ)
    if layout.informative.size:
        # informative channel j at frame LED + i carries the movement at frame start + i + lag_j
        shifts = (start_f - led // step + layout.lags) * step
        coupled = np.stack([layout.mixing[j] @ u(int(s)) for j, s in enumerate(shifts)])
        coupled *= cfg.eeg_rms_uv / np.sqrt(np.mean(coupled ** 2, axis=1, keepdims=True))
        gain = 0.0 if math.isinf(cfg.noise_snr_db) else 10 ** (-cfg.noise_snr_db / 20)
        eeg[layout.informative] = coupled + gain * eeg[layout.informative]

    t = (np.arange(T) - led) / fs
    eeg += cfg.evoked_uv * layout.evoked_pattern[:, None] * evoked_waveform(t)[None, :]
    if rng.random() < cfg.artifact_fraction:
        burst = np.exp(-(((t - 0.6) / 0.15) ** 2)) * np.cos(2 * np.pi * 2.0 * (t - 0.6))
        eeg += cfg.artifact_uv * burst[None, :]

    return TrialRecord(
        trial_id=f"t{k:03d}",
        eeg=eeg,
        kin=kin,
        led_onset_sample=led,
        movement_start_sample=start,
        movement_stop_sample=stop,
        sample_rate_hz=fs,
    )


def gen_session(cfg: SynthConfig = SynthConfig()) -> Session:
    """Generate a full in-memory session; write it with :func:`ingest.write_session`."""
    cfg.validate()
    layout = session_layout(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trials + 1)[1:]
    trials = [_trial(cfg, layout, k, np.random.Generator(np.random.PCG64(s))) for k, s in enumerate(seeds)]
    entries = tuple(
        TrialEntry(t.trial_id, "trials/" + f"{t.trial_id}_eeg.csv", "trials/" + f"{t.trial_id}_kin.csv",
                   t.led_onset_sample, t.movement_start_sample, t.movement_stop_sample)
        for t in trials
    )
    manifest = SessionManifest(cfg.subject_id, cfg.fs, cfg.n_channels, entries,
                               channel_names=tuple(f"ch_{i + 1}" for i in range(cfg.n_channels)))
    return Session(manifest, trials)


def response_time_samples(n_total: int, n_keep: int, mean_s: float | None, sd_s: float | None,
                          fs: float, rng: np.random.Generator, limit_s: float = 0.5) -> np.ndarray:
    """Response times (in samples) with exactly ``n_keep`` at or under ``limit_s``.

    Kept values follow a normal law with the given mean/SD truncated to
    (0.1 s, limit]; the rest fall uniformly in (limit, limit + 0.5 s].
    Order is shuffled.
    """
    mean_s = GROUP_RT_MEAN_S if mean_s is None else mean_s
    sd_s = GROUP_RT_SD_S if sd_s is None else sd_s
    lim = int(math.floor(limit_s * fs + 1e-9))
    kept = np.empty(0, dtype=int)
    while kept.size < n_keep:
        draw = np.round(rng.normal(mean_s, sd_s, 2 * n_keep + 8) * fs).astype(int)
        kept = np.concatenate([kept, draw[(draw > 0.1 * fs) & (draw <= lim)]])
    kept = kept[:n_keep]
    slow = rng.integers(lim + 1, lim + int(0.5 * fs) + 1, n_total - n_keep)
    out = np.concatenate([kept, slow])
    return out[rng.permutation(n_total)]


def rt_matched_session(subject: str, seed: int = 0, n_channels: int = 2, fs: float = 500.0,
                       record_s: float = 2.5, pre_led_s: float = 0.2) -> Session:
    """Short noise trials whose response times reproduce one participant's keep count.

    Only the timing is meaningful; EEG is white noise and kinematics a ramp.
    """
    n_keep, mean_s, sd_s = GAL_RESPONSE_TIME_STATS[subject]
    rng = np.random.Generator(np.random.PCG64(seed))
    rts = response_time_samples(GAL_TRIALS_PER_SUBJECT, n_keep, mean_s, sd_s, fs, rng)
    T = int(round(record_s * fs))
    led = int(round(pre_led_s * fs))
    ramp = np.tile(np.linspace(0.0, 1.0, T), (3, 1))
    trials = [
        TrialRecord(f"t{k:03d}", rng.normal(0.0, 10.0, (n_channels, T)), ramp, led, led + int(rt), T, fs)
        for k, rt in enumerate(rts)
    ]
    entries = tuple(TrialEntry(t.trial_id, f"trials/{t.trial_id}_eeg.csv", f"trials/{t.trial_id}_kin.csv",
                               t.led_onset_sample, t.movement_start_sample, t.movement_stop_sample)
                    for t in trials)
    return Session(SessionManifest(subject, fs, n_channels, entries), trials)


# --------------------------------------------------------------------------
# linear attainability oracle


@dataclass(frozen=True)
class OracleResult:
    metrics: MetricsReport
    coef: np.ndarray  # (features + 1, 3), intercept last
    ridge_used: bool


def _design(ds: LaggedDataset) -> np.ndarray:
    flat = ds.with_layout("flattened").inputs
    return np.hstack([flat, np.ones((flat.shape[0], 1))])


def ols_fit(train: LaggedDataset, ridge: float = 1e-6) -> tuple[np.ndarray, bool]:
    """Least squares from flattened lag windows (+ intercept) to positions.

    Falls back to ridge regression with penalty ``ridge`` when the normal
    system is rank deficient.
    """
    X, Y = _design(train), train.targets
    coef, _, rank, _ = np.linalg.lstsq(X, Y, rcond=None)
    if rank == X.shape[1]:
        return coef, False
    A = X.T @ X + ridge * np.eye(X.shape[1])
    try:
        return np.linalg.solve(A, X.T @ Y), True
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("ridge fallback failed") from exc


def ols_oracle(train: LaggedDataset, val: LaggedDataset, shuffle_seed: int | None = None) -> OracleResult:
    """Fit on ``train`` and score on ``val``; ``shuffle_seed`` permutes train targets (null model)."""
    if shuffle_seed is not None:
        perm = np.random.Generator(np.random.PCG64(shuffle_seed)).permutation(len(train))
        train = LaggedDataset(train.inputs, train.targets[perm], train.trial_index, train.target_frame,
                              train.trial_ids, train.cfg, train.scalers)
    coef, ridge_used = ols_fit(train)
    pred = _design(val) @ coef
    return OracleResult(metrics_3d(pred, val.targets), coef, ridge_used)


def oracle_best_rho(session: Session, lags: int = 10, delay: int = 4, pipeline_cfg=None) -> OracleResult:
    """Run the decoding pipeline on ``session`` and score the linear oracle on the val split."""
    from .pipeline import PipelineConfig, prepare_splits

    cfg = pipeline_cfg or PipelineConfig()
    cfg = cfg.with_window(lags, delay)
    splits = prepare_splits(session, cfg)
    return ols_oracle(splits.train, splits.val)
