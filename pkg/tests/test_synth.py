from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neurokinect.errors import InvalidConfig
from neurokinect.ingest import load_session, write_session
from neurokinect.synth import (EEG_BAND_HZ, SynthConfig, gen_session, movement_period, ols_oracle,
                               oracle_best_rho, response_time_samples)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_seed_writes_identical_files(tmp_path, small_session):
    cfg = SynthConfig(n_channels=8, n_trials=12, informative_channels=3, seed=5)
    write_session(small_session, tmp_path / "a")
    write_session(gen_session(cfg), tmp_path / "b")
    write_session(gen_session(replace(cfg, seed=6)), tmp_path / "c")
    a, b, c = (tree_bytes(tmp_path / d) for d in "abc")
    assert a == b
    assert a["trials/t000_eeg.csv"] != c["trials/t000_eeg.csv"]


def test_written_session_loads(tmp_path, small_session):
    write_session(small_session, tmp_path)
    back = load_session(tmp_path / "manifest.json")
    assert len(back.trials) == 12
    assert np.allclose(back.trials[3].eeg, small_session.trials[3].eeg, atol=1e-9)


def test_record_structure(small_session):
    for t in small_session.trials:
        assert t.eeg.shape == (8, 3500) and t.kin.shape == (3, 3500)
        assert t.led_onset_sample == 500 < t.movement_start_sample < t.movement_stop_sample <= 3500
        assert np.allclose(t.kin.min(axis=1), 0) and np.allclose(t.kin.max(axis=1), 1)
        # the movement spans an even number of 25 Hz frames
        assert (t.movement_stop_sample // 20 - t.movement_start_sample // 20) % 2 == 0


def test_eeg_power_stays_in_band(default_session):
    fs = default_session.manifest.sample_rate_hz
    for t in default_session.trials:
        p = np.abs(np.fft.rfft(t.eeg, axis=1)) ** 2
        f = np.fft.rfftfreq(t.eeg.shape[1], 1 / fs)
        out = (f < EEG_BAND_HZ[0]) | (f > EEG_BAND_HZ[1])
        assert p[:, out].sum() < 0.01 * p.sum()


def test_noiseless_oracle_is_near_perfect():
    res = oracle_best_rho(gen_session(SynthConfig(noise_snr_db=float("inf"))))
    assert res.metrics.rho_3d > 0.99


def test_no_informative_channels_gives_no_signal():
    res = oracle_best_rho(gen_session(SynthConfig(informative_channels=0)))
    assert abs(res.metrics.rho_3d) < 0.15


@pytest.mark.parametrize("shuffle_seed", [0, 1, 2])
def test_shuffled_targets_give_no_signal(default_splits, shuffle_seed):
    res = ols_oracle(default_splits.train, default_splits.val, shuffle_seed=shuffle_seed)
    assert abs(res.metrics.rho_3d) < 0.1


def test_lag_outside_window_is_invisible():
    # a lag beyond l + d frames never enters the lag window
    near = oracle_best_rho(gen_session(SynthConfig(n_trials=30, true_lag_samples=(8,))))
    far = oracle_best_rho(gen_session(SynthConfig(n_trials=30, true_lag_samples=(40,))))
    assert near.metrics.rho_3d > 0.9 and far.metrics.rho_3d < near.metrics.rho_3d - 0.3


@given(st.integers(4, 200), st.integers(0, 2**31))
def test_movement_period_antiperiodic(half, seed):
    period = 2 * half * 20
    try:
        x = movement_period(np.random.Generator(np.random.PCG64(seed)), period, 500.0, (0.6, 2.5))
    except InvalidConfig:
        odd = 500.0 / period * np.arange(1, period // 2 + 1, 2)
        assert not np.any((odd >= 0.6) & (odd <= 2.5))
        return
    assert np.allclose(x[:, period // 2:], -x[:, :period // 2], atol=1e-9)
    assert np.allclose(np.sqrt(np.mean(x ** 2, axis=1)), 1.0)


def test_movement_period_needs_an_odd_harmonic():
    with pytest.raises(InvalidConfig):
        movement_period(np.random.Generator(np.random.PCG64(0)), 40, 500.0, (0.6, 2.5))


@given(st.integers(1, 294), st.integers(0, 2**31))
def test_response_times_hit_keep_count(n_keep, seed):
    rts = response_time_samples(294, n_keep, 0.36, 0.06, 500.0, np.random.Generator(np.random.PCG64(seed)))
    assert rts.size == 294 and int((rts <= 250).sum()) == n_keep
    assert rts.min() > 50


@pytest.mark.parametrize("bad", [
    {"n_trials": 0},
    {"informative_channels": 40},
    {"true_lag_samples": ()},
    {"true_lag_samples": (-1,)},
    {"fs": 20.0},
    {"trial_len_s": 1.5},
    {"kin_band_hz": (0.1, 2.0)},
    {"artifact_fraction": 1.5},
])
def test_invalid_config(bad):
    with pytest.raises(InvalidConfig):
        gen_session(replace(SynthConfig(n_trials=2), **bad))
