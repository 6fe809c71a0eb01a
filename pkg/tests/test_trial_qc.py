import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neurokinect.errors import NotEnoughTrials, SchemaViolation, SpanTooShort
from neurokinect.ingest import TrialRecord
from neurokinect.synth import GAL_RESPONSE_TIME_STATS, GAL_TRIALS_PER_SUBJECT, rt_matched_session
from neurokinect.trial_qc import (KEPT, REJECTED_RMSE, REJECTED_RT, REJECTED_SPAN, QcConfig, build_reference,
                                  flag_bad_trials, max_moving_average, moving_average_max, read_qc_csv)

CFG = QcConfig(rmse_threshold=100.0)


def trial(tid, eeg, rt_samples=5, fs=10.0, led=0):
    T = eeg.shape[1]
    return TrialRecord(tid, eeg, np.zeros((3, T)), led, led + rt_samples, T, fs)


def test_ma_constant_magnitude():
    assert moving_average_max(np.array([[1.0, -1, 1, -1, 1, -1, 1]]), 5)[0] == 1.0


def test_ma_single_spike():
    assert moving_average_max(np.array([[0.0, 0, 0, 0, 0, 10, 0, 0, 0, 0]]), 5)[0] == 2.0


def test_ma_matches_naive(rng):
    x = rng.normal(size=(3, 40))
    naive = [max(np.mean(np.abs(x[c, i:i + 5])) for i in range(36)) for c in range(3)]
    assert np.allclose(moving_average_max(x, 5), naive, atol=1e-12)


def test_span_too_short():
    with pytest.raises(SpanTooShort):
        moving_average_max(np.ones((1, 4)), 5)
    # LED three samples before the end: only 3 post-LED samples
    with pytest.raises(SpanTooShort):
        max_moving_average(trial("a", np.ones((2, 10)), led=7, rt_samples=1), CFG)


def test_signature_uses_post_led_span():
    # 1.5 s at 10 Hz = 15 samples after the LED; a spike beyond that is ignored
    eeg = np.zeros((1, 40))
    eeg[0, 30] = 100.0
    eeg[0, 7] = 10.0
    assert max_moving_average(trial("a", eeg, led=2), CFG)[0] == 2.0


def test_reference_examples():
    v = np.array([1.0, 2, 3])
    assert np.array_equal(build_reference([v] * 10, CFG), v)
    alt = [np.zeros(3) if k % 2 else np.full(3, 2.0) for k in range(10)]
    assert np.array_equal(build_reference(alt, CFG), np.ones(3))
    with pytest.raises(NotEnoughTrials):
        build_reference([v] * 9, CFG)


def test_reference_uses_first_ten_only():
    sigs = [np.ones(2)] * 10 + [np.full(2, 1e6)]
    assert np.array_equal(build_reference(sigs, CFG), np.ones(2))


def session_with_outlier(offset):
    """Ten identical trials plus one whose signature is ``offset`` above on every channel."""
    base = np.ones((4, 30))
    trials = [trial(f"t{k}", base.copy()) for k in range(10)]
    trials.append(trial("odd", base + offset))
    trials.append(trial("slow", base.copy(), rt_samples=6))  # 0.6 s
    return trials


def test_verdicts():
    r = flag_bad_trials(session_with_outlier(120.0), CFG)
    assert r.verdict("t0") == KEPT and r.rmse[0] == 0.0
    assert r.verdict("slow") == REJECTED_RT
    assert r.verdict("odd") == REJECTED_RMSE
    assert r.rmse[r.trial_ids.index("odd")] == pytest.approx(120.0)
    assert flag_bad_trials(session_with_outlier(120.0), QcConfig.preset("lenient")).verdict("odd") == KEPT
    assert QcConfig.preset("strict").rmse_threshold == 100.0


def test_span_failure_recorded():
    trials = [trial(f"t{k}", np.ones((2, 30))) for k in range(10)]
    trials.append(trial("late", np.ones((2, 30)), led=28, rt_samples=1))
    r = flag_bad_trials(trials, CFG)
    assert r.verdict("late") == REJECTED_SPAN and "late" in r.reasons


def test_one_verdict_per_trial_and_rt_invariant(small_session):
    from neurokinect.pipeline import condition_session
    from neurokinect.preprocess import PreprocessConfig

    trials = condition_session(small_session, PreprocessConfig())
    r = flag_bad_trials(trials, CFG)
    assert r.trial_ids == [t.trial_id for t in trials] and len(r.verdicts) == len(trials)
    for tid, v, rt in zip(r.trial_ids, r.verdicts, r.response_time_s):
        assert (v == REJECTED_RT) == (rt > CFG.rt_limit_s)
    # RT gate ignores EEG content
    zeroed = [TrialRecord(t.trial_id, np.zeros_like(t.eeg), t.kin, t.led_onset_sample, t.movement_start_sample,
                          t.movement_stop_sample, t.sample_rate_hz, t.response_time_s) for t in trials]
    rz = flag_bad_trials(zeroed, CFG)
    assert [v == REJECTED_RT for v in rz.verdicts] == [v == REJECTED_RT for v in r.verdicts]


@given(st.lists(st.floats(0, 300), min_size=1, max_size=6), st.floats(1, 200), st.floats(0, 200))
def test_threshold_monotone(offsets, lo, extra):
    base = np.ones((3, 30))
    trials = [trial(f"r{k}", base.copy()) for k in range(10)]
    trials += [trial(f"o{k}", base + off) for k, off in enumerate(offsets)]
    a = flag_bad_trials(trials, QcConfig(rmse_threshold=lo))
    b = flag_bad_trials(trials, QcConfig(rmse_threshold=lo + extra))
    for va, vb in zip(a.verdicts, b.verdicts):
        assert not (va == KEPT and vb == REJECTED_RMSE)


def test_deterministic(small_session):
    a = flag_bad_trials(small_session.trials, CFG)
    b = flag_bad_trials(small_session.trials, CFG)
    assert a.verdicts == b.verdicts and a.rmse == b.rmse


@pytest.mark.parametrize("subject", sorted(GAL_RESPONSE_TIME_STATS))
def test_rt_rule_reproduces_keep_counts(subject):
    s = rt_matched_session(subject, seed=1)
    r = flag_bad_trials(s.trials, QcConfig.response_time_only())
    assert len(r.trial_ids) == GAL_TRIALS_PER_SUBJECT
    assert len(r.kept_ids()) == GAL_RESPONSE_TIME_STATS[subject][0]


def test_average_keep_count_of_included_subjects():
    kept = [n for n, m, _ in GAL_RESPONSE_TIME_STATS.values() if m is not None]
    assert abs(sum(kept) / len(kept) - 250) < 1  # 249.4 over the eight participants with statistics
    excluded = [k for k, (n, _, _) in GAL_RESPONSE_TIME_STATS.items() if n / GAL_TRIALS_PER_SUBJECT < 0.6]
    assert excluded == ["P2", "P5", "P7", "P12"]


def test_csv_round_trip(tmp_path):
    r = flag_bad_trials(session_with_outlier(120.0), CFG)
    r.write_csv(tmp_path / "qc.csv")
    assert read_qc_csv(tmp_path / "qc.csv") == dict(zip(r.trial_ids, r.verdicts))


def test_config_validation():
    for kw in ({"ma_window": 0}, {"rt_limit_s": 0}, {"rmse_threshold": -1}, {"reference_trials": 0}):
        with pytest.raises(SchemaViolation):
            QcConfig(**{"rmse_threshold": 100.0, **kw})
    assert math.isinf(QcConfig.response_time_only().rmse_threshold)
