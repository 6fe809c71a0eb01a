"""Session manifests and per-trial CSV files.

Layout of a session directory::

    <session>/manifest.json
    <session>/trials/<trial_id>_eeg.csv   sample_index,ch_1..ch_N
    <session>/trials/<trial_id>_kin.csv   sample_index,x,y,z

Paths inside the manifest are resolved relative to the manifest's directory.
The full schema is documented in ``docs/formats.md``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CorruptData, InconsistentTiming, MissingFile, SchemaViolation, UnknownTrial

SCHEMA_VERSION = 1
_FLOAT_FMT = "%.17g"  # shortest format that round-trips every double


@dataclass(frozen=True)
class TrialEntry:
    trial_id: str
    eeg_path: Path
    kin_path: Path
    led_onset_sample: int
    movement_start_sample: int
    movement_stop_sample: int


@dataclass(frozen=True)
class SessionManifest:
    subject_id: str
    sample_rate_hz: float
    n_channels: int
    trials: tuple[TrialEntry, ...]
    root: Path = Path(".")
    channel_names: tuple[str, ...] | None = None
    eeg_units: str = "uV"
    kin_units: str = "a.u."

    def entry(self, trial_id: str) -> TrialEntry:
        for e in self.trials:
            if e.trial_id == trial_id:
                return e
        raise UnknownTrial(f"trial {trial_id!r} not in manifest for {self.subject_id}", trial_id=trial_id)

    @property
    def trial_ids(self) -> list[str]:
        return [e.trial_id for e in self.trials]


@dataclass(frozen=True)
class TrialRecord:
    """One trial: EEG (N x T) and wrist position (3 x T_kin) on a shared clock."""

    trial_id: str
    eeg: np.ndarray
    kin: np.ndarray
    led_onset_sample: int
    movement_start_sample: int
    movement_stop_sample: int
    sample_rate_hz: float
    response_time_s: float = field(default=float("nan"))

    def __post_init__(self):
        if np.isnan(self.response_time_s):
            rt = (self.movement_start_sample - self.led_onset_sample) / self.sample_rate_hz
            object.__setattr__(self, "response_time_s", rt)

    @property
    def n_channels(self) -> int:
        return self.eeg.shape[0]


@dataclass
class Session:
    """A manifest together with its loaded trials (in manifest order)."""

    manifest: SessionManifest
    trials: list[TrialRecord]

    @property
    def subject_id(self) -> str:
        return self.manifest.subject_id


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise SchemaViolation(f"{where}: missing field {key!r}", field=key, reason="missing")
    value = obj[key]
    if kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise SchemaViolation(
            f"{where}: field {key!r} must be {kind.__name__}, got {type(value).__name__}",
            field=key,
            reason="type",
        )
    return value


def parse_manifest(raw: dict, root: Path, check_paths: bool = True) -> SessionManifest:
    if not isinstance(raw, dict):
        raise SchemaViolation("manifest must be a JSON object", field="<root>", reason="type")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaViolation(f"unsupported schema_version {version}", field="schema_version", reason="version")
    subject_id = _require(raw, "subject_id", str, "manifest")
    fs = float(_require(raw, "sample_rate_hz", float, "manifest"))
    if not fs > 0:
        raise SchemaViolation("sample_rate_hz must be positive", field="sample_rate_hz", reason="range")
    n_channels = _require(raw, "n_channels", int, "manifest")
    if n_channels < 1:
        raise SchemaViolation("n_channels must be >= 1", field="n_channels", reason="range")
    names = raw.get("channel_names")
    if names is not None and (not isinstance(names, list) or len(names) != n_channels):
        raise SchemaViolation("channel_names must list n_channels names", field="channel_names", reason="length")
    trials_raw = _require(raw, "trials", list, "manifest")

    entries = []
    seen = set()
    for i, t in enumerate(trials_raw):
        where = f"trials[{i}]"
        if not isinstance(t, dict):
            raise SchemaViolation(f"{where} must be an object", field=where, reason="type")
        tid = _require(t, "trial_id", str, where)
        if tid in seen:
            raise SchemaViolation(f"{where}: duplicate trial_id {tid!r}", field="trial_id", reason="duplicate")
        seen.add(tid)
        led = _require(t, "led_onset_sample", int, where)
        start = _require(t, "movement_start_sample", int, where)
        stop = _require(t, "movement_stop_sample", int, where)
        if led < 0:
            raise InconsistentTiming(f"{where}: led_onset_sample < 0", trial_id=tid)
        if start < led:
            raise InconsistentTiming(f"{where}: movement_start_sample precedes led_onset_sample", trial_id=tid)
        if stop <= start:
            raise InconsistentTiming(f"{where}: movement_stop_sample must exceed movement_start_sample", trial_id=tid)
        eeg_path = root / _require(t, "eeg_path", str, where)
        kin_path = root / _require(t, "kin_path", str, where)
        if check_paths:
            for p in (eeg_path, kin_path):
                if not p.is_file():
                    raise MissingFile(f"{where}: file not found: {p}", path=str(p), trial_id=tid)
        entries.append(TrialEntry(tid, eeg_path, kin_path, led, start, stop))

    return SessionManifest(
        subject_id=subject_id,
        sample_rate_hz=fs,
        n_channels=n_channels,
        trials=tuple(entries),
        root=root,
        channel_names=tuple(names) if names else None,
        eeg_units=str(raw.get("eeg_units", "uV")),
        kin_units=str(raw.get("kin_units", "a.u.")),
    )


def load_manifest(path: str | Path) -> SessionManifest:
    """Read and validate ``manifest.json`` (or a directory containing one)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}", path=str(path))
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"manifest is not valid JSON: {exc}", field="<root>", reason="parse") from exc
    return parse_manifest(raw, path.parent)


def _read_csv(path: Path, expected_header: list[str], trial_id: str) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != expected_header:
            raise CorruptData(
                f"{path.name}: header has {len(header) - 1} data columns, expected {len(expected_header) - 1}",
                trial_id=trial_id,
                path=str(path),
            )
        try:
            data = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise CorruptData(f"{path.name}: unparsable row ({exc})", trial_id=trial_id) from exc
    if data.shape[0] == 0:
        raise CorruptData(f"{path.name}: no samples", trial_id=trial_id)
    if data.shape[1] != len(expected_header):
        raise CorruptData(f"{path.name}: shape mismatch {data.shape}", trial_id=trial_id)
    idx = data[:, 0]
    if not np.array_equal(idx, np.arange(len(idx))):
        raise CorruptData(f"{path.name}: sample_index must run 0..T-1", trial_id=trial_id)
    values = data[:, 1:].T.copy()
    if not np.all(np.isfinite(values)):
        raise CorruptData(f"{path.name}: non-finite sample", trial_id=trial_id)
    return values


def eeg_header(n_channels: int) -> list[str]:
    return ["sample_index"] + [f"ch_{i + 1}" for i in range(n_channels)]


KIN_HEADER = ["sample_index", "x", "y", "z"]


def load_trial(manifest: SessionManifest, trial_id: str) -> TrialRecord:
    entry = manifest.entry(trial_id)
    for p in (entry.eeg_path, entry.kin_path):
        if not p.is_file():
            raise MissingFile(f"file not found: {p}", path=str(p), trial_id=trial_id)
    eeg = _read_csv(entry.eeg_path, eeg_header(manifest.n_channels), trial_id)
    kin = _read_csv(entry.kin_path, KIN_HEADER, trial_id)
    if eeg.shape[1] < entry.movement_stop_sample:
        raise CorruptData(
            f"EEG has {eeg.shape[1]} samples but movement stops at {entry.movement_stop_sample}",
            trial_id=trial_id,
        )
    if kin.shape[1] < entry.movement_stop_sample:
        raise CorruptData(
            f"kinematics have {kin.shape[1]} samples but movement stops at {entry.movement_stop_sample}",
            trial_id=trial_id,
        )
    return TrialRecord(
        trial_id=trial_id,
        eeg=eeg,
        kin=kin,
        led_onset_sample=entry.led_onset_sample,
        movement_start_sample=entry.movement_start_sample,
        movement_stop_sample=entry.movement_stop_sample,
        sample_rate_hz=manifest.sample_rate_hz,
    )


def load_session(path: str | Path, trial_ids: Iterable[str] | None = None) -> Session:
    manifest = load_manifest(path)
    ids = list(trial_ids) if trial_ids is not None else manifest.trial_ids
    return Session(manifest, [load_trial(manifest, tid) for tid in ids])


def _write_csv(path: Path, header: list[str], values: np.ndarray) -> None:
    n = values.shape[1]
    table = np.column_stack([np.arange(n, dtype=np.float64), values.T])
    fmt = ["%d"] + [_FLOAT_FMT] * values.shape[0]
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt=fmt)


def write_trial(trial: TrialRecord, directory: str | Path) -> tuple[Path, Path]:
    """Export one trial as headered CSV pair; values round-trip bit-exactly."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    eeg_path = directory / f"{trial.trial_id}_eeg.csv"
    kin_path = directory / f"{trial.trial_id}_kin.csv"
    _write_csv(eeg_path, eeg_header(trial.eeg.shape[0]), trial.eeg)
    _write_csv(kin_path, KIN_HEADER, trial.kin)
    return eeg_path, kin_path


def manifest_dict(
    subject_id: str,
    sample_rate_hz: float,
    n_channels: int,
    trials: Iterable[TrialRecord],
    trial_dir: str = "trials",
    **extra,
) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "subject_id": subject_id,
        "sample_rate_hz": sample_rate_hz,
        "n_channels": n_channels,
    }
    out.update(extra)
    out["trials"] = [
        {
            "trial_id": t.trial_id,
            "eeg_path": f"{trial_dir}/{t.trial_id}_eeg.csv",
            "kin_path": f"{trial_dir}/{t.trial_id}_kin.csv",
            "led_onset_sample": int(t.led_onset_sample),
            "movement_start_sample": int(t.movement_start_sample),
            "movement_stop_sample": int(t.movement_stop_sample),
        }
        for t in trials
    ]
    return out


def write_session(session: Session, directory: str | Path) -> Path:
    """Write manifest plus every trial; returns the manifest path."""
    directory = Path(directory)
    (directory / "trials").mkdir(parents=True, exist_ok=True)
    for t in session.trials:
        write_trial(t, directory / "trials")
    m = session.manifest
    raw = manifest_dict(
        m.subject_id,
        m.sample_rate_hz,
        m.n_channels,
        session.trials,
        eeg_units=m.eeg_units,
        kin_units=m.kin_units,
    )
    if m.channel_names:
        raw["channel_names"] = list(m.channel_names)
    path = directory / "manifest.json"
    path.write_text(json.dumps(raw, indent=2) + "\n")
    return path
