"""Lagged EEG windows paired with delayed hand positions.

For a trial with standardized EEG ``E`` (N x T) and scaled kinematics ``K``
(3 x T), sample ``t`` (0 <= t < T - l - d) pairs the EEG frames
``t .. t+l`` with the position ``K[:, t+l+d]``.

Two layouts of the same numbers are supported:

* ``sequence``  shape (l+1, N), chronological: ``x[j] = E[:, t+j]``
* ``flattened`` shape (N*(l+1),), newest frame first:
  ``x[i*N + n] = E[n, t+l-i]``
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptyPartition, SchemaViolation, TrialTooShort
from .preprocess import ScalerParams, Segment

LAYOUTS = ("sequence", "flattened")
PARTITIONS = ("train", "val", "test")


@dataclass(frozen=True)
class WindowConfig:
    lags: int = 10
    transfer_delay: int = 4
    layout: str = "sequence"

    def __post_init__(self):
        if self.lags < 0 or self.transfer_delay < 0:
            raise SchemaViolation("lags and transfer_delay must be >= 0", field="window", reason="range")
        if self.layout not in LAYOUTS:
            raise SchemaViolation(f"layout must be one of {LAYOUTS}", field="layout", reason="value")


@dataclass
class LaggedDataset:
    inputs: np.ndarray  # (S, l+1, N) or (S, N*(l+1))
    targets: np.ndarray  # (S, 3)
    trial_index: np.ndarray  # (S,) index into trial_ids
    target_frame: np.ndarray  # (S,) frame of the target inside its trial
    trial_ids: list[str]
    cfg: WindowConfig
    scalers: list[ScalerParams | None] = field(default_factory=list)

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def n_channels(self) -> int:
        if self.cfg.layout == "sequence":
            return self.inputs.shape[2]
        return self.inputs.shape[1] // (self.cfg.lags + 1)

    def with_layout(self, layout: str) -> "LaggedDataset":
        if layout == self.cfg.layout:
            return self
        S, steps = len(self), self.cfg.lags + 1
        if layout == "flattened":
            inputs = self.inputs[:, ::-1, :].reshape(S, -1)
        else:
            inputs = self.inputs.reshape(S, steps, -1)[:, ::-1, :]
        cfg = WindowConfig(self.cfg.lags, self.cfg.transfer_delay, layout)
        return LaggedDataset(np.ascontiguousarray(inputs), self.targets, self.trial_index,
                             self.target_frame, self.trial_ids, cfg, self.scalers)

    def select_trials(self, positions: Sequence[int]) -> "LaggedDataset":
        """Subset keeping only the given trial positions (in that order)."""
        positions = list(positions)
        parts = [np.flatnonzero(self.trial_index == p) for p in positions]
        idx = np.concatenate(parts) if parts else np.zeros(0, dtype=int)
        remap = np.full(len(self.trial_ids), -1)
        remap[positions] = np.arange(len(positions))
        return LaggedDataset(
            inputs=self.inputs[idx],
            targets=self.targets[idx],
            trial_index=remap[self.trial_index[idx]],
            target_frame=self.target_frame[idx],
            trial_ids=[self.trial_ids[p] for p in positions],
            cfg=self.cfg,
            scalers=[self.scalers[p] for p in positions] if self.scalers else [],
        )


def build_windows(eeg: np.ndarray, kin: np.ndarray, cfg: WindowConfig, trial_id: str = "0",
                  scaler: ScalerParams | None = None) -> LaggedDataset:
    N, T = eeg.shape
    l, d = cfg.lags, cfg.transfer_delay
    if kin.shape[1] != T:
        raise SchemaViolation(f"EEG ({T}) and kinematics ({kin.shape[1]}) must be aligned", field="kin", reason="length")
    if T <= l + d:
        raise TrialTooShort(f"trial {trial_id}: T={T} but lags+delay={l + d}", trial_id=trial_id)
    S = T - l - d
    # win[t, j, n] = eeg[n, t + j]
    win = sliding_window_view(eeg, l + 1, axis=1)[:, :S, :].transpose(1, 2, 0)
    if cfg.layout == "flattened":
        inputs = win[:, ::-1, :].reshape(S, N * (l + 1))
    else:
        inputs = win
    return LaggedDataset(
        inputs=np.ascontiguousarray(inputs, dtype=np.float64),
        targets=np.ascontiguousarray(kin[:, l + d:].T, dtype=np.float64),
        trial_index=np.zeros(S, dtype=np.int64),
        target_frame=np.arange(l + d, T, dtype=np.int64),
        trial_ids=[trial_id],
        cfg=cfg,
        scalers=[scaler],
    )


def concat(parts: Sequence[LaggedDataset]) -> LaggedDataset:
    if not parts:
        raise EmptyPartition("no trials to concatenate")
    offsets = np.cumsum([0] + [len(p.trial_ids) for p in parts[:-1]])
    return LaggedDataset(
        inputs=np.concatenate([p.inputs for p in parts]),
        targets=np.concatenate([p.targets for p in parts]),
        trial_index=np.concatenate([p.trial_index + o for p, o in zip(parts, offsets)]),
        target_frame=np.concatenate([p.target_frame for p in parts]),
        trial_ids=[t for p in parts for t in p.trial_ids],
        cfg=parts[0].cfg,
        scalers=[s for p in parts for s in p.scalers],
    )


def build_dataset(segments: Sequence[Segment], cfg: WindowConfig) -> LaggedDataset:
    return concat([build_windows(s.eeg, s.kin, cfg, s.trial_id, s.scaler) for s in segments])


def _partition_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    exact = [r * n for r in ratios]
    sizes = [int(np.floor(e)) for e in exact]
    order = np.argsort([-(e - s) for e, s in zip(exact, sizes)], kind="stable")
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    return sizes


def split(ds: LaggedDataset, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
          ) -> tuple[LaggedDataset, LaggedDataset, LaggedDataset]:
    """Partition whole trials into train/val/test; deterministic for a given seed."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SchemaViolation(f"ratios must be three non-negative numbers summing to 1, got {ratios}",
                              field="ratios", reason="value")
    n = len(ds.trial_ids)
    sizes = _partition_sizes(n, ratios)
    for name, size in zip(PARTITIONS, sizes):
        if size == 0:
            raise EmptyPartition(f"partition {name!r} receives no trials ({n} trials, ratios {ratios})",
                                 partition=name)
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return (ds.select_trials(sorted(perm[:a])), ds.select_trials(sorted(perm[a:b])),
            ds.select_trials(sorted(perm[b:])))


def batch_iter(n_samples: int, batch_size: int, shuffle: bool = False, seed: int = 0,
               epoch: int = 0) -> Iterator[np.ndarray]:
    """Index batches covering every sample once; the last batch may be short."""
    if batch_size < 1:
        raise SchemaViolation("batch_size must be >= 1", field="batch_size", reason="range")
    if shuffle:
        order = np.random.Generator(np.random.PCG64([seed, epoch])).permutation(n_samples)
    else:
        order = np.arange(n_samples)
    for start in range(0, n_samples, batch_size):
        yield order[start : start + batch_size]


# --------------------------------------------------------------------------
# persistence


def save_dataset(path: str | Path, partitions: dict[str, LaggedDataset]) -> None:
    """Write named partitions into one ``.npz`` archive (any file name)."""
    arrays = {}
    meta = {"partitions": list(partitions)}
    for name, ds in partitions.items():
        ds = ds.with_layout("sequence")
        arrays[f"{name}/inputs"] = ds.inputs
        arrays[f"{name}/targets"] = ds.targets
        arrays[f"{name}/trial_index"] = ds.trial_index
        arrays[f"{name}/target_frame"] = ds.target_frame
        if ds.scalers and all(s is not None for s in ds.scalers):
            arrays[f"{name}/scaler_min"] = np.stack([s.ax_min for s in ds.scalers])
            arrays[f"{name}/scaler_max"] = np.stack([s.ax_max for s in ds.scalers])
        meta[name] = {"trial_ids": ds.trial_ids, "lags": ds.cfg.lags, "transfer_delay": ds.cfg.transfer_delay}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_dataset(path: str | Path) -> dict[str, LaggedDataset]:
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        out = {}
        for name in meta["partitions"]:
            m = meta[name]
            scalers: list[ScalerParams | None] = []
            if f"{name}/scaler_min" in z:
                scalers = [ScalerParams(lo, hi) for lo, hi in zip(z[f"{name}/scaler_min"], z[f"{name}/scaler_max"])]
            out[name] = LaggedDataset(
                inputs=z[f"{name}/inputs"],
                targets=z[f"{name}/targets"],
                trial_index=z[f"{name}/trial_index"],
                target_frame=z[f"{name}/target_frame"],
                trial_ids=list(m["trial_ids"]),
                cfg=WindowConfig(m["lags"], m["transfer_delay"], "sequence"),
                scalers=scalers,
            )
    return out


def export_csv(path: str | Path, partitions: dict[str, LaggedDataset]) -> None:
    """Flattened-layout CSV for inspection: one row per sample."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header_written = False
        for name, ds in partitions.items():
            flat = ds.with_layout("flattened")
            if not header_written:
                w.writerow(["partition", "trial_id", "target_frame", "x", "y", "z"]
                           + [f"f{i}" for i in range(flat.inputs.shape[1])])
                header_written = True
            for s in range(len(flat)):
                w.writerow([name, flat.trial_ids[flat.trial_index[s]], int(flat.target_frame[s])]
                           + [repr(float(v)) for v in flat.targets[s]]
                           + [repr(float(v)) for v in flat.inputs[s]])
