"""Session -> conditioned trials -> QC -> standardized segments -> lagged splits."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from .dataset import LaggedDataset, WindowConfig, build_dataset, split
from .errors import EmptyPartition
from .ingest import Session, TrialRecord
from .preprocess import PreprocessConfig, Segment, condition_trial, extract_segment, standardize_segment
from .trial_qc import QcConfig, QcReport, flag_bad_trials


@dataclass(frozen=True)
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    qc: QcConfig = field(default_factory=lambda: QcConfig.preset("strict"))
    window: WindowConfig = field(default_factory=WindowConfig)
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0

    def with_window(self, lags: int, delay: int) -> "PipelineConfig":
        return replace(self, window=WindowConfig(lags, delay, self.window.layout))


@dataclass
class Splits:
    train: LaggedDataset
    val: LaggedDataset
    test: LaggedDataset
    qc: QcReport

    def as_dict(self) -> dict[str, LaggedDataset]:
        return {"train": self.train, "val": self.val, "test": self.test}


def condition_session(session: Session, cfg: PreprocessConfig) -> list[TrialRecord]:
    return [condition_trial(t, cfg) for t in session.trials]


def kept_segments(conditioned: Sequence[TrialRecord], report: QcReport) -> list[Segment]:
    keep = set(report.kept_ids())
    return [standardize_segment(extract_segment(t)) for t in conditioned if t.trial_id in keep]


def prepare_splits(session: Session, cfg: PipelineConfig = PipelineConfig()) -> Splits:
    conditioned = condition_session(session, cfg.preprocess)
    report = flag_bad_trials(conditioned, cfg.qc)
    segments = kept_segments(conditioned, report)
    if not segments:
        raise EmptyPartition("no trials survive quality control")
    ds = build_dataset(segments, cfg.window)
    train, val, test = split(ds, cfg.ratios, cfg.split_seed)
    return Splits(train, val, test, report)
