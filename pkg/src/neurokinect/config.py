"""Run configuration: one JSON file, strict keys, dotted-key overrides.

Example::

    {
      "data": {"synth": {"n_trials": 50, "seed": 0}},
      "qc": {"rmse_threshold": 100},
      "window": {"lags": 10, "transfer_delay": 4},
      "train": {"epochs": 15, "lr": 0.02, "seed": 0}
    }

``data`` holds exactly one of ``path`` (session manifest or directory) or
``synth`` (SynthConfig fields). Every section is optional and defaults
apply. The ``NEUROKINECT_SEED`` environment variable, when set, replaces
``train.seed``; that seed also drives model initialization and the split.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .dataset import WindowConfig
from .erp import EpochWindow
from .errors import InvalidConfig, MissingFile
from .model import ModelConfig
from .pipeline import PipelineConfig
from .preprocess import PreprocessConfig
from .synth import SynthConfig
from .train import TrainConfig
from .trial_qc import QcConfig

SEED_ENV = "NEUROKINECT_SEED"


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class ErpConfig:
    fs: float | None = None  # None keeps the source rate
    pre_ms: float = 1000.0
    post_ms: float = 6000.0
    baseline_ms: float = 1000.0
    min_kept_fraction: float = 0.6
    exclude_channels: tuple[int, ...] = ()

    @property
    def window(self) -> EpochWindow:
        return EpochWindow(self.pre_ms, self.post_ms, self.baseline_ms)


@dataclass(frozen=True)
class RunConfig:
    data_path: str | None = None
    synth: SynthConfig | None = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    qc: QcConfig = field(default_factory=lambda: QcConfig.preset("strict"))
    window: WindowConfig = field(default_factory=WindowConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    erp: ErpConfig = field(default_factory=ErpConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.preprocess, self.qc, self.window, self.split.ratios, self.seed)

    def model_for(self, n_channels: int) -> ModelConfig:
        return replace(self.model, n_channels=n_channels, window_steps=self.window.lags + 1, seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data"] = {"path": d.pop("data_path")} if self.data_path else {"synth": d.pop("synth")}
        d.pop("data_path", None)
        d.pop("synth", None)
        d["model"] = self.model.to_dict()
        return json.loads(json.dumps(d, default=_jsonable))


def _jsonable(v):
    if isinstance(v, float):
        return v
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"not serializable: {type(v)}")


SECTIONS = {
    "preprocess": PreprocessConfig,
    "qc": QcConfig,
    "window": WindowConfig,
    "split": SplitConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "erp": ErpConfig,
}
TOP_KEYS = {"data"} | set(SECTIONS)


def _section(cls, raw: Any, name: str):
    if not isinstance(raw, dict):
        raise InvalidConfig(f"section {name!r} must be an object", field=name)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InvalidConfig(f"unknown key {name}.{unknown[0]}", field=f"{name}.{unknown[0]}")
    kwargs = {}
    for k, v in raw.items():
        kwargs[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v
    if cls is QcConfig and "rmse_threshold" not in kwargs:
        kwargs["rmse_threshold"] = QcConfig.preset("strict").rmse_threshold
    if cls is QcConfig and isinstance(kwargs.get("rmse_threshold"), str):
        kwargs["rmse_threshold"] = _rmse_value(kwargs["rmse_threshold"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"section {name!r}: {exc}", field=name) from None


def _rmse_value(v: str) -> float:
    from .trial_qc import RMSE_PRESETS

    if v == "off":
        return float("inf")
    if v not in RMSE_PRESETS:
        raise InvalidConfig(f"qc.rmse_threshold: expected a number, 'off' or one of {sorted(RMSE_PRESETS)}",
                            field="qc.rmse_threshold")
    return RMSE_PRESETS[v]


def parse_config(raw: dict, env: dict | None = None) -> RunConfig:
    """Validate a whole config dict; nothing runs until this succeeds."""
    env = os.environ if env is None else env
    if not isinstance(raw, dict):
        raise InvalidConfig("config must be a JSON object")
    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        raise InvalidConfig(f"unknown key {unknown[0]!r}", field=unknown[0])
    data = raw.get("data", {"synth": {}})
    if not isinstance(data, dict) or len(data) != 1 or next(iter(data)) not in ("path", "synth"):
        raise InvalidConfig("data must be {\"path\": ...} or {\"synth\": {...}}", field="data")
    kwargs: dict[str, Any] = {}
    if "path" in data:
        kwargs["data_path"] = str(data["path"])
    else:
        kwargs["synth"] = _section(SynthConfig, data["synth"], "data.synth")
    for name, cls in SECTIONS.items():
        if name in raw:
            kwargs[name] = _section(cls, raw[name], name)
    cfg = RunConfig(**kwargs)
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise InvalidConfig(f"{SEED_ENV} must be an integer", field=SEED_ENV) from None
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    try:
        if cfg.synth is not None:
            cfg.synth.validate()
        cfg.model_for(1).validate()
        cfg.train.validate()
        cfg.erp.window.samples(cfg.preprocess.fs_out_hz)
        cfg.preprocess.filter_spec.validate(cfg.preprocess.fs_out_hz)
    except InvalidConfig:
        raise
    except Exception as exc:  # config-level errors of other kinds are still user errors
        raise InvalidConfig(str(exc)) from None


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings (value parsed as JSON, else kept as text)."""
    raw = json.loads(json.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise InvalidConfig(f"override {item!r} is not key=value", field=item)
        key, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise InvalidConfig(f"override {key!r} descends into a non-object", field=key)
        node[parts[-1]] = value
    return raw


def load_config(path: str | Path | None, overrides: list[str] = (), env: dict | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise MissingFile(f"config file {p} not found", path=str(p))
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{p}: invalid JSON ({exc})", field="config") from None
    return parse_config(apply_overrides(raw, list(overrides)), env)
