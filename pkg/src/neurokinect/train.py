"""Mini-batch training with the correlation-aware loss, validation and checkpointing."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .dataset import LaggedDataset, batch_iter
from .errors import DegenerateTarget, EmptyPartition, InvalidConfig, NonFiniteLoss, ZeroVariance
from .metrics import AXES, LossValue, MetricsReport, metrics_3d, stat_loss_op
from .model import ModelConfig, ModelParams, forward, init_model, predict, save_checkpoint
from .preprocess import inverse_scale

CHECKPOINT_NAME = "model.ckpt"
METRIC_FIELDS = [f.name for f in fields(MetricsReport) if f.name != "n_samples"]


def _num(v) -> str:
    """Shortest round-tripping text for a float (numpy scalars included)."""
    return repr(float(v))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 100
    lr: float = 2e-2
    lr_decay: float = 0.8  # learning rate multiplier applied after each epoch
    seed: int = 0
    rho_tolerance: float = 0.005

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 2:
            raise InvalidConfig("epochs must be >= 1 and batch_size >= 2")
        if not self.lr > 0 or not 0 < self.lr_decay <= 1 or self.rho_tolerance < 0:
            raise InvalidConfig("lr must be > 0, lr_decay in (0, 1] and rho_tolerance >= 0")


@dataclass
class CheckpointPolicy:
    """Keep the best correlation, but accept a slightly lower one if MSE improves.

    A new evaluation is saved when rho > best_rho, or when
    rho >= best_rho - tolerance and mse < best_mse. ``best_rho_3d`` tracks
    the highest correlation seen at any save; ``best_mse_3d`` is the MSE of
    the most recently saved model.
    """

    rho_tolerance: float = 0.005
    best_rho_3d: float = -math.inf
    best_mse_3d: float = math.inf

    def should_save(self, rho: float, mse: float) -> bool:
        return rho > self.best_rho_3d or (rho >= self.best_rho_3d - self.rho_tolerance and mse < self.best_mse_3d)

    def update(self, rho: float, mse: float) -> bool:
        save = self.should_save(rho, mse)
        if save:
            self.best_rho_3d = max(self.best_rho_3d, rho)
            self.best_mse_3d = mse
        return save


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: LossValue  # mean over batches
    val: MetricsReport | None  # None when validation predictions were constant
    checkpoint: bool
    best_rho_3d: float
    skipped_batches: int = 0


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_time_s: float = 0.0
    checkpoint_path: str | None = None
    best_params: ModelParams | None = None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss_total", "loss_term1", "loss_term2", "loss_term3"]
                       + ["val_" + k for k in METRIC_FIELDS] + ["checkpoint", "best_rho_3d", "skipped_batches"])
            for r in self.epochs:
                val = [_num(getattr(r.val, k)) if r.val else "nan" for k in METRIC_FIELDS]
                w.writerow([r.epoch, _num(r.loss.total), _num(r.loss.term1), _num(r.loss.term2), _num(r.loss.term3)]
                           + val + [int(r.checkpoint), _num(r.best_rho_3d), r.skipped_batches])


def read_train_report(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k in ("epoch", "checkpoint", "skipped_batches") else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def model_config_for(ds: LaggedDataset, base: ModelConfig = ModelConfig()) -> ModelConfig:
    """Copy of ``base`` with input dimensions taken from the dataset."""
    return replace(base, n_channels=ds.n_channels, window_steps=ds.cfg.lags + 1)


def train_step(params: ModelParams, x: np.ndarray, y: np.ndarray, state: ag.AdamState,
               rng: np.random.Generator) -> LossValue:
    with ag.Tape() as tape:
        pred = forward(params, x, "train", rng)
        loss, value = stat_loss_op(pred, y)
    grads = ag.backward(tape, loss)
    named = {name: grads[t.id] for name, t in params.weights.items()}
    ag.adam_step(params.weights, named, state)
    return value


def safe_metrics(pred: np.ndarray, target: np.ndarray) -> MetricsReport | None:
    try:
        return metrics_3d(pred, target)
    except ZeroVariance:
        return None


def train(train_ds: LaggedDataset, val_ds: LaggedDataset, model_cfg: ModelConfig | None = None,
          cfg: TrainConfig = TrainConfig(), out_dir: str | Path | None = None,
          log=None) -> TrainReport:
    """Train from a fresh initialization; deterministic for fixed configs.

    Batches whose targets are constant on some axis (or with fewer than two
    samples) carry no correlation signal and are skipped.
    """
    cfg.validate()
    if len(train_ds) < 2 or len(val_ds) < 2:
        raise EmptyPartition("train and val need at least 2 samples each")
    train_ds = train_ds.with_layout("sequence")
    val_ds = val_ds.with_layout("sequence")
    model_cfg = model_cfg or model_config_for(train_ds)
    model_cfg.validate()
    params = init_model(model_cfg)
    state = ag.AdamState(lr=cfg.lr)
    policy = CheckpointPolicy(cfg.rho_tolerance)
    drop_rng = np.random.Generator(np.random.PCG64([cfg.seed, 1 << 20]))
    report = TrainReport()
    ckpt = Path(out_dir) / CHECKPOINT_NAME if out_dir is not None else None
    t0 = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(4)
        n_used = skipped = 0
        for b, idx in enumerate(batch_iter(len(train_ds), cfg.batch_size, True, cfg.seed, epoch)):
            x, y = train_ds.inputs[idx], train_ds.targets[idx]
            try:
                value = train_step(params, x, y, state, drop_rng)
            except DegenerateTarget:
                skipped += 1
                continue
            if not math.isfinite(value.total):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            sums += (value.total, value.term1, value.term2, value.term3)
            n_used += 1
        state.lr *= cfg.lr_decay
        mean_loss = LossValue(*(float(v) for v in sums / max(n_used, 1)))
        val = safe_metrics(predict(params, val_ds.inputs), val_ds.targets)
        saved = val is not None and policy.update(val.rho_3d, val.mse_3d)
        if saved:
            report.best_params = params.copy()
            if ckpt is not None:
                save_checkpoint(params, ckpt, {"epoch": epoch, "rho_3d": val.rho_3d, "mse_3d": val.mse_3d})
        report.epochs.append(EpochRecord(epoch, mean_loss, val, saved, policy.best_rho_3d, skipped))
        if log:
            vtxt = f"val rho3d {val.rho_3d:.4f} mse3d {val.mse_3d:.5f}" if val else "val constant"
            log(f"epoch {epoch:3d} loss {mean_loss.total:.4f} {vtxt}{' *' if saved else ''}")

    report.wall_time_s = time.perf_counter() - t0
    report.checkpoint_path = str(ckpt) if ckpt is not None and report.best_params is not None else None
    if report.best_params is None:
        report.best_params = params.copy()
    if out_dir is not None:
        report.write_csv(Path(out_dir) / "train_report.csv")
    return report


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Evaluation:
    metrics: MetricsReport
    pred: np.ndarray  # scaled space
    target: np.ndarray

    def unscaled(self, ds: LaggedDataset) -> tuple[np.ndarray, np.ndarray]:
        """Predictions and targets mapped back to each trial's original units."""
        if not ds.scalers or any(s is None for s in ds.scalers):
            return self.pred, self.target
        pred_u = np.empty_like(self.pred)
        targ_u = np.empty_like(self.target)
        for k, sc in enumerate(ds.scalers):
            m = ds.trial_index == k
            pred_u[m] = inverse_scale(self.pred[m].T, sc).T
            targ_u[m] = inverse_scale(self.target[m].T, sc).T
        return pred_u, targ_u


def evaluate(params: ModelParams, ds: LaggedDataset) -> Evaluation:
    if len(ds) == 0:
        raise EmptyPartition("cannot evaluate an empty split")
    ds = ds.with_layout("sequence")
    pred = predict(params, ds.inputs)
    return Evaluation(metrics_3d(pred, ds.targets), pred, ds.targets)


PRED_COLUMNS = (["sample", "trial_id", "target_frame"]
                + [f"measured_{a}" for a in AXES] + [f"predicted_{a}" for a in AXES]
                + [f"measured_{a}_unscaled" for a in AXES] + [f"predicted_{a}_unscaled" for a in AXES])


def write_predictions(path: str | Path, ev: Evaluation, ds: LaggedDataset) -> None:
    pred_u, targ_u = ev.unscaled(ds)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PRED_COLUMNS)
        for s in range(len(ds)):
            w.writerow([s, ds.trial_ids[ds.trial_index[s]], int(ds.target_frame[s])]
                       + [repr(float(v)) for v in (*ev.target[s], *ev.pred[s], *targ_u[s], *pred_u[s])])


def read_predictions(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {"trial_id": np.array([r["trial_id"] for r in rows])}
    for col in PRED_COLUMNS:
        if col != "trial_id":
            out[col] = np.array([float(r[col]) for r in rows])
    return out


def write_metrics(path: str | Path, rows: dict[str, MetricsReport]) -> None:
    """One row per split with all MetricsReport fields."""
    names = [f.name for f in fields(MetricsReport)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split"] + names)
        for split_name, m in rows.items():
            w.writerow([split_name] + [str(m.n_samples) if k == "n_samples" else _num(getattr(m, k)) for k in names])


def read_metrics(path: str | Path) -> dict[str, MetricsReport]:
    with open(path, newline="") as fh:
        out = {}
        for row in csv.DictReader(fh):
            name = row.pop("split")
            out[name] = MetricsReport(**{k: (int(v) if k == "n_samples" else float(v)) for k, v in row.items()})
    return out
