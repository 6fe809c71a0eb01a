"""Command-line entry point: ``neurokinect <command> [options]``.

Every command takes ``--config run.json`` (optional), repeated
``--set section.key=value`` overrides and ``--out RUN_DIR``. Commands that
need a session read ``--data-dir`` (or ``data.path`` in the config); with
neither, a synthetic session is generated in memory from ``data.synth``.

Exit status: 0 success, 2 user/config error, 1 internal error. Errors are
printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .dataset import export_csv, load_dataset, save_dataset
from .erp import averages, baseline_correct, epoch_trials, write_erp_csv
from .errors import CheckpointMissing, DatasetMissing, MissingFile, NeuroKinectError
from .ingest import Session, load_session, write_session
from .metrics import AXES, metrics_3d
from .model import load_checkpoint
from .pipeline import condition_session, kept_segments, prepare_splits
from .plots import line_plot, trajectory_plot
from .synth import SynthConfig, gen_session
from .train import (CHECKPOINT_NAME, evaluate, read_predictions, train, write_metrics,
                    write_predictions)
from .trial_qc import QcConfig, flag_bad_trials

DATASET_NAME = "dataset.bin"
MANIFEST_NAME = "run_manifest.json"


class ArtifactExists(NeuroKinectError):
    kind = "ArtifactExists"


class Run:
    """Tracks inputs/outputs of one command and appends to the run manifest."""

    def __init__(self, out: Path, command: str, cfg: RunConfig, overwrite: bool):
        self.out = out
        self.command = command
        self.cfg = cfg
        self.overwrite = overwrite
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def target(self, name: str) -> Path:
        p = self.out / name
        if p.exists() and not self.overwrite:
            raise ArtifactExists(f"{p} exists; run directories are append-only (use --overwrite)", path=str(p))
        self.outputs.append(p)
        return p

    def add_input(self, path: Path) -> None:
        for p in sorted(path.rglob("*")) if path.is_dir() else [path]:
            if p.is_file() and p.name != MANIFEST_NAME:
                self.inputs[str(p)] = sha256(p)

    def finish(self, status: str, error: dict | None = None) -> None:
        path = self.out / MANIFEST_NAME
        doc = json.loads(path.read_text()) if path.exists() else {"commands": []}
        entry = {
            "command": self.command,
            "status": status,
            "version": __version__,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "config": self.cfg.to_dict(),
            "inputs": self.inputs,
            "outputs": {str(p.name): sha256(p) for p in self.outputs if p.is_file()},
        }
        if error is not None:
            entry["error"] = error
            entry["partial_outputs"] = [p.name for p in self.outputs if p.exists()]
        doc["commands"].append(entry)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def get_session(args, cfg: RunConfig, run: Run) -> Session:
    src = args.data_dir or cfg.data_path
    if src is None:
        return gen_session(cfg.synth or SynthConfig())
    path = Path(src)
    if not path.exists():
        raise MissingFile(f"data source {path} not found", path=str(path))
    run.add_input(path)
    return load_session(path)


# --------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: RunConfig, run: Run) -> None:
    session = gen_session(cfg.synth or SynthConfig())
    run.target("manifest.json")
    run.outputs.extend(run.out / "trials" / f"{t.trial_id}_{k}.csv" for t in session.trials for k in ("eeg", "kin"))
    write_session(session, run.out)
    print(f"wrote {len(session.trials)} trials to {run.out}")


def cmd_preprocess(args, cfg: RunConfig, run: Run) -> None:
    session = get_session(args, cfg, run)
    conditioned = condition_session(session, cfg.preprocess)
    report = flag_bad_trials(conditioned, QcConfig.response_time_only())
    segs = kept_segments(conditioned, report)
    arrays = {}
    for s in segs:
        arrays[f"{s.trial_id}/eeg"] = s.eeg
        arrays[f"{s.trial_id}/kin"] = s.kin
        arrays[f"{s.trial_id}/kin_min"] = s.scaler.ax_min
        arrays[f"{s.trial_id}/kin_max"] = s.scaler.ax_max
    with open(run.target("segments.npz"), "wb") as fh:
        np.savez(fh, **arrays)
    print(f"preprocessed {len(segs)} trials (response-time rule only)")


def cmd_qc(args, cfg: RunConfig, run: Run) -> None:
    session = get_session(args, cfg, run)
    report = flag_bad_trials(condition_session(session, cfg.preprocess), cfg.qc)
    report.write_csv(run.target(args.report))
    print(json.dumps(report.counts()))


def cmd_dataset(args, cfg: RunConfig, run: Run) -> None:
    session = get_session(args, cfg, run)
    splits = prepare_splits(session, cfg.pipeline())
    splits.qc.write_csv(run.target("dataset_qc.csv"))
    save_dataset(run.target(DATASET_NAME), splits.as_dict())
    if args.csv:
        export_csv(run.target("dataset.csv"), splits.as_dict())
    print(f"train {len(splits.train)}  val {len(splits.val)}  test {len(splits.test)} samples")


def _dataset(args, run: Run) -> dict:
    path = Path(args.dataset) if args.dataset else run.out / DATASET_NAME
    if not path.is_file():
        raise DatasetMissing(f"dataset file {path} not found (run the dataset command first)", path=str(path))
    run.add_input(path)
    return load_dataset(path)


def cmd_train(args, cfg: RunConfig, run: Run) -> None:
    parts = _dataset(args, run)
    train_ds, val_ds = parts["train"], parts["val"]
    targets = [run.target(n) for n in ("train_report.csv", CHECKPOINT_NAME, "predictions.csv")]
    report = train(train_ds, val_ds, cfg.model_for(train_ds.n_channels), cfg.train, run.out, log=print)
    if report.checkpoint_path is None:
        run.outputs.remove(targets[1])
    ev = evaluate(report.best_params, val_ds)
    write_predictions(targets[2], ev, val_ds)
    print(f"best val rho_3d {ev.metrics.rho_3d:.4f}  mse_3d {ev.metrics.mse_3d:.5f}  ({report.wall_time_s:.1f} s)")


def cmd_eval(args, cfg: RunConfig, run: Run) -> None:
    parts = _dataset(args, run)
    ckpt = Path(args.checkpoint) if args.checkpoint else run.out / CHECKPOINT_NAME
    if not ckpt.is_file():
        raise CheckpointMissing(f"checkpoint {ckpt} not found (run train first)", path=str(ckpt))
    run.add_input(ckpt)
    params, _ = load_checkpoint(ckpt)
    results = {}
    for name, ds in parts.items():
        ev = evaluate(params, ds)
        results[name] = ev.metrics
        write_predictions(run.target(f"predictions_{name}.csv"), ev, ds)
    write_metrics(run.target("metrics.csv"), results)
    for name, m in results.items():
        print(f"{name:5s} rho_3d {m.rho_3d:.4f}  mse_3d {m.mse_3d:.5f}")


def cmd_erp(args, cfg: RunConfig, run: Run) -> None:
    session = get_session(args, cfg, run)
    e = cfg.erp
    report = flag_bad_trials(condition_session(session, cfg.preprocess), cfg.qc)
    ep = baseline_correct(epoch_trials(session, e.fs, e.window, cfg.preprocess.filter_spec,
                                       trial_ids=report.kept_ids(), exclude_channels=e.exclude_channels))
    result = averages({session.subject_id: ep}, {session.subject_id: report.kept_fraction}, e.min_kept_fraction)
    write_erp_csv(run.target("erp.csv"), result)
    line_plot(run.target("erp.svg"), result.times_ms, {"sum over channels": result.erp_trace},
              "Grand average ERP", "time from LED onset (ms)", "potential (uV)")
    print(f"epoched {ep.data.shape[0]} trials at {ep.fs:g} Hz; excluded subjects: {result.excluded}")


def cmd_report(args, cfg: RunConfig, run: Run) -> None:
    src = next((run.out / n for n in ("predictions_test.csv", "predictions.csv") if (run.out / n).is_file()), None)
    if src is None:
        raise MissingFile(f"no predictions in {run.out} (run train or eval first)", path=str(run.out))
    run.add_input(src)
    p = read_predictions(src)
    ids = list(dict.fromkeys(p["trial_id"]))
    rows = []
    for tid in ids:
        m = p["trial_id"] == tid
        if m.sum() < 2:
            continue
        meas = np.column_stack([p[f"measured_{a}"][m] for a in AXES])
        pred = np.column_stack([p[f"predicted_{a}"][m] for a in AXES])
        try:
            rows.append((tid, metrics_3d(pred, meas)))
        except NeuroKinectError:
            continue
    with open(run.target("report.csv"), "w") as fh:
        fh.write("trial_id,n_samples," + ",".join(f"rho_{a},mse_{a}" for a in AXES) + ",rho_3d,mse_3d\n")
        for tid, m in rows:
            vals = [repr(float(v)) for a in AXES for v in (getattr(m, f"rho_{a}"), getattr(m, f"mse_{a}"))]
            fh.write(f"{tid},{m.n_samples}," + ",".join(vals) + f",{m.rho_3d!r},{m.mse_3d!r}\n")
    tid = args.trial or ids[0]
    m = p["trial_id"] == tid
    if not m.any():
        raise MissingFile(f"trial {tid!r} not in {src.name}", trial_id=tid)
    frames = p["target_frame"][m]
    for a in AXES:
        line_plot(run.target(f"report_{a}.svg"), frames,
                  {"measured": p[f"measured_{a}_unscaled"][m], "predicted": p[f"predicted_{a}_unscaled"][m]},
                  f"Trial {tid}: {a.upper()} position", "frame", a)
    meas = np.column_stack([p[f"measured_{a}_unscaled"][m] for a in AXES])
    pred = np.column_stack([p[f"predicted_{a}_unscaled"][m] for a in AXES])
    trajectory_plot(run.target("trajectory.svg"), meas, pred, f"Trial {tid}: 3-D hand path")
    print(f"report for {len(rows)} trials from {src.name}")


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "qc": cmd_qc,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "erp": cmd_erp,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neurokinect", description="EEG to 3-D hand kinematics decoding")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run config (JSON)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. train.epochs=5")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--overwrite", action="store_true", help="replace existing artifacts")
        if name in ("preprocess", "qc", "dataset", "erp"):
            p.add_argument("--data-dir", help="session directory or manifest file")
        if name in ("train", "eval"):
            p.add_argument("--dataset", help=f"dataset file (default RUN_DIR/{DATASET_NAME})")
        if name == "eval":
            p.add_argument("--checkpoint", help=f"checkpoint (default RUN_DIR/{CHECKPOINT_NAME})")
        if name == "qc":
            p.add_argument("--threshold", help="RMSE threshold: a number, 'strict', 'lenient' or 'off'")
            p.add_argument("--report", default="qc.csv", help="report file name inside RUN_DIR")
        if name == "dataset":
            p.add_argument("--lags", type=int, help="EEG lags l (window.lags)")
            p.add_argument("--delay", type=int, help="transfer delay d (window.transfer_delay)")
            p.add_argument("--csv", action="store_true", help="also export a flattened CSV")
        if name == "report":
            p.add_argument("--trial", help="trial to plot (default: first)")
    return ap


def _fail(err: dict, code: int) -> int:
    print(json.dumps({"error": err}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.data_dir = getattr(args, "data_dir", None)
    overrides = list(args.set)
    if getattr(args, "threshold", None) is not None:
        overrides.append(f"qc.rmse_threshold={args.threshold}")
    if getattr(args, "lags", None) is not None:
        overrides.append(f"window.lags={args.lags}")
    if getattr(args, "delay", None) is not None:
        overrides.append(f"window.transfer_delay={args.delay}")
    try:
        cfg = load_config(args.config, overrides)
    except NeuroKinectError as exc:
        return _fail(exc.to_dict(), 2 if exc.user_error else 1)
    run = Run(Path(args.out), args.command, cfg, args.overwrite)
    try:
        COMMANDS[args.command](args, cfg, run)
    except NeuroKinectError as exc:
        err = exc.to_dict()
        run.finish("failed", err)
        return _fail(err, 2 if exc.user_error else 1)
    except Exception as exc:  # anything unexpected is an internal error
        err = {"kind": "InternalError", "message": f"{type(exc).__name__}: {exc}"}
        run.finish("failed", err)
        return _fail(err, 1)
    run.finish("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
