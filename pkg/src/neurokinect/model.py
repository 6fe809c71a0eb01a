"""Hand-position decoder: kernel-1 conv branches -> bidirectional LSTM -> dense head.

Forward pass for a batch ``x`` of shape (B, steps, N):

1. Each conv branch is a kernel-1 convolution, i.e. the same affine map
   applied to every time step, followed by its activation and a softmax over
   the branch's own features. Branch outputs are concatenated.
2. An LSTM runs over the steps in each direction; the two final hidden
   states are concatenated and passed through a softmax.
3. Dense layers: affine (no bias) -> batch norm -> activation -> dropout.
4. A linear (or sigmoid) head of width 3.

Weights are drawn from U(-sqrt(3/fan_in), +sqrt(3/fan_in)) (variance
1/fan_in) with a PCG64 generator seeded from the config; biases and batch
norm shifts start at zero, batch norm scales at one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidConfig, SchemaViolation, ShapeMismatch

LSTM_GATES = ("input", "forget", "cell", "output")


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int = 32
    window_steps: int = 11
    conv_branches: tuple[tuple[int, str], ...] = ((4, "relu"), (4, "elu"), (4, "selu"), (4, "leaky_relu"))
    lstm_hidden: int = 32
    dense_widths: tuple[int, ...] = (32,)
    dense_activation: str = "relu"
    dropout_rate: float = 0.1
    output_dim: int = 3
    output_activation: str = "linear"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_branches", tuple((int(w), str(a)) for w, a in self.conv_branches))
        object.__setattr__(self, "dense_widths", tuple(int(w) for w in self.dense_widths))

    def validate(self) -> None:
        if self.n_channels < 1 or self.window_steps < 1:
            raise InvalidConfig("n_channels and window_steps must be >= 1")
        if not self.conv_branches:
            raise InvalidConfig("at least one conv branch is required")
        for w, act in self.conv_branches:
            if w < 1:
                raise InvalidConfig(f"conv branch width must be >= 1, got {w}")
            if act not in ag.ACTIVATIONS:
                raise InvalidConfig(f"unknown activation {act!r}")
        if self.lstm_hidden < 1 or any(w < 1 for w in self.dense_widths):
            raise InvalidConfig("lstm_hidden and dense widths must be >= 1")
        if self.dense_activation not in ag.ACTIVATIONS:
            raise InvalidConfig(f"unknown activation {self.dense_activation!r}")
        if self.output_dim != 3:
            raise InvalidConfig("output_dim must be 3")
        if self.output_activation not in ("linear", "sigmoid"):
            raise InvalidConfig("output_activation must be linear or sigmoid")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig("dropout_rate must be in [0, 1)")

    @property
    def conv_features(self) -> int:
        return sum(w for w, _ in self.conv_branches)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_branches"] = [list(b) for b in self.conv_branches]
        d["dense_widths"] = list(self.dense_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaViolation(f"unknown model keys {sorted(unknown)}", field=sorted(unknown)[0], reason="unknown")
        return cls(**d)


@dataclass
class ModelParams:
    cfg: ModelConfig
    weights: dict[str, Tensor]
    running: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def total_count(self) -> int:
        return sum(t.size for t in self.weights.values()) + sum(a.size for a in self.running.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.cfg,
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.running.items()},
        )


def param_shapes(cfg: ModelConfig) -> tuple[dict[str, tuple[int, ...]], dict[str, tuple[int, ...]]]:
    """Trainable and running-statistic tensor shapes, in canonical order."""
    cfg.validate()
    N, H = cfg.n_channels, cfg.lstm_hidden
    w: dict[str, tuple[int, ...]] = {}
    for k, (width, _) in enumerate(cfg.conv_branches):
        w[f"conv{k}.weight"] = (N, width)
        w[f"conv{k}.bias"] = (width,)
    F = cfg.conv_features
    for d in ("fw", "bw"):
        w[f"lstm_{d}.w_in"] = (F, 4 * H)
        w[f"lstm_{d}.w_rec"] = (H, 4 * H)
        w[f"lstm_{d}.bias"] = (4 * H,)
    run: dict[str, tuple[int, ...]] = {}
    fan_in = 2 * H
    for j, width in enumerate(cfg.dense_widths):
        w[f"dense{j}.weight"] = (fan_in, width)
        w[f"bn{j}.gamma"] = (width,)
        w[f"bn{j}.beta"] = (width,)
        run[f"bn{j}.mean"] = (width,)
        run[f"bn{j}.var"] = (width,)
        fan_in = width
    w["head.weight"] = (fan_in, cfg.output_dim)
    w["head.bias"] = (cfg.output_dim,)
    return w, run


def count_params(cfg: ModelConfig) -> int:
    w, run = param_shapes(cfg)
    return int(sum(np.prod(s) for s in w.values()) + sum(np.prod(s) for s in run.values()))


def init_model(cfg: ModelConfig) -> ModelParams:
    shapes, run_shapes = param_shapes(cfg)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    weights = {}
    for name, shape in shapes.items():
        if name.endswith(".gamma"):
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            limit = np.sqrt(3.0 / shape[0])
            data = rng.uniform(-limit, limit, size=shape)
        weights[name] = Tensor(data, requires_grad=True, name=name)
    running = {name: (np.ones(s) if name.endswith(".var") else np.zeros(s)) for name, s in run_shapes.items()}
    return ModelParams(cfg, weights, running)


# --------------------------------------------------------------------------
# stages


def conv_stage(params: ModelParams, x: Tensor) -> Tensor:
    """(B, steps, N) -> (B, steps, F): per-step kernel-1 branches, each softmax-normalized."""
    B, T, N = x.shape
    flat = ag.reshape(x, (B * T, N))
    outs = []
    for k, (_, act) in enumerate(params.cfg.conv_branches):
        z = ag.add(ag.matmul(flat, params.weights[f"conv{k}.weight"]), params.weights[f"conv{k}.bias"])
        outs.append(ag.softmax(ag.ACTIVATIONS[act](z), axis=1))
    feat = outs[0] if len(outs) == 1 else ag.concat(outs, axis=1)
    return ag.reshape(feat, (B, T, params.cfg.conv_features))


def lstm_final_state(steps: Sequence[Tensor], w_in: Tensor, w_rec: Tensor, bias: Tensor) -> Tensor:
    """Run an LSTM over ``steps`` (each (B, F)) from zero state; return the last hidden state."""
    H = w_rec.shape[0]
    B = steps[0].shape[0]
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    for x_t in steps:
        z = ag.add(ag.add(ag.matmul(x_t, w_in), ag.matmul(h, w_rec)), bias)
        i = ag.sigmoid(ag.slice_(z, (slice(None), slice(0, H))))
        f = ag.sigmoid(ag.slice_(z, (slice(None), slice(H, 2 * H))))
        g = ag.tanh(ag.slice_(z, (slice(None), slice(2 * H, 3 * H))))
        o = ag.sigmoid(ag.slice_(z, (slice(None), slice(3 * H, 4 * H))))
        c = ag.add(ag.mul(f, c), ag.mul(i, g))
        h = ag.mul(o, ag.tanh(c))
    return h


def bilstm(seq: Tensor, fw: Sequence[Tensor], bw: Sequence[Tensor]) -> Tensor:
    """Concatenate [forward final state, backward final state] for (B, T, F) input."""
    T = seq.shape[1]
    steps = [ag.slice_(seq, (slice(None), t, slice(None))) for t in range(T)]
    h_fw = lstm_final_state(steps, *fw)
    h_bw = lstm_final_state(steps[::-1], *bw)
    return ag.concat([h_fw, h_bw], axis=1)


def _lstm_weights(params: ModelParams, direction: str) -> tuple[Tensor, Tensor, Tensor]:
    w = params.weights
    return w[f"lstm_{direction}.w_in"], w[f"lstm_{direction}.w_rec"], w[f"lstm_{direction}.bias"]


def forward(params: ModelParams, batch, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
    """Predict (B, 3) positions. Run inside a :class:`~neurokinect.autograd.Tape` to train."""
    cfg = params.cfg
    x = ag.as_tensor(batch)
    if x.data.ndim != 3 or x.shape[1:] != (cfg.window_steps, cfg.n_channels):
        raise ShapeMismatch(
            f"batch shape {x.shape} does not match (B, {cfg.window_steps}, {cfg.n_channels})",
            got=list(x.shape),
        )
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    train = mode == "train"
    w = params.weights

    feat = conv_stage(params, x)
    h = ag.softmax(bilstm(feat, _lstm_weights(params, "fw"), _lstm_weights(params, "bw")), axis=1)
    act = ag.ACTIVATIONS[cfg.dense_activation]
    for j in range(len(cfg.dense_widths)):
        z = ag.matmul(h, w[f"dense{j}.weight"])
        z = ag.batch_norm(z, w[f"bn{j}.gamma"], w[f"bn{j}.beta"],
                          params.running[f"bn{j}.mean"], params.running[f"bn{j}.var"], train)
        h = ag.dropout(act(z), cfg.dropout_rate, rng, train)
    out = ag.add(ag.matmul(h, w["head.weight"]), w["head.bias"])
    return ag.ACTIVATIONS[cfg.output_activation](out)


def predict(params: ModelParams, inputs: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    """Eval-mode predictions for an (S, steps, N) array."""
    outs = [forward(params, inputs[i : i + batch_size], "eval").data for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, params.cfg.output_dim))


# --------------------------------------------------------------------------
# checkpoint file
#
#   magic  b"NKCKPT01"
#   u32    length of UTF-8 JSON config echo, then the JSON bytes
#   u32    tensor count
#   per tensor: u16 name length, name bytes, u8 kind (0 weight, 1 running),
#               u8 ndim, ndim x u32 dims, prod(dims) little-endian float64
#
# All integers little-endian.

MAGIC = b"NKCKPT01"


def save_checkpoint(params: ModelParams, path: str | Path, extra: dict | None = None) -> None:
    cfg_json = json.dumps({"model": params.cfg.to_dict(), "extra": extra or {}}, sort_keys=True).encode()
    items = [(k, 0, t.data) for k, t in params.weights.items()] + [(k, 1, a) for k, a in params.running.items()]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        fh.write(struct.pack("<I", len(items)))
        for name, kind, arr in items:
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", kind, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise SchemaViolation(f"{path}: not a checkpoint file", field="magic", reason="value")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    (n,) = take("<I")
    meta = json.loads(buf[pos : pos + n].decode())
    pos += n
    cfg = ModelConfig.from_dict(meta["model"])
    (count,) = take("<I")
    weights, running = {}, {}
    for _ in range(count):
        (ln,) = take("<H")
        name = buf[pos : pos + ln].decode()
        pos += ln
        kind, ndim = take("<BB")
        dims = take(f"<{ndim}I")
        size = int(np.prod(dims))
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * size
        if kind == 0:
            weights[name] = Tensor(arr, requires_grad=True, name=name)
        else:
            running[name] = arr
    expected, expected_run = param_shapes(cfg)
    got = {k: t.shape for k, t in weights.items()}
    if got != expected or {k: a.shape for k, a in running.items()} != expected_run:
        raise SchemaViolation(f"{path}: tensor shapes disagree with the config echo", field="tensors", reason="shape")
    return ModelParams(cfg, weights, running), meta.get("extra", {})
