"""Pearson correlation, MSE, their 3-D averages, and the correlation-aware loss.

The loss for one predicted vector ``x`` and target ``y`` (length n) is::

    term1 = 1 - rho(x, y)
    term2 = 0.01 * sum((x - y)^2) / (sqrt(n) * sqrt(Syy))
    term3 = 0.1  * |Sxx - Syy| / Syy

with ``Sxx = sum((x - mean x)^2)`` and ``Syy`` likewise. The first term
rewards correlation, the other two penalize amplitude and variance
mismatch that correlation alone cannot see.

When the prediction is (numerically) constant, ``Sxx`` is floored at
``var_floor`` inside rho, which makes rho zero rather than undefined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DegenerateTarget, LengthMismatch, ZeroVariance

TERM2_WEIGHT = 0.01
TERM3_WEIGHT = 0.1
VAR_FLOOR = 1e-12
AXES = ("x", "y", "z")


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise LengthMismatch(f"lengths differ: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ZeroVariance("pearson needs at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx, syy = xc @ xc, yc @ yc
    if sxx == 0 or syy == 0:
        raise ZeroVariance("pearson undefined for a constant input", which="x" if sxx == 0 else "y")
    r = (xc @ yc) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def mse(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 1:
        raise LengthMismatch(f"lengths differ or empty: {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


@dataclass(frozen=True)
class MetricsReport:
    rho_x: float
    rho_y: float
    rho_z: float
    rho_3d: float
    mse_x: float
    mse_y: float
    mse_z: float
    mse_3d: float
    n_samples: int

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def metrics_3d(pred, target) -> MetricsReport:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise LengthMismatch(f"need matching (S, 3) arrays, got {pred.shape} and {target.shape}")
    if pred.shape[0] < 2:
        raise ZeroVariance("need at least 2 samples")
    rhos, mses = [], []
    for a, name in enumerate(AXES):
        try:
            rhos.append(pearson(pred[:, a], target[:, a]))
        except ZeroVariance as exc:
            raise ZeroVariance(f"axis {name}: {exc}", axis=name) from None
        mses.append(mse(pred[:, a], target[:, a]))
    return from_axis_values(rhos, mses, pred.shape[0])


def from_axis_values(rhos, mses, n_samples: int = 0) -> MetricsReport:
    rx, ry, rz = (float(r) for r in rhos)
    mx, my, mz = (float(m) for m in mses)
    return MetricsReport(rx, ry, rz, (rx + ry + rz) / 3, mx, my, mz, (mx + my + mz) / 3, n_samples)


# --------------------------------------------------------------------------
# loss


@dataclass(frozen=True)
class LossValue:
    total: float
    term1: float
    term2: float
    term3: float


def _loss_parts(x: np.ndarray, y: np.ndarray, var_floor: float):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise LengthMismatch(f"lengths differ: {x.shape} vs {y.shape}")
    n = x.size
    if n < 2:
        raise DegenerateTarget("need at least 2 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx, syy, sxy = xc @ xc, yc @ yc, xc @ yc
    if syy <= var_floor:
        raise DegenerateTarget("target is constant over the batch")
    sxx_f = max(sxx, var_floor)
    denom = math.sqrt(sxx_f * syy)
    rho = sxy / denom
    diff = x - y
    root = math.sqrt(n) * math.sqrt(syy)
    t1 = 1.0 - rho
    t2 = TERM2_WEIGHT * (diff @ diff) / root
    t3 = TERM3_WEIGHT * abs(sxx - syy) / syy
    return x, y, xc, yc, sxx, sxx_f, syy, rho, denom, diff, root, (t1, t2, t3)


def loss_stat(x, y, var_floor: float = VAR_FLOOR) -> LossValue:
    *_, (t1, t2, t3) = _loss_parts(x, y, var_floor)
    return LossValue(t1 + t2 + t3, t1, t2, t3)


def loss_stat_grad(x, y, var_floor: float = VAR_FLOOR) -> np.ndarray:
    """Gradient of the loss total w.r.t. the prediction ``x``.

    The |.| in term3 contributes sign(Sxx - Syy), which is 0 at the kink.
    """
    x, y, xc, yc, sxx, sxx_f, syy, rho, denom, diff, root, _ = _loss_parts(x, y, var_floor)
    # d rho / dx_i = yc_i / denom - rho * xc_i / Sxx   (zero-mean yc kills the mean term)
    d_rho = yc / denom
    if sxx > var_floor:
        d_rho = d_rho - rho * xc / sxx
    g1 = -d_rho
    g2 = TERM2_WEIGHT * 2.0 * diff / root
    g3 = TERM3_WEIGHT * np.sign(sxx - syy) * 2.0 * xc / syy
    return g1 + g2 + g3


def stat_loss_op(pred: Tensor, target: np.ndarray, var_floor: float = VAR_FLOOR) -> tuple[Tensor, LossValue]:
    """Loss summed over the columns of ``pred`` (B, k), recorded as one fused tape op."""
    P = pred.data
    T = np.asarray(target, dtype=np.float64)
    if P.shape != T.shape:
        raise LengthMismatch(f"prediction {P.shape} vs target {T.shape}")
    P2 = P if P.ndim == 2 else P.reshape(-1, 1)
    T2 = T if T.ndim == 2 else T.reshape(-1, 1)
    parts = [loss_stat(P2[:, a], T2[:, a], var_floor) for a in range(P2.shape[1])]
    total = LossValue(*(sum(getattr(p, k) for p in parts) for k in ("total", "term1", "term2", "term3")))

    def back(g):
        grad = np.column_stack([loss_stat_grad(P2[:, a], T2[:, a], var_floor) for a in range(P2.shape[1])])
        return (float(g) * grad.reshape(P.shape),)

    return ag.record("stat_loss", (pred,), np.asarray(total.total), back), total
