"""Losses, metrics, training loops and the missing-data protocol."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, DomainError, ParameterError, TrainingError
from .optim import Adam
from .seeding import rng

log = logging.getLogger(__name__)

MAPE_GUARD = 1e-3


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 1e-3
    epochs: int = 300
    seed: int = 0
    max_step: float = 0.125
    batch_size: int = 64
    patience: int = 15
    grad_clip: float | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class MetricsReport:
    """Errors over observed entries; ``mape`` is in percent."""

    split: str
    mae: float
    rmse: float
    mape: float
    horizon: int | None = None
    per_horizon: list = field(default_factory=list)


def l1_loss(pred, truth, mask=None):
    """Mean |pred - truth| over every prediction step (and observed entries)."""
    return T.masked_l1(pred, truth, mask)


def _observed(pred, truth, mask):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    keep = np.ones(truth.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return pred, truth, keep


def mape(pred, truth, observed_mask=None, guard=MAPE_GUARD):
    """Mean |x - x_hat| / |x| over observed entries with |x| >= guard (a fraction)."""
    pred, truth, keep = _observed(pred, truth, observed_mask)
    keep = keep & (np.abs(truth) >= guard)
    if not keep.any():
        raise DomainError("MAPE undefined: every entry is masked or below the zero guard")
    return float(np.mean(np.abs(truth[keep] - pred[keep]) / np.abs(truth[keep])))


def rmse_mae(pred, truth, observed_mask=None):
    pred, truth, keep = _observed(pred, truth, observed_mask)
    if not keep.any():
        raise DomainError("metrics undefined on an empty observation mask")
    d = truth[keep] - pred[keep]
    return float(np.sqrt(np.mean(d * d))), float(np.mean(np.abs(d)))


def report(split, pred, truth, mask=None, horizon=None):
    rmse, mae = rmse_mae(pred, truth, mask)
    return MetricsReport(split, mae, rmse, 100.0 * mape(pred, truth, mask), horizon)


# missing data -------------------------------------------------------------

def corrupt_dataset(values, rate, seed=0, times=None):
    """Drop exactly round(rate * N) entries and refill them by linear interpolation.

    ``values`` has time on axis 0. Returns ``(filled_copy, mask)`` where mask
    is 1 for observed entries. Gaps are interpolated per node in time (using
    ``times`` when given); leading/trailing gaps take the nearest observation.
    """
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"missing rate must lie in [0, 1), got {rate}")
    values = np.asarray(values, dtype=np.float64)
    mask = np.ones(values.shape)
    count = int(round(rate * values.size))
    if count == 0:
        return values.copy(), mask
    drop = rng(seed, "train-eval/missing").permutation(values.size)[:count]
    mask.reshape(-1)[drop] = 0.0
    return interpolate_missing(values, mask, times), mask


def interpolate_missing(values, mask, times=None):
    values = np.asarray(values, dtype=np.float64)
    n_t = values.shape[0]
    t = np.arange(n_t, dtype=np.float64) if times is None else np.asarray(times, dtype=np.float64)
    flat = values.reshape(n_t, -1).copy()
    m = np.asarray(mask).reshape(n_t, -1) > 0
    for j in range(flat.shape[1]):
        obs = m[:, j]
        if obs.all():
            continue
        if not obs.any():
            flat[:, j] = 0.0
            continue
        flat[~obs, j] = np.interp(t[~obs], t[obs], flat[obs, j])
    return flat.reshape(values.shape)


# dynamics -----------------------------------------------------------------

def _params(model):
    return model.named_parameters()


def data_scale(traj, splits, mask=None):
    """Mean absolute value of the observed training snapshots (1.0 if that is zero)."""
    idx = np.asarray(splits.train)
    vals = np.abs(traj.states[idx])
    if mask is not None:
        keep = np.asarray(mask)[idx] > 0
        vals = vals[keep]
    scale = float(vals.mean()) if vals.size else 0.0
    return scale if scale > 0 and math.isfinite(scale) else 1.0


def corrupt_trajectory(traj, rate, seed=0):
    """Corrupt every snapshot after the initial state; returns ``(trajectory, mask)``."""
    from .dynamics import Trajectory

    filled, m = corrupt_dataset(traj.states[1:], rate, seed, times=traj.times[1:])
    states = np.concatenate([traj.states[:1], filled])
    mask = np.concatenate([np.ones((1,) + traj.states.shape[1:]), m])
    return Trajectory(traj.times, states, traj.graph_ref, traj.params_ref), mask


def train_dynamics(model, traj, splits, cfg, mask=None, callback=None):
    """Full-batch L1 training on the training snapshots.

    Returns ``(model, reports, history)`` with reports for the train,
    interpolation and extrapolation splits (where non-empty).
    """
    states = traj.states
    x0 = states[0]
    train_idx = np.asarray(splits.train)
    t_train = np.concatenate([[traj.times[0]], traj.times[train_idx]])
    truth = states[train_idx].reshape(-1, states.shape[2])
    train_mask = None if mask is None else mask[train_idx].reshape(truth.shape)
    params = _params(model)
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = traj.n
    history = []
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        pred = model.forward(x0, t_train)
        pred = T.row_slice(pred, n, pred.shape[0])
        loss = l1_loss(pred, truth, train_mask)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        T.backward(loss)
        if cfg.grad_clip:
            _clip(params, cfg.grad_clip)
        opt.step()
        history.append(value)
        if callback is not None:
            callback(epoch, value)
    return model, evaluate_dynamics(model, traj, splits, mask), history


def _clip(params, max_norm):
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values()
                          if p.grad is not None))
    if total > max_norm:
        for p in params.values():
            if p.grad is not None:
                p.grad *= max_norm / total


def evaluate_dynamics(model, traj, splits, mask=None):
    pred = model.predict(traj.states[0], traj.times)
    out = {}
    for name, idx in splits.as_dict().items():
        idx = np.asarray(idx)
        if idx.size == 0:
            continue
        m = None if mask is None else mask[idx]
        out[name] = report(name, pred[idx], traj.states[idx], m)
    return out


# forecasting --------------------------------------------------------------

@dataclass
class Normalizer:
    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, values, mask=None):
        v = np.asarray(values, dtype=np.float64)
        if mask is not None:
            v = v[np.asarray(mask) > 0]
        std = float(v.std())
        return cls(float(v.mean()), std if std > 0 else 1.0)

    def transform(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def inverse(self, x):
        return np.asarray(x) * self.std + self.mean


SPLITS = {"metr": (0.7, 0.1, 0.2), "pems": (0.6, 0.2, 0.2)}


def split_series(series, fractions=(0.7, 0.1, 0.2)):
    """Chronological train/val/test segments of a (time x ...) array."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"split fractions must sum to 1, got {fractions}")
    n = len(series)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return series[:a], series[a:b], series[b:]


def make_windows(series, T_in, tau, stride=1, mask=None, allow_empty=False):
    """(inputs, targets[, target mask]) with shapes (N, T_in, n, d) and (N, tau, n, d)."""
    s = np.asarray(series, dtype=np.float64)
    if s.ndim == 2:
        s = s[:, :, None]
    count = len(s) - T_in - tau + 1
    if count <= 0 and not allow_empty:
        raise ParameterError(f"series of length {len(s)} too short for T={T_in}, tau={tau}")
    starts = np.arange(0, max(count, 0), stride)
    tail = s.shape[1:]

    def stack(arr, off, length):
        if not len(starts):
            return np.zeros((0, length) + tail)
        return np.stack([arr[i + off:i + off + length] for i in starts])

    X, Y = stack(s, 0, T_in), stack(s, T_in, tau)
    if mask is None:
        return X, Y
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 2:
        m = m[:, :, None]
    return X, Y, stack(m, T_in, tau)


@dataclass
class ForecastData:
    train: tuple
    val: tuple
    test: tuple
    normalizer: Normalizer


def prepare_forecast_data(series, T_in=12, tau=12, fractions=(0.7, 0.1, 0.2), mask=None,
                          stride=1):
    """Split chronologically, z-score with train statistics, and window each part."""
    series = np.asarray(series, dtype=np.float64)
    if mask is None:
        mask = np.ones(series.shape)
    parts = split_series(series, fractions)
    mparts = split_series(mask, fractions)
    norm = Normalizer.fit(parts[0], mparts[0])
    win = [make_windows(norm.transform(p), T_in, tau, stride, m, allow_empty=True)
           for p, m in zip(parts, mparts)]
    if not len(win[0][0]):
        raise ParameterError("training segment too short for one window")
    return ForecastData(win[0], win[1], win[2], norm)


def train_forecaster(model, data, cfg, max_batches=None, callback=None):
    """Mini-batch L1 training with early stopping on validation MAE.

    Returns ``(model, reports, history)``; reports hold denormalized
    validation and test metrics with per-horizon entries.
    """
    X, Y, M = data.train
    params = model.named_parameters()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    order_rng = rng(cfg.seed, "train-eval/batches")
    best = (math.inf, None)
    stale = 0
    history = []
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(X))
        losses = []
        for bi, start in enumerate(range(0, len(X), cfg.batch_size)):
            if max_batches is not None and bi >= max_batches:
                break
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            pred = model.forward_batch(X[idx], targets=Y[idx], training=True)
            loss = l1_loss(pred, model.stack_targets(Y[idx]), model.stack_targets(M[idx]))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            T.backward(loss)
            if cfg.grad_clip:
                _clip(params, cfg.grad_clip)
            opt.step()
            losses.append(value)
        val_mae = evaluate_forecaster(model, data.val, data.normalizer, "val").mae \
            if len(data.val[0]) else float(np.mean(losses))
        history.append((float(np.mean(losses)), val_mae))
        if callback is not None:
            callback(epoch, history[-1])
        if val_mae < best[0]:
            best = (val_mae, {k: p.data.copy() for k, p in params.items()})
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best[1] is not None:
        for k, p in params.items():
            p.data[...] = best[1][k]
    reports = {}
    for name in ("train", "val", "test"):
        part = getattr(data, name)
        if len(part[0]):
            reports[name] = evaluate_forecaster(model, part, data.normalizer, name)
    return model, reports, history


def predict_windows(model, X, batch_size=256):
    out = []
    for start in range(0, len(X), batch_size):
        out.append(model.forecast(X[start:start + batch_size]))
    return np.concatenate(out, axis=0)


def evaluate_forecaster(model, part, normalizer, split, denormalize=True):
    X, Y, M = part
    pred = predict_windows(model, X)
    if denormalize:
        pred, Y = normalizer.inverse(pred), normalizer.inverse(Y)
    rep = report(split, pred, Y, M)
    for k in range(Y.shape[1]):
        rep.per_horizon.append(report(split, pred[:, k], Y[:, k], M[:, k], horizon=k + 1))
    return rep
