"""Minibatch SGD on the hinge loss with ridge penalty and interpolation-based stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .convnet import Network, hinge_loss_and_grads, predict
from .errors import ParameterError, TrainingDivergence
from .scaledata import Dataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 8
    weight_decay: float = 0.01
    max_epochs: int = 100_000
    stop_factor: float = 500.0
    seed: int = 0
    decay_readout: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.weight_decay < 0:
            raise ParameterError(f"invalid training config {self}")
        if self.max_epochs < 1 or self.stop_factor <= 0:
            raise ParameterError(f"invalid training config {self}")


@dataclass
class TrainLog:
    loss: list[float] = field(default_factory=list)
    train_error: list[float] = field(default_factory=list)
    test_error: dict[int, float] = field(default_factory=dict)
    snapshots: dict[int, list[np.ndarray]] = field(default_factory=dict)
    interpolation_epoch: int | None = None
    epochs: int = 0

    @property
    def final_test_error(self) -> float:
        return self.test_error[max(self.test_error)] if self.test_error else float("nan")


def classification_error(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    out = predict(net, x)
    return float(np.mean(np.where(out > 0, 1.0, -1.0) != y))


def _is_log_time(epoch: int) -> bool:
    return epoch == 0 or (epoch & (epoch - 1)) == 0


def cast(net: Network, dtype) -> Network:
    for layer in net.layers:
        layer.weight = layer.weight.astype(dtype)
        layer.bias = layer.bias.astype(dtype)
    if net.readout_w is not None:
        net.readout_w = net.readout_w.astype(dtype)
    return net


def sgd_step(net: Network, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> tuple[float, int]:
    """One SGD update; returns the batch loss and the number of misclassified examples."""
    loss, g, out = hinge_loss_and_grads(net, x, y, cfg.weight_decay, cfg.decay_readout, return_output=True)
    if not np.isfinite(loss):
        raise TrainingDivergence(f"non-finite loss {loss}")
    lr = cfg.lr
    for layer, gw, gb in zip(net.layers, g.weight, g.bias):
        layer.weight -= lr * gw
        layer.bias -= lr * gb
    net.readout_w -= lr * g.readout_w
    net.readout_b -= lr * g.readout_b
    return loss, int(np.sum(np.where(out > 0, 1.0, -1.0) != y))


def train(net: Network, data: Dataset, cfg: TrainConfig = TrainConfig()) -> tuple[Network, TrainLog]:
    """Train a copy of ``net`` on ``data.train``.

    Training runs until ``stop_factor`` times the first epoch with zero
    training error, capped at ``max_epochs``. The per-epoch training error is
    the running error of the minibatch predictions made during the epoch.
    Filters are snapshotted at epoch 0, powers of two, and the last epoch;
    test error is evaluated at the same epochs.
    """
    if not set(np.unique(data.labels)) <= {-1, 1}:
        raise ParameterError("labels must be in {-1, +1}")
    dtype = np.dtype(cfg.dtype)
    net = cast(net.copy(), dtype)
    rng = np.random.default_rng(cfg.seed)
    x_tr, y_tr = (a.astype(dtype) for a in data.split_arrays("train"))
    x_te, y_te = (a.astype(dtype) for a in data.split_arrays("test"))
    n = len(y_tr)
    if n == 0:
        raise ParameterError("empty training set")
    tlog = TrainLog()

    def checkpoint(epoch: int) -> None:
        tlog.snapshots[epoch] = [l.weight.copy() for l in net.layers]
        if len(y_te):
            tlog.test_error[epoch] = classification_error(net, x_te, y_te)

    checkpoint(0)
    stop_at = cfg.max_epochs
    epoch = 0
    while epoch < stop_at:
        epoch += 1
        order = rng.permutation(n)
        total, wrong = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            b = order[s : s + cfg.batch_size]
            loss, miss = sgd_step(net, x_tr[b], y_tr[b], cfg)
            total += loss * len(b)
            wrong += miss
        tlog.loss.append(total / n)
        # running error over the epoch; confirmed by a full pass before it counts
        err = wrong / n
        if err == 0.0 and tlog.interpolation_epoch is None:
            err = classification_error(net, x_tr, y_tr)
        tlog.train_error.append(err)
        if tlog.interpolation_epoch is None and err == 0.0:
            tlog.interpolation_epoch = epoch
            stop_at = min(cfg.max_epochs, int(np.ceil(cfg.stop_factor * epoch)))
            log.info("interpolation at epoch %d, stopping at %d", epoch, stop_at)
        if _is_log_time(epoch):
            checkpoint(epoch)
    if epoch not in tlog.snapshots:
        checkpoint(epoch)
    tlog.epochs = epoch
    return net, tlog
