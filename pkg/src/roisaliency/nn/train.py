"""Minibatch SGD training with binary cross-entropy and l2 regularization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..data import ChannelImage, DataError, Dataset
from ..seeding import STREAM_DROPOUT, STREAM_SHUFFLE, spawn_generator
from .network import Network

_LOG_CLIP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.15
    batch_size: int = 64
    max_epochs: int = 50
    l2_coefficient: float = 1e-4
    dropout: bool = False
    patience: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise DataError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise DataError("batch_size, max_epochs and patience must be positive")
        if self.l2_coefficient < 0:
            raise DataError(f"l2 coefficient must be >= 0, got {self.l2_coefficient}")
        if self.seed < 0:
            raise DataError(f"seed must be non-negative, got {self.seed}")


def _as_batch(images) -> np.ndarray:
    if isinstance(images, np.ndarray):
        return images
    if len(images) and isinstance(images[0], ChannelImage):
        return np.stack([im.data for im in images])
    return np.asarray(images, dtype=np.float64)


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs, _LOG_CLIP, 1.0 - _LOG_CLIP)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


def loss_and_gradients(
    net: Network,
    images,
    labels: Sequence[int] | np.ndarray,
    cfg: TrainConfig,
    rng=None,
) -> tuple[float, list[np.ndarray]]:
    """Mean BCE + (l2/2)·||params||^2 and its gradient for one batch.

    The output sigmoid is fused with the cross-entropy, so backprop starts
    from (p - y)/n at the last dense layer's output.
    """
    x = _as_batch(images)
    y = np.asarray(labels, dtype=np.float64)
    if len(x) == 0:
        raise DataError("empty batch")
    if len(x) != len(y):
        raise DataError(f"{len(x)} images vs {len(y)} labels")

    probs, ctxs = net.forward_with_ctx(x, train_mode=cfg.dropout, rng=rng)
    loss = bce_loss(probs, y)

    grads_rev: list[np.ndarray] = []
    delta = ((probs - y) / len(y))[:, None]  # gradient at the sigmoid's input
    for layer, ctx in zip(reversed(net.layers[:-1]), reversed(ctxs[:-1])):
        delta, layer_grads = layer.backward(delta, ctx)
        grads_rev.extend(reversed(layer_grads))
    grads = list(reversed(grads_rev))

    if cfg.l2_coefficient > 0:
        params = net.params
        loss += 0.5 * cfg.l2_coefficient * sum(float(np.sum(p * p)) for p in params)
        grads = [g + cfg.l2_coefficient * p for g, p in zip(grads, params)]
    return loss, grads


def evaluate(net: Network, images, labels) -> tuple[float, float]:
    """(mean BCE, accuracy) with dropout off; threshold 0.5."""
    x = _as_batch(images)
    y = np.asarray(labels, dtype=np.float64)
    probs = net.predict_array(x)
    acc = float(np.mean((probs > 0.5).astype(np.float64) == y))
    return bce_loss(probs, y), acc


def train(
    net: Network,
    train_data: Dataset,
    val_data: Dataset,
    cfg: TrainConfig,
) -> tuple[Network, dict]:
    """Train in place; early-stops on validation loss and restores the best epoch.

    History holds per-epoch train/val loss and accuracy. Fully deterministic
    for a given seed: shuffling and dropout streams are derived per epoch and
    batch, and gradient accumulation order is fixed.
    """
    train_data.require_both_classes()
    x_train = train_data.stacked()
    y_train = train_data.label_array().astype(np.float64)
    x_val = val_data.stacked()
    y_val = val_data.label_array().astype(np.float64)
    n = len(x_train)

    history: dict = {
        "train_loss": [],
        "train_acc": [],
        "val_loss": [],
        "val_acc": [],
        "best_epoch": -1,
        "epochs_run": 0,
        "stopped_early": False,
    }
    best_loss = np.inf
    best_params = net.copy_params()
    best_epoch = -1

    for epoch in range(cfg.max_epochs):
        order = spawn_generator(cfg.seed, STREAM_SHUFFLE, epoch).permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            rng = spawn_generator(cfg.seed, STREAM_DROPOUT, epoch, b) if cfg.dropout else None
            _, grads = loss_and_gradients(net, x_train[idx], y_train[idx], cfg, rng=rng)
            for p, g in zip(net.params, grads):
                p -= cfg.learning_rate * g

        tr_loss, tr_acc = evaluate(net, x_train, y_train)
        va_loss, va_acc = evaluate(net, x_val, y_val)
        history["train_loss"].append(tr_loss)
        history["train_acc"].append(tr_acc)
        history["val_loss"].append(va_loss)
        history["val_acc"].append(va_acc)
        history["epochs_run"] = epoch + 1

        if va_loss < best_loss:
            best_loss = va_loss
            best_params = net.copy_params()
            best_epoch = epoch
        elif epoch - best_epoch >= cfg.patience:
            history["stopped_early"] = True
            break

    net.set_params(best_params)
    history["best_epoch"] = best_epoch
    return net, history
