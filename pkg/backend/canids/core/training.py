from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..models.schemas import EpochRecord, TrainingHistory
from .errors import ConfigError, SingleClassTrainingSet
from .layers import bce_loss, binary_cross_entropy
from .model import PREDICT_CHUNK, Model
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)

WindowSet = Tuple[np.ndarray, np.ndarray]


@dataclass
class TrainResult:
    model: Model
    history: TrainingHistory


def loss_and_gradients(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    training: bool = True,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
    """Forward + backward on one batch. Returns (loss, gradients by name, logits)."""
    logits = model.forward(x, training=training, rng=rng)
    loss, dlogits = bce_loss(logits, y)
    model.backward(dlogits)
    return loss, {k: v.copy() for k, v in model.named_grads().items()}, logits


def evaluate(model: Model, x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """(loss, accuracy) in inference mode."""
    probs = model.predict_proba(x, chunk=PREDICT_CHUNK)
    loss = binary_cross_entropy(probs[:, 1], y)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == y))
    return loss, accuracy


def _batches(order: np.ndarray, batch_size: int):
    """Index batches; a trailing single sample joins the previous batch (BN needs >= 2)."""
    starts = list(range(0, len(order), batch_size))
    if len(starts) > 1 and len(order) - starts[-1] == 1:
        starts.pop()
    for i, start in enumerate(starts):
        end = starts[i + 1] if i + 1 < len(starts) else len(order)
        yield order[start:end]


def train(
    model: Model,
    train_windows: WindowSet,
    val_windows: Optional[WindowSet] = None,
    epochs: Optional[int] = None,
    batch_size: Optional[int] = None,
    seed: Optional[int] = None,
) -> TrainResult:
    """Adam + BCE training; returns the parameters with the best validation loss.

    Deterministic for a given seed: the shuffle and dropout streams are both
    derived from it.
    """
    hp = model.meta.hyperparams
    epochs = hp.epochs if epochs is None else epochs
    batch_size = hp.batch_size if batch_size is None else batch_size
    seed = model.meta.seed if seed is None else seed
    if batch_size < 2:
        raise ConfigError("batch size must be >= 2")

    x_train, y_train = train_windows
    if len(x_train) == 0 or len(np.unique(y_train)) < 2:
        raise SingleClassTrainingSet(
            f"training set needs both classes, got labels {np.unique(y_train).tolist()} over {len(x_train)} windows"
        )
    history = TrainingHistory()
    if epochs == 0:
        return TrainResult(model, history)

    has_val = val_windows is not None and len(val_windows[0]) > 0
    shuffle_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    state = AdamState(lr=hp.learning_rate, beta1=hp.beta1, beta2=hp.beta2, eps=hp.epsilon)

    best_loss = np.inf
    best_state = model.state()
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(x_train))
        loss_sum = 0.0
        correct = 0
        for idx in _batches(order, batch_size):
            xb, yb = x_train[idx], y_train[idx]
            loss, grads, logits = loss_and_gradients(model, xb, yb, training=True, rng=dropout_rng)
            adam_step(state, model.named_params(), grads)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / len(x_train),
            train_accuracy=correct / len(x_train),
        )
        if has_val:
            record.val_loss, record.val_accuracy = evaluate(model, *val_windows)
        history.epochs.append(record)

        monitored = record.val_loss if has_val else record.train_loss
        if monitored < best_loss:
            best_loss = monitored
            best_state = model.state()
            history.best_epoch = epoch
        logger.info(
            f"epoch {epoch}/{epochs} train_loss={record.train_loss:.5f} train_acc={record.train_accuracy:.4f}"
            + (f" val_loss={record.val_loss:.5f} val_acc={record.val_accuracy:.4f}" if has_val else "")
        )

    model.load_state(best_state)
    return TrainResult(model, history)
