"""Minibatch SGD on softmax cross-entropy, with latent-weight clamping for
binary layers. Training is deterministic given (network seed, data, config):
the shuffle schedule is a pure function of the config seed and epoch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rng
from .autodiff import Tensor
from .data import Dataset
from .net import Network, forward, plan


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    clip: float = 1.0  # latent-weight bound for binary layers

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.clip <= 0:
            raise ValueError("clip must be positive")


class TrainingDiverged(RuntimeError):
    """The loss became non-finite."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"loss is not finite at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], stabilized by
    max subtraction."""
    labels = np.asarray(labels, dtype=np.int64)
    classes = logits.data.shape[1]
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"labels out of range [0, {classes})")
    return ad.neg(ad.mean_all(ad.gather_rows(ad.log_softmax(logits), labels)))


def train(net: Network, data: Dataset, cfg: TrainConfig
          ) -> tuple[Network, list[float]]:
    """Return a trained copy of `net` plus per-epoch training accuracy."""
    if cfg.batch_size > data.n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset "
                         f"size {data.n}")
    net = net.copy()
    p = plan(net.definition)
    lr = np.float32(cfg.learning_rate)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(cfg.seed, stream=epoch + 1, n=data.n)
        for bi, start in enumerate(range(0, data.n, cfg.batch_size)):
            sel = order[start:start + cfg.batch_size]
            trace = forward(net, data.images[sel], record=False,
                            input_requires_grad=False)
            loss = cross_entropy(trace.logits, data.labels[sel])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, bi)
            grads = ad.backward(loss)
            for k, (wn, bn) in enumerate(trace.param_nodes):
                net.weights[k] -= lr * grads[wn]
                net.biases[k] -= lr * grads[bn]
                if p.effective_precision[k] == "binary":
                    np.clip(net.weights[k], -cfg.clip, cfg.clip,
                            out=net.weights[k])
        history.append(evaluate(net, data))
    return net, history


def evaluate(net: Network, data: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    correct = 0
    for start in range(0, data.n, batch_size):
        xb = data.images[start:start + batch_size]
        trace = forward(net, xb, record=False, input_requires_grad=False)
        pred = np.argmax(trace.logits.data, axis=1)
        correct += int((pred == data.labels[start:start + batch_size]).sum())
    return correct / data.n
