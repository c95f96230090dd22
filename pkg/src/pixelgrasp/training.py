"""Dataset split, the four-term weighted MSE objective, and the training loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, ShapeMismatch
from .labels import GraspMaps
from .nn_core import OptimizerState, Tensor, adam_step, mse


@dataclass(frozen=True)
class LossWeights:
    q: float = 1.0
    cos: float = 1.0
    sin: float = 1.0
    w: float = 1.0

    def __post_init__(self):
        if min(self.q, self.cos, self.sin, self.w) < 0:
            raise ValueError("loss weights must be >= 0")

    def as_tuple(self):
        return (self.q, self.cos, self.sin, self.w)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 4
    split_fraction: float = 0.8
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None
    seconds: float


def split_dataset(ids, fraction: float, seed: int):
    """Deterministic shuffle split; train takes ceil(fraction * N)."""
    ids = list(ids)
    if not ids:
        raise EmptyDataset("cannot split an empty id list")
    order = np.random.default_rng(seed).permutation(len(ids))
    # rounding guard: 0.8 * 1035 must land on 828, not 829
    n_train = math.ceil(round(fraction * len(ids), 9))
    train = [ids[i] for i in order[:n_train]]
    val = [ids[i] for i in order[n_train:]]
    return train, val


def _as_plane_tensors(maps) -> list[Tensor]:
    if isinstance(maps, GraspMaps):
        arrays = [maps.q, maps.cos2phi, maps.sin2phi, maps.w]
    else:
        arrays = list(maps)
    out = []
    for a in arrays:
        out.append(a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float32)))
    if len(out) != 4:
        raise ShapeMismatch(f"expected 4 planes, got {len(out)}")
    return out


def composite_loss(pred, label, weights: LossWeights | None = None) -> Tensor:
    """Weighted sum of per-plane MSE terms over q, cos2phi, sin2phi, w.

    pred and label are GraspMaps or 4-sequences of tensors/arrays with
    matching shapes; each norm is divided by that plane's element count.
    """
    weights = weights or LossWeights()
    p = _as_plane_tensors(pred)
    t = _as_plane_tensors(label)
    loss = mse(p[0], t[0]) * weights.q
    for pi, ti, lam in zip(p[1:], t[1:], weights.as_tuple()[1:]):
        loss = loss + mse(pi, ti) * lam
    return loss


def plane_losses(pred, label) -> dict:
    """Per-plane unweighted MSE values as floats."""
    p = _as_plane_tensors(pred)
    t = _as_plane_tensors(label)
    names = ("q", "cos", "sin", "w")
    return {name: mse(pi, ti).item() for name, pi, ti in zip(names, p, t)}


def _stack_batch(dataset, indices):
    xs = np.stack([np.asarray(dataset[i][0], dtype=np.float32) for i in indices])
    ys = np.stack([np.asarray(dataset[i][1], dtype=np.float32) for i in indices])
    return xs, ys


def _forward_loss(net, xs, ys, weights):
    preds = net.forward(Tensor(xs))
    targets = [Tensor(ys[:, i:i + 1]) for i in range(4)]
    return composite_loss(preds, targets, weights)


def train(dataset, net, config: TrainConfig, progress=None):
    """Train the network on (input, label-stack) pairs.

    dataset entries are (planes (C, H, W), labels (4, H, W)), already
    preprocessed and rasterized. The split, batch order and updates are
    all deterministic from config.seed. Returns the per-epoch loss log;
    the network is trained in place.
    """
    if not dataset:
        raise EmptyDataset("no training samples")
    train_ids, val_ids = split_dataset(range(len(dataset)), config.split_fraction, config.seed)
    state = OptimizerState(lr=config.lr, beta1=config.beta1,
                           beta2=config.beta2, eps=config.eps)
    params = net.parameters
    log: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        t_start = time.perf_counter()
        order = np.random.default_rng((config.seed, epoch)).permutation(len(train_ids))
        total = 0.0
        seen = 0
        for lo in range(0, len(order), config.batch_size):
            batch = [train_ids[i] for i in order[lo:lo + config.batch_size]]
            xs, ys = _stack_batch(dataset, batch)
            loss = _forward_loss(net, xs, ys, config.weights)
            for p in params:
                p.grad = None
            loss.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            adam_step(params, grads, state)
            total += loss.item() * len(batch)
            seen += len(batch)
        train_loss = total / seen
        val_loss = evaluate(net, [dataset[i] for i in val_ids], config.weights).loss \
            if val_ids else None
        record = EpochRecord(epoch=epoch, train_loss=train_loss, val_loss=val_loss,
                             seconds=time.perf_counter() - t_start)
        log.append(record)
        if progress is not None:
            progress(record)
    return log


@dataclass
class EvalResult:
    loss: float
    breakdown: dict


def evaluate(net, samples, weights: LossWeights | None = None,
             batch_size: int = 8) -> EvalResult:
    """Mean composite loss over samples plus the per-plane MSE breakdown.

    Pure forward passes; parameters are not touched.
    """
    if not samples:
        raise EmptyDataset("no evaluation samples")
    weights = weights or LossWeights()
    total = 0.0
    parts = {"q": 0.0, "cos": 0.0, "sin": 0.0, "w": 0.0}
    seen = 0
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        xs = np.stack([np.asarray(c[0], dtype=np.float32) for c in chunk])
        ys = np.stack([np.asarray(c[1], dtype=np.float32) for c in chunk])
        preds = net.forward(Tensor(xs))
        targets = [Tensor(ys[:, i:i + 1]) for i in range(4)]
        loss = composite_loss(preds, targets, weights)
        breakdown = plane_losses(preds, targets)
        total += loss.item() * len(chunk)
        for k in parts:
            parts[k] += breakdown[k] * len(chunk)
        seen += len(chunk)
    return EvalResult(loss=total / seen,
                      breakdown={k: v / seen for k, v in parts.items()})
