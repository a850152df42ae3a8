"""SGD training loop with momentum, weight decay and a step LR schedule."""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .model import loss_total, save_checkpoint


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # dicts with loss components
    checkpoint_paths: list = field(default_factory=list)

    def to_csv(self):
        lines = ["epoch,total,am,mse,lin_ind,accuracy,learning_rate"]
        for row in self.epochs:
            lines.append(
                "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g"
                % (
                    row["epoch"], row["total"], row["am"], row["mse"],
                    row["lin_ind"], row["accuracy"], row["learning_rate"],
                )
            )
        return "\n".join(lines) + "\n"


def _learning_rate(config, epoch):
    lr = config.learning_rate
    for frac in config.lr_decay_fractions:
        if epoch >= int(frac * config.epochs):
            lr *= config.lr_decay_factor
    return lr


def train(model, inputs, labels, loss_config, out_dir=None, checkpoint_stem="model"):
    """Train in place; returns a TrainReport.

    Deterministic given config.seed: shuffling uses a dedicated RNG and the
    loop is single-threaded. Checkpoints are written at
    round(checkpoint_fraction * epochs) and at the end when out_dir is set.
    """
    config = model.config
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    n = inputs.shape[0]
    c = model.centroids.class_count
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")

    rng = np.random.default_rng(config.seed)
    velocity = {}
    report = TrainReport()
    mid_epoch = max(1, round(config.checkpoint_fraction * config.epochs))

    for epoch in range(1, config.epochs + 1):
        lr = _learning_rate(config, epoch - 1)
        order = rng.permutation(n)
        sums = {"total": 0.0, "am": 0.0, "mse": 0.0, "lin_ind": 0.0}
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            total, components, result = loss_total(
                model, inputs[idx], labels[idx], loss_config, train=True
            )
            if not np.isfinite(total):
                raise NumericalError(
                    f"non-finite loss {total} at epoch {epoch}; "
                    "reduce the learning rate or loss scale"
                )
            weight = len(idx)
            sums["total"] += total * weight
            for key in ("am", "mse", "lin_ind"):
                sums[key] += components[key] * weight
            correct += int(np.sum(result.cos_theta.argmax(axis=1) == labels[idx]))

            for name, layer in model.named_layers():
                for key, param in layer.params.items():
                    grad = layer.grads[key] + config.weight_decay * param
                    vkey = (name, key)
                    v = velocity.get(vkey)
                    v = grad if v is None else config.momentum * v + grad
                    velocity[vkey] = v
                    layer.params[key] = param - lr * v

        report.epochs.append({
            "epoch": epoch,
            "total": sums["total"] / n,
            "am": sums["am"] / n,
            "mse": sums["mse"] / n,
            "lin_ind": sums["lin_ind"] / n,
            "accuracy": correct / n,
            "learning_rate": lr,
        })
        if out_dir is not None and epoch in (mid_epoch, config.epochs):
            path = os.path.join(out_dir, f"{checkpoint_stem}_epoch{epoch}.ckpt")
            save_checkpoint(model, path)
            report.checkpoint_paths.append(path)
    return report


def accuracy(model, inputs, labels, batch_size=256):
    """Classification accuracy with eval-mode forward passes."""
    labels = np.asarray(labels)
    correct = 0
    for start in range(0, len(labels), batch_size):
        result = model.forward(inputs[start : start + batch_size], train=False)
        correct += int(
            np.sum(result.cos_theta.argmax(axis=1) == labels[start : start + batch_size])
        )
    return correct / len(labels)
