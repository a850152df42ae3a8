"""Trainable classifier with a fixed-centroid cosine head.

Architecture: feature layers -> optional BN+ReLU -> f_m -> FC1 -> f_n ->
cosine against frozen centroids. FC1's weight matrix W (m x n, columns
w_1..w_n) doubles as the primary projection subspace used for scoring.
"""

import re
import struct
from dataclasses import dataclass

import numpy as np

from .centroids import CentroidSet
from .errors import (
    ArchitectureMismatchError,
    ConfigError,
    MalformedFileError,
    VersionMismatchError,
)
from .layers import BatchNorm, Conv3x3, Dense, Flatten, MaxPool2, ReLU

CHECKPOINT_MAGIC = b"PJOD"
CHECKPOINT_VERSION = 1

_LAYER_RE = re.compile(r"^(dense|conv3x3)\((\d+)\)$|^(relu|maxpool2|flatten|bn)$")


@dataclass(frozen=True)
class NetworkConfig:
    architecture: tuple  # layer tokens, e.g. ("dense(32)", "relu", "dense(16)")
    input_shape: tuple  # (features,) or (channels, height, width)
    pedcc_dim: int
    final_bn_relu: bool = False
    fc1_bias: bool = True
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.1
    lr_decay_factor: float = 0.1
    lr_decay_fractions: tuple = (0.3, 0.6)
    momentum: float = 0.9
    weight_decay: float = 0.0005
    seed: int = 0
    checkpoint_fraction: float = 0.7

    def __post_init__(self):
        for token in self.architecture:
            if not _LAYER_RE.match(token):
                raise ConfigError(f"unknown layer token {token!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for frac in self.lr_decay_fractions:
            if not 0.0 < frac < 1.0:
                raise ConfigError("lr decay fractions must lie in (0, 1)")
        if not 0.0 < self.checkpoint_fraction <= 1.0:
            raise ConfigError("checkpoint_fraction must lie in (0, 1]")


@dataclass
class ForwardResult:
    f_m: np.ndarray
    f_n: np.ndarray
    cos_theta: np.ndarray
    degenerate: np.ndarray  # True where ||f_n|| was numerically zero


def _build_layers(config, rng):
    shape = tuple(config.input_shape)
    layers = []
    for token in config.architecture:
        match = _LAYER_RE.match(token)
        kind = match.group(1) or match.group(3)
        if kind == "dense":
            width = int(match.group(2))
            if len(shape) != 1:
                raise ConfigError("dense layer needs flat input; add flatten first")
            layers.append(Dense(shape[0], width, rng))
            shape = (width,)
        elif kind == "conv3x3":
            channels = int(match.group(2))
            if len(shape) != 3:
                raise ConfigError("conv3x3 needs (C, H, W) input")
            layer = Conv3x3(shape[0], channels, rng)
            shape = layer.output_shape(shape)
            layers.append(layer)
        elif kind == "maxpool2":
            layer = MaxPool2()
            shape = layer.output_shape(shape)
            layers.append(layer)
        elif kind == "flatten":
            layer = Flatten()
            shape = layer.output_shape(shape)
            layers.append(layer)
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "bn":
            layers.append(BatchNorm(shape[0]))
    if len(shape) != 1:
        raise ConfigError("architecture must end with a flat feature vector")
    return layers, shape[0]


class NetworkModel:
    """Feature extractor + FC1 + frozen-centroid cosine head."""

    def __init__(self, config, centroids, rng=None):
        if not isinstance(centroids, CentroidSet):
            raise ConfigError("centroids must be a CentroidSet")
        if centroids.feature_dim != config.pedcc_dim:
            raise ArchitectureMismatchError(
                f"centroid dim {centroids.feature_dim} != pedcc_dim "
                f"{config.pedcc_dim}"
            )
        if rng is None:
            rng = np.random.default_rng(config.seed)
        self.config = config
        self.centroids = centroids
        self.feature_layers, m = _build_layers(config, rng)
        c = centroids.class_count
        if not m > config.pedcc_dim >= c - 1:
            raise ConfigError(
                f"need feature dim m={m} > pedcc_dim n={config.pedcc_dim} "
                f">= c-1={c - 1}"
            )
        self.feature_dim = m
        self.final_bn = BatchNorm(m) if config.final_bn_relu else None
        self.final_relu = ReLU() if config.final_bn_relu else None
        self.fc1 = Dense(m, config.pedcc_dim, rng, bias=config.fc1_bias)

    @property
    def fc1_weights(self):
        return self.fc1.params["W"]

    @property
    def fc1_bias(self):
        return self.fc1.params.get("b")

    def _all_layers(self):
        layers = list(self.feature_layers)
        if self.final_bn is not None:
            layers += [self.final_bn, self.final_relu]
        return layers

    def named_layers(self):
        named = [(f"feature{i}", l) for i, l in enumerate(self.feature_layers)]
        if self.final_bn is not None:
            named.append(("final_bn", self.final_bn))
        named.append(("fc1", self.fc1))
        return named

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        expected = tuple(self.config.input_shape)
        if x.shape[1:] != expected:
            raise ConfigError(
                f"input shape {x.shape[1:]} does not match {expected}"
            )
        h = x
        for layer in self._all_layers():
            h = layer.forward(h, train=train)
        f_m = h
        f_n = self.fc1.forward(f_m, train=train)
        cos_theta, degenerate = cosine_to_centroids(f_n, self.centroids)
        return ForwardResult(f_m, f_n, cos_theta, degenerate)

    def backward_from_fn(self, grad_f_n):
        """Backpropagate a gradient w.r.t. f_n through FC1 and all feature
        layers, filling every layer's .grads."""
        g = self.fc1.backward(grad_f_n)
        for layer in reversed(self._all_layers()):
            g = layer.backward(g)
        return g


def cosine_to_centroids(f_n, centroids):
    """Cosines between each feature row and every centroid.

    Zero-norm features get cosine 0 for all classes and a degenerate flag.
    """
    f_n = np.atleast_2d(np.asarray(f_n, dtype=np.float64))
    norms = np.linalg.norm(f_n, axis=1)
    degenerate = norms < 1e-12
    safe = np.where(degenerate, 1.0, norms)
    cos_theta = (f_n @ centroids.vectors.T) / safe[:, None]
    cos_theta[degenerate] = 0.0
    return np.clip(cos_theta, -1.0, 1.0), degenerate


def grad_cos_theta_to_fn(grad_cos, f_n, cos_theta, degenerate, centroids):
    """Chain a gradient w.r.t. cos_theta back to f_n (unit centroid rows)."""
    norms = np.linalg.norm(f_n, axis=1)
    safe = np.where(degenerate, 1.0, norms)
    unit = f_n / safe[:, None]
    grad = grad_cos @ centroids.vectors
    grad -= np.sum(grad_cos * cos_theta, axis=1, keepdims=True) * unit
    grad /= safe[:, None]
    grad[degenerate] = 0.0
    return grad


def loss_total(model, x, labels, loss_config, train=True):
    """Combined loss: AM-softmax + mse_weight*MSE + k*orthogonality penalty.

    Runs forward and backward; afterwards every layer's .grads holds the
    parameter gradients. Returns (total, components dict, ForwardResult).
    """
    from .losses import loss_am, loss_lin_ind, loss_mse

    result = model.forward(x, train=train)
    am, grad_cos = loss_am(
        result.cos_theta, labels, loss_config.scale, loss_config.margin
    )
    mse, grad_fn_mse = loss_mse(result.f_n, labels, model.centroids)
    grad_fn = grad_cos_theta_to_fn(
        grad_cos, result.f_n, result.cos_theta, result.degenerate, model.centroids
    )
    grad_fn = grad_fn + loss_config.mse_weight * grad_fn_mse
    model.backward_from_fn(grad_fn)
    if loss_config.lin_ind_weight > 0 and model.config.pedcc_dim >= 2:
        lin, grad_w = loss_lin_ind(model.fc1_weights)
        model.fc1.grads["W"] = (
            model.fc1.grads["W"] + loss_config.lin_ind_weight * grad_w
        )
    else:
        lin = 0.0
    total = am + loss_config.mse_weight * mse + loss_config.lin_ind_weight * lin
    components = {"am": am, "mse": mse, "lin_ind": lin}
    return total, components, result


# --- checkpoint serialization -------------------------------------------

def _config_lines(config):
    def fmt(v):
        if isinstance(v, (tuple, list)):
            return "|".join(str(x) for x in v)
        return str(v)

    keys = [
        "architecture", "input_shape", "pedcc_dim", "final_bn_relu",
        "fc1_bias", "epochs", "batch_size", "learning_rate",
        "lr_decay_factor", "lr_decay_fractions", "momentum",
        "weight_decay", "seed", "checkpoint_fraction",
    ]
    return "\n".join(f"{k}={fmt(getattr(config, k))}" for k in keys)


def _config_from_lines(text):
    kv = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        kv[key] = value
    try:
        return NetworkConfig(
            architecture=tuple(t for t in kv["architecture"].split("|") if t),
            input_shape=tuple(int(x) for x in kv["input_shape"].split("|")),
            pedcc_dim=int(kv["pedcc_dim"]),
            final_bn_relu=kv["final_bn_relu"] == "True",
            fc1_bias=kv["fc1_bias"] == "True",
            epochs=int(kv["epochs"]),
            batch_size=int(kv["batch_size"]),
            learning_rate=float(kv["learning_rate"]),
            lr_decay_factor=float(kv["lr_decay_factor"]),
            lr_decay_fractions=tuple(
                float(x) for x in kv["lr_decay_fractions"].split("|") if x
            ),
            momentum=float(kv["momentum"]),
            weight_decay=float(kv["weight_decay"]),
            seed=int(kv["seed"]),
            checkpoint_fraction=float(kv["checkpoint_fraction"]),
        )
    except KeyError as exc:
        raise MalformedFileError(f"checkpoint config missing key {exc}") from exc


def _named_tensors(model):
    tensors = []
    for name, layer in model.named_layers():
        for key, value in sorted(layer.params.items()):
            tensors.append((f"{name}.{key}", value))
        if isinstance(layer, BatchNorm):
            tensors.append((f"{name}.running_mean", layer.running_mean))
            tensors.append((f"{name}.running_var", layer.running_var))
    tensors.append(("centroids", model.centroids.vectors))
    return tensors


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        cfg = _config_lines(model.config).encode("utf-8")
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<B", model.centroids.generator))
        for name, tensor in _named_tensors(model):
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            arr = np.ascontiguousarray(tensor, dtype="<f8")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise MalformedFileError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def done(self):
        return self.pos >= len(self.data)


def load_checkpoint(path, centroids=None):
    """Rebuild a NetworkModel from a checkpoint file.

    If centroids is given it must match the stored pedcc_dim and class
    count; otherwise the centroid matrix embedded in the file is used.
    """
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise VersionMismatchError(f"{path}: bad checkpoint magic")
    if reader.u32() != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{path}: unsupported checkpoint version")
    config = _config_from_lines(reader.take(reader.u32()).decode("utf-8"))
    generator = struct.unpack("<B", reader.take(1))[0]

    tensors = {}
    while not reader.done():
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(
            reader.take(8 * count), dtype="<f8"
        ).reshape(dims).copy()

    if "centroids" not in tensors:
        raise MalformedFileError(f"{path}: checkpoint lacks centroid tensor")
    stored = tensors.pop("centroids")
    if centroids is not None:
        if centroids.vectors.shape != stored.shape:
            raise ArchitectureMismatchError(
                f"supplied centroids {centroids.vectors.shape} do not match "
                f"checkpoint {stored.shape}"
            )
        cset = centroids
    else:
        cset = CentroidSet(stored.shape[0], stored.shape[1], stored, generator)

    model = NetworkModel(config, cset)
    for name, layer in model.named_layers():
        for key in layer.params:
            full = f"{name}.{key}"
            if full not in tensors:
                raise ArchitectureMismatchError(f"{path}: missing tensor {full}")
            if tensors[full].shape != layer.params[key].shape:
                raise ArchitectureMismatchError(
                    f"{path}: tensor {full} has shape {tensors[full].shape}, "
                    f"expected {layer.params[key].shape}"
                )
            layer.params[key] = tensors.pop(full)
        if isinstance(layer, BatchNorm):
            layer.running_mean = tensors.pop(f"{name}.running_mean")
            layer.running_var = tensors.pop(f"{name}.running_var")
    if tensors:
        raise ArchitectureMismatchError(
            f"{path}: unexpected tensors {sorted(tensors)}"
        )
    return model
