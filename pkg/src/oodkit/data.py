"""Dataset construction: synthetic ID/OOD generators and IDX image files.

Synthetic kinds cover the roles of the benchmark datasets at desk scale:
a labeled Gaussian mixture or two-moons set as ID, with ring / shifted
cluster / uniform-noise sets as OOD sources. The IDX loader handles the
classic big-endian byte-tensor format; a procedural glyph corpus (digits as
ID, garment silhouettes as OOD) feeds the image pipeline without downloads.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MalformedFileError

LABEL_ID = "ID"
LABEL_OOD = "OOD"

SYNTHETIC_KINDS = (
    "gaussian_mixture", "two_moons", "uniform_ring", "shifted_cluster",
    "uniform_noise",
)


@dataclass
class Dataset:
    name: str
    inputs: np.ndarray
    labels: np.ndarray = None  # class indices for ID sets, None for OOD
    role: str = LABEL_ID

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    count: int
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS + ("idx_images",):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.count < 1 and self.kind != "idx_images":
            raise ConfigError("sample count must be positive")


def _balanced_counts(total, classes):
    base = total // classes
    counts = np.full(classes, base)
    counts[: total - base * classes] += 1
    return counts


def generate_synthetic(spec, name=None):
    """Deterministic synthetic dataset for the given spec."""
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    name = name or spec.kind
    if spec.kind == "gaussian_mixture":
        classes = int(p.get("class_count", 4))
        std = float(p.get("std", 0.4))
        radius = float(p.get("mean_radius", 2.8))
        angles = 2.0 * np.pi * np.arange(classes) / classes + np.pi / classes
        means = radius * np.column_stack([np.cos(angles), np.sin(angles)])
        counts = _balanced_counts(spec.count, classes)
        xs, ys = [], []
        for cls, count in enumerate(counts):
            xs.append(means[cls] + std * rng.normal(size=(count, 2)))
            ys.append(np.full(count, cls))
        return Dataset(name, np.vstack(xs), np.concatenate(ys), LABEL_ID)
    if spec.kind == "two_moons":
        noise = float(p.get("std", 0.1))
        counts = _balanced_counts(spec.count, 2)
        t0 = np.pi * rng.random(counts[0])
        t1 = np.pi * rng.random(counts[1])
        upper = np.column_stack([np.cos(t0), np.sin(t0)])
        lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
        x = np.vstack([upper, lower]) + noise * rng.normal(size=(spec.count, 2))
        y = np.concatenate([np.zeros(counts[0]), np.ones(counts[1])]).astype(int)
        return Dataset(name, x, y, LABEL_ID)
    if spec.kind == "uniform_ring":
        r_lo = float(p.get("radius_min", 5.0))
        r_hi = float(p.get("radius_max", 6.0))
        theta = 2.0 * np.pi * rng.random(spec.count)
        # uniform over the annulus area
        r = np.sqrt(rng.uniform(r_lo**2, r_hi**2, spec.count))
        x = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        return Dataset(name, x, None, LABEL_OOD)
    if spec.kind == "shifted_cluster":
        mean = np.asarray(p.get("mean", (6.0, 6.0)), dtype=np.float64)
        std = float(p.get("std", 0.5))
        x = mean + std * rng.normal(size=(spec.count, mean.size))
        return Dataset(name, x, None, LABEL_OOD)
    if spec.kind == "uniform_noise":
        lo = float(p.get("low", -8.0))
        hi = float(p.get("high", 8.0))
        dim = int(p.get("dim", 2))
        x = rng.uniform(lo, hi, size=(spec.count, dim))
        return Dataset(name, x, None, LABEL_OOD)
    raise ConfigError(f"generate_synthetic cannot build kind {spec.kind!r}")


# --- IDX files -----------------------------------------------------------

def _read_idx(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise MalformedFileError(f"{path}: truncated IDX header")
    zero1, zero2, dtype, ndim = struct.unpack(">BBBB", raw[:4])
    if zero1 != 0 or zero2 != 0 or dtype != 0x08:
        raise MalformedFileError(f"{path}: bad IDX magic {raw[:4].hex()}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise MalformedFileError(f"{path}: truncated IDX dimension list")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) != count:
        raise MalformedFileError(
            f"{path}: expected {count} payload bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()


def write_idx(array, path):
    """Write a uint8 tensor in IDX format (big-endian dims)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, 0x08, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_idx(images_path, labels_path=None, name="idx", role=LABEL_ID):
    """Load an IDX image tensor (and optional label vector), pixels scaled
    to [0, 1] and images given a leading channel axis."""
    images = _read_idx(images_path)
    if images.ndim == 3:
        images = images[:, None, :, :]  # (N, H, W) -> (N, 1, H, W)
    elif images.ndim != 2 and images.ndim != 4:
        raise MalformedFileError(f"{images_path}: unsupported rank {images.ndim}")
    inputs = images.astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        labels = _read_idx(labels_path)
        if labels.ndim != 1:
            raise MalformedFileError(f"{labels_path}: labels must be rank 1")
        if labels.shape[0] != inputs.shape[0]:
            raise MalformedFileError(
                f"{labels_path}: {labels.shape[0]} labels for "
                f"{inputs.shape[0]} images"
            )
        labels = labels.astype(int)
    return Dataset(name, inputs, labels, role)


def split(dataset, fractions, seed):
    """Disjoint, exhaustive (train, test) split, stratified for labeled sets."""
    if len(fractions) != 2 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    if min(fractions) < 0:
        raise ConfigError("split fractions must be non-negative")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    if dataset.labels is None:
        order = rng.permutation(n)
        cut = round(fractions[0] * n)
        train_idx, test_idx = order[:cut], order[cut:]
    else:
        train_parts, test_parts = [], []
        for cls in np.unique(dataset.labels):
            idx = np.flatnonzero(dataset.labels == cls)
            idx = idx[rng.permutation(len(idx))]
            cut = round(fractions[0] * len(idx))
            train_parts.append(idx[:cut])
            test_parts.append(idx[cut:])
        train_idx = np.concatenate(train_parts)
        test_idx = np.concatenate(test_parts)

    def subset(indices, suffix):
        indices = np.sort(indices)
        labels = None if dataset.labels is None else dataset.labels[indices]
        return Dataset(
            f"{dataset.name}_{suffix}", dataset.inputs[indices], labels,
            dataset.role,
        )

    return subset(train_idx, "train"), subset(test_idx, "test")


# --- procedural glyph corpus --------------------------------------------

_DIGIT_GLYPHS = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],  # 0
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],  # 1
    ["01110", "10001", "00001", "00110", "01000", "10000", "11111"],  # 2
    ["01110", "10001", "00001", "00110", "00001", "10001", "01110"],  # 3
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],  # 4
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],  # 5
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],  # 6
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],  # 7
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],  # 8
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],  # 9
]

_GARMENT_GLYPHS = [
    # t-shirt
    ["11011", "11111", "01110", "01110", "01110", "01110", "01110"],
    # trousers
    ["11111", "11111", "11011", "11011", "11011", "11011", "11011"],
    # dress
    ["00100", "01110", "01110", "01110", "11111", "11111", "11111"],
    # bag
    ["01110", "01010", "11111", "10001", "10001", "10001", "11111"],
    # boot
    ["11000", "11000", "11000", "11000", "11110", "11111", "01111"],
    # coat
    ["11011", "11111", "10101", "10101", "10101", "10101", "11111"],
]


def _render_glyphs(glyphs, labels, size, rng):
    images = np.zeros((len(labels), size, size), dtype=np.uint8)
    for i, cls in enumerate(labels):
        glyph = glyphs[cls]
        h, w = len(glyph), len(glyph[0])
        canvas = np.zeros((size, size))
        top = (size - h) // 2 + int(rng.integers(-1, 2))
        left = (size - w) // 2 + int(rng.integers(-1, 2))
        for r, row in enumerate(glyph):
            for c, ch in enumerate(row):
                if ch == "1":
                    canvas[top + r, left + c] = 1.0
        intensity = rng.uniform(0.6, 1.0)
        noise = rng.normal(0.0, 0.08, size=(size, size))
        pixels = np.clip(canvas * intensity + noise, 0.0, 1.0)
        images[i] = np.round(pixels * 255).astype(np.uint8)
    return images


def make_glyph_corpus(kind, count, seed, size=12):
    """Render a deterministic uint8 image corpus: kind "digits" (10 classes)
    or "garments" (unlabeled, OOD role)."""
    rng = np.random.default_rng(seed)
    if kind == "digits":
        glyphs = _DIGIT_GLYPHS
    elif kind == "garments":
        glyphs = _GARMENT_GLYPHS
    else:
        raise ConfigError(f"unknown glyph corpus kind {kind!r}")
    counts = _balanced_counts(count, len(glyphs))
    labels = np.concatenate(
        [np.full(c, cls) for cls, c in enumerate(counts)]
    ).astype(int)
    labels = labels[rng.permutation(count)]
    images = _render_glyphs(glyphs, labels, size, rng)
    return images, labels
