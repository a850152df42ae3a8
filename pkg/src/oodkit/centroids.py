"""Evenly distributed class centroids on the unit hypersphere.

Two constructions are provided: an analytic regular simplex (exact, needs
class_count <= feature_dim + 1) and an iterative repulsion optimizer for
arbitrary counts. Centroids are generated once per experiment and frozen.
"""

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, MalformedFileError, VersionMismatchError

CENTROID_MAGIC = b"PDCC"
CENTROID_VERSION = 1

GENERATOR_SIMPLEX = 0
GENERATOR_ITERATIVE = 1


@dataclass(frozen=True)
class CentroidSet:
    """Fixed unit vectors serving as class targets.

    vectors is (class_count, feature_dim), one centroid per row, each row
    unit-norm. generator records which construction produced the set.
    """

    class_count: int
    feature_dim: int
    vectors: np.ndarray = field(repr=False)
    generator: int = GENERATOR_SIMPLEX

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.shape != (self.class_count, self.feature_dim):
            raise DimensionError(
                f"centroid matrix shape {v.shape} does not match "
                f"({self.class_count}, {self.feature_dim})"
            )
        norms = np.linalg.norm(v, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise DimensionError("centroid rows must be unit-norm")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    def gram(self):
        return self.vectors @ self.vectors.T


def generate_simplex(class_count, feature_dim):
    """Regular simplex vertices embedded in feature_dim dimensions.

    All pairwise cosines equal -1/(class_count - 1). Requires
    class_count <= feature_dim + 1.
    """
    c, n = int(class_count), int(feature_dim)
    if c < 2:
        raise DimensionError("need at least 2 classes")
    if c > n + 1:
        raise DimensionError(
            f"a regular simplex with {c} vertices needs at least {c - 1} "
            f"dimensions, got {n}"
        )
    # Centered standard-basis vectors span a (c-1)-dim subspace with the
    # target Gram matrix; an eigenbasis gives explicit coordinates.
    gram = np.full((c, c), -1.0 / (c - 1))
    np.fill_diagonal(gram, 1.0)
    eigvals, eigvecs = np.linalg.eigh(gram)
    # rank c-1: drop the zero eigenvalue (the all-ones direction)
    coords = eigvecs[:, 1:] * np.sqrt(np.maximum(eigvals[1:], 0.0))
    vectors = np.zeros((c, n))
    vectors[:, : c - 1] = coords
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return CentroidSet(c, n, vectors, GENERATOR_SIMPLEX)


def _repulsion_energy_grad(points):
    """Gradient of sum_{i<j} 1/||a_i - a_j||^2 with respect to each point."""
    diff = points[:, None, :] - points[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    np.fill_diagonal(sq, np.inf)
    # d/da_i ||a_i - a_j||^-2 = -2 (a_i - a_j) / ||a_i - a_j||^4
    coef = -2.0 / (sq * sq)
    return np.sum(coef[:, :, None] * diff, axis=1)


def _min_pairwise_angle(points):
    g = np.clip(points @ points.T, -1.0, 1.0)
    np.fill_diagonal(g, -1.0)
    return float(np.arccos(np.max(g)))


def generate_iterative(class_count, feature_dim, seed=0, steps=10000, step_size=0.05):
    """Spread points on the sphere by inverse-square pairwise repulsion.

    Gradient descent on the repulsion energy, each step projected onto the
    tangent space and renormalized. Deterministic given the seed.
    """
    c, n = int(class_count), int(feature_dim)
    if c < 2:
        raise DimensionError("need at least 2 classes")
    if n < 2:
        raise DimensionError("iterative generator needs feature_dim >= 2")
    rng = np.random.default_rng(seed)
    points = rng.normal(size=(c, n))
    points /= np.linalg.norm(points, axis=1, keepdims=True)

    tail_start = steps - max(1, steps // 10)
    min_angle = _min_pairwise_angle(points)
    for step in range(steps):
        grad = _repulsion_energy_grad(points)
        # tangent-space projection: remove the radial component
        radial = np.sum(grad * points, axis=1, keepdims=True)
        move = -(grad - radial * points)
        # cap the displacement so near-coincident points cannot overshoot
        move_norm = np.linalg.norm(move, axis=1, keepdims=True)
        np.divide(move, np.maximum(move_norm, 1.0), out=move)
        candidate = points + step_size * move
        candidate /= np.linalg.norm(candidate, axis=1, keepdims=True)
        if step >= tail_start:
            cand_angle = _min_pairwise_angle(candidate)
            if cand_angle < min_angle:
                continue  # keep the min pairwise angle non-decreasing at the tail
            min_angle = cand_angle
        else:
            min_angle = _min_pairwise_angle(candidate)
        points = candidate

    if c <= n + 1:
        g = points @ points.T
        off = g[~np.eye(c, dtype=bool)]
        if np.ptp(off) > 1e-2:
            warnings.warn(
                f"iterative centroids did not converge to a simplex: cosine "
                f"spread {np.ptp(off):.3g}",
                RuntimeWarning,
            )
    return CentroidSet(c, n, points, GENERATOR_ITERATIVE)


def save_centroids(centroid_set, path):
    """Write the binary centroid file (little-endian, magic PDCC)."""
    c, n = centroid_set.class_count, centroid_set.feature_dim
    with open(path, "wb") as fh:
        fh.write(CENTROID_MAGIC)
        fh.write(struct.pack("<III", CENTROID_VERSION, c, n))
        fh.write(struct.pack("<B", centroid_set.generator))
        fh.write(np.ascontiguousarray(centroid_set.vectors, dtype="<f8").tobytes())


def load_centroids(path):
    """Read a centroid file written by save_centroids."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header = struct.calcsize("<4sIIIB")
    if len(raw) < header:
        raise MalformedFileError(f"{path}: truncated centroid file")
    magic, version, c, n, generator = struct.unpack("<4sIIIB", raw[:header])
    if magic != CENTROID_MAGIC:
        raise VersionMismatchError(f"{path}: bad magic {magic!r}")
    if version != CENTROID_VERSION:
        raise VersionMismatchError(f"{path}: unsupported version {version}")
    payload = raw[header:]
    expected = c * n * 8
    if len(payload) != expected:
        raise MalformedFileError(
            f"{path}: expected {expected} payload bytes, got {len(payload)}"
        )
    vectors = np.frombuffer(payload, dtype="<f8").reshape(c, n).copy()
    return CentroidSet(int(c), int(n), vectors, int(generator))
