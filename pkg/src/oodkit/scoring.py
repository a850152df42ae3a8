"""Per-sample feature metrics for ID/OOD separation.

Four metrics per sample: cosine of the angle between the convolutional
feature and the FC1 weight subspace (gamma), cosine of the angle between the
reduced feature and the centroid span (alpha), the best projection-to-
centroid cosine (max beta), and the reduced feature's L2 norm. A max-softmax
probability over the cosine logits serves as the comparison baseline.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import MalformedFileError, NumericalError
from .model import cosine_to_centroids

BIAS_EXCLUDE = "exclude"
BIAS_INCLUDE = "include-as-vector"

SCORE_CSV_HEADER = (
    "sample_id,cos_alpha,max_cos_beta,cos_gamma,norm_fn,baseline_msp,"
    "predicted_class,label"
)


def _orthonormal_basis(columns, tol=1e-10):
    """Modified Gram-Schmidt basis of the column span; near-dependent
    columns (residual norm < tol) are dropped."""
    basis = []
    for j in range(columns.shape[1]):
        v = columns[:, j].astype(np.float64).copy()
        for q in basis:
            v -= (q @ v) * q
        # second pass for numerical cleanliness
        for q in basis:
            v -= (q @ v) * q
        norm = np.linalg.norm(v)
        if norm >= tol:
            basis.append(v / norm)
    if not basis:
        raise NumericalError("projection subspace is empty (zero weight matrix)")
    return np.column_stack(basis)


@dataclass(frozen=True)
class ProjectionOperator:
    """Orthogonal projection onto a weight subspace, held as P = Q Q^T."""

    source_dim: int
    rank: int
    basis: np.ndarray  # (source_dim, rank), orthonormal columns
    bias_mode: str = BIAS_EXCLUDE

    def project(self, vectors):
        v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        return (v @ self.basis) @ self.basis.T

    def matrix(self):
        return self.basis @ self.basis.T


def projector_from_weights(weights, bias=None, bias_mode=BIAS_EXCLUDE):
    """Build the projection operator from FC1's (m, n) weight matrix.

    With bias_mode "include-as-vector", the input space is augmented with a
    constant-1 coordinate and the bias becomes an extra row of W, so the
    subspace gains the bias direction; cos_gamma then augments its input the
    same way.
    """
    w = np.asarray(weights, dtype=np.float64)
    if not np.any(w):
        raise NumericalError("weight matrix is all zero")
    if bias_mode == BIAS_INCLUDE:
        if bias is None:
            raise ValueError("bias_mode include-as-vector needs a bias vector")
        w = np.vstack([w, np.asarray(bias, dtype=np.float64)[None, :]])
    elif bias_mode != BIAS_EXCLUDE:
        raise ValueError(f"unknown bias_mode {bias_mode!r}")
    basis = _orthonormal_basis(w)
    return ProjectionOperator(w.shape[0], basis.shape[1], basis, bias_mode)


def cos_gamma(f_m, proj):
    """Norm ratio between a feature and its projection, in [0, 1].

    Returns (value, degenerate). Zero-norm input scores 0 with the
    degenerate flag set (conservative: looks maximally OOD).
    """
    v = np.asarray(f_m, dtype=np.float64)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if proj.bias_mode == BIAS_INCLUDE:
        v = np.hstack([v, np.ones((v.shape[0], 1))])
    norms = np.linalg.norm(v, axis=1)
    degenerate = norms < 1e-12
    safe = np.where(degenerate, 1.0, norms)
    values = np.linalg.norm(proj.project(v), axis=1) / safe
    values = np.clip(values, 0.0, 1.0)
    values[degenerate] = 0.0
    if single:
        return float(values[0]), bool(degenerate[0])
    return values, degenerate


def pedcc_angles(f_n, centroids):
    """Decompose centroid cosines through the centroid span.

    Returns (cos_alpha, cos_beta, cos_theta, degenerate); satisfies
    cos_theta_i = cos_alpha * cos_beta_i for non-degenerate inputs.
    """
    f = np.atleast_2d(np.asarray(f_n, dtype=np.float64))
    single = np.asarray(f_n).ndim == 1
    basis = _orthonormal_basis(centroids.vectors.T)
    projected = (f @ basis) @ basis.T
    norms = np.linalg.norm(f, axis=1)
    proj_norms = np.linalg.norm(projected, axis=1)
    degenerate = (norms < 1e-12) | (proj_norms < 1e-12)
    safe_n = np.where(norms < 1e-12, 1.0, norms)
    safe_p = np.where(proj_norms < 1e-12, 1.0, proj_norms)
    cos_alpha = np.clip(proj_norms / safe_n, 0.0, 1.0)
    cos_beta = (projected @ centroids.vectors.T) / safe_p[:, None]
    cos_beta = np.clip(cos_beta, -1.0, 1.0)
    cos_theta, theta_degenerate = cosine_to_centroids(f, centroids)
    cos_alpha[norms < 1e-12] = 0.0
    cos_beta[degenerate] = 0.0
    degenerate = degenerate | theta_degenerate
    if single:
        return float(cos_alpha[0]), cos_beta[0], cos_theta[0], bool(degenerate[0])
    return cos_alpha, cos_beta, cos_theta, degenerate


def s_norm(f_n):
    """Euclidean norm of the reduced feature (activation magnitude score)."""
    f = np.asarray(f_n, dtype=np.float64)
    if f.ndim == 1:
        return float(np.linalg.norm(f))
    return np.linalg.norm(f, axis=1)


def baseline_msp(cos_theta, scale):
    """Maximum softmax probability over the scaled cosine logits."""
    z = scale * np.atleast_2d(np.asarray(cos_theta, dtype=np.float64))
    z = z - z.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    out = probs.max(axis=1)
    if np.asarray(cos_theta).ndim == 1:
        return float(out[0])
    return out


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: int
    cos_alpha: float
    max_cos_beta: float
    cos_gamma: float
    norm_fn: float
    baseline_msp: float
    predicted_class: int
    label: str  # "ID", "OOD" or "unlabeled"
    cos_theta: np.ndarray = None  # per-class cosines; not serialized to CSV

    def features(self):
        """The four fusion inputs, in the fixed CLI order."""
        return np.array(
            [self.cos_alpha, self.max_cos_beta, self.cos_gamma, self.norm_fn]
        )


def score_dataset(model, proj, centroids, inputs, label, scale, batch_size=256):
    """Score every sample; one ScoreRecord per input row, input order kept."""
    records = []
    inputs = np.asarray(inputs, dtype=np.float64)
    for start in range(0, inputs.shape[0], batch_size):
        batch = inputs[start : start + batch_size]
        result = model.forward(batch, train=False)
        gamma, _ = cos_gamma(result.f_m, proj)
        alpha, beta, theta, _ = pedcc_angles(result.f_n, centroids)
        norms = s_norm(result.f_n)
        msp = baseline_msp(theta, scale)
        preds = theta.argmax(axis=1)
        for i in range(batch.shape[0]):
            records.append(ScoreRecord(
                sample_id=start + i,
                cos_alpha=float(alpha[i]),
                max_cos_beta=float(beta[i].max()),
                cos_gamma=float(np.atleast_1d(gamma)[i]),
                norm_fn=float(norms[i]),
                baseline_msp=float(msp[i]),
                predicted_class=int(preds[i]),
                label=label,
                cos_theta=theta[i].copy(),
            ))
    return records


def write_scores_csv(records, path):
    with open(path, "w", newline="") as fh:
        fh.write(SCORE_CSV_HEADER + "\n")
        for r in records:
            fh.write(
                "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%s\n"
                % (
                    r.sample_id, r.cos_alpha, r.max_cos_beta, r.cos_gamma,
                    r.norm_fn, r.baseline_msp, r.predicted_class, r.label,
                )
            )


def read_scores_csv(path):
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or ",".join(header) != SCORE_CSV_HEADER:
            raise MalformedFileError(f"{path}: unexpected score CSV header")
        for row in reader:
            if len(row) != 8:
                raise MalformedFileError(f"{path}: malformed score row {row}")
            records.append(ScoreRecord(
                sample_id=int(row[0]),
                cos_alpha=float(row[1]),
                max_cos_beta=float(row[2]),
                cos_gamma=float(row[3]),
                norm_fn=float(row[4]),
                baseline_msp=float(row[5]),
                predicted_class=int(row[6]),
                label=row[7],
            ))
    return records
