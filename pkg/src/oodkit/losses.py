"""Loss terms for centroid-target training.

Three components: additive-margin softmax on centroid cosines, MSE pull
toward the true-class centroid, and an orthogonality penalty on the first
FC layer's weight vectors. Each returns (value, analytic gradient).
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError


@dataclass(frozen=True)
class LossConfig:
    scale: float = 5.5
    margin: float = 0.35
    lin_ind_weight: float = 1.0
    mse_weight: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.margin < 0 or self.lin_ind_weight < 0 or self.mse_weight < 0:
            raise ValueError("margin and loss weights must be non-negative")


def loss_am(cos_theta, labels, scale, margin):
    """Additive-margin softmax loss on cosine logits.

    Logits are scale*cos_theta with margin subtracted from the true class
    before scaling; computed with log-sum-exp stabilization. Returns
    (loss, d loss / d cos_theta).
    """
    cos_theta = np.asarray(cos_theta, dtype=np.float64)
    if not np.all(np.isfinite(cos_theta)):
        raise NumericalError("non-finite cosine input to loss_am")
    n, c = cos_theta.shape
    labels = np.asarray(labels)
    logits = scale * cos_theta
    logits[np.arange(n), labels] -= scale * margin
    m = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - m)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = logits - m - np.log(denom)
    loss = -log_probs[np.arange(n), labels].mean()
    probs = exp / denom
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad *= scale / n
    return loss, grad


def loss_mse(f_n, labels, centroids):
    """Mean squared distance from each feature to its class centroid.

    Returns (loss, d loss / d f_n).
    """
    f_n = np.asarray(f_n, dtype=np.float64)
    if not np.all(np.isfinite(f_n)):
        raise NumericalError("non-finite feature input to loss_mse")
    n = f_n.shape[0]
    targets = centroids.vectors[np.asarray(labels)]
    diff = f_n - targets
    loss = np.sum(diff * diff) / n
    return loss, (2.0 / n) * diff


def loss_lin_ind(weights):
    """Mean squared off-diagonal Gram entry of the unit-normalized columns.

    Zero iff the weight vectors are pairwise orthogonal. Returns
    (loss, d loss / d weights) for an (m, n) matrix with n >= 2 columns.
    """
    w = np.asarray(weights, dtype=np.float64)
    m, n = w.shape
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms < 1e-300):
        raise NumericalError("zero-norm column in FC1 weights")
    u = w / norms
    gram = u.T @ u
    off = gram - np.diag(np.diag(gram))
    denom = n * (n - 1)
    loss = np.sum(off * off) / denom
    # d(u_i . u_j)/dw_i = (u_j - G_ij u_i)/||w_i||; each unordered pair
    # appears twice in the off-diagonal sum.
    coef = (4.0 / denom) * off  # (n, n), zero diagonal
    grad_u = u @ coef  # sum_j coef_ij u_j for each column i
    grad = (grad_u - u * np.sum(grad_u * u, axis=0)) / norms
    return loss, grad
