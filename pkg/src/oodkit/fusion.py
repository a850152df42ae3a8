"""Secondary classifier fusing the four feature metrics into one OOD score.

The default is an RBF-kernel SVM trained by sequential minimal optimization
with Platt-scaled probabilities; linear-kernel SVM and logistic regression
are available as alternatives. ID is the positive class, so a higher fused
score means "more in-distribution".
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import MalformedFileError, NumericalError, VersionMismatchError

FUSION_MAGIC = b"PFUS"
FUSION_VERSION = 1

KIND_RBF_SVM = "rbf_svm"
KIND_LINEAR_SVM = "linear_svm"
KIND_LOGREG = "logreg"
_KIND_BYTES = {KIND_RBF_SVM: 0, KIND_LINEAR_SVM: 1, KIND_LOGREG: 2}
_KIND_NAMES = {v: k for k, v in _KIND_BYTES.items()}

FEATURE_NAMES = ("cos_alpha", "max_cos_beta", "cos_gamma", "norm_fn")


@dataclass(frozen=True)
class Standardizer:
    """Per-feature min-max map onto [0,1] (training range); no clipping, so
    out-of-range test values extend affinely beyond [0,1]."""

    mins: np.ndarray
    maxs: np.ndarray

    def apply(self, features):
        width = self.maxs - self.mins
        return (np.asarray(features, dtype=np.float64) - self.mins) / width


def standardize_fit(features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError("standardize_fit needs at least 2 records")
    mins = features.min(axis=0)
    maxs = features.max(axis=0)
    width = maxs - mins
    # constant feature: clamp width to 1 so the map stays defined
    maxs = np.where(width < 1e-300, mins + 1.0, maxs)
    return Standardizer(mins, maxs)


# --- SVM via sequential minimal optimization -----------------------------

def _kernel_matrix(kind, gamma, a, b):
    if kind == KIND_LINEAR_SVM:
        return a @ b.T
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


class _Smo:
    """Platt's SMO with an error cache and deterministic scan order."""

    def __init__(self, kernel, labels, c, tol, seed):
        self.k = kernel
        self.y = labels.astype(np.float64)
        self.c = c
        self.tol = tol
        self.n = len(labels)
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.errors = -self.y.copy()  # decision is 0 at start
        self.rng = np.random.default_rng(seed)

    def decision_row(self, i):
        return float(self.alpha * self.y @ self.k[:, i] + self.b)

    def take_step(self, i1, i2):
        if i1 == i2:
            return False
        a1, a2 = self.alpha[i1], self.alpha[i2]
        y1, y2 = self.y[i1], self.y[i2]
        e1, e2 = self.errors[i1], self.errors[i2]
        s = y1 * y2
        if s > 0:
            lo, hi = max(0.0, a1 + a2 - self.c), min(self.c, a1 + a2)
        else:
            lo, hi = max(0.0, a2 - a1), min(self.c, self.c + a2 - a1)
        if hi - lo < 1e-12:
            return False
        eta = self.k[i1, i1] + self.k[i2, i2] - 2.0 * self.k[i1, i2]
        if eta <= 1e-12:
            return False  # degenerate curvature; skip (objective flat)
        a2_new = np.clip(a2 + y2 * (e1 - e2) / eta, lo, hi)
        if abs(a2_new - a2) < 1e-12 * (a2_new + a2 + 1e-12):
            return False
        a1_new = a1 + s * (a2 - a2_new)
        d1 = y1 * (a1_new - a1)
        d2 = y2 * (a2_new - a2)
        b1 = self.b - e1 - d1 * self.k[i1, i1] - d2 * self.k[i1, i2]
        b2 = self.b - e2 - d1 * self.k[i1, i2] - d2 * self.k[i2, i2]
        if 0.0 < a1_new < self.c:
            b_new = b1
        elif 0.0 < a2_new < self.c:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        self.errors += (
            d1 * self.k[:, i1] + d2 * self.k[:, i2] + (b_new - self.b)
        )
        self.alpha[i1], self.alpha[i2] = a1_new, a2_new
        self.b = b_new
        self.errors[i1] = self.decision_row(i1) - self.y[i1]
        self.errors[i2] = self.decision_row(i2) - self.y[i2]
        return True

    def examine(self, i2):
        y2, a2 = self.y[i2], self.alpha[i2]
        e2 = self.errors[i2]
        r2 = e2 * y2
        if not ((r2 < -self.tol and a2 < self.c) or (r2 > self.tol and a2 > 0)):
            return False
        non_bound = np.flatnonzero((self.alpha > 0) & (self.alpha < self.c))
        if len(non_bound) > 1:
            i1 = int(non_bound[np.argmax(np.abs(self.errors[non_bound] - e2))])
            if self.take_step(i1, i2):
                return True
        start = int(self.rng.integers(self.n))
        for offset in range(len(non_bound)):
            i1 = int(non_bound[(offset + start) % len(non_bound)])
            if self.take_step(i1, i2):
                return True
        for offset in range(self.n):
            i1 = (offset + start) % self.n
            if self.take_step(i1, i2):
                return True
        return False

    def solve(self, max_passes=10000):
        examine_all = True
        passes = 0
        while passes < max_passes:
            passes += 1
            changed = 0
            if examine_all:
                indices = range(self.n)
            else:
                indices = np.flatnonzero((self.alpha > 0) & (self.alpha < self.c))
            for i in indices:
                changed += self.examine(int(i))
            if examine_all:
                if changed == 0:
                    return
                examine_all = False
            elif changed == 0:
                examine_all = True
        raise NumericalError(
            f"SMO did not converge within {max_passes} passes "
            f"(n={self.n}, C={self.c})"
        )


@dataclass(frozen=True)
class FusionModel:
    kind: str
    standardizer: Standardizer
    # SVM payload
    support_vectors: np.ndarray = None  # (n_sv, 4), standardized
    dual_coef: np.ndarray = None  # alpha_i * y_i
    intercept: float = 0.0
    penalty_c: float = 5.0
    rbf_gamma: float = 1.0
    platt_a: float = -1.0
    platt_b: float = 0.0
    # logreg payload
    weights: np.ndarray = None
    logreg_penalty: float = 0.5

    def decision(self, features):
        """Raw decision value on standardized features (2-D array or row)."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.kind == KIND_LOGREG:
            return x @ self.weights + self.intercept
        k = _kernel_matrix(self.kind, self.rbf_gamma, x, self.support_vectors)
        return k @ self.dual_coef + self.intercept


def default_rbf_gamma(features):
    """Scale heuristic: 1 / (16 * mean per-feature variance). The wide
    kernel keeps the decision smooth enough to transfer from the single
    reference OOD source to unseen ones."""
    var = np.mean(np.var(np.asarray(features, dtype=np.float64), axis=0))
    return 1.0 / max(16.0 * var, 1e-12)


def svm_train(features, labels, kind=KIND_RBF_SVM, penalty_c=5.0,
              rbf_gamma=None, seed=0, kkt_tol=1e-3):
    """Train a binary SVM (labels +-1, ID = +1) by SMO.

    Features are assumed already standardized. Returns a FusionModel with
    identity Platt parameters; calibrate with platt_fit afterwards.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise ValueError("svm_train needs both classes, labels in {-1, +1}")
    if len(y) < 4:
        raise ValueError("svm_train needs at least 4 records")
    if kind not in (KIND_RBF_SVM, KIND_LINEAR_SVM):
        raise ValueError(f"unknown SVM kind {kind!r}")
    if rbf_gamma is None:
        rbf_gamma = default_rbf_gamma(x) if kind == KIND_RBF_SVM else 1.0
    kernel = _kernel_matrix(kind, rbf_gamma, x, x)
    smo = _Smo(kernel, y, penalty_c, kkt_tol, seed)
    smo.solve()
    mask = smo.alpha > 1e-12
    return FusionModel(
        kind=kind,
        standardizer=None,
        support_vectors=x[mask].copy(),
        dual_coef=(smo.alpha * y)[mask].copy(),
        intercept=float(smo.b),
        penalty_c=penalty_c,
        rbf_gamma=float(rbf_gamma),
    )


def platt_fit(decisions, labels, max_iter=100):
    """Fit sigmoid parameters (A, B) mapping decision values to P(ID).

    Newton iteration on the regularized log-likelihood; labels are +-1.
    """
    dec = np.asarray(decisions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    pos = y > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("platt_fit needs both classes")
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(pos, hi, lo)
    a, b = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))

    def nll(a, b):
        z = a * dec + b
        # cross-entropy of P(ID) = 1/(1+e^z) against target t, stable in z
        return float(np.sum(np.logaddexp(0.0, z) - (1.0 - t) * z))

    best = nll(a, b)
    for _ in range(max_iter):
        z = a * dec + b
        p = 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))  # P(ID)
        d1 = t - p  # d nll / dz
        d2 = p * (1.0 - p)
        g_a = float(np.sum(d1 * dec))
        g_b = float(np.sum(d1))
        h_aa = float(np.sum(d2 * dec * dec)) + 1e-12
        h_ab = float(np.sum(d2 * dec))
        h_bb = float(np.sum(d2)) + 1e-12
        det = h_aa * h_bb - h_ab * h_ab
        if abs(det) < 1e-300:
            break
        da = -(h_bb * g_a - h_ab * g_b) / det
        db = -(-h_ab * g_a + h_aa * g_b) / det
        step = 1.0
        while step > 1e-10:
            val = nll(a + step * da, b + step * db)
            if val < best + 1e-12:
                a += step * da
                b += step * db
                best = val
                break
            step *= 0.5
        if max(abs(g_a), abs(g_b)) < 1e-9:
            break
    return float(a), float(b)


def fuse_score(model, features_or_record):
    """Final OOD score in (0, 1): higher means more in-distribution."""
    if hasattr(features_or_record, "features"):
        raw = features_or_record.features()
    else:
        raw = np.asarray(features_or_record, dtype=np.float64)
    x = model.standardizer.apply(np.atleast_2d(raw))
    dec = model.decision(x)
    if model.kind == KIND_LOGREG:
        probs = 1.0 / (1.0 + np.exp(-dec))
    else:
        probs = 1.0 / (1.0 + np.exp(model.platt_a * dec + model.platt_b))
    probs = np.clip(probs, 1e-12, 1.0 - 1e-12)
    if raw.ndim == 1:
        return float(probs[0])
    return probs


def logreg_train(features, labels, penalty=0.5, learning_rate=0.5,
                 iterations=2000):
    """L2-regularized logistic regression by full-batch gradient descent.

    Features are assumed standardized; labels +-1; weights start at zero, so
    zero iterations gives probability 0.5 everywhere. The intercept is not
    penalized.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise ValueError("logreg_train needs labels in {-1, +1}")
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(iterations):
        z = y * (x @ w + b)
        sig = 1.0 / (1.0 + np.exp(z))  # = 1 - sigmoid(z)
        gw = -(x.T @ (y * sig)) / n + penalty * w
        gb = -float(np.sum(y * sig)) / n
        w -= learning_rate * gw
        b -= learning_rate * gb
        if not np.all(np.isfinite(w)) or not np.isfinite(b):
            raise NumericalError("logistic regression diverged; lower the rate")
    return FusionModel(
        kind=KIND_LOGREG, standardizer=None, weights=w, intercept=float(b),
        logreg_penalty=penalty,
    )


def logreg_loss_grad(w, b, x, y, penalty):
    """(loss, grad_w, grad_b) of the regularized logistic objective; used by
    the finite-difference checks."""
    n = x.shape[0]
    z = y * (x @ w + b)
    loss = float(np.mean(np.logaddexp(0.0, -z))) + 0.5 * penalty * float(w @ w)
    sig = 1.0 / (1.0 + np.exp(z))
    gw = -(x.T @ (y * sig)) / n + penalty * w
    gb = -float(np.sum(y * sig)) / n
    return loss, gw, gb


def fit_fusion(records_id, records_ood, kind=KIND_RBF_SVM, penalty_c=5.0,
               rbf_gamma=None, seed=0):
    """Standardize, train, and calibrate a fusion model from score records.

    SVM kinds hold out a seeded 20% of the data for Platt calibration;
    logistic regression uses its native probabilities.
    """
    feats = np.array([r.features() for r in records_id + records_ood])
    labels = np.concatenate(
        [np.ones(len(records_id)), -np.ones(len(records_ood))]
    )
    std = standardize_fit(feats)
    x = std.apply(feats)
    if kind == KIND_LOGREG:
        model = logreg_train(x, labels)
        return FusionModel(
            kind=kind, standardizer=std, weights=model.weights,
            intercept=model.intercept, logreg_penalty=model.logreg_penalty,
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labels))
    n_cal = max(2, len(labels) // 5)
    cal_idx, fit_idx = order[:n_cal], order[n_cal:]
    if len(set(labels[fit_idx])) < 2:  # degenerate split; train on all
        fit_idx = order
    model = svm_train(
        x[fit_idx], labels[fit_idx], kind=kind, penalty_c=penalty_c,
        rbf_gamma=rbf_gamma, seed=seed,
    )
    cal_dec = model.decision(x[cal_idx])
    cal_labels = labels[cal_idx]
    if len(set(cal_labels)) < 2:
        cal_dec = model.decision(x)
        cal_labels = labels
    a, b = platt_fit(cal_dec, cal_labels)
    return FusionModel(
        kind=kind, standardizer=std, support_vectors=model.support_vectors,
        dual_coef=model.dual_coef, intercept=model.intercept,
        penalty_c=model.penalty_c, rbf_gamma=model.rbf_gamma,
        platt_a=a, platt_b=b,
    )


# --- fusion model file ---------------------------------------------------

def save_fusion(model, path):
    with open(path, "wb") as fh:
        fh.write(FUSION_MAGIC)
        fh.write(struct.pack("<I", FUSION_VERSION))
        fh.write(struct.pack("<B", _KIND_BYTES[model.kind]))
        fh.write(np.asarray(model.standardizer.mins, dtype="<f8").tobytes())
        fh.write(np.asarray(model.standardizer.maxs, dtype="<f8").tobytes())
        if model.kind == KIND_LOGREG:
            fh.write(struct.pack("<dd", model.logreg_penalty, model.intercept))
            fh.write(np.asarray(model.weights, dtype="<f8").tobytes())
        else:
            n_sv = model.support_vectors.shape[0]
            fh.write(struct.pack("<I", n_sv))
            fh.write(struct.pack(
                "<ddddd", model.penalty_c, model.rbf_gamma, model.intercept,
                model.platt_a, model.platt_b,
            ))
            fh.write(np.asarray(model.dual_coef, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(model.support_vectors, dtype="<f8").tobytes())


def load_fusion(path):
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise MalformedFileError(f"{path}: truncated fusion model file")
        out = data[pos : pos + n]
        pos += n
        return out

    if take(4) != FUSION_MAGIC:
        raise VersionMismatchError(f"{path}: bad fusion model magic")
    version = struct.unpack("<I", take(4))[0]
    if version != FUSION_VERSION:
        raise VersionMismatchError(f"{path}: unsupported version {version}")
    kind_byte = struct.unpack("<B", take(1))[0]
    if kind_byte not in _KIND_NAMES:
        raise MalformedFileError(f"{path}: unknown fusion kind {kind_byte}")
    kind = _KIND_NAMES[kind_byte]
    mins = np.frombuffer(take(32), dtype="<f8").copy()
    maxs = np.frombuffer(take(32), dtype="<f8").copy()
    std = Standardizer(mins, maxs)
    if kind == KIND_LOGREG:
        penalty, intercept = struct.unpack("<dd", take(16))
        weights = np.frombuffer(take(32), dtype="<f8").copy()
        return FusionModel(
            kind=kind, standardizer=std, weights=weights,
            intercept=intercept, logreg_penalty=penalty,
        )
    n_sv = struct.unpack("<I", take(4))[0]
    c, gamma, intercept, a, b = struct.unpack("<ddddd", take(40))
    dual = np.frombuffer(take(8 * n_sv), dtype="<f8").copy()
    sv = np.frombuffer(take(32 * n_sv), dtype="<f8").reshape(n_sv, 4).copy()
    return FusionModel(
        kind=kind, standardizer=std, support_vectors=sv, dual_coef=dual,
        intercept=intercept, penalty_c=c, rbf_gamma=gamma,
        platt_a=a, platt_b=b,
    )
