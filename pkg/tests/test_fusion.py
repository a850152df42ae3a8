import numpy as np
import pytest

from oodkit.errors import MalformedFileError, VersionMismatchError
from oodkit.fusion import (
    FEATURE_NAMES,
    KIND_LINEAR_SVM,
    KIND_LOGREG,
    KIND_RBF_SVM,
    _kernel_matrix,
    default_rbf_gamma,
    fit_fusion,
    fuse_score,
    load_fusion,
    logreg_loss_grad,
    logreg_train,
    platt_fit,
    save_fusion,
    standardize_fit,
    svm_train,
)
from oodkit.scoring import ScoreRecord

from conftest import finite_difference, max_relative_error


def blob_data(rng, n_per=40, gap=3.0):
    pos = rng.normal(size=(n_per, 2)) + [gap, 0.0]
    neg = rng.normal(size=(n_per, 2)) - [gap, 0.0]
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(n_per), -np.ones(n_per)])
    return x, y


def qp_reference_alpha(x, y, c, kind=KIND_LINEAR_SVM, gamma=1.0):
    """Dual SVM solved with a generic convex QP solver, for comparison."""
    from cvxopt import matrix, solvers

    n = len(y)
    k = _kernel_matrix(kind, gamma, x, x)
    q = np.outer(y, y) * k
    solvers.options["show_progress"] = False
    solvers.options["abstol"] = 1e-10
    solvers.options["reltol"] = 1e-10
    sol = solvers.qp(
        matrix(q),
        matrix(-np.ones(n)),
        matrix(np.vstack([-np.eye(n), np.eye(n)])),
        matrix(np.concatenate([np.zeros(n), np.full(n, c)])),
        matrix(y[None, :]),
        matrix(np.zeros(1)),
    )
    return np.array(sol["x"]).ravel()


def dual_objective(alpha, x, y, kind=KIND_LINEAR_SVM, gamma=1.0):
    k = _kernel_matrix(kind, gamma, x, x)
    q = np.outer(y, y) * k
    return float(alpha.sum() - 0.5 * alpha @ q @ alpha)


def recover_alpha(model, x):
    """Per-sample dual coefficients, matching support vectors to rows."""
    alpha = np.zeros(len(x))
    lookup = {row.tobytes(): i for i, row in enumerate(np.asarray(x))}
    for sv, coef in zip(model.support_vectors, model.dual_coef):
        alpha[lookup[sv.tobytes()]] = abs(coef)
    return alpha


def check_kkt(model, x, y, c, tol):
    alpha = recover_alpha(model, x)
    assert np.all(alpha >= -1e-12)
    assert np.all(alpha <= c + 1e-12)
    assert abs(np.sum(model.dual_coef)) < 1e-9  # sum of alpha_i y_i
    margin = y * model.decision(x)
    free = (alpha > 1e-8) & (alpha < c - 1e-8)
    assert np.all(margin[alpha <= 1e-8] >= 1.0 - tol)
    assert np.all(np.abs(margin[free] - 1.0) <= tol)
    assert np.all(margin[alpha >= c - 1e-8] <= 1.0 + tol)


@pytest.mark.parametrize(
    "kind,gamma", [(KIND_LINEAR_SVM, 1.0), (KIND_RBF_SVM, 0.5)]
)
def test_smo_matches_qp_reference(rng, kind, gamma):
    x, y = blob_data(rng, n_per=25, gap=1.5)
    c = 2.0
    model = svm_train(x, y, kind=kind, penalty_c=c, rbf_gamma=gamma)
    alpha = recover_alpha(model, x)
    ref = qp_reference_alpha(x, y, c, kind=kind, gamma=gamma)
    got = dual_objective(alpha, x, y, kind=kind, gamma=gamma)
    want = dual_objective(ref, x, y, kind=kind, gamma=gamma)
    assert got == pytest.approx(want, abs=1e-3 * max(1.0, abs(want)))


def test_smo_kkt_conditions(rng):
    for seed in range(3):
        local = np.random.default_rng(seed)
        x, y = blob_data(local, n_per=30, gap=1.0)
        c = 5.0
        model = svm_train(x, y, kind=KIND_RBF_SVM, penalty_c=c, seed=seed)
        check_kkt(model, x, y, c, tol=1e-2)


def test_xor_with_rbf_kernel():
    x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    model = svm_train(x, y, kind=KIND_RBF_SVM, penalty_c=10.0, rbf_gamma=1.0)
    assert np.array_equal(np.sign(model.decision(x)), y)


def test_linear_boundary_location(rng):
    # symmetric clusters at x = +-3: the separating plane sits at x = 0
    x, y = blob_data(rng, n_per=50, gap=3.0)
    model = svm_train(x, y, kind=KIND_LINEAR_SVM, penalty_c=1.0)
    centers = model.decision(np.array([[3.0, 0.0], [-3.0, 0.0]]))
    assert centers[0] >= 0.9 and centers[1] <= -0.9
    assert abs(model.decision(np.zeros((1, 2)))[0]) < 0.5
    assert np.all(np.sign(model.decision(x)) == y)


def test_platt_symmetric_decisions():
    dec = np.array([-2.0, -1.0, 1.0, 2.0])
    labels = np.array([-1.0, -1.0, 1.0, 1.0])
    a, b = platt_fit(dec, labels)
    mid = 1.0 / (1.0 + np.exp(a * 0.0 + b))
    assert mid == pytest.approx(0.5, abs=1e-6)
    assert a < 0  # larger decision values map to larger probabilities


def test_platt_probabilities_monotone(rng):
    dec = np.concatenate([rng.normal(-2, 1, 50), rng.normal(2, 1, 50)])
    labels = np.concatenate([-np.ones(50), np.ones(50)])
    a, b = platt_fit(dec, labels)
    grid = np.linspace(-4, 4, 20)
    probs = 1.0 / (1.0 + np.exp(a * grid + b))
    assert np.all(np.diff(probs) > 0)
    assert probs[0] < 0.2 and probs[-1] > 0.8


def test_logreg_gradient(rng):
    x = rng.normal(size=(12, 4))
    y = np.where(rng.random(12) > 0.5, 1.0, -1.0)
    w = rng.normal(size=4)
    b = np.array([0.3])
    _, grad_w, grad_b = logreg_loss_grad(w, b[0], x, y, penalty=0.5)
    fd_w = finite_difference(
        lambda: logreg_loss_grad(w, b[0], x, y, penalty=0.5)[0], w
    )
    fd_b = finite_difference(
        lambda: logreg_loss_grad(w, b[0], x, y, penalty=0.5)[0], b
    )
    assert max_relative_error(grad_w, fd_w) < 1e-4
    assert max_relative_error(grad_b, fd_b[0]) < 1e-4


def test_logreg_zero_iterations_is_uninformative(rng):
    x, y = blob_data(rng, n_per=10, gap=2.0)
    model = logreg_train(x, y, iterations=0)
    assert np.array_equal(model.decision(x), np.zeros(len(x)))


def test_logreg_separates_blobs(rng):
    x, y = blob_data(rng, n_per=40, gap=2.0)
    model = logreg_train(x, y)
    pred = np.sign(model.decision(x))
    assert np.mean(pred == y) >= 0.99


def test_standardizer_maps_training_range(rng):
    feats = rng.normal(size=(30, 4)) * [1.0, 10.0, 0.1, 5.0]
    std = standardize_fit(feats)
    z = std.apply(feats)
    assert np.allclose(z.min(axis=0), 0.0, atol=1e-12)
    assert np.allclose(z.max(axis=0), 1.0, atol=1e-12)


def test_standardizer_constant_feature(rng):
    feats = rng.normal(size=(10, 4))
    feats[:, 2] = 7.0
    std = standardize_fit(feats)
    z = std.apply(feats)
    assert np.all(np.isfinite(z))
    assert np.allclose(z[:, 2], 0.0)


def test_default_rbf_gamma_positive(rng):
    feats = rng.normal(size=(40, 4))
    assert default_rbf_gamma(feats) > 0


def make_records(rng, count, label, shift=0.0):
    records = []
    for i in range(count):
        base = rng.random(4) + shift
        records.append(ScoreRecord(
            sample_id=i, cos_alpha=float(base[0]),
            max_cos_beta=float(base[1]), cos_gamma=float(base[2]),
            norm_fn=float(base[3] * 5), baseline_msp=0.5,
            predicted_class=0, label=label,
        ))
    return records


@pytest.mark.parametrize("kind", [KIND_RBF_SVM, KIND_LINEAR_SVM, KIND_LOGREG])
def test_fit_fusion_separates_and_round_trips(tmp_path, rng, kind):
    id_records = make_records(rng, 60, "ID", shift=1.0)
    ood_records = make_records(rng, 60, "OOD", shift=-0.5)
    model = fit_fusion(id_records, ood_records, kind=kind, seed=3)

    id_scores = np.array([fuse_score(model, r) for r in id_records])
    ood_scores = np.array([fuse_score(model, r) for r in ood_records])
    assert np.all(id_scores > 0.0) and np.all(id_scores < 1.0)
    # the feature ranges are disjoint, so the ranking must be perfect
    assert id_scores.min() > ood_scores.max()

    path = tmp_path / "f.pfus"
    save_fusion(model, path)
    loaded = load_fusion(path)
    assert loaded.kind == kind
    reload_scores = np.array([fuse_score(loaded, r) for r in id_records])
    assert np.array_equal(reload_scores, id_scores)
    path2 = tmp_path / "f2.pfus"
    save_fusion(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_fusion_file_rejects_garbage(tmp_path, rng):
    path = tmp_path / "f.pfus"
    model = fit_fusion(
        make_records(rng, 20, "ID", 1.0), make_records(rng, 20, "OOD", -1.0),
        kind=KIND_LOGREG,
    )
    save_fusion(model, path)
    data = path.read_bytes()
    short = tmp_path / "short.pfus"
    short.write_bytes(data[: len(data) - 3])
    with pytest.raises(MalformedFileError):
        load_fusion(short)
    bad = bytearray(data)
    bad[:4] = b"JUNK"
    bad_path = tmp_path / "bad.pfus"
    bad_path.write_bytes(bytes(bad))
    with pytest.raises((MalformedFileError, VersionMismatchError)):
        load_fusion(bad_path)


def test_feature_name_order():
    assert FEATURE_NAMES == ("cos_alpha", "max_cos_beta", "cos_gamma", "norm_fn")


def test_svm_train_input_validation(rng):
    x = rng.normal(size=(10, 2))
    with pytest.raises(ValueError):
        svm_train(x, np.ones(10))  # single class
    with pytest.raises(ValueError):
        svm_train(x[:2], np.array([1.0, -1.0]))  # too few records
