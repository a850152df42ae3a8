import numpy as np
import pytest

from oodkit.centroids import generate_simplex
from oodkit.errors import (
    ArchitectureMismatchError,
    ConfigError,
    MalformedFileError,
    VersionMismatchError,
)
from oodkit.losses import LossConfig
from oodkit.model import (
    NetworkConfig,
    NetworkModel,
    cosine_to_centroids,
    load_checkpoint,
    loss_total,
    save_checkpoint,
)

from conftest import finite_difference, max_relative_error


def small_model(seed=0, final_bn_relu=False, fc1_bias=True):
    config = NetworkConfig(
        architecture=("dense(6)", "bn", "relu"),
        input_shape=(3,),
        pedcc_dim=2,
        final_bn_relu=final_bn_relu,
        fc1_bias=fc1_bias,
        seed=seed,
    )
    return NetworkModel(config, generate_simplex(3, 2))


def test_forward_shapes(rng):
    model = small_model()
    x = rng.normal(size=(7, 3))
    result = model.forward(x)
    assert result.f_m.shape == (7, 6)
    assert result.f_n.shape == (7, 2)
    assert result.cos_theta.shape == (7, 3)
    assert np.all(result.cos_theta >= -1.0) and np.all(result.cos_theta <= 1.0)
    assert not result.degenerate.any()


def test_cosine_to_centroids_unit_alignment():
    cs = generate_simplex(3, 2)
    cos, degenerate = cosine_to_centroids(cs.vectors[0][None] * 4.2, cs)
    assert cos[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert not degenerate[0]


def test_cosine_to_centroids_zero_vector_flagged():
    cs = generate_simplex(3, 2)
    cos, degenerate = cosine_to_centroids(np.zeros((1, 2)), cs)
    assert np.array_equal(cos, np.zeros((1, 3)))
    assert degenerate[0]


def test_invalid_architecture_token():
    with pytest.raises(ConfigError):
        NetworkConfig(architecture=("dense(6)", "sigmoid"),
                      input_shape=(3,), pedcc_dim=2)


def test_feature_dim_must_exceed_pedcc_dim():
    config = NetworkConfig(architecture=("dense(2)",), input_shape=(3,),
                           pedcc_dim=2)
    with pytest.raises(ConfigError):
        NetworkModel(config, generate_simplex(3, 2))


def test_centroid_dim_must_match():
    config = NetworkConfig(architecture=("dense(6)",), input_shape=(3,),
                           pedcc_dim=2)
    with pytest.raises(ArchitectureMismatchError):
        NetworkModel(config, generate_simplex(3, 3))


def test_composite_loss_gradients(rng):
    # AM-softmax + MSE + orthogonality penalty, back through bn and relu
    model = small_model(seed=4)
    x = rng.normal(size=(8, 3))
    labels = rng.integers(0, 3, size=8)
    loss_config = LossConfig(lin_ind_weight=0.7, mse_weight=1.3)

    for name, layer in model.named_layers():
        # fresh evaluation: FD probing leaves grads from a perturbed point
        loss_total(model, x, labels, loss_config, train=True)
        analytic = {k: g.copy() for k, g in layer.grads.items()}
        for key, param in layer.params.items():
            fd = finite_difference(
                lambda: loss_total(model, x, labels, loss_config, train=True)[0],
                param, h=1e-5,
            )
            err = max_relative_error(analytic[key], fd)
            assert err < 1e-4, f"{name}.{key}: {err}"


def test_composite_loss_gradients_with_final_bn_relu(rng):
    model = small_model(seed=5, final_bn_relu=True)
    x = rng.normal(size=(8, 3))
    labels = rng.integers(0, 3, size=8)
    loss_config = LossConfig()
    # move the bias off its zero init: a dead-relu sample with zero bias has
    # an exactly-zero reduced feature, where the cosine head is not smooth
    model.fc1.params["b"] += rng.normal(scale=0.2, size=2)
    result = model.forward(x, train=True)
    assert not result.degenerate.any()
    assert np.linalg.norm(result.f_n, axis=1).min() > 1e-2
    for name, layer in model.named_layers():
        # fresh evaluation: FD probing leaves grads from a perturbed point
        loss_total(model, x, labels, loss_config, train=True)
        analytic = {k: g.copy() for k, g in layer.grads.items()}
        for key, param in layer.params.items():
            fd = finite_difference(
                lambda: loss_total(model, x, labels, loss_config, train=True)[0],
                param, h=1e-5,
            )
            err = max_relative_error(analytic[key], fd)
            assert err < 1e-4, f"{name}.{key}: {err}"


def test_loss_components_add_up(rng):
    model = small_model(seed=6)
    x = rng.normal(size=(5, 3))
    labels = rng.integers(0, 3, size=5)
    cfg = LossConfig(lin_ind_weight=2.0, mse_weight=0.5)
    total, parts, _ = loss_total(model, x, labels, cfg, train=False)
    assert total == pytest.approx(
        parts["am"] + 0.5 * parts["mse"] + 2.0 * parts["lin_ind"], abs=1e-12
    )


def test_checkpoint_round_trip(tmp_path, rng):
    model = small_model(seed=7, final_bn_relu=True)
    x = rng.normal(size=(6, 3))
    model.forward(x, train=True)  # move the running statistics off their init
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)

    a = model.forward(x, train=False)
    b = loaded.forward(x, train=False)
    assert np.array_equal(a.f_n, b.f_n)
    assert np.array_equal(a.cos_theta, b.cos_theta)
    assert loaded.config == model.config
    assert np.array_equal(loaded.centroids.vectors, model.centroids.vectors)

    path2 = tmp_path / "m2.ckpt"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_truncation(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    data = path.read_bytes()
    for cut in (0, 3, 10, len(data) // 2, len(data) - 4):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(data[:cut])
        # a cut landing on a tensor boundary reads cleanly but leaves the
        # model incomplete, which surfaces as an architecture mismatch
        with pytest.raises((MalformedFileError, ArchitectureMismatchError)):
            load_checkpoint(bad)


def test_checkpoint_rejects_bad_magic(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(data))
    with pytest.raises(VersionMismatchError):
        load_checkpoint(bad)


def test_checkpoint_rejects_mismatched_centroids(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    from oodkit.centroids import generate_iterative

    other = generate_iterative(4, 2, seed=0, steps=50)
    with pytest.raises(ArchitectureMismatchError):
        load_checkpoint(path, centroids=other)
