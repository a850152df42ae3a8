import numpy as np
import pytest

from oodkit.centroids import generate_simplex
from oodkit.errors import NumericalError
from oodkit.losses import LossConfig, loss_lin_ind
from oodkit.model import NetworkConfig, NetworkModel
from oodkit.train import _learning_rate, accuracy, train


def three_blobs(count_per_class=60, seed=0):
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(3) / 3
    means = 2.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    xs, ys = [], []
    for cls in range(3):
        xs.append(means[cls] + 0.25 * rng.normal(size=(count_per_class, 2)))
        ys.append(np.full(count_per_class, cls))
    return np.vstack(xs), np.concatenate(ys)


def blob_model(seed=0, epochs=30, lin_ind_weight=1.0, lr=0.05):
    config = NetworkConfig(
        architecture=("dense(16)", "relu"),
        input_shape=(2,),
        pedcc_dim=2,
        epochs=epochs,
        batch_size=32,
        learning_rate=lr,
        seed=seed,
    )
    model = NetworkModel(config, generate_simplex(3, 2))
    return model, LossConfig(lin_ind_weight=lin_ind_weight)


def test_learns_separable_blobs():
    x, y = three_blobs()
    model, loss_config = blob_model()
    report = train(model, x, y, loss_config)
    assert accuracy(model, x, y) >= 0.95
    assert len(report.epochs) == 30
    # loss comes down over training
    assert report.epochs[-1]["total"] < report.epochs[0]["total"]


def test_report_csv_shape():
    x, y = three_blobs(count_per_class=20)
    model, loss_config = blob_model(epochs=3)
    report = train(model, x, y, loss_config)
    lines = report.to_csv().strip().split("\n")
    assert lines[0] == "epoch,total,am,mse,lin_ind,accuracy,learning_rate"
    assert len(lines) == 4


def test_training_deterministic(tmp_path):
    x, y = three_blobs(count_per_class=30)
    results = []
    for run in range(2):
        model, loss_config = blob_model(seed=11, epochs=5)
        out = tmp_path / f"run{run}"
        out.mkdir()
        train(model, x, y, loss_config, out_dir=str(out))
        results.append(model.fc1_weights.copy())
    assert np.array_equal(results[0], results[1])
    a = (tmp_path / "run0" / "model_epoch5.ckpt").read_bytes()
    b = (tmp_path / "run1" / "model_epoch5.ckpt").read_bytes()
    assert a == b


def test_checkpoints_written_at_fraction_and_end(tmp_path):
    x, y = three_blobs(count_per_class=20)
    model, loss_config = blob_model(epochs=10)
    report = train(model, x, y, loss_config, out_dir=str(tmp_path))
    names = sorted(p.name for p in tmp_path.glob("*.ckpt"))
    assert names == ["model_epoch10.ckpt", "model_epoch7.ckpt"]
    assert len(report.checkpoint_paths) == 2


def test_orthogonality_penalty_suppresses_gram():
    x, y = three_blobs()
    losses = {}
    for k in (0.0, 10.0):
        model, loss_config = blob_model(seed=3, lin_ind_weight=k, lr=0.01)
        train(model, x, y, loss_config)
        losses[k], _ = loss_lin_ind(model.fc1_weights)
    assert losses[10.0] < losses[0.0]
    assert losses[10.0] < 1e-3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_numerical_error():
    x, y = three_blobs(count_per_class=20)
    model, loss_config = blob_model(epochs=5, lr=1e9)
    with pytest.raises(NumericalError):
        train(model, x, y, loss_config)


def test_learning_rate_schedule():
    config = NetworkConfig(
        architecture=("dense(4)",), input_shape=(2,), pedcc_dim=2,
        epochs=10, learning_rate=1.0, lr_decay_factor=0.1,
        lr_decay_fractions=(0.3, 0.6),
    )
    lrs = [_learning_rate(config, e) for e in range(10)]
    assert lrs == sorted(lrs, reverse=True)
    assert set(np.round(lrs, 12)) == {1.0, 0.1, 0.01}
    assert lrs[0] == 1.0
    assert lrs[-1] == pytest.approx(0.01)


def test_rejects_out_of_range_labels():
    x, y = three_blobs(count_per_class=10)
    model, loss_config = blob_model(epochs=1)
    with pytest.raises(ValueError):
        train(model, x, y + 5, loss_config)
