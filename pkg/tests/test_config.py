import pytest

from oodkit.config import load_experiment_config, subseed
from oodkit.errors import ConfigError

MINIMAL = """
[experiment]
seed = 3
reference_ood = ring

[centroids]
class_count = 3
feature_dim = 3

[network]
architecture = dense(8), relu
input_shape = 2
pedcc_dim = 3
epochs = 2

[loss]

[fusion]

[scoring]

[dataset.id]
kind = gaussian_mixture
count = 60
class_count = 3
train_fraction = 0.8

[dataset.ood.ring]
kind = uniform_ring
count = 30
"""


def write_config(tmp_path, text=MINIMAL):
    path = tmp_path / "exp.ini"
    path.write_text(text)
    return path


def test_subseed_deterministic_and_distinct():
    assert subseed(7, "train") == subseed(7, "train")
    assert subseed(7, "train") != subseed(7, "fusion")
    assert subseed(7, "data", extra=0) != subseed(7, "data", extra=1)
    assert subseed(7, "train") != subseed(8, "train")


def test_minimal_config_parses(tmp_path):
    cfg = load_experiment_config(write_config(tmp_path))
    assert cfg.seed == 3
    assert cfg.reference_ood == "ring"
    assert cfg.centroid_spec.class_count == 3
    assert cfg.network.architecture == ("dense(8)", "relu")
    assert cfg.network.input_shape == (2,)
    assert cfg.id_dataset.kind == "gaussian_mixture"
    assert list(cfg.ood_datasets) == ["ring"]
    assert cfg.fusion_kind == "rbf_svm"
    assert cfg.scoring_bias_mode == "exclude"


def test_seed_override_changes_subseeds(tmp_path):
    path = write_config(tmp_path)
    a = load_experiment_config(path)
    b = load_experiment_config(path, seed_override=99)
    assert b.seed == 99
    assert a.network.seed != b.network.seed
    assert a.id_dataset.seed != b.id_dataset.seed


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment_config(tmp_path / "nope.ini")


def test_unknown_dataset_kind_rejected(tmp_path):
    text = MINIMAL.replace("kind = uniform_ring", "kind = cauchy_storm")
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, text))


def test_bad_architecture_token_rejected(tmp_path):
    text = MINIMAL.replace("dense(8), relu", "dense(8), tanh")
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, text))


def test_reference_ood_must_exist(tmp_path):
    text = MINIMAL.replace("reference_ood = ring", "reference_ood = fog")
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, text))


def test_centroid_dim_must_match_pedcc_dim(tmp_path):
    text = MINIMAL.replace("feature_dim = 3", "feature_dim = 5")
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, text))
