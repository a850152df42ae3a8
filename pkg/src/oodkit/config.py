"""Experiment configuration: INI-style file with nested dataset sections.

One file describes the whole run: centroid construction, network and loss
settings, the ID dataset, a designated reference OOD source plus any number
of test OOD sources, and the fusion classifier. All randomness derives from
the single [experiment] seed through fixed named sub-seeds.
"""

import configparser
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSpec
from .errors import ConfigError
from .losses import LossConfig
from .model import NetworkConfig

_ROLE_KEYS = {
    "centroids": 1,
    "train": 2,
    "split": 3,
    "fusion": 4,
    "data": 5,
}


def subseed(global_seed, role, extra=0):
    """Stable per-role seed derived from the experiment seed."""
    if role not in _ROLE_KEYS:
        raise ConfigError(f"unknown seed role {role!r}")
    ss = np.random.SeedSequence([int(global_seed), _ROLE_KEYS[role], int(extra)])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class CentroidSpec:
    class_count: int
    feature_dim: int
    generator: str = "simplex"  # simplex | iterative
    steps: int = 10000
    step_size: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    centroid_spec: CentroidSpec
    network: NetworkConfig
    loss: LossConfig
    id_dataset: DatasetSpec
    id_train_fraction: float
    ood_datasets: dict  # name -> DatasetSpec
    reference_ood: str
    fusion_kind: str = "rbf_svm"
    fusion_penalty_c: float = 5.0
    scoring_bias_mode: str = "exclude"
    idx_paths: dict = field(default_factory=dict)  # name -> (images, labels)


def _floats(value):
    return tuple(float(x) for x in value.replace(",", " ").split())


def _ints(value):
    return tuple(int(x) for x in value.replace(",", " ").split())


def _tokens(value):
    return tuple(t.strip() for t in value.split(",") if t.strip())


def _dataset_spec(section, seed_val, kind=None):
    kind = kind or section.get("kind")
    known = {
        "gaussian_mixture": ("class_count", "std", "mean_radius"),
        "two_moons": ("std",),
        "uniform_ring": ("radius_min", "radius_max"),
        "shifted_cluster": ("mean", "std"),
        "uniform_noise": ("low", "high", "dim"),
        "idx_images": (),
    }
    if kind not in known:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    params = {}
    for key in known[kind]:
        if key in section:
            if key == "mean":
                params[key] = _floats(section[key])
            elif key in ("class_count", "dim"):
                params[key] = int(section[key])
            else:
                params[key] = float(section[key])
    count = section.getint("count", fallback=1) if kind == "idx_images" else section.getint("count")
    return DatasetSpec(kind=kind, count=count, seed=seed_val, params=params)


def load_experiment_config(path, seed_override=None):
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    try:
        return _parse(parser, seed_override)
    except (configparser.Error, KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse(parser, seed_override):
    exp = parser["experiment"]
    seed = seed_override if seed_override is not None else exp.getint("seed")

    cent = parser["centroids"]
    centroid_spec = CentroidSpec(
        class_count=cent.getint("class_count"),
        feature_dim=cent.getint("feature_dim"),
        generator=cent.get("generator", "simplex"),
        steps=cent.getint("steps", fallback=10000),
        step_size=cent.getfloat("step_size", fallback=0.05),
    )
    if centroid_spec.generator not in ("simplex", "iterative"):
        raise ConfigError(f"unknown centroid generator {centroid_spec.generator!r}")

    net = parser["network"]
    network = NetworkConfig(
        architecture=_tokens(net.get("architecture")),
        input_shape=_ints(net.get("input_shape")),
        pedcc_dim=net.getint("pedcc_dim"),
        final_bn_relu=net.getboolean("final_bn_relu", fallback=False),
        fc1_bias=net.getboolean("fc1_bias", fallback=True),
        epochs=net.getint("epochs", fallback=100),
        batch_size=net.getint("batch_size", fallback=128),
        learning_rate=net.getfloat("learning_rate", fallback=0.1),
        lr_decay_factor=net.getfloat("lr_decay_factor", fallback=0.1),
        lr_decay_fractions=_floats(net.get("lr_decay_fractions", "0.3, 0.6")),
        momentum=net.getfloat("momentum", fallback=0.9),
        weight_decay=net.getfloat("weight_decay", fallback=0.0005),
        seed=subseed(seed, "train"),
        checkpoint_fraction=net.getfloat("checkpoint_fraction", fallback=0.7),
    )
    if network.pedcc_dim != centroid_spec.feature_dim:
        raise ConfigError(
            f"pedcc_dim {network.pedcc_dim} does not match centroid "
            f"feature_dim {centroid_spec.feature_dim}"
        )

    loss_sec = parser["loss"] if parser.has_section("loss") else {}
    loss = LossConfig(
        scale=float(loss_sec.get("scale", 5.5)),
        margin=float(loss_sec.get("margin", 0.35)),
        lin_ind_weight=float(loss_sec.get("lin_ind_weight", 1.0)),
        mse_weight=float(loss_sec.get("mse_weight", 1.0)),
    )

    idx_paths = {}
    id_sec = parser["dataset.id"]
    id_dataset = _dataset_spec(id_sec, subseed(seed, "data", 0))
    if id_dataset.kind == "idx_images":
        idx_paths["id"] = (id_sec.get("images"), id_sec.get("labels"))
    id_train_fraction = id_sec.getfloat("train_fraction", fallback=0.8)

    ood_datasets = {}
    for section in parser.sections():
        if not section.startswith("dataset.ood."):
            continue
        name = section[len("dataset.ood."):]
        sec = parser[section]
        spec = _dataset_spec(sec, subseed(seed, "data", 100 + len(ood_datasets)))
        ood_datasets[name] = spec
        if spec.kind == "idx_images":
            idx_paths[name] = (sec.get("images"), None)
    if not ood_datasets:
        raise ConfigError("need at least one [dataset.ood.*] section")

    reference = exp.get("reference_ood", fallback=next(iter(ood_datasets)))
    if reference not in ood_datasets:
        raise ConfigError(f"reference_ood {reference!r} is not a configured OOD set")

    fusion_sec = parser["fusion"] if parser.has_section("fusion") else {}
    fusion_kind = fusion_sec.get("kind", "rbf_svm")
    if fusion_kind not in ("rbf_svm", "linear_svm", "logreg"):
        raise ConfigError(f"unknown fusion kind {fusion_kind!r}")

    scoring_sec = parser["scoring"] if parser.has_section("scoring") else {}
    bias_mode = scoring_sec.get("bias_mode", "exclude")
    if bias_mode not in ("exclude", "include-as-vector"):
        raise ConfigError(f"unknown scoring bias_mode {bias_mode!r}")

    return ExperimentConfig(
        seed=seed,
        centroid_spec=centroid_spec,
        network=network,
        loss=loss,
        id_dataset=id_dataset,
        id_train_fraction=id_train_fraction,
        ood_datasets=ood_datasets,
        reference_ood=reference,
        fusion_kind=fusion_kind,
        fusion_penalty_c=float(fusion_sec.get("penalty_c", 5.0)),
        scoring_bias_mode=bias_mode,
        idx_paths=idx_paths,
    )
