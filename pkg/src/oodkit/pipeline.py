"""End-to-end experiment orchestration shared by the CLI and the tests.

Artifacts inside an output directory:
    centroids.pdcc                  centroid file
    model_epoch<N>.ckpt             checkpoints (mid-training and final)
    train_report.csv / .png         loss curves and accuracy
    scores_<dataset>.csv            per-sample metrics
    fusion.pfus                     fitted fusion model
    eval/report_<score>_<ood>.txt   one EvalReport per (score, OOD set)
    eval/hist_<score>_<ood>.csv     histogram export
    eval/metrics.csv                all metric rows
    eval/fig_<ood>.png              distribution figures
"""

import os
from dataclasses import replace

import numpy as np

from . import metrics as metrics_mod
from .centroids import (
    generate_iterative,
    generate_simplex,
    load_centroids,
    save_centroids,
)
from .config import subseed
from .data import LABEL_ID, LABEL_OOD, generate_synthetic, load_idx, split
from .errors import ConfigError, MalformedFileError
from .fusion import fit_fusion, fuse_score, load_fusion, save_fusion
from .model import NetworkModel, load_checkpoint
from .plots import plot_loss_curves, plot_score_histograms
from .scoring import (
    projector_from_weights,
    read_scores_csv,
    score_dataset,
    write_scores_csv,
)
from .train import train as train_loop

SCORE_FIELDS = {
    "S_gamma": "cos_gamma",
    "S_norm": "norm_fn",
    "S_alpha": "cos_alpha",
    "S_beta": "max_cos_beta",
    "baseline": "baseline_msp",
}
SCORE_NAMES = ("S_gamma", "S_norm", "S_alpha", "S_beta", "S_svm", "baseline")


def centroid_path(out_dir):
    return os.path.join(out_dir, "centroids.pdcc")


def build_centroids(config):
    spec = config.centroid_spec
    if spec.generator == "simplex":
        return generate_simplex(spec.class_count, spec.feature_dim)
    return generate_iterative(
        spec.class_count, spec.feature_dim,
        seed=subseed(config.seed, "centroids"),
        steps=spec.steps, step_size=spec.step_size,
    )


def gen_centroids(config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    cset = build_centroids(config)
    path = centroid_path(out_dir)
    save_centroids(cset, path)
    return path


def build_datasets(config):
    """All datasets keyed by reference name: id_train, id_test, ood_<name>."""
    if config.id_dataset.kind == "idx_images":
        images, labels = config.idx_paths["id"]
        full = load_idx(images, labels, name="id", role=LABEL_ID)
    else:
        full = generate_synthetic(config.id_dataset, name="id")
    frac = config.id_train_fraction
    id_train, id_test = split(
        full, (frac, 1.0 - frac), subseed(config.seed, "split")
    )
    id_train.name, id_test.name = "id_train", "id_test"
    out = {"id_train": id_train, "id_test": id_test}
    for name, spec in config.ood_datasets.items():
        if spec.kind == "idx_images":
            images, _ = config.idx_paths[name]
            out[f"ood_{name}"] = load_idx(
                images, None, name=f"ood_{name}", role=LABEL_OOD
            )
        else:
            out[f"ood_{name}"] = generate_synthetic(spec, name=f"ood_{name}")
    return out


def run_train(config, out_dir, datasets=None):
    """Train from the stored centroid file; writes checkpoints and report."""
    os.makedirs(out_dir, exist_ok=True)
    cpath = centroid_path(out_dir)
    if not os.path.exists(cpath):
        raise MalformedFileError(
            f"{cpath} not found; run gen-centroids into this directory first"
        )
    centroids = load_centroids(cpath)
    if datasets is None:
        datasets = build_datasets(config)
    id_train = datasets["id_train"]
    model = NetworkModel(config.network, centroids)
    report = train_loop(
        model, id_train.inputs, id_train.labels, config.loss,
        out_dir=out_dir, checkpoint_stem="model",
    )
    with open(os.path.join(out_dir, "train_report.csv"), "w") as fh:
        fh.write(report.to_csv())
    plot_loss_curves(report, os.path.join(out_dir, "train_report.png"))
    return model, report


def final_checkpoint_path(config, out_dir):
    return os.path.join(out_dir, f"model_epoch{config.network.epochs}.ckpt")


def run_score(config, out_dir, checkpoint, dataset_ref, datasets=None):
    """Score one dataset with a checkpointed model; writes scores_<ref>.csv."""
    os.makedirs(out_dir, exist_ok=True)
    if not os.path.exists(checkpoint):
        raise MalformedFileError(f"checkpoint {checkpoint} not found")
    model = load_checkpoint(checkpoint)
    if datasets is None:
        datasets = build_datasets(config)
    if dataset_ref not in datasets:
        raise ConfigError(
            f"unknown dataset reference {dataset_ref!r}; "
            f"expected one of {sorted(datasets)}"
        )
    dataset = datasets[dataset_ref]
    proj = projector_from_weights(
        model.fc1_weights, model.fc1_bias, config.scoring_bias_mode
    )
    records = score_dataset(
        model, proj, model.centroids, dataset.inputs,
        LABEL_ID if dataset.role == LABEL_ID else LABEL_OOD,
        config.loss.scale,
    )
    path = os.path.join(out_dir, f"scores_{dataset_ref}.csv")
    write_scores_csv(records, path)
    return path, records


def run_fuse(config, out_dir, id_scores_path, ref_scores_path):
    """Fit the fusion model from ID-train and the single reference OOD set."""
    os.makedirs(out_dir, exist_ok=True)
    id_records = read_scores_csv(id_scores_path)
    ref_records = read_scores_csv(ref_scores_path)
    if not id_records or not ref_records:
        raise MalformedFileError("fusion needs non-empty ID and reference score files")
    model = fit_fusion(
        id_records, ref_records, kind=config.fusion_kind,
        penalty_c=config.fusion_penalty_c,
        seed=subseed(config.seed, "fusion"),
    )
    path = os.path.join(out_dir, "fusion.pfus")
    save_fusion(model, path)
    return path, model


def _scores_by_name(records, fusion_model):
    out = {}
    for name, attr in SCORE_FIELDS.items():
        out[name] = np.array([getattr(r, attr) for r in records])
    out["S_svm"] = np.array([fuse_score(fusion_model, r) for r in records])
    return out


def run_eval(config, out_dir, fusion_path, id_scores_path, ood_scores_paths,
             make_figures=True):
    """EvalReports for every score name against every OOD score file."""
    eval_dir = os.path.join(out_dir, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    fusion_model = load_fusion(fusion_path)
    id_records = read_scores_csv(id_scores_path)
    if not id_records:
        raise MalformedFileError(f"{id_scores_path}: no ID score records")
    id_scores = _scores_by_name(id_records, fusion_model)

    reports = {}
    metric_rows = []
    for ood_path in ood_scores_paths:
        ood_records = read_scores_csv(ood_path)
        if not ood_records:
            raise MalformedFileError(f"{ood_path}: no OOD score records")
        ood_name = os.path.splitext(os.path.basename(ood_path))[0]
        if ood_name.startswith("scores_"):
            ood_name = ood_name[len("scores_"):]
        ood_scores = _scores_by_name(ood_records, fusion_model)
        per_score = {}
        for score_name in SCORE_NAMES:
            report = metrics_mod.evaluate(
                score_name, "id", ood_name,
                id_scores[score_name], ood_scores[score_name],
            )
            reports[(score_name, ood_name)] = report
            metric_rows.extend(report.metric_csv_rows())
            stem = f"{score_name}_{ood_name}"
            with open(os.path.join(eval_dir, f"report_{stem}.txt"), "w") as fh:
                fh.write(report.to_text())
            with open(os.path.join(eval_dir, f"hist_{stem}.csv"), "w") as fh:
                fh.write(report.histogram_csv())
            per_score[score_name] = (id_scores[score_name], ood_scores[score_name])
        if make_figures:
            plot_score_histograms(
                per_score, ood_name, os.path.join(eval_dir, f"fig_{ood_name}.png")
            )
    with open(os.path.join(eval_dir, "metrics.csv"), "w") as fh:
        fh.write("metric,id_dataset,ood_dataset,score_name,value\n")
        fh.write("\n".join(metric_rows) + "\n")
    return reports


def run_full(config, out_dir, make_figures=True):
    """gen-centroids, train, score everything, fuse on the reference OOD
    set, evaluate all OOD sets. Returns the eval report dict."""
    os.makedirs(out_dir, exist_ok=True)
    gen_centroids(config, out_dir)
    datasets = build_datasets(config)
    run_train(config, out_dir, datasets=datasets)
    checkpoint = final_checkpoint_path(config, out_dir)
    score_paths = {}
    for ref in datasets:
        path, _ = run_score(config, out_dir, checkpoint, ref, datasets=datasets)
        score_paths[ref] = path
    fusion_path, _ = run_fuse(
        config, out_dir, score_paths["id_train"],
        score_paths[f"ood_{config.reference_ood}"],
    )
    ood_paths = [score_paths[k] for k in sorted(score_paths) if k.startswith("ood_")]
    return run_eval(
        config, out_dir, fusion_path, score_paths["id_test"], ood_paths,
        make_figures=make_figures,
    )


def run_ablate(config, out_dir, axis, make_figures=False):
    """Comparative runs along one axis; returns {setting: report dict}.

    Writes ablate_<axis>.csv with one row per (setting, metric, score, OOD).
    """
    os.makedirs(out_dir, exist_ok=True)
    results = {}
    if axis == "bn_relu":
        for setting in ("on", "off"):
            sub = replace(
                config,
                network=replace(config.network, final_bn_relu=(setting == "on")),
            )
            sub_dir = os.path.join(out_dir, f"bn_relu_{setting}")
            reports = run_full(sub, sub_dir, make_figures=make_figures)
            results[setting] = {
                k: v for k, v in reports.items() if k[0] == "S_gamma"
            }
    elif axis == "bias_mode":
        for setting in ("exclude", "include-as-vector"):
            sub = replace(config, scoring_bias_mode=setting)
            sub_dir = os.path.join(out_dir, f"bias_{setting.replace('-', '_')}")
            reports = run_full(sub, sub_dir, make_figures=make_figures)
            results[setting] = {
                k: v for k, v in reports.items() if k[0] == "S_gamma"
            }
    elif axis == "fusion_kind":
        for setting in ("rbf_svm", "linear_svm", "logreg"):
            sub = replace(config, fusion_kind=setting)
            sub_dir = os.path.join(out_dir, f"fusion_{setting}")
            reports = run_full(sub, sub_dir, make_figures=make_figures)
            results[setting] = {
                k: v for k, v in reports.items() if k[0] == "S_svm"
            }
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}")

    rows = ["setting,metric,id_dataset,ood_dataset,score_name,value"]
    for setting, reports in results.items():
        for report in reports.values():
            rows.extend(f"{setting},{r}" for r in report.metric_csv_rows())
    with open(os.path.join(out_dir, f"ablate_{axis}.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return results
