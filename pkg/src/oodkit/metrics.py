"""Threshold classifier and ID/OOD separation statistics.

Scores follow the convention "higher means more in-distribution". AUROC is
the Mann-Whitney statistic with ties counted half; TNR@TPR picks the
largest threshold keeping the requested fraction of ID samples accepted.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class EvalReport:
    score_name: str
    id_dataset: str
    ood_dataset: str
    auroc: float
    tnr_at_tpr95: float
    tnr_at_tpr98: float
    tau95: float
    tau98: float
    n_id: int
    n_ood: int
    bin_edges: np.ndarray
    id_counts: np.ndarray
    ood_counts: np.ndarray

    def to_text(self):
        lines = [
            f"score_name: {self.score_name}",
            f"id_dataset: {self.id_dataset}",
            f"ood_dataset: {self.ood_dataset}",
            f"n_id: {self.n_id}",
            f"n_ood: {self.n_ood}",
            "auroc: %.9g" % self.auroc,
            "tnr_at_tpr95: %.9g" % self.tnr_at_tpr95,
            "tnr_at_tpr98: %.9g" % self.tnr_at_tpr98,
            "tau95: %.9g" % self.tau95,
            "tau98: %.9g" % self.tau98,
        ]
        return "\n".join(lines) + "\n"

    def metric_csv_rows(self):
        rows = []
        for metric, value in (
            ("auroc", self.auroc),
            ("tnr_at_tpr95", self.tnr_at_tpr95),
            ("tnr_at_tpr98", self.tnr_at_tpr98),
        ):
            rows.append(
                "%s,%s,%s,%s,%.9g"
                % (metric, self.id_dataset, self.ood_dataset, self.score_name, value)
            )
        return rows

    def histogram_csv(self):
        lines = ["bin_left,bin_right,id_count,ood_count"]
        for i in range(len(self.id_counts)):
            lines.append(
                "%.9g,%.9g,%d,%d"
                % (
                    self.bin_edges[i], self.bin_edges[i + 1],
                    self.id_counts[i], self.ood_counts[i],
                )
            )
        return "\n".join(lines) + "\n"


def classify(score, tau):
    """ID decision: score >= tau (the boundary counts as ID)."""
    return score >= tau


def auroc(id_scores, ood_scores):
    """Probability an ID score outranks an OOD score, ties counted half."""
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("auroc needs non-empty ID and OOD score lists")
    n_id, n_ood = id_scores.size, ood_scores.size
    ranks = rankdata(np.concatenate([id_scores, ood_scores]))
    rank_sum = ranks[:n_id].sum()
    u = rank_sum - n_id * (n_id + 1) / 2.0
    return float(u / (n_id * n_ood))


def tnr_at_tpr(id_scores, ood_scores, level):
    """True-negative rate on OOD at the threshold keeping `level` of ID.

    The threshold is the largest observed ID score tau with
    #{id >= tau} / n_id >= level. Returns (tnr, tau).
    """
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("tnr_at_tpr needs non-empty ID and OOD score lists")
    k = int(np.ceil(level * id_scores.size))
    k = min(max(k, 1), id_scores.size)
    tau = float(np.sort(id_scores)[::-1][k - 1])
    tnr = float(np.mean(ood_scores < tau))
    return tnr, tau


def histogram(scores, bins, value_range):
    """Fixed-range histogram; returns (counts, edges). Out-of-range scores
    are dropped, so counts sum to the number of in-range scores."""
    lo, hi = value_range
    if bins < 1 or not hi > lo:
        raise ValueError(f"invalid histogram spec: {bins} bins on [{lo}, {hi}]")
    scores = np.asarray(scores, dtype=np.float64)
    counts, edges = np.histogram(scores, bins=bins, range=(lo, hi))
    return counts, edges


def evaluate(score_name, id_dataset, ood_dataset, id_scores, ood_scores, bins=50):
    """Full EvalReport for one (score, OOD set) pair."""
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    tnr95, tau95 = tnr_at_tpr(id_scores, ood_scores, 0.95)
    tnr98, tau98 = tnr_at_tpr(id_scores, ood_scores, 0.98)
    lo = float(min(id_scores.min(), ood_scores.min()))
    hi = float(max(id_scores.max(), ood_scores.max()))
    if hi <= lo:
        hi = lo + 1.0
    id_counts, edges = histogram(id_scores, bins, (lo, hi))
    ood_counts, _ = histogram(ood_scores, bins, (lo, hi))
    return EvalReport(
        score_name=score_name,
        id_dataset=id_dataset,
        ood_dataset=ood_dataset,
        auroc=auroc(id_scores, ood_scores),
        tnr_at_tpr95=tnr95,
        tnr_at_tpr98=tnr98,
        tau95=tau95,
        tau98=tau98,
        n_id=int(id_scores.size),
        n_ood=int(ood_scores.size),
        bin_edges=edges,
        id_counts=id_counts,
        ood_counts=ood_counts,
    )
