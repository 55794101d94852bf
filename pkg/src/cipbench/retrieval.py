"""Retrieval evaluation: cosine ranking, IR metrics, and geometry reports.

Rankings are leave-one-out: every descriptor queries all the others, and a
gallery item is relevant iff it carries the query's label.  Metric
conventions pinned here (the upstream benchmarks leave them to their
citations):

* average precision = mean of precision at each relevant rank;
* PR-AUC = trapezoidal area under the precision-recall points sampled at
  every rank, anchored at (recall 0, precision 1);
* NDCG uses binary gains rel_i / log2(i + 1);
* F1 cutoff defaults to the number of relevant items for the query.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import CenterlineBank
from .vectors import mean_pool

__all__ = [
    "EvalSummary",
    "GeometryReport",
    "MetricsReport",
    "RetrievalRun",
    "aggregate",
    "average_precision",
    "evaluate_run",
    "f1_at",
    "geometry_report",
    "ndcg",
    "pool_descriptors",
    "pr_auc",
    "rank",
]


# ---------------------------------------------------------------------------
# ranking
# ---------------------------------------------------------------------------


@dataclass
class RetrievalRun:
    """Per-query ordered gallery indices with binary relevance flags."""

    query_indices: np.ndarray  # descriptor indices that served as queries
    query_labels: np.ndarray
    gallery_labels: np.ndarray
    rankings: list[np.ndarray]  # per query: gallery indices, best first
    relevance: list[np.ndarray]  # aligned 0/1 flags
    excluded: list[int] = field(default_factory=list)  # zero-norm descriptors

    @property
    def num_queries(self) -> int:
        return len(self.rankings)


def pool_descriptors(features: np.ndarray, object_ids: np.ndarray, labels: np.ndarray):
    """Mean-pool per-view features into per-object descriptors.

    Returns (descriptors, object_labels, unique_object_ids), ordered by
    first appearance of each object.
    """
    object_ids = np.asarray(object_ids)
    uniq, first = np.unique(object_ids, return_index=True)
    order = uniq[np.argsort(first)]
    descs, obj_labels = [], []
    for oid in order:
        mask = object_ids == oid
        descs.append(mean_pool(list(np.asarray(features)[mask])).components)
        obj_labels.append(int(np.asarray(labels)[mask][0]))
    return np.stack(descs), np.array(obj_labels, dtype=np.int64), order


def rank(descriptors: np.ndarray, labels: np.ndarray) -> RetrievalRun:
    """Leave-one-out cosine ranking over one descriptor set.

    Every descriptor queries the remaining ones, ordered by ascending cosine
    distance with ties broken by ascending gallery index.  Zero-norm
    descriptors cannot be ranked; they are excluded with a warning and
    recorded in ``excluded``.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if descriptors.ndim != 2 or labels.shape != (descriptors.shape[0],):
        raise ValueError("need (N, n) descriptors with aligned labels")
    norms = np.linalg.norm(descriptors, axis=1)
    excluded = [int(i) for i in np.flatnonzero(norms == 0.0)]
    if excluded:
        warnings.warn(
            f"excluding {len(excluded)} zero-norm descriptor(s) from retrieval: {excluded}"
        )
    keep = np.flatnonzero(norms > 0.0)
    if keep.size < 2:
        raise ValueError("need at least two nonzero descriptors to rank")
    unit = descriptors[keep] / norms[keep, None]
    dist = 1.0 - unit @ unit.T
    rankings, rels = [], []
    for qi in range(keep.size):
        others = np.delete(np.arange(keep.size), qi)
        # stable sort on an index-ordered array implements the tie rule
        order = others[np.argsort(dist[qi, others], kind="stable")]
        gallery = keep[order]
        rankings.append(gallery)
        rels.append((labels[gallery] == labels[keep[qi]]).astype(np.int64))
    return RetrievalRun(
        query_indices=keep.copy(),
        query_labels=labels[keep],
        gallery_labels=labels,
        rankings=rankings,
        relevance=rels,
        excluded=excluded,
    )


# ---------------------------------------------------------------------------
# per-ranking metrics (binary relevance arrays, best rank first)
# ---------------------------------------------------------------------------


def _rel_array(relevance) -> np.ndarray:
    r = np.asarray(relevance)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("relevance must be a non-empty 1-D array")
    return (r != 0).astype(np.float64)


def average_precision(relevance) -> float:
    """Mean of precision at each relevant rank.

    >>> round(average_precision([1, 0, 1]), 5)
    0.83333
    """
    r = _rel_array(relevance)
    if r.sum() == 0:
        raise ValueError("average precision undefined with no relevant items")
    hits = np.cumsum(r)
    ranks = np.arange(1, r.size + 1)
    return float(np.mean((hits / ranks)[r > 0]))


def pr_auc(relevance) -> float:
    """Trapezoidal area under the rank-sampled precision-recall curve."""
    r = _rel_array(relevance)
    total = r.sum()
    if total == 0:
        raise ValueError("PR-AUC undefined with no relevant items")
    hits = np.cumsum(r)
    recall = np.concatenate([[0.0], hits / total])
    precision = np.concatenate([[1.0], hits / np.arange(1, r.size + 1)])
    return float(np.sum(np.diff(recall) * (precision[:-1] + precision[1:]) / 2.0))


def ndcg(relevance, cutoff: int | None = None) -> float:
    """Binary-gain NDCG at ``cutoff`` (full length when omitted).

    >>> round(ndcg([1, 0, 1]), 5)
    0.91972
    """
    r = _rel_array(relevance)
    if cutoff is None:
        cutoff = r.size
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    discounts = np.log2(np.arange(2, min(cutoff, r.size) + 2))
    gain = float(np.sum(r[:cutoff] / discounts))
    ideal_r = np.sort(r)[::-1]
    ideal = float(np.sum(ideal_r[:cutoff] / discounts))
    return gain / ideal if ideal > 0 else 0.0


def f1_at(relevance, cutoff: int | None = None) -> float:
    """Harmonic mean of precision and recall at ``cutoff``.

    The default cutoff is min(length, number of relevant items), so a
    perfect ranking scores exactly 1.
    """
    r = _rel_array(relevance)
    total = r.sum()
    if cutoff is None:
        cutoff = int(min(r.size, max(total, 1)))
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    hits = float(r[:cutoff].sum())
    precision = hits / cutoff
    recall = hits / total if total > 0 else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    map: float
    pr_auc: float
    f1: float
    ndcg: float
    aggregation: str

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "pr_auc": self.pr_auc,
            "f1": self.f1,
            "ndcg": self.ndcg,
            "aggregation": self.aggregation,
        }


def aggregate(per_query_metrics: dict, labels, mode: str) -> MetricsReport:
    """Micro (mean over queries) or macro (mean of per-class means) rollup."""
    if mode not in ("micro", "macro"):
        raise ValueError(f"aggregation mode must be micro or macro, got {mode!r}")
    labels = np.asarray(labels)
    values = {k: np.asarray(v, dtype=np.float64) for k, v in per_query_metrics.items()}
    for k, v in values.items():
        if v.shape != labels.shape:
            raise ValueError(f"metric {k!r} not aligned with labels")
    if labels.size == 0:
        raise ValueError("nothing to aggregate")

    def roll(v: np.ndarray) -> float:
        if mode == "micro":
            return float(np.mean(v))
        return float(np.mean([np.mean(v[labels == c]) for c in np.unique(labels)]))

    return MetricsReport(
        map=roll(values["map"]),
        pr_auc=roll(values["pr_auc"]),
        f1=roll(values["f1"]),
        ndcg=roll(values["ndcg"]),
        aggregation=mode,
    )


@dataclass
class EvalSummary:
    micro: MetricsReport
    macro: MetricsReport
    total_queries: int
    skipped_queries: int  # queries with no relevant gallery item

    def to_dict(self) -> dict:
        return {
            "micro": self.micro.to_dict(),
            "macro": self.macro.to_dict(),
            "total_queries": self.total_queries,
            "skipped_queries": self.skipped_queries,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def save_csv(self, path) -> None:
        """One row per aggregation mode, for spreadsheet-style consumers."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["aggregation", "map", "pr_auc", "f1", "ndcg",
                             "total_queries", "skipped_queries"])
            for report in (self.micro, self.macro):
                writer.writerow([
                    report.aggregation,
                    *(format(v, ".10g") for v in (report.map, report.pr_auc, report.f1, report.ndcg)),
                    self.total_queries, self.skipped_queries,
                ])


def evaluate_run(
    run: RetrievalRun,
    f1_cutoff: int | None = None,
    ndcg_cutoff: int | None = None,
) -> EvalSummary:
    """Score every query and aggregate both micro and macro reports."""
    per = {"map": [], "pr_auc": [], "f1": [], "ndcg": []}
    kept_labels = []
    skipped = 0
    for rel, qlabel in zip(run.relevance, run.query_labels):
        if np.asarray(rel).sum() == 0:
            skipped += 1
            continue
        per["map"].append(average_precision(rel))
        per["pr_auc"].append(pr_auc(rel))
        per["f1"].append(f1_at(rel, f1_cutoff))
        per["ndcg"].append(ndcg(rel, ndcg_cutoff))
        kept_labels.append(qlabel)
    if not kept_labels:
        raise ValueError("no query had any relevant gallery item")
    return EvalSummary(
        micro=aggregate(per, kept_labels, "micro"),
        macro=aggregate(per, kept_labels, "macro"),
        total_queries=run.num_queries,
        skipped_queries=skipped,
    )


# ---------------------------------------------------------------------------
# embedding geometry
# ---------------------------------------------------------------------------


@dataclass
class GeometryReport:
    """How close the embedding sits to the target one-line-per-class layout."""

    centerline_cosines: np.ndarray  # (K, K), unit-direction inner products
    own_cosine_mean: np.ndarray  # (K,) mean cos(feature, own centerline)
    own_cosine_min: np.ndarray  # (K,)
    max_cross_inner: float  # max feature . other-class centerline
    norm_mean: np.ndarray  # (K,) feature norm statistics per class
    norm_min: np.ndarray
    norm_max: np.ndarray

    @property
    def max_pairwise_centerline_cosine(self) -> float:
        k = self.centerline_cosines.shape[0]
        off = ~np.eye(k, dtype=bool)
        return float(self.centerline_cosines[off].max())

    @property
    def mean_own_cosine(self) -> float:
        return float(np.mean(self.own_cosine_mean))

    def to_dict(self) -> dict:
        return {
            "centerline_cosines": self.centerline_cosines.tolist(),
            "own_cosine_mean": self.own_cosine_mean.tolist(),
            "own_cosine_min": self.own_cosine_min.tolist(),
            "max_cross_inner": self.max_cross_inner,
            "norm_mean": self.norm_mean.tolist(),
            "norm_min": self.norm_min.tolist(),
            "norm_max": self.norm_max.tolist(),
            "max_pairwise_centerline_cosine": self.max_pairwise_centerline_cosine,
            "mean_own_cosine": self.mean_own_cosine,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def save_cosine_csv(self, path) -> None:
        """K x K centerline cosine matrix as CSV for external plotting."""
        k = self.centerline_cosines.shape[0]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class"] + [str(i) for i in range(1, k + 1)])
            for i in range(k):
                writer.writerow([str(i + 1)] + [format(v, ".10g") for v in self.centerline_cosines[i]])


def _safe_unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


def geometry_report(features: np.ndarray, labels, bank: CenterlineBank) -> GeometryReport:
    """Measure centerline separation and per-class feature alignment.

    Zero-norm features contribute an own-cosine of 0 (they lie on no line).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise ValueError("need (N, n) features with aligned labels")
    k = bank.num_classes
    if labels.min() < 1 or labels.max() > k:
        raise ValueError(f"labels must lie in [1, {k}]")

    units = np.stack([_safe_unit(c) for c in bank.centers])
    cosines = units @ units.T

    fnorm = np.linalg.norm(features, axis=1)
    funit = np.where(fnorm[:, None] > 0, features / np.maximum(fnorm, 1e-300)[:, None], 0.0)
    own_cos = np.einsum("ij,ij->i", funit, units[labels - 1])

    own_mean = np.zeros(k)
    own_min = np.zeros(k)
    nmean, nmin, nmax = np.zeros(k), np.zeros(k), np.zeros(k)
    for idx in range(k):
        members = labels == idx + 1
        if members.any():
            own_mean[idx] = own_cos[members].mean()
            own_min[idx] = own_cos[members].min()
            nmean[idx] = fnorm[members].mean()
            nmin[idx] = fnorm[members].min()
            nmax[idx] = fnorm[members].max()

    inner = features @ bank.centers.T
    cross = np.ones_like(inner, dtype=bool)
    cross[np.arange(features.shape[0]), labels - 1] = False
    return GeometryReport(
        centerline_cosines=cosines,
        own_cosine_mean=own_mean,
        own_cosine_min=own_min,
        max_cross_inner=float(inner[cross].max()),
        norm_mean=nmean,
        norm_min=nmin,
        norm_max=nmax,
    )
