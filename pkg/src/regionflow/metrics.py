"""Partition evaluation: intra-flow ratio, attribute inequality, cosine
similarity, join count ratio, and the combined score.

Inequality is only comparable after min-max normalization over a batch of
runs, so reports carry a raw value and get their normalized value (and the
combined score) filled in by `finalize_batch`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cluster import Partition
from .errors import ValidationError

_MU_CLAMP = 1e-6


@dataclass
class MetricsReport:
    name: str
    intra_flow_ratio: float
    inequality_raw: float
    cosine_similarity: float
    join_count_ratio: float
    inequality_norm: float | None = None  # unset until batch normalization
    synthetic_score: float | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "intra_flow_ratio": self.intra_flow_ratio,
            "inequality_raw": self.inequality_raw,
            "inequality_norm": self.inequality_norm,
            "cosine_similarity": self.cosine_similarity,
            "synthetic_score": self.synthetic_score,
            "join_count_ratio": self.join_count_ratio,
        }


def intra_flow_ratio(flows: np.ndarray, partition: Partition) -> float:
    """Fraction of total flow weight that stays inside communities.

    Ordered pairs including the diagonal; a self-flow is intra by definition.
    """
    flows = np.asarray(flows, dtype=np.float64)
    total = flows.sum()
    if total <= 0:
        raise ValidationError("intra_flow_ratio needs positive total flow")
    same = partition.labels[:, None] == partition.labels[None, :]
    return float(flows[same].sum() / total)


def inequality_raw(attributes: np.ndarray, partition: Partition) -> tuple[float, np.ndarray]:
    """Product over features of the median per-community heterogeneity.

    Per feature and community the statistic is sigma / sqrt(mu * (1 - mu))
    with the population standard deviation and mu clamped away from 0 and 1.
    Returns (product, per-feature medians).
    """
    attributes = np.asarray(attributes, dtype=np.float64)
    if np.any(attributes < 0) or np.any(attributes > 1):
        raise ValidationError("attributes must be scaled to [0, 1]")
    communities = partition.communities()
    medians = np.empty(attributes.shape[1])
    for feat in range(attributes.shape[1]):
        scores = []
        for members in communities:
            values = attributes[members, feat]
            mu = float(np.clip(values.mean(), _MU_CLAMP, 1.0 - _MU_CLAMP))
            sigma = float(values.std())  # population standard deviation
            scores.append(sigma / np.sqrt(mu * (1.0 - mu)))
        medians[feat] = np.median(scores)
    return float(np.prod(medians)), medians


def normalize_inequality(batch: list[float]) -> list[float]:
    """Min-max normalize raw inequality values over a batch of runs."""
    if len(batch) < 2:
        raise ValidationError("inequality normalization needs a batch of >= 2 runs")
    lo, hi = min(batch), max(batch)
    if hi == lo:
        raise ValidationError("inequality normalization undefined on a constant batch")
    return [(v - lo) / (hi - lo) for v in batch]


def cosine_within(attributes: np.ndarray, partition: Partition) -> float:
    """Median over communities of the median pairwise cosine similarity.

    Communities of size 1 are skipped; if every community is a singleton the
    statistic is undefined.
    """
    attributes = np.asarray(attributes, dtype=np.float64)
    norms = np.linalg.norm(attributes, axis=1)
    if np.any(norms == 0):
        raise ValidationError("cosine similarity undefined for all-zero attribute rows")
    unit = attributes / norms[:, None]
    community_medians = []
    for members in partition.communities():
        if len(members) < 2:
            continue
        sims = unit[members] @ unit[members].T
        iu, ju = np.triu_indices(len(members), k=1)
        community_medians.append(float(np.median(sims[iu, ju])))
    if not community_medians:
        raise ValidationError("cosine similarity undefined: every community has size 1")
    return float(np.median(community_medians))


def synthetic_score(intra_flow: float, cosine: float, inequality_norm: float) -> float:
    """Combined score: intra-flow ratio times cosine times (1 - normalized inequality)."""
    return intra_flow * cosine * (1.0 - inequality_norm)


def join_count_ratio(adjacency: np.ndarray, partition: Partition) -> float:
    """Fraction of adjacent node pairs whose endpoints share a community."""
    adjacency = np.asarray(adjacency)
    iu, ju = np.nonzero(np.triu(adjacency, k=1))
    if len(iu) == 0:
        raise ValidationError("join count ratio needs at least one edge")
    same = int(np.sum(partition.labels[iu] == partition.labels[ju]))
    return same / len(iu)


# ---------------------------------------------------------------------------
# reports


def evaluate_partition(network, partition: Partition, name: str) -> MetricsReport:
    """Raw metrics for one partition; batch-dependent fields stay unset."""
    return MetricsReport(
        name=name,
        intra_flow_ratio=intra_flow_ratio(network.flows, partition),
        inequality_raw=inequality_raw(network.attributes, partition)[0],
        cosine_similarity=cosine_within(network.attributes, partition),
        join_count_ratio=join_count_ratio(network.adjacency, partition),
    )


def finalize_batch(reports: list[MetricsReport]) -> list[MetricsReport]:
    """Fill normalized inequality and the combined score across a batch."""
    normed = normalize_inequality([r.inequality_raw for r in reports])
    for report, value in zip(reports, normed):
        report.inequality_norm = value
        report.synthetic_score = synthetic_score(report.intra_flow_ratio,
                                                 report.cosine_similarity, value)
    return reports


_CSV_FIELDS = ["name", "intra_flow_ratio", "inequality_raw", "inequality_norm",
               "cosine_similarity", "synthetic_score", "join_count_ratio"]


def reports_to_json(reports: list[MetricsReport]) -> str:
    return json.dumps({"runs": [r.to_dict() for r in reports]}, indent=2)


def write_reports(reports: list[MetricsReport], json_path=None, csv_path=None):
    if json_path is not None:
        Path(json_path).write_text(reports_to_json(reports), encoding="utf-8")
    if csv_path is not None:
        with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_FIELDS)
            for report in reports:
                row = report.to_dict()
                writer.writerow(["" if row[f] is None else row[f] for f in _CSV_FIELDS])
