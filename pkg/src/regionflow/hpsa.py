"""Simplified shortage-area scoring: per-community population-to-provider
ratios, designation flags, and delineation summaries.

Only the population:provider criterion drives designation; any extra
per-node criteria columns are carried through as population-weighted means
for reporting.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import Partition
from .errors import ConfigError, ValidationError

DEFAULT_RATIO_THRESHOLD = 3500.0


@dataclass
class CommunityHealthProfile:
    community: int
    population: float
    providers: float
    area_km2: float
    extra: dict[str, float] = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        """Population per provider; +inf when people exist but providers do not,
        0 for an empty community."""
        if self.providers > 0:
            return self.population / self.providers
        return math.inf if self.population > 0 else 0.0


@dataclass
class DelineationSummary:
    hpsa_count: int
    mean_ratio: float | None  # over designated communities with finite ratios
    infinite_ratio_count: int
    total_area_km2: float


def aggregate_profiles(partition: Partition, node_population, node_providers,
                       node_area, node_extra: dict[str, np.ndarray] | None = None,
                       ) -> list[CommunityHealthProfile]:
    """Sum per-node population, providers, and area into community profiles."""
    population = np.asarray(node_population, dtype=np.float64)
    providers = np.asarray(node_providers, dtype=np.float64)
    area = np.asarray(node_area, dtype=np.float64)
    n = partition.n
    for name, vec in (("population", population), ("providers", providers), ("area", area)):
        if len(vec) != n:
            raise ValidationError(f"{name} vector length {len(vec)} != {n} nodes")
        if np.any(vec < 0) or not np.all(np.isfinite(vec)):
            raise ValidationError(f"{name} values must be finite and >= 0")
    node_extra = node_extra or {}
    for name, vec in node_extra.items():
        if len(vec) != n:
            raise ValidationError(f"extra criterion {name!r} length {len(vec)} != {n}")
    profiles = []
    for c, members in enumerate(partition.communities(), start=1):
        pop = float(population[members].sum())
        extra = {}
        for name, vec in node_extra.items():
            values = np.asarray(vec, dtype=np.float64)[members]
            # population-weighted mean; plain mean when nobody lives there
            if pop > 0:
                extra[name] = float(np.sum(values * population[members]) / pop)
            else:
                extra[name] = float(values.mean())
        profiles.append(CommunityHealthProfile(
            community=c,
            population=pop,
            providers=float(providers[members].sum()),
            area_km2=float(area[members].sum()),
            extra=extra,
        ))
    return profiles


def designate(profiles: list[CommunityHealthProfile],
              ratio_threshold: float = DEFAULT_RATIO_THRESHOLD,
              ) -> tuple[list[bool], DelineationSummary]:
    """Flag communities whose population:provider ratio reaches the threshold."""
    if ratio_threshold <= 0:
        raise ConfigError("ratio_threshold must be > 0")
    flags = [p.ratio >= ratio_threshold for p in profiles]
    finite = [p.ratio for p, f in zip(profiles, flags) if f and math.isfinite(p.ratio)]
    infinite = sum(1 for p, f in zip(profiles, flags) if f and math.isinf(p.ratio))
    summary = DelineationSummary(
        hpsa_count=sum(flags),
        mean_ratio=float(np.mean(finite)) if finite else None,
        infinite_ratio_count=infinite,
        total_area_km2=float(sum(p.area_km2 for p, f in zip(profiles, flags) if f)),
    )
    return flags, summary


def load_health_csv(path, node_ids: list[str]):
    """Read id,population,providers,area_km2[,<extras...>] ordered to node_ids."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"health file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or [h.strip() for h in header[:4]] != ["id", "population",
                                                             "providers", "area_km2"]:
            raise ValidationError(
                f"{path}: header must start with 'id,population,providers,area_km2'")
        extra_names = [h.strip() for h in header[4:]]
        rows: dict[str, list[float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path} line {lineno}: expected {len(header)} columns")
            try:
                rows[row[0].strip()] = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ValidationError(f"{path} line {lineno}: non-numeric cell") from exc
    missing = [nid for nid in node_ids if nid not in rows]
    if missing:
        raise ValidationError(f"{path}: missing rows for nodes {missing[:5]}")
    data = np.array([rows[nid] for nid in node_ids], dtype=np.float64)
    extra = {name: data[:, 3 + k] for k, name in enumerate(extra_names)}
    return data[:, 0], data[:, 1], data[:, 2], extra


def report_json(profiles: list[CommunityHealthProfile], flags: list[bool],
                summary: DelineationSummary, ratio_threshold: float) -> str:
    communities = []
    for profile, designated in zip(profiles, flags):
        ratio = profile.ratio
        communities.append({
            "community": profile.community,
            "population": profile.population,
            "providers": profile.providers,
            "area_km2": profile.area_km2,
            "ratio": None if math.isinf(ratio) else ratio,
            "infinite_ratio": math.isinf(ratio),
            "designated": designated,
            "extra": profile.extra,
        })
    doc = {
        "communities": communities,
        "summary": {
            "hpsa_count": summary.hpsa_count,
            "mean_ratio": summary.mean_ratio,
            "infinite_ratio_count": summary.infinite_ratio_count,
            "total_area_km2": summary.total_area_km2,
            "ratio_threshold": ratio_threshold,
        },
    }
    return json.dumps(doc, indent=2)
