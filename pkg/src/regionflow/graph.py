"""Spatial network assembly: geometries, contiguity, flows, attributes, hop counts.

A network bundles an ordered node list with a binary geographic adjacency
matrix, a symmetric non-negative flow matrix, a min-max scaled attribute
matrix, and (optionally) one polygon per node. All matrices share the node
order. Instances are frozen after construction and safe to share across
threads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError

# Sentinel for node pairs with no connecting path in the adjacency graph.
UNREACHABLE = -1

# Polygons are stored MultiPolygon-style: list of parts, each part a list of
# rings, each ring a list of (x, y) tuples. GeoJSON Polygon inputs become a
# single-part entry.
Polygon = list


@dataclass(frozen=True)
class FeatureScale:
    """Original (min, max) of one attribute column before scaling to [0, 1]."""

    name: str
    vmin: float
    vmax: float
    constant: bool = False

    def to_dict(self) -> dict:
        return {"name": self.name, "min": self.vmin, "max": self.vmax,
                "constant": self.constant}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScale":
        return cls(d["name"], d["min"], d["max"], bool(d.get("constant", False)))


@dataclass
class SpatialNetwork:
    node_ids: list[str]
    adjacency: np.ndarray
    flows: np.ndarray
    attributes: np.ndarray
    geometries: list[Polygon] | None = None
    feature_names: list[str] | None = None
    scaling: list[FeatureScale] | None = None
    contiguity: str = "rook"

    def __post_init__(self):
        self.node_ids = [str(i) for i in self.node_ids]
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            raise ValidationError("node ids must be unique")
        self.adjacency = np.asarray(self.adjacency, dtype=np.int64).copy()
        self.flows = np.asarray(self.flows, dtype=np.float64).copy()
        self.attributes = np.asarray(self.attributes, dtype=np.float64).copy()
        if self.adjacency.shape != (n, n):
            raise ValidationError(f"adjacency must be {n}x{n}, got {self.adjacency.shape}")
        if not np.array_equal(self.adjacency, self.adjacency.T):
            raise ValidationError("adjacency must be symmetric")
        if not np.all((self.adjacency == 0) | (self.adjacency == 1)):
            raise ValidationError("adjacency must be binary")
        if np.any(np.diag(self.adjacency) != 0):
            raise ValidationError("adjacency diagonal must be zero")
        if self.flows.shape != (n, n):
            raise ValidationError(f"flows must be {n}x{n}, got {self.flows.shape}")
        if not np.all(np.isfinite(self.flows)):
            raise ValidationError("flows must be finite")
        if np.any(self.flows < 0):
            raise ValidationError("flows must be non-negative")
        if not np.array_equal(self.flows, self.flows.T):
            raise ValidationError("flows must be symmetric after assembly")
        if self.attributes.ndim != 2 or self.attributes.shape[0] != n:
            raise ValidationError(f"attributes must have {n} rows")
        if not np.all(np.isfinite(self.attributes)):
            raise ValidationError("attributes must be finite")
        if np.any(self.attributes < 0.0) or np.any(self.attributes > 1.0):
            raise ValidationError("attributes must lie in [0, 1]; scale them first")
        if self.geometries is not None and len(self.geometries) != n:
            raise ValidationError("one geometry per node required")
        if self.feature_names is not None and len(self.feature_names) != self.attributes.shape[1]:
            raise ValidationError("feature_names length must match attribute columns")
        for arr in (self.adjacency, self.flows, self.attributes):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def m(self) -> int:
        return self.attributes.shape[1]

    def index_of(self, node_id: str) -> int:
        return self.node_ids.index(node_id)


@dataclass
class HopMatrix:
    """Shortest-path hop counts; UNREACHABLE marks disconnected pairs."""

    hops: np.ndarray

    def reachable(self, i: int, j: int) -> bool:
        return self.hops[i, j] != UNREACHABLE


# ---------------------------------------------------------------------------
# geometry


def load_geometries(path) -> tuple[list[str], list[Polygon]]:
    """Parse a GeoJSON FeatureCollection into (ids, polygons) in file order.

    Every feature needs a string "id" property and a Polygon or MultiPolygon
    geometry. Duplicate ids, missing ids, non-areal geometries, and malformed
    JSON are rejected with the offending feature index in the message.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"geometry file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed GeoJSON in {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ValidationError(f"{path}: expected a GeoJSON FeatureCollection")
    ids: list[str] = []
    polys: list[Polygon] = []
    for idx, feature in enumerate(doc.get("features", [])):
        props = feature.get("properties") or {}
        fid = props.get("id")
        if not isinstance(fid, str):
            raise ValidationError(f"feature {idx}: missing string property 'id'")
        geom = feature.get("geometry") or {}
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            parts = [coords]
        elif gtype == "MultiPolygon":
            parts = coords
        else:
            raise ValidationError(f"feature {idx} ({fid!r}): geometry must be "
                                  f"Polygon or MultiPolygon, got {gtype!r}")
        try:
            poly = [[[(float(x), float(y)) for x, y in ring] for ring in part]
                    for part in parts]
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"feature {idx} ({fid!r}): bad coordinates: {exc}") from exc
        if fid in ids:
            raise ValidationError(f"feature {idx}: duplicate id {fid!r}")
        ids.append(fid)
        polys.append(poly)
    return ids, polys


def _ring_vertices(ring):
    """Ring vertices with the closing duplicate dropped."""
    if len(ring) > 1 and ring[0] == ring[-1]:
        return ring[:-1]
    return list(ring)


def _ring_area(ring) -> float:
    pts = _ring_vertices(ring)
    if len(pts) < 3:
        return 0.0
    area = 0.0
    for (x1, y1), (x2, y2) in zip(pts, pts[1:] + pts[:1]):
        area += x1 * y2 - x2 * y1
    return abs(area) / 2.0


def polygon_area(poly: Polygon) -> float:
    """Sum of exterior-ring areas over all parts (holes ignored)."""
    return sum(_ring_area(part[0]) for part in poly if part)


def derive_adjacency(geometries: list[Polygon], rule: str = "rook",
                     tolerance: float = 0.0) -> np.ndarray:
    """Contiguity matrix from shared boundaries.

    Vertices are snapped to a grid of spacing `tolerance` (0 = exact match).
    rook: two polygons share a whole snapped boundary segment.
    queen: two polygons share at least one snapped vertex.
    """
    if rule not in ("rook", "queen"):
        raise ConfigError(f"contiguity rule must be 'rook' or 'queen', got {rule!r}")
    if tolerance < 0:
        raise ConfigError("tolerance must be >= 0")
    if not geometries:
        raise ValidationError("at least one polygon required")

    def snap(pt):
        if tolerance == 0:
            return pt
        return (round(pt[0] / tolerance), round(pt[1] / tolerance))

    n = len(geometries)
    vertex_owners: dict = {}
    edge_owners: dict = {}
    for idx, poly in enumerate(geometries):
        if polygon_area(poly) == 0.0:
            raise ValidationError(f"polygon {idx} is degenerate (zero area)")
        verts = set()
        edges = set()
        for part in poly:
            for ring in part:
                pts = [snap(p) for p in _ring_vertices(ring)]
                verts.update(pts)
                for a, b in zip(pts, pts[1:] + pts[:1]):
                    if a != b:
                        edges.add((a, b) if a <= b else (b, a))
        for v in verts:
            vertex_owners.setdefault(v, []).append(idx)
        for e in edges:
            edge_owners.setdefault(e, []).append(idx)

    adjacency = np.zeros((n, n), dtype=np.int64)
    owners = edge_owners if rule == "rook" else vertex_owners
    for members in owners.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = members[a], members[b]
                adjacency[i, j] = 1
                adjacency[j, i] = 1
    return adjacency


# ---------------------------------------------------------------------------
# hops


def compute_hops(adjacency: np.ndarray) -> HopMatrix:
    """Breadth-first shortest hop counts from every node."""
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    hops = np.full((n, n), UNREACHABLE, dtype=np.int64)
    for src in range(n):
        visited = np.zeros(n, dtype=bool)
        frontier = np.zeros(n, dtype=bool)
        frontier[src] = True
        visited[src] = True
        hops[src, src] = 0
        depth = 0
        while frontier.any():
            reached = adj[frontier].any(axis=0) & ~visited
            depth += 1
            hops[src, reached] = depth
            visited |= reached
            frontier = reached
    return HopMatrix(hops=hops)


def connected_components(adjacency: np.ndarray) -> np.ndarray:
    """Component index (0-based) per node."""
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    comp = np.full(n, -1, dtype=np.int64)
    current = 0
    for start in range(n):
        if comp[start] >= 0:
            continue
        frontier = np.zeros(n, dtype=bool)
        frontier[start] = True
        comp[start] = current
        while frontier.any():
            reached = adj[frontier].any(axis=0) & (comp < 0)
            comp[reached] = current
            frontier = reached
        current += 1
    return comp


# ---------------------------------------------------------------------------
# flows


def load_flows(path, node_ids: list[str], symmetrize: bool = True) -> np.ndarray:
    """Read an origin-destination CSV into an n x n flow matrix.

    Header must be origin,destination,weight. Duplicate (origin, destination)
    rows are summed. With symmetrize, S <- S + S^T is applied once with the
    diagonal kept as given. Unknown ids and negative weights raise a
    validation error carrying the 1-based file line number.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"flows file not found: {path}")
    index = {nid: k for k, nid in enumerate(node_ids)}
    n = len(node_ids)
    flows = np.zeros((n, n), dtype=np.float64)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["origin", "destination", "weight"]:
            raise ValidationError(f"{path}: header must be 'origin,destination,weight'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path} line {lineno}: expected 3 columns")
            origin, dest, raw = row[0].strip(), row[1].strip(), row[2].strip()
            if origin not in index:
                raise ValidationError(f"{path} line {lineno}: unknown origin id {origin!r}")
            if dest not in index:
                raise ValidationError(f"{path} line {lineno}: unknown destination id {dest!r}")
            try:
                weight = float(raw)
            except ValueError as exc:
                raise ValidationError(f"{path} line {lineno}: non-numeric weight {raw!r}") from exc
            if not math.isfinite(weight) or weight < 0:
                raise ValidationError(f"{path} line {lineno}: weight must be finite and >= 0")
            flows[index[origin], index[dest]] += weight
    if symmetrize:
        diag = np.diag(flows).copy()
        flows = flows + flows.T
        np.fill_diagonal(flows, diag)
    return flows


# ---------------------------------------------------------------------------
# attributes


def minmax_scale(values: np.ndarray, names: list[str]) -> tuple[np.ndarray, list[FeatureScale]]:
    """Scale each column to [0, 1]; constant columns map to 0.5 and are flagged."""
    values = np.asarray(values, dtype=np.float64)
    scaled = np.empty_like(values)
    scales = []
    for col, name in enumerate(names):
        vmin = float(values[:, col].min())
        vmax = float(values[:, col].max())
        if vmax == vmin:
            scaled[:, col] = 0.5
            scales.append(FeatureScale(name, vmin, vmax, constant=True))
        else:
            scaled[:, col] = (values[:, col] - vmin) / (vmax - vmin)
            scales.append(FeatureScale(name, vmin, vmax))
    return scaled, scales


def load_attributes(path, node_ids: list[str]) -> tuple[np.ndarray, list[FeatureScale]]:
    """Read an id,<features...> CSV, reorder to node_ids, min-max scale per feature."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"attributes file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "id" or len(header) < 2:
            raise ValidationError(f"{path}: header must be 'id,<feature names...>'")
        names = [h.strip() for h in header[1:]]
        rows: dict[str, list[float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path} line {lineno}: expected {len(header)} columns")
            nid = row[0].strip()
            if nid in rows:
                raise ValidationError(f"{path} line {lineno}: duplicate id {nid!r}")
            try:
                rows[nid] = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise ValidationError(f"{path} line {lineno}: non-numeric cell") from exc
    missing = [nid for nid in node_ids if nid not in rows]
    if missing:
        raise ValidationError(f"{path}: missing attribute rows for nodes {missing[:5]}")
    unknown = set(rows) - set(node_ids)
    if unknown:
        raise ValidationError(f"{path}: rows for unknown nodes {sorted(unknown)[:5]}")
    raw = np.array([rows[nid] for nid in node_ids], dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValidationError(f"{path}: attributes must be finite")
    return minmax_scale(raw, names)


# ---------------------------------------------------------------------------
# network directory serialization


def geometries_to_geojson(node_ids: list[str], geometries: list[Polygon]) -> dict:
    features = []
    for nid, poly in zip(node_ids, geometries):
        coords = [[[list(pt) for pt in ring] for ring in part] for part in poly]
        features.append({
            "type": "Feature",
            "properties": {"id": nid},
            "geometry": {"type": "MultiPolygon", "coordinates": coords},
        })
    return {"type": "FeatureCollection", "features": features}


def save_network(network: SpatialNetwork, outdir) -> Path:
    """Write nodes.csv, adjacency.csv, flows.csv, attributes.csv, meta.json
    (and cells.geojson when geometries are present) into `outdir`."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with (outdir / "nodes.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id"])
        for nid in network.node_ids:
            writer.writerow([nid])
    with (outdir / "adjacency.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j"])
        ii, jj = np.nonzero(np.triu(network.adjacency, k=1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            writer.writerow([i, j])
    with (outdir / "flows.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["origin", "destination", "weight"])
        ii, jj = np.nonzero(network.flows)
        for i, j in zip(ii.tolist(), jj.tolist()):
            writer.writerow([network.node_ids[i], network.node_ids[j],
                             repr(float(network.flows[i, j]))])
    names = network.feature_names or [f"f{k}" for k in range(network.m)]
    with (outdir / "attributes.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + names)
        for i, nid in enumerate(network.node_ids):
            writer.writerow([nid] + [repr(float(v)) for v in network.attributes[i]])
    meta = {
        "n": network.n,
        "m": network.m,
        "feature_names": names,
        "scaling": [s.to_dict() for s in (network.scaling or [])],
        "contiguity": network.contiguity,
    }
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True),
                                      encoding="utf-8")
    if network.geometries is not None:
        doc = geometries_to_geojson(network.node_ids, network.geometries)
        (outdir / "cells.geojson").write_text(json.dumps(doc), encoding="utf-8")
    return outdir


def load_network(directory) -> SpatialNetwork:
    """Load a network directory written by save_network."""
    directory = Path(directory)
    for required in ("nodes.csv", "adjacency.csv", "flows.csv", "attributes.csv"):
        if not (directory / required).exists():
            raise ValidationError(f"network file not found: {directory / required}")
    with (directory / "nodes.csv").open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["node_id"]:
            raise ValidationError(f"{directory}/nodes.csv: header must be 'node_id'")
        node_ids = [row[0] for row in reader if row]
    n = len(node_ids)
    adjacency = np.zeros((n, n), dtype=np.int64)
    with (directory / "adjacency.csv").open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            i, j = int(row[0]), int(row[1])
            adjacency[i, j] = 1
            adjacency[j, i] = 1
    # flows.csv stores every ordered non-zero pair, so no symmetrization here
    flows = load_flows(directory / "flows.csv", node_ids, symmetrize=False)
    with (directory / "attributes.csv").open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        names = [h.strip() for h in header[1:]]
        rows = {row[0]: [float(c) for c in row[1:]] for row in reader if row}
    attributes = np.array([rows[nid] for nid in node_ids], dtype=np.float64)
    meta_path = directory / "meta.json"
    contiguity = "rook"
    scaling = None
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        contiguity = meta.get("contiguity", "rook")
        names = meta.get("feature_names", names)
        scaling = [FeatureScale.from_dict(d) for d in meta.get("scaling", [])] or None
    geometries = None
    cells = directory / "cells.geojson"
    if cells.exists():
        geo_ids, geometries = load_geometries(cells)
        if geo_ids != node_ids:
            raise ValidationError(f"{cells}: geometry ids do not match nodes.csv order")
    return SpatialNetwork(node_ids=node_ids, adjacency=adjacency, flows=flows,
                          attributes=attributes, geometries=geometries,
                          feature_names=names, scaling=scaling, contiguity=contiguity)


def assemble_network(geojson_path, flows_path, attributes_path,
                     rule: str = "rook", tolerance: float = 0.0,
                     symmetrize: bool = True) -> SpatialNetwork:
    """Build a SpatialNetwork from the three raw input files."""
    node_ids, geometries = load_geometries(geojson_path)
    adjacency = derive_adjacency(geometries, rule=rule, tolerance=tolerance)
    flows = load_flows(flows_path, node_ids, symmetrize=symmetrize)
    attributes, scaling = load_attributes(attributes_path, node_ids)
    return SpatialNetwork(node_ids=node_ids, adjacency=adjacency, flows=flows,
                          attributes=attributes, geometries=geometries,
                          feature_names=[s.name for s in scaling],
                          scaling=scaling, contiguity=rule)
