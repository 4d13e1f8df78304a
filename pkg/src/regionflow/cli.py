"""Command-line pipeline driver.

Subcommands: synth, graph build, embed, cluster, baseline
{louvain|kmeans|node2vec|deepwalk}, detect, sweep, metrics, hpsa, render.
Exit codes: 0 success, 1 usage error, 2 data validation error, 3 numerical
failure (non-finite loss, infeasible community count). Validation always
happens before any file is written. REGIONFLOW_THREADS caps internal
parallelism; --seed is accepted by every stochastic subcommand.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, baselines, embedding, hpsa, metrics, render, synth
from .cluster import Partition, constrained_agglomerative, kmeans, load_partition, \
    save_partition
from .errors import ConfigError, InfeasibleError, NumericalError, TrainingError, \
    UsageError, ValidationError
from .graph import SpatialNetwork, assemble_network, load_geometries, load_network, \
    save_network

THREADS_ENV = "REGIONFLOW_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract here reserves 2 for
    # data validation, so route usage problems through UsageError instead.
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# config files: flat key = value lines (or a flat JSON object); CLI flags win


def _coerce(raw: str):
    text = raw.strip()
    low = text.lower()
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed JSON config: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError(f"{path}: config must be a flat object")
        return {str(k).replace("-", "_"): v for k, v in doc.items()}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path} line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = _coerce(value)
    return values


def _known_dests(parser: argparse.ArgumentParser) -> set[str]:
    dests = set()
    for action in parser._actions:
        dests.add(action.dest)
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                dests |= _known_dests(child)
    return dests


def _apply_config_defaults(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Fold --config file values in as parser defaults (flags still override)."""
    path = None
    rest = []
    skip = False
    for idx, token in enumerate(argv):
        if skip:
            skip = False
            continue
        if token == "--config":
            if idx + 1 >= len(argv):
                raise UsageError("--config requires a file path")
            path = argv[idx + 1]
            skip = True
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
        else:
            rest.append(token)
    if path is None:
        return argv
    values = load_config_file(path)
    unknown = set(values) - _known_dests(parser)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    # subparsers parse into a fresh namespace, so each one needs the defaults
    # that belong to its own options
    def push(target: argparse.ArgumentParser):
        local = {a.dest for a in target._actions}
        matching = {k: v for k, v in values.items() if k in local}
        if matching:
            target.set_defaults(**matching)
        for action in target._actions:
            if isinstance(action, argparse._SubParsersAction):
                for child in action.choices.values():
                    push(child)

    push(parser)
    return rest


# ---------------------------------------------------------------------------
# artifact writers


def write_embeddings_csv(path, node_ids: list[str], values: np.ndarray):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id"] + [f"e{k}" for k in range(values.shape[1])])
        for nid, row in zip(node_ids, values):
            writer.writerow([nid] + [f"{v:.9g}" for v in row])


def read_embeddings_csv(path, node_ids: list[str]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"embeddings file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "node_id":
            raise ValidationError(f"{path}: header must start with 'node_id'")
        rows = {row[0]: [float(c) for c in row[1:]] for row in reader if row}
    missing = [nid for nid in node_ids if nid not in rows]
    if missing:
        raise ValidationError(f"{path}: missing embeddings for nodes {missing[:5]}")
    return np.array([rows[nid] for nid in node_ids], dtype=np.float64)


def write_loss_history(path, history: list[float]):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, repr(loss)])


def write_run_meta(path, config: dict, seed: int, wall_time: float,
                   final_loss: float | None):
    doc = {
        "config": config,
        "seed": seed,
        "version": __version__,
        "threads": worker_count(),
        "wall_time_s": wall_time,
        "final_loss": final_loss,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def _model_config_from_args(args) -> embedding.ModelConfig:
    return embedding.ModelConfig(
        model=args.model, layers=args.layers, hidden_dim=args.hidden_dim,
        output_dim=args.output_dim, heads=args.heads, epochs=args.epochs,
        learning_rate=args.learning_rate, hop_epsilon=args.hop_epsilon,
        pos_threshold=args.pos_threshold, weight_threshold=args.weight_threshold,
        seed=args.seed).resolved()


def _require_geometries(network: SpatialNetwork, geojson_path) -> tuple[list[str], list]:
    if geojson_path is not None:
        return load_geometries(geojson_path)
    if network.geometries is None:
        raise ValidationError(
            "no geometries available: pass --geojson or use a network directory "
            "containing cells.geojson")
    return network.node_ids, network.geometries


def _render_partition(network: SpatialNetwork, partition: Partition,
                      geojson_path, palette_seed: int) -> str:
    ids, geoms = _require_geometries(network, geojson_path)
    communities = dict(zip(network.node_ids, partition.labels.tolist()))
    return render.render_choropleth(ids, geoms, communities, palette_seed=palette_seed)


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_synth(args) -> int:
    config = synth.SynthConfig(
        lattice_size=args.grid_size, communities=args.communities,
        lambda_in=args.lambda_in, lambda_out=args.lambda_out,
        feature_dim=args.feature_dim, feature_sep=args.feature_sep,
        noise_sd=args.noise_sd, seed=args.seed)
    config.validate()
    network, planted = synth.generate(config)
    outdir = Path(args.out)
    save_network(network, outdir)
    save_partition(Partition.from_labels(planted.tolist()), network.node_ids,
                   outdir / "planted.csv")
    print(f"wrote {network.n}-node lattice network to {outdir}")
    return 0


def cmd_graph_build(args) -> int:
    network = assemble_network(args.geojson, args.flows, args.attributes,
                               rule=args.rule, tolerance=args.tolerance,
                               symmetrize=not args.no_symmetrize)
    save_network(network, args.out)
    print(f"wrote network ({network.n} nodes, {network.m} features) to {args.out}")
    return 0


def cmd_embed(args) -> int:
    network = load_network(args.network)
    config = _model_config_from_args(args)
    result = embedding.train(network, config)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_embeddings_csv(outdir / "embeddings.csv", network.node_ids, result.embeddings)
    write_loss_history(outdir / "loss_history.csv", result.loss_history)
    write_run_meta(outdir / "run_meta.json", config.to_dict(), config.seed,
                   result.wall_time, result.final_loss)
    print(f"trained {config.model} for {config.epochs} epochs; "
          f"final loss {result.final_loss}")
    return 0


def cmd_cluster(args) -> int:
    network = load_network(args.network)
    embeddings = read_embeddings_csv(args.embeddings, network.node_ids)
    partition = constrained_agglomerative(embeddings, network.adjacency, args.k,
                                          linkage=args.linkage)
    save_partition(partition, network.node_ids, args.out)
    print(f"wrote {partition.k}-community partition to {args.out}")
    return 0


def cmd_baseline(args) -> int:
    network = load_network(args.network)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.method == "louvain":
        result = baselines.louvain(network.flows, seed=args.seed,
                                   resolution=args.resolution)
        save_partition(result.partition, network.node_ids, outdir / "partition.csv")
        (outdir / "quality.json").write_text(
            json.dumps({"modularity": result.quality, "passes": result.levels},
                       indent=2), encoding="utf-8")
        print(f"louvain found {result.partition.k} communities "
              f"(Q={result.quality:.4f})")
        return 0
    if args.method == "kmeans":
        partition = kmeans(network.attributes, args.k, seed=args.seed)
        save_partition(partition, network.node_ids, outdir / "partition.csv")
        print(f"kmeans wrote {partition.k}-community partition")
        return 0
    # node2vec / deepwalk: walk, embed, then the shared constrained clustering
    p, q = (1.0, 1.0) if args.method == "deepwalk" else (args.p, args.q)
    corpus = baselines.random_walks(network.adjacency, args.walk_length,
                                    args.walks_per_node, p=p, q=q, seed=args.seed)
    embeddings = baselines.skipgram_embed(
        corpus, dim=args.dim, window=args.window,
        negative_samples=args.negatives, epochs=args.epochs, lr=args.learning_rate,
        seed=args.seed)
    write_embeddings_csv(outdir / "embeddings.csv", network.node_ids, embeddings)
    partition = constrained_agglomerative(embeddings, network.adjacency, args.k,
                                          linkage=args.linkage)
    save_partition(partition, network.node_ids, outdir / "partition.csv")
    print(f"{args.method} wrote embeddings and a {partition.k}-community partition")
    return 0


def cmd_detect(args) -> int:
    started = time.perf_counter()
    network = load_network(args.network)
    config = _model_config_from_args(args)
    # fail on missing geometry before training starts
    geo_ids, geoms = _require_geometries(network, args.geojson)
    result = embedding.train(network, config)
    partition = constrained_agglomerative(result.embeddings, network.adjacency,
                                          args.k, linkage=args.linkage)
    report = metrics.evaluate_partition(network, partition, name=config.model)
    svg = render.render_choropleth(
        geo_ids, geoms, dict(zip(network.node_ids, partition.labels.tolist())),
        palette_seed=args.palette_seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_embeddings_csv(outdir / "embeddings.csv", network.node_ids, result.embeddings)
    write_loss_history(outdir / "loss_history.csv", result.loss_history)
    save_partition(partition, network.node_ids, outdir / "partition.csv")
    metrics.write_reports([report], json_path=outdir / "metrics.json")
    (outdir / "map.svg").write_bytes(svg.encode("utf-8"))
    meta = dict(config.to_dict(), k=args.k, linkage=args.linkage,
                network=str(args.network), palette_seed=args.palette_seed)
    write_run_meta(outdir / "run_meta.json", meta, config.seed,
                   time.perf_counter() - started, result.final_loss)
    print(f"detect wrote artifacts to {outdir} "
          f"(intra-flow {report.intra_flow_ratio:.3f}, "
          f"join-count {report.join_count_ratio:.3f})")
    return 0


def cmd_sweep(args) -> int:
    network = load_network(args.network)
    config = _model_config_from_args(args)
    k_list = _parse_k_list(args.k_list)
    result = embedding.train(network, config)

    def cluster_one(k: int):
        try:
            return k, constrained_agglomerative(result.embeddings, network.adjacency,
                                                k, linkage=args.linkage)
        except InfeasibleError as exc:
            return k, exc

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        clustered = dict(pool.map(cluster_one, k_list))

    rows: list[tuple[str, int, str, str]] = []
    model_reports: list[tuple[int, metrics.MetricsReport]] = []
    for k in k_list:
        outcome = clustered[k]
        if isinstance(outcome, InfeasibleError):
            rows.append((config.model, k, "warning", f"infeasible: {outcome}"))
            continue
        report = metrics.evaluate_partition(network, outcome, name=config.model)
        model_reports.append((k, report))
    _append_sweep_rows(rows, config.model, model_reports)

    if args.with_kmeans:
        km_reports = []
        for k in k_list:
            if k > network.n:
                rows.append(("kmeans", k, "warning", "infeasible: k > n"))
                continue
            partition = kmeans(network.attributes, k, seed=args.seed)
            km_reports.append((k, metrics.evaluate_partition(network, partition,
                                                             name="kmeans")))
        _append_sweep_rows(rows, "kmeans", km_reports)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with (outdir / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "K", "metric", "value"])
        writer.writerows(rows)
    meta = dict(config.to_dict(), k_list=k_list, linkage=args.linkage,
                with_kmeans=args.with_kmeans)
    write_run_meta(outdir / "run_meta.json", meta, config.seed, result.wall_time,
                   result.final_loss)
    print(f"sweep over K={k_list} wrote {outdir / 'sweep.csv'}")
    return 0


def _append_sweep_rows(rows, method: str, keyed_reports):
    """Long-format rows per K; normalized fields only when the batch allows it."""
    raws = [r.inequality_raw for _, r in keyed_reports]
    normalizable = len(raws) >= 2 and max(raws) > min(raws)
    if normalizable:
        metrics.finalize_batch([r for _, r in keyed_reports])
    for k, report in keyed_reports:
        doc = report.to_dict()
        doc.pop("name")
        for metric_name, value in doc.items():
            if value is None:
                continue
            rows.append((method, k, metric_name, repr(float(value))))


def _parse_k_list(raw: str) -> list[int]:
    values = []
    for piece in raw.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "-" in piece and not piece.startswith("-"):
            lo, _, hi = piece.partition("-")
            values.extend(range(int(lo), int(hi) + 1))
        else:
            values.append(int(piece))
    if not values or any(v < 1 for v in values):
        raise UsageError(f"--k-list must name community counts >= 1, got {raw!r}")
    return values


def cmd_metrics(args) -> int:
    network = load_network(args.network)
    names = args.names or [Path(p).stem for p in args.partitions]
    if len(names) != len(args.partitions):
        raise UsageError("--names must match the number of partition files")
    reports = []
    for name, path in zip(names, args.partitions):
        partition = load_partition(path, network.node_ids)
        reports.append(metrics.evaluate_partition(network, partition, name=name))
    if len(reports) >= 2:
        metrics.finalize_batch(reports)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    metrics.write_reports(reports, json_path=outdir / "metrics.json",
                          csv_path=outdir / "metrics.csv")
    print(f"scored {len(reports)} partitions into {outdir}")
    return 0


def cmd_hpsa(args) -> int:
    partition_ids = _partition_node_ids(args.partition)
    partition = load_partition(args.partition, partition_ids)
    population, providers, area, extra = hpsa.load_health_csv(args.health, partition_ids)
    profiles = hpsa.aggregate_profiles(partition, population, providers, area, extra)
    flags, summary = hpsa.designate(profiles, ratio_threshold=args.threshold)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(
        hpsa.report_json(profiles, flags, summary, args.threshold), encoding="utf-8")
    print(f"designated {summary.hpsa_count} of {partition.k} communities "
          f"(total area {summary.total_area_km2} km^2)")
    return 0


def _partition_node_ids(path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"partition file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        return [row[0] for row in reader if row]


def cmd_render(args) -> int:
    ids, geoms = load_geometries(args.geojson)
    partition = load_partition(args.partition, ids)
    communities = dict(zip(ids, partition.labels.tolist()))
    svg = render.render_choropleth(ids, geoms, communities,
                                   palette_seed=args.palette_seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_bytes(svg.encode("utf-8"))
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _add_model_options(parser):
    parser.add_argument("--model", choices=embedding.MODELS, default="gcn")
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--hidden-dim", type=int, default=64)
    parser.add_argument("--output-dim", type=int, default=32)
    parser.add_argument("--heads", type=int, default=1)
    parser.add_argument("--epochs", type=int, default=300)
    parser.add_argument("--learning-rate", type=float, default=0.01)
    parser.add_argument("--hop-epsilon", type=int, default=2)
    parser.add_argument("--pos-threshold", type=float, default=None,
                        help="positive-flow threshold; default depends on the model")
    parser.add_argument("--weight-threshold", type=float, default=100.0)
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> _Parser:
    parser = _Parser(prog="regionflow",
                     description="Spatial-network community detection toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-partition lattice network")
    p.add_argument("--grid-size", type=int, default=10)
    p.add_argument("--communities", type=int, default=4)
    p.add_argument("--lambda-in", type=float, default=8.0)
    p.add_argument("--lambda-out", type=float, default=1.0)
    p.add_argument("--feature-dim", type=int, default=6)
    p.add_argument("--feature-sep", type=float, default=0.4)
    p.add_argument("--noise-sd", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    graph = sub.add_parser("graph", help="graph assembly commands")
    graph_sub = graph.add_subparsers(dest="graph_command", required=True)
    p = graph_sub.add_parser("build", help="assemble a network directory from raw files")
    p.add_argument("--geojson", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--attributes", required=True)
    p.add_argument("--rule", choices=["rook", "queen"], default="rook")
    p.add_argument("--tolerance", type=float, default=0.0)
    p.add_argument("--no-symmetrize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph_build)

    p = sub.add_parser("embed", help="train node embeddings")
    p.add_argument("--network", required=True)
    _add_model_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="contiguity-constrained clustering of embeddings")
    p.add_argument("--network", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=14)
    p.add_argument("--linkage", choices=["ward", "average", "complete"], default="ward")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("baseline", help="run a baseline method")
    p.add_argument("method", choices=["louvain", "kmeans", "node2vec", "deepwalk"])
    p.add_argument("--network", required=True)
    p.add_argument("--k", type=int, default=14)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=float, default=1.0)
    p.add_argument("--linkage", choices=["ward", "average", "complete"], default="ward")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--walk-length", type=int, default=80)
    p.add_argument("--walks-per-node", type=int, default=10)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--learning-rate", type=float, default=0.025)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("detect", help="end-to-end: train, cluster, score, render")
    p.add_argument("--network", required=True)
    _add_model_options(p)
    p.add_argument("--k", type=int, default=14)
    p.add_argument("--linkage", choices=["ward", "average", "complete"], default="ward")
    p.add_argument("--geojson", default=None,
                   help="polygon file for the map; defaults to the network's cells")
    p.add_argument("--palette-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("sweep", help="cluster one trained embedding at several K")
    p.add_argument("--network", required=True)
    _add_model_options(p)
    p.add_argument("--k-list", required=True,
                   help="comma list and/or ranges, e.g. '2,4,6' or '2-14'")
    p.add_argument("--linkage", choices=["ward", "average", "complete"], default="ward")
    p.add_argument("--with-kmeans", action="store_true",
                   help="also score a k-means partition at every K")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="score one or more partitions as a batch")
    p.add_argument("--network", required=True)
    p.add_argument("--partitions", nargs="+", required=True)
    p.add_argument("--names", nargs="+", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("hpsa", help="shortage-area designation report")
    p.add_argument("--health", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--threshold", type=float, default=hpsa.DEFAULT_RATIO_THRESHOLD)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hpsa)

    p = sub.add_parser("render", help="choropleth SVG from a partition")
    p.add_argument("--geojson", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--palette-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError,) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, TrainingError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, InfeasibleError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
