"""Command-line pipeline over content-addressed artifact stages.

Each stage writes its products under
``workdir/{mesh,dataset,graph,checkpoints,reports}/<hash>/`` where the
hash digests exactly the configuration keys that stage depends on. A
``meta.txt`` beside every product records the scope hash, the sha256 of
each file written, and the sha256 of the upstream artifacts consumed,
so the whole chain can be audited offline with ``sha256sum``. Rerunning
a stage whose products already match is a no-op; a missing or tampered
upstream is an error naming the stage to rerun.
"""

from __future__ import annotations

import os

# honor the thread cap before any numeric library spins up its pools
_thread_cap = os.environ.get("DEFORMA_THREADS")
if _thread_cap and _thread_cap.isdigit():
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMBA_NUM_THREADS",
    ):
        os.environ.setdefault(_var, _thread_cap)

import argparse
import hashlib
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    RunConfig,
    config_hash,
    override_cases,
    override_seed,
    parse_config,
)
from .evalkit import (
    MetricsReport,
    benchmark,
    evaluate,
    metrics_records,
    metrics_table,
    timing_table,
)
from .loadcase import (
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLIT_VAL,
    Dataset,
    build_dataset,
    load_dataset,
    save_dataset,
)
from .meshgen import Mesh, build_phantom, mesh_hash, read_mesh, write_mesh
from .meshgraph import DeformationGraph, assemble_graph, dump_edges
from .sagenet import (
    LAYER_GCN_MEAN,
    LAYER_GRAPH_CONV,
    LAYER_SAGE_MAX,
    load_checkpoint,
    save_checkpoint,
    train,
)


class PipelineError(RuntimeError):
    """A stage cannot run; the message names the remedy."""


# ---------------------------------------------------------------------------
# artifact bookkeeping


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_meta(path: Path, entries: dict[str, str]) -> None:
    lines = [f"{key} = {entries[key]}" for key in sorted(entries)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_meta(path: Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    if not path.exists():
        return entries
    for line in path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def _stage_dir(workdir: Path, kind: str, scope: str) -> Path:
    return workdir / kind / scope


def _fresh(stage_dir: Path, files: tuple[str, ...], scope: str) -> bool:
    """True when every product matches the recorded hashes and scope."""
    meta = _read_meta(stage_dir / "meta.txt")
    if meta.get("config") != scope:
        return False
    for name in files:
        path = stage_dir / name
        recorded = meta.get(f"sha256:{name}")
        if recorded is None or not path.exists():
            return False
        if _sha256_file(path) != recorded:
            return False
    return True


def _product_meta(
    stage: str,
    scope: str,
    stage_dir: Path,
    files: tuple[str, ...],
    upstream: dict[str, str],
    extra: dict[str, str] | None = None,
) -> dict[str, str]:
    entries = {"stage": stage, "config": scope}
    for name in files:
        entries[f"sha256:{name}"] = _sha256_file(stage_dir / name)
    for name, sha in upstream.items():
        entries[f"upstream:{name}"] = sha
    if extra:
        entries.update(extra)
    return entries


def _merge_meta(path: Path, entries: dict[str, str]) -> None:
    """Update a meta file in place, keeping sibling products' records."""
    merged = _read_meta(path)
    merged.update(entries)
    _write_meta(path, merged)


class _WorkdirLock:
    """One pipeline invocation per workdir, via an exclusive lock file."""

    def __init__(self, workdir: Path):
        self.path = workdir / ".lock"

    def __enter__(self) -> "_WorkdirLock":
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise PipelineError(
                f"workdir is locked by another invocation ({self.path}); "
                "delete the lock file if no other run is active"
            ) from None
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        return self

    def __exit__(self, *exc_info) -> None:
        self.path.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# upstream loading


def _require_mesh(cfg: RunConfig, workdir: Path) -> tuple[Mesh, str]:
    """Load the mesh artifact, returning it with its file sha256."""
    scope = config_hash(cfg, "mesh")
    mdir = _stage_dir(workdir, "mesh", scope)
    mesh_file = mdir / "phantom.mesh"
    if not mesh_file.exists():
        raise PipelineError(
            f"missing mesh artifact {mesh_file}; run `deforma mesh` with "
            "this config first"
        )
    if not _fresh(mdir, ("phantom.mesh",), scope):
        raise PipelineError(
            f"stale mesh artifact {mesh_file} (content does not match its "
            "meta record); rerun `deforma mesh`"
        )
    return read_mesh(str(mesh_file)), _sha256_file(mesh_file)


def _require_dataset(
    cfg: RunConfig, workdir: Path, mesh: Mesh
) -> tuple[Dataset, str]:
    """Load the dataset artifact and check it belongs to the mesh."""
    scope = config_hash(cfg, "dataset")
    ddir = _stage_dir(workdir, "dataset", scope)
    data_file = ddir / "cases.dds"
    if not data_file.exists():
        raise PipelineError(
            f"missing dataset artifact {data_file}; run `deforma dataset` "
            "with this config first"
        )
    if not _fresh(ddir, ("cases.dds",), scope):
        raise PipelineError(
            f"stale dataset artifact {data_file}; rerun `deforma dataset`"
        )
    dataset = load_dataset(str(data_file))
    if dataset.mesh_ref != mesh_hash(mesh):
        raise PipelineError(
            "dataset was generated from a different mesh than the current "
            "config builds; rerun `deforma dataset`"
        )
    return dataset, _sha256_file(data_file)


def _require_checkpoint(
    cfg: RunConfig, workdir: Path, dataset_sha: str
) -> tuple[Path, str]:
    """Locate the trained model and check it used the present dataset."""
    scope = config_hash(cfg, "train")
    cdir = _stage_dir(workdir, "checkpoints", scope)
    ck_file = cdir / "model.ckpt"
    if not ck_file.exists():
        raise PipelineError(
            f"missing checkpoint artifact {ck_file}; run `deforma train` "
            "with this config first"
        )
    if not _fresh(cdir, ("model.ckpt", "history.txt"), scope):
        raise PipelineError(
            f"stale checkpoint artifact {ck_file}; rerun `deforma train`"
        )
    meta = _read_meta(cdir / "meta.txt")
    if meta.get("upstream:dataset") != dataset_sha:
        raise PipelineError(
            "checkpoint was trained on a different dataset than the one "
            "present; rerun `deforma train`"
        )
    return ck_file, _sha256_file(ck_file)


def _build_graph(
    cfg: RunConfig, mesh: Mesh, cache: dict[str, DeformationGraph] | None = None
) -> DeformationGraph:
    scope = config_hash(cfg, "graph")
    if cache is not None and scope in cache:
        return cache[scope]
    zeros = np.zeros((mesh.n_nodes, 3))
    graph = assemble_graph(
        mesh,
        zeros,
        threshold=cfg.graph_threshold,
        k=cfg.graph_structured_edges,
        rng=np.random.default_rng(cfg.graph_rng_seed),
    )
    if cache is not None:
        cache[scope] = graph
    return graph


# ---------------------------------------------------------------------------
# stage commands


def cmd_mesh(cfg: RunConfig, args: argparse.Namespace) -> int:
    workdir = Path(cfg.workdir)
    scope = config_hash(cfg, "mesh")
    mdir = _stage_dir(workdir, "mesh", scope)
    mesh_file = mdir / "phantom.mesh"
    if _fresh(mdir, ("phantom.mesh",), scope):
        print(f"mesh: up to date ({mesh_file})")
        return 0
    mesh = build_phantom(cfg.phantom)
    mdir.mkdir(parents=True, exist_ok=True)
    write_mesh(mesh, str(mesh_file))
    meta = _product_meta(
        "mesh",
        scope,
        mdir,
        ("phantom.mesh",),
        upstream={},
        extra={"mesh_hash": mesh_hash(mesh)},
    )
    _write_meta(mdir / "meta.txt", meta)
    print(
        f"mesh: {mesh.n_nodes} nodes, {mesh.n_elements} elements "
        f"-> {mesh_file}"
    )
    return 0


def cmd_dataset(cfg: RunConfig, args: argparse.Namespace) -> int:
    workdir = Path(cfg.workdir)
    scope = config_hash(cfg, "dataset")
    ddir = _stage_dir(workdir, "dataset", scope)
    data_file = ddir / "cases.dds"
    mesh, mesh_sha = _require_mesh(cfg, workdir)
    if _fresh(ddir, ("cases.dds",), scope):
        meta = _read_meta(ddir / "meta.txt")
        if meta.get("upstream:mesh") == mesh_sha:
            print(f"dataset: up to date ({data_file})")
            return 0
    dataset = build_dataset(mesh, cfg.materials(), cfg.load, cfg.solver)
    ddir.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, str(data_file))
    meta = _product_meta(
        "dataset", scope, ddir, ("cases.dds",), upstream={"mesh": mesh_sha}
    )
    _write_meta(ddir / "meta.txt", meta)
    n_train = dataset.indices_of(SPLIT_TRAIN).size
    n_val = dataset.indices_of(SPLIT_VAL).size
    n_test = dataset.indices_of(SPLIT_TEST).size
    print(
        f"dataset: {dataset.n_samples} cases "
        f"({n_train} train / {n_val} val / {n_test} test), "
        f"{dataset.failure_count} resampled failures -> {data_file}"
    )
    return 0


def _graph_stats_text(graph: DeformationGraph) -> str:
    from .meshgraph import EDGE_DISTANCE, EDGE_STRUCTURED

    degrees = np.diff(graph.indptr)
    lines = [
        f"n_nodes = {graph.n_nodes}",
        f"n_edges = {graph.n_edges}",
        f"distance_edges = {int((graph.edge_kinds == EDGE_DISTANCE).sum())}",
        f"structured_edges = "
        f"{int((graph.edge_kinds == EDGE_STRUCTURED).sum())}",
        f"isolated_nodes = {int((degrees == 0).sum())}",
        f"degree_min = {int(degrees.min())}",
        f"degree_mean = {degrees.mean():.6f}",
        f"degree_max = {int(degrees.max())}",
    ]
    return "\n".join(lines) + "\n"


def cmd_graph_stats(cfg: RunConfig, args: argparse.Namespace) -> int:
    workdir = Path(cfg.workdir)
    scope = config_hash(cfg, "graph")
    gdir = _stage_dir(workdir, "graph", scope)
    mesh, mesh_sha = _require_mesh(cfg, workdir)
    if _fresh(gdir, ("edges.txt", "stats.txt"), scope):
        meta = _read_meta(gdir / "meta.txt")
        if meta.get("upstream:mesh") == mesh_sha:
            print(f"graph-stats: up to date ({gdir / 'stats.txt'})")
            return 0
    graph = _build_graph(cfg, mesh)
    gdir.mkdir(parents=True, exist_ok=True)
    (gdir / "edges.txt").write_text(dump_edges(graph), encoding="utf-8")
    stats = _graph_stats_text(graph)
    (gdir / "stats.txt").write_text(stats, encoding="utf-8")
    meta = _product_meta(
        "graph",
        scope,
        gdir,
        ("edges.txt", "stats.txt"),
        upstream={"mesh": mesh_sha},
    )
    _write_meta(gdir / "meta.txt", meta)
    print(f"graph-stats: {graph.n_nodes} nodes, {graph.n_edges} edges")
    sys.stdout.write(stats)
    return 0


def _history_text(history: dict[str, list[float]]) -> str:
    lines = ["# epoch train_loss val_loss"]
    pairs = zip(history["train_loss"], history["val_loss"])
    for epoch, (t, v) in enumerate(pairs, start=1):
        lines.append(f"{epoch} {t:.17g} {v:.17g}")
    return "\n".join(lines) + "\n"


def _train_stage(
    cfg: RunConfig,
    workdir: Path,
    mesh: Mesh,
    mesh_sha: str,
    dataset: Dataset,
    dataset_sha: str,
    graph_cache: dict[str, DeformationGraph] | None = None,
) -> tuple[Path, bool]:
    """Train (or reuse) the checkpoint for one config; returns its path."""
    scope = config_hash(cfg, "train")
    cdir = _stage_dir(workdir, "checkpoints", scope)
    ck_file = cdir / "model.ckpt"
    if _fresh(cdir, ("model.ckpt", "history.txt"), scope):
        meta = _read_meta(cdir / "meta.txt")
        if (
            meta.get("upstream:mesh") == mesh_sha
            and meta.get("upstream:dataset") == dataset_sha
        ):
            return ck_file, True
    graph = _build_graph(cfg, mesh, graph_cache)
    checkpoint, history = train(dataset, graph, cfg.model, cfg.train)
    cdir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(checkpoint, str(ck_file))
    (cdir / "history.txt").write_text(
        _history_text(history), encoding="utf-8"
    )
    meta = _product_meta(
        "train",
        scope,
        cdir,
        ("model.ckpt", "history.txt"),
        upstream={"mesh": mesh_sha, "dataset": dataset_sha},
    )
    _write_meta(cdir / "meta.txt", meta)
    return ck_file, False


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    workdir = Path(cfg.workdir)
    mesh, mesh_sha = _require_mesh(cfg, workdir)
    dataset, dataset_sha = _require_dataset(cfg, workdir, mesh)
    ck_file, reused = _train_stage(
        cfg, workdir, mesh, mesh_sha, dataset, dataset_sha
    )
    if reused:
        print(f"train: up to date ({ck_file})")
        return 0
    history = (ck_file.parent / "history.txt").read_text().splitlines()
    losses = [float(line.split()[2]) for line in history[1:]]
    best = min(range(len(losses)), key=losses.__getitem__)
    print(
        f"train: {cfg.train.epochs} epochs, best val loss "
        f"{losses[best]:.6g} (epoch {best + 1}) -> {ck_file}"
    )
    return 0


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    workdir = Path(cfg.workdir)
    scope = config_hash(cfg, "train")
    rdir = _stage_dir(workdir, "reports", scope)
    mesh, mesh_sha = _require_mesh(cfg, workdir)
    dataset, dataset_sha = _require_dataset(cfg, workdir, mesh)
    ck_file, ck_sha = _require_checkpoint(cfg, workdir, dataset_sha)
    if _fresh(rdir, ("metrics.txt", "records.txt"), scope):
        meta = _read_meta(rdir / "meta.txt")
        if meta.get("upstream:checkpoint") == ck_sha:
            print(f"eval: up to date ({rdir / 'metrics.txt'})")
            return 0
    graph = _build_graph(cfg, mesh)
    checkpoint = load_checkpoint(str(ck_file))
    report = evaluate(checkpoint, dataset, mesh, graph)
    rdir.mkdir(parents=True, exist_ok=True)
    table = metrics_table(report)
    (rdir / "metrics.txt").write_text(table, encoding="utf-8")
    (rdir / "records.txt").write_text(metrics_records(report), encoding="utf-8")
    meta = _product_meta(
        "reports",
        scope,
        rdir,
        ("metrics.txt", "records.txt"),
        upstream={
            "mesh": mesh_sha,
            "dataset": dataset_sha,
            "checkpoint": ck_sha,
        },
    )
    _merge_meta(rdir / "meta.txt", meta)
    sys.stdout.write(table)
    print(f"eval: report -> {rdir / 'metrics.txt'}")
    return 0


def cmd_bench(cfg: RunConfig, args: argparse.Namespace) -> int:
    workdir = Path(cfg.workdir)
    scope = config_hash(cfg, "train")
    rdir = _stage_dir(workdir, "reports", scope)
    mesh, mesh_sha = _require_mesh(cfg, workdir)
    dataset, dataset_sha = _require_dataset(cfg, workdir, mesh)
    ck_file, ck_sha = _require_checkpoint(cfg, workdir, dataset_sha)
    if _fresh(rdir, ("timing.txt",), scope):
        meta = _read_meta(rdir / "meta.txt")
        if meta.get("upstream:checkpoint") == ck_sha:
            print(f"bench: up to date ({rdir / 'timing.txt'})")
            return 0
    graph = _build_graph(cfg, mesh)
    checkpoint = load_checkpoint(str(ck_file))
    n_cases = args.cases if args.cases is not None else 20
    report = benchmark(
        mesh,
        cfg.materials(),
        checkpoint,
        graph,
        cfg.load,
        cfg.solver,
        n_cases=n_cases,
        rng_seed=cfg.load.rng_seed,
    )
    rdir.mkdir(parents=True, exist_ok=True)
    table = timing_table(report)
    (rdir / "timing.txt").write_text(table, encoding="utf-8")
    meta = _product_meta(
        "reports",
        scope,
        rdir,
        ("timing.txt",),
        upstream={
            "mesh": mesh_sha,
            "dataset": dataset_sha,
            "checkpoint": ck_sha,
        },
    )
    _merge_meta(rdir / "meta.txt", meta)
    sys.stdout.write(table)
    print(f"bench: speedup {report.speedup:.1f}x -> {rdir / 'timing.txt'}")
    return 0


# one-factor-at-a-time grid around the configured architecture
_ABLATE_KINDS = (LAYER_SAGE_MAX, LAYER_GCN_MEAN, LAYER_GRAPH_CONV)
_ABLATE_DEPTHS = (6, 8, 10, 12)
_ABLATE_WIDTHS = (64, 72, 80, 96)
_ABLATE_EDGES = (0, 100, 200)


def _ablation_rows(cfg: RunConfig) -> list[tuple[str, RunConfig]]:
    rows: list[tuple[str, RunConfig]] = [("default", cfg)]
    model = cfg.model
    for kind in _ABLATE_KINDS:
        if kind != model.layer_kind:
            rows.append(
                (
                    f"layer_kind={kind}",
                    replace(cfg, model=replace(model, layer_kind=kind)),
                )
            )
    for depth in _ABLATE_DEPTHS:
        if depth != model.n_layers:
            rows.append(
                (
                    f"n_layers={depth}",
                    replace(cfg, model=replace(model, n_layers=depth)),
                )
            )
    for width in _ABLATE_WIDTHS:
        if width != model.hidden_dim:
            rows.append(
                (
                    f"hidden_dim={width}",
                    replace(cfg, model=replace(model, hidden_dim=width)),
                )
            )
    for edges in _ABLATE_EDGES:
        if edges != cfg.graph_structured_edges:
            rows.append(
                (
                    f"structured_edges={edges}",
                    replace(cfg, graph_structured_edges=edges),
                )
            )
    flipped = not model.use_jumping_knowledge
    rows.append(
        (
            f"jumping_knowledge={'on' if flipped else 'off'}",
            replace(
                cfg, model=replace(model, use_jumping_knowledge=flipped)
            ),
        )
    )
    return rows


def _ablation_table(
    results: list[tuple[str, MetricsReport | None, str]]
) -> tuple[str, str]:
    """Aligned table plus machine-readable records for the grid."""
    header = (
        f"{'row':<28} {'global RMSE (mm)':>17} {'cancer RMSE (mm)':>17} "
        f"{'DSC':>8}  status"
    )
    table = [header, "-" * len(header)]
    records = []
    for label, report, status in results:
        if report is None:
            table.append(
                f"{label:<28} {'-':>17} {'-':>17} {'-':>8}  {status}"
            )
            records.append(f"row={label} status=failed error={status!r}")
        else:
            table.append(
                f"{label:<28} {report.global_rmse_mm:>17.4f} "
                f"{report.cancer_rmse_mm:>17.4f} "
                f"{report.dsc:>8.4f}  {status}"
            )
            records.append(
                f"row={label} status=ok "
                f"global_rmse_mm={report.global_rmse_mm:.6f} "
                f"cancer_rmse_mm={report.cancer_rmse_mm:.6f} "
                f"dsc={report.dsc:.6f}"
            )
    return "\n".join(table) + "\n", "\n".join(records) + "\n"


def cmd_ablate(cfg: RunConfig, args: argparse.Namespace) -> int:
    workdir = Path(cfg.workdir)
    scope = config_hash(cfg, "train")
    rdir = _stage_dir(workdir, "reports", scope)
    mesh, mesh_sha = _require_mesh(cfg, workdir)
    dataset, dataset_sha = _require_dataset(cfg, workdir, mesh)
    if _fresh(rdir, ("ablation.txt", "ablation_records.txt"), scope):
        meta = _read_meta(rdir / "meta.txt")
        if meta.get("upstream:dataset") == dataset_sha:
            print(f"ablate: up to date ({rdir / 'ablation.txt'})")
            return 0
    graph_cache: dict[str, DeformationGraph] = {}
    results: list[tuple[str, MetricsReport | None, str]] = []
    n_failed = 0
    for label, row_cfg in _ablation_rows(cfg):
        try:
            ck_file, reused = _train_stage(
                row_cfg,
                workdir,
                mesh,
                mesh_sha,
                dataset,
                dataset_sha,
                graph_cache,
            )
            graph = _build_graph(row_cfg, mesh, graph_cache)
            checkpoint = load_checkpoint(str(ck_file))
            report = evaluate(checkpoint, dataset, mesh, graph)
            results.append((label, report, "ok"))
            print(
                f"ablate: {label}: dsc {report.dsc:.4f}"
                + (" (reused checkpoint)" if reused else "")
            )
        except Exception as exc:  # record the cell, keep the grid going
            n_failed += 1
            results.append((label, None, str(exc)))
            print(f"ablate: {label}: FAILED ({exc})")
    rdir.mkdir(parents=True, exist_ok=True)
    table, records = _ablation_table(results)
    (rdir / "ablation.txt").write_text(table, encoding="utf-8")
    (rdir / "ablation_records.txt").write_text(records, encoding="utf-8")
    meta = _product_meta(
        "reports",
        scope,
        rdir,
        ("ablation.txt", "ablation_records.txt"),
        upstream={"mesh": mesh_sha, "dataset": dataset_sha},
    )
    _merge_meta(rdir / "meta.txt", meta)
    print(
        f"ablate: {len(results)} rows ({n_failed} failed) "
        f"-> {rdir / 'ablation.txt'}"
    )
    return 0


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "mesh": cmd_mesh,
    "dataset": cmd_dataset,
    "graph-stats": cmd_graph_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deforma",
        description="Staged pipeline from phantom mesh to trained "
        "deformation surrogate.",
    )
    parser.add_argument(
        "--version", action="version", version=f"deforma {__version__}"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        metavar="PATH",
        help="run configuration file (default: bundled desk-scale config)",
    )
    common.add_argument(
        "--seed",
        type=int,
        metavar="N",
        help="override every rng seed in the config",
    )
    common.add_argument(
        "--cases",
        type=int,
        metavar="N",
        help="override the total load-case count (for bench: the number "
        "of timing probes)",
    )
    common.add_argument(
        "--out", metavar="DIR", help="override the configured workdir"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, summary in (
        ("mesh", "build the phantom mesh artifact"),
        ("dataset", "generate the supervised dataset by FE solves"),
        ("graph-stats", "build the input graph and report its shape"),
        ("train", "fit the surrogate on the dataset's train split"),
        ("eval", "metrics of the trained model on the test split"),
        ("bench", "wall-clock comparison of FE solve and model forward"),
        ("ablate", "one-factor-at-a-time architecture grid"),
    ):
        sub.add_parser(name, parents=[common], help=summary)
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config is None:
        text = (
            resources.files("deforma")
            .joinpath("configs/desk.cfg")
            .read_text(encoding="utf-8")
        )
    else:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    cfg = parse_config(text)
    if args.out is not None:
        cfg = replace(cfg, workdir=args.out)
    if args.seed is not None:
        cfg = override_seed(cfg, args.seed)
    if args.cases is not None and args.command != "bench":
        cfg = override_cases(cfg, args.cases)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        workdir = Path(cfg.workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        with _WorkdirLock(workdir):
            return _COMMANDS[args.command](cfg, args)
    except (
        PipelineError,
        ConfigError,
        OSError,
        RuntimeError,
        ValueError,
    ) as exc:
        print(f"deforma: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
