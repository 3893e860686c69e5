"""Accuracy metrics and timing comparison for the surrogate.

Provides displacement RMSE in millimeters, tumor-region overlap via
generalized winding-number voxelization and the Dice coefficient, a
per-split evaluation report, and a wall-clock benchmark of the FE
solver against the network forward pass.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .hyperfem import Materials, SolveOptions, solve_newton
from .loadcase import (
    SPLIT_TEST,
    Dataset,
    LoadSpec,
    anchor_locations,
    mask_surface,
    sample_load,
)
from .meshgen import (
    REGION_CANCER,
    TAG_CANCER_INTERIOR,
    TAG_CANCER_SURFACE,
    Mesh,
    SurfaceTriangulation,
    extract_region_surface,
)
from .meshgraph import DeformationGraph, with_features
from .sagenet import Checkpoint, forward

DEFAULT_RESOLUTION = 0.001
ON_SURFACE_DIST = 1e-12
SURFACE_OFFSET = 1e-9
_WINDING_CHUNK = 2048
MAX_VOXELS = 4_000_000


@dataclass(frozen=True)
class VoxelRegion:
    """Sparse occupancy on a regular grid.

    ``occupancy`` holds integer (i, j, k) indices of voxels whose
    centers lie inside the region; the center of index ``v`` is
    ``origin + (v + 0.5) * resolution``.
    """

    origin: tuple[float, float, float]
    resolution: float
    occupancy: frozenset[tuple[int, int, int]]

    def __post_init__(self) -> None:
        if self.resolution <= 0.0:
            raise ValueError("resolution must be positive")
        if any(min(v) < 0 for v in self.occupancy):
            raise ValueError("voxel indices must be non-negative")

    def __len__(self) -> int:
        return len(self.occupancy)


@dataclass(frozen=True)
class SampleMetrics:
    sample_index: int
    global_rmse_mm: float
    cancer_rmse_mm: float
    dsc: float


@dataclass(frozen=True)
class MetricsReport:
    """Per-sample metrics plus their means over the evaluated split."""

    per_sample: tuple[SampleMetrics, ...]
    global_rmse_mm: float
    cancer_rmse_mm: float
    dsc: float


@dataclass(frozen=True)
class TimingReport:
    """Mean seconds per sample for both solvers; speedup is fe/gnn."""

    fe_seconds_per_sample: float
    gnn_seconds_per_sample: float
    speedup: float
    fe_case_seconds: tuple[float, ...]
    gnn_repeat_seconds: tuple[float, ...]
    threads: int


def rmse(
    u_pred: np.ndarray,
    u_target: np.ndarray,
    node_subset: np.ndarray | None = None,
) -> float:
    """Root-mean-square displacement error in millimeters.

    The squared error of a node is the squared Euclidean norm of its
    3-component displacement error; the mean runs over the subset
    (all nodes when omitted).
    """
    u_pred = np.asarray(u_pred, dtype=np.float64)
    u_target = np.asarray(u_target, dtype=np.float64)
    if u_pred.shape != u_target.shape:
        raise ValueError("displacement fields must share a shape")
    diff = u_pred - u_target
    if node_subset is not None:
        subset = np.asarray(node_subset)
        if subset.size == 0:
            raise ValueError("node subset is empty")
        diff = diff[subset]
    # accumulate node errors in sequence so a plain reference loop
    # reproduces the value bitwise
    sq = (diff**2).sum(axis=1)
    total = float(np.cumsum(sq)[-1])
    return float(np.sqrt(total / sq.shape[0])) * 1000.0


def _winding_batch(
    points: np.ndarray, surface: SurfaceTriangulation
) -> np.ndarray:
    """Generalized winding numbers of many points, signed solid angles."""
    tri = surface.vertices[surface.triangles]
    out = np.empty(points.shape[0], dtype=np.float64)
    for start in range(0, points.shape[0], _WINDING_CHUNK):
        p = points[start : start + _WINDING_CHUNK]
        a = tri[None, :, 0, :] - p[:, None, :]
        b = tri[None, :, 1, :] - p[:, None, :]
        c = tri[None, :, 2, :] - p[:, None, :]
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        num = np.einsum("mti,mti->mt", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("mti,mti->mt", a, b) * lc
            + np.einsum("mti,mti->mt", b, c) * la
            + np.einsum("mti,mti->mt", c, a) * lb
        )
        omega = 2.0 * np.arctan2(num, den)
        out[start : start + p.shape[0]] = omega.sum(axis=1) / (4.0 * np.pi)
    return out


def _min_triangle_distance(
    point: np.ndarray, surface: SurfaceTriangulation
) -> tuple[float, int]:
    """Distance from a point to the nearest surface triangle."""
    tri = surface.vertices[surface.triangles]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]

    def seg_d2(p: np.ndarray, s0: np.ndarray, s1: np.ndarray) -> np.ndarray:
        d = s1 - s0
        denom = (d * d).sum(axis=1)
        t = np.zeros_like(denom)
        ok = denom > 0.0
        t[ok] = ((p - s0[ok]) * d[ok]).sum(axis=1) / denom[ok]
        t = np.clip(t, 0.0, 1.0)
        closest = s0 + t[:, None] * d
        return ((closest - p) ** 2).sum(axis=1)

    d2 = np.minimum(
        seg_d2(point, a, b), np.minimum(seg_d2(point, b, c), seg_d2(point, c, a))
    )
    v0 = b - a
    v1 = c - a
    normal = np.cross(v0, v1)
    nn = (normal * normal).sum(axis=1)
    safe = nn > 0.0
    t = np.zeros_like(nn)
    t[safe] = ((point - a[safe]) * normal[safe]).sum(axis=1) / nn[safe]
    proj = point - t[:, None] * normal
    v2 = proj - a
    d00 = (v0 * v0).sum(axis=1)
    d01 = (v0 * v1).sum(axis=1)
    d11 = (v1 * v1).sum(axis=1)
    d20 = (v2 * v0).sum(axis=1)
    d21 = (v2 * v1).sum(axis=1)
    denom = d00 * d11 - d01 * d01
    inside = np.zeros_like(safe)
    pos = safe & (denom > 0.0)
    bv = np.zeros_like(denom)
    bw = np.zeros_like(denom)
    bv[pos] = (d11[pos] * d20[pos] - d01[pos] * d21[pos]) / denom[pos]
    bw[pos] = (d00[pos] * d21[pos] - d01[pos] * d20[pos]) / denom[pos]
    inside = pos & (bv >= 0.0) & (bw >= 0.0) & (bv + bw <= 1.0)
    plane_d2 = np.where(safe, t * t * nn, np.inf)
    d2 = np.where(inside, np.minimum(d2, plane_d2), d2)
    nearest = int(np.argmin(d2))
    return float(np.sqrt(d2[nearest])), nearest


def winding_number(point: np.ndarray, surface: SurfaceTriangulation) -> float:
    """Generalized winding number: about 1 inside, 0 outside.

    Sums the signed solid angles subtended by the surface triangles,
    normalized by 4 pi. A point lying exactly on the surface is shifted
    by 1e-9 m along the inward normal of its nearest triangle first, so
    boundary points classify as inside deterministically.
    """
    point = np.asarray(point, dtype=np.float64)
    dist, nearest = _min_triangle_distance(point, surface)
    if dist < ON_SURFACE_DIST:
        tri = surface.vertices[surface.triangles[nearest]]
        normal = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        norm = np.linalg.norm(normal)
        if norm > 0.0:
            point = point - SURFACE_OFFSET * normal / norm
    return float(_winding_batch(point[None, :], surface)[0])


def voxelize_region(
    surface: SurfaceTriangulation,
    resolution: float = DEFAULT_RESOLUTION,
    origin: np.ndarray | None = None,
    n_cells: np.ndarray | None = None,
) -> VoxelRegion:
    """Occupancy of the closed surface on a regular voxel grid.

    The grid spans the surface bounding box padded by two voxels on
    every side; a voxel belongs to the region iff the winding number of
    its center exceeds 0.5. Pass a shared ``origin`` (and ``n_cells``)
    when two regions must use identical indices.
    """
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    verts = surface.vertices
    vmin = verts.min(axis=0)
    vmax = verts.max(axis=0)
    if (vmax - vmin <= 0.0).any():
        raise ValueError("surface bounding box is degenerate")
    if origin is None:
        origin = vmin - 2.0 * resolution
    origin = np.asarray(origin, dtype=np.float64)
    if n_cells is None:
        n_cells = np.ceil((vmax + 2.0 * resolution - origin) / resolution)
    n_cells = np.asarray(n_cells, dtype=np.int64)
    total = int(np.prod(n_cells))
    if total > MAX_VOXELS:
        raise ValueError(
            f"voxel grid has {total} cells, above the cap of {MAX_VOXELS}; "
            "the surface extent is likely degenerate for this resolution"
        )

    axes = [
        origin[i] + (np.arange(n_cells[i]) + 0.5) * resolution
        for i in range(3)
    ]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    inside = _winding_batch(centers, surface) > 0.5
    hits = np.flatnonzero(inside)
    idx = np.stack(np.unravel_index(hits, tuple(n_cells)), axis=1)
    occupancy = frozenset(map(tuple, idx.tolist()))
    return VoxelRegion(
        origin=tuple(float(v) for v in origin),
        resolution=float(resolution),
        occupancy=occupancy,
    )


def dsc(v_t: VoxelRegion, v_p: VoxelRegion) -> float:
    """Dice coefficient of two voxel regions on the same grid."""
    if abs(v_t.resolution - v_p.resolution) > 1e-12:
        raise ValueError("voxel regions differ in resolution")
    if any(abs(a - b) > 1e-12 for a, b in zip(v_t.origin, v_p.origin)):
        raise ValueError("voxel regions differ in origin")
    total = len(v_t) + len(v_p)
    if total == 0:
        raise ValueError("both voxel regions are empty")
    overlap = len(v_t.occupancy & v_p.occupancy)
    return 2.0 * overlap / total


def _deformed(surface: SurfaceTriangulation, u: np.ndarray) -> SurfaceTriangulation:
    return SurfaceTriangulation(
        vertices=surface.vertices + u[surface.source_nodes],
        triangles=surface.triangles,
        source_nodes=surface.source_nodes,
    )


def _paired_voxelize(
    surface: SurfaceTriangulation,
    u_target: np.ndarray,
    u_pred: np.ndarray,
    resolution: float,
) -> tuple[VoxelRegion, VoxelRegion]:
    """Voxelize target- and prediction-deformed surfaces on one grid."""
    st = _deformed(surface, u_target)
    sp = _deformed(surface, u_pred)
    lo = np.minimum(st.vertices.min(axis=0), sp.vertices.min(axis=0))
    hi = np.maximum(st.vertices.max(axis=0), sp.vertices.max(axis=0))
    origin = lo - 2.0 * resolution
    n_cells = np.ceil((hi + 2.0 * resolution - origin) / resolution)
    return (
        voxelize_region(st, resolution, origin, n_cells),
        voxelize_region(sp, resolution, origin, n_cells),
    )


def cancer_node_indices(mesh: Mesh) -> np.ndarray:
    """Nodes belonging to the tumor region, surface and interior."""
    return np.flatnonzero(
        mesh.node_tags & (TAG_CANCER_SURFACE | TAG_CANCER_INTERIOR)
    )


def evaluate(
    checkpoint: Checkpoint,
    dataset: Dataset,
    mesh: Mesh,
    graph: DeformationGraph,
    split_tag: int = SPLIT_TEST,
    resolution: float = DEFAULT_RESOLUTION,
) -> MetricsReport:
    """Metrics of the model over one dataset split.

    Per sample: global RMSE over all nodes, RMSE restricted to tumor
    nodes, and the Dice coefficient between the tumor surface deformed
    by the reference field and by the prediction, voxelized on a shared
    grid. The report carries the per-sample records plus their means.
    """
    indices = dataset.indices_of(split_tag)
    if indices.size == 0:
        raise ValueError(f"dataset has no samples with split {split_tag}")
    cancer_nodes = cancer_node_indices(mesh)
    surface = extract_region_surface(mesh, REGION_CANCER)
    records = []
    for si in indices:
        sample = dataset.samples[int(si)]
        u_pred = forward(with_features(graph, sample.u_s), checkpoint)
        v_t, v_p = _paired_voxelize(surface, sample.u, u_pred, resolution)
        records.append(
            SampleMetrics(
                sample_index=int(si),
                global_rmse_mm=rmse(u_pred, sample.u),
                cancer_rmse_mm=rmse(u_pred, sample.u, cancer_nodes),
                dsc=dsc(v_t, v_p),
            )
        )
    return MetricsReport(
        per_sample=tuple(records),
        global_rmse_mm=float(np.mean([r.global_rmse_mm for r in records])),
        cancer_rmse_mm=float(np.mean([r.cancer_rmse_mm for r in records])),
        dsc=float(np.mean([r.dsc for r in records])),
    )


def metrics_records(report: MetricsReport) -> str:
    """Machine-readable lines, one `key=value` record per sample."""
    lines = [
        f"sample={r.sample_index} global_rmse_mm={r.global_rmse_mm:.6f} "
        f"cancer_rmse_mm={r.cancer_rmse_mm:.6f} dsc={r.dsc:.6f}"
        for r in report.per_sample
    ]
    lines.append(
        f"mean global_rmse_mm={report.global_rmse_mm:.6f} "
        f"cancer_rmse_mm={report.cancer_rmse_mm:.6f} dsc={report.dsc:.6f}"
    )
    return "\n".join(lines) + "\n"


def metrics_table(report: MetricsReport) -> str:
    """Human-readable table of the same records."""
    header = f"{'sample':>8} {'global RMSE (mm)':>18} {'cancer RMSE (mm)':>18} {'DSC':>8}"
    rows = [header, "-" * len(header)]
    for r in report.per_sample:
        rows.append(
            f"{r.sample_index:>8d} {r.global_rmse_mm:>18.4f} "
            f"{r.cancer_rmse_mm:>18.4f} {r.dsc:>8.4f}"
        )
    rows.append(
        f"{'mean':>8} {report.global_rmse_mm:>18.4f} "
        f"{report.cancer_rmse_mm:>18.4f} {report.dsc:>8.4f}"
    )
    return "\n".join(rows) + "\n"


def timing_table(report: TimingReport) -> str:
    """Human-readable timing comparison."""
    lines = [
        f"FE solve seconds per sample:   {report.fe_seconds_per_sample:.6f}",
        f"GNN forward seconds per sample: {report.gnn_seconds_per_sample:.6f}",
        f"speedup (FE / GNN):            {report.speedup:.1f}x",
        f"threads:                       {report.threads}",
    ]
    return "\n".join(lines) + "\n"


def benchmark(
    mesh: Mesh,
    mat: Materials,
    checkpoint: Checkpoint,
    graph: DeformationGraph,
    spec: LoadSpec,
    opts: SolveOptions = SolveOptions(),
    n_cases: int = 20,
    repeats: int = 5,
    rng_seed: int = 0,
) -> TimingReport:
    """Wall-clock FE solve time versus network forward time.

    Draws fresh load cases, solves each with the FE solver (timing the
    solve alone), then times the network forward over every case in
    ``repeats`` passes after an untimed warmup. Means are per sample;
    cases whose FE solve fails to converge are redrawn.
    """
    if n_cases < 1 or repeats < 1:
        raise ValueError("n_cases and repeats must be positive")
    anchors = anchor_locations(mesh, spec)
    rng = np.random.default_rng([rng_seed, 77])

    fe_times: list[float] = []
    features: list[np.ndarray] = []
    attempts = 0
    while len(fe_times) < n_cases:
        attempts += 1
        if attempts > 10 * n_cases:
            raise RuntimeError("too many diverged cases during benchmark")
        case = sample_load(rng, mesh, spec, anchors)
        start = time.perf_counter()
        try:
            u, _ = solve_newton(mesh, mat, case.nodal_forces, opts=opts)
        except Exception:
            continue
        fe_times.append(time.perf_counter() - start)
        features.append(mask_surface(u, mesh))

    for u_s in features[:2]:
        forward(with_features(graph, u_s), checkpoint)

    repeat_means: list[float] = []
    for _ in range(repeats):
        total = 0.0
        for u_s in features:
            g = with_features(graph, u_s)
            start = time.perf_counter()
            forward(g, checkpoint)
            total += time.perf_counter() - start
        repeat_means.append(total / n_cases)

    fe_mean = float(np.mean(fe_times))
    gnn_mean = float(np.mean(repeat_means))
    return TimingReport(
        fe_seconds_per_sample=fe_mean,
        gnn_seconds_per_sample=gnn_mean,
        speedup=fe_mean / gnn_mean,
        fe_case_seconds=tuple(fe_times),
        gnn_repeat_seconds=tuple(repeat_means),
        threads=int(os.environ.get("DEFORMA_THREADS", "1")),
    )
