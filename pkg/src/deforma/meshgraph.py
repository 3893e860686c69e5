"""Graph construction for the deformation surrogate.

Turns a tetrahedral phantom mesh into the network input graph: every
node pair closer than a distance threshold is connected (found with a
uniform spatial hash grid), and a small set of long-range edges links
farthest-point-sampled skin-surface nodes to their nearest tumor-surface
nodes so surface loads reach the tumor region in one hop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .meshgen import Mesh, TAG_CANCER_SURFACE, TAG_TOP_SURFACE

EDGE_DISTANCE = 0
EDGE_STRUCTURED = 1

_KIND_NAMES = {EDGE_DISTANCE: "distance", EDGE_STRUCTURED: "structured"}

DEFAULT_THRESHOLD = 0.003
DEFAULT_STRUCTURED_COUNT = 100
DEFAULT_EDGE_CAP = 5_000_000


class EdgeCapError(ValueError):
    """Raised when the distance-edge count exceeds the configured cap."""


@dataclass(frozen=True)
class DeformationGraph:
    """Undirected graph over mesh nodes with per-node displacement features.

    Parameters
    ----------
    n_nodes : int
        Node count; equals the mesh node count, isolated nodes included.
    edges : numpy.ndarray
        Unique undirected edges, shape (n_edges, 2), each row sorted
        ascending, rows in lexicographic order.
    edge_kinds : numpy.ndarray
        Per-edge tag aligned with ``edges``: ``EDGE_DISTANCE`` or
        ``EDGE_STRUCTURED``.
    indptr, indices : numpy.ndarray
        CSR adjacency storing both directions of every edge; neighbor
        lists are sorted and contain no self-loops or duplicates.
    csr_kinds : numpy.ndarray
        Edge kind aligned with ``indices``.
    node_features : numpy.ndarray
        Per-node 3-vector, meters. The surface-load displacement field
        that drives the prediction.
    """

    n_nodes: int
    edges: np.ndarray
    edge_kinds: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    csr_kinds: np.ndarray
    node_features: np.ndarray

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node] : self.indptr[node + 1]]


def build_distance_edges(
    mesh: Mesh,
    threshold: float = DEFAULT_THRESHOLD,
    max_edges: int = DEFAULT_EDGE_CAP,
) -> np.ndarray:
    """Connect every node pair strictly closer than ``threshold``.

    Candidate pairs come from a uniform spatial hash grid with cell size
    equal to the threshold, so only the 27 cells around a node are
    scanned; the exact Euclidean test then filters candidates.

    Parameters
    ----------
    mesh : Mesh
        Source mesh; only node positions are used.
    threshold : float
        Connection radius in meters, exclusive.
    max_edges : int
        Cap on the resulting edge count, guarding against a threshold
        large enough to make the graph effectively dense.

    Returns
    -------
    numpy.ndarray
        Shape (n_edges, 2) int64, rows sorted ascending and ordered
        lexicographically.

    Raises
    ------
    EdgeCapError
        If more than ``max_edges`` edges result; raise the cap via the
        ``max_edges`` argument if the threshold is intentional.
    """
    if threshold <= 0.0:
        raise ValueError("threshold must be positive")
    nodes = np.asarray(mesh.nodes, dtype=np.float64)
    n = nodes.shape[0]
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)

    cells = np.floor(nodes / threshold).astype(np.int64)
    # lexicographic shift keeps neighbor-cell coordinates inside the
    # packed code range
    lo = cells.min(axis=0)
    shifted = cells - lo + 1
    span = shifted.max(axis=0) + 2
    codes = (shifted[:, 0] * span[1] + shifted[:, 1]) * span[2] + shifted[:, 2]

    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    unique_codes, bucket_start = np.unique(sorted_codes, return_index=True)
    bucket_end = np.append(bucket_start[1:], n)

    pairs = []
    thr2 = threshold * threshold
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                off = (dx * span[1] + dy) * span[2] + dz
                target = codes + off
                slot = np.searchsorted(unique_codes, target)
                slot_ok = slot < unique_codes.shape[0]
                hit = np.flatnonzero(slot_ok)
                hit = hit[unique_codes[slot[hit]] == target[hit]]
                if hit.size == 0:
                    continue
                starts = bucket_start[slot[hit]]
                counts = bucket_end[slot[hit]] - starts
                total = int(counts.sum())
                if total == 0:
                    continue
                left = np.repeat(hit, counts)
                offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
                flat = np.arange(total) + np.repeat(starts - offsets, counts)
                gather = order[flat]
                keep = left < gather
                if not keep.any():
                    continue
                a = left[keep]
                b = gather[keep]
                d2 = ((nodes[a] - nodes[b]) ** 2).sum(axis=1)
                close = d2 < thr2
                if close.any():
                    pairs.append(np.stack([a[close], b[close]], axis=1))

    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    edges = np.unique(np.concatenate(pairs, axis=0), axis=0)
    if edges.shape[0] > max_edges:
        raise EdgeCapError(
            f"distance graph has {edges.shape[0]} edges, above the cap of "
            f"{max_edges}; raise max_edges if the threshold is intentional"
        )
    return edges.astype(np.int64)


def _farthest_point_sample(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Greedy max-min sample of ``k`` indices; start drawn from ``rng``,
    ties broken toward the lowest index."""
    n = points.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = int(rng.integers(n))
    dist = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        cand = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(dist, cand, out=dist)
    return chosen


def augment_structured_edges(
    mesh: Mesh,
    k: int = DEFAULT_STRUCTURED_COUNT,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Build long-range skin-to-tumor edges.

    ``k`` skin-surface nodes are picked by farthest-point sampling (a
    deterministic greedy spread once the rng fixes the start node) and
    each is connected to its nearest tumor-surface node.

    Parameters
    ----------
    mesh : Mesh
        Source mesh with surface tags assigned.
    k : int
        Number of edges; 0 returns an empty set, which is the ablation
        baseline of a pure distance graph.
    rng : numpy.random.Generator, optional
        Picks the sampling start node. Defaults to a fixed seed so the
        edge set is a deterministic function of the mesh.

    Returns
    -------
    numpy.ndarray
        Shape (k, 2) int64, rows sorted ascending, ordered
        lexicographically. Every row links one skin-surface node with
        one tumor-surface node.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return np.empty((0, 2), dtype=np.int64)
    if rng is None:
        rng = np.random.default_rng(0)

    top = mesh.nodes_with(TAG_TOP_SURFACE)
    cancer = mesh.nodes_with(TAG_CANCER_SURFACE)
    if cancer.size == 0:
        raise ValueError("mesh has no tumor-surface nodes to connect")
    if k > top.size:
        raise ValueError(
            f"k={k} exceeds the {top.size} available skin-surface nodes"
        )

    picked = top[_farthest_point_sample(mesh.nodes[top], k, rng)]
    diffs = mesh.nodes[picked][:, None, :] - mesh.nodes[cancer][None, :, :]
    nearest = cancer[np.argmin((diffs**2).sum(axis=2), axis=1)]
    edges = np.stack([picked, nearest], axis=1)
    edges.sort(axis=1)
    return edges[np.lexsort((edges[:, 1], edges[:, 0]))].astype(np.int64)


def _to_csr(
    n_nodes: int, edges: np.ndarray, kinds: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetric CSR from unique undirected edges."""
    if edges.shape[0] == 0:
        return (
            np.zeros(n_nodes + 1, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.uint8),
        )
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    both_kinds = np.concatenate([kinds, kinds])
    order = np.lexsort((cols, rows))
    rows, cols, both_kinds = rows[order], cols[order], both_kinds[order]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_nodes), out=indptr[1:])
    return indptr, cols.astype(np.int64), both_kinds.astype(np.uint8)


def assemble_graph(
    mesh: Mesh,
    load_displacement: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
    k: int = DEFAULT_STRUCTURED_COUNT,
    rng: np.random.Generator | None = None,
    max_edges: int = DEFAULT_EDGE_CAP,
) -> DeformationGraph:
    """Build the full input graph for one mesh.

    Distance and long-range edge sets are united with deduplication (a
    long-range pair already inside the threshold keeps its distance
    tag), and the surface-load displacement field becomes the per-node
    feature vector.

    Parameters
    ----------
    mesh : Mesh
        Source mesh.
    load_displacement : numpy.ndarray
        Per-node 3-vector field in meters, the sparse surface-load
        encoding the network consumes.
    threshold : float
        Distance-edge radius in meters.
    k : int
        Long-range edge count.
    rng : numpy.random.Generator, optional
        Start-node source for farthest-point sampling.
    max_edges : int
        Distance-edge cap, forwarded to the edge builder.

    Returns
    -------
    DeformationGraph
        Immutable graph; reuse it across samples by swapping features
        with `with_features`, the topology only depends on reference
        positions.
    """
    U_s = np.asarray(load_displacement, dtype=np.float64)
    n = mesh.nodes.shape[0]
    if U_s.shape != (n, 3):
        raise ValueError(
            f"load_displacement must have shape ({n}, 3), got {U_s.shape}"
        )
    dist = build_distance_edges(mesh, threshold, max_edges)
    struct = augment_structured_edges(mesh, k, rng)
    if struct.shape[0]:
        # distance tag wins for pairs present in both sets
        codes_d = dist[:, 0] * n + dist[:, 1]
        codes_s = struct[:, 0] * n + struct[:, 1]
        struct = struct[~np.isin(codes_s, codes_d)]
    edges = np.concatenate([dist, struct], axis=0)
    kinds = np.concatenate(
        [
            np.full(dist.shape[0], EDGE_DISTANCE, dtype=np.uint8),
            np.full(struct.shape[0], EDGE_STRUCTURED, dtype=np.uint8),
        ]
    )
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, kinds = edges[order], kinds[order]
    indptr, indices, csr_kinds = _to_csr(n, edges, kinds)
    return DeformationGraph(
        n_nodes=n,
        edges=edges,
        edge_kinds=kinds,
        indptr=indptr,
        indices=indices,
        csr_kinds=csr_kinds,
        node_features=U_s,
    )


def with_features(
    graph: DeformationGraph, load_displacement: np.ndarray
) -> DeformationGraph:
    """Same topology, new per-node features; arrays are shared."""
    U_s = np.asarray(load_displacement, dtype=np.float64)
    if U_s.shape != (graph.n_nodes, 3):
        raise ValueError(
            f"load_displacement must have shape ({graph.n_nodes}, 3), "
            f"got {U_s.shape}"
        )
    return DeformationGraph(
        n_nodes=graph.n_nodes,
        edges=graph.edges,
        edge_kinds=graph.edge_kinds,
        indptr=graph.indptr,
        indices=graph.indices,
        csr_kinds=graph.csr_kinds,
        node_features=U_s,
    )


def dump_edges(graph: DeformationGraph) -> str:
    """Edge list as text, one `a b kind` line per undirected edge."""
    lines = [
        f"{int(a)} {int(b)} {_KIND_NAMES[int(kind)]}"
        for (a, b), kind in zip(graph.edges, graph.edge_kinds)
    ]
    return "\n".join(lines) + ("\n" if lines else "")
