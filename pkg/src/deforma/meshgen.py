"""Procedural tetrahedral phantom meshes.

Builds a hemispherical soft-tissue phantom with an embedded spherical
tumor on a structured lattice of cube-split tetrahedra, tags regions and
boundary node sets, extracts region boundary surfaces, and owns the
text mesh format.

Coordinates are meters. The hemisphere sits on the y = 0 plane with its
dome in +y; the flat base is the fixed side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# element_region values
REGION_NORMAL = 0
REGION_CANCER = 1

# node_tags bits
TAG_BOTTOM_FIXED = 1
TAG_TOP_SURFACE = 2
TAG_CANCER_SURFACE = 4
TAG_CANCER_INTERIOR = 8

# nodes with |y| below this are base-plane nodes
BASE_PLANE_TOL = 1e-6

# signed volumes at or below this are degenerate
DEGENERATE_VOLUME = 1e-12

# Six tetrahedra per lattice cube, all sharing the main diagonal from
# corner (0,0,0) to corner (1,1,1). Corner bits are (x, y, z).
_KUHN_TETS = np.array(
    [
        [0b000, 0b100, 0b110, 0b111],
        [0b000, 0b110, 0b010, 0b111],
        [0b000, 0b010, 0b011, 0b111],
        [0b000, 0b011, 0b001, 0b111],
        [0b000, 0b001, 0b101, 0b111],
        [0b000, 0b101, 0b100, 0b111],
    ],
    dtype=np.int64,
)

_CORNER_OFFSETS = np.array(
    [[(b >> 2) & 1, (b >> 1) & 1, b & 1] for b in range(8)], dtype=np.int64
)

# local faces of a positively oriented tet, wound so normals point outward
_TET_FACES = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]], dtype=np.int64)


class MeshFormatError(ValueError):
    """Raised when a mesh file fails to parse or validate."""


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry parameters for the procedural phantom.

    Parameters
    ----------
    breast_radius : float
        Radius of the hemispherical breast domain in meters.
    tumor_center : tuple of float
        Center of the spherical tumor in meters; must place the tumor
        strictly inside the hemisphere interior.
    tumor_radius : float
        Tumor radius in meters.
    target_edge_length : float
        Lattice step of the background grid in meters; sets mesh
        resolution.
    rng_seed : int
        Seed recorded with the phantom. Construction is fully
        deterministic, so the seed only identifies the spec.
    """

    breast_radius: float
    tumor_center: tuple[float, float, float]
    tumor_radius: float
    target_edge_length: float
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.breast_radius <= 0.0:
            raise ValueError("breast_radius must be positive")
        if self.target_edge_length <= 0.0:
            raise ValueError("target_edge_length must be positive")
        if self.tumor_radius < 0.0:
            raise ValueError("tumor_radius must be non-negative")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")
        c = np.asarray(self.tumor_center, dtype=np.float64)
        if c.shape != (3,):
            raise ValueError("tumor_center must be a 3-vector")
        if np.linalg.norm(c) + self.tumor_radius >= self.breast_radius:
            raise ValueError("tumor intersects the hemisphere boundary")
        if c[1] - self.tumor_radius <= 0.0:
            raise ValueError("tumor intersects the hemisphere boundary")


@dataclass
class Mesh:
    """Tagged Tet4 mesh.

    Attributes
    ----------
    nodes : ndarray, shape (n_nodes, 3)
        Node coordinates in meters.
    elements : ndarray, shape (n_elems, 4)
        Node indices of each tetrahedron, positively oriented.
    element_region : ndarray, shape (n_elems,)
        ``REGION_NORMAL`` or ``REGION_CANCER`` per element.
    node_tags : ndarray, shape (n_nodes,)
        Bitwise OR of ``TAG_*`` flags per node.
    """

    nodes: np.ndarray
    elements: np.ndarray
    element_region: np.ndarray
    node_tags: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.elements, other.elements)
            and np.array_equal(self.element_region, other.element_region)
            and np.array_equal(self.node_tags, other.node_tags)
        )

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def nodes_with(self, tag: int) -> np.ndarray:
        """Indices of nodes carrying the given tag bit, ascending."""
        return np.flatnonzero(self.node_tags & tag)


@dataclass
class SurfaceTriangulation:
    """Closed triangulated surface extracted from a mesh region.

    Attributes
    ----------
    vertices : ndarray, shape (n_verts, 3)
        Vertex coordinates in meters.
    triangles : ndarray, shape (n_tris, 3)
        Vertex indices wound so normals point out of the enclosed
        volume.
    source_nodes : ndarray, shape (n_verts,)
        Mesh node index each vertex came from.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    source_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))


def element_volumes(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Signed volumes of tetrahedra, positive for correct orientation."""
    a = nodes[elements[:, 0]]
    e = np.stack(
        [nodes[elements[:, 1]] - a, nodes[elements[:, 2]] - a, nodes[elements[:, 3]] - a],
        axis=2,
    )
    return np.linalg.det(e) / 6.0


def enclosed_volume(surface: SurfaceTriangulation) -> float:
    """Volume enclosed by a closed outward-oriented surface.

    Uses the divergence theorem: the sum of signed volumes of
    origin-anchored tetrahedra over all triangles.
    """
    v0 = surface.vertices[surface.triangles[:, 0]]
    v1 = surface.vertices[surface.triangles[:, 1]]
    v2 = surface.vertices[surface.triangles[:, 2]]
    return float(np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0)


def _normalize_winding(tris: np.ndarray) -> np.ndarray:
    """Rotate each index triple so the smallest index leads, keeping
    cyclic order, so equal windings compare equal rowwise."""
    k = np.argmin(tris, axis=1)
    idx = (np.arange(3)[None, :] + k[:, None]) % 3
    return np.take_along_axis(tris, idx, axis=1)


def _find_folds(elements: np.ndarray, vols: np.ndarray) -> np.ndarray:
    """Element indices to drop where two owners wind a shared face the
    same way (overlapping tets); keeps the larger of each pair."""
    faces = elements[:, _TET_FACES].reshape(-1, 3)
    owner = np.repeat(np.arange(len(elements)), 4)
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    order = np.argsort(inverse, kind="stable")
    inv_sorted = inverse[order]
    group_start = np.diff(inv_sorted, prepend=-1) != 0
    pair_start = np.flatnonzero(group_start & (counts[inv_sorted] == 2))
    first = order[pair_start]
    second = order[pair_start + 1]
    same = (
        _normalize_winding(faces[first]) == _normalize_winding(faces[second])
    ).all(axis=1)
    if not same.any():
        return np.empty(0, dtype=np.int64)
    ea, eb = owner[first[same]], owner[second[same]]
    return np.unique(np.where(vols[ea] <= vols[eb], ea, eb))


def _find_edge_pinches(elements: np.ndarray, vols: np.ndarray) -> np.ndarray:
    """Element indices to drop at boundary edges whose incident tets
    split into several face-connected fans; keeps the heaviest fan."""
    bfaces = _boundary_faces(elements)
    if bfaces.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    edges = np.sort(
        np.concatenate(
            [bfaces[:, [0, 1]], bfaces[:, [1, 2]], bfaces[:, [2, 0]]], axis=0
        ),
        axis=1,
    )
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    pinched = uniq[counts > 2]
    if pinched.shape[0] == 0:
        return np.empty(0, dtype=np.int64)

    drop: list[int] = []
    for a, b in pinched:
        incident = np.flatnonzero(
            (elements == a).any(axis=1) & (elements == b).any(axis=1)
        )
        # fan adjacency: two incident tets sharing a face that contains
        # the edge also share the face's third vertex, so union by it
        parent = {int(ei): int(ei) for ei in incident}

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        shared: dict[int, int] = {}
        for ei in incident:
            for v in elements[ei]:
                if v == a or v == b:
                    continue
                v = int(v)
                if v in shared:
                    ra, rb = find(shared[v]), find(int(ei))
                    if ra != rb:
                        parent[ra] = rb
                else:
                    shared[v] = int(ei)
        comps: dict[int, list[int]] = {}
        for ei in incident:
            comps.setdefault(find(int(ei)), []).append(int(ei))
        if len(comps) <= 1:
            continue
        heaviest = max(comps.values(), key=lambda c: vols[c].sum())
        for comp in comps.values():
            if comp is not heaviest:
                drop.extend(comp)
    return np.unique(np.array(drop, dtype=np.int64))


def _drop_folded_slivers(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Remove degenerate, fold-overlapped, and edge-pinched tets after
    boundary snapping.

    Snapping can flatten a tet exactly (equal-norm lattice pairs whose
    midpoint is another lattice node), fold a thin sliver over its
    neighbor so both lie on the same side of their shared face, or
    leave a boundary edge whose tet fan is split in two. Offenders are
    dropped (smaller volume first) until the complex is clean.
    """
    elements = elements.copy()
    while True:
        vols = element_volumes(nodes, elements)
        keep = np.abs(vols) > DEGENERATE_VOLUME
        if not keep.all():
            elements = elements[keep]
            continue
        flip = vols < 0.0
        if flip.any():
            elements[flip] = elements[flip][:, [0, 1, 3, 2]]
            vols = element_volumes(nodes, elements)

        folds = _find_folds(elements, vols)
        if folds.size:
            mask = np.ones(len(elements), dtype=bool)
            mask[folds] = False
            elements = elements[mask]
            continue

        pinches = _find_edge_pinches(elements, vols)
        if pinches.size:
            mask = np.ones(len(elements), dtype=bool)
            mask[pinches] = False
            elements = elements[mask]
            continue

        return elements


def _boundary_faces(elements: np.ndarray) -> np.ndarray:
    """Outward-oriented faces owned by exactly one element.

    Returns an array of mesh node index triples preserving the winding
    of the owning tetrahedron.
    """
    faces = elements[:, _TET_FACES]          # (m, 4, 3), oriented
    faces = faces.reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inverse] == 1]


def _check_closed_manifold(triangles: np.ndarray) -> None:
    """Every directed edge must appear exactly once over the surface."""
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )
    directed = np.unique(edges, axis=0)
    if directed.shape[0] != edges.shape[0]:
        raise ValueError("extracted surface is not a manifold: repeated directed edge")
    flipped = directed[:, ::-1]
    both = np.concatenate([directed, flipped], axis=0)
    if np.unique(both, axis=0).shape[0] != directed.shape[0]:
        raise ValueError("extracted surface is not closed: unmatched edge")


def _connected_components(n_nodes: int, elements: np.ndarray) -> int:
    """Number of components under shared-face element adjacency."""
    parent = np.arange(n_nodes, dtype=np.int64)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for elem in elements:
        r0 = find(elem[0])
        for k in elem[1:]:
            rk = find(k)
            if rk != r0:
                parent[rk] = r0
    used = np.unique(elements)
    return len({find(i) for i in used})


def validate_mesh(mesh: Mesh) -> None:
    """Check structural mesh invariants, raising ``ValueError`` on failure."""
    n, m = mesh.n_nodes, mesh.n_elements
    if mesh.nodes.shape != (n, 3):
        raise ValueError("nodes must have shape (n, 3)")
    if mesh.elements.shape != (m, 4):
        raise ValueError("elements must have shape (m, 4)")
    if mesh.element_region.shape != (m,) or mesh.node_tags.shape != (n,):
        raise ValueError("tag arrays do not match mesh dimensions")
    if m == 0:
        raise ValueError("mesh has no elements")
    if mesh.elements.min() < 0 or mesh.elements.max() >= n:
        raise ValueError("element references a node index out of range")
    vols = element_volumes(mesh.nodes, mesh.elements)
    if not (vols > DEGENERATE_VOLUME).all():
        worst = int(np.argmin(vols))
        raise ValueError(
            f"element {worst} is degenerate or inverted (volume {vols[worst]:.3e})"
        )
    fixed = mesh.node_tags & TAG_BOTTOM_FIXED
    top = mesh.node_tags & TAG_TOP_SURFACE
    if np.any((fixed > 0) & (top > 0)):
        raise ValueError("a node is tagged both BottomFixed and TopSurface")
    cancer_elems = mesh.elements[mesh.element_region == REGION_CANCER]
    cancer_nodes = np.unique(cancer_elems)
    surface_tagged = mesh.nodes_with(TAG_CANCER_SURFACE)
    if not np.isin(surface_tagged, cancer_nodes).all():
        raise ValueError("CancerSurface tag on a node outside all Cancer elements")
    if _connected_components(n, mesh.elements) != 1:
        raise ValueError("mesh is not a single connected component")


def build_phantom(spec: PhantomSpec) -> Mesh:
    """Generate the tagged hemisphere-with-tumor phantom mesh.

    A structured lattice of cube-split tetrahedra is clipped to the
    hemisphere: every tetrahedron with at least one lattice node
    strictly inside the ball is kept, and kept nodes lying outside are
    snapped radially onto the sphere. Elements whose centroid falls
    within ``tumor_radius`` of ``tumor_center`` are tagged
    ``REGION_CANCER``.

    Parameters
    ----------
    spec : PhantomSpec
        Validated geometry parameters.

    Returns
    -------
    Mesh
        Mesh satisfying all structural invariants. Identical specs
        produce bit-identical meshes.

    Raises
    ------
    ValueError
        If the spec is rejected or the tumor captures no elements.
    """
    h = spec.target_edge_length
    radius = spec.breast_radius
    q = int(np.ceil(radius / h))

    ii, jj, kk = np.meshgrid(
        np.arange(-q, q), np.arange(0, q), np.arange(-q, q), indexing="ij"
    )
    cubes = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)

    # keep cubes whose closest point to the origin is inside the ball
    nearest = np.maximum(np.abs((cubes + 0.5) * h) - 0.5 * h, 0.0)
    cubes = cubes[np.linalg.norm(nearest, axis=1) <= radius]

    corners = cubes[:, None, :] + _CORNER_OFFSETS[None, :, :]      # (nc, 8, 3)
    tets = corners[:, _KUHN_TETS, :].reshape(-1, 4, 3)             # (nt, 4, 3)

    lattice_nodes, elements = np.unique(
        tets.reshape(-1, 3), axis=0, return_inverse=True
    )
    elements = elements.reshape(-1, 4)

    rho = np.linalg.norm(lattice_nodes * h, axis=1)
    keep = (rho[elements] < radius).any(axis=1)
    elements = elements[keep]

    nodes = lattice_nodes * h
    outside = rho > radius
    nodes = nodes.copy()
    nodes[outside] *= (radius / rho[outside])[:, None]

    elements = _drop_folded_slivers(nodes, elements)

    # drop unused nodes, preserving lexicographic lattice order
    used = np.unique(elements)
    remap = np.full(lattice_nodes.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.shape[0])
    elements = remap[elements]
    nodes = nodes[used]

    centroids = nodes[elements].mean(axis=1)
    tumor_center = np.asarray(spec.tumor_center, dtype=np.float64)
    in_tumor = (
        np.linalg.norm(centroids - tumor_center, axis=1) <= spec.tumor_radius
    )
    element_region = np.where(in_tumor, REGION_CANCER, REGION_NORMAL).astype(np.int64)
    if not in_tumor.any():
        raise ValueError("no cancer elements: tumor sphere captured no centroids")

    node_tags = np.zeros(nodes.shape[0], dtype=np.int64)
    base = np.abs(nodes[:, 1]) < BASE_PLANE_TOL
    node_tags[base] |= TAG_BOTTOM_FIXED

    boundary = np.unique(_boundary_faces(elements))
    on_top = np.zeros(nodes.shape[0], dtype=bool)
    on_top[boundary] = True
    on_top &= ~base
    node_tags[on_top] |= TAG_TOP_SURFACE

    cancer_boundary = np.unique(_boundary_faces(elements[in_tumor]))
    node_tags[cancer_boundary] |= TAG_CANCER_SURFACE
    cancer_nodes = np.unique(elements[in_tumor])
    interior = np.setdiff1d(cancer_nodes, cancer_boundary, assume_unique=True)
    node_tags[interior] |= TAG_CANCER_INTERIOR

    mesh = Mesh(nodes, elements, element_region, node_tags)
    validate_mesh(mesh)
    return mesh


def extract_region_surface(mesh: Mesh, region: int | None) -> SurfaceTriangulation:
    """Extract the closed boundary surface of an element region.

    Parameters
    ----------
    mesh : Mesh
        Source mesh.
    region : int or None
        ``REGION_NORMAL`` or ``REGION_CANCER`` to select a tagged
        element subset, or ``None`` for the whole mesh.

    Returns
    -------
    SurfaceTriangulation
        Outward-oriented closed surface of the selected elements.

    Raises
    ------
    ValueError
        If the region is empty or its boundary is not a closed
        manifold.
    """
    if region is None:
        subset = mesh.elements
    else:
        subset = mesh.elements[mesh.element_region == region]
    if subset.shape[0] == 0:
        raise ValueError(f"region {region!r} has no elements")

    faces = _boundary_faces(subset)
    _check_closed_manifold(faces)

    source_nodes, triangles = np.unique(faces.reshape(-1), return_inverse=True)
    triangles = triangles.reshape(-1, 3).astype(np.int64)
    surface = SurfaceTriangulation(
        vertices=mesh.nodes[source_nodes],
        triangles=triangles,
        source_nodes=source_nodes.astype(np.int64),
    )
    if enclosed_volume(surface) <= 0.0:
        raise ValueError("extracted surface is not outward-oriented")
    return surface


def _serialize_mesh(mesh: Mesh) -> str:
    lines = [f"MESH v1 {mesh.n_nodes} {mesh.n_elements}"]
    for p, tag in zip(mesh.nodes, mesh.node_tags):
        x, y, z = (float(v) for v in p)
        lines.append(f"{x!r} {y!r} {z!r} {int(tag)}")
    for elem, reg in zip(mesh.elements, mesh.element_region):
        lines.append(f"{elem[0]} {elem[1]} {elem[2]} {elem[3]} {int(reg)}")
    return "\n".join(lines) + "\n"


def mesh_hash(mesh: Mesh) -> str:
    """Content hash (sha256 hex) of the canonical mesh serialization."""
    import hashlib

    return hashlib.sha256(_serialize_mesh(mesh).encode("ascii")).hexdigest()


def write_mesh(mesh: Mesh, path: str) -> None:
    """Serialize a mesh to the versioned text format.

    The format is line-oriented: a header ``MESH v1 <n_nodes>
    <n_elems>``, then one ``x y z tagbits`` line per node with
    round-trip-exact decimal floats, then one ``i0 i1 i2 i3 region``
    line per element with 0-based indices.
    """
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_serialize_mesh(mesh))


def read_mesh(path: str) -> Mesh:
    """Parse a mesh file written by :func:`write_mesh`.

    Raises
    ------
    MeshFormatError
        On any structural problem, naming the offending line.
    """
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise MeshFormatError("missing header: file is empty")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "MESH" or header[1] != "v1":
        raise MeshFormatError(f"line 1: malformed header {lines[0]!r}")
    try:
        n_nodes, n_elems = int(header[2]), int(header[3])
    except ValueError as exc:
        raise MeshFormatError(f"line 1: non-integer counts in header") from exc
    if len(lines) < 1 + n_nodes + n_elems:
        raise MeshFormatError(
            f"file ends after line {len(lines)}, expected {1 + n_nodes + n_elems} lines"
        )

    nodes = np.empty((n_nodes, 3), dtype=np.float64)
    node_tags = np.empty(n_nodes, dtype=np.int64)
    for i in range(n_nodes):
        lineno = 2 + i
        parts = lines[1 + i].split()
        if len(parts) != 4:
            raise MeshFormatError(f"line {lineno}: expected 'x y z tagbits'")
        try:
            nodes[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
            node_tags[i] = int(parts[3])
        except ValueError as exc:
            raise MeshFormatError(f"line {lineno}: unparsable node entry") from exc

    elements = np.empty((n_elems, 4), dtype=np.int64)
    element_region = np.empty(n_elems, dtype=np.int64)
    for e in range(n_elems):
        lineno = 2 + n_nodes + e
        parts = lines[1 + n_nodes + e].split()
        if len(parts) != 5:
            raise MeshFormatError(f"line {lineno}: expected 'i0 i1 i2 i3 region'")
        try:
            elements[e] = [int(p) for p in parts[:4]]
            element_region[e] = int(parts[4])
        except ValueError as exc:
            raise MeshFormatError(f"line {lineno}: unparsable element entry") from exc
        if (elements[e] < 0).any() or (elements[e] >= n_nodes).any():
            raise MeshFormatError(
                f"line {lineno}: element {e} references node index out of range"
            )

    return Mesh(nodes, elements, element_region, node_tags)
