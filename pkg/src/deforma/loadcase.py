"""Randomized surface load cases and supervised dataset generation.

Samples distributed compression loads on the phantom's free surface,
runs the finite-element solver for each, and packages (U_s, U) pairs
with train/validation/test splits: U is the full displacement field, U_s
its restriction to the observable top surface.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .hyperfem import (
    LinearSolveError,
    Materials,
    NonConvergenceError,
    SingularConfigurationError,
    SolveOptions,
    assemble,
    bottom_fixed_bc,
    solve_newton,
)
from .meshgen import (
    Mesh,
    TAG_CANCER_INTERIOR,
    TAG_CANCER_SURFACE,
    TAG_TOP_SURFACE,
    mesh_hash,
)

SPLIT_TRAIN = 0
SPLIT_VAL = 1
SPLIT_TEST = 2

_DATASET_MAGIC = b"DDS1"

# resample budget per accepted case before giving up
_MAX_RETRIES = 100


@dataclass(frozen=True)
class LoadSpec:
    """Distribution of randomized load cases.

    Parameters
    ----------
    n_locations : int
        Number of anchor centers on the top surface; half are the
        nodes nearest the tumor, half are spread by farthest-point
        sampling.
    n_samples_per_location : int
        Cases drawn per anchor; total cases =
        ``n_locations * n_samples_per_location``.
    radius_range : (float, float)
        Load footprint radius bounds in meters.
    magnitude_range : (float, float)
        Total force magnitude bounds in newtons.
    rng_seed : int
    """

    n_locations: int = 10
    n_samples_per_location: int = 300
    radius_range: tuple[float, float] = (0.02, 0.032)
    magnitude_range: tuple[float, float] = (120.0, 240.0)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_locations < 1 or self.n_samples_per_location < 1:
            raise ValueError("location and sample counts must be positive")
        if not (0.0 < self.radius_range[0] <= self.radius_range[1]):
            raise ValueError("radius_range must be ordered and positive")
        if not (0.0 <= self.magnitude_range[0] <= self.magnitude_range[1]):
            raise ValueError("magnitude_range must be ordered and non-negative")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")

    @property
    def n_cases(self) -> int:
        return self.n_locations * self.n_samples_per_location


@dataclass
class LoadCase:
    """One distributed surface load.

    ``nodal_forces`` sums to ``magnitude * direction`` and is supported
    only on top-surface nodes inside the load sphere.
    """

    center: np.ndarray
    direction: np.ndarray
    magnitude: float
    radius: float
    nodal_forces: np.ndarray


@dataclass
class Sample:
    """One supervised pair: masked surface field and full field."""

    u_s: np.ndarray
    u: np.ndarray
    case: LoadCase


@dataclass
class Dataset:
    """FE-generated training corpus bound to one mesh.

    Attributes
    ----------
    mesh_ref : str
        Content hash of the generating mesh.
    samples : list of Sample
    split : ndarray of uint8
        ``SPLIT_TRAIN``/``SPLIT_VAL``/``SPLIT_TEST`` per sample.
    failure_count : int
        Solver failures that were resampled during generation.
    """

    mesh_ref: str
    samples: list[Sample] = field(default_factory=list)
    split: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint8))
    failure_count: int = 0

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def indices_of(self, split_tag: int) -> np.ndarray:
        return np.flatnonzero(self.split == split_tag)


def _tumor_centroid(mesh: Mesh) -> np.ndarray:
    cancer = mesh.nodes_with(TAG_CANCER_SURFACE | TAG_CANCER_INTERIOR)
    if cancer.size == 0:
        raise ValueError("mesh has no cancer-tagged nodes")
    return mesh.nodes[cancer].mean(axis=0)


def anchor_locations(mesh: Mesh, spec: LoadSpec) -> np.ndarray:
    """Deterministic anchor node indices for load centers.

    The first half are the top-surface nodes closest to the tumor
    centroid; the rest are picked by farthest-point sampling over the
    top surface (each new anchor maximizes its minimum distance to all
    previously chosen anchors).

    Returns
    -------
    ndarray of int, shape (spec.n_locations,)
    """
    top = mesh.nodes_with(TAG_TOP_SURFACE)
    if top.size == 0:
        raise ValueError("mesh has no TopSurface nodes")
    if top.size < spec.n_locations:
        raise ValueError("fewer top-surface nodes than requested anchor locations")

    centroid = _tumor_centroid(mesh)
    n_near = spec.n_locations // 2
    order = np.argsort(np.linalg.norm(mesh.nodes[top] - centroid, axis=1), kind="stable")
    chosen = list(top[order[:n_near]])

    min_dist = np.min(
        np.linalg.norm(mesh.nodes[top][:, None, :] - mesh.nodes[chosen][None, :, :], axis=2),
        axis=1,
    )
    while len(chosen) < spec.n_locations:
        pick = int(np.argmax(min_dist))
        chosen.append(int(top[pick]))
        d_new = np.linalg.norm(mesh.nodes[top] - mesh.nodes[top[pick]], axis=1)
        min_dist = np.minimum(min_dist, d_new)
    return np.array(chosen, dtype=np.int64)


def distribute_force(
    mesh: Mesh,
    center: np.ndarray,
    direction: np.ndarray,
    magnitude: float,
    radius: float,
) -> np.ndarray:
    """Spread a total force over top-surface nodes near a center.

    Nodes inside the sphere of the given radius receive weights
    ``w_i = 1 - d_i / radius`` (``d_i`` = distance to the center),
    normalized to sum to one, so the nodal forces add up to exactly
    ``magnitude * direction``.

    Returns
    -------
    ndarray, shape (n_nodes, 3)
        Nodal force field, zero outside the loaded node set.

    Raises
    ------
    ValueError
        If no top-surface node lies inside the sphere.
    """
    top = mesh.nodes_with(TAG_TOP_SURFACE)
    d = np.linalg.norm(mesh.nodes[top] - np.asarray(center, float), axis=1)
    inside = d < radius
    if not inside.any():
        raise ValueError("no top-surface node inside the load sphere")
    weights = 1.0 - d[inside] / radius
    weights /= weights.sum()
    forces = np.zeros((mesh.n_nodes, 3))
    forces[top[inside]] = weights[:, None] * (
        float(magnitude) * np.asarray(direction, float)
    )[None, :]
    return forces


def _hemisphere_direction(rng: np.random.Generator) -> np.ndarray:
    """Unit vector uniform on the y < 0 hemisphere."""
    while True:
        v = rng.standard_normal(3)
        norm = np.linalg.norm(v)
        if norm < 1e-12 or v[1] == 0.0:
            continue
        v /= norm
        if v[1] > 0.0:
            v[1] = -v[1]
        return v


def sample_load(
    rng: np.random.Generator,
    mesh: Mesh,
    spec: LoadSpec,
    anchors: np.ndarray | None = None,
) -> LoadCase:
    """Draw one load case from the configured distributions.

    The center comes from the anchor set, the direction is uniform on
    the downward (y < 0) hemisphere, and magnitude and radius are
    uniform in their ranges. Draws that fail to cover any surface node
    are retried a bounded number of times.
    """
    if anchors is None:
        anchors = anchor_locations(mesh, spec)
    for _ in range(_MAX_RETRIES):
        center = mesh.nodes[anchors[rng.integers(len(anchors))]]
        direction = _hemisphere_direction(rng)
        magnitude = rng.uniform(*spec.magnitude_range)
        radius = rng.uniform(*spec.radius_range)
        try:
            forces = distribute_force(mesh, center, direction, magnitude, radius)
        except ValueError:
            continue
        return LoadCase(
            center=center.copy(),
            direction=direction,
            magnitude=float(magnitude),
            radius=float(radius),
            nodal_forces=forces,
        )
    raise ValueError(f"no admissible load case found in {_MAX_RETRIES} draws")


def mask_surface(U: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Zero a displacement field everywhere off the top surface."""
    U = np.asarray(U, dtype=np.float64)
    if U.shape != (mesh.n_nodes, 3):
        raise ValueError("U must have shape (n_nodes, 3)")
    masked = np.zeros_like(U)
    top = mesh.nodes_with(TAG_TOP_SURFACE)
    masked[top] = U[top]
    return masked


def assign_split(n_samples: int, rng_seed: int) -> np.ndarray:
    """Deterministic 80/10/10 split tags via a seeded shuffle."""
    n_train = int(0.8 * n_samples)
    n_val = int(0.1 * n_samples)
    tags = np.full(n_samples, SPLIT_TEST, dtype=np.uint8)
    order = np.random.default_rng([rng_seed, 1]).permutation(n_samples)
    tags[order[:n_train]] = SPLIT_TRAIN
    tags[order[n_train : n_train + n_val]] = SPLIT_VAL
    return tags


def build_dataset(
    mesh: Mesh,
    mat: Materials,
    spec: LoadSpec,
    opts: SolveOptions = SolveOptions(),
) -> Dataset:
    """Generate the supervised dataset by repeated FE solves.

    Each accepted case stores ``(mask_surface(U), U)``. Solver failures
    (non-convergence, element inversion) are resampled; generation
    aborts if the failure rate exceeds 20%.

    Returns
    -------
    Dataset

    Raises
    ------
    RuntimeError
        If too many solves fail.
    """
    rng = np.random.default_rng(spec.rng_seed)
    anchors = anchor_locations(mesh, spec)
    bc = bottom_fixed_bc(mesh)
    n_cases = spec.n_cases

    samples: list[Sample] = []
    failures = 0
    attempts = 0
    last_error: Exception | None = None
    while len(samples) < n_cases:
        case = sample_load(rng, mesh, spec, anchors)
        attempts += 1
        try:
            U, _ = solve_newton(mesh, mat, case.nodal_forces, bc, opts)
        except (NonConvergenceError, SingularConfigurationError, LinearSolveError) as exc:
            failures += 1
            last_error = exc
            if failures >= 5 and failures > 0.2 * attempts:
                raise RuntimeError(
                    f"dataset generation aborted: {failures}/{attempts} solves "
                    f"failed (last: {exc})"
                ) from exc
            continue
        samples.append(Sample(u_s=mask_surface(U, mesh), u=U, case=case))

    return Dataset(
        mesh_ref=mesh_hash(mesh),
        samples=samples,
        split=assign_split(n_cases, spec.rng_seed),
        failure_count=failures,
    )


def verify_equilibrium(
    mesh: Mesh,
    mat: Materials,
    sample: Sample,
    opts: SolveOptions = SolveOptions(),
) -> float:
    """Residual norm of a stored sample re-assembled at its solution.

    Used to re-check that stored fields satisfy equilibrium within the
    solver tolerance.
    """
    bc = bottom_fixed_bc(mesh)
    system = assemble(mesh, mat, sample.u, bc, external=sample.case.nodal_forces)
    return float(np.linalg.norm(system.external_force - system.internal_force))


def _pack_array(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write the binary dataset format.

    Layout: magic ``DDS1``, little-endian uint32 sample and node
    counts, the 64-hex-char mesh hash, then per sample a split byte,
    the case parameters (center, direction, magnitude, radius), the
    nodal forces, U_s, and U as float64 arrays. A sha256 digest of
    everything preceding it closes the file.
    """
    if dataset.n_samples == 0:
        raise ValueError("refusing to save an empty dataset")
    n_nodes = dataset.samples[0].u.shape[0]
    blob = bytearray()
    blob += _DATASET_MAGIC
    blob += struct.pack("<II", dataset.n_samples, n_nodes)
    blob += struct.pack("<I", dataset.failure_count)
    blob += dataset.mesh_ref.encode("ascii")
    for sample, tag in zip(dataset.samples, dataset.split):
        case = sample.case
        blob += struct.pack("<B", int(tag))
        blob += _pack_array(case.center)
        blob += _pack_array(case.direction)
        blob += struct.pack("<dd", case.magnitude, case.radius)
        blob += _pack_array(case.nodal_forces)
        blob += _pack_array(sample.u_s)
        blob += _pack_array(sample.u)
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_dataset(path: str) -> Dataset:
    """Read and integrity-check a dataset file.

    Raises
    ------
    ValueError
        On bad magic, truncation, or digest mismatch.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != _DATASET_MAGIC:
        raise ValueError("not a dataset file: bad magic")
    digest = blob[-32:]
    body = blob[:-32]
    if hashlib.sha256(body).digest() != digest:
        raise ValueError("dataset file corrupted: sha256 mismatch")

    off = 4
    n_samples, n_nodes = struct.unpack_from("<II", body, off)
    off += 8
    (failure_count,) = struct.unpack_from("<I", body, off)
    off += 4
    mesh_ref = body[off : off + 64].decode("ascii")
    off += 64

    def take(count: int) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=off)
        off += 8 * count
        return arr.astype(np.float64)

    samples = []
    split = np.empty(n_samples, dtype=np.uint8)
    for i in range(n_samples):
        split[i] = body[off]
        off += 1
        center = take(3)
        direction = take(3)
        magnitude, radius = struct.unpack_from("<dd", body, off)
        off += 16
        forces = take(3 * n_nodes).reshape(n_nodes, 3)
        u_s = take(3 * n_nodes).reshape(n_nodes, 3)
        u = take(3 * n_nodes).reshape(n_nodes, 3)
        samples.append(
            Sample(
                u_s=u_s,
                u=u,
                case=LoadCase(center, direction, float(magnitude), float(radius), forces),
            )
        )
    if off != len(body):
        raise ValueError("dataset file corrupted: trailing bytes")
    return Dataset(
        mesh_ref=mesh_ref, samples=samples, split=split, failure_count=failure_count
    )
