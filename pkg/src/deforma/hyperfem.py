"""Total-Lagrangian finite elements for Mooney-Rivlin solids.

Implements the incremental equilibrium equation K dU = R - F over Tet4
meshes: constant-strain elements with one-point quadrature, a
nearly-incompressible two-parameter Mooney-Rivlin law with volumetric
penalty, element tangent = material (linear) + geometric (nonlinear)
stiffness, sparse assembly over free DOFs, and Newton-Raphson iteration
under a ramped load.

Displacement fields and nodal force fields are plain ``(n_nodes, 3)``
float64 arrays in meters and newtons. Stress Voigt order is
``(11, 22, 33, 12, 23, 13)``; strain slots carry engineering shears
(2*E12 etc.), stress slots carry tensor components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .meshgen import Mesh, REGION_CANCER, REGION_NORMAL, TAG_BOTTOM_FIXED

# tensor index pairs of the Voigt slots
_VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2))

# d(I2)/dE second derivative, constant (engineering-shear convention)
_I2EE = np.array(
    [
        [0.0, 4.0, 4.0, 0.0, 0.0, 0.0],
        [4.0, 0.0, 4.0, 0.0, 0.0, 0.0],
        [4.0, 4.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, -2.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, -2.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, -2.0],
    ]
)


class SingularConfigurationError(RuntimeError):
    """An element reached a non-positive Jacobian (inverted element)."""


class LinearSolveError(RuntimeError):
    """The tangent could not be factorized."""


class NonConvergenceError(RuntimeError):
    """Newton iteration exhausted max_iterations.

    Attributes
    ----------
    residual : float
        Residual norm at the last iterate.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class MaterialModel:
    """Two-parameter Mooney-Rivlin solid with volumetric penalty.

    The strain energy is ``W = c10*(I1_iso - 3) + c01*(I2_iso - 3)
    + bulk_kappa/2 * (J - 1)**2`` with isochoric invariants. The
    small-strain shear modulus is ``2*(c10 + c01)``.

    Parameters
    ----------
    c10, c01 : float
        Mooney-Rivlin constants in Pa.
    bulk_kappa : float
        Volumetric penalty modulus in Pa; must dominate the shear
        response (``>= 100*(c10 + c01)``) for near-incompressibility.
    """

    c10: float
    c01: float
    bulk_kappa: float = 1e6

    def __post_init__(self) -> None:
        if self.c10 <= 0.0 or self.c01 <= 0.0:
            raise ValueError("c10 and c01 must be positive")
        if self.bulk_kappa < 100.0 * (self.c10 + self.c01):
            raise ValueError("bulk_kappa must be at least 100*(c10+c01)")

    @property
    def shear_modulus(self) -> float:
        return 2.0 * (self.c10 + self.c01)


# constants for breast phantom tissue groups, Pa; the stiffer cancer
# group carries a proportionally larger penalty modulus so both tissues
# share the same bulk-to-shear ratio
NORMAL_TISSUE = MaterialModel(c10=2000.0, c01=1333.0, bulk_kappa=1e6)
CANCER_TISSUE = MaterialModel(c10=10000.0, c01=6667.0, bulk_kappa=5e6)

Materials = Union[MaterialModel, Mapping[int, MaterialModel]]


@dataclass
class ElementWorkspace:
    """Per-element quantities at the current displacement state.

    Attributes
    ----------
    deformation_gradient : ndarray, shape (3, 3)
    pk2_stress : ndarray, shape (3, 3)
        Second Piola-Kirchhoff stress, Pa.
    strain_disp_linear : ndarray, shape (6, 12)
        Displacement-dependent strain-displacement matrix mapping nodal
        displacement increments to Green-Lagrange strain increments.
    geometric_stiffness : ndarray, shape (12, 12)
        Initial-stress (nonlinear) stiffness contribution, N/m.
    internal_force : ndarray, shape (12,)
        Element internal force, N.
    """

    deformation_gradient: np.ndarray
    pk2_stress: np.ndarray
    strain_disp_linear: np.ndarray
    geometric_stiffness: np.ndarray
    internal_force: np.ndarray


@dataclass
class SparseSystem:
    """Assembled equilibrium system over free DOFs.

    Attributes
    ----------
    tangent : scipy.sparse.csr_matrix
        Symmetric tangent stiffness, free DOFs only, N/m.
    internal_force : ndarray
        Internal force on free DOFs, N.
    external_force : ndarray
        External force on free DOFs, N.
    free_dofs : ndarray
        Indices into the flattened (3*n_nodes,) DOF vector.
    n_nodes : int
    """

    tangent: sp.csr_matrix
    internal_force: np.ndarray
    external_force: np.ndarray
    free_dofs: np.ndarray
    n_nodes: int


@dataclass(frozen=True)
class SolveOptions:
    """Newton-Raphson controls.

    The convergence test is ``|R - F| < max(residual_tol_abs,
    residual_tol_rel * |R|)`` on free DOFs, per load increment.
    """

    max_iterations: int = 30
    residual_tol_abs: float = 1e-6
    residual_tol_rel: float = 1e-8
    n_load_increments: int = 5

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.residual_tol_abs <= 0.0 or self.residual_tol_rel <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.n_load_increments < 1:
            raise ValueError("n_load_increments must be >= 1")


@dataclass
class SolveStats:
    """Convergence record of one Newton solve.

    ``iterations[i]`` counts residual evaluations in increment ``i``;
    ``residual_history[i]`` holds the corresponding residual norms.
    """

    iterations: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    final_residual: float = np.inf


def bottom_fixed_bc(mesh: Mesh) -> np.ndarray:
    """Boolean (n_nodes, 3) mask fixing all DOFs of BottomFixed nodes."""
    fixed = np.zeros((mesh.n_nodes, 3), dtype=bool)
    fixed[mesh.nodes_with(TAG_BOTTOM_FIXED)] = True
    return fixed


def _material_arrays(mesh: Mesh, mat: Materials) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-element (c10, c01, kappa) arrays from a model or region map."""
    m = mesh.n_elements
    if isinstance(mat, MaterialModel):
        return (
            np.full(m, mat.c10),
            np.full(m, mat.c01),
            np.full(m, mat.bulk_kappa),
        )
    regions = np.unique(mesh.element_region)
    missing = [int(r) for r in regions if int(r) not in mat]
    if missing:
        raise ValueError(f"no material supplied for regions {missing}")
    c10 = np.empty(m)
    c01 = np.empty(m)
    kappa = np.empty(m)
    for region, model in mat.items():
        sel = mesh.element_region == region
        c10[sel], c01[sel], kappa[sel] = model.c10, model.c01, model.bulk_kappa
    return c10, c01, kappa


def _shape_gradients(nodes: np.ndarray, elements: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference shape-function gradients dN (m,4,3) and volumes (m,)."""
    a = nodes[elements[:, 0]]
    edge = np.stack(
        [nodes[elements[:, k]] - a for k in (1, 2, 3)], axis=2
    )  # columns are edge vectors
    vol = np.linalg.det(edge) / 6.0
    dinv = np.linalg.inv(edge)  # rows are gradients of N1..N3
    dn = np.empty((elements.shape[0], 4, 3))
    dn[:, 1:, :] = dinv
    dn[:, 0, :] = -dinv.sum(axis=1)
    return dn, vol


def _stress_and_tangent(
    cv: np.ndarray, c10: np.ndarray, c01: np.ndarray, kappa: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batched PK2 stress (m,6) and material tangent (m,6,6).

    ``cv`` holds right Cauchy-Green components per Voigt slot. Both
    outputs use the engineering-shear strain convention, so the tangent
    maps Voigt strain increments (with doubled shears) to Voigt stress.
    """
    cxx, cyy, czz, cxy, cyz, cxz = (cv[:, k] for k in range(6))
    m = cv.shape[0]

    i1 = cxx + cyy + czz
    i2 = cxx * cyy + cxx * czz + cyy * czz - cxy**2 - cyz**2 - cxz**2
    i3 = (
        cxx * cyy * czz
        + 2.0 * cxy * cyz * cxz
        - cxx * cyz**2
        - cyy * cxz**2
        - czz * cxy**2
    )
    if np.any(i3 <= 0.0):
        bad = int(np.argmin(i3))
        raise SingularConfigurationError(
            f"non-positive det(C) = {i3[bad]:.3e} at element {bad}"
        )

    zeros = np.zeros(m)
    i1e = np.stack([np.full(m, 2.0)] * 3 + [zeros] * 3, axis=1)
    i2e = 2.0 * np.stack(
        [cyy + czz, cxx + czz, cxx + cyy, -cxy, -cyz, -cxz], axis=1
    )
    i3e = 2.0 * np.stack(
        [
            cyy * czz - cyz**2,
            cxx * czz - cxz**2,
            cxx * cyy - cxy**2,
            cxz * cyz - czz * cxy,
            cxy * cxz - cxx * cyz,
            cxy * cyz - cyy * cxz,
        ],
        axis=1,
    )

    i3ee = np.zeros((m, 6, 6))
    i3ee[:, 0, 1] = i3ee[:, 1, 0] = 4.0 * czz
    i3ee[:, 0, 2] = i3ee[:, 2, 0] = 4.0 * cyy
    i3ee[:, 1, 2] = i3ee[:, 2, 1] = 4.0 * cxx
    i3ee[:, 0, 4] = i3ee[:, 4, 0] = -4.0 * cyz
    i3ee[:, 1, 5] = i3ee[:, 5, 1] = -4.0 * cxz
    i3ee[:, 2, 3] = i3ee[:, 3, 2] = -4.0 * cxy
    i3ee[:, 3, 3] = -2.0 * czz
    i3ee[:, 4, 4] = -2.0 * cxx
    i3ee[:, 5, 5] = -2.0 * cyy
    i3ee[:, 3, 4] = i3ee[:, 4, 3] = 2.0 * cxz
    i3ee[:, 3, 5] = i3ee[:, 5, 3] = 2.0 * cyz
    i3ee[:, 4, 5] = i3ee[:, 5, 4] = 2.0 * cxy

    p13 = i3 ** (-1.0 / 3.0)
    p23 = i3 ** (-2.0 / 3.0)
    p43 = p13 / i3
    p53 = p23 / i3
    p73 = p43 / i3
    p83 = p53 / i3
    j3 = np.sqrt(i3)

    # first derivatives of the reduced invariants
    j1e = p13[:, None] * i1e - (i1 * p43 / 3.0)[:, None] * i3e
    j2e = p23[:, None] * i2e - (2.0 * i2 * p53 / 3.0)[:, None] * i3e
    j3e = (0.5 / j3)[:, None] * i3e

    def outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a[:, :, None] * b[:, None, :]

    j1ee = (
        (4.0 * i1 * p73 / 9.0)[:, None, None] * outer(i3e, i3e)
        - (p43 / 3.0)[:, None, None] * (outer(i1e, i3e) + outer(i3e, i1e))
        - (i1 * p43 / 3.0)[:, None, None] * i3ee
    )
    j2ee = (
        (10.0 * i2 * p83 / 9.0)[:, None, None] * outer(i3e, i3e)
        - (2.0 * p53 / 3.0)[:, None, None] * (outer(i2e, i3e) + outer(i3e, i2e))
        + p23[:, None, None] * _I2EE
        - (2.0 * i2 * p53 / 3.0)[:, None, None] * i3ee
    )
    j3ee = (
        -(0.25 * i3 ** (-1.5))[:, None, None] * outer(i3e, i3e)
        + (0.5 / j3)[:, None, None] * i3ee
    )

    stress = (
        c10[:, None] * j1e
        + c01[:, None] * j2e
        + (kappa * (j3 - 1.0))[:, None] * j3e
    )
    tangent = (
        c10[:, None, None] * j1ee
        + c01[:, None, None] * j2ee
        + kappa[:, None, None] * (outer(j3e, j3e) + (j3 - 1.0)[:, None, None] * j3ee)
    )
    return stress, tangent


def _voigt_to_matrix(sv: np.ndarray) -> np.ndarray:
    """(m,6) Voigt stress to (m,3,3) symmetric matrices."""
    s = np.empty(sv.shape[:-1] + (3, 3))
    s[..., 0, 0] = sv[..., 0]
    s[..., 1, 1] = sv[..., 1]
    s[..., 2, 2] = sv[..., 2]
    s[..., 0, 1] = s[..., 1, 0] = sv[..., 3]
    s[..., 1, 2] = s[..., 2, 1] = sv[..., 4]
    s[..., 0, 2] = s[..., 2, 0] = sv[..., 5]
    return s


def mooney_rivlin_response(F: np.ndarray, mat: MaterialModel) -> tuple[np.ndarray, np.ndarray]:
    """Stress and material tangent at one deformation gradient.

    Parameters
    ----------
    F : ndarray, shape (3, 3)
        Deformation gradient with positive determinant.
    mat : MaterialModel

    Returns
    -------
    pk2 : ndarray, shape (3, 3)
        Second Piola-Kirchhoff stress in Pa.
    tangent : ndarray, shape (6, 6)
        Derivative of Voigt stress with respect to Voigt Green-Lagrange
        strain with engineering shears, i.e. ``tangent[i, j] =
        dS_i/dE_j`` for slots ``(11, 22, 33, 12, 23, 13)`` where shear
        strain slots hold ``2*E_ij``. Equals ``4 * d2W/dC2`` expressed
        in the same slot convention. Symmetric.

    Raises
    ------
    SingularConfigurationError
        If ``det(F) <= 0``.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.shape != (3, 3):
        raise ValueError("F must be 3x3")
    if np.linalg.det(F) <= 0.0:
        raise SingularConfigurationError(f"det(F) = {np.linalg.det(F):.3e} <= 0")
    c = F.T @ F
    cv = np.array(
        [[c[0, 0], c[1, 1], c[2, 2], c[0, 1], c[1, 2], c[0, 2]]]
    )
    sv, cc = _stress_and_tangent(
        cv, np.array([mat.c10]), np.array([mat.c01]), np.array([mat.bulk_kappa])
    )
    return _voigt_to_matrix(sv[0]), cc[0]


def _batch_element_quantities(
    mesh: Mesh, mat: Materials, U: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Internal forces (m,12) and tangents (m,12,12) for all elements."""
    c10, c01, kappa = _material_arrays(mesh, mat)
    dn, vol = _shape_gradients(mesh.nodes, mesh.elements)
    m = mesh.n_elements

    ue = U[mesh.elements]                                   # (m, 4, 3)
    grad = np.einsum("mak,maj->mkj", ue, dn)                # displacement gradient
    F = np.eye(3)[None, :, :] + grad
    detf = np.linalg.det(F)
    if np.any(detf <= 0.0):
        bad = int(np.argmin(detf))
        raise SingularConfigurationError(
            f"element {bad} inverted: det(F) = {detf[bad]:.3e}"
        )

    c = np.matmul(F.transpose(0, 2, 1), F)
    cv = np.stack(
        [c[:, 0, 0], c[:, 1, 1], c[:, 2, 2], c[:, 0, 1], c[:, 1, 2], c[:, 0, 2]],
        axis=1,
    )
    sv, cc = _stress_and_tangent(cv, c10, c01, kappa)

    b = np.empty((m, 6, 12))
    for row, (i, j) in enumerate(_VOIGT_PAIRS):
        term = np.einsum("ma,mk->mak", dn[:, :, j], F[:, :, i])
        if i != j:
            term = term + np.einsum("ma,mk->mak", dn[:, :, i], F[:, :, j])
        b[:, row, :] = term.reshape(m, 12)

    f_int = vol[:, None] * np.einsum("mri,mr->mi", b, sv)

    smat = _voigt_to_matrix(sv)
    gsc = np.einsum("mai,mij,mbj->mab", dn, smat, dn)       # (m, 4, 4)
    kgeo = np.einsum("mab,ij->maibj", gsc, np.eye(3)).reshape(m, 12, 12)
    kmat = np.matmul(b.transpose(0, 2, 1), np.matmul(cc, b))
    k = vol[:, None, None] * (kmat + kgeo)
    return f_int, k


def element_workspace(
    mesh: Mesh, elem_index: int, mat: Materials, U: np.ndarray
) -> ElementWorkspace:
    """Evaluate all per-element FE quantities for one element."""
    elem = mesh.elements[elem_index]
    c10, c01, kappa = _material_arrays(mesh, mat)
    dn, vol = _shape_gradients(mesh.nodes, mesh.elements[elem_index : elem_index + 1])
    dn, vol = dn[0], vol[0]

    grad = U[elem].T @ dn
    F = np.eye(3) + grad
    if np.linalg.det(F) <= 0.0:
        raise SingularConfigurationError(
            f"element {elem_index} inverted: det(F) = {np.linalg.det(F):.3e}"
        )
    c = F.T @ F
    cv = np.array(
        [[c[0, 0], c[1, 1], c[2, 2], c[0, 1], c[1, 2], c[0, 2]]]
    )
    sv, _ = _stress_and_tangent(
        cv,
        c10[elem_index : elem_index + 1],
        c01[elem_index : elem_index + 1],
        kappa[elem_index : elem_index + 1],
    )
    sv = sv[0]

    b = np.empty((6, 12))
    for row, (i, j) in enumerate(_VOIGT_PAIRS):
        term = np.outer(dn[:, j], F[:, i])
        if i != j:
            term = term + np.outer(dn[:, i], F[:, j])
        b[row] = term.reshape(12)

    smat = _voigt_to_matrix(sv)
    gsc = dn @ smat @ dn.T
    kgeo = vol * np.kron(gsc, np.eye(3))
    return ElementWorkspace(
        deformation_gradient=F,
        pk2_stress=smat,
        strain_disp_linear=b,
        geometric_stiffness=kgeo,
        internal_force=vol * (b.T @ sv),
    )


def element_force_and_stiffness(
    mesh: Mesh, elem_index: int, mat: Materials, U: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Internal force and tangent stiffness of one element.

    Parameters
    ----------
    mesh : Mesh
    elem_index : int
    mat : MaterialModel or mapping region -> MaterialModel
    U : ndarray, shape (n_nodes, 3)
        Current displacement field.

    Returns
    -------
    f_int : ndarray, shape (12,)
        Element internal force in N, ordered (node0 xyz, node1 xyz, ...).
    k_elem : ndarray, shape (12, 12)
        Symmetric element tangent (material + geometric parts), N/m.

    Raises
    ------
    SingularConfigurationError
        If the element is inverted under ``U``.
    """
    sub = Mesh(
        mesh.nodes,
        mesh.elements[elem_index : elem_index + 1],
        mesh.element_region[elem_index : elem_index + 1],
        mesh.node_tags,
    )
    try:
        f, k = _batch_element_quantities(sub, _subset_materials(mesh, mat, elem_index), U)
    except SingularConfigurationError as exc:
        raise SingularConfigurationError(
            f"element {elem_index} inverted under current displacements"
        ) from exc
    return f[0], k[0]


def _subset_materials(mesh: Mesh, mat: Materials, elem_index: int) -> Materials:
    """Material choice for a single-element submesh view."""
    if isinstance(mat, MaterialModel):
        return mat
    return mat[int(mesh.element_region[elem_index])]


def assemble(
    mesh: Mesh,
    mat: Materials,
    U: np.ndarray,
    bc: np.ndarray,
    external: np.ndarray | None = None,
) -> SparseSystem:
    """Assemble the global tangent and force vectors over free DOFs.

    Parameters
    ----------
    mesh : Mesh
    mat : MaterialModel or mapping region -> MaterialModel
    U : ndarray, shape (n_nodes, 3)
        Displacement field; must be zero at fixed DOFs.
    bc : ndarray of bool, shape (n_nodes, 3)
        True marks a fixed DOF; its row and column are eliminated.
    external : ndarray, shape (n_nodes, 3), optional
        External nodal forces; reduced to free DOFs in the result.

    Returns
    -------
    SparseSystem
    """
    U = np.asarray(U, dtype=np.float64)
    bc = np.asarray(bc, dtype=bool)
    if U.shape != (mesh.n_nodes, 3) or bc.shape != (mesh.n_nodes, 3):
        raise ValueError("U and bc must have shape (n_nodes, 3)")
    if np.any(U[bc] != 0.0):
        raise ValueError("U must be zero at fixed DOFs")

    f_elem, k_elem = _batch_element_quantities(mesh, mat, U)

    n_dofs = 3 * mesh.n_nodes
    free_dofs = np.flatnonzero(~bc.reshape(-1))
    reduced = np.full(n_dofs, -1, dtype=np.int64)
    reduced[free_dofs] = np.arange(free_dofs.size)

    edofs = (3 * mesh.elements[:, :, None] + np.arange(3)).reshape(-1, 12)

    f_full = np.zeros(n_dofs)
    np.add.at(f_full, edofs.reshape(-1), f_elem.reshape(-1))

    red = reduced[edofs]                                    # (m, 12)
    rows = np.broadcast_to(red[:, :, None], k_elem.shape)
    cols = np.broadcast_to(red[:, None, :], k_elem.shape)
    keep = (rows >= 0) & (cols >= 0)
    nf = free_dofs.size
    tangent = sp.coo_matrix(
        (k_elem[keep], (rows[keep], cols[keep])), shape=(nf, nf)
    ).tocsr()

    if external is None:
        ext_red = np.zeros(nf)
    else:
        external = np.asarray(external, dtype=np.float64)
        if external.shape != (mesh.n_nodes, 3):
            raise ValueError("external must have shape (n_nodes, 3)")
        ext_red = external.reshape(-1)[free_dofs]

    return SparseSystem(
        tangent=tangent,
        internal_force=f_full[free_dofs],
        external_force=ext_red,
        free_dofs=free_dofs,
        n_nodes=mesh.n_nodes,
    )


def solve_newton(
    mesh: Mesh,
    mat: Materials,
    external: np.ndarray,
    bc: np.ndarray | None = None,
    opts: SolveOptions = SolveOptions(),
) -> tuple[np.ndarray, SolveStats]:
    """Solve static equilibrium under a ramped external load.

    The load is applied in ``opts.n_load_increments`` equal steps; each
    step runs Newton-Raphson on the free DOFs until the residual
    ``R - F(U)`` drops below tolerance.

    Parameters
    ----------
    mesh : Mesh
    mat : MaterialModel or mapping region -> MaterialModel
    external : ndarray, shape (n_nodes, 3)
        Full external nodal force vector in N; zero at fixed DOFs.
    bc : ndarray of bool, shape (n_nodes, 3), optional
        Fixed-DOF mask; defaults to clamping all BottomFixed nodes.
    opts : SolveOptions

    Returns
    -------
    U : ndarray, shape (n_nodes, 3)
        Converged displacement field; exactly zero at fixed DOFs.
    stats : SolveStats

    Raises
    ------
    NonConvergenceError
        If an increment fails to converge within ``max_iterations``.
    SingularConfigurationError, LinearSolveError
        On inverted elements or failed factorization.
    """
    external = np.asarray(external, dtype=np.float64)
    if bc is None:
        bc = bottom_fixed_bc(mesh)
    bc = np.asarray(bc, dtype=bool)
    if np.any(external[bc] != 0.0):
        raise ValueError("external force must be zero at fixed DOFs")

    U = np.zeros((mesh.n_nodes, 3))
    stats = SolveStats()
    free = np.flatnonzero(~bc.reshape(-1))

    for inc in range(1, opts.n_load_increments + 1):
        target = external * (inc / opts.n_load_increments)
        tol = max(
            opts.residual_tol_abs,
            opts.residual_tol_rel * np.linalg.norm(target.reshape(-1)[free]),
        )
        history: list[float] = []
        converged = False
        for _ in range(opts.max_iterations):
            system = assemble(mesh, mat, U, bc, external=target)
            residual = system.external_force - system.internal_force
            rnorm = float(np.linalg.norm(residual))
            history.append(rnorm)
            if rnorm < tol:
                converged = True
                break
            try:
                lu = spla.splu(system.tangent.tocsc())
                du = lu.solve(residual)
            except RuntimeError as exc:
                raise LinearSolveError(f"tangent factorization failed: {exc}") from exc
            U.reshape(-1)[free] += du
        stats.iterations.append(len(history))
        stats.residual_history.append(history)
        if not converged:
            raise NonConvergenceError(
                f"increment {inc}/{opts.n_load_increments} did not converge in "
                f"{opts.max_iterations} iterations (residual {history[-1]:.3e} N)",
                residual=history[-1],
            )
    stats.final_residual = stats.residual_history[-1][-1]
    return U, stats
