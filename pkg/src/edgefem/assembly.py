"""Global DOF management and assembly of mass/stiffness forms.

Degrees of freedom sit on mesh entities (edges for the H(curl) space,
vertices for Lagrange-1, faces for the H(div) space).  Homogeneous
essential boundary conditions are imposed by eliminating boundary-entity
DOFs, so assembled matrices act on interior ("active") DOFs only and stay
symmetric.  Orientation is handled in one place: each (cell, local dof)
carries a sign relating the local basis function to the globally oriented
one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from edgefem.elements import quadrature
from edgefem.mesh import LOCAL_EDGES, LOCAL_FACES, TetMesh, find_edges

_CHUNK = 32768  # cells per assembly block, caps einsum workspace


class AssemblyError(Exception):
    pass


@dataclass
class MaterialField:
    """Cellwise-constant SPD permittivity and inverse permeability plus omega."""

    eps: np.ndarray  # (T, 3, 3)
    nu: np.ndarray  # (T, 3, 3)
    omega: float

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.omega <= 0:
            raise AssemblyError("omega must be positive")
        for name, m in (("eps", self.eps), ("nu", self.nu)):
            scale = max(np.abs(m).max(), 1.0)
            if np.abs(m - m.swapaxes(1, 2)).max() > 1e-14 * scale:
                raise AssemblyError(f"{name} must be symmetric per cell")
            if np.linalg.eigvalsh(m).min() <= 0:
                raise AssemblyError(f"{name} must be positive definite per cell")

    @classmethod
    def isotropic(cls, mesh: TetMesh, eps: float = 1.0, nu: float = 1.0, omega: float = 1.0):
        eye = np.eye(3)
        T = mesh.num_tets
        return cls(eps * np.broadcast_to(eye, (T, 3, 3)).copy(),
                   nu * np.broadcast_to(eye, (T, 3, 3)).copy(), omega)

    @classmethod
    def from_callables(cls, mesh: TetMesh, eps_fn, nu_fn, omega: float):
        """Sample smoothly varying coefficients at cell centroids."""

        def sample(fn):
            rows = []
            for x in mesh.centroids():
                v = np.asarray(fn(x), dtype=float)
                rows.append(v if v.ndim == 2 else float(v) * np.eye(3))
            return np.array(rows)

        return cls(sample(eps_fn), sample(nu_fn), omega)

    @property
    def eps_range(self):
        ev = np.linalg.eigvalsh(self.eps)
        return float(ev.min()), float(ev.max())

    @property
    def nu_range(self):
        ev = np.linalg.eigvalsh(self.nu)
        return float(ev.min()), float(ev.max())

    @property
    def v_min(self) -> float:
        """Minimum wavespeed sqrt(nu_min / eps_max)."""
        return float(np.sqrt(self.nu_range[0] / self.eps_range[1]))


class DofSystem:
    """Entity-based DOF numbering with optional boundary elimination.

    space: "nedelec0" (edge DOFs), "lagrange1" (vertex), "rt0" (face),
    "lagrange2" (vertex + edge).  With constrained=True all boundary-entity
    DOFs are eliminated, realizing zero tangential trace / zero boundary
    values; active DOFs are numbered in global entity order.
    """

    def __init__(self, mesh: TetMesh, space: str, constrained: bool = True):
        self.mesh = mesh
        self.space = space
        self.constrained = constrained
        if space == "nedelec0":
            boundary = mesh.boundary_edges
            self.cell_entities = mesh.tet_edges
            self.cell_signs = mesh.edge_signs.astype(np.int64)
        elif space == "lagrange1":
            boundary = mesh.boundary_vertices
            self.cell_entities = mesh.tets
            self.cell_signs = np.ones_like(mesh.tets)
        elif space == "rt0":
            boundary = mesh.boundary_faces
            self.cell_entities = mesh.tet_faces
            self.cell_signs = _rt_face_signs(mesh)
        elif space == "lagrange2":
            boundary = np.concatenate([mesh.boundary_vertices, mesh.boundary_edges])
            self.cell_entities = np.concatenate(
                [mesh.tets, mesh.num_vertices + mesh.tet_edges], axis=1
            )
            self.cell_signs = np.ones_like(self.cell_entities)
        else:
            raise AssemblyError(f"unknown space {space!r}")
        self.num_entities = len(boundary)
        self.active = ~boundary if constrained else np.ones(len(boundary), dtype=bool)
        self.index = np.where(self.active, np.cumsum(self.active) - 1, -1)
        self.num_dofs = int(self.active.sum())

    def entity_vector(self, x: np.ndarray) -> np.ndarray:
        """Expand an active-DOF vector to entity length, zeros on boundary."""
        if len(x) != self.num_dofs:
            raise AssemblyError("coefficient length does not match DOF count")
        out = np.zeros(self.num_entities)
        out[self.active] = x
        return out


def _rt_face_signs(mesh: TetMesh) -> np.ndarray:
    # sign relating the local vertex-order normal to the sorted-global normal
    p = mesh.vertices
    t = mesh.tets
    signs = np.empty((mesh.num_tets, 4), dtype=np.int64)
    for m, (a, b, c) in enumerate(LOCAL_FACES):
        n_loc = np.cross(p[t[:, b]] - p[t[:, a]], p[t[:, c]] - p[t[:, a]])
        g = mesh.faces[mesh.tet_faces[:, m]]
        n_glob = np.cross(p[g[:, 1]] - p[g[:, 0]], p[g[:, 2]] - p[g[:, 0]])
        signs[:, m] = np.sign(np.einsum("tk,tk->t", n_loc, n_glob)).astype(np.int64)
    return signs


class SparseSymmetricMatrix:
    """Finalized symmetric sparse matrix in CSR form."""

    def __init__(self, a):
        a = sp.csr_matrix(a)
        if a.shape[0] != a.shape[1]:
            raise AssemblyError("matrix must be square")
        scale = np.abs(a.data).max() if a.nnz else 1.0
        asym = abs(a - a.T)
        if asym.nnz and asym.data.max() > 1e-13 * scale:
            raise AssemblyError("matrix is not symmetric")
        a = (a + a.T) * 0.5
        a.sum_duplicates()
        a.eliminate_zeros()
        self.mat = a
        self.dim = a.shape[0]
        self.finalized = True

    @property
    def shape(self):
        return self.mat.shape

    @property
    def nnz(self):
        return self.mat.nnz

    def toarray(self):
        return self.mat.toarray()

    def __matmul__(self, other):
        return self.mat @ other

    def diag(self):
        return self.mat.diagonal()


def as_csr(a):
    """Accept SparseSymmetricMatrix or raw scipy sparse."""
    if isinstance(a, SparseSymmetricMatrix):
        return a.mat
    return a if sp.isspmatrix_csr(a) else sp.csr_matrix(a)


def _check_pair(dofs: DofSystem, mat: MaterialField):
    if dofs.space != "nedelec0":
        raise AssemblyError("assembly implemented for the edge space only")
    if len(mat.eps) != dofs.mesh.num_tets:
        raise AssemblyError("material defined on a different mesh")


def _scatter(dofs: DofSystem, cells, local) -> sp.csr_matrix:
    """Accumulate per-cell local matrices into the active-DOF CSR matrix."""
    ent = dofs.cell_entities[cells]
    s = dofs.cell_signs[cells]
    local = local * (s[:, :, None] * s[:, None, :])
    idx = dofs.index[ent]
    nloc = ent.shape[1]
    ii = np.repeat(idx, nloc, axis=1).ravel()
    jj = np.tile(idx, (1, nloc)).ravel()
    vals = local.ravel()
    keep = (ii >= 0) & (jj >= 0)
    return sp.coo_matrix(
        (vals[keep], (ii[keep], jj[keep])), shape=(dofs.num_dofs, dofs.num_dofs)
    ).tocsr()


def _whitney_at(mesh: TetMesh, cells, lam):
    """Whitney values (m, P, 6, 3) and constant curls (m, 6, 3) on cells."""
    g = mesh.barycentric_gradients()[cells]
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    vals = (
        lam[:, a][None, :, :, None] * g[:, None, b, :]
        - lam[:, b][None, :, :, None] * g[:, None, a, :]
    )
    curls = 2.0 * np.cross(g[:, a, :], g[:, b, :])
    return vals, curls


def assemble_mass(dofs: DofSystem, mat: MaterialField) -> SparseSymmetricMatrix:
    """Weighted mass matrix: x^T M y = (u_x, u_y)_eps.  Exact (order-2 rule)."""
    _check_pair(dofs, mat)
    mesh = dofs.mesh
    rule = quadrature(2)
    vols6 = 6.0 * mesh.volumes()
    acc = None
    for s in range(0, mesh.num_tets, _CHUNK):
        cells = np.arange(s, min(s + _CHUNK, mesh.num_tets))
        vals, _ = _whitney_at(mesh, cells, rule.points)
        evals = np.einsum("mkl,mpjl->mpjk", mat.eps[cells], vals)
        local = np.einsum("mpik,mpjk,p->mij", vals, evals, rule.weights)
        local *= vols6[cells, None, None]
        block = _scatter(dofs, cells, local)
        acc = block if acc is None else acc + block
    return SparseSymmetricMatrix(acc)


def assemble_curlcurl(dofs: DofSystem, mat: MaterialField) -> SparseSymmetricMatrix:
    """Curl-curl matrix: x^T Kc y = (curl u_x, curl u_y)_nu.  Exact."""
    _check_pair(dofs, mat)
    mesh = dofs.mesh
    vols = mesh.volumes()
    acc = None
    for s in range(0, mesh.num_tets, _CHUNK):
        cells = np.arange(s, min(s + _CHUNK, mesh.num_tets))
        _, curls = _whitney_at(mesh, cells, np.full((1, 4), 0.25))
        ncurls = np.einsum("mkl,mjl->mjk", mat.nu[cells], curls)
        local = np.einsum("mik,mjk->mij", curls, ncurls) * vols[cells, None, None]
        block = _scatter(dofs, cells, local)
        acc = block if acc is None else acc + block
    return SparseSymmetricMatrix(acc)


def assemble_b(dofs: DofSystem, mat: MaterialField):
    """Return (B, N): B = Kc - omega^2 M (the problem form), N = Kc + omega^2 M.

    x^T N x is the squared energy norm of the field with coefficients x.
    """
    M = assemble_mass(dofs, mat)
    Kc = assemble_curlcurl(dofs, mat)
    w2 = mat.omega ** 2
    return (
        SparseSymmetricMatrix(Kc.mat - w2 * M.mat),
        SparseSymmetricMatrix(Kc.mat + w2 * M.mat),
    )


def assemble_load(dofs: DofSystem, mat: MaterialField, j_fn, order: int = 4) -> np.ndarray:
    """Load vector L_i = integral of J . (edge basis i), by quadrature."""
    _check_pair(dofs, mat)
    mesh = dofs.mesh
    rule = quadrature(order)
    vols6 = 6.0 * mesh.volumes()
    out = np.zeros(dofs.num_dofs)
    for s in range(0, mesh.num_tets, _CHUNK):
        cells = np.arange(s, min(s + _CHUNK, mesh.num_tets))
        vals, _ = _whitney_at(mesh, cells, rule.points)
        x = np.einsum("pa,mak->mpk", rule.points, mesh.vertices[mesh.tets[cells]])
        jv = np.asarray(j_fn(x), dtype=float)
        local = np.einsum("mpik,mpk,p->mi", vals, jv, rule.weights)
        local *= vols6[cells, None]
        local *= dofs.cell_signs[cells]
        idx = dofs.index[dofs.cell_entities[cells]]
        keep = idx >= 0
        np.add.at(out, idx[keep], local[keep])
    return out


def gradient_map(lagrange: DofSystem, nedelec: DofSystem) -> sp.csr_matrix:
    """Sparse G with: edge coefficients G p represent the gradient of p.

    The circulation of grad(phi) along edge (i, j) is phi(j) - phi(i), so G
    is the signed edge-vertex incidence matrix restricted to active rows
    and columns.
    """
    if lagrange.mesh is not nedelec.mesh:
        raise AssemblyError("gradient map requires both spaces on one mesh")
    if (lagrange.space, nedelec.space) != ("lagrange1", "nedelec0"):
        raise AssemblyError("gradient map takes (lagrange1, nedelec0)")
    mesh = nedelec.mesh
    e = np.arange(mesh.num_edges)
    rows = np.concatenate([e, e])
    cols = np.concatenate([mesh.edges[:, 1], mesh.edges[:, 0]])
    data = np.concatenate([np.ones(len(e)), -np.ones(len(e))])
    ri = nedelec.index[rows]
    ci = lagrange.index[cols]
    keep = (ri >= 0) & (ci >= 0)
    return sp.coo_matrix(
        (data[keep], (ri[keep], ci[keep])),
        shape=(nedelec.num_dofs, lagrange.num_dofs),
    ).tocsr()


def curl_map(nedelec: DofSystem, rt: DofSystem) -> sp.csr_matrix:
    """Sparse C with: face fluxes of curl(u_x) are C x (Stokes per face).

    For a face with sorted vertices (i, j, k) and the right-hand normal of
    that order, the boundary cycle is i -> j -> k -> i, so the stored edges
    (i,j) and (j,k) enter with +1 and (i,k) with -1.
    """
    if nedelec.mesh is not rt.mesh:
        raise AssemblyError("curl map requires both spaces on one mesh")
    if (nedelec.space, rt.space) != ("nedelec0", "rt0"):
        raise AssemblyError("curl map takes (nedelec0, rt0)")
    mesh = nedelec.mesh
    f = mesh.faces
    eij = find_edges(mesh.edges, f[:, [0, 1]])
    ejk = find_edges(mesh.edges, f[:, [1, 2]])
    eik = find_edges(mesh.edges, f[:, [0, 2]])
    nf = mesh.num_faces
    rows = np.tile(np.arange(nf), 3)
    cols = np.concatenate([eij, ejk, eik])
    data = np.concatenate([np.ones(nf), np.ones(nf), -np.ones(nf)])
    ri = rt.index[rows]
    ci = nedelec.index[cols]
    keep = (ri >= 0) & (ci >= 0)
    return sp.coo_matrix(
        (data[keep], (ri[keep], ci[keep])), shape=(rt.num_dofs, nedelec.num_dofs)
    ).tocsr()


def write_matrix_market(path, a, comment: str = ""):
    """Dump a symmetric matrix in Matrix Market coordinate format."""
    scipy.io.mmwrite(path, as_csr(a).tocoo(), comment=comment, symmetry="symmetric")
