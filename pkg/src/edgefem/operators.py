"""Projections, interpolants, and two-grid transfer operators.

Includes the energy-norm best approximation (the benchmark the Galerkin
error is compared against), the discrete curl-free projection, a nested
fine-grid surrogate for the projection onto the continuous curl-free
kernel, canonical edge/face interpolants for the commuting-diagram check,
and the error decomposition into kernel and complement parts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from edgefem.assembly import (
    DofSystem,
    MaterialField,
    _whitney_at,
    as_csr,
    assemble_mass,
    gradient_map,
)
from edgefem.elements import edge_rule, quadrature, triangle_rule
from edgefem.mesh import LOCAL_EDGES, TetMesh, uniform_refine
from edgefem.solvers import solve_symmetric

FACE_RULE_DEGREE = 12  # canonical face moments; keeps commuting residual below 1e-10


class OperatorError(Exception):
    pass


@dataclass
class DiscreteField:
    """Coefficient vector over the active DOFs of a DofSystem."""

    coeffs: np.ndarray
    dofs: DofSystem

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if len(self.coeffs) != self.dofs.num_dofs:
            raise OperatorError("coefficient length does not match DOF count")

    @property
    def space(self) -> str:
        return self.dofs.space

    def entity_coeffs(self) -> np.ndarray:
        return self.dofs.entity_vector(self.coeffs)


# -- two-grid transfer ---------------------------------------------------


def refine_chain(mesh: TetMesh, r: int):
    """[mesh, refined once, ..., refined r times]; children know parents."""
    chain = [mesh]
    for _ in range(r):
        chain.append(uniform_refine(chain[-1]))
    return chain


def edge_prolongation(coarse: DofSystem, fine: DofSystem) -> sp.csr_matrix:
    """Coefficients of a coarse edge field on the once-refined mesh.

    Each fine-edge circulation of every coarse basis function is computed
    by 2-point Gauss along the fine edge (exact: the integrand is affine).
    Requires fine.mesh produced by uniform_refine(coarse.mesh).
    """
    fm, cm = fine.mesh, coarse.mesh
    if fm.parent is None or len(fm.parent) != 8 * cm.num_tets:
        raise OperatorError("prolongation requires a nested once-refined mesh")
    if coarse.space != "nedelec0" or fine.space != "nedelec0":
        raise OperatorError("edge prolongation takes two edge-element systems")

    # claim each fine edge once, through the first fine tet containing it
    flat = fm.tet_edges.ravel()
    ue, first = np.unique(flat, return_index=True)
    owner = first // 6
    parents = fm.parent[owner]

    pa = fm.vertices[fm.edges[ue, 0]]
    pb = fm.vertices[fm.edges[ue, 1]]
    corners = cm.vertices[cm.tets[parents]]  # (m, 4, 3)
    aug = np.concatenate([np.ones((len(ue), 4, 1)), corners], axis=2)
    augT = aug.transpose(0, 2, 1)
    rhs_a = np.concatenate([np.ones((len(ue), 1)), pa], axis=1)[:, :, None]
    rhs_b = np.concatenate([np.ones((len(ue), 1)), pb], axis=1)[:, :, None]
    la = np.linalg.solve(augT, rhs_a)[:, :, 0]
    lb = np.linalg.solve(augT, rhs_b)[:, :, 0]

    t, w = edge_rule(2)
    grads = cm.barycentric_gradients()[parents]
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    tang = pb - pa
    circ = np.zeros((len(ue), 6))
    for tq, wq in zip(t, w):
        lam = (1 - tq) * la + tq * lb  # (m, 4)
        vals = (
            lam[:, a, None] * grads[:, b, :] - lam[:, b, None] * grads[:, a, :]
        )  # (m, 6, 3)
        circ += wq * np.einsum("mek,mk->me", vals, tang)
    circ *= coarse.cell_signs[parents]

    rows = np.repeat(fine.index[ue], 6)
    cols = coarse.index[coarse.cell_entities[parents]].ravel()
    vals = circ.ravel()
    keep = (rows >= 0) & (cols >= 0)
    return sp.coo_matrix(
        (vals[keep], (rows[keep], cols[keep])),
        shape=(fine.num_dofs, coarse.num_dofs),
    ).tocsr()


class TwoGrid:
    """Refinement chain with composed edge prolongation coarse -> finest.

    Carries the per-level meshes, edge DofSystems, and the material field
    restricted (exactly, cellwise) to each level.
    """

    def __init__(self, mesh: TetMesh, mat: MaterialField, r: int, constrained: bool = True):
        if r < 0:
            raise OperatorError("refinement count must be >= 0")
        self.r = r
        self.meshes = refine_chain(mesh, r)
        self.dofs = [DofSystem(m, "nedelec0", constrained) for m in self.meshes]
        self.mats = [mat]
        for m in self.meshes[1:]:
            prev = self.mats[-1]
            self.mats.append(
                MaterialField(prev.eps[m.parent], prev.nu[m.parent], prev.omega)
            )
        self.P = sp.identity(self.dofs[0].num_dofs, format="csr")
        self.steps = []
        for lvl in range(r):
            step = edge_prolongation(self.dofs[lvl], self.dofs[lvl + 1])
            self.steps.append(step)
            self.P = step @ self.P

    @property
    def fine_mesh(self) -> TetMesh:
        return self.meshes[-1]

    @property
    def fine_dofs(self) -> DofSystem:
        return self.dofs[-1]

    @property
    def fine_mat(self) -> MaterialField:
        return self.mats[-1]


# -- discrete field evaluation and energy norms ---------------------------


def eval_field(field: DiscreteField, lam: np.ndarray):
    """Values (T, P, 3) and cellwise-constant curls (T, 3) at barycentric lam."""
    if field.space != "nedelec0":
        raise OperatorError("evaluation implemented for the edge space")
    mesh = field.dofs.mesh
    cells = np.arange(mesh.num_tets)
    vals, curls = _whitney_at(mesh, cells, lam)
    coef = field.entity_coeffs()[field.dofs.cell_entities] * field.dofs.cell_signs
    return (
        np.einsum("me,mpek->mpk", coef, vals),
        np.einsum("me,mek->mk", coef, curls),
    )


def energy_error(
    field: DiscreteField, mat: MaterialField, e_fn, curl_fn, order: int = 6
):
    """|||E - E_h||| by quadrature against the analytic field.

    Returns (total, omega*L2_eps part, curl part).
    """
    mesh = field.dofs.mesh
    rule = quadrature(order)
    vals, curls = eval_field(field, rule.points)
    x = np.einsum("pa,mak->mpk", rule.points, mesh.vertices[mesh.tets])
    de = np.asarray(e_fn(x)) - vals
    dc = np.asarray(curl_fn(x)) - curls[:, None, :]
    vols6 = 6.0 * mesh.volumes()
    l2e = np.einsum(
        "mpk,mkl,mpl,p,m->", de, mat.eps, de, rule.weights, vols6
    )
    l2c = np.einsum(
        "mpk,mkl,mpl,p,m->", dc, mat.nu, dc, rule.weights, vols6
    )
    w2 = mat.omega ** 2
    return float(np.sqrt(w2 * l2e + l2c)), float(np.sqrt(w2 * l2e)), float(np.sqrt(l2c))


def energy_norm_analytic(
    mesh: TetMesh, mat: MaterialField, e_fn, curl_fn, order: int = 6
) -> float:
    rule = quadrature(order)
    x = np.einsum("pa,mak->mpk", rule.points, mesh.vertices[mesh.tets])
    e = np.asarray(e_fn(x))
    c = np.asarray(curl_fn(x))
    vols6 = 6.0 * mesh.volumes()
    l2e = np.einsum("mpk,mkl,mpl,p,m->", e, mat.eps, e, rule.weights, vols6)
    l2c = np.einsum("mpk,mkl,mpl,p,m->", c, mat.nu, c, rule.weights, vols6)
    return float(np.sqrt(mat.omega ** 2 * l2e + l2c))


# -- best approximation ----------------------------------------------------


def bplus_rhs_analytic(
    dofs: DofSystem, mat: MaterialField, e_fn, curl_fn, order: int = 6
) -> np.ndarray:
    """Right-hand side b+(v, w_i) = omega^2 (eps v, w_i) + (nu curl v, curl w_i)."""
    mesh = dofs.mesh
    rule = quadrature(order)
    vols6 = 6.0 * mesh.volumes()
    out = np.zeros(dofs.num_dofs)
    cells = np.arange(mesh.num_tets)
    vals, curls = _whitney_at(mesh, cells, rule.points)
    x = np.einsum("pa,mak->mpk", rule.points, mesh.vertices[mesh.tets])
    ev = np.einsum("mkl,mpl->mpk", mat.eps, np.asarray(e_fn(x)))
    cv = np.einsum("mkl,mpl->mpk", mat.nu, np.asarray(curl_fn(x)))
    local = mat.omega ** 2 * np.einsum("mpik,mpk,p->mi", vals, ev, rule.weights)
    local += np.einsum("mik,mpk,p->mi", curls, cv, rule.weights)
    local *= vols6[:, None]
    local *= dofs.cell_signs
    idx = dofs.index[dofs.cell_entities]
    keep = idx >= 0
    np.add.at(out, idx[keep], local[keep])
    return out


def best_approx_analytic(
    dofs: DofSystem, mat: MaterialField, N, e_fn, curl_fn, order: int = 6
) -> DiscreteField:
    """Energy projection of an analytic field onto the discrete space."""
    rhs = bplus_rhs_analytic(dofs, mat, e_fn, curl_fn, order)
    return DiscreteField(solve_symmetric(N, rhs), dofs)


def best_approx_discrete(P: sp.csr_matrix, N_coarse, fine_coeffs: np.ndarray) -> np.ndarray:
    """Energy projection of a fine-grid discrete field onto the coarse space.

    P is the coarse->fine prolongation, so the coarse load is P^T N_f v_f;
    callers pass that product as fine_coeffs already multiplied by N_f.
    """
    return solve_symmetric(N_coarse, P.T @ fine_coeffs)


# -- curl-free projections -------------------------------------------------


def project_discrete_curlfree(v: DiscreteField, M, G) -> tuple[DiscreteField, np.ndarray]:
    """epsilon-orthogonal projection onto the discrete gradient range.

    Returns (G p as a field on the same DOFs, potential p).
    """
    rhs = G.T @ (as_csr(M) @ v.coeffs)
    p = solve_symmetric(G.T @ as_csr(M) @ G, rhs)
    return DiscreteField(G @ p, v.dofs), p


class KernelProjector:
    """Fine-grid surrogate of the projection onto the continuous curl-free
    kernel.

    On a box the kernel is the closure of gradients, so the projection of v
    is grad(p) with (eps grad p, grad q) = (eps v, grad q) for all q in
    H^1_0; p is approximated in Lagrange-1 on the r-times refined mesh.
    The squared-norm estimate p . rhs is monotone from below in r.
    """

    def __init__(self, grid: TwoGrid):
        self.grid = grid
        mesh, mat = grid.fine_mesh, grid.fine_mat
        self.lag = DofSystem(mesh, "lagrange1")
        self.ned = grid.fine_dofs
        self.M = assemble_mass(self.ned, mat)
        self.G = gradient_map(self.lag, self.ned)
        self.L = splu((self.G.T @ self.M.mat @ self.G).tocsc())

    def rhs_analytic(self, v_fn, order: int = 6) -> np.ndarray:
        """Loads (eps v, grad phi_i) for the fine Lagrange basis."""
        mesh, mat = self.grid.fine_mesh, self.grid.fine_mat
        rule = quadrature(order)
        g = mesh.barycentric_gradients()
        x = np.einsum("pa,mak->mpk", rule.points, mesh.vertices[mesh.tets])
        ev = np.einsum("mkl,mpl->mpk", mat.eps, np.asarray(v_fn(x)))
        local = np.einsum("mak,mpk,p->ma", g, ev, rule.weights)
        local *= 6.0 * mesh.volumes()[:, None]
        out = np.zeros(self.lag.num_dofs)
        idx = self.lag.index[mesh.tets]
        keep = idx >= 0
        np.add.at(out, idx[keep], local[keep])
        return out

    def rhs_coarse_field(self, coeffs: np.ndarray) -> np.ndarray:
        """Exact loads for a coarse discrete field, via nesting."""
        return self.G.T @ (self.M.mat @ (self.grid.P @ coeffs))

    def project(self, rhs: np.ndarray) -> tuple[np.ndarray, float]:
        """Solve the fine Poisson system; return (p, ||proj||_eps^2 estimate)."""
        p = self.L.solve(rhs)
        return p, float(p @ rhs)


# -- canonical interpolants -------------------------------------------------


def canonical_interp(v_fn, target: DofSystem) -> DiscreteField:
    """Edge-circulation / face-flux interpolant of a smooth field.

    Edge DOFs use 5-point Gauss along each edge; face DOFs use a collapsed
    triangle rule of degree FACE_RULE_DEGREE, chosen so the commuting check
    curl(interp(v)) = interp(curl v) holds to 1e-10 for smooth fields.
    """
    mesh = target.mesh
    if target.space == "nedelec0":
        t, w = edge_rule(5)
        pa = mesh.vertices[mesh.edges[:, 0]]
        pb = mesh.vertices[mesh.edges[:, 1]]
        x = pa[:, None, :] + t[None, :, None] * (pb - pa)[:, None, :]
        vals = np.asarray(v_fn(x))
        circ = np.einsum("epk,p,ek->e", vals, w, pb - pa)
        return DiscreteField(circ[target.active], target)
    if target.space == "rt0":
        rule = triangle_rule(FACE_RULE_DEGREE)
        f = mesh.faces
        pi, pj, pk = mesh.vertices[f[:, 0]], mesh.vertices[f[:, 1]], mesh.vertices[f[:, 2]]
        x = (
            rule.points[None, :, 0, None] * pi[:, None, :]
            + rule.points[None, :, 1, None] * pj[:, None, :]
            + rule.points[None, :, 2, None] * pk[:, None, :]
        )
        normal = np.cross(pj - pi, pk - pi)
        vals = np.asarray(v_fn(x))
        flux = np.einsum("fpk,p,fk->f", vals, rule.weights, normal)
        return DiscreteField(flux[target.active], target)
    raise OperatorError("canonical interpolation targets nedelec0 or rt0")


# -- error decomposition ----------------------------------------------------


@dataclass
class ErrorSplit:
    """Components of the Galerkin error e = E - E_h.

    theta_pi = kernel projection of e (a gradient, curl-free); theta0 is
    the remainder.  Components are omega ||theta0||_eps, omega
    ||theta_pi||_eps, and ||curl theta0||_nu = ||curl e||_nu; their squares
    sum to |||e|||^2 up to the surrogate tolerance.
    """

    omega_theta0_eps: float
    omega_thetapi_eps: float
    curl_theta0_nu: float
    energy_error: float
    surrogate_r: int

    @property
    def component_sum(self) -> float:
        return float(
            np.sqrt(
                self.omega_theta0_eps ** 2
                + self.omega_thetapi_eps ** 2
                + self.curl_theta0_nu ** 2
            )
        )


def decompose_error(
    e_fn, curl_fn, Eh: DiscreteField, projector: KernelProjector, order: int = 6
) -> ErrorSplit:
    grid = projector.grid
    if Eh.dofs is not grid.dofs[0]:
        raise OperatorError("field must live on the projector's coarse level")
    mat = grid.mats[0]
    err, err_eps_w, err_curl = energy_error(Eh, mat, e_fn, curl_fn, order)
    rhs = projector.rhs_analytic(e_fn, order) - projector.rhs_coarse_field(Eh.coeffs)
    _, norm2 = projector.project(rhs)
    w = mat.omega
    thetapi = w * np.sqrt(max(norm2, 0.0))
    l2_eps = err_eps_w  # already omega-scaled
    theta0_sq = max(l2_eps ** 2 - thetapi ** 2, 0.0)
    return ErrorSplit(
        omega_theta0_eps=float(np.sqrt(theta0_sq)),
        omega_thetapi_eps=float(thetapi),
        curl_theta0_nu=err_curl,
        energy_error=err,
        surrogate_r=grid.r,
    )
