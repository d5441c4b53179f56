"""Solver oracles: direct/iterative agreement, pencil identities, guards."""

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from edgefem.assembly import (
    DofSystem,
    MaterialField,
    assemble_b,
    assemble_curlcurl,
    assemble_mass,
    gradient_map,
)
from edgefem.mesh import build_box_mesh, uniform_refine
from edgefem.operators import edge_prolongation
from edgefem.solvers import (
    DENSE_EIG_LIMIT,
    SPLU_LIMIT,
    ComplementSolver,
    SolverError,
    generalized_symmetric_eig,
    infsup_constant,
    make_curl_solver,
    resonance_distance,
    solve_symmetric,
)


def cube_system(n=2, omega=1.0):
    mesh = build_box_mesh(n)
    mat = MaterialField.isotropic(mesh, 1.0, 1.0, omega)
    ned = DofSystem(mesh, "nedelec0")
    lag = DofSystem(mesh, "lagrange1")
    B, N = assemble_b(ned, mat)
    M = assemble_mass(ned, mat)
    G = gradient_map(lag, ned)
    return mesh, mat, ned, B, N, M, G


def test_solve_symmetric_matches_dense():
    rng = np.random.default_rng(3)
    _, _, _, B, N, _, _ = cube_system(2)
    b = rng.standard_normal(B.dim)
    x = solve_symmetric(B, b)
    xd = np.linalg.solve(B.toarray(), b)
    assert np.linalg.norm(x - xd) < 1e-10 * np.linalg.norm(xd)


def test_solve_symmetric_zero_rhs():
    _, _, _, B, _, _, _ = cube_system(2)
    assert np.all(solve_symmetric(B, np.zeros(B.dim)) == 0.0)


def test_solve_symmetric_raises_on_singular():
    a = sp.csr_matrix(np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(SolverError):
        solve_symmetric(a, np.ones(3))


def test_complement_solver_matches_projected_direct():
    rng = np.random.default_rng(11)
    _, _, _, B, _, M, G = cube_system(2)
    solver = ComplementSolver(B, M, G, tol=1e-12)
    b = rng.standard_normal(B.dim)
    x = solver.solve(b)
    # direct solve then projection gives the same X-component because B is
    # block-diagonal across the complement/gradient splitting
    xd = solver.project(splu(B.mat.tocsc()).solve(b))
    assert np.linalg.norm(x - xd) < 1e-9 * np.linalg.norm(xd)
    assert np.abs(G.T @ (M.mat @ x)).max() < 1e-12


def test_complement_solver_warm_start():
    rng = np.random.default_rng(5)
    _, _, _, B, _, M, G = cube_system(2)
    solver = ComplementSolver(B, M, G, tol=1e-12)
    b = rng.standard_normal(B.dim)
    x = solver.solve(b)
    x2 = solver.solve(b, x0=x)
    assert solver.iterations == 0
    assert np.linalg.norm(x2 - x) < 1e-12 * np.linalg.norm(x)


def test_complement_solver_two_level_agrees():
    rng = np.random.default_rng(7)
    coarse = build_box_mesh(2)
    fine = uniform_refine(coarse)
    mat_c = MaterialField.isotropic(coarse)
    mat_f = MaterialField.isotropic(fine)
    ned_c = DofSystem(coarse, "nedelec0")
    ned_f = DofSystem(fine, "nedelec0")
    lag_f = DofSystem(fine, "lagrange1")
    B_c, _ = assemble_b(ned_c, mat_c)
    B_f, _ = assemble_b(ned_f, mat_f)
    M_f = assemble_mass(ned_f, mat_f)
    G_f = gradient_map(lag_f, ned_f)
    P = edge_prolongation(ned_c, ned_f)
    lu_c = splu(B_c.mat.tocsc())
    plain = ComplementSolver(B_f, M_f, G_f, tol=1e-12)
    two = ComplementSolver(B_f, M_f, G_f, tol=1e-12,
                           coarse_P=P, coarse_solve=lu_c.solve)
    b = rng.standard_normal(B_f.dim)
    x1 = plain.solve(b)
    x2 = two.solve(b)
    assert np.linalg.norm(x1 - x2) < 1e-8 * np.linalg.norm(x1)
    assert two.iterations < plain.iterations


def test_make_curl_solver_stays_in_complement():
    rng = np.random.default_rng(13)
    _, _, _, B, _, M, G = cube_system(2)
    solve = make_curl_solver(B, M, G)
    b = rng.standard_normal(B.dim)
    b -= M.mat @ (G @ splu((G.T @ M.mat @ G).tocsc()).solve(G.T @ b))
    x = solve(b)
    assert np.linalg.norm(B.mat @ x - b) < 1e-8 * np.linalg.norm(b)


def test_pencil_identity_links_spectra():
    # eigenvalues mu of (B, N) are (lam - w^2)/(lam + w^2) over the
    # eigenvalues lam of (Kc, M); gradients sit at lam = 0, mu = -1
    omega = 1.3
    mesh, mat, ned, B, N, M, _ = cube_system(2, omega=omega)
    Kc = assemble_curlcurl(ned, mat)
    mus = generalized_symmetric_eig(B, N, which="all", return_vectors=False).values
    lams = generalized_symmetric_eig(Kc, M, which="all", return_vectors=False).values
    w2 = omega ** 2
    mapped = np.sort((lams - w2) / (lams + w2))
    assert np.abs(np.sort(mus) - mapped).max() < 1e-10


def test_congruence_leaves_pencil_eigenvalues():
    rng = np.random.default_rng(17)
    _, _, _, B, N, _, _ = cube_system(2)
    S = rng.standard_normal((B.dim, B.dim)) + 3.0 * np.eye(B.dim)
    Bs = sp.csr_matrix(S.T @ B.toarray() @ S)
    Ns = sp.csr_matrix(S.T @ N.toarray() @ S)
    Ns = sp.csr_matrix(0.5 * (Ns.toarray() + Ns.toarray().T))
    Bs = sp.csr_matrix(0.5 * (Bs.toarray() + Bs.toarray().T))
    v1 = generalized_symmetric_eig(B, N, which="all", return_vectors=False).values
    v2 = generalized_symmetric_eig(Bs, Ns, which="all", return_vectors=False).values
    assert np.abs(np.sort(v1) - np.sort(v2)).max() < 1e-8


def test_infsup_lower_bounds_random_sup():
    # for any x, the exact sup over the second argument is
    # sqrt(x^T B N^{-1} B x / x^T N x) and cannot dip below beta_h
    rng = np.random.default_rng(19)
    _, _, _, B, N, _, _ = cube_system(2)
    beta = infsup_constant(B, N)
    lu = splu(N.mat.tocsc())
    worst = np.inf
    for _ in range(200):
        x = rng.standard_normal(B.dim)
        bx = B.mat @ x
        s = np.sqrt((bx @ lu.solve(bx)) / (x @ (N.mat @ x)))
        worst = min(worst, s)
        assert s >= beta * (1.0 - 1e-10)
    assert worst < 1.5 * beta  # random vectors do approach the minimum


def test_infsup_dense_and_iterative_agree():
    _, _, _, B, N, _, _ = cube_system(2)
    beta_dense = infsup_constant(B, N)
    beta_iter = float(np.abs(
        generalized_symmetric_eig(B, N, which="smallest_magnitude", k=3).values
    ).min())
    assert abs(beta_dense - beta_iter) < 1e-7 * beta_dense


def test_resonance_distance_finds_smallest_pencil_eigenvalue():
    mesh, mat, ned, B, N, M, G = cube_system(2, omega=1.0)
    Kc = assemble_curlcurl(ned, mat)
    lams = generalized_symmetric_eig(Kc, M, which="all", return_vectors=False).values
    lam_min = lams[lams > 1e-8].min()
    lam, gap = resonance_distance(B, N, 1.0)
    assert abs(lam - lam_min) < 1e-8 * lam_min
    assert abs(gap - (lam_min - 1.0)) < 1e-8 * lam_min


def test_resonance_distance_flags_near_resonance():
    mesh, mat, ned, B0, N0, M, _ = cube_system(2)
    Kc = assemble_curlcurl(ned, mat)
    lams = generalized_symmetric_eig(Kc, M, which="all", return_vectors=False).values
    lam_min = lams[lams > 1e-8].min()
    omega = float(np.sqrt(lam_min * 1.0001))
    mat2 = MaterialField.isotropic(mesh, 1.0, 1.0, omega)
    B, N = assemble_b(DofSystem(mesh, "nedelec0"), mat2)
    lam, gap = resonance_distance(B, N, omega)
    assert gap < 1e-3
    assert abs(lam - lam_min) < 1e-6 * lam_min


def test_eigen_selector_validation():
    _, _, _, B, N, _, _ = cube_system(1)
    with pytest.raises(SolverError):
        generalized_symmetric_eig(B, N, which="weirdest")


def test_dense_cap_enforced():
    big = sp.eye(DENSE_EIG_LIMIT + 1, format="csr")
    with pytest.raises(SolverError):
        generalized_symmetric_eig(big, big, which="all")


def test_shift_invert_cap_enforced():
    dim = SPLU_LIMIT + 1
    big = sp.eye(dim, format="csr")
    with pytest.raises(SolverError):
        generalized_symmetric_eig(big, big, which="smallest_magnitude")
