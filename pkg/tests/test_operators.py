"""Transfer, projection, and interpolation oracles."""

import numpy as np
import pytest
import scipy.sparse as sp

from edgefem.assembly import (
    DofSystem,
    MaterialField,
    assemble_b,
    assemble_mass,
    curl_map,
    gradient_map,
)
from edgefem.mesh import build_box_mesh
from edgefem.operators import (
    DiscreteField,
    KernelProjector,
    OperatorError,
    TwoGrid,
    best_approx_analytic,
    best_approx_discrete,
    canonical_interp,
    decompose_error,
    edge_prolongation,
    energy_error,
    energy_norm_analytic,
    eval_field,
    project_discrete_curlfree,
)
from edgefem.studies import MANUFACTURED

MS1 = MANUFACTURED["ms1"]


def test_prolongation_reproduces_coarse_constants():
    mesh = build_box_mesh(2)
    grid = TwoGrid(mesh, MaterialField.isotropic(mesh), 1, constrained=False)
    c = np.array([0.4, -0.9, 1.3])
    field = lambda x: np.broadcast_to(c, x.shape).copy()
    vc = canonical_interp(field, grid.dofs[0])
    vf = canonical_interp(field, grid.dofs[1])
    assert np.abs(grid.P @ vc.coeffs - vf.coeffs).max() < 1e-12


def test_galerkin_coarse_matrix_matches_prolongated_fine():
    # nested spaces: N_c = P^T N_f P entrywise
    mesh = build_box_mesh(2)
    mat = MaterialField.isotropic(mesh, omega=1.0)
    grid = TwoGrid(mesh, mat, 1)
    _, Nc = assemble_b(grid.dofs[0], grid.mats[0])
    _, Nf = assemble_b(grid.dofs[1], grid.mats[1])
    diff = Nc.mat - grid.P.T @ Nf.mat @ grid.P
    assert np.abs(diff.toarray()).max() < 1e-12


def test_prolongation_rejects_non_nested_meshes():
    mesh = build_box_mesh(1)
    ned = DofSystem(mesh, "nedelec0")
    with pytest.raises(OperatorError):
        edge_prolongation(ned, ned)


def test_twogrid_rejects_negative_depth():
    mesh = build_box_mesh(1)
    with pytest.raises(OperatorError):
        TwoGrid(mesh, MaterialField.isotropic(mesh), -1)


def test_energy_norm_of_cavity_field():
    # E = (sin(pi y) sin(pi z), 0, 0): omega^2 ||E||^2 = 1/4 and
    # ||curl E||^2 = pi^2 / 2 on the unit cube at omega = 1
    oracle = np.sqrt(0.25 + np.pi ** 2 / 2)
    mesh = build_box_mesh(2)
    mat = MaterialField.isotropic(mesh)
    v = energy_norm_analytic(mesh, mat, MS1.field, MS1.curl)
    assert abs(v - oracle) < 1e-12 * oracle


def test_best_approx_is_energy_orthogonal():
    # |||E|||^2 = |||E - P_h E|||^2 + |||P_h E|||^2 holds exactly at the
    # shared quadrature level because P_h E minimizes over the space
    mesh = build_box_mesh(2)
    mat = MaterialField.isotropic(mesh)
    ned = DofSystem(mesh, "nedelec0")
    _, N = assemble_b(ned, mat)
    ph = best_approx_analytic(ned, mat, N, MS1.field, MS1.curl)
    total = energy_norm_analytic(mesh, mat, MS1.field, MS1.curl)
    err, _, _ = energy_error(ph, mat, MS1.field, MS1.curl)
    norm_ph2 = float(ph.coeffs @ (N.mat @ ph.coeffs))
    assert abs(total ** 2 - (err ** 2 + norm_ph2)) < 1e-10 * total ** 2
    assert err < total


def test_best_approx_discrete_is_idempotent_on_coarse_fields():
    rng = np.random.default_rng(23)
    mesh = build_box_mesh(2)
    mat = MaterialField.isotropic(mesh)
    grid = TwoGrid(mesh, mat, 1)
    _, Nc = assemble_b(grid.dofs[0], grid.mats[0])
    _, Nf = assemble_b(grid.dofs[1], grid.mats[1])
    vc = rng.standard_normal(grid.dofs[0].num_dofs)
    back = best_approx_discrete(grid.P, Nc, Nf.mat @ (grid.P @ vc))
    assert np.linalg.norm(back - vc) < 1e-10 * np.linalg.norm(vc)


def test_curlfree_projection_pythagoras():
    rng = np.random.default_rng(29)
    mesh = build_box_mesh(2)
    mat = MaterialField.isotropic(mesh)
    ned = DofSystem(mesh, "nedelec0")
    lag = DofSystem(mesh, "lagrange1")
    M = assemble_mass(ned, mat)
    G = gradient_map(lag, ned)
    v = DiscreteField(rng.standard_normal(ned.num_dofs), ned)
    proj, p = project_discrete_curlfree(v, M, G)
    rem = v.coeffs - proj.coeffs
    n2 = lambda u: float(u @ (M.mat @ u))
    assert abs(n2(v.coeffs) - n2(proj.coeffs) - n2(rem)) < 1e-10 * n2(v.coeffs)
    # the projected part is an exact discrete gradient, hence curl-free
    _, curls = eval_field(proj, np.full((1, 4), 0.25))
    assert np.abs(curls).max() < 1e-10


def test_kernel_projector_recovers_discrete_gradients():
    rng = np.random.default_rng(31)
    mesh = build_box_mesh(2)
    mat = MaterialField.isotropic(mesh)
    grid = TwoGrid(mesh, mat, 1)
    projector = KernelProjector(grid)
    lag_c = DofSystem(mesh, "lagrange1")
    Gc = gradient_map(lag_c, grid.dofs[0])
    Mc = assemble_mass(grid.dofs[0], mat)
    p = rng.standard_normal(lag_c.num_dofs)
    v = Gc @ p
    target = float(v @ (Mc.mat @ v))
    _, norm2 = projector.project(projector.rhs_coarse_field(v))
    # coarse gradients are nested in the fine kernel space: exact recovery
    assert abs(norm2 - target) < 1e-10 * target


def test_canonical_edge_interp_of_linear_field():
    mesh = build_box_mesh(2)
    ned = DofSystem(mesh, "nedelec0", constrained=False)
    a = np.array([0.2, 0.5, -0.3])
    b = np.array([1.0, -0.7, 0.4])
    field = lambda x: a + np.cross(b, x)
    f = canonical_interp(field, ned)
    pa = mesh.vertices[mesh.edges[:, 0]]
    pb = mesh.vertices[mesh.edges[:, 1]]
    mid = 0.5 * (pa + pb)
    expected = np.einsum("ek,ek->e", a + np.cross(b, mid), pb - pa)
    assert np.abs(f.entity_coeffs() - expected).max() < 1e-12


def test_canonical_face_interp_of_constant_field():
    mesh = build_box_mesh(2)
    rt = DofSystem(mesh, "rt0", constrained=False)
    c = np.array([0.3, -1.1, 0.7])
    f = canonical_interp(lambda x: np.broadcast_to(c, x.shape).copy(), rt)
    pi_, pj, pk = (mesh.vertices[mesh.faces[:, i]] for i in range(3))
    expected = 0.5 * np.cross(pj - pi_, pk - pi_) @ c
    assert np.abs(f.entity_coeffs() - expected).max() < 1e-12


def second_field(x):
    out = np.zeros_like(x)
    out[..., 1] = np.sin(np.pi * x[..., 2]) * np.cos(x[..., 0])
    return out


def second_curl(x):
    out = np.zeros_like(x)
    out[..., 0] = -np.pi * np.cos(np.pi * x[..., 2]) * np.cos(x[..., 0])
    out[..., 2] = -np.sin(np.pi * x[..., 2]) * np.sin(x[..., 0])
    return out


def grad_field(x):
    return np.stack(
        [x[..., 1] * x[..., 2], x[..., 0] * x[..., 2], x[..., 0] * x[..., 1]],
        axis=-1,
    )


@pytest.mark.parametrize(
    "v_fn,c_fn",
    [
        (MS1.field, MS1.curl),
        (second_field, second_curl),
        (grad_field, lambda x: np.zeros_like(x)),
    ],
    ids=["cavity", "mixed_trig", "gradient"],
)
def test_interpolation_commutes_with_curl(v_fn, c_fn):
    # curl(edge interp v) = face interp(curl v) up to the face-rule error
    mesh = build_box_mesh(2)
    ned = DofSystem(mesh, "nedelec0", constrained=False)
    rt = DofSystem(mesh, "rt0", constrained=False)
    C = curl_map(ned, rt)
    iv = canonical_interp(v_fn, ned)
    ic = canonical_interp(c_fn, rt)
    assert np.abs(C @ iv.coeffs - ic.coeffs).max() < 5e-8


def test_canonical_interp_rejects_other_spaces():
    mesh = build_box_mesh(1)
    lag = DofSystem(mesh, "lagrange1")
    with pytest.raises(OperatorError):
        canonical_interp(grad_field, lag)


def test_error_decomposition_components_close():
    mesh = build_box_mesh(2)
    mat = MaterialField.isotropic(mesh)
    grid = TwoGrid(mesh, mat, 1)
    ned = grid.dofs[0]
    _, N = assemble_b(ned, mat)
    ph = best_approx_analytic(ned, mat, N, MS1.field, MS1.curl)
    split = decompose_error(MS1.field, MS1.curl, ph, KernelProjector(grid))
    assert split.omega_theta0_eps >= 0.0
    assert split.omega_thetapi_eps >= 0.0
    assert split.omega_thetapi_eps <= split.energy_error
    assert abs(split.component_sum - split.energy_error) < 1e-10 * split.energy_error
    assert split.surrogate_r == 1


def test_error_decomposition_requires_coarse_level_field():
    mesh = build_box_mesh(1)
    mat = MaterialField.isotropic(mesh)
    grid = TwoGrid(mesh, mat, 1)
    fine_field = DiscreteField(np.zeros(grid.dofs[1].num_dofs), grid.dofs[1])
    with pytest.raises(OperatorError):
        decompose_error(MS1.field, MS1.curl, fine_field, KernelProjector(grid))


def test_discrete_field_validates_length():
    mesh = build_box_mesh(1)
    ned = DofSystem(mesh, "nedelec0")
    with pytest.raises(OperatorError):
        DiscreteField(np.zeros(ned.num_dofs + 1), ned)


def test_eval_field_rejects_non_edge_spaces():
    mesh = build_box_mesh(1)
    lag = DofSystem(mesh, "lagrange1")
    field = DiscreteField(np.zeros(lag.num_dofs), lag)
    with pytest.raises(OperatorError):
        eval_field(field, np.full((1, 4), 0.25))
