"""Legacy VTK export: golden header, counts, and value round-trip."""

import numpy as np
import pytest

from edgefem.assembly import DofSystem
from edgefem.mesh import build_box_mesh
from edgefem.operators import DiscreteField, canonical_interp
from edgefem.vtk_io import edge_field_at_vertices, write_vtk


def test_vertex_averaging_reproduces_constants():
    # a constant edge field evaluates to the same constant in every tet,
    # so corner averaging must return it exactly at every vertex
    mesh = build_box_mesh(2)
    ned = DofSystem(mesh, "nedelec0", constrained=False)
    c = np.array([0.6, -0.2, 1.1])
    field = canonical_interp(lambda x: np.broadcast_to(c, x.shape).copy(), ned)
    at_v = edge_field_at_vertices(field)
    assert at_v.shape == (len(mesh.vertices), 3)
    assert np.abs(at_v - c).max() < 1e-12


def test_vtk_file_layout(tmp_path):
    mesh = build_box_mesh(1)
    ned = DofSystem(mesh, "nedelec0", constrained=False)
    field = canonical_interp(
        lambda x: np.broadcast_to([1.0, 2.0, 3.0], x.shape).copy(), ned
    )
    vec = edge_field_at_vertices(field)
    path = tmp_path / "out.vtk"
    write_vtk(path, mesh, point_vectors={"E_h": vec}, title="unit box")
    lines = path.read_text().splitlines()
    nv, nt = len(mesh.vertices), len(mesh.tets)

    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[1] == "unit box"
    assert lines[2] == "ASCII"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert lines[4] == f"POINTS {nv} double"

    cells_at = 5 + nv
    assert lines[cells_at] == f"CELLS {nt} {5 * nt}"
    for k in range(nt):
        parts = lines[cells_at + 1 + k].split()
        assert parts[0] == "4"
        assert [int(p) for p in parts[1:]] == list(mesh.tets[k])

    types_at = cells_at + 1 + nt
    assert lines[types_at] == f"CELL_TYPES {nt}"
    assert lines[types_at + 1 : types_at + 1 + nt] == ["10"] * nt

    data_at = types_at + 1 + nt
    assert lines[data_at] == f"POINT_DATA {nv}"
    assert lines[data_at + 1] == "VECTORS E_h double"

    # points and vectors parse back to the exact stored doubles
    pts = np.array([[float(c) for c in ln.split()] for ln in lines[5:5 + nv]])
    assert np.array_equal(pts, mesh.vertices)
    back = np.array(
        [[float(c) for c in ln.split()] for ln in lines[data_at + 2 : data_at + 2 + nv]]
    )
    assert np.array_equal(back, vec)
    assert lines[-1] == lines[data_at + 1 + nv]  # file ends after the field


def test_vtk_without_fields_omits_point_data(tmp_path):
    mesh = build_box_mesh(1)
    path = tmp_path / "mesh.vtk"
    write_vtk(path, mesh)
    text = path.read_text()
    assert "POINT_DATA" not in text
    assert text.endswith("\n")


def test_vtk_rejects_wrong_field_shape(tmp_path):
    mesh = build_box_mesh(1)
    with pytest.raises(ValueError, match="expected"):
        write_vtk(tmp_path / "bad.vtk", mesh, point_vectors={"f": np.zeros((3, 3))})


def test_vtk_title_is_truncated(tmp_path):
    mesh = build_box_mesh(1)
    path = tmp_path / "t.vtk"
    write_vtk(path, mesh, title="x" * 300)
    assert len(path.read_text().splitlines()[1]) == 255
