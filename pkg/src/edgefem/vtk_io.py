"""Legacy ASCII VTK export for tetrahedral meshes and edge fields.

Writes DATASET UNSTRUCTURED_GRID with cell type 10 (linear tetrahedron),
the format every mainstream viewer still reads.  Edge-element solutions
are lowered to vertex vectors by averaging the elementwise field over
the tetrahedra incident to each vertex; that reconstruction is for
inspection only and has no role in any computed quantity.
"""

from __future__ import annotations

import numpy as np

from .assembly import DofSystem
from .mesh import TetMesh
from .operators import DiscreteField, eval_field

__all__ = ["write_vtk", "edge_field_at_vertices"]


def edge_field_at_vertices(field: DiscreteField) -> np.ndarray:
    """Average the piecewise field over tets incident to each vertex."""
    dofs = field.dofs
    if dofs.space != "nedelec0":
        raise ValueError(f"vertex lowering handles edge fields, got {dofs.space!r}")
    mesh = dofs.mesh
    nv = len(mesh.vertices)
    acc = np.zeros((nv, 3))
    count = np.zeros(nv)
    vals, _ = eval_field(field, np.eye(4))  # one evaluation per tet corner
    for corner in range(4):
        np.add.at(acc, mesh.tets[:, corner], vals[:, corner])
        np.add.at(count, mesh.tets[:, corner], 1.0)
    return acc / count[:, None]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_vtk(
    path,
    mesh: TetMesh,
    point_vectors: dict[str, np.ndarray] | None = None,
    title: str = "tetrahedral mesh",
) -> None:
    """Write the mesh and optional per-vertex vector fields.

    point_vectors maps a field name to an (nv, 3) array.  The title line
    is capped at 255 characters by the format.
    """
    nv = len(mesh.vertices)
    nt = len(mesh.tets)
    lines = [
        "# vtk DataFile Version 3.0",
        title[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    for p in mesh.vertices:
        lines.append(" ".join(_fmt(c) for c in p))
    lines.append(f"CELLS {nt} {5 * nt}")
    for t in mesh.tets:
        lines.append("4 " + " ".join(str(int(v)) for v in t))
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["10"] * nt)
    if point_vectors:
        lines.append(f"POINT_DATA {nv}")
        for name, arr in point_vectors.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (nv, 3):
                raise ValueError(
                    f"field {name!r} has shape {arr.shape}, expected {(nv, 3)}"
                )
            lines.append(f"VECTORS {name} double")
            for row in arr:
                lines.append(" ".join(_fmt(c) for c in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
