"""Conforming tetrahedral meshes of axis-aligned boxes.

Boxes are subdivided into a structured grid of cubes, each cube into six
tetrahedra sharing its main diagonal (Kuhn/Freudenthal split).  All entity
tables carry a deterministic global orientation: an edge (i, j) is stored
with i < j and its tangent points from i to j; a face (i, j, k) is stored
sorted and its normal is (p_j - p_i) x (p_k - p_i).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# local edges / faces of a tet (face m is opposite vertex m)
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])

_AXIS_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


@dataclass
class TetMesh:
    """Tetrahedral mesh with oriented edge/face incidence tables.

    vertices : (V, 3) coordinates
    tets     : (T, 4) vertex indices, positively oriented
    edges    : (E, 2) vertex indices, each row sorted ascending
    faces    : (F, 3) vertex indices, each row sorted ascending
    tet_edges, edge_signs : (T, 6) edge index / orientation sign per local edge
    tet_faces, face_signs : (T, 4) face index / outward-vs-global-normal sign
    boundary_* : boolean masks over vertices / edges / faces
    parent   : (T,) index into the parent mesh's tets, or None for a root mesh
    """

    vertices: np.ndarray
    tets: np.ndarray
    edges: np.ndarray = field(init=False)
    faces: np.ndarray = field(init=False)
    tet_edges: np.ndarray = field(init=False)
    edge_signs: np.ndarray = field(init=False)
    tet_faces: np.ndarray = field(init=False)
    face_signs: np.ndarray = field(init=False)
    boundary_vertices: np.ndarray = field(init=False)
    boundary_edges: np.ndarray = field(init=False)
    boundary_faces: np.ndarray = field(init=False)
    h: float = field(init=False)
    parent: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.tets = np.asarray(self.tets, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be (V, 3)")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise MeshError("tets must be (T, 4)")
        vols = self.volumes()
        if np.any(vols <= 0.0):
            raise MeshError("tets must be positively oriented with positive volume")
        self._build_entity_tables()
        corners = self.vertices[self.tets]  # (T, 4, 3)
        diffs = corners[:, LOCAL_EDGES[:, 1]] - corners[:, LOCAL_EDGES[:, 0]]
        self.h = float(np.sqrt((diffs ** 2).sum(axis=2).max()))

    # -- topology ----------------------------------------------------------

    def _build_entity_tables(self):
        tets = self.tets
        pairs = tets[:, LOCAL_EDGES]  # (T, 6, 2)
        self.edge_signs = np.where(pairs[:, :, 0] < pairs[:, :, 1], 1, -1).astype(np.int8)
        pairs_sorted = np.sort(pairs, axis=2).reshape(-1, 2)
        self.edges, inv = np.unique(pairs_sorted, axis=0, return_inverse=True)
        self.tet_edges = inv.reshape(-1, 6)

        triples = np.sort(tets[:, LOCAL_FACES], axis=2).reshape(-1, 3)
        self.faces, finv = np.unique(triples, axis=0, return_inverse=True)
        self.tet_faces = finv.reshape(-1, 4)

        counts = np.bincount(self.tet_faces.ravel(), minlength=len(self.faces))
        if counts.max() > 2:
            raise MeshError("non-conforming mesh: a face is shared by more than 2 tets")
        self.boundary_faces = counts == 1

        # sign: +1 where the sorted-index face normal points out of the tet
        v = self.vertices
        fa, fb, fc = (self.faces[self.tet_faces, k] for k in range(3))
        normal = np.cross(v[fb] - v[fa], v[fc] - v[fa])  # (T, 4, 3)
        centroid = (v[fa] + v[fb] + v[fc]) / 3.0
        opposite = v[tets]  # face m is opposite local vertex m
        outward = np.einsum("tfk,tfk->tf", normal, centroid - opposite)
        self.face_signs = np.where(outward > 0, 1, -1).astype(np.int8)

        self.boundary_vertices = np.zeros(len(self.vertices), dtype=bool)
        self.boundary_vertices[self.faces[self.boundary_faces].ravel()] = True
        bnd_pairs = self.faces[self.boundary_faces][:, [[0, 1], [0, 2], [1, 2]]].reshape(-1, 2)
        self.boundary_edges = np.zeros(len(self.edges), dtype=bool)
        eidx = find_edges(self.edges, bnd_pairs)
        self.boundary_edges[eidx] = True

    # -- geometry ----------------------------------------------------------

    def volumes(self) -> np.ndarray:
        c = self.vertices[self.tets]
        return np.linalg.det(c[:, 1:] - c[:, :1]) / 6.0

    def centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    def barycentric_gradients(self) -> np.ndarray:
        """Gradients of the four barycentric coordinates, shape (T, 4, 3)."""
        c = self.vertices[self.tets]
        aug = np.concatenate([np.ones((len(self.tets), 4, 1)), c], axis=2)
        return np.linalg.inv(aug)[:, 1:, :].transpose(0, 2, 1)

    # -- counters ----------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def num_tets(self) -> int:
        return len(self.tets)

    def euler_characteristic(self) -> int:
        return self.num_vertices - self.num_edges + self.num_faces - self.num_tets


def find_edges(edges: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Indices into the sorted edge table for each (sorted) vertex pair."""
    pairs = np.sort(np.asarray(pairs), axis=1)
    keys = edges[:, 0] * (edges.max() + 1) + edges[:, 1]
    want = pairs[:, 0] * (edges.max() + 1) + pairs[:, 1]
    order = np.argsort(keys)
    pos = np.searchsorted(keys, want, sorter=order)
    idx = order[pos]
    if not np.array_equal(edges[idx], pairs):
        raise MeshError("pair not present in edge table")
    return idx


def build_box_mesh(n: int, bounds=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))) -> TetMesh:
    """Kuhn (6 tets per cube) mesh of an axis-aligned box with n cells per axis."""
    if n < 1:
        raise MeshError("n must be >= 1")
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    if np.any(hi <= lo):
        raise MeshError("degenerate box: bounds must satisfy hi > lo componentwise")

    ticks = [np.linspace(lo[d], hi[d], n + 1) for d in range(3)]
    zz, yy, xx = np.meshgrid(ticks[2], ticks[1], ticks[0], indexing="ij")
    vertices = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    def vid(i, j, k):
        return i + (n + 1) * (j + (n + 1) * k)

    tets = []
    for k in range(n):
        for j in range(n):
            for i in range(n):
                base = np.array([i, j, k])
                for perm in _AXIS_PERMS:
                    steps = np.zeros((4, 3), dtype=int)
                    steps[0] = base
                    for s, axis in enumerate(perm):
                        steps[s + 1] = steps[s]
                        steps[s + 1, axis] += 1
                    tets.append([vid(*ijk) for ijk in steps])
    tets = np.array(tets, dtype=np.int64)
    tets = _orient_positive(vertices, tets)
    return TetMesh(vertices, tets)


def _orient_positive(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    c = vertices[tets]
    neg = np.linalg.det(c[:, 1:] - c[:, :1]) < 0
    tets = tets.copy()
    tets[neg] = tets[neg][:, [0, 1, 3, 2]]
    return tets


def uniform_refine(mesh: TetMesh) -> TetMesh:
    """Red refinement: each tet splits into 8 children.

    New vertices are parent-edge midpoints, appended after the parent
    vertices in parent-edge order.  The interior octahedron is always cut
    along the diagonal joining the midpoints of sorted local edges (0,2)
    and (1,3), so refinement is independent of input tet ordering and the
    children tile the parent exactly (nested meshes).
    """
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])

    t = np.sort(mesh.tets, axis=1)  # fixed diagonal rule needs a canonical order
    nv = mesh.num_vertices
    m = {}
    for a, b in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)):
        m[a, b] = nv + find_edges(mesh.edges, np.stack([t[:, a], t[:, b]], axis=1))

    v0, v1, v2, v3 = (t[:, k] for k in range(4))
    children = np.stack(
        [
            np.stack([v0, m[0, 1], m[0, 2], m[0, 3]], axis=1),
            np.stack([m[0, 1], v1, m[1, 2], m[1, 3]], axis=1),
            np.stack([m[0, 2], m[1, 2], v2, m[2, 3]], axis=1),
            np.stack([m[0, 3], m[1, 3], m[2, 3], v3], axis=1),
            np.stack([m[0, 1], m[0, 2], m[0, 3], m[1, 3]], axis=1),
            np.stack([m[0, 1], m[0, 2], m[1, 2], m[1, 3]], axis=1),
            np.stack([m[0, 2], m[0, 3], m[1, 3], m[2, 3]], axis=1),
            np.stack([m[0, 2], m[1, 2], m[1, 3], m[2, 3]], axis=1),
        ],
        axis=1,
    )  # (T, 8, 4)
    tets = children.reshape(-1, 4)
    parent = np.repeat(np.arange(mesh.num_tets), 8)
    tets = _orient_positive(vertices, tets)
    out = TetMesh(vertices, tets)
    out.parent = parent
    return out


def entity_tables(mesh: TetMesh):
    """Recompute (edge signs, face signs, boundary sets) from scratch.

    Deterministic and idempotent; raises MeshError on non-conforming input.
    Returned boundary sets are index arrays over vertices, edges, faces.
    """
    rebuilt = TetMesh(mesh.vertices, mesh.tets)
    bnd = (
        np.flatnonzero(rebuilt.boundary_vertices),
        np.flatnonzero(rebuilt.boundary_edges),
        np.flatnonzero(rebuilt.boundary_faces),
    )
    return rebuilt.edge_signs, rebuilt.face_signs, bnd
