"""Reference-tetrahedron bases and quadrature for the lowest-order complex.

Families: Whitney edge functions (H(curl)), lowest-order face functions
(H(div)), and Lagrange P1/P2.  Basis evaluation works in barycentric form:
callers pass barycentric values at the evaluation points together with the
(physical) barycentric gradients of the cell, so the same code serves the
reference element and any affine image of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

from edgefem.mesh import LOCAL_EDGES, LOCAL_FACES

FAMILIES = ("nedelec0", "rt0", "lagrange1", "lagrange2")
NDOF = {"nedelec0": 6, "rt0": 4, "lagrange1": 4, "lagrange2": 10}

MAX_ORDER = 6


class ElementError(Exception):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates; weights sum to the reference volume."""

    points: np.ndarray  # (npts, 4) for tets, (npts, 3) for triangles
    weights: np.ndarray  # (npts,)
    degree: int


def _gauss01(n: int, alpha: int):
    # Gauss-Jacobi on [0,1] with weight (1-t)^alpha
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


def quadrature(order: int) -> QuadratureRule:
    """Conical-product rule on the reference tet, exact to the given degree."""
    if not 1 <= order <= MAX_ORDER:
        raise ElementError(f"unsupported quadrature order {order}")
    n = (order + 2) // 2
    t1, w1 = _gauss01(n, 2)
    t2, w2 = _gauss01(n, 1)
    t3, w3 = _gauss01(n, 0)
    a, b, c = np.meshgrid(t1, t2, t3, indexing="ij")
    x = a
    y = b * (1 - a)
    z = c * (1 - a) * (1 - b)
    w = (w1[:, None, None] * w2[None, :, None] * w3[None, None, :]).ravel()
    x, y, z = x.ravel(), y.ravel(), z.ravel()
    pts = np.stack([1 - x - y - z, x, y, z], axis=1)
    return QuadratureRule(pts, w, order)


def triangle_rule(order: int) -> QuadratureRule:
    """Collapsed-product rule on the reference triangle; weights sum to 1/2."""
    if order < 1:
        raise ElementError(f"unsupported triangle rule order {order}")
    n = (order + 2) // 2
    t1, w1 = _gauss01(n, 1)
    t2, w2 = _gauss01(n, 0)
    a, b = np.meshgrid(t1, t2, indexing="ij")
    x = a.ravel()
    y = (b * (1 - a)).ravel()
    w = (w1[:, None] * w2[None, :]).ravel()
    pts = np.stack([1 - x - y, x, y], axis=1)
    return QuadratureRule(pts, w, order)


def edge_rule(npts: int = 5):
    """Gauss-Legendre points/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return (x + 1.0) / 2.0, w / 2.0


class ReferenceBasis:
    """Evaluator for one basis family.

    eval(lam, grads) takes barycentric values lam (npts, 4) and barycentric
    gradients grads (4, 3) and returns (values, diffs):

      nedelec0 : values (npts, 6, 3), diffs = curls (6, 3), constant per cell
      rt0      : values (npts, 4, 3), diffs = divs (4,), constant per cell
      lagrange1: values (npts, 4),    diffs = grads (4, 3), constant per cell
      lagrange2: values (npts, 10),   diffs = grads (npts, 10, 3)

    Vector families follow the global orientation convention: the edge
    function for local edge (a, b) has unit circulation from a to b, and the
    face function for local face (a, b, c) has unit flux along the
    right-hand normal of that vertex order.
    """

    def __init__(self, family: str):
        if family not in FAMILIES:
            raise ElementError(f"unknown family {family!r}")
        self.family = family
        self.ndof = NDOF[family]

    def eval(self, lam: np.ndarray, grads: np.ndarray):
        lam = np.atleast_2d(np.asarray(lam, dtype=float))
        if lam.shape[1] != 4:
            raise ElementError("barycentric points must be (npts, 4)")
        if lam.min() < -1e-12 or np.abs(lam.sum(axis=1) - 1).max() > 1e-12:
            raise ElementError("point outside the reference tetrahedron")
        grads = np.asarray(grads, dtype=float)
        return getattr(self, "_" + self.family)(lam, grads)

    @staticmethod
    def _nedelec0(lam, grads):
        a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
        vals = lam[:, a, None] * grads[None, b] - lam[:, b, None] * grads[None, a]
        curls = 2.0 * np.cross(grads[a], grads[b])
        return vals, curls

    @staticmethod
    def _rt0(lam, grads):
        a, b, c = LOCAL_FACES[:, 0], LOCAL_FACES[:, 1], LOCAL_FACES[:, 2]
        cbc = np.cross(grads[b], grads[c])
        cca = np.cross(grads[c], grads[a])
        cab = np.cross(grads[a], grads[b])
        vals = 2.0 * (
            lam[:, a, None] * cbc[None]
            + lam[:, b, None] * cca[None]
            + lam[:, c, None] * cab[None]
        )
        divs = 6.0 * np.einsum("fk,fk->f", grads[a], cbc)
        return vals, divs

    @staticmethod
    def _lagrange1(lam, grads):
        return lam, grads

    @staticmethod
    def _lagrange2(lam, grads):
        a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
        vals = np.concatenate(
            [lam * (2 * lam - 1), 4 * lam[:, a] * lam[:, b]], axis=1
        )
        gv = (4 * lam - 1)[:, :, None] * grads[None]
        ge = 4 * (
            lam[:, a, None] * grads[None, b] + lam[:, b, None] * grads[None, a]
        )
        return vals, np.concatenate([gv, ge], axis=1)


def reference_gradients() -> np.ndarray:
    """Barycentric gradients of the unit reference tet (0, e1, e2, e3)."""
    return np.array(
        [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    )
