"""Linear solves and symmetric generalized eigencomputations.

Two solve paths: sparse LU for systems up to desk scale, and a projected
conjugate-gradient solver for the large fine-grid systems arising in the
two-grid factor estimators, where the curl-curl form is positive definite
on the discretely divergence-free complement but LU fill-in exceeds
memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu

from edgefem.assembly import as_csr

DENSE_EIG_LIMIT = 3000
SPLU_LIMIT = 120000  # beyond this, LU fill-in of 3D curl-curl systems is unsafe


class SolverError(Exception):
    pass


def _cond_estimate(a: sp.csr_matrix) -> float:
    if a.shape[0] <= DENSE_EIG_LIMIT:
        return float(np.linalg.cond(a.toarray()))
    try:
        hi = float(abs(eigsh(a, k=1, which="LM", return_eigenvectors=False)[0]))
        lo = float(abs(eigsh(a, k=1, sigma=0, which="LM", return_eigenvectors=False)[0]))
        return hi / lo
    except Exception:
        return float("inf")


def solve_symmetric(A, rhs: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Direct solve with residual certification.

    Raises SolverError with a condition estimate when the factorization
    fails or the relative residual exceeds tol, which signals omega^2 at or
    near a discrete resonance for the indefinite problem matrix.
    """
    a = as_csr(A)
    rhs = np.asarray(rhs, dtype=float)
    nrhs = np.linalg.norm(rhs)
    if nrhs == 0.0:
        return np.zeros_like(rhs)
    try:
        x = splu(a.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(
            f"singular system (cond≈{_cond_estimate(a):.2e}): {exc}"
        ) from exc
    resid = np.linalg.norm(a @ x - rhs) / nrhs
    if not np.isfinite(resid) or resid > tol:
        raise SolverError(
            f"solve residual {resid:.2e} exceeds {tol:.0e} "
            f"(cond≈{_cond_estimate(a):.2e}); omega^2 may sit near a resonance"
        )
    return x


class ComplementSolver:
    """Solve B x = b restricted to X = {x : G^T M x = 0} by projected PCG.

    B = Kc - omega^2 M is positive definite on X whenever omega^2 lies
    below the smallest nonzero pencil eigenvalue, even though it is
    indefinite on the full edge space.  The projector onto X along the
    gradient range needs one Poisson-type backsolve (G^T M G) per
    application; Jacobi preconditioning keeps iteration counts mesh-stable
    enough for desk scale.
    """

    def __init__(self, B, M, G, tol: float = 1e-10, maxiter: int = 10000,
                 coarse_P=None, coarse_solve=None):
        self.B = as_csr(B)
        self.M = as_csr(M)
        self.G = sp.csr_matrix(G)
        self.tol = tol
        self.maxiter = maxiter
        self.L = splu((self.G.T @ self.M @ self.G).tocsc())
        d = self.B.diagonal()
        self.dinv = 1.0 / np.where(d > 0, d, 1.0)
        self.coarse_P = sp.csr_matrix(coarse_P) if coarse_P is not None else None
        self.coarse_solve = coarse_solve
        self.iterations = 0

    def project(self, v: np.ndarray) -> np.ndarray:
        """epsilon-orthogonal projection onto X (drops the gradient part)."""
        return v - self.G @ self.L.solve(self.G.T @ (self.M @ v))

    def _project_dual(self, r: np.ndarray) -> np.ndarray:
        return r - self.M @ (self.G @ self.L.solve(self.G.T @ r))

    def _precondition(self, r: np.ndarray) -> np.ndarray:
        # additive two-level: Jacobi handles the high-frequency curl modes,
        # the coarse space (when supplied) the smooth ones.  The coarse
        # right-hand side P^T r inherits G_c^T (P^T r) = 0, so the coarse
        # solution stays in the coarse complement where B_c is SPD.
        z = self.dinv * r
        if self.coarse_P is not None:
            z = z + self.coarse_P @ self.coarse_solve(self.coarse_P.T @ r)
        return self.project(z)

    def solve(self, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b)
        if x0 is None:
            x = np.zeros_like(b)
            r = self._project_dual(b)
        else:
            x = self.project(x0)
            r = self._project_dual(b - self.B @ x)
        if np.linalg.norm(r) <= self.tol * nb:
            self.iterations = 0
            return self.project(x)
        z = self._precondition(r)
        p = z.copy()
        rz = r @ z
        for it in range(self.maxiter):
            Ap = self._project_dual(self.B @ p)
            alpha = rz / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            if np.linalg.norm(r) <= self.tol * nb:
                self.iterations = it + 1
                break
            z = self._precondition(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        else:
            raise SolverError(
                f"projected PCG stalled at residual "
                f"{np.linalg.norm(r) / nb:.2e} after {self.maxiter} iterations"
            )
        return self.project(x)


def make_curl_solver(B, M, G, tol: float = 1e-10):
    """Solver for the problem matrix on the divergence-free complement.

    Uses sparse LU below SPLU_LIMIT unknowns (the LU solution lands in X
    automatically when the right-hand side is M-orthogonal to gradients)
    and projected PCG above.
    """
    b = as_csr(B)
    if b.shape[0] <= SPLU_LIMIT:
        lu = splu(b.tocsc())
        return lu.solve
    return ComplementSolver(B, M, G, tol=tol).solve


@dataclass
class EigenResult:
    values: np.ndarray  # ascending
    vectors: np.ndarray | None
    residuals: np.ndarray

    def __post_init__(self):
        order = np.argsort(self.values)
        self.values = np.asarray(self.values)[order]
        self.residuals = np.asarray(self.residuals)
        if len(self.residuals) == len(order):
            self.residuals = self.residuals[order]
        if self.vectors is not None:
            self.vectors = np.asarray(self.vectors)[:, order]


def _eig_residuals(a, bm, vals, vecs, tol):
    na = sp.linalg.norm(a)
    nb = sp.linalg.norm(bm)
    res = np.linalg.norm(a @ vecs - (bm @ vecs) * vals[None, :], axis=0)
    bounds = tol * (na + np.abs(vals) * nb) * np.linalg.norm(vecs, axis=0)
    worst = int(np.argmax(res - bounds))
    if res[worst] > bounds[worst]:
        raise SolverError(
            f"eigenpair residual {res[worst]:.2e} exceeds certified "
            f"bound {bounds[worst]:.2e}"
        )
    return res


def generalized_symmetric_eig(
    A,
    Bm,
    which: str = "all",
    k: int = 6,
    sigma: float | None = None,
    tol: float = 1e-8,
    return_vectors: bool = True,
) -> EigenResult:
    """Eigenpairs of A x = lambda Bm x for symmetric A and SPD Bm.

    which: "all" (dense, dim <= 3000), "smallest_magnitude" (shift-invert
    at 0 or sigma), "smallest" / "largest" (algebraic ends).
    """
    a = as_csr(A)
    bm = as_csr(Bm)
    if a.shape != bm.shape:
        raise SolverError("pencil dimensions do not match")
    dim = a.shape[0]
    if which == "all":
        if dim > DENSE_EIG_LIMIT:
            raise SolverError(
                f"dense eigensolve capped at {DENSE_EIG_LIMIT}, got {dim}"
            )
        ad, bd = a.toarray(), bm.toarray()
        try:
            if return_vectors:
                vals, vecs = scipy.linalg.eigh(ad, bd)
            else:
                vals = scipy.linalg.eigh(ad, bd, eigvals_only=True)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"pencil right-hand side is not SPD: {exc}") from exc
        if not return_vectors:
            return EigenResult(vals, None, np.zeros(0))
        res = _eig_residuals(a, bm, vals, vecs, max(tol, 1e-10))
        return EigenResult(vals, vecs, res)

    k = min(k, dim - 1)
    v0 = np.full(dim, 1.0 / np.sqrt(dim))  # fixed start for determinism
    if which == "smallest_magnitude":
        if dim > SPLU_LIMIT:
            raise SolverError(
                f"shift-invert factorization capped at {SPLU_LIMIT} unknowns, "
                f"got {dim}"
            )
        vals, vecs = eigsh(a, k=k, M=bm, sigma=0.0 if sigma is None else sigma,
                           which="LM", tol=tol, v0=v0)
    elif which == "largest":
        vals, vecs = eigsh(a, k=k, M=bm, which="LA", tol=tol, v0=v0)
    elif which == "smallest":
        vals, vecs = eigsh(a, k=k, M=bm, which="SA", tol=tol, v0=v0)
    else:
        raise SolverError(f"unknown eigen selector {which!r}")
    res = _eig_residuals(a, bm, vals, vecs, max(tol, 1e-8) * 10)
    return EigenResult(vals, vecs if return_vectors else None, res)


def infsup_constant(B, N) -> float:
    """Smallest |lambda| of the pencil B x = lambda N x (N SPD).

    This is the discrete inf-sup constant of the problem form measured in
    the energy norm, by the spectral min-max for symmetric pencils.
    """
    dim = as_csr(B).shape[0]
    if dim <= DENSE_EIG_LIMIT:
        r = generalized_symmetric_eig(B, N, which="all", return_vectors=False)
        return float(np.abs(r.values).min())
    r = generalized_symmetric_eig(B, N, which="smallest_magnitude", k=1)
    return float(np.abs(r.values).min())


def resonance_distance(B, N, omega: float):
    """Distance from omega^2 to the divergence-free curl-curl spectrum.

    Returns (lambda_nearest, relative_gap).  Uses the pencil (B, N): the
    eigenvalue mu of smallest magnitude corresponds to the curl-curl
    eigenvalue lambda = omega^2 (1+mu)/(1-mu) nearest omega^2 in the
    relative metric; gradient directions map to mu = -1 and cannot mask a
    resonance.
    """
    dim = as_csr(B).shape[0]
    if dim <= DENSE_EIG_LIMIT:
        r = generalized_symmetric_eig(B, N, which="all", return_vectors=False)
        mus = r.values
    else:
        mus = generalized_symmetric_eig(B, N, which="smallest_magnitude", k=3).values
    mu = mus[np.abs(mus).argmin()]
    if abs(1.0 - mu) < 1e-14:
        return float("inf"), float("inf")
    lam = omega ** 2 * (1.0 + mu) / (1.0 - mu)
    return float(lam), float(abs(lam - omega ** 2) / omega ** 2)
