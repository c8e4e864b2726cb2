"""Loop-Star incidence matrices, graph Laplacians, and quasi-Helmholtz
projectors on the edge basis.

Sign conventions.  For edge m with directed pair tail -> head (the direction
traversed by the positive cell in its own winding):

    Sigma[m, c] = +1 if c is the positive cell, -1 if the negative cell;
    Lambda[m, v] = +1 if v is the head vertex,  -1 if the tail vertex.

With these choices Sigma^T Lambda = 0 holds in integer arithmetic: each
triangle's three directed boundary edges contribute +1/-1 per vertex of a
closed cycle.  Lambda^T Lambda is then the vertex graph Laplacian and
Sigma^T Sigma the cell-adjacency graph Laplacian.

The solenoidal/nonsolenoidal splitting projectors are built from these
matrices and their Laplacian pseudo-inverses; the primal normalized variants
use Gram-rescaled bases and become mutually orthogonal complements on
simply connected surfaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .mesh import BasisTopology

__all__ = [
    "sigma_matrix",
    "lambda_matrix",
    "graph_laplacian",
    "laplacian_pinv_apply",
    "laplacian_pinv_dense",
    "ProjectorSet",
    "projectors",
    "normalized_bases",
    "helmholtz_split",
]

# dense linear algebra is the default up to this dimension; beyond it the
# pseudo-inverse application falls back to deflated CG
DENSE_LIMIT = 5000

# relative eigenvalue threshold below which a mode counts as nullspace
NULL_CUTOFF = 1e-12


def sigma_matrix(topo: BasisTopology) -> sp.csr_array:
    """Star-to-edge incidence (N x num_cells, entries in {-1, 0, +1})."""
    n = topo.num_edges
    rows = np.repeat(np.arange(n), 2)
    cols = np.stack([topo.c_plus, topo.c_minus], axis=1).reshape(-1)
    vals = np.tile(np.array([1, -1], dtype=np.int64), n)
    return sp.csr_array((vals, (rows, cols)), shape=(n, len(topo.tri_areas)))


def lambda_matrix(topo: BasisTopology) -> sp.csr_array:
    """Loop-to-edge incidence (N x num_vertices, entries in {-1, 0, +1})."""
    n = topo.num_edges
    num_vertices = int(max(topo.head.max(), topo.tail.max())) + 1
    rows = np.repeat(np.arange(n), 2)
    cols = np.stack([topo.head, topo.tail], axis=1).reshape(-1)
    vals = np.tile(np.array([1, -1], dtype=np.int64), n)
    return sp.csr_array((vals, (rows, cols)), shape=(n, num_vertices))


def graph_laplacian(incidence) -> sp.csr_array:
    """X^T X for an incidence matrix X; symmetric positive semidefinite."""
    x = sp.csr_array(incidence)
    return sp.csr_array(x.T @ x)


def _as_dense(matrix) -> np.ndarray:
    if sp.issparse(matrix):
        return matrix.toarray().astype(float)
    return np.asarray(matrix, dtype=float)


def laplacian_pinv_dense(lap) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a PSD matrix via eigendecomposition."""
    w, u = sla.eigh(_as_dense(lap))
    keep = w > NULL_CUTOFF * max(w[-1], 0.0)
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return (u * inv) @ u.T


def laplacian_pinv_apply(
    lap,
    v: np.ndarray,
    *,
    rtol: float = 1e-12,
    maxiter: int | None = None,
    dense_limit: int = DENSE_LIMIT,
) -> np.ndarray:
    """Apply the graph-Laplacian pseudo-inverse to a vector.

    Dense eigendecomposition up to `dense_limit`; above that, conjugate
    gradients on the complement of the constant nullspace (valid for the
    combinatorial Laplacians of a connected mesh).  Raises ConvergenceError
    when CG exhausts its budget (default 10 * dimension iterations).
    """
    v = np.asarray(v, dtype=float)
    n = lap.shape[0]
    if n <= dense_limit:
        return laplacian_pinv_dense(lap) @ v

    b = v - v.mean()
    if maxiter is None:
        maxiter = 10 * n
    x, info = spla.cg(sp.csr_array(lap).astype(float), b, rtol=rtol, atol=0.0,
                      maxiter=maxiter)
    if info != 0:
        raise ConvergenceError(
            f"Laplacian CG did not reach rtol={rtol} within {maxiter} iterations"
        )
    # range(L) is orthogonal to the constant vector; remove rounding drift
    return x - x.mean()


@dataclass(frozen=True)
class ProjectorSet:
    """The five splitting projectors (dense N x N).

    p_sigma / p_lambda_h split off the nonsolenoidal part and its
    complement; pd_lambda / pd_sigma_h the solenoidal part and complement;
    p_h = I - p_sigma - pd_lambda spans the harmonic subspace with
    rank 2 * genus.  `normalized` records whether the generating bases were
    Gram-rescaled.
    """

    p_sigma: np.ndarray
    p_lambda_h: np.ndarray
    pd_lambda: np.ndarray
    pd_sigma_h: np.ndarray
    p_h: np.ndarray
    harmonic_dim: int
    normalized: bool


def _range_projector(basis) -> np.ndarray:
    """Orthogonal projector onto range(X) as X (X^T X)^+ X^T."""
    x = _as_dense(basis)
    w, u = sla.eigh(x.T @ x)
    keep = w > NULL_CUTOFF * max(w[-1], 0.0)
    xu = x @ u[:, keep]
    return (xu / w[keep]) @ xu.T


def projectors(sigma, lam, genus: int | None = None, normalized: bool = False) -> ProjectorSet:
    """Build the splitting projectors from a Star and a Loop basis.

    When `genus` is given, the harmonic-subspace dimension is checked to be
    exactly 2 * genus (trace of a projector equals its rank).
    """
    p_sigma = _range_projector(sigma)
    pd_lambda = _range_projector(lam)
    n = p_sigma.shape[0]
    eye = np.eye(n)
    p_h = eye - p_sigma - pd_lambda
    trace = float(np.trace(p_h))
    harmonic_dim = int(round(trace))
    if abs(trace - harmonic_dim) > 1e-8 * max(n, 1):
        raise np.linalg.LinAlgError(
            f"harmonic projector trace {trace} is not close to an integer"
        )
    if genus is not None and harmonic_dim != 2 * genus:
        raise ValueError(
            f"harmonic dimension {harmonic_dim} does not match 2 * genus = {2 * genus}"
        )
    return ProjectorSet(
        p_sigma=p_sigma,
        p_lambda_h=eye - p_sigma,
        pd_lambda=pd_lambda,
        pd_sigma_h=eye - pd_lambda,
        p_h=p_h,
        harmonic_dim=harmonic_dim,
        normalized=normalized,
    )


def _sqrt_spd(matrix, inverse: bool) -> np.ndarray:
    a = _as_dense(matrix)
    w, u = sla.eigh(a)
    if w[0] <= 0.0:
        raise np.linalg.LinAlgError("Gram matrix is not positive definite")
    s = w ** (-0.5 if inverse else 0.5)
    return (u * s) @ u.T


def normalized_bases(sigma, lam, gram, gram_patch, gram_pyramid):
    """Gram-rescaled Star and Loop bases (dense).

    Star columns are rescaled by the patch Gram, Loop columns by the vertex
    Gram; edge-space factors G^{-1/2} / G^{+1/2} are chosen so that the two
    bases are mutually orthogonal AND the rescaled charge term annihilates
    the Loop side exactly.
    """
    g_m = _sqrt_spd(gram, inverse=True)
    g_p = _sqrt_spd(gram, inverse=False)
    sigma_n = g_m @ _as_dense(sigma) @ _sqrt_spd(gram_patch, inverse=False)
    lambda_n = g_p @ _as_dense(lam) @ _sqrt_spd(gram_pyramid, inverse=True)
    return sigma_n, lambda_n


def helmholtz_split(sigma_n: np.ndarray, lambda_n: np.ndarray, coeffs: np.ndarray):
    """Loop/Star coefficient recovery: l = (L^T L)^+ L^T y, s = (S^T S)^+ S^T y.

    On a simply connected surface the two parts reconstruct y exactly.
    """
    l_coeff, *_ = np.linalg.lstsq(lambda_n, coeffs, rcond=None)
    s_coeff, *_ = np.linalg.lstsq(sigma_n, coeffs, rcond=None)
    return l_coeff, s_coeff
