"""Spectrally filtered graph Laplacians behind four interchangeable backends.

The filtered Laplacian of index n keeps the n smallest eigenvalues of
L = X^T X (zero included).  Writing f for the scalar spectral mask, every
backend exposes the same three actions:

    mask_apply(v)  : f(L) v
    apply(v)       : L f(L) v        (the filtered Laplacian itself)
    pinv_apply(v)  : L^+ f(L) v      (the filtered pseudo-inverse)

Backends:
  * exact eigendecomposition (the reference; mask is a hard 0/1 step),
  * deflated block inverse iteration (constant filtering index; 0/1 mask on
    the computed invariant subspace),
  * factorized Butterworth product (smooth mask (1 + (x/x_c)^m)^-1 applied
    through m/2 real quadratic solves, no complex arithmetic),
  * Chebyshev expansion of the same smooth mask (matrix-vector products
    only; filtering index proportional to the problem size).

Filtered Loop-Star bases and the filtered splitting projectors reduce to
X f(L) and X L^+ f(L) X^T, so everything downstream consumes the three
actions above.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .qhd import NULL_CUTOFF, ProjectorSet, laplacian_pinv_dense

__all__ = [
    "DegenerateSpectrumWarning",
    "FilterSpec",
    "FilteredOperator",
    "svd_filtered_laplacian",
    "eigen_filter",
    "power_method_filter",
    "butterworth_apply",
    "butterworth_filter",
    "chebyshev_filter",
    "sigma_n_estimate",
    "cutoff_for_index",
    "build_filter",
    "filtered_loop_star",
    "filter_projector",
]

BACKENDS = ("svd", "power", "butterworth", "chebyshev")

PROJECTOR_KINDS = ("sigma", "lambda_h", "dual_lambda", "dual_sigma_h")


class DegenerateSpectrumWarning(UserWarning):
    """A filtering cut fell inside (or next to) an eigenvalue cluster, so the
    kept subspace is basis-dependent."""


@dataclass(frozen=True)
class FilterSpec:
    """Filtering index plus backend selection.

    n counts kept (smallest) singular values, 1 <= n <= dimension.  The
    smooth backends need a scalar cutoff; when `cutoff` is None it is placed
    between the estimated n-th and (n+1)-th smallest eigenvalues using the
    pseudo-inverse-norm heuristic.
    """

    n: int
    backend: str = "svd"
    butterworth_order: int = 100
    poly_count: int = 200
    truncation: int | None = None
    tol: float = 1e-10
    max_iter: int = 500
    cutoff: float | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown filter backend {self.backend!r}")
        if self.n < 1:
            raise ValueError("filtering index must be >= 1")
        if self.butterworth_order < 2 or self.butterworth_order % 2:
            raise ValueError("Butterworth order must be even and >= 2")
        if self.poly_count < 1:
            raise ValueError("polynomial count must be >= 1")


@dataclass
class FilteredOperator:
    """Backend-independent handle on a filtered Laplacian.

    `mask` maps (dim, ...) arrays through f(L); `profile` evaluates the
    scalar mask on sample points (for inspection exports); `meta` records
    backend, index and achieved-accuracy information.
    """

    lap: np.ndarray | sp.sparray
    mask: Callable[[np.ndarray], np.ndarray]
    profile: Callable[[np.ndarray], np.ndarray]
    meta: dict = field(default_factory=dict)
    _pinv_dense: np.ndarray | None = None

    @property
    def shape(self):
        return self.lap.shape

    def mask_apply(self, v: np.ndarray) -> np.ndarray:
        return self.mask(np.asarray(v, dtype=float))

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.lap @ self.mask_apply(v)

    def pinv_apply(self, v: np.ndarray) -> np.ndarray:
        if self._pinv_dense is None:
            self._pinv_dense = laplacian_pinv_dense(self.lap)
        return self._pinv_dense @ self.mask_apply(v)

    def matrix(self) -> np.ndarray:
        return np.asarray(self.apply(np.eye(self.shape[0])))

    def pinv_matrix(self) -> np.ndarray:
        return np.asarray(self.pinv_apply(np.eye(self.shape[0])))

    def mask_matrix(self) -> np.ndarray:
        return np.asarray(self.mask_apply(np.eye(self.shape[0])))


def _as_float_matrix(lap):
    if sp.issparse(lap):
        return sp.csr_array(lap).astype(float)
    return np.asarray(lap, dtype=float)


def _operator_norm_bound(lap) -> float:
    """Upper bound on the largest eigenvalue (max absolute row sum)."""
    a = abs(_as_float_matrix(lap))
    sums = np.asarray(a.sum(axis=1)).reshape(-1)
    return float(sums.max())


# exact backend --------------------------------------------------------------


def eigen_filter(lap, n: int) -> FilteredOperator:
    """Reference backend: full eigendecomposition, hard 0/1 mask keeping the
    n smallest eigenvalues.  Flags the cut as degenerate when it would split
    two eigenvalues equal to relative 1e-10."""
    a = _as_float_matrix(lap)
    dense = a.toarray() if sp.issparse(a) else a
    dim = dense.shape[0]
    if not 1 <= n <= dim:
        raise ValueError(f"filtering index {n} outside 1..{dim}")
    w, u = sla.eigh(dense)
    scale = max(abs(w[-1]), 1.0)
    degenerate_cut = bool(n < dim and abs(w[n] - w[n - 1]) <= 1e-10 * scale)
    if degenerate_cut:
        warnings.warn(
            f"filtering cut at index {n} splits eigenvalues "
            f"{w[n - 1]:.3e} and {w[n]:.3e}",
            DegenerateSpectrumWarning,
            stacklevel=2,
        )
    mask_vec = np.zeros(dim)
    mask_vec[:n] = 1.0

    def mask(v):
        return (u * mask_vec) @ (u.T @ v)

    # exact step profile for inspection: 1 below the cut midpoint, 0 above
    if n < dim:
        edge = 0.5 * (w[n - 1] + w[n])
    else:
        edge = np.inf

    def profile(x):
        return (np.asarray(x, dtype=float) <= edge).astype(float)

    op = FilteredOperator(
        lap=a,
        mask=mask,
        profile=profile,
        meta={
            "backend": "svd",
            "n": n,
            "degenerate_cut": degenerate_cut,
            "accuracy": 0.0,
        },
    )
    keep = mask_vec.astype(bool) & (w > NULL_CUTOFF * scale)
    inv = np.zeros(dim)
    inv[keep] = 1.0 / w[keep]
    op._pinv_dense = (u * inv) @ u.T
    return op


def svd_filtered_laplacian(incidence, n: int) -> FilteredOperator:
    """Filtered Laplacian (X^T X)_n from an incidence (or normalized basis)
    matrix, keeping the n smallest singular values of X."""
    x = incidence
    lap = (x.T @ x) if not sp.issparse(x) else sp.csr_array(x.T @ x)
    return eigen_filter(lap, n)


# inverse-iteration backend --------------------------------------------------


def power_method_filter(
    lap, n: int, *, tol: float = 1e-10, max_iter: int = 500
) -> FilteredOperator:
    """Deflated block inverse iteration for the n smallest eigenpairs.

    Meant for filtering indices that stay constant as the mesh refines.  A
    small buffer of extra vectors stabilizes clustered eigenvalues; the
    Rayleigh-Ritz step realigns the block every sweep.  Residual norms
    ||L q - theta q|| land in meta["residuals"]; clusters among the computed
    eigenvalues raise DegenerateSpectrumWarning (the kept subspace is then
    basis-dependent).
    """
    a = _as_float_matrix(lap)
    dim = a.shape[0]
    if not 1 <= n <= dim:
        raise ValueError(f"filtering index {n} outside 1..{dim}")
    block = min(n + 2, dim)
    norm_bound = max(_operator_norm_bound(a), 1.0)
    shift = 1e-8 * norm_bound

    if sp.issparse(a):
        solver = spla.splu(sp.csc_matrix(a + shift * sp.eye_array(dim))).solve
    else:
        lu = sla.lu_factor(a + shift * np.eye(dim))
        solver = lambda b: sla.lu_solve(lu, b)  # noqa: E731

    rng = np.random.default_rng(961748927)
    v = rng.standard_normal((dim, block))
    theta = np.zeros(block)
    residuals = np.full(block, np.inf)
    for _ in range(max_iter):
        w = solver(v)
        q, _ = np.linalg.qr(w)
        h = q.T @ (a @ q)
        theta, s = sla.eigh(h)
        v = q @ s
        resid = a @ v - v * theta
        residuals = np.linalg.norm(resid, axis=0)
        if residuals[:n].max() <= tol * norm_bound:
            break
    else:
        raise ConvergenceError(
            f"inverse iteration: residual {residuals[:n].max():.3e} above "
            f"{tol:.1e} * ||L|| after {max_iter} sweeps"
        )

    # only a cluster straddling the cut makes the kept subspace ambiguous
    degenerate = bool(
        n < block and theta[n] - theta[n - 1] <= 1e-10 * norm_bound
    )
    if degenerate:
        warnings.warn(
            f"filtering cut at index {n} splits eigenvalues "
            f"{theta[n - 1]:.3e} and {theta[n]:.3e}",
            DegenerateSpectrumWarning,
            stacklevel=2,
        )
    kept = v[:, :n]
    theta_kept = theta[:n]

    def mask(x):
        return kept @ (kept.T @ x)

    if n < block:
        edge = 0.5 * (theta[n - 1] + theta[n])
    else:
        edge = np.inf

    def profile(x):
        return (np.asarray(x, dtype=float) <= edge).astype(float)

    op = FilteredOperator(
        lap=a,
        mask=mask,
        profile=profile,
        meta={
            "backend": "power",
            "n": n,
            "residuals": residuals[:n].copy(),
            "accuracy": float(residuals[:n].max()),
            "degenerate": degenerate,
            "eigenvalues": theta_kept.copy(),
        },
    )
    nonzero = theta_kept > NULL_CUTOFF * norm_bound
    scaled = np.zeros_like(theta_kept)
    scaled[nonzero] = 1.0 / theta_kept[nonzero]
    op._pinv_dense = (kept * scaled) @ kept.T
    return op


# Butterworth backend --------------------------------------------------------


def _butterworth_scalar(x, x_c: float, order: int):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + (np.asarray(x, dtype=float) / x_c) ** order)


def _butterworth_factors(order: int, truncation: int | None):
    """Angles of the conjugate-paired pole quadratics, transition-shaping
    pairs first."""
    if order < 2 or order % 2:
        raise ValueError("Butterworth order must be even and >= 2")
    angles = np.pi * (2.0 * np.arange(order // 2) + 1.0) / order
    if truncation is not None:
        if truncation < 1:
            raise ValueError("truncation must keep at least one factor")
        angles = angles[: min(truncation, len(angles))]
    return angles


def butterworth_apply(
    lap, x_c: float, order: int, v: np.ndarray, truncation: int | None = None
) -> np.ndarray:
    """One-shot action of the Butterworth-filtered Laplacian: L f(L) v.

    f(x) = (1 + (x/x_c)^order)^-1 evaluated through its pole factorization:
    the conjugate pole pairs combine into real SPD quadratics
    Y^2 - 2 cos(theta_k) Y + I with Y = L / x_c, so the whole product is a
    chain of real solves.  `truncation` keeps only that many quadratic
    factors (the ones nearest the transition); each dropped factor softens
    the rolloff but preserves f(0) = 1.
    """
    op = butterworth_filter(lap, x_c=x_c, order=order, truncation=truncation)
    return op.apply(v)


def butterworth_filter(
    lap, *, x_c: float, order: int = 100, truncation: int | None = None
) -> FilteredOperator:
    if x_c <= 0.0:
        raise ValueError("cutoff must be positive")
    a = _as_float_matrix(lap)
    dim = a.shape[0]
    angles = _butterworth_factors(order, truncation)

    if sp.issparse(a):
        y = sp.csr_array(a / x_c)
        y2 = sp.csr_array(y @ y)
        eye = sp.eye_array(dim, format="csr")
        solvers = [
            spla.splu(sp.csc_matrix(y2 - (2.0 * np.cos(t)) * y + eye)).solve
            for t in angles
        ]
    else:
        y = a / x_c
        y2 = y @ y
        eye = np.eye(dim)
        factors = [sla.lu_factor(y2 - (2.0 * np.cos(t)) * y + eye) for t in angles]
        solvers = [lambda b, f=f: sla.lu_solve(f, b) for f in factors]

    def mask(v):
        out = np.asarray(v, dtype=float)
        for solve in solvers:
            out = solve(out)
        return out

    def profile(x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        ratio = x / x_c
        for t in angles:
            out /= ratio**2 - 2.0 * np.cos(t) * ratio + 1.0
        return out

    # sharpness indicator: worst mask deviation just outside the band edges
    band_dev = max(
        1.0 - float(profile(np.array([0.9 * x_c]))[0]),
        float(profile(np.array([1.1 * x_c]))[0]),
    )
    return FilteredOperator(
        lap=a,
        mask=mask,
        profile=profile,
        meta={
            "backend": "butterworth",
            "order": order,
            "cutoff": x_c,
            "factors": len(angles),
            "accuracy": band_dev,
        },
    )


# Chebyshev backend ----------------------------------------------------------


def _estimate_sigma_max(lap, *, iters: int = 100, seed: int = 575746417) -> float:
    """Largest eigenvalue by plain power iteration."""
    a = _as_float_matrix(lap)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = a @ v
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est


def chebyshev_filter(
    lap,
    *,
    x_c: float,
    butterworth_order: int = 100,
    poly_count: int = 200,
    sigma_max: float | None = None,
) -> FilteredOperator:
    """Chebyshev expansion of the order-m Butterworth mask.

    Coefficients come from Gauss-Chebyshev quadrature of the scalar profile
    over [0, 1.1 * sigma_max] (margin guards against an underestimated
    spectral bound); the matrix action is the standard three-term
    recurrence, so only products with L are needed.
    """
    if x_c <= 0.0:
        raise ValueError("cutoff must be positive")
    a = _as_float_matrix(lap)
    if sigma_max is None:
        sigma_max = _estimate_sigma_max(a)
    upper = 1.1 * max(sigma_max, x_c * 1e-12)
    if upper <= 0.0:
        raise ValueError("spectral interval collapsed; Laplacian is zero")

    m = 2 * poly_count
    nodes = np.cos(np.pi * (np.arange(m) + 0.5) / m)  # Chebyshev points in (-1, 1)
    xs = 0.5 * upper * (nodes + 1.0)
    fx = _butterworth_scalar(xs, x_c, butterworth_order)
    k = np.arange(poly_count + 1)
    coeffs = (2.0 / m) * np.cos(
        np.pi * np.outer(k, np.arange(m) + 0.5) / m
    ) @ fx

    def mask(v):
        v = np.asarray(v, dtype=float)
        # recurrence on the interval-mapped operator t = 2 L / upper - I
        t_prev = v
        t_curr = (2.0 / upper) * (a @ v) - v
        out = 0.5 * coeffs[0] * t_prev + coeffs[1] * t_curr
        for c in coeffs[2:]:
            t_next = (4.0 / upper) * (a @ t_curr) - 2.0 * t_curr - t_prev
            out += c * t_next
            t_prev, t_curr = t_curr, t_next
        return out

    def profile(x):
        t = 2.0 * np.asarray(x, dtype=float) / upper - 1.0
        t_prev = np.ones_like(t)
        t_curr = t
        out = 0.5 * coeffs[0] * t_prev + coeffs[1] * t_curr
        for c in coeffs[2:]:
            t_next = 2.0 * t * t_curr - t_prev
            out += c * t_next
            t_prev, t_curr = t_curr, t_next
        return out

    return FilteredOperator(
        lap=a,
        mask=mask,
        profile=profile,
        meta={
            "backend": "chebyshev",
            "order": butterworth_order,
            "cutoff": x_c,
            "poly_count": poly_count,
            "interval": (0.0, upper),
            "accuracy": float(abs(coeffs[-1])),
        },
    )


# cutoff heuristics ----------------------------------------------------------


def sigma_n_estimate(
    lap, n: int, *, tol: float = 1e-10, max_iter: int = 500
) -> float:
    """Heuristic n-th largest eigenvalue of L: (dim - n) / ||L^+||.

    ||L^+|| = 1 / (smallest nonzero eigenvalue), found by inverse power
    iteration deflated against the computed nullspace direction (the
    kernel of a Gram-rescaled Laplacian is not the constant vector, so it
    is located first by an undeflated pass).  Exact on a linearly ramped
    spectrum; used to place smooth-filter cutoffs and level weights.
    """
    a = _as_float_matrix(lap)
    dim = a.shape[0]
    if not 0 <= n <= dim:
        raise ValueError(f"index {n} outside 0..{dim}")
    if n == dim:
        return 0.0
    lam2 = _smallest_nonzero_eigenvalue(a, tol=tol, max_iter=max_iter)
    return (dim - n) * lam2


def _smallest_nonzero_eigenvalue(a, *, tol: float, max_iter: int) -> float:
    dim = a.shape[0]
    if dim < 2:
        raise ValueError("need at least a 2x2 Laplacian for a nonzero eigenvalue")
    norm_bound = max(_operator_norm_bound(a), 1.0)
    shift = 1e-8 * norm_bound
    if sp.issparse(a):
        solve = spla.splu(sp.csc_matrix(a + shift * sp.eye_array(dim))).solve
    else:
        lu = sla.lu_factor(a + shift * np.eye(dim))
        solve = lambda b: sla.lu_solve(lu, b)  # noqa: E731

    rng = np.random.default_rng(838102050)
    kernel = rng.standard_normal(dim)
    kernel /= np.linalg.norm(kernel)
    for _ in range(max_iter):
        kernel = solve(kernel)
        kernel /= np.linalg.norm(kernel)
        if float(kernel @ (a @ kernel)) <= 1e-12 * norm_bound:
            break

    v = rng.standard_normal(dim)
    v -= (kernel @ v) * kernel
    v /= np.linalg.norm(v)
    lam = np.inf
    for _ in range(max_iter):
        w = solve(v)
        w -= (kernel @ w) * kernel
        w /= np.linalg.norm(w)
        new_lam = float(w @ (a @ w))
        if abs(new_lam - lam) <= tol * norm_bound:
            return new_lam
        lam = new_lam
        v = w
    raise ConvergenceError(
        f"inverse iteration for the Fiedler value stalled at {lam:.6e}"
    )


def cutoff_for_index(lap, n: int, **kwargs) -> float:
    """Scalar cutoff separating the n kept eigenvalues from the rest:
    midpoint of the heuristic estimates on both sides of the cut."""
    dim = lap.shape[0]
    if not 1 <= n <= dim:
        raise ValueError(f"filtering index {n} outside 1..{dim}")
    hi = sigma_n_estimate(lap, dim - n, **kwargs)  # first excluded
    lo = sigma_n_estimate(lap, dim - n + 1, **kwargs)  # largest kept
    return 0.5 * (hi + lo)


def build_filter(lap, spec: FilterSpec) -> FilteredOperator:
    """Dispatch a FilterSpec against a Laplacian."""
    if spec.backend == "svd":
        return eigen_filter(lap, spec.n)
    if spec.backend == "power":
        return power_method_filter(lap, spec.n, tol=spec.tol, max_iter=spec.max_iter)
    x_c = spec.cutoff if spec.cutoff is not None else cutoff_for_index(lap, spec.n)
    if spec.backend == "butterworth":
        return butterworth_filter(
            lap, x_c=x_c, order=spec.butterworth_order, truncation=spec.truncation
        )
    return chebyshev_filter(
        lap,
        x_c=x_c,
        butterworth_order=spec.butterworth_order,
        poly_count=spec.poly_count,
    )


# filtered bases and projectors ----------------------------------------------


def _coerce_filter(x, op_or_n) -> FilteredOperator:
    if isinstance(op_or_n, FilteredOperator):
        return op_or_n
    if isinstance(op_or_n, FilterSpec):
        lap = x.T @ x
        return build_filter(lap, op_or_n)
    return svd_filtered_laplacian(x, int(op_or_n))


def filtered_loop_star(x, op_or_n) -> np.ndarray:
    """Filtered basis X_n = X (X^T X)^+ (X^T X)_n = X f(L).

    Index 1 keeps only the Laplacian nullspace, so X_1 = 0; index = column
    count reproduces X.
    """
    op = _coerce_filter(x, op_or_n)
    dense_x = x.toarray().astype(float) if sp.issparse(x) else np.asarray(x, float)
    return np.asarray(dense_x @ op.mask_matrix())


def filter_projector(
    x,
    op_or_n,
    kind: str,
    base: ProjectorSet | None = None,
) -> np.ndarray:
    """Filtered splitting projector of the requested kind.

    "sigma" / "dual_lambda" are the plain filtered projectors
    X (X^T X)^+_n X^T (pass the Star / Loop matrix for x respectively);
    "lambda_h" / "dual_sigma_h" add the harmonic completion I - P^S - P^L
    from `base`, so those need the unfiltered ProjectorSet.
    """
    if kind not in PROJECTOR_KINDS:
        raise ValueError(f"unknown projector kind {kind!r}")
    op = _coerce_filter(x, op_or_n)
    dense_x = x.toarray().astype(float) if sp.issparse(x) else np.asarray(x, float)
    core = dense_x @ op.pinv_matrix() @ dense_x.T
    if kind in ("sigma", "dual_lambda"):
        return core
    if base is None:
        raise ValueError(f"projector kind {kind!r} needs the base ProjectorSet")
    return core + base.p_h
