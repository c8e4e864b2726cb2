"""Breakdown-free preconditioners from filtered quasi-Helmholtz pieces.

Two families share the plumbing here.  The basis variant stacks dyadically
weighted filtered Loop and Star bases into a rectangular map W and solves
W^T T~ W; the projector variant sums weighted filtered-projector differences
into a square symmetric map Q and solves Q T~ Q.  Both consume the
Gram-normalized operators, so every product below pairs normalized bases
and projectors with normalized blocks.

Level weights follow a logarithmic ladder: level l spans filtering indices
(alpha^(l-1) - 1, alpha^l - 1], its weight is the Laplacian eigenvalue at
the lower index raised to a variant-specific exponent (-3/4 Star basis,
-1/4 Loop basis and star projectors, +1/4 loop projectors), and the last
level runs to the full index so unit weights telescope back to the plain
basis or projector.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .efie import OperatorSet, gram_inv_sqrt
from .filters import (
    BACKENDS,
    DegenerateSpectrumWarning,
    FilterSpec,
    filter_projector,
    filtered_loop_star,
    power_method_filter,
    sigma_n_estimate,
)
from .qhd import ProjectorSet

__all__ = [
    "DyadicSampling",
    "PreconditionerBundle",
    "SolveReport",
    "W_STAR_EXPONENT",
    "W_LOOP_EXPONENT",
    "Q_STAR_EXPONENT",
    "Q_LOOP_EXPONENT",
    "build_dyadic_sampling",
    "plain_sampling",
    "build_filtered_ls_basis",
    "build_W",
    "build_Q",
    "build_Q_norm_scaled",
    "identity_preconditioner",
    "apply_stability_zeroing",
    "solve_preconditioned",
]

SIDES = ("sigma", "lambda")

# level-weight exponents, by preconditioner variant and incidence side
W_STAR_EXPONENT = -0.75
W_LOOP_EXPONENT = -0.25
Q_STAR_EXPONENT = -0.25
Q_LOOP_EXPONENT = 0.25

_NORM_SEED = 648391042


@dataclass(frozen=True)
class DyadicSampling:
    """Logarithmic level ladder for one incidence side.

    `level_indices` holds the lower filtering index of each level; the
    upper index is the next entry, `dimension` for the last level.
    """

    alpha: int
    side: str
    level_indices: tuple
    level_weights: tuple
    dimension: int

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"unknown incidence side {self.side!r}")
        if self.alpha < 2:
            raise ValueError("sampling base alpha must be >= 2")
        idx = self.level_indices
        if not idx:
            raise ValueError("sampling needs at least one level")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("level indices must increase strictly")
        if idx[0] < 1 or idx[-1] >= self.dimension:
            raise ValueError("level indices outside 1..dimension-1")
        if len(self.level_weights) != len(idx):
            raise ValueError("one weight per level required")
        w = np.asarray(self.level_weights, dtype=float)
        if not (np.isfinite(w).all() and (w > 0.0).all()):
            raise ValueError("level weights must be positive and finite")

    def levels(self):
        """(lower, upper, weight) triples; the last upper is the dimension."""
        uppers = self.level_indices[1:] + (self.dimension,)
        return list(zip(self.level_indices, uppers, self.level_weights))


def plain_sampling(dimension: int, side: str) -> DyadicSampling:
    """Single unit-weight level: the unfiltered basis or projector."""
    return DyadicSampling(
        alpha=2,
        side=side,
        level_indices=(1,),
        level_weights=(1.0,),
        dimension=dimension,
    )


def build_dyadic_sampling(
    lap,
    alpha: int,
    side: str,
    weight_exponent: float,
    *,
    method: str = "estimate",
) -> DyadicSampling:
    """Level ladder with eigenvalue-based weights.

    Levels run while alpha^(l-1) - 1 stays below the Laplacian dimension.
    The weight of the level starting at index i is lambda_i^exponent with
    lambda_i the i-th smallest eigenvalue, from the linear-ramp estimate
    (default, two inverse-iteration solves total), the deflated block
    iteration (`method="power"`, shallow ladders only), or a dense
    symmetric eigensolve (`method="exact"`).
    """
    if method not in ("estimate", "power", "exact"):
        raise ValueError(f"unknown eigenvalue method {method!r}")
    if alpha < 2:
        raise ValueError("sampling base alpha must be >= 2")
    dim = lap.shape[0]
    indices = []
    power = alpha
    while power - 1 < dim:
        indices.append(power - 1)
        power *= alpha
    if not indices:
        raise ValueError("Laplacian too small for any sampling level")

    if method == "power":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSpectrumWarning)
            filt = power_method_filter(lap, min(indices[-1] + 1, dim))
        eigs = filt.meta["eigenvalues"]
        samples = [float(eigs[i]) for i in indices]
    elif method == "exact":
        dense = lap.toarray() if sp.issparse(lap) else np.asarray(lap, float)
        eigs = sla.eigh(dense, eigvals_only=True)
        samples = [float(eigs[i]) for i in indices]
    else:
        samples = [sigma_n_estimate(lap, dim - i) for i in indices]
    if any(s <= 0.0 for s in samples):
        raise ConvergenceError("nonpositive eigenvalue sample in weight ladder")
    weights = [s**weight_exponent for s in samples]
    return DyadicSampling(
        alpha=alpha,
        side=side,
        level_indices=tuple(indices),
        level_weights=tuple(weights),
        dimension=dim,
    )


def _filtered_basis_at(x, n, backend):
    if n >= x.shape[1]:
        return x.toarray().astype(float) if sp.issparse(x) else np.asarray(x, float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        return filtered_loop_star(x, FilterSpec(n=n, backend=backend))


def build_filtered_ls_basis(
    x,
    sampling: DyadicSampling,
    *,
    backend: str = "svd",
    remove_column: bool = True,
) -> np.ndarray:
    """Weighted telescoping sum of filtered-basis differences.

    Unit weights collapse the sum to the plain basis (index 1 keeps only
    the Laplacian nullspace, so the lowest difference starts from zero).
    The last column is dropped to clear the constant redundancy of a
    connected mesh unless `remove_column` is False.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown filter backend {backend!r}")
    if sampling.dimension != x.shape[1]:
        raise ValueError("sampling dimension does not match the basis")
    out = None
    for lower, upper, weight in sampling.levels():
        diff = _filtered_basis_at(x, upper, backend) - _filtered_basis_at(
            x, lower, backend
        )
        out = weight * diff if out is None else out + weight * diff
    if remove_column:
        out = out[:, :-1]
    return out


# norm estimation -------------------------------------------------------------


def _matrix_norm(a, *, tol: float = 1e-3, max_iter: int = 200) -> float:
    """Largest singular value by power iteration on A^H A."""
    a = np.asarray(a)
    rng = np.random.default_rng(_NORM_SEED)
    v = rng.standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = a.conj().T @ (a @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new_est = float(np.sqrt(norm))
        v = w / norm
        if abs(new_est - est) <= tol * new_est:
            return new_est
        est = new_est
    return est


def _inverse_norm_constant(block, label: str) -> float:
    norm = _matrix_norm(block)
    if norm <= 0.0 or not np.isfinite(norm):
        raise ValueError(f"operator block {label} has zero or invalid norm")
    return 1.0 / norm


# bundles ---------------------------------------------------------------------


@dataclass
class SolveReport:
    """Outcome of one preconditioned solve."""

    coefficients: np.ndarray
    reduced: np.ndarray
    iterations: int
    residual: float
    converged: bool
    variant: str


@dataclass
class PreconditionerBundle:
    """A built preconditioner: the map, its scalings, and bookkeeping.

    `matrix` is W (rectangular) or Q (square symmetric); `star_part` keeps
    the scaled star-projector term of Q so the scalar-potential block can
    be routed through it alone (stability zeroing).  The solve path is
    M^T T~ M on the reduced unknowns, back to coefficients via G^{-1/2} M.
    """

    variant: str
    matrix: np.ndarray
    star_part: np.ndarray | None = None
    scaling: dict = field(default_factory=dict)
    removed_columns: tuple = ()
    alpha: int | None = None
    metadata: dict = field(default_factory=dict)

    def _require_normalized(self, ops: OperatorSet):
        if not ops.normalized:
            raise ValueError("preconditioning requires Gram-normalized operators")

    def system_matrix(
        self, ops: OperatorSet, *, stability_zeroing: bool | None = None
    ) -> np.ndarray:
        self._require_normalized(ops)
        if stability_zeroing is None:
            stability_zeroing = self.star_part is not None
        m = self.matrix
        if not stability_zeroing:
            return m.T @ (ops.ts + ops.th) @ m
        if self.star_part is None:
            raise ValueError(f"{self.variant} bundle has no star channel to zero")
        s = self.star_part
        # the imaginary unit in front of the star term squares to -1; every
        # scalar-potential product outside this channel is dropped outright
        return m.T @ ops.ts @ m - s.T @ ops.th @ s

    def rhs_vector(self, ops: OperatorSet) -> np.ndarray:
        self._require_normalized(ops)
        if ops.rhs is None:
            raise ValueError("operator set has no excitation vector")
        return self.matrix.T @ ops.rhs

    def recover(self, ops: OperatorSet, reduced: np.ndarray) -> np.ndarray:
        """Map reduced unknowns back to div-conforming coefficients."""
        return gram_inv_sqrt(ops.gram) @ (self.matrix @ reduced)


def identity_preconditioner(dimension: int) -> PreconditionerBundle:
    return PreconditionerBundle(variant="identity", matrix=np.eye(dimension))


def build_W(
    ops: OperatorSet,
    sigma_basis: np.ndarray,
    lambda_basis: np.ndarray,
    *,
    alpha: int | None = None,
) -> PreconditionerBundle:
    """Stacked filtered Loop-Star map W = [sqrt(c_L) Lambda | sqrt(c_S) Sigma].

    The block scalings equalize the two operator channels:
    c_S = 1/||Sigma^T T~h Sigma||, c_L = 1/||Lambda^T T~s Lambda||.
    Restricted to simply connected meshes; anything the two bases miss is
    harmonic, and those currents only the projector variant carries.
    """
    if not ops.normalized:
        raise ValueError("build_W needs Gram-normalized operators")
    n = ops.ts.shape[0]
    n_cols = sigma_basis.shape[1] + lambda_basis.shape[1]
    if n_cols < n:
        raise ValueError(
            "basis preconditioner undershoots the coefficient space by "
            f"{n - n_cols} harmonic dimensions; use the projector variant "
            "on multiply connected meshes"
        )
    c_sigma = _inverse_norm_constant(
        sigma_basis.T @ ops.th @ sigma_basis, "Sigma^T Th Sigma"
    )
    c_lambda = _inverse_norm_constant(
        lambda_basis.T @ ops.ts @ lambda_basis, "Lambda^T Ts Lambda"
    )
    w = np.hstack(
        [np.sqrt(c_lambda) * lambda_basis, np.sqrt(c_sigma) * sigma_basis]
    )
    return PreconditionerBundle(
        variant="filtered-loop-star",
        matrix=w,
        scaling={"c_sigma": c_sigma, "c_lambda": c_lambda},
        removed_columns=("lambda:last", "sigma:last"),
        alpha=alpha,
        metadata={
            "columns": {
                "lambda": lambda_basis.shape[1],
                "sigma": sigma_basis.shape[1],
            }
        },
    )


def _filtered_projector_sum(x, sampling, backend, kind):
    out = None
    for lower, upper, weight in sampling.levels():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSpectrumWarning)
            hi = filter_projector(x, FilterSpec(n=upper, backend=backend), kind)
            lo = (
                np.zeros_like(hi)
                if lower == 1
                else filter_projector(x, FilterSpec(n=lower, backend=backend), kind)
            )
        diff = hi - lo
        out = weight * diff if out is None else out + weight * diff
    return out


def build_Q(
    ops: OperatorSet,
    projectors: ProjectorSet,
    filter_backend: str,
    sampling_sigma: DyadicSampling,
    sampling_lambda: DyadicSampling,
    *,
    sigma,
    lam,
) -> PreconditionerBundle:
    """Additive projector preconditioner Q from filtered-projector ladders.

    Q = sqrt(b_L) Q_Lambda + i sqrt(b_S) Q_Sigma + sqrt(b_H) P_H, with each
    b the inverse norm of that channel's sandwiched operator block.  The
    harmonic completion keeps multiply connected meshes regular; on genus
    zero it is absent.  `sigma` and `lam` are the Gram-normalized
    incidence matrices matching `projectors`.
    """
    if not ops.normalized:
        raise ValueError("build_Q needs Gram-normalized operators")
    if not projectors.normalized:
        raise ValueError("build_Q needs the normalized projector set")
    if filter_backend not in BACKENDS:
        raise ValueError(f"unknown filter backend {filter_backend!r}")
    q_sigma = _filtered_projector_sum(sigma, sampling_sigma, filter_backend, "sigma")
    q_lambda = _filtered_projector_sum(
        lam, sampling_lambda, filter_backend, "dual_lambda"
    )
    b_sigma = _inverse_norm_constant(q_sigma @ ops.th @ q_sigma, "Q_S Th Q_S")
    b_lambda = _inverse_norm_constant(q_lambda @ ops.ts @ q_lambda, "Q_L Ts Q_L")
    scaling = {"b_sigma": b_sigma, "b_lambda": b_lambda}
    star = np.sqrt(b_sigma) * q_sigma
    q = np.sqrt(b_lambda) * q_lambda + 1j * star
    if projectors.harmonic_dim > 0:
        b_h = _inverse_norm_constant(
            projectors.p_h @ ops.ts @ projectors.p_h, "P_H Ts P_H"
        )
        scaling["b_harmonic"] = b_h
        q = q + np.sqrt(b_h) * projectors.p_h
    return PreconditionerBundle(
        variant="qh-filters",
        matrix=q,
        star_part=star,
        scaling=scaling,
        alpha=sampling_sigma.alpha,
        metadata={
            "backend": filter_backend,
            "imaginary_star_term": True,
            "levels": {
                "sigma": list(sampling_sigma.levels()),
                "lambda": list(sampling_lambda.levels()),
            },
            "harmonic_dim": projectors.harmonic_dim,
        },
    )


def build_Q_norm_scaled(
    ops: OperatorSet,
    projectors: ProjectorSet,
    filter_backend: str,
    alpha: int,
    *,
    sigma,
    lam,
) -> PreconditionerBundle:
    """Q with measured per-level weights instead of eigenvalue powers.

    Each projector difference is weighted by the inverse square root of the
    norm of the operator block it carries (scalar-potential block on the
    star ladder, vector-potential on the loop ladder), so no spectral model
    enters; the star term keeps its imaginary unit.
    """
    if not ops.normalized:
        raise ValueError("build_Q_norm_scaled needs Gram-normalized operators")
    if not projectors.normalized:
        raise ValueError("build_Q_norm_scaled needs the normalized projector set")
    if filter_backend not in BACKENDS:
        raise ValueError(f"unknown filter backend {filter_backend!r}")
    if alpha < 2:
        raise ValueError("sampling base alpha must be >= 2")

    def ladder(x, kind, block, label):
        # same dyadic level boundaries as the eigenvalue-weighted variant,
        # but every weight is measured, not modeled
        indices = []
        power = alpha
        while power - 1 < x.shape[1]:
            indices.append(power - 1)
            power *= alpha
        sampling = DyadicSampling(
            alpha=alpha,
            side="sigma" if kind == "sigma" else "lambda",
            level_indices=tuple(indices),
            level_weights=tuple(1.0 for _ in indices),
            dimension=x.shape[1],
        )
        total = None
        weights = []
        for lower, upper, _ in sampling.levels():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateSpectrumWarning)
                hi = filter_projector(x, FilterSpec(n=upper, backend=filter_backend), kind)
                lo = (
                    np.zeros_like(hi)
                    if lower == 1
                    else filter_projector(
                        x, FilterSpec(n=lower, backend=filter_backend), kind
                    )
                )
            diff = hi - lo
            norm = _matrix_norm(diff @ block @ diff)
            if norm <= 0.0 or not np.isfinite(norm):
                raise ValueError(f"operator block {label} level {lower} has zero norm")
            weight = 1.0 / np.sqrt(norm)
            weights.append(weight)
            total = weight * diff if total is None else total + weight * diff
        return total, weights

    q_sigma, w_sigma = ladder(sigma, "sigma", ops.th, "star ladder")
    q_lambda, w_lambda = ladder(lam, "dual_lambda", ops.ts, "loop ladder")
    scaling = {"star_levels": tuple(w_sigma), "loop_levels": tuple(w_lambda)}
    q = q_lambda + 1j * q_sigma
    if projectors.harmonic_dim > 0:
        b_h = _inverse_norm_constant(
            projectors.p_h @ ops.ts @ projectors.p_h, "P_H Ts P_H"
        )
        scaling["b_harmonic"] = b_h
        q = q + np.sqrt(b_h) * projectors.p_h
    return PreconditionerBundle(
        variant="qh-filters-norm-scaled",
        matrix=q,
        star_part=q_sigma,
        scaling=scaling,
        alpha=alpha,
        metadata={
            "backend": filter_backend,
            "imaginary_star_term": True,
            "harmonic_dim": projectors.harmonic_dim,
        },
    )


def apply_stability_zeroing(
    bundle: PreconditionerBundle, ops: OperatorSet
) -> OperatorSet:
    """Preconditioned blocks with the scalar-potential channel restricted.

    Only the star ladder touches the scalar-potential block; its products
    against the loop ladder and the harmonic completion are never formed
    (they vanish analytically, and at low frequency their round-off would
    be amplified by 1/k).  Returns the reduced-system blocks as an
    OperatorSet: ts -> Q Ts Q, th -> -(star Th star), rhs -> Q v.
    """
    if bundle.star_part is None:
        raise ValueError(f"{bundle.variant} bundle has no star channel to zero")
    if not ops.normalized:
        raise ValueError("stability zeroing requires Gram-normalized operators")
    m = bundle.matrix
    s = bundle.star_part
    return OperatorSet(
        ts=m.T @ ops.ts @ m,
        th=-(s.T @ ops.th @ s),
        r=ops.r,
        gram=ops.gram,
        gram_patch=ops.gram_patch,
        gram_pyramid=ops.gram_pyramid,
        rhs=None if ops.rhs is None else m.T @ ops.rhs,
        normalized=True,
    )


def solve_preconditioned(
    bundle: PreconditionerBundle,
    ops: OperatorSet,
    rhs: np.ndarray | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int | None = None,
    stability_zeroing: bool | None = None,
) -> SolveReport:
    """Krylov solve of the reduced system, mapped back to coefficients.

    Full (unrestarted) GMRES; the iteration count in the report is the
    number of Krylov vectors built.  Raises ConvergenceError with the
    partial report attached when the budget runs out.
    """
    if rhs is None:
        rhs = bundle.rhs_vector(ops)
    else:
        rhs = bundle.matrix.T @ np.asarray(rhs)
    a = bundle.system_matrix(ops, stability_zeroing=stability_zeroing)
    dim = a.shape[0]
    if max_iter is None:
        max_iter = dim
    restart = min(dim, max_iter)
    cycles = -(-max_iter // restart)
    counter = {"n": 0}

    def count(_):
        counter["n"] += 1

    reduced, info = spla.gmres(
        a,
        rhs,
        rtol=tol,
        atol=0.0,
        restart=restart,
        maxiter=cycles,
        callback=count,
        callback_type="pr_norm",
    )
    residual = float(
        np.linalg.norm(a @ reduced - rhs) / max(np.linalg.norm(rhs), 1e-300)
    )
    report = SolveReport(
        coefficients=bundle.recover(ops, reduced),
        reduced=reduced,
        iterations=counter["n"],
        residual=residual,
        converged=info == 0,
        variant=bundle.variant,
    )
    if info != 0:
        err = ConvergenceError(
            f"{bundle.variant} solve stalled at residual {residual:.3e} "
            f"after {counter['n']} iterations"
        )
        err.report = report
        raise err
    return report
