"""Filtered Laplacians: four backends, cutoff heuristics, filtered projectors."""

import warnings

import numpy as np
import pytest
import scipy.linalg as sla

from qhfilters import shapes
from qhfilters.errors import ConvergenceError
from qhfilters.filters import (
    DegenerateSpectrumWarning,
    FilterSpec,
    build_filter,
    butterworth_apply,
    butterworth_filter,
    chebyshev_filter,
    cutoff_for_index,
    eigen_filter,
    filter_projector,
    filtered_loop_star,
    power_method_filter,
    sigma_n_estimate,
    svd_filtered_laplacian,
)
from qhfilters.mesh import build_basis_topology, gram_patch, gram_pyramid, gram_rwg
from qhfilters.qhd import (
    graph_laplacian,
    lambda_matrix,
    normalized_bases,
    projectors,
    sigma_matrix,
)


def bases(mesh):
    topo = build_basis_topology(mesh)
    return sigma_matrix(topo), lambda_matrix(topo)


@pytest.fixture(scope="module")
def ico1_star(ico1):
    return sigma_matrix(build_basis_topology(ico1))


@pytest.fixture(scope="module")
def ico1_lap(ico1_star):
    return graph_laplacian(ico1_star)


@pytest.fixture(scope="module")
def ico1_spectrum(ico1_lap):
    return np.linalg.eigvalsh(ico1_lap.toarray().astype(float))


# The subdivided icosahedron keeps its full symmetry group, so the
# combinatorial Laplacians carry eigenvalue multiplets at every refinement
# level.  Cuts inside a multiplet select a basis-dependent subspace; matrix
# comparisons below always cut at a gap.  On the level-1 sphere the cell
# Laplacian has clean gaps after keeping 1, 4, 9, 16, 25, 31, 43, ... modes.
CLEAN_CUT = 4
MID_CUT = 43


# exact backend --------------------------------------------------------------


def test_full_index_reproduces_laplacian(ico1_lap):
    op = eigen_filter(ico1_lap, ico1_lap.shape[0])
    dense = ico1_lap.toarray().astype(float)
    assert np.abs(op.matrix() - dense).max() <= 1e-12 * np.abs(dense).max()
    assert np.abs(op.mask_matrix() - np.eye(dense.shape[0])).max() <= 1e-12


def test_index_one_keeps_only_the_nullspace(ico1_lap):
    # connected mesh: one zero mode, so L f(L) vanishes identically
    op = eigen_filter(ico1_lap, 1)
    assert np.abs(op.matrix()).max() <= 1e-12
    dim = ico1_lap.shape[0]
    assert np.abs(op.mask_matrix() - np.ones((dim, dim)) / dim).max() <= 1e-12


def test_mask_is_a_projector(ico1_lap):
    m = eigen_filter(ico1_lap, CLEAN_CUT).mask_matrix()
    assert np.abs(m @ m - m).max() <= 1e-12
    assert np.abs(m - m.T).max() <= 1e-13
    assert abs(np.trace(m) - CLEAN_CUT) <= 1e-10


def test_matches_dense_eigendecomposition_at_a_gap(ico1_lap, ico1_spectrum):
    # at a clean cut the kept subspace is unique, so any eigensolver agrees
    w, u = np.linalg.eigh(ico1_lap.toarray().astype(float))
    n = CLEAN_CUT
    assert ico1_spectrum[n] - ico1_spectrum[n - 1] > 0.3
    ref = (u[:, :n] * w[:n]) @ u[:, :n].T
    op = eigen_filter(ico1_lap, n)
    assert np.abs(op.matrix() - ref).max() <= 1e-12
    assert not op.meta["degenerate_cut"]


def test_degenerate_cut_flagged_and_trace_still_exact(tetra):
    # tetrahedron cell Laplacian is 4I - J with eigenvalues {0, 4, 4, 4};
    # n = 2 cuts inside the triple
    lap = graph_laplacian(bases(tetra)[0])
    with pytest.warns(DegenerateSpectrumWarning):
        op = eigen_filter(lap, 2)
    assert op.meta["degenerate_cut"]
    # basis-independent checks only: traces and containment
    assert abs(np.trace(op.mask_matrix()) - 2.0) <= 1e-12
    assert abs(np.trace(op.matrix()) - 4.0) <= 1e-12
    m = op.mask_matrix()
    assert np.abs(m @ m - m).max() <= 1e-12


def test_pinv_matrix_inverts_on_the_kept_range(ico1_lap):
    n = 9
    op = eigen_filter(ico1_lap, n)
    dense = ico1_lap.toarray().astype(float)
    # L (L^+ f(L)) = f(L) minus the constant nullspace component
    dim = dense.shape[0]
    lhs = dense @ op.pinv_matrix() + np.ones((dim, dim)) / dim
    assert np.abs(lhs - op.mask_matrix()).max() <= 1e-11


def test_index_validation(ico1_lap):
    with pytest.raises(ValueError):
        eigen_filter(ico1_lap, 0)
    with pytest.raises(ValueError):
        eigen_filter(ico1_lap, ico1_lap.shape[0] + 1)


# inverse-iteration backend --------------------------------------------------


def test_power_matches_exact_backend_at_a_gap(ico1_lap):
    sv = eigen_filter(ico1_lap, CLEAN_CUT)
    pm = power_method_filter(ico1_lap, CLEAN_CUT)
    assert np.abs(pm.matrix() - sv.matrix()).max() <= 1e-8
    assert np.abs(pm.mask_matrix() - sv.mask_matrix()).max() <= 1e-8
    assert pm.meta["accuracy"] <= 1e-10 * 6.0


def test_power_index_one_finds_the_constant_mode(ico1_lap):
    pm = power_method_filter(ico1_lap, 1)
    dim = ico1_lap.shape[0]
    assert np.abs(pm.mask_matrix() - np.ones((dim, dim)) / dim).max() <= 1e-10


def test_power_degenerate_cut_is_contained_in_the_multiplet(ico1_lap):
    # n = 3 splits the first eigenvalue triple: the computed pair of
    # non-constant vectors is basis-dependent but must live inside the
    # 4-dimensional space spanned by the constant mode and the triple
    with pytest.warns(DegenerateSpectrumWarning):
        pm = power_method_filter(ico1_lap, 3)
    assert pm.meta["degenerate"]
    p4 = eigen_filter(ico1_lap, 4).mask_matrix()
    m3 = pm.mask_matrix()
    assert np.abs(m3 - p4 @ m3).max() <= 1e-8
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        sv_trace = np.trace(eigen_filter(ico1_lap, 3).matrix())
    assert abs(np.trace(pm.matrix()) - sv_trace) <= 1e-8 * max(sv_trace, 1.0)


def test_power_residuals_reported(ico1_lap):
    pm = power_method_filter(ico1_lap, CLEAN_CUT)
    resid = pm.meta["residuals"]
    assert resid.shape == (CLEAN_CUT,)
    assert resid.max() == pm.meta["accuracy"]


def test_power_raises_when_iteration_budget_too_small(ico1_lap):
    with pytest.raises(ConvergenceError):
        power_method_filter(ico1_lap, CLEAN_CUT, tol=1e-14, max_iter=1)


# Butterworth backend --------------------------------------------------------


def test_butterworth_profile_matches_closed_form(ico1_lap):
    op = butterworth_filter(ico1_lap, x_c=1.3, order=40)
    x = np.linspace(0.0, 5.0, 47)
    ref = 1.0 / (1.0 + (x / 1.3) ** 40)
    assert np.abs(op.profile(x) - ref).max() <= 1e-10
    assert op.profile(np.array([0.0]))[0] == pytest.approx(1.0, abs=1e-14)
    assert op.profile(np.array([1.3]))[0] == pytest.approx(0.5, rel=1e-12)


def test_butterworth_in_gap_matches_exact_backend(ico1_lap, ico1_spectrum):
    # cutoff in the middle of a wide spectral gap: the smooth mask is
    # numerically 0/1 on the whole spectrum at order 100
    n = CLEAN_CUT
    x_c = 0.5 * (ico1_spectrum[n - 1] + ico1_spectrum[n])
    bw = butterworth_filter(ico1_lap, x_c=x_c, order=100)
    sv = eigen_filter(ico1_lap, n)
    assert np.abs(bw.matrix() - sv.matrix()).max() <= 1e-6
    assert bw.meta["factors"] == 50


def test_butterworth_preserves_deep_band_eigenvectors(ico1_lap, ico1_spectrum):
    w, u = np.linalg.eigh(ico1_lap.toarray().astype(float))
    v = u[:, 1]  # eigenvalue 0.18, far below the cutoff
    x_c = 0.5 * (ico1_spectrum[3] + ico1_spectrum[4])
    out = butterworth_apply(ico1_lap, x_c, 100, v)
    assert np.linalg.norm(out - w[1] * v) <= 1e-3 * w[1]


def test_butterworth_truncation_keeps_dc_gain(ico1_lap):
    full = butterworth_filter(ico1_lap, x_c=1.0, order=100)
    trunc = butterworth_filter(ico1_lap, x_c=1.0, order=100, truncation=8)
    assert trunc.meta["factors"] == 8
    assert full.meta["factors"] == 50
    zero = np.array([0.0])
    assert trunc.profile(zero)[0] == pytest.approx(1.0, abs=1e-12)
    # dropping factors can only soften the transition
    assert trunc.meta["accuracy"] >= full.meta["accuracy"]


def test_butterworth_validation():
    lap = graph_laplacian(bases(shapes.tetrahedron())[0])
    with pytest.raises(ValueError):
        butterworth_filter(lap, x_c=0.0)
    with pytest.raises(ValueError):
        butterworth_filter(lap, x_c=1.0, order=7)
    with pytest.raises(ValueError):
        butterworth_filter(lap, x_c=1.0, order=100, truncation=0)


# Chebyshev backend ----------------------------------------------------------


def test_chebyshev_recurrence_against_cosine_form(ico1_lap):
    # the profile is a polynomial evaluated by the three-term recurrence;
    # cross-check with T_k(t) = cos(k arccos t) summed directly
    op = chebyshev_filter(ico1_lap, x_c=2.0, poly_count=60)
    lo, hi = op.meta["interval"]
    xs = np.linspace(lo, hi, 41)
    t = np.clip(2.0 * xs / hi - 1.0, -1.0, 1.0)
    m = 120
    nodes = np.cos(np.pi * (np.arange(m) + 0.5) / m)
    fx = 1.0 / (1.0 + (0.5 * hi * (nodes + 1.0) / 2.0) ** 100)
    k = np.arange(61)
    coeffs = (2.0 / m) * np.cos(np.pi * np.outer(k, np.arange(m) + 0.5) / m) @ fx
    ref = 0.5 * coeffs[0] + sum(
        c * np.cos(j * np.arccos(t)) for j, c in zip(k[1:], coeffs[1:])
    )
    assert np.abs(op.profile(xs) - ref).max() <= 1e-10


def test_chebyshev_mask_consistent_with_profile_on_eigenvectors(ico1_lap):
    # mask and profile evaluate the same polynomial, one on L, one on
    # scalars, so they must agree to rounding on eigenpairs
    w, u = np.linalg.eigh(ico1_lap.toarray().astype(float))
    op = chebyshev_filter(ico1_lap, x_c=2.0)
    for i in (0, 5, 40, 79):
        out = op.mask_apply(u[:, i])
        assert np.linalg.norm(out - op.profile(w[i : i + 1])[0] * u[:, i]) <= 1e-10


def test_chebyshev_mid_spectrum_matches_exact_backend(ico1_lap, ico1_spectrum):
    # mid-spectrum cut at the wide gap after 43 kept modes; eigenvalues
    # outside the transition band must see a numerically exact 0/1 mask
    n = MID_CUT
    w = ico1_spectrum
    x_c = 0.5 * (w[n - 1] + w[n])
    ch = chebyshev_filter(ico1_lap, x_c=x_c)
    sv = eigen_filter(ico1_lap, n)
    _, u = np.linalg.eigh(ico1_lap.toarray().astype(float))
    out_band = np.abs(w - x_c) > 0.15 * x_c
    assert out_band.all()  # the whole spectrum clears this transition band
    diff = ch.matrix() - sv.matrix()
    err = np.linalg.norm(diff @ u[:, out_band], axis=0) / w[-1]
    assert err.max() <= 1e-2
    ideal = (w < x_c).astype(float)
    assert np.abs(ch.profile(w) - ideal)[out_band].max() <= 1e-2


def test_chebyshev_suppresses_high_eigenvectors(ico1_lap, ico1_spectrum):
    w, u = np.linalg.eigh(ico1_lap.toarray().astype(float))
    x_c = 0.5 * (ico1_spectrum[MID_CUT - 1] + ico1_spectrum[MID_CUT])
    op = chebyshev_filter(ico1_lap, x_c=x_c)
    v = u[:, -1]  # top of the spectrum, deep in the stopband
    assert np.linalg.norm(op.apply(v)) <= 1e-2 * w[-1]


def test_chebyshev_explicit_bound_skips_estimation(ico1_lap, ico1_spectrum):
    lam_max = float(ico1_spectrum[-1])
    op = chebyshev_filter(ico1_lap, x_c=2.0, sigma_max=lam_max)
    assert op.meta["interval"][1] == pytest.approx(1.1 * lam_max, rel=1e-12)
    est = chebyshev_filter(ico1_lap, x_c=2.0)
    assert est.meta["interval"][1] >= lam_max  # margin covers the spectrum


# cutoff heuristics ----------------------------------------------------------


def test_sigma_estimate_exact_on_the_tetrahedron(tetra):
    # 4I - J has lambda_2 = 4 and dim = 4, so the ramp model gives
    # (4 - n) * 4 exactly
    lap = graph_laplacian(bases(tetra)[0])
    assert sigma_n_estimate(lap, 0) == pytest.approx(16.0, rel=1e-8)
    assert sigma_n_estimate(lap, 3) == pytest.approx(4.0, rel=1e-8)
    assert sigma_n_estimate(lap, 4) == 0.0


def test_sigma_estimate_recovers_the_fiedler_value(ico1_lap, ico1_spectrum):
    dim = ico1_lap.shape[0]
    est = sigma_n_estimate(ico1_lap, dim - 1)
    assert est == pytest.approx(float(ico1_spectrum[1]), rel=1e-6)


def test_cutoff_midpoint_grows_with_kept_count(ico1_lap):
    cuts = [cutoff_for_index(ico1_lap, n) for n in (10, 30, 60)]
    assert all(c > 0 for c in cuts)
    assert cuts[0] < cuts[1] < cuts[2]


def test_fiedler_iteration_budget(ico1_lap):
    with pytest.raises(ConvergenceError):
        sigma_n_estimate(ico1_lap, 1, tol=1e-14, max_iter=1)


# dispatch -------------------------------------------------------------------


def test_build_filter_dispatches_every_backend(ico1_lap, ico1_spectrum):
    x_c = 0.5 * (ico1_spectrum[CLEAN_CUT - 1] + ico1_spectrum[CLEAN_CUT])
    for backend in ("svd", "power", "butterworth", "chebyshev"):
        spec = FilterSpec(n=CLEAN_CUT, backend=backend, cutoff=x_c)
        op = build_filter(ico1_lap, spec)
        assert op.meta["backend"] == backend


def test_build_filter_uses_heuristic_cutoff_when_unset(ico1_lap):
    op = build_filter(ico1_lap, FilterSpec(n=10, backend="butterworth"))
    assert op.meta["cutoff"] == pytest.approx(cutoff_for_index(ico1_lap, 10))


def test_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec(n=5, backend="fft")
    with pytest.raises(ValueError):
        FilterSpec(n=0)
    with pytest.raises(ValueError):
        FilterSpec(n=5, butterworth_order=11)
    with pytest.raises(ValueError):
        FilterSpec(n=5, poly_count=0)


# filtered bases -------------------------------------------------------------


def test_filtered_basis_endpoints(ico1, ico1_star):
    sig = ico1_star.toarray().astype(float)
    n_cells = sig.shape[1]
    assert np.abs(filtered_loop_star(ico1_star, 1)).max() <= 1e-12
    assert np.abs(filtered_loop_star(ico1_star, n_cells) - sig).max() <= 1e-12


def test_filtered_basis_min_index_identity(ico1_star):
    # X_m^T X_n = (X^T X)_min(m,n): the narrower band limits the product
    m, n = 4, 9
    xm = filtered_loop_star(ico1_star, m)
    xn = filtered_loop_star(ico1_star, n)
    lap_m = svd_filtered_laplacian(ico1_star, m).matrix()
    assert np.abs(xm.T @ xn - lap_m).max() <= 1e-10


def test_filtered_basis_difference_orthogonality(ico1_star):
    # disjoint spectral bands: (X_m - X_n) spans modes m..n, so bands
    # m < n <= p < q never overlap
    m, n, p, q = 4, 9, 16, 25
    d1 = filtered_loop_star(ico1_star, n) - filtered_loop_star(ico1_star, m)
    d2 = filtered_loop_star(ico1_star, q) - filtered_loop_star(ico1_star, p)
    assert np.abs(d1.T @ d2).max() <= 1e-10


def test_filtered_basis_accepts_spec_and_operator(ico1_star, ico1_lap):
    via_int = filtered_loop_star(ico1_star, CLEAN_CUT)
    via_spec = filtered_loop_star(ico1_star, FilterSpec(n=CLEAN_CUT))
    via_op = filtered_loop_star(ico1_star, eigen_filter(ico1_lap, CLEAN_CUT))
    assert np.abs(via_int - via_spec).max() <= 1e-14
    assert np.abs(via_int - via_op).max() <= 1e-14


# filtered projectors --------------------------------------------------------


def full_projectors(mesh, normalized=False):
    sig, lam = bases(mesh)
    if not normalized:
        return sig, lam, projectors(sig, lam)
    topo = build_basis_topology(mesh)
    sig_t, lam_t = normalized_bases(
        sig, lam, gram_rwg(mesh, topo), gram_patch(mesh), gram_pyramid(mesh)
    )
    return sig_t, lam_t, projectors(sig_t, lam_t, normalized=True)


@pytest.mark.parametrize("normalized", [False, True], ids=["plain", "normalized"])
def test_filtered_projectors_recover_the_unfiltered_split(ico1, normalized):
    sig, lam, ps = full_projectors(ico1, normalized)
    n_cells = sig.shape[1]
    n_verts = lam.shape[1]
    pairs = [
        ("sigma", sig, n_cells, ps.p_sigma),
        ("lambda_h", lam, n_verts, ps.p_lambda_h),
        ("dual_lambda", lam, n_verts, ps.pd_lambda),
        ("dual_sigma_h", sig, n_cells, ps.pd_sigma_h),
    ]
    for kind, x, full_n, ref in pairs:
        got = filter_projector(x, full_n, kind, base=ps)
        assert np.abs(got - ref).max() <= 1e-10, kind


@pytest.mark.parametrize("normalized", [False, True], ids=["plain", "normalized"])
def test_filtered_projector_idempotent_and_symmetric(ico1, normalized):
    sig, lam, ps = full_projectors(ico1, normalized)
    p = filter_projector(sig, 9, "sigma", base=ps)
    assert np.abs(p @ p - p).max() <= 1e-10
    assert np.abs(p - p.T).max() <= 1e-11


@pytest.mark.parametrize("normalized", [False, True], ids=["plain", "normalized"])
def test_filtered_cross_annihilation(ico1, normalized):
    # the filtered div-conforming projector still kills the filtered
    # curl-plus-harmonic complement at any pair of filtering indices
    sig, lam, ps = full_projectors(ico1, normalized)
    p_sig = filter_projector(sig, 9, "sigma", base=ps)
    p_lam_h = filter_projector(lam, 16, "lambda_h", base=ps)
    assert np.abs(p_sig @ p_lam_h).max() <= 1e-10


@pytest.mark.filterwarnings("ignore::qhfilters.filters.DegenerateSpectrumWarning")
def test_lambda_h_projector_on_the_torus(torus88):
    # genus 1: the harmonic completion carries trace 2 at every index
    sig, lam, ps = full_projectors(torus88)
    p = filter_projector(lam, 10, "lambda_h", base=ps)
    p_plain = filter_projector(lam, 10, "dual_lambda")
    assert np.trace(p - p_plain) == pytest.approx(2.0, abs=1e-8)


def test_projector_kind_validation(ico1_star):
    with pytest.raises(ValueError):
        filter_projector(ico1_star, 4, "loop")
    with pytest.raises(ValueError):
        filter_projector(ico1_star, 4, "lambda_h")  # needs the base set
