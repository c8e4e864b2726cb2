"""Conditioning measurements, Laplacian-ordered spectra, and sweeps.

The spectrum report pairs each nonzero graph-Laplacian mode with a Rayleigh
value of the operator at that mode's edge-space image and uses the
Laplacian eigenvalue as the abscissa; on those axes the vector-potential
block falls like lambda^(-1/2) and the scalar-potential block grows like
lambda^(+1/2), and a well-balanced preconditioned system is flat.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import precond, qhd, shapes
from .config import RunConfig, validate
from .efie import (
    PlaneWave,
    WaveContext,
    assemble_operator_set,
    normalize_operator,
)
from .filters import FilterSpec
from .mesh import build_basis_topology, compute_stats, load_mesh

__all__ = [
    "condition_number",
    "SpectrumReport",
    "spectrum_by_laplacian_ordering",
    "slope_fit",
    "CondSweepRow",
    "cond_sweep",
    "write_sweep_csv",
    "resolve_mesh",
]

NULLSPACE_CUTOFF = 1e-12


def condition_number(a, exclude_isolated: int = 0) -> float:
    """sigma_max / sigma_min over the numerically nonzero singular values.

    `exclude_isolated` additionally strips that many extreme outliers in
    log scale (largest |log sigma - median|, one at a time) before the
    ratio is taken; the stacked-basis preconditioner leaves two such
    artifacts from its removed redundancy columns.
    """
    s = np.linalg.svd(np.asarray(a), compute_uv=False)
    s = s[s > NULLSPACE_CUTOFF * s[0]]
    if exclude_isolated < 0:
        raise ValueError("exclude_isolated must be >= 0")
    for _ in range(exclude_isolated):
        if len(s) <= 2:
            break
        logs = np.log(s)
        s = np.delete(s, int(np.argmax(np.abs(logs - np.median(logs)))))
    return float(s[0] / s[-1])


@dataclass(frozen=True)
class SpectrumReport:
    """Operator values ordered by graph-Laplacian mode.

    `eigenvalues` is the abscissa (ascending nonzero Laplacian
    eigenvalues), `values` the Rayleigh magnitudes normalized so the
    first entry is 1.
    """

    eigenvalues: np.ndarray
    values: np.ndarray
    normalization: float
    label: str


def spectrum_by_laplacian_ordering(
    a,
    basis,
    *,
    probe: str = "image",
    label: str = "",
) -> SpectrumReport:
    """Rayleigh spectrum of `a` against the modes of basis^T basis.

    probe="image" tests a with the edge-space images (basis @ mode), the
    natural probes for an operator on the coefficient space.
    probe="coordinates" uses the mode vectors themselves, for reduced
    systems whose unknowns are indexed like the Laplacian (a system one
    short gets the modes with their last coordinate dropped, matching the
    removed redundancy column).
    """
    if probe not in ("image", "coordinates"):
        raise ValueError(f"unknown probe kind {probe!r}")
    a = np.asarray(a)
    x = basis.toarray() if hasattr(basis, "toarray") else np.asarray(basis, float)
    lap = x.T @ x
    eigs, modes = sla.eigh(lap)
    keep = eigs > 1e-10 * max(eigs[-1], 0.0)
    eigs, modes = eigs[keep], modes[:, keep]
    if probe == "image":
        p = x @ modes
    else:
        if a.shape[0] == modes.shape[0]:
            p = modes
        elif a.shape[0] == modes.shape[0] - 1:
            p = modes[:-1]
        else:
            raise ValueError(
                f"operator dimension {a.shape[0]} matches neither the mode "
                f"count {modes.shape[0]} nor one less"
            )
    values = np.abs(np.einsum("ej,ef,fj->j", p.conj(), a, p)) / np.einsum(
        "ej,ej->j", p.conj(), p
    ).real
    if not values.size or values[0] <= 0.0:
        raise ValueError("first Laplacian mode gives no usable Rayleigh value")
    normalization = float(values[0])
    return SpectrumReport(
        eigenvalues=eigs,
        values=values / normalization,
        normalization=normalization,
        label=label,
    )


def slope_fit(report: SpectrumReport, window: tuple | None = None) -> float:
    """Least-squares log-log slope of values against eigenvalues.

    `window` is an index pair; the default is the central half of the
    spectrum, away from both the smoothest modes and the mesh-scale tail.
    At least 8 points must remain.
    """
    n = len(report.values)
    lo, hi = window if window is not None else (n // 4, (3 * n) // 4)
    if not 0 <= lo < hi <= n:
        raise ValueError(f"window ({lo}, {hi}) outside 0..{n}")
    if hi - lo < 8:
        raise ValueError(f"window ({lo}, {hi}) keeps fewer than 8 points")
    x = np.log(report.eigenvalues[lo:hi])
    y = np.log(report.values[lo:hi])
    return float(np.polyfit(x, y, 1)[0])


# sweeps ----------------------------------------------------------------------


@dataclass(frozen=True)
class CondSweepRow:
    mesh: str
    h_avg: float
    size: int
    frequency: float
    formulation: str
    cond: float
    isolated_excluded: int
    iterations: int | None


def resolve_mesh(spec: str):
    """A mesh entry is a file path (by suffix) or a builtin spec."""
    lowered = spec.lower()
    if lowered.endswith((".obj", ".msh")):
        return load_mesh(spec)
    return shapes.builtin_mesh(spec)


def _filter_spec(config: RunConfig, n: int) -> FilterSpec:
    return FilterSpec(
        n=n,
        backend=config.filter_backend,
        butterworth_order=config.butterworth_order,
        poly_count=config.poly_count,
    )


def _build_formulation(form, config, ops, sig_n, lam_n, proj_n):
    """Return (system matrix, isolated-outlier count, bundle or None)."""
    if form == "plain":
        return ops.ts + ops.th, 0, None
    if form in ("loop-star", "filtered-ls"):
        if form == "loop-star":
            star_basis = sig_n[:, :-1]
            loop_basis = lam_n[:, :-1]
        else:
            samp_s = precond.build_dyadic_sampling(
                sig_n.T @ sig_n,
                config.alpha,
                "sigma",
                precond.W_STAR_EXPONENT,
                method=config.weight_method,
            )
            samp_l = precond.build_dyadic_sampling(
                lam_n.T @ lam_n,
                config.alpha,
                "lambda",
                precond.W_LOOP_EXPONENT,
                method=config.weight_method,
            )
            star_basis = precond.build_filtered_ls_basis(
                sig_n, samp_s, backend=config.filter_backend
            )
            loop_basis = precond.build_filtered_ls_basis(
                lam_n, samp_l, backend=config.filter_backend
            )
        bundle = precond.build_W(ops, star_basis, loop_basis, alpha=config.alpha)
        return bundle.system_matrix(ops), 2, bundle
    if form in ("qh-projectors", "filtered-qh"):
        if form == "qh-projectors":
            samp_s = precond.plain_sampling(sig_n.shape[1], "sigma")
            samp_l = precond.plain_sampling(lam_n.shape[1], "lambda")
        else:
            samp_s = precond.build_dyadic_sampling(
                sig_n.T @ sig_n,
                config.alpha,
                "sigma",
                precond.Q_STAR_EXPONENT,
                method=config.weight_method,
            )
            samp_l = precond.build_dyadic_sampling(
                lam_n.T @ lam_n,
                config.alpha,
                "lambda",
                precond.Q_LOOP_EXPONENT,
                method=config.weight_method,
            )
        bundle = precond.build_Q(
            ops,
            proj_n,
            config.filter_backend,
            samp_s,
            samp_l,
            sigma=sig_n,
            lam=lam_n,
        )
        system = bundle.system_matrix(
            ops, stability_zeroing=config.stability_zeroing
        )
        return system, 0, bundle
    raise ValueError(f"unknown formulation {form!r}")


def _sweep_wave(config: RunConfig) -> PlaneWave | None:
    if not config.solve_during_sweep:
        return None
    return PlaneWave(
        direction=config.wave_direction,
        polarization=config.wave_polarization,
        amplitude=config.wave_amplitude,
    )


def cond_sweep(config: RunConfig) -> list:
    """Condition numbers for every mesh x frequency x formulation cell.

    Iteration counts are filled in only when the config asks for solves;
    a formulation that cannot serve a mesh (the stacked-basis variants on
    a multiply connected surface) raises rather than writing a bad row.
    """
    validate(config)
    wave = _sweep_wave(config)
    rows = []
    for spec in config.meshes:
        mesh = resolve_mesh(spec)
        stats = compute_stats(mesh)
        topo = build_basis_topology(mesh)
        sig = qhd.sigma_matrix(topo)
        lam = qhd.lambda_matrix(topo)
        for frequency in config.frequencies:
            ctx = WaveContext(
                frequency=frequency,
                epsilon=config.epsilon,
                mu=config.mu,
                wave=wave,
            )
            ops = normalize_operator(assemble_operator_set(mesh, topo, ctx))
            sig_n, lam_n = qhd.normalized_bases(
                sig, lam, ops.gram, ops.gram_patch, ops.gram_pyramid
            )
            proj_n = None
            if any(f in ("qh-projectors", "filtered-qh") for f in config.formulations):
                proj_n = qhd.projectors(
                    sig_n, lam_n, genus=stats.genus, normalized=True
                )
            for form in config.formulations:
                system, excluded, bundle = _build_formulation(
                    form, config, ops, sig_n, lam_n, proj_n
                )
                iterations = None
                if wave is not None:
                    solver = bundle or precond.identity_preconditioner(
                        ops.ts.shape[0]
                    )
                    report = precond.solve_preconditioned(
                        solver,
                        ops,
                        tol=config.solver_tol,
                        max_iter=config.solver_max_iter or None,
                        stability_zeroing=(
                            config.stability_zeroing
                            if solver.star_part is not None
                            else None
                        ),
                    )
                    iterations = report.iterations
                rows.append(
                    CondSweepRow(
                        mesh=spec,
                        h_avg=stats.h_avg,
                        size=ops.ts.shape[0],
                        frequency=frequency,
                        formulation=form,
                        cond=condition_number(system, exclude_isolated=excluded),
                        isolated_excluded=excluded,
                        iterations=iterations,
                    )
                )
    return rows


CSV_HEADER = (
    "mesh",
    "h_avg",
    "size",
    "frequency",
    "formulation",
    "cond",
    "isolated_excluded",
    "iterations",
)


def write_sweep_csv(rows, path: str) -> None:
    """Deterministic CSV: fixed header, %.17e floats, LF newlines."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.mesh,
                    "%.17e" % row.h_avg,
                    str(row.size),
                    "%.17e" % row.frequency,
                    row.formulation,
                    "%.17e" % row.cond,
                    str(row.isolated_excluded),
                    "" if row.iterations is None else str(row.iterations),
                ]
            )
