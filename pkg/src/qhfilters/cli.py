"""Command line entry point.

Subcommands: decompose, filter, sweep, solve, print-config.  Exit codes:
0 success, 2 configuration or usage, 3 mesh, 4 numerical failure,
5 solver non-convergence.  QHFILTERS_THREADS caps the BLAS thread count
and must take effect before the numerical stack loads, so it is applied
at import time and all heavy imports stay inside the handlers.
"""

from __future__ import annotations

import os


def _apply_thread_env() -> None:
    count = os.environ.get("QHFILTERS_THREADS", "").strip()
    if not count:
        return
    if not count.isdigit() or int(count) < 1:
        raise SystemExit(f"QHFILTERS_THREADS must be a positive integer, got {count!r}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = count


_apply_thread_env()

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
import warnings  # noqa: E402

from .errors import ConfigError, ConvergenceError  # noqa: E402

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MESH = 3
EXIT_NUMERIC = 4
EXIT_NO_CONVERGENCE = 5


def _slug(spec: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "-" for c in spec)


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_triplets(path, matrix) -> None:
    """Sparse matrix as 'row col value' lines, row-major sorted."""
    coo = matrix.tocoo()
    order = sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {len(order)}\n")
        for r, c, v in order:
            fh.write(f"{r} {c} {v:.17g}\n")


def _cmd_print_config(_args) -> int:
    from .config import TEMPLATE

    sys.stdout.write(TEMPLATE)
    return EXIT_OK


def _cmd_decompose(args) -> int:
    import numpy as np

    from . import qhd
    from .analysis import resolve_mesh
    from .efie import gram_patch, gram_pyramid, gram_rwg
    from .mesh import build_basis_topology, compute_stats

    mesh = resolve_mesh(args.mesh)
    stats = compute_stats(mesh)
    topo = build_basis_topology(mesh)
    sig = qhd.sigma_matrix(topo)
    lam = qhd.lambda_matrix(topo)
    os.makedirs(args.out, exist_ok=True)
    _write_triplets(os.path.join(args.out, "sigma.txt"), sig)
    _write_triplets(os.path.join(args.out, "lambda.txt"), lam)

    if args.normalized:
        sig_mat, lam_mat = qhd.normalized_bases(
            sig,
            lam,
            gram_rwg(mesh, topo).toarray(),
            gram_patch(mesh).toarray(),
            gram_pyramid(mesh).toarray(),
        )
    else:
        sig_mat, lam_mat = sig, lam
    proj = qhd.projectors(sig_mat, lam_mat, genus=stats.genus)
    report = {
        "mesh": args.mesh,
        "vertices": stats.num_vertices,
        "edges": stats.num_edges,
        "cells": stats.num_triangles,
        "genus": stats.genus,
        "normalized": bool(args.normalized),
        "rank_sigma": int(round(float(np.trace(proj.p_sigma)))),
        "rank_lambda": int(round(float(np.trace(proj.pd_lambda)))),
        "harmonic_dim": proj.harmonic_dim,
    }
    _write_json(os.path.join(args.out, "decompose_report.json"), report)
    print(
        f"{args.mesh}: rank(Sigma) = {report['rank_sigma']}, "
        f"rank(Lambda) = {report['rank_lambda']}, "
        f"harmonic dim = {report['harmonic_dim']}"
    )
    return EXIT_OK


def _cmd_filter(args) -> int:
    import numpy as np

    from . import qhd
    from .analysis import resolve_mesh
    from .filters import (
        DegenerateSpectrumWarning,
        FilterSpec,
        build_filter,
        eigen_filter,
    )
    from .mesh import build_basis_topology

    mesh = resolve_mesh(args.mesh)
    topo = build_basis_topology(mesh)
    incidence = (
        qhd.sigma_matrix(topo) if args.side == "sigma" else qhd.lambda_matrix(topo)
    )
    lap = qhd.graph_laplacian(incidence)
    spec = FilterSpec(
        n=args.index,
        backend=args.backend,
        butterworth_order=args.order,
        poly_count=args.poly_count,
    )
    degenerate = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateSpectrumWarning)
        op = build_filter(lap, spec)
        reference = eigen_filter(lap, args.index)
        degenerate = any(
            issubclass(w.category, DegenerateSpectrumWarning) for w in caught
        )
    error = float(np.abs(op.mask_matrix() - reference.mask_matrix()).max())
    report = {
        "mesh": args.mesh,
        "side": args.side,
        "index": args.index,
        "backend": args.backend,
        "dimension": int(lap.shape[0]),
        "degenerate_cut": degenerate,
        "max_error_vs_svd": error,
        "meta": {
            k: v
            for k, v in op.meta.items()
            if isinstance(v, (int, float, str, bool))
        },
    }
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "filter_report.json"), report)
    print(
        f"{args.side} filter at index {args.index} via {args.backend}: "
        f"max deviation from the dense reference {error:.3e}"
        + (" (degenerate cut)" if degenerate else "")
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .analysis import cond_sweep, write_sweep_csv
    from .config import from_toml

    config = from_toml(args.config)
    rows = cond_sweep(config)
    os.makedirs(config.output_dir, exist_ok=True)
    out_path = os.path.join(config.output_dir, args.out_name)
    write_sweep_csv(rows, out_path)
    for row in rows:
        iters = "" if row.iterations is None else f"  iters {row.iterations}"
        print(
            f"{row.mesh}  N={row.size}  f={row.frequency:g}  "
            f"{row.formulation}: cond {row.cond:.6e}{iters}"
        )
    print(f"wrote {out_path}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    import numpy as np

    from . import precond, qhd
    from .analysis import _build_formulation, resolve_mesh
    from .config import from_toml
    from .efie import PlaneWave, WaveContext, assemble_operator_set, normalize_operator
    from .mesh import build_basis_topology, compute_stats

    config = from_toml(args.config)
    wave = PlaneWave(
        direction=config.wave_direction,
        polarization=config.wave_polarization,
        amplitude=config.wave_amplitude,
    )
    os.makedirs(config.output_dir, exist_ok=True)
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
            if any(
                f in ("qh-projectors", "filtered-qh") for f in config.formulations
            ):
                proj_n = qhd.projectors(
                    sig_n, lam_n, genus=stats.genus, normalized=True
                )
            for form in config.formulations:
                _, _, bundle = _build_formulation(
                    form, config, ops, sig_n, lam_n, proj_n
                )
                solver = bundle or precond.identity_preconditioner(ops.ts.shape[0])
                name = f"solve_{_slug(spec)}_{frequency:g}_{form}.json"
                out_path = os.path.join(config.output_dir, name)
                try:
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
                except ConvergenceError as exc:
                    partial = getattr(exc, "report", None)
                    payload = _solve_payload(
                        spec, frequency, form, solver, partial, np
                    )
                    _write_json(out_path, payload)
                    print(f"{name}: no convergence ({exc})", file=sys.stderr)
                    return EXIT_NO_CONVERGENCE
                payload = _solve_payload(spec, frequency, form, solver, report, np)
                _write_json(out_path, payload)
                print(
                    f"{name}: {report.iterations} iterations, "
                    f"residual {report.residual:.3e}"
                )
    return EXIT_OK


def _solve_payload(spec, frequency, form, bundle, report, np):
    payload = {
        "mesh": spec,
        "frequency": frequency,
        "formulation": form,
        "variant": bundle.variant,
        "scaling": {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in bundle.scaling.items()
        },
        "alpha": bundle.alpha,
        "converged": bool(report is not None and report.converged),
    }
    if report is not None:
        payload.update(
            iterations=report.iterations,
            residual=report.residual,
            coefficients_real=np.real(report.coefficients).tolist(),
            coefficients_imag=np.imag(report.coefficients).tolist(),
        )
    return payload


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qhfilters",
        description="Filtered quasi-Helmholtz decompositions and "
        "preconditioned EFIE workflows on closed triangle meshes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "decompose", help="write Star/Loop incidence triplets and a rank report"
    )
    p.add_argument("--mesh", required=True, help="builtin spec or mesh file path")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument(
        "--normalized",
        action="store_true",
        help="report on the Gram-rescaled bases instead of the integer ones",
    )
    p.set_defaults(handler=_cmd_decompose)

    p = sub.add_parser(
        "filter", help="apply one spectral filter and report accuracy"
    )
    p.add_argument("--mesh", required=True)
    p.add_argument("--side", choices=("sigma", "lambda"), required=True)
    p.add_argument("--index", type=int, required=True, help="filtering index n")
    p.add_argument(
        "--backend",
        choices=("svd", "power", "butterworth", "chebyshev"),
        default="svd",
    )
    p.add_argument("--order", type=int, default=100, help="Butterworth order")
    p.add_argument(
        "--poly-count", type=int, default=200, help="Chebyshev polynomial count"
    )
    p.add_argument("--out", default=".")
    p.set_defaults(handler=_cmd_filter)

    p = sub.add_parser(
        "sweep", help="condition-number sweep over a config's grid, to CSV"
    )
    p.add_argument("--config", required=True, help="TOML config path")
    p.add_argument("--out-name", default="sweep.csv")
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser(
        "solve", help="preconditioned solves for every config grid cell"
    )
    p.add_argument("--config", required=True)
    p.set_defaults(handler=_cmd_solve)

    p = sub.add_parser("print-config", help="print a commented config template")
    p.set_defaults(handler=_cmd_print_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    from .mesh import MeshError  # light import, needed for mapping

    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeshError as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_MESH
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (ValueError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
