"""Dense EFIE operator assembly on closed triangle meshes.

Conventions.  Helmholtz kernel G(r, r') = exp(+ik|r - r'|) / (4 pi |r - r'|);
the vector-potential block carries the prefactor ik and the scalar-potential
block carries 1/(ik).  The div-conforming basis on edge m is
(r - apex) / (2 A) on its positive cell and the negative of that on the
other cell, so its surface divergence is +/- 1/A per cell, constant.

Assembly runs through per-cell-pair moments of the kernel: the plain double
integral, the source-position moment, and the position-dot-position moment.
Every operator entry is a signed, area-scaled combination of those, applied
through two sparse edge-to-cell maps, so the quadrature cost is paid once
per mesh and wavenumber.  Well-separated pairs use a 7-point symmetric rule
on both triangles; self and vertex-adjacent pairs split the kernel into
1/(4 pi R) (inner integral in closed form, outer by a collapsed product
rule) plus a bounded remainder handled by the 7-point rule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .mesh import (
    BasisTopology,
    TriangleMesh,
    gram_patch,
    gram_pyramid,
    gram_rwg,
)
from .qhd import sigma_matrix
from .quadrature import (
    SEVEN_POINT_RULE,
    collapsed_rule,
    oscillatory_part,
    physical_points,
    static_triangle_moments,
)

__all__ = [
    "VACUUM_PERMITTIVITY",
    "VACUUM_PERMEABILITY",
    "PlaneWave",
    "WaveContext",
    "CellMoments",
    "OperatorSet",
    "cell_pair_moments",
    "assemble_single_layer_patch",
    "assemble_ts",
    "assemble_th",
    "assemble_th_factorized",
    "assemble_rhs",
    "assemble_operator_set",
    "gram_inv_sqrt",
    "normalize_operator",
    "far_field",
]

VACUUM_PERMITTIVITY = 8.8541878128e-12
VACUUM_PERMEABILITY = 1.25663706212e-6

_FOUR_PI = 4.0 * np.pi


def _unit(v, name):
    v = np.asarray(v, dtype=float).reshape(3)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise ValueError(f"{name} must be a nonzero finite vector")
    return v / norm


@dataclass(frozen=True)
class PlaneWave:
    """Linearly polarized plane wave: E(r) = amplitude * p * exp(ik d.r)."""

    direction: np.ndarray
    polarization: np.ndarray
    amplitude: float = 1.0

    def __post_init__(self):
        d = _unit(self.direction, "propagation direction")
        p = _unit(self.polarization, "polarization")
        if abs(d @ p) > 1e-10:
            raise ValueError("polarization must be orthogonal to propagation")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "polarization", p)

    def field(self, points: np.ndarray, k: float) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        phase = np.exp(1j * k * (points @ self.direction))
        return self.amplitude * phase[..., None] * self.polarization


@dataclass(frozen=True)
class WaveContext:
    """Background medium and excitation; k = 2 pi f sqrt(eps mu)."""

    frequency: float
    epsilon: float = VACUUM_PERMITTIVITY
    mu: float = VACUUM_PERMEABILITY
    wave: PlaneWave | None = None

    def __post_init__(self):
        if not self.frequency > 0.0:
            raise ValueError("frequency must be positive")
        if not (self.epsilon > 0.0 and self.mu > 0.0):
            raise ValueError("medium constants must be positive")

    @property
    def omega(self) -> float:
        return 2.0 * np.pi * self.frequency

    @property
    def wavenumber(self) -> float:
        return self.omega * np.sqrt(self.epsilon * self.mu)

    @property
    def wavelength(self) -> float:
        return 2.0 * np.pi / self.wavenumber

    @classmethod
    def for_wavenumber(cls, k: float, wave: PlaneWave | None = None) -> "WaveContext":
        """Vacuum context with the requested wavenumber."""
        c0 = 1.0 / np.sqrt(VACUUM_PERMITTIVITY * VACUUM_PERMEABILITY)
        return cls(frequency=k * c0 / (2.0 * np.pi), wave=wave)


@dataclass
class CellMoments:
    """Kernel moments for every ordered cell pair (c, c').

    t0[c, c']     integral over c x c' of G
    tr[c, c', d]  integral of r'_d G          (source-position moment)
    ttr[c, c']    integral of (r . r') G
    """

    k: float
    t0: np.ndarray
    tr: np.ndarray
    ttr: np.ndarray


@dataclass
class OperatorSet:
    """The dense blocks one frequency produces: EFIE parts, patch single
    layer, Gram matrices, excitation.  `normalized` marks Gram-normalized
    ts/th/rhs (r and the Grams stay as assembled)."""

    ts: np.ndarray
    th: np.ndarray
    r: np.ndarray
    gram: np.ndarray
    gram_patch: np.ndarray
    gram_pyramid: np.ndarray
    rhs: np.ndarray | None = None
    normalized: bool = False


# quadrature-point bookkeeping ------------------------------------------------


def _cell_points(mesh: TriangleMesh, rule):
    """Physical rule points (C, q, 3) and area-scaled weights (C, q)."""
    corners = mesh.vertices[mesh.triangles]
    pts = physical_points(corners, rule)
    _, w = rule
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    return pts, areas[:, None] * w[None, :]


def _near_pairs(mesh: TriangleMesh):
    """Ordered cell pairs sharing at least one vertex (self pairs included)."""
    by_vertex: dict[int, list[int]] = {}
    for c, tri in enumerate(mesh.triangles):
        for v in tri:
            by_vertex.setdefault(int(v), []).append(c)
    neighbors: list[set[int]] = [set() for _ in range(mesh.num_triangles)]
    for cells in by_vertex.values():
        for c in cells:
            neighbors[c].update(cells)
    rows = []
    cols = []
    for c, near in enumerate(neighbors):
        for c2 in sorted(near):
            rows.append(c)
            cols.append(c2)
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)


def cell_pair_moments(
    mesh: TriangleMesh,
    k: float,
    *,
    near_outer_order: int = 6,
    block_cells: int = 48,
) -> CellMoments:
    """All three kernel moments for every cell pair at wavenumber k."""
    if not k > 0.0:
        raise ValueError("wavenumber must be positive")
    pts, wts = _cell_points(mesh, SEVEN_POINT_RULE)
    n_cells = mesh.num_triangles
    t0 = np.empty((n_cells, n_cells), dtype=complex)
    tr = np.empty((n_cells, n_cells, 3), dtype=complex)
    ttr = np.empty((n_cells, n_cells), dtype=complex)

    flat_pts = pts.reshape(-1, 3)
    flat_w = wts.reshape(-1)
    n_q = pts.shape[1]

    for start in range(0, n_cells, block_cells):
        stop = min(start + block_cells, n_cells)
        obs = pts[start:stop].reshape(-1, 3)
        dist = np.linalg.norm(obs[:, None, :] - flat_pts[None, :, :], axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.exp(1j * k * dist) / (_FOUR_PI * dist)
        g[dist == 0.0] = 0.0  # self point; replaced by extraction below
        gw = g * flat_w[None, :]
        gw = gw.reshape(stop - start, n_q, n_cells, n_q)
        m0 = gw.sum(axis=3)
        m1 = np.einsum("bqcp,cpd->bqcd", gw, pts)
        wb = wts[start:stop]
        t0[start:stop] = np.einsum("bq,bqc->bc", wb, m0)
        tr[start:stop] = np.einsum("bq,bqcd->bcd", wb, m1)
        ttr[start:stop] = np.einsum("bq,bqd,bqcd->bc", wb, pts[start:stop], m1)

    _overwrite_near_pairs(mesh, k, t0, tr, ttr, pts, wts, near_outer_order)
    return CellMoments(k=k, t0=t0, tr=tr, ttr=ttr)


def _overwrite_near_pairs(mesh, k, t0, tr, ttr, pts, wts, near_outer_order):
    """Replace near-pair moments with singularity-extracted values.

    Each unordered pair is integrated once with the outer point on the
    lower-numbered cell; the mirrored entry reuses the same numbers (the
    swapped source moment is the test-position moment of the same
    computation), which keeps the t0 and ttr arrays exactly symmetric and
    with them the assembled operators.
    """
    all_rows, all_cols = _near_pairs(mesh)
    keep = all_rows <= all_cols
    rows, cols = all_rows[keep], all_cols[keep]

    val0 = np.zeros(len(rows), dtype=complex)
    src = np.zeros((len(rows), 3), dtype=complex)
    tst = np.zeros((len(rows), 3), dtype=complex)
    valtr = np.zeros(len(rows), dtype=complex)

    # bounded remainder (exp(ikR) - 1) / (4 pi R) on the regular rule
    chunk = 512
    for start in range(0, len(rows), chunk):
        sl = slice(start, start + chunk)
        p_out = pts[rows[sl]]
        p_in = pts[cols[sl]]
        dist = np.linalg.norm(p_out[:, :, None, :] - p_in[:, None, :, :], axis=3)
        gs = oscillatory_part(dist, k) / _FOUR_PI
        gw = gs * wts[cols[sl]][:, None, :]
        sm0 = gw.sum(axis=2)
        sm1 = np.einsum("pqr,prd->pqd", gw, p_in)
        wo = wts[rows[sl]]
        val0[sl] = np.einsum("pq,pq->p", wo, sm0)
        src[sl] = np.einsum("pq,pqd->pd", wo, sm1)
        tst[sl] = np.einsum("pq,pqd,pq->pd", wo, p_out, sm0)
        valtr[sl] = np.einsum("pq,pqd,pqd->p", wo, p_out, sm1)

    # static part 1/(4 pi R): analytic inner integral, collapsed outer rule
    crule = collapsed_rule(near_outer_order)
    corners = mesh.vertices[mesh.triangles]
    opts_all = physical_points(corners, crule)
    _, cw = crule
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    for j, (c_out, c_in) in enumerate(zip(rows, cols)):
        obs = opts_all[c_out]
        ow = areas[c_out] * cw
        i0, iv = static_triangle_moments(corners[c_in], obs)
        val0[j] += (ow @ i0) / _FOUR_PI
        src[j] += (ow @ iv) / _FOUR_PI
        tst[j] += ((ow * i0) @ obs) / _FOUR_PI
        valtr[j] += (ow @ np.einsum("qd,qd->q", obs, iv)) / _FOUR_PI

    t0[rows, cols] = val0
    t0[cols, rows] = val0
    ttr[rows, cols] = valtr
    ttr[cols, rows] = valtr
    tr[rows, cols] = src
    off = rows != cols
    tr[cols[off], rows[off]] = tst[off]


# edge-to-cell maps -----------------------------------------------------------


def _edge_cell_maps(mesh: TriangleMesh, topo: BasisTopology):
    """Sparse maps from cells to edges: `e_map` carries the signed 1/(2A)
    factors, `a_maps[d]` additionally the apex coordinate component d."""
    n_e = topo.num_edges
    n_c = mesh.num_triangles
    rows = np.repeat(np.arange(n_e), 2)
    cols = np.stack([topo.c_plus, topo.c_minus], axis=1).reshape(-1)
    sign = np.tile(np.array([1.0, -1.0]), n_e).reshape(n_e, 2)
    inv2a = 0.5 / np.stack([topo.area_plus, topo.area_minus], axis=1)
    base = (sign * inv2a).reshape(-1)
    e_map = sp.csr_array((base, (rows, cols)), shape=(n_e, n_c))
    apex_pos = mesh.vertices[np.stack([topo.v_plus, topo.v_minus], axis=1)]
    a_maps = []
    for d in range(3):
        vals = base * apex_pos[:, :, d].reshape(-1)
        a_maps.append(sp.csr_array((vals, (rows, cols)), shape=(n_e, n_c)))
    return e_map, a_maps


def _resolve_moments(mesh, ctx, moments):
    if moments is not None:
        return moments
    return cell_pair_moments(mesh, ctx.wavenumber)


# operator blocks -------------------------------------------------------------


def assemble_single_layer_patch(
    mesh: TriangleMesh, ctx: WaveContext, *, moments: CellMoments | None = None
) -> np.ndarray:
    """Patch-tested single layer: [R]_{mn} = (1/(A_m A_n)) int int G."""
    moments = _resolve_moments(mesh, ctx, moments)
    corners = mesh.vertices[mesh.triangles]
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    return moments.t0 / np.outer(areas, areas)


def assemble_ts(
    mesh: TriangleMesh,
    topo: BasisTopology,
    ctx: WaveContext,
    *,
    moments: CellMoments | None = None,
) -> np.ndarray:
    """Vector-potential block ik int int f_m(r) . f_n(r') G(r, r').

    Expanding f = sign (r - apex) / (2A) on each cell turns the entry into
    four moment contractions pushed through the sparse edge-to-cell maps.
    """
    moments = _resolve_moments(mesh, ctx, moments)
    e_map, a_maps = _edge_cell_maps(mesh, topo)
    k = moments.k
    e_dense = e_map.toarray()
    out = e_dense @ moments.ttr @ e_dense.T
    for d in range(3):
        a_d = a_maps[d].toarray()
        tr_d = moments.tr[:, :, d]
        out -= e_dense @ tr_d.T @ a_d.T
        out -= a_d @ tr_d @ e_dense.T
        out += a_d @ moments.t0 @ a_d.T
    return 1j * k * out


def assemble_th(
    mesh: TriangleMesh,
    topo: BasisTopology,
    ctx: WaveContext,
    *,
    moments: CellMoments | None = None,
) -> np.ndarray:
    """Scalar-potential block (1/(ik)) int int (div f_m)(div' f_n) G,
    assembled directly from the signed constant divergences +/- 1/A."""
    moments = _resolve_moments(mesh, ctx, moments)
    n_e = topo.num_edges
    rows = np.repeat(np.arange(n_e), 2)
    cols = np.stack([topo.c_plus, topo.c_minus], axis=1).reshape(-1)
    inv_a = np.stack(
        [1.0 / topo.area_plus, -1.0 / topo.area_minus], axis=1
    ).reshape(-1)
    div_map = sp.csr_array(
        (inv_a, (rows, cols)), shape=(n_e, mesh.num_triangles)
    ).toarray()
    return (1.0 / (1j * moments.k)) * (div_map @ moments.t0 @ div_map.T)


def assemble_th_factorized(
    mesh: TriangleMesh,
    topo: BasisTopology,
    ctx: WaveContext,
    *,
    r: np.ndarray | None = None,
    moments: CellMoments | None = None,
) -> np.ndarray:
    """Oracle path for the scalar-potential block: c Sigma R Sigma^T with
    c = 1/(ik), Sigma the integer cell-to-edge incidence matrix."""
    if r is None:
        r = assemble_single_layer_patch(mesh, ctx, moments=moments)
    k = moments.k if moments is not None else ctx.wavenumber
    sig = sigma_matrix(topo).toarray().astype(float)
    return (1.0 / (1j * k)) * (sig @ r @ sig.T)


def assemble_rhs(
    mesh: TriangleMesh, topo: BasisTopology, ctx: WaveContext
) -> np.ndarray:
    """Tested incident field [v]_m = -int f_m . E^i (rotated testing makes
    the pairing a plain tangential dot product)."""
    if ctx.wave is None:
        raise ValueError("WaveContext has no incident plane wave")
    k = ctx.wavenumber
    pts, wts = _cell_points(mesh, SEVEN_POINT_RULE)
    field = ctx.wave.field(pts, k)
    p0 = np.einsum("cq,cqd->cd", wts, field)
    p1 = np.einsum("cq,cqd,cqd->c", wts, pts, field)
    e_map, a_maps = _edge_cell_maps(mesh, topo)
    v = e_map @ p1
    for d in range(3):
        v = v - a_maps[d] @ p0[:, d]
    return -v


def assemble_operator_set(
    mesh: TriangleMesh, topo: BasisTopology, ctx: WaveContext
) -> OperatorSet:
    """Assemble every block one frequency needs, sharing the moment pass."""
    moments = cell_pair_moments(mesh, ctx.wavenumber)
    r = assemble_single_layer_patch(mesh, ctx, moments=moments)
    ts = assemble_ts(mesh, topo, ctx, moments=moments)
    th = assemble_th(mesh, topo, ctx, moments=moments)
    rhs = assemble_rhs(mesh, topo, ctx) if ctx.wave is not None else None
    return OperatorSet(
        ts=ts,
        th=th,
        r=r,
        gram=gram_rwg(mesh, topo).toarray(),
        gram_patch=gram_patch(mesh).toarray(),
        gram_pyramid=gram_pyramid(mesh).toarray(),
        rhs=rhs,
    )


# Gram normalization ----------------------------------------------------------


def gram_inv_sqrt(gram) -> np.ndarray:
    """Inverse symmetric square root of an SPD Gram matrix."""
    dense = gram.toarray() if sp.issparse(gram) else np.asarray(gram, float)
    w, u = sla.eigh(dense)
    if w[0] <= 0.0:
        raise np.linalg.LinAlgError("Gram matrix is not positive definite")
    return (u / np.sqrt(w)) @ u.T


def normalize_operator(ops: OperatorSet) -> OperatorSet:
    """Two-sided Gram normalization G^{-1/2} T G^{-1/2} of the EFIE blocks
    and G^{-1/2} v of the excitation.  Idempotent on the flag."""
    if ops.normalized:
        return ops
    w = gram_inv_sqrt(ops.gram)
    return replace(
        ops,
        ts=w @ ops.ts @ w,
        th=w @ ops.th @ w,
        rhs=None if ops.rhs is None else w @ ops.rhs,
        normalized=True,
    )


# radiated field --------------------------------------------------------------


def far_field(
    mesh: TriangleMesh,
    topo: BasisTopology,
    ctx: WaveContext,
    coefficients: np.ndarray,
    directions: np.ndarray,
) -> np.ndarray:
    """Transverse radiation integral of the solved surface current.

    Returns (m, 3) complex amplitudes (ik/(4 pi)) (I - rhat rhat^T)
    int J(r') exp(-ik rhat . r') dS' for each unit direction; the common
    exp(ikr)/r spherical spreading factor is left off, so only relative
    patterns are meaningful.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    if (norms == 0.0).any():
        raise ValueError("far-field directions must be nonzero")
    directions = directions / norms
    k = ctx.wavenumber
    coefficients = np.asarray(coefficients)

    pts, wts = _cell_points(mesh, SEVEN_POINT_RULE)
    e_map, a_maps = _edge_cell_maps(mesh, topo)
    out = np.empty((len(directions), 3), dtype=complex)
    for i, rhat in enumerate(directions):
        phase = np.exp(-1j * k * (pts @ rhat)) * wts
        s0 = phase.sum(axis=1)
        s1 = np.einsum("cq,cqd->cd", phase, pts)
        f = np.array(
            [coefficients @ (e_map @ s1[:, d] - a_maps[d] @ s0) for d in range(3)]
        )
        f -= (f @ rhat) * rhat
        out[i] = (1j * k / _FOUR_PI) * f
    return out
