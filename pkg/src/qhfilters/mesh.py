"""Closed triangle meshes and the div-conforming basis bookkeeping on them.

A mesh is valid only if it is a closed, consistently oriented, connected
2-manifold: every edge is shared by exactly two triangles that traverse it in
opposite directions.  Loaders repair orientation when possible; everything
downstream (incidence matrices, operator assembly) relies on these
invariants and on the deterministic edge numbering fixed here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .quadrature import MIDPOINT_RULE, physical_points

__all__ = [
    "MeshError",
    "TriangleMesh",
    "MeshStats",
    "BasisTopology",
    "load_mesh",
    "orient_consistently",
    "compute_stats",
    "build_basis_topology",
    "triangle_areas",
    "gram_rwg",
    "gram_patch",
    "gram_pyramid",
]


class MeshError(Exception):
    """Raised for unusable mesh input: parse errors, open or non-manifold
    surfaces, inconsistent orientation that cannot be repaired."""


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    corners = vertices[triangles]
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def _edge_use_counts(triangles: np.ndarray):
    """Map undirected edge -> list of (triangle, directed-as-stored) uses."""
    uses: dict[tuple[int, int], list[tuple[int, bool]]] = {}
    for t, (a, b, c) in enumerate(triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            uses.setdefault(key, []).append((t, u < v))
    return uses


@dataclass(frozen=True)
class TriangleMesh:
    """Immutable closed oriented triangle mesh.

    vertices : (num_vertices, 3) float array, meters
    triangles : (num_triangles, 3) int array; winding order defines the
        surface orientation and must be globally consistent
    provenance : free-form origin tag (file path or generator id)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must be an (m, 3) array")
        if not np.isfinite(v).all():
            raise MeshError("vertex coordinates must be finite")
        if t.min(initial=0) < 0 or t.max(initial=-1) >= len(v):
            raise MeshError("triangle indices out of range")
        if any(len(set(row)) != 3 for row in t):
            raise MeshError("triangle with repeated vertex")
        if triangle_areas(v, t).min(initial=np.inf) <= 0.0:
            raise MeshError("degenerate (zero-area) triangle")
        self._check_closed_oriented(t)
        self._check_connected(t)
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @staticmethod
    def _check_closed_oriented(triangles: np.ndarray):
        for key, uses in _edge_use_counts(triangles).items():
            if len(uses) != 2:
                raise MeshError(
                    f"edge {key} used by {len(uses)} triangles; "
                    "mesh must be a closed 2-manifold"
                )
            if uses[0][1] == uses[1][1]:
                raise MeshError(
                    f"edge {key} traversed twice in the same direction; "
                    "orientation is inconsistent"
                )

    @staticmethod
    def _check_connected(triangles: np.ndarray):
        n = len(triangles)
        if n == 0:
            raise MeshError("mesh has no triangles")
        neighbors = _triangle_adjacency(triangles)
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            t = stack.pop()
            for u in neighbors[t]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        if not seen.all():
            raise MeshError("mesh has more than one connected component")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)


def _triangle_adjacency(triangles: np.ndarray):
    neighbors: list[list[int]] = [[] for _ in range(len(triangles))]
    for uses in _edge_use_counts(triangles).values():
        for i, (t, _) in enumerate(uses):
            for u, _ in uses[i + 1 :]:
                neighbors[t].append(u)
                neighbors[u].append(t)
    return neighbors


def orient_consistently(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Flip triangle windings until orientation is globally consistent.

    Breadth-first from triangle 0; raises MeshError when no consistent
    orientation exists (Moebius-like input) or the surface is not a closed
    manifold.  The result is additionally flipped as a whole, if needed, so
    the enclosed signed volume is positive (outward normals).
    """
    triangles = np.array(triangles, dtype=np.int64, copy=True)
    uses = _edge_use_counts(triangles)
    for key, lst in uses.items():
        if len(lst) != 2:
            raise MeshError(f"edge {key} used by {len(lst)} triangles")

    pair: dict[int, list[tuple[int, bool, tuple[int, int]]]] = {}
    for key, lst in uses.items():
        for i, (t, fwd) in enumerate(lst):
            other, other_fwd = lst[1 - i]
            pair.setdefault(t, []).append((other, other_fwd == fwd, key))

    n = len(triangles)
    state = np.full(n, -1, dtype=np.int8)  # 0 keep, 1 flip
    from collections import deque

    queue = deque([0])
    state[0] = 0
    while queue:
        t = queue.popleft()
        for other, same_dir, key in pair[t]:
            # same traversal direction means exactly one of the two must flip
            want = state[t] ^ (0 if not same_dir else 1)
            if state[other] == -1:
                state[other] = want
                queue.append(other)
            elif state[other] != want:
                raise MeshError("mesh admits no consistent orientation")
    if (state == -1).any():
        raise MeshError("mesh has more than one connected component")

    flip = state == 1
    triangles[flip] = triangles[flip][:, ::-1]

    corners = np.asarray(vertices, dtype=float)[triangles]
    signed_volume = np.einsum(
        "ij,ij->", corners[:, 0], np.cross(corners[:, 1], corners[:, 2])
    ) / 6.0
    if signed_volume < 0.0:
        triangles = triangles[:, ::-1]
    return triangles


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _parse_obj(text: str):
    vertices = []
    faces = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshError(f"obj line {ln}: vertex needs 3 coordinates")
            try:
                vertices.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise MeshError(f"obj line {ln}: bad vertex coordinate") from exc
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshError(f"obj line {ln}: only triangular faces supported")
            idx = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise MeshError(f"obj line {ln}: bad face index") from exc
                if i == 0:
                    raise MeshError(f"obj line {ln}: zero face index")
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            faces.append(idx)
        # other obj records (vn, vt, usemtl, ...) are ignored
    if not vertices or not faces:
        raise MeshError("obj file holds no triangle mesh")
    return np.array(vertices, dtype=float), np.array(faces, dtype=np.int64)


def _parse_msh2(text: str):
    lines = text.splitlines()
    i = 0
    version_seen = False
    nodes: dict[int, list[float]] = {}
    tris = []

    def expect_int(s, what):
        try:
            return int(s)
        except ValueError as exc:
            raise MeshError(f"msh: bad {what}: {s!r}") from exc

    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if line == "$MeshFormat":
            fields = lines[i].split()
            if not fields or not fields[0].startswith("2"):
                raise MeshError(
                    f"msh: unsupported format version {fields[0] if fields else '?'}; "
                    "only version 2 ASCII is handled"
                )
            if len(fields) > 1 and fields[1] != "0":
                raise MeshError("msh: binary files are not handled")
            version_seen = True
            while i < len(lines) and lines[i].strip() != "$EndMeshFormat":
                i += 1
            i += 1
        elif line == "$Nodes":
            count = expect_int(lines[i].strip(), "node count")
            i += 1
            for _ in range(count):
                parts = lines[i].split()
                if len(parts) < 4:
                    raise MeshError("msh: short node line")
                nodes[expect_int(parts[0], "node id")] = [float(x) for x in parts[1:4]]
                i += 1
            if lines[i].strip() != "$EndNodes":
                raise MeshError("msh: missing $EndNodes")
            i += 1
        elif line == "$Elements":
            count = expect_int(lines[i].strip(), "element count")
            i += 1
            for _ in range(count):
                parts = [expect_int(p, "element field") for p in lines[i].split()]
                if len(parts) < 3:
                    raise MeshError("msh: short element line")
                etype, ntags = parts[1], parts[2]
                if etype == 2:  # 3-node triangle
                    conn = parts[3 + ntags : 6 + ntags]
                    if len(conn) != 3:
                        raise MeshError("msh: triangle with wrong connectivity")
                    tris.append(conn)
                i += 1
            if lines[i].strip() != "$EndElements":
                raise MeshError("msh: missing $EndElements")
            i += 1

    if not version_seen:
        raise MeshError("msh: no $MeshFormat section")
    if not nodes or not tris:
        raise MeshError("msh file holds no triangle mesh")
    ids = sorted(nodes)
    remap = {nid: k for k, nid in enumerate(ids)}
    vertices = np.array([nodes[nid] for nid in ids], dtype=float)
    try:
        triangles = np.array([[remap[n] for n in t] for t in tris], dtype=np.int64)
    except KeyError as exc:
        raise MeshError(f"msh: element references unknown node {exc}") from exc
    return vertices, triangles


def load_mesh(path: str, fmt: str | None = None) -> TriangleMesh:
    """Load a closed triangle mesh from Wavefront OBJ or Gmsh MSH v2 ASCII.

    The format is inferred from the extension unless given.  Orientation is
    repaired to a consistent outward winding; unreferenced vertices are
    dropped.  Raises MeshError for anything unusable.
    """
    path = str(path)
    if fmt == "gmsh-msh2":
        fmt = "msh"
    if fmt is None:
        lower = path.lower()
        if lower.endswith(".obj"):
            fmt = "obj"
        elif lower.endswith(".msh"):
            fmt = "msh"
        else:
            raise MeshError(f"cannot infer mesh format from {path!r}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path!r}: {exc}") from exc

    try:
        if fmt == "obj":
            vertices, triangles = _parse_obj(text)
        elif fmt == "msh":
            vertices, triangles = _parse_msh2(text)
        else:
            raise MeshError(f"unknown mesh format {fmt!r}")
    except IndexError as exc:
        raise MeshError(f"truncated {fmt} file {path!r}") from exc

    used = np.zeros(len(vertices), dtype=bool)
    used[triangles.reshape(-1)] = True
    if not used.all():
        remap = np.cumsum(used) - 1
        vertices = vertices[used]
        triangles = remap[triangles]

    triangles = orient_consistently(vertices, triangles)
    return TriangleMesh(vertices, triangles, provenance=path)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeshStats:
    num_edges: int
    num_triangles: int
    num_vertices: int
    genus: int
    h_avg: float
    diameter: float


def compute_stats(mesh: TriangleMesh) -> MeshStats:
    """Counts, genus from the Euler relation, mean edge length, diameter."""
    uses = _edge_use_counts(mesh.triangles)
    num_edges = len(uses)
    chi = mesh.num_vertices - num_edges + mesh.num_triangles
    if chi % 2 != 0 or chi > 2:
        raise MeshError(f"Euler characteristic {chi} is not that of a closed surface")
    genus = (2 - chi) // 2

    keys = np.array(sorted(uses), dtype=np.int64)
    lengths = np.linalg.norm(mesh.vertices[keys[:, 0]] - mesh.vertices[keys[:, 1]], axis=1)

    pts = mesh.vertices
    if len(pts) > 16:
        from scipy.spatial import ConvexHull

        pts = pts[np.unique(ConvexHull(pts).vertices)]
    diff = pts[:, None, :] - pts[None, :, :]
    diameter = float(np.sqrt((diff**2).sum(-1).max()))

    return MeshStats(
        num_edges=num_edges,
        num_triangles=mesh.num_triangles,
        num_vertices=mesh.num_vertices,
        genus=int(genus),
        h_avg=float(lengths.mean()),
        diameter=diameter,
    )


# ---------------------------------------------------------------------------
# basis topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BasisTopology:
    """Per-edge bookkeeping for the div-conforming (RWG-style) basis.

    Edges are numbered deterministically by sorted vertex pair.  For edge m,
    cell c_plus[m] traverses the directed edge tail[m] -> head[m] in its
    positive winding and c_minus[m] traverses it the other way; v_plus /
    v_minus are the opposite (free) vertices in those cells, and area_plus /
    area_minus the cell areas.  The basis function on edge m is
    (r - v_plus) / (2 area_plus) on c_plus and -(r - v_minus) / (2 area_minus)
    on c_minus.
    """

    tail: np.ndarray
    head: np.ndarray
    c_plus: np.ndarray
    c_minus: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray
    area_plus: np.ndarray
    area_minus: np.ndarray
    tri_areas: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.tail)

    def cells(self) -> np.ndarray:
        """(num_edges, 2) array of (c_plus, c_minus)."""
        return np.stack([self.c_plus, self.c_minus], axis=1)

    def apexes(self) -> np.ndarray:
        """(num_edges, 2) array of (v_plus, v_minus)."""
        return np.stack([self.v_plus, self.v_minus], axis=1)


def build_basis_topology(mesh: TriangleMesh) -> BasisTopology:
    areas = triangle_areas(mesh.vertices, mesh.triangles)
    directed: dict[tuple[int, int], dict[bool, int]] = {}
    for t, (a, b, c) in enumerate(mesh.triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            directed.setdefault(key, {})[u < v] = t

    keys = sorted(directed)
    tail = np.empty(len(keys), dtype=np.int64)
    head = np.empty(len(keys), dtype=np.int64)
    c_plus = np.empty(len(keys), dtype=np.int64)
    c_minus = np.empty(len(keys), dtype=np.int64)
    v_plus = np.empty(len(keys), dtype=np.int64)
    v_minus = np.empty(len(keys), dtype=np.int64)

    tris = mesh.triangles
    for m, key in enumerate(keys):
        lo, hi = key
        t_fwd = directed[key][True]  # traverses lo -> hi
        t_bwd = directed[key][False]
        tail[m], head[m] = lo, hi
        c_plus[m], c_minus[m] = t_fwd, t_bwd
        v_plus[m] = tris[t_fwd][~np.isin(tris[t_fwd], key)][0]
        v_minus[m] = tris[t_bwd][~np.isin(tris[t_bwd], key)][0]

    return BasisTopology(
        tail=tail,
        head=head,
        c_plus=c_plus,
        c_minus=c_minus,
        v_plus=v_plus,
        v_minus=v_minus,
        area_plus=areas[c_plus],
        area_minus=areas[c_minus],
        tri_areas=areas,
    )


# ---------------------------------------------------------------------------
# Gram matrices
# ---------------------------------------------------------------------------


def gram_rwg(mesh: TriangleMesh, topo: BasisTopology) -> sp.csr_array:
    """Gram matrix of the edge basis; exact (degree-2 rule on a quadratic
    integrand).  Sparse with the edge-adjacency pattern, SPD."""
    n = topo.num_edges
    cell_slots: dict[int, list[tuple[int, float, np.ndarray]]] = {}
    verts = mesh.vertices
    for m in range(n):
        cell_slots.setdefault(int(topo.c_plus[m]), []).append(
            (m, 1.0, verts[topo.v_plus[m]])
        )
        cell_slots.setdefault(int(topo.c_minus[m]), []).append(
            (m, -1.0, verts[topo.v_minus[m]])
        )

    bary, w = MIDPOINT_RULE
    rows, cols, vals = [], [], []
    for c, slots in cell_slots.items():
        area = topo.tri_areas[c]
        pts = physical_points(verts[mesh.triangles[c]], MIDPOINT_RULE)
        for i, (m, sm, am) in enumerate(slots):
            dm = pts - am
            for nn, sn, an in slots[i:]:
                dn = pts - an
                val = sm * sn / (4.0 * area) * np.dot(w, np.einsum("qd,qd->q", dm, dn))
                rows.append(m)
                cols.append(nn)
                vals.append(val)
                if nn != m:
                    rows.append(nn)
                    cols.append(m)
                    vals.append(val)
    g = sp.csr_array((vals, (rows, cols)), shape=(n, n))
    g.sum_duplicates()
    return g


def gram_patch(mesh: TriangleMesh) -> sp.dia_array:
    """Gram of the per-cell pulse basis p_m = 1/A_m: diagonal 1/A_m."""
    areas = triangle_areas(mesh.vertices, mesh.triangles)
    return sp.dia_array((1.0 / areas[None, :], [0]), shape=(len(areas), len(areas)))


def gram_pyramid(mesh: TriangleMesh) -> sp.csr_array:
    """Gram of the vertex hat basis (linear nodal mass matrix)."""
    nv = mesh.num_vertices
    areas = triangle_areas(mesh.vertices, mesh.triangles)
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    rows, cols, vals = [], [], []
    for t, tri in enumerate(mesh.triangles):
        block = areas[t] * local
        for i in range(3):
            for j in range(3):
                rows.append(tri[i])
                cols.append(tri[j])
                vals.append(block[i, j])
    g = sp.csr_array((vals, (rows, cols)), shape=(nv, nv))
    g.sum_duplicates()
    return g
