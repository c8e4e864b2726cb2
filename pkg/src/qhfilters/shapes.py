"""Built-in closed test surfaces and mesh writers.

Generators cover the geometry families used throughout the test suite and
default configs: the regular tetrahedron and icosahedron, subdivided
icospheres, a structured torus grid (genus 1), a smoothly deformed sphere
scaled to a 7.17 m diameter, and an almond-like body with a 1.09 m bounding
box diagonal.  `builtin_mesh` resolves the textual specs accepted by the CLI
(e.g. "icosphere:2", "torus:16x8").
"""

from __future__ import annotations

import math

import numpy as np

from .mesh import MeshError, TriangleMesh, orient_consistently

__all__ = [
    "tetrahedron",
    "icosahedron",
    "icosphere",
    "torus",
    "deformed_sphere",
    "almond",
    "refine",
    "builtin_mesh",
    "write_obj",
    "write_msh2",
]


def _mesh(vertices, triangles, provenance: str) -> TriangleMesh:
    vertices = np.asarray(vertices, dtype=float)
    triangles = orient_consistently(vertices, np.asarray(triangles, dtype=np.int64))
    return TriangleMesh(vertices, triangles, provenance=provenance)


def tetrahedron(radius: float = 1.0) -> TriangleMesh:
    """Regular tetrahedron with circumradius `radius`."""
    v = np.array(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    ) * (radius / math.sqrt(3.0))
    t = [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]
    return _mesh(v, t, "builtin:tetrahedron")


_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def _icosahedron_raw():
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1.0, phi, 0.0], [1.0, phi, 0.0], [-1.0, -phi, 0.0], [1.0, -phi, 0.0],
            [0.0, -1.0, phi], [0.0, 1.0, phi], [0.0, -1.0, -phi], [0.0, 1.0, -phi],
            [phi, 0.0, -1.0], [phi, 0.0, 1.0], [-phi, 0.0, -1.0], [-phi, 0.0, 1.0],
        ]
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v, np.array(_ICO_FACES, dtype=np.int64)


def icosahedron(radius: float = 1.0) -> TriangleMesh:
    v, t = _icosahedron_raw()
    return _mesh(radius * v, t, "builtin:icosahedron")


def _subdivide(vertices: np.ndarray, triangles: np.ndarray):
    """One 1-to-4 split; new vertices at edge midpoints (not projected)."""
    midpoint: dict[tuple[int, int], int] = {}
    verts = list(vertices)

    def mid(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key not in midpoint:
            midpoint[key] = len(verts)
            verts.append(0.5 * (vertices[a] + vertices[b]))
        return midpoint[key]

    out = []
    for a, b, c in triangles:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
    return np.array(verts), np.array(out, dtype=np.int64)


def _unit_sphere_grid(subdivisions: int):
    """Subdivided icosahedron vertices projected to the unit sphere."""
    if subdivisions < 0:
        raise MeshError("subdivision count must be >= 0")
    v, t = _icosahedron_raw()
    for _ in range(subdivisions):
        v, t = _subdivide(v, t)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v, t


def icosphere(subdivisions: int = 1, radius: float = 1.0) -> TriangleMesh:
    """Icosahedron subdivided `subdivisions` times, vertices on the sphere."""
    v, t = _unit_sphere_grid(subdivisions)
    return _mesh(radius * v, t, f"builtin:icosphere:{subdivisions}")


def torus(
    n_major: int = 8,
    n_minor: int = 8,
    major_radius: float = 1.0,
    minor_radius: float = 0.1,
) -> TriangleMesh:
    """Structured genus-1 grid: n_major x n_minor quads, each split in two.

    Defaults give the 0.9 m / 1.1 m radii pair used by the sample configs.
    """
    if n_major < 3 or n_minor < 3:
        raise MeshError("torus grid needs at least 3 segments per direction")
    if not 0.0 < minor_radius < major_radius:
        raise MeshError("torus needs 0 < minor_radius < major_radius")
    idx = lambda i, j: (i % n_major) * n_minor + (j % n_minor)  # noqa: E731
    verts = np.empty((n_major * n_minor, 3))
    for i in range(n_major):
        u = 2.0 * math.pi * i / n_major
        for j in range(n_minor):
            w = 2.0 * math.pi * j / n_minor
            ring = major_radius + minor_radius * math.cos(w)
            verts[idx(i, j)] = (
                ring * math.cos(u),
                ring * math.sin(u),
                minor_radius * math.sin(w),
            )
    tris = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b = idx(i, j), idx(i + 1, j)
            c, d = idx(i + 1, j + 1), idx(i, j + 1)
            tris.extend([[a, b, c], [a, c, d]])
    return _mesh(verts, tris, f"builtin:torus:{n_major}x{n_minor}")


def _max_pairwise_distance(points: np.ndarray) -> float:
    if len(points) > 16:
        from scipy.spatial import ConvexHull

        points = points[np.unique(ConvexHull(points).vertices)]
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff**2).sum(-1).max()))


def deformed_sphere(subdivisions: int = 2, diameter: float = 7.17) -> TriangleMesh:
    """Sphere with a smooth low-order radial deformation, rescaled so the
    largest vertex-to-vertex distance equals `diameter` exactly.

    Every subdivision level samples the same smooth surface, so increasing
    `subdivisions` refines a fixed geometry.
    """
    d, t = _unit_sphere_grid(subdivisions)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    rho = 1.0 + 0.12 * x * y + 0.08 * y * z + 0.10 * (3.0 * z**2 - 1.0) / 2.0
    v = d * rho[:, None]
    v *= diameter / _max_pairwise_distance(v)
    return _mesh(v, t, f"builtin:deformed-sphere:{subdivisions}")


def almond(subdivisions: int = 2, diagonal: float = 1.09) -> TriangleMesh:
    """Almond-like closed body: tapered ellipsoid with one pointed end,
    rescaled so the axis-aligned bounding box diagonal equals `diagonal`."""
    d, t = _unit_sphere_grid(subdivisions)
    x = d[:, 0]
    taper = (1.0 - x) ** 0.3
    v = np.column_stack(
        [0.50 * x, 0.20 * d[:, 1] * taper, 0.08 * d[:, 2] * taper]
    )
    extents = v.max(axis=0) - v.min(axis=0)
    v *= diagonal / float(np.linalg.norm(extents))
    return _mesh(v, t, f"builtin:almond:{subdivisions}")


def refine(mesh: TriangleMesh) -> TriangleMesh:
    """Uniform 1-to-4 refinement of an arbitrary mesh (no reprojection)."""
    v, t = _subdivide(mesh.vertices, mesh.triangles)
    return TriangleMesh(v, t, provenance=f"{mesh.provenance}+refined")


# ---------------------------------------------------------------------------
# CLI mesh specs
# ---------------------------------------------------------------------------


def builtin_mesh(spec: str) -> TriangleMesh:
    """Resolve a textual mesh spec.

    Grammar (all arguments optional):
        tetrahedron[:radius]
        icosahedron[:radius]
        icosphere[:subdivisions[:radius]]
        torus[:MAJORxMINOR]
        deformed-sphere[:subdivisions]
        almond[:subdivisions]
    """
    name, _, rest = spec.partition(":")
    args = rest.split(":") if rest else []
    try:
        if name == "tetrahedron":
            return tetrahedron(*(float(a) for a in args[:1]))
        if name == "icosahedron":
            return icosahedron(*(float(a) for a in args[:1]))
        if name == "icosphere":
            sub = int(args[0]) if args else 1
            radius = float(args[1]) if len(args) > 1 else 1.0
            return icosphere(sub, radius)
        if name == "torus":
            if args:
                major, _, minor = args[0].partition("x")
                return torus(int(major), int(minor))
            return torus()
        if name == "deformed-sphere":
            return deformed_sphere(int(args[0]) if args else 2)
        if name == "almond":
            return almond(int(args[0]) if args else 2)
    except (ValueError, TypeError) as exc:
        raise MeshError(f"bad mesh spec {spec!r}: {exc}") from exc
    raise MeshError(
        f"unknown builtin mesh {name!r}; expected tetrahedron, icosahedron, "
        "icosphere, torus, deformed-sphere, or almond"
    )


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def write_obj(mesh: TriangleMesh, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def write_msh2(mesh: TriangleMesh, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        fh.write(f"$Nodes\n{mesh.num_vertices}\n")
        for i, (x, y, z) in enumerate(mesh.vertices, start=1):
            fh.write(f"{i} {x:.17g} {y:.17g} {z:.17g}\n")
        fh.write("$EndNodes\n")
        fh.write(f"$Elements\n{mesh.num_triangles}\n")
        for i, (a, b, c) in enumerate(mesh.triangles, start=1):
            fh.write(f"{i} 2 2 0 1 {a + 1} {b + 1} {c + 1}\n")
        fh.write("$EndElements\n")
