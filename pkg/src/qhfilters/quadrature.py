"""Triangle quadrature rules and analytic static integrals.

Rules are stored as barycentric coordinates with weights summing to one, so
that for a triangle of area A the integral of f is approximated by
A * sum_i w_i f(x_i).  The analytic routines evaluate the static potential
moments of a flat triangle (integrals of 1/R and r'/R) in closed form; they
are the pieces singularity extraction needs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "CENTROID_RULE",
    "MIDPOINT_RULE",
    "SEVEN_POINT_RULE",
    "collapsed_rule",
    "physical_points",
    "static_triangle_moments",
    "oscillatory_part",
]

_SQRT15 = np.sqrt(15.0)

# Degree-1 rule: the centroid.
CENTROID_RULE = (
    np.array([[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]),
    np.array([1.0]),
)

# Degree-2 rule: edge midpoints, weights 1/3.
MIDPOINT_RULE = (
    np.array(
        [
            [0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
        ]
    ),
    np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
)


def _symmetric_orbit(a: float, b: float) -> np.ndarray:
    # the three cyclic placements of (a, b, b)
    return np.array([[a, b, b], [b, a, b], [b, b, a]])


# Degree-5 symmetric 7-point Gauss rule (centroid + two 3-point orbits).
_A1 = (9.0 - 2.0 * _SQRT15) / 21.0
_B1 = (6.0 + _SQRT15) / 21.0
_A2 = (9.0 + 2.0 * _SQRT15) / 21.0
_B2 = (6.0 - _SQRT15) / 21.0
SEVEN_POINT_RULE = (
    np.vstack(
        [
            np.array([[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]),
            _symmetric_orbit(_A1, _B1),
            _symmetric_orbit(_A2, _B2),
        ]
    ),
    np.concatenate(
        [
            np.array([9.0 / 40.0]),
            np.full(3, (155.0 + _SQRT15) / 1200.0),
            np.full(3, (155.0 - _SQRT15) / 1200.0),
        ]
    ),
)


def collapsed_rule(n: int):
    """Product Gauss-Legendre rule collapsed onto the triangle.

    Exact for total degree <= 2n - 2.  Used where a table rule of the needed
    order is not hardcoded (near-singular outer integrals, oracle refinement).
    """
    if n < 1:
        raise ValueError("rule size must be positive")
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(wu, wu) * (1.0 - uu)
    lam2 = uu
    lam3 = vv * (1.0 - uu)
    lam1 = 1.0 - lam2 - lam3
    bary = np.stack([lam1, lam2, lam3], axis=-1).reshape(-1, 3)
    # reference-area factor 1/2 removed so weights sum to one
    return bary, 2.0 * ww.reshape(-1)


def physical_points(vertices: np.ndarray, rule) -> np.ndarray:
    """Map a rule's barycentric points onto triangles.

    vertices: (..., 3, 3) triangle corner array; returns (..., npts, 3).
    """
    bary, _ = rule
    return np.einsum("qi,...id->...qd", bary, vertices)


def static_triangle_moments(tri: np.ndarray, obs: np.ndarray):
    """Closed-form static moments of one flat triangle.

    Returns (I0, Iv) with I0[j] = integral over the triangle of 1/R dS' and
    Iv[j] = integral of r'/R dS', for observation points obs (m, 3).  Standard
    edge-sum formulas; finite for observation points on the triangle itself.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    p = np.asarray(tri, dtype=float)
    e1 = p[1] - p[0]
    e2 = p[2] - p[0]
    nvec = np.cross(e1, e2)
    two_area = np.linalg.norm(nvec)
    if two_area <= 0.0:
        raise ValueError("degenerate triangle")
    nhat = nvec / two_area
    scale = max(np.linalg.norm(e1), np.linalg.norm(e2))

    d = (obs - p[0]) @ nhat
    rho = obs - d[:, None] * nhat

    i0 = np.zeros(len(obs))
    iv = np.zeros((len(obs), 3))
    for a, b in ((p[0], p[1]), (p[1], p[2]), (p[2], p[0])):
        edge = b - a
        length = np.linalg.norm(edge)
        shat = edge / length
        mhat = np.cross(shat, nhat)  # outward in-plane edge normal
        l_lo = (a - rho) @ shat
        l_hi = l_lo + length
        t0 = (a - rho) @ mhat
        r_lo = np.linalg.norm(obs - a, axis=1)
        r_hi = np.linalg.norm(obs - b, axis=1)
        r0sq = t0 * t0 + d * d

        on_line = r0sq < (1e-12 * scale) ** 2
        # two algebraically equal log forms; pick the better-conditioned one
        with np.errstate(divide="ignore", invalid="ignore"):
            f_fwd = np.log(r_hi + l_hi) - np.log(r_lo + l_lo)
            f_bwd = np.log(r_lo - l_lo) - np.log(r_hi - l_hi)
            f = np.where(l_lo + l_hi > 0.0, f_fwd, f_bwd)
        f = np.where(on_line, 0.0, f)
        f = np.nan_to_num(f, nan=0.0, posinf=0.0, neginf=0.0)

        den_hi = r0sq + np.abs(d) * r_hi
        den_lo = r0sq + np.abs(d) * r_lo
        with np.errstate(divide="ignore", invalid="ignore"):
            beta = np.arctan(np.where(den_hi > 0.0, t0 * l_hi / den_hi, 0.0)) - np.arctan(
                np.where(den_lo > 0.0, t0 * l_lo / den_lo, 0.0)
            )
        i0 += t0 * f - np.abs(d) * beta
        iv += mhat * (0.5 * (r0sq * f + l_hi * r_hi - l_lo * r_lo))[:, None]

    iv += rho * i0[:, None]
    return i0, iv


def oscillatory_part(r: np.ndarray, k: float) -> np.ndarray:
    """(exp(ikR) - 1) / R, continuous at R = 0 (limit ik).

    The smooth remainder of the Helmholtz kernel after extracting 1/R;
    evaluated by series for small kR to avoid cancellation.
    """
    r = np.asarray(r, dtype=float)
    x = k * r
    small = np.abs(x) < 1e-3
    xs = np.where(small, 0.0, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = (np.exp(1j * xs) - 1.0) / np.where(small, 1.0, r)
    # i*k*(1 + ix/2 + (ix)^2/6 + (ix)^3/24 + (ix)^4/120)
    ix = 1j * x
    series = 1j * k * (1.0 + ix / 2.0 + ix**2 / 6.0 + ix**3 / 24.0 + ix**4 / 120.0)
    return np.where(small, series, exact)
