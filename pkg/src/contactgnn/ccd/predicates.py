"""Coplanarity cubics, containment/intersection tests and contact responses.

Everything here is vectorised over a leading batch axis; points are (n, 3).
"""
from __future__ import annotations

import numpy as np

CONTAINMENT_TOL = 1e-9


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def coplanarity_cubic(p0, p1, p2, p3, w0, w1, w2, w3) -> np.ndarray:
    """Coefficients (c3, c2, c1, c0) of ``det[q1-q0, q2-q0, q3-q0](s)`` with ``q_i = p_i + s w_i``."""
    p0, p1, p2, p3, w0, w1, w2, w3 = (np.asarray(x, dtype=np.float64) for x in (p0, p1, p2, p3, w0, w1, w2, w3))
    a, b, c = p1 - p0, p2 - p0, p3 - p0
    da, db, dc = w1 - w0, w2 - w0, w3 - w0
    bxc = np.cross(b, c)
    dbxc = np.cross(db, c)
    bxdc = np.cross(b, dc)
    dbxdc = np.cross(db, dc)
    c0 = _dot(a, bxc)
    c1 = _dot(da, bxc) + _dot(a, dbxc) + _dot(a, bxdc)
    c2 = _dot(da, dbxc) + _dot(da, bxdc) + _dot(a, dbxdc)
    c3 = _dot(da, dbxdc)
    return np.stack([c3, c2, c1, c0], axis=-1)


def barycentric(p, a, b, c):
    """Barycentric coordinates of ``p`` w.r.t. triangle ``abc`` and twice the triangle area."""
    v0, v1, v2 = b - a, c - a, p - a
    d00 = _dot(v0, v0)
    d01 = _dot(v0, v1)
    d11 = _dot(v1, v1)
    d20 = _dot(v2, v0)
    d21 = _dot(v2, v1)
    denom = d00 * d11 - d01 * d01
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = (d11 * d20 - d01 * d21) / denom
        l2 = (d00 * d21 - d01 * d20) / denom
    l0 = 1.0 - l1 - l2
    area2 = np.sqrt(np.maximum(denom, 0.0))
    return np.stack([l0, l1, l2], axis=-1), area2


def vf_sufficiency(p, a, b, c, containment_tol: float = CONTAINMENT_TOL, area_tol: float = 0.0):
    """Vertex ``p`` lies inside face ``abc`` (all barycentrics >= -tol).

    Degenerate faces (area below ``area_tol``) never contain the vertex.
    """
    lam, area2 = barycentric(np.asarray(p, float), np.asarray(a, float), np.asarray(b, float), np.asarray(c, float))
    ok = 0.5 * area2 >= area_tol
    ok &= area2 > 0.0
    with np.errstate(invalid="ignore"):
        inside = np.all(lam >= -containment_tol, axis=-1)
    return ok & inside


def segment_parameters(p0, p1, q0, q1):
    """Line-line closest-point parameters ``(u, w)`` and the parallelism measure.

    The returned ``sin2`` is ``|d1 x d2|^2 / (|d1|^2 |d2|^2)``, the squared sine
    of the angle between the segments.
    """
    d1 = p1 - p0
    d2 = q1 - q0
    r = q0 - p0
    n = np.cross(d1, d2)
    nn = _dot(n, n)
    l1 = _dot(d1, d1)
    l2 = _dot(d2, d2)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = _dot(np.cross(r, d2), n) / nn
        w = _dot(np.cross(r, d1), n) / nn
        sin2 = nn / (l1 * l2)
    sin2 = np.where(np.isfinite(sin2), sin2, 0.0)
    return u, w, sin2


PARALLEL_SIN2 = 1e-20


def ee_sufficiency(p0, p1, q0, q1, containment_tol: float = CONTAINMENT_TOL, modified: bool = True):
    """Coplanar segments ``p0p1`` and ``q0q1`` intersect.

    With ``modified=True`` parallel (including collinear) segment pairs never
    count. ``modified=False`` keeps the classic behaviour where coplanar
    parallel segments with overlapping projections are taken as intersecting.
    """
    p0, p1, q0, q1 = (np.asarray(x, dtype=np.float64) for x in (p0, p1, q0, q1))
    u, w, sin2 = segment_parameters(p0, p1, q0, q1)
    parallel = sin2 <= PARALLEL_SIN2
    lo, hi = -containment_tol, 1.0 + containment_tol
    with np.errstate(invalid="ignore"):
        crossing = (~parallel) & (u >= lo) & (u <= hi) & (w >= lo) & (w <= hi)
    if modified:
        return crossing
    return crossing | (parallel & _projections_overlap(p0, p1, q0, q1, containment_tol))


def _projections_overlap(p0, p1, q0, q1, tol):
    d = p1 - p0
    dd = _dot(d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        s0 = _dot(q0 - p0, d) / dd
        s1 = _dot(q1 - p0, d) / dd
    lo = np.minimum(s0, s1)
    hi = np.maximum(s0, s1)
    with np.errstate(invalid="ignore"):
        return (hi >= -tol) & (lo <= 1.0 + tol) & (dd > 0)


def vf_response(p, a, b, c, area_tol: float = 0.0):
    """Orthogonal distance of ``p`` to the plane of ``abc``; also returns a degenerate-face flag."""
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    n = np.cross(b - a, c - a)
    nn = np.sqrt(_dot(n, n))
    degenerate = 0.5 * nn < area_tol
    degenerate |= nn == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.abs(_dot(p - a, n)) / nn
    return np.where(degenerate, 0.0, dist), degenerate


def ee_response(p0, p1, q0, q1):
    """Distance between the segment midpoints."""
    p0, p1, q0, q1 = (np.asarray(x, dtype=np.float64) for x in (p0, p1, q0, q1))
    d = 0.5 * (p0 + p1) - 0.5 * (q0 + q1)
    return np.sqrt(_dot(d, d))
