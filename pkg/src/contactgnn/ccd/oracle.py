"""Dense-time static intersection oracle used to validate :func:`detect_contacts`.

The oracle knows nothing about coplanarity cubics: it samples the linear
trajectories at uniform times and runs a static triangle-triangle test at each
sample. It misses contacts that only exist between samples, so it is a test
aid, not a detector.
"""
from __future__ import annotations

import numpy as np

from .broadphase import shares_node
from .detect import Trajectory

_EDGES = ((0, 1), (1, 2), (2, 0))


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _segment_triangle_depth(p0, p1, a, b, c):
    """How robustly segment ``p0p1`` pierces triangle ``abc``; <= 0 means no piercing.

    The depth is the smallest of the two endpoint plane distances and the
    distance of the piercing point from the triangle boundary.
    """
    n = np.cross(b - a, c - a)
    nn = np.sqrt(_dot(n, n))
    with np.errstate(divide="ignore", invalid="ignore"):
        nh = n / nn[..., None]
    d0 = _dot(p0 - a, nh)
    d1 = _dot(p1 - a, nh)
    crosses = (d0 * d1 <= 0.0) & (d0 != d1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = d0 / (d0 - d1)
        x = p0 + s[..., None] * (p1 - p0)
    # distance of x to each edge line, signed positive inside
    dist_edge = []
    for i, j in _EDGES:
        e = [a, b, c][j] - [a, b, c][i]
        inward = np.cross(nh, e)
        with np.errstate(divide="ignore", invalid="ignore"):
            inward = inward / np.sqrt(_dot(inward, inward))[..., None]
        dist_edge.append(_dot(x - [a, b, c][i], inward))
    inside = np.minimum(np.minimum(dist_edge[0], dist_edge[1]), dist_edge[2])
    depth = np.minimum(np.minimum(np.abs(d0), np.abs(d1)), inside)
    depth = np.where(crosses & np.isfinite(depth), depth, -np.inf)
    return depth


def triangle_pair_depth(A, B):
    """Largest piercing depth between triangles ``A`` and ``B`` (arrays (..., 3, 3)); > 0 means intersecting."""
    best = np.full(A.shape[:-2], -np.inf)
    for X, Y in ((A, B), (B, A)):
        for i, j in _EDGES:
            d = _segment_triangle_depth(X[..., i, :], X[..., j, :], Y[..., 0, :], Y[..., 1, :], Y[..., 2, :])
            best = np.maximum(best, d)
    return best


def _point_segment_dist(p, a, b):
    ab = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip(_dot(p - a, ab) / _dot(ab, ab), 0.0, 1.0)
    t = np.where(np.isfinite(t), t, 0.0)
    d = p - (a + t[..., None] * ab)
    return np.sqrt(_dot(d, d))


def _point_triangle_dist(p, a, b, c):
    n = np.cross(b - a, c - a)
    nn = _dot(n, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = _dot(p - a, n) / nn
    proj = p - h[..., None] * n
    inside = np.ones(p.shape[:-1], dtype=bool)
    for u, v in ((a, b), (b, c), (c, a)):
        inside &= _dot(np.cross(v - u, proj - u), n) >= 0.0
    plane = np.abs(h) * np.sqrt(nn)
    edge = np.minimum(np.minimum(_point_segment_dist(p, a, b), _point_segment_dist(p, b, c)),
                      _point_segment_dist(p, c, a))
    return np.where(inside & (nn > 0), np.minimum(plane, edge), edge)


def _segment_segment_dist(p0, p1, q0, q1):
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    c = _dot(d1, r)
    b = _dot(d1, d2)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-300, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = (b * s + f) / e
    t = np.where(np.isfinite(t), t, 0.0)
    t_cl = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.clip((b * t_cl - c) / a, 0.0, 1.0)
    s = np.where(t != t_cl, np.where(np.isfinite(s2), s2, 0.0), s)
    t = t_cl
    d = (p0 + s[..., None] * d1) - (q0 + t[..., None] * d2)
    return np.sqrt(_dot(d, d))


def triangle_pair_distance(A, B):
    """Separation distance between non-intersecting triangles (edge/vertex features only)."""
    best = np.full(A.shape[:-2], np.inf)
    for X, Y in ((A, B), (B, A)):
        for k in range(3):
            best = np.minimum(best, _point_triangle_dist(X[..., k, :], Y[..., 0, :], Y[..., 1, :], Y[..., 2, :]))
    for i, j in _EDGES:
        for k, l in _EDGES:
            best = np.minimum(best, _segment_segment_dist(A[..., i, :], A[..., j, :], B[..., k, :], B[..., l, :]))
    return best


def static_pairs(positions, triangles, pairs) -> np.ndarray:
    """Boolean per pair: static intersection at the given positions."""
    positions = np.asarray(positions, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    A = positions[triangles[pairs[:, 0]]]
    B = positions[triangles[pairs[:, 1]]]
    return triangle_pair_depth(A, B) > 0.0


def all_pairs(triangles, body=None) -> np.ndarray:
    triangles = np.asarray(triangles, dtype=np.int64)
    i, j = np.triu_indices(len(triangles), k=1)
    keep = ~shares_node(triangles[i], triangles[j])
    if body is not None:
        body = np.asarray(body)
        keep &= body[triangles[i, 0]] != body[triangles[j, 0]]
    return np.stack([i[keep], j[keep]], axis=1)


def static_contacts(positions, triangles, body=None) -> np.ndarray:
    """Triangles statically intersecting another (non-neighbouring) triangle; an end-time-only checker."""
    triangles = np.asarray(triangles, dtype=np.int64)
    pairs = all_pairs(triangles, body)
    flags = np.zeros(len(triangles), dtype=bool)
    if len(pairs):
        hit = static_pairs(positions, triangles, pairs)
        flags[pairs[hit, 0]] = True
        flags[pairs[hit, 1]] = True
    return flags


def oracle_margins(traj: Trajectory, triangles, pairs, n_samples: int, chunk: int = 2048,
                   separation: bool = True) -> np.ndarray:
    """Signed margin per pair over the sampled times.

    Positive: the largest piercing depth seen at any sample. Negative: minus
    the smallest sampled separation distance (only computed when
    ``separation`` is set; otherwise non-piercing pairs get ``-inf``).
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    triangles = np.asarray(triangles, dtype=np.int64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    times = np.linspace(0.0, traj.dt, n_samples)
    ta, tb = triangles[pairs[:, 0]], triangles[pairs[:, 1]]

    def sampled(fn, reduce, init, sel):
        out = np.full(int(sel.sum()), init)
        for start in range(0, n_samples, chunk):
            s = times[start:start + chunk][:, None, None, None]
            A = traj.r0[ta[sel]][None] + s * traj.v[ta[sel]][None]
            B = traj.r0[tb[sel]][None] + s * traj.v[tb[sel]][None]
            out = reduce(out, fn(A, B).max(axis=0) if reduce is np.maximum else fn(A, B).min(axis=0))
        return out

    everything = np.ones(len(pairs), dtype=bool)
    depth = sampled(triangle_pair_depth, np.maximum, -np.inf, everything)
    margin = np.where(depth > 0.0, depth, -np.inf)
    if separation:
        todo = depth <= 0.0
        if todo.any():
            margin[todo] = -sampled(triangle_pair_distance, np.minimum, np.inf, todo)
    return margin


def oracle_detect(traj: Trajectory, triangles, n_samples: int, body=None) -> np.ndarray:
    """Per-triangle flags: intersecting some partner at any of ``n_samples`` uniform times."""
    triangles = np.asarray(triangles, dtype=np.int64)
    pairs = all_pairs(triangles, body)
    flags = np.zeros(len(triangles), dtype=bool)
    if len(pairs) == 0:
        return flags
    chunk = max(1, 2_000_000 // max(1, len(pairs)))
    m = oracle_margins(traj, triangles, pairs, n_samples, chunk=chunk, separation=False)
    hit = m > 0.0
    flags[pairs[hit, 0]] = True
    flags[pairs[hit, 1]] = True
    return flags
