"""Swept axis-aligned bounding boxes and sort-and-sweep pair culling."""
from __future__ import annotations

import numpy as np


def swept_boxes(r0: np.ndarray, r1: np.ndarray, triangles: np.ndarray, pad: float):
    """Per-triangle (lo, hi) boxes enclosing every vertex at both ends of the step."""
    pts = np.concatenate([r0[triangles], r1[triangles]], axis=1)  # (n, 6, 3)
    return pts.min(axis=1) - pad, pts.max(axis=1) + pad


def shares_node(tri_a: np.ndarray, tri_b: np.ndarray) -> np.ndarray:
    return (tri_a[:, :, None] == tri_b[:, None, :]).any(axis=(1, 2))


def overlapping_pairs(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """All index pairs ``(i, j)``, ``i < j``, whose boxes overlap on every axis."""
    n = len(lo)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    order = np.argsort(lo[:, 0], kind="stable")
    lo_s, hi_s = lo[order], hi[order]
    stop = np.searchsorted(lo_s[:, 0], hi_s[:, 0], side="right")
    start = np.arange(n) + 1
    counts = np.maximum(stop - start, 0)
    total = int(counts.sum())
    if total == 0:
        return np.zeros((0, 2), dtype=np.int64)
    first = np.repeat(np.arange(n), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    second = np.repeat(start, counts) + offsets
    keep = np.all((lo_s[second, 1:] <= hi_s[first, 1:]) & (lo_s[first, 1:] <= hi_s[second, 1:]), axis=1)
    a = order[first[keep]]
    b = order[second[keep]]
    pairs = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def swept_aabb_broadphase(r0, v, dt, triangles, body=None, pad: float = 0.0) -> np.ndarray:
    """Candidate triangle pairs whose swept boxes overlap.

    Pairs sharing a node are dropped. When ``body`` labels are given only
    triangles of different bodies are paired.
    """
    r0 = np.asarray(r0, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    r1 = r0 + dt * np.asarray(v, dtype=np.float64)
    lo, hi = swept_boxes(r0, r1, triangles, pad)
    pairs = overlapping_pairs(lo, hi)
    if len(pairs) == 0:
        return pairs
    ta, tb = triangles[pairs[:, 0]], triangles[pairs[:, 1]]
    keep = ~shares_node(ta, tb)
    if body is not None:
        body = np.asarray(body)
        keep &= body[ta[:, 0]] != body[tb[:, 0]]
    return pairs[keep]
