"""Continuous collision detection over one time step and the contact field."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .broadphase import swept_aabb_broadphase
from .predicates import (
    CONTAINMENT_TOL,
    coplanarity_cubic,
    ee_response,
    ee_sufficiency,
    vf_response,
    vf_sufficiency,
)
from .roots import DEGENERACY_TOL, NEWTON_ITERS, ROOT_TOL, batch_cubic_roots

VF, EE = 0, 1
_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


def _subtest_layout():
    """(15, 2, 4) table: for each sub-test, which (triangle, local vertex) supplies each cubic point.

    Point order is (face0, face1, face2, vertex) for vertex-face and
    (a0, a1, b0, b1) for edge-edge.
    """
    rows = []
    for p in range(6):
        vt, ft = (0, 1) if p < 3 else (1, 0)
        rows.append([[ft, ft, ft, vt], [0, 1, 2, p % 3]])
    for q in range(9):
        ea, eb = _EDGES[q // 3], _EDGES[q % 3]
        rows.append([[0, 0, 1, 1], [ea[0], ea[1], eb[0], eb[1]]])
    return np.array(rows, dtype=np.int64)


SUBTESTS = _subtest_layout()
SUBTEST_KIND = np.array([VF] * 6 + [EE] * 9)
SUBTEST_INDEX = np.array(list(range(6)) + list(range(9)))


@dataclass
class CcdConfig:
    root_tol: float = ROOT_TOL
    containment_tol: float = CONTAINMENT_TOL
    degeneracy_tol: float = DEGENERACY_TOL
    area_rel_tol: float = 1e-14
    aabb_rel_pad: float = 1e-9
    newton_iters: int = NEWTON_ITERS
    chunk_size: int = 2048
    modified_ee: bool = True


@dataclass
class Trajectory:
    """Linear motion ``r0 + s v`` for ``s`` in ``[0, dt]``."""

    r0: np.ndarray
    v: np.ndarray
    dt: float
    r1: Optional[np.ndarray] = None

    def __post_init__(self):
        self.r0 = np.asarray(self.r0, dtype=np.float64).reshape(-1, 3)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(-1, 3)
        if self.r0.shape != self.v.shape:
            raise ValueError("r0 and v must have the same shape")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.r1 is None:
            self.r1 = self.r0 + self.dt * self.v
        else:
            self.r1 = np.asarray(self.r1, dtype=np.float64).reshape(-1, 3)

    @classmethod
    def from_endpoints(cls, r0, r1, dt):
        r0 = np.asarray(r0, dtype=np.float64)
        r1 = np.asarray(r1, dtype=np.float64)
        return cls(r0, (r1 - r0) / dt, dt, r1)

    def reversed(self) -> "Trajectory":
        return Trajectory(self.r1.copy(), -self.v, self.dt, self.r0.copy())

    def at(self, s: float) -> np.ndarray:
        if s == self.dt:
            return self.r1
        return self.r0 + s * self.v

    def check_finite(self):
        for name in ("r0", "v", "r1"):
            bad = ~np.isfinite(getattr(self, name)).all(axis=1)
            if bad.any():
                raise ValueError(f"non-finite {name} at node {int(np.flatnonzero(bad)[0])}")


@dataclass
class CollisionEvent:
    tri_a: int
    tri_b: int
    kind: str  # "VF" or "EE"
    index: int
    t_star: float
    response: float
    degenerate: bool = False


_EVENT_FIELDS = ("tri_a", "tri_b", "kind", "index", "t_star", "t_last", "response", "degenerate")


def _empty_events():
    return {
        "tri_a": np.zeros(0, np.int64), "tri_b": np.zeros(0, np.int64),
        "kind": np.zeros(0, np.int64), "index": np.zeros(0, np.int64),
        "t_star": np.zeros(0), "t_last": np.zeros(0), "response": np.zeros(0),
        "degenerate": np.zeros(0, bool),
    }


@dataclass
class ContactField:
    """Sparse (COO) per-triangle response ``r_i`` plus the events behind it."""

    n_triangles: int
    indices: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    events: dict = field(default_factory=_empty_events)
    candidates: int = 0

    @property
    def n_events(self) -> int:
        return len(self.events["tri_a"])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.n_triangles)
        out[self.indices] = self.values
        return out

    def dense_counts(self) -> np.ndarray:
        out = np.zeros(self.n_triangles, dtype=np.int64)
        out[self.indices] = self.counts
        return out

    def colliding_pairs(self) -> set:
        return set(zip(self.events["tri_a"].tolist(), self.events["tri_b"].tolist()))

    def event_list(self) -> list[CollisionEvent]:
        ev = self.events
        return [
            CollisionEvent(int(ev["tri_a"][k]), int(ev["tri_b"][k]), "VF" if ev["kind"][k] == VF else "EE",
                           int(ev["index"][k]), float(ev["t_star"][k]), float(ev["response"][k]),
                           bool(ev["degenerate"][k]))
            for k in range(self.n_events)
        ]

    def pair_responses(self):
        """(pairs, r_ij): max response over the fired sub-tests of each colliding pair."""
        ev = self.events
        if self.n_events == 0:
            return np.zeros((0, 2), np.int64), np.zeros(0)
        pairs, inv = np.unique(np.stack([ev["tri_a"], ev["tri_b"]], axis=1), axis=0, return_inverse=True)
        r = np.zeros(len(pairs))
        np.maximum.at(r, inv.reshape(-1), ev["response"])
        return pairs, r


def pair_response(responses) -> float:
    """Max over the fired sub-test responses of one triangle pair."""
    responses = np.asarray(responses, dtype=np.float64).reshape(-1)
    if len(responses) == 0:
        raise ValueError("pair_response needs at least one fired sub-test")
    return float(responses.max())


def _narrow_phase(traj: Trajectory, triangles, pairs, cfg: CcdConfig, area_tol: float, timings=None):
    """Run the 15 sub-tests on a chunk of candidate pairs; returns event arrays."""
    dt = traj.dt
    tris = np.stack([triangles[pairs[:, 0]], triangles[pairs[:, 1]]], axis=1)  # (m, 2, 3)
    nodes = tris[:, SUBTESTS[:, 0], SUBTESTS[:, 1]]  # (m, 15, 4)
    nodes = nodes.reshape(-1, 4)
    P = traj.r0[nodes]  # (m*15, 4, 3)
    W = traj.v[nodes]
    coeffs = coplanarity_cubic(P[:, 0], P[:, 1], P[:, 2], P[:, 3], W[:, 0], W[:, 1], W[:, 2], W[:, 3])
    rel0 = P[:, 1:] - P[:, :1]
    rel1 = rel0 + dt * (W[:, 1:] - W[:, :1])
    L = np.sqrt(np.maximum((rel0**2).sum(-1).max(-1), (rel1**2).sum(-1).max(-1)))
    idx, roots, always = batch_cubic_roots(coeffs, dt, cfg.root_tol, cfg.degeneracy_tol, L**3, cfg.newton_iters)

    a_idx = np.flatnonzero(always)
    test_idx = np.concatenate([idx, np.repeat(a_idx, 3)])
    test_t = np.concatenate([roots, np.tile([0.0, 0.5 * dt, dt], len(a_idx))])
    if len(test_idx) == 0:
        return None
    Q = P[test_idx] + test_t[:, None, None] * W[test_idx]
    at_end = test_t == dt
    if at_end.any():
        Q[at_end] = traj.r1[nodes[test_idx[at_end]]]
    kind = SUBTEST_KIND[test_idx % 15]
    passed = np.zeros(len(test_idx), dtype=bool)
    vf = kind == VF
    if vf.any():
        q = Q[vf]
        passed[vf] = vf_sufficiency(q[:, 3], q[:, 0], q[:, 1], q[:, 2], cfg.containment_tol, area_tol)
    ee = ~vf
    if ee.any():
        q = Q[ee]
        passed[ee] = ee_sufficiency(q[:, 0], q[:, 1], q[:, 2], q[:, 3], cfg.containment_tol, cfg.modified_ee)
    if not passed.any():
        return None

    fired_test = test_idx[passed]
    fired_t = test_t[passed]
    cubics, inv = np.unique(fired_test, return_inverse=True)
    t_star = np.full(len(cubics), np.inf)
    t_last = np.full(len(cubics), -np.inf)
    np.minimum.at(t_star, inv, fired_t)
    np.maximum.at(t_last, inv, fired_t)

    t0 = time.perf_counter()
    end = traj.r1[nodes[cubics]]  # (k, 4, 3)
    sub = cubics % 15
    ckind = SUBTEST_KIND[sub]
    response = np.zeros(len(cubics))
    degenerate = np.zeros(len(cubics), dtype=bool)
    cvf = ckind == VF
    if cvf.any():
        e = end[cvf]
        response[cvf], degenerate[cvf] = vf_response(e[:, 3], e[:, 0], e[:, 1], e[:, 2], area_tol)
    if (~cvf).any():
        e = end[~cvf]
        response[~cvf] = ee_response(e[:, 0], e[:, 1], e[:, 2], e[:, 3])
    if timings is not None:
        timings["response"] = timings.get("response", 0.0) + time.perf_counter() - t0

    pair_of = cubics // 15
    return {
        "tri_a": pairs[pair_of, 0], "tri_b": pairs[pair_of, 1],
        "kind": ckind, "index": SUBTEST_INDEX[sub],
        "t_star": t_star, "t_last": t_last, "response": response, "degenerate": degenerate,
    }


def field_from_events(n_triangles: int, events: dict, candidates: int = 0) -> ContactField:
    """Reduce events to per-pair maxima, then per-triangle maxima."""
    if len(events["tri_a"]) == 0:
        return ContactField(n_triangles, np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64),
                            events, candidates)
    pairs, inv = np.unique(np.stack([events["tri_a"], events["tri_b"]], axis=1), axis=0, return_inverse=True)
    r_pair = np.zeros(len(pairs))
    np.maximum.at(r_pair, inv.reshape(-1), events["response"])
    dense = np.full(n_triangles, -1.0)
    counts = np.zeros(n_triangles, dtype=np.int64)
    for col in (0, 1):
        np.maximum.at(dense, pairs[:, col], r_pair)
        np.add.at(counts, pairs[:, col], 1)
    idx = np.flatnonzero(counts > 0)
    return ContactField(n_triangles, idx, dense[idx], counts[idx], events, candidates)


def detect_contacts(traj: Trajectory, triangles, body=None, config: Optional[CcdConfig] = None,
                    candidates: Optional[np.ndarray] = None, timings: Optional[dict] = None) -> ContactField:
    """Broad phase, coplanarity roots, sufficiency tests and responses for one step.

    ``body`` (per-node labels) restricts detection to pairs of different
    bodies; without it the mesh is treated as self-contacting and only
    node-sharing neighbours are excluded.
    """
    cfg = config or CcdConfig()
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    traj.check_finite()
    pts = np.concatenate([traj.r0, traj.r1])
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) if len(pts) else 0.0
    area_tol = cfg.area_rel_tol * diag**2
    t0 = time.perf_counter()
    if candidates is None:
        candidates = swept_aabb_broadphase(traj.r0, traj.v, traj.dt, triangles, body, cfg.aabb_rel_pad * diag)
    t1 = time.perf_counter()
    chunks = []
    local = {}
    for start in range(0, len(candidates), cfg.chunk_size):
        ev = _narrow_phase(traj, triangles, candidates[start:start + cfg.chunk_size], cfg, area_tol, local)
        if ev is not None:
            chunks.append(ev)
    t2 = time.perf_counter()
    if chunks:
        events = {k: np.concatenate([c[k] for c in chunks]) for k in _EVENT_FIELDS}
        order = np.lexsort((events["index"], events["kind"], events["tri_b"], events["tri_a"]))
        events = {k: v[order] for k, v in events.items()}
    else:
        events = _empty_events()
    field_ = field_from_events(len(triangles), events, len(candidates))
    if timings is not None:
        timings["broad"] = timings.get("broad", 0.0) + t1 - t0
        resp = local.get("response", 0.0)
        timings["narrow"] = timings.get("narrow", 0.0) + t2 - t1 - resp
        timings["response"] = timings.get("response", 0.0) + resp
    return field_
