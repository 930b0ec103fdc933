"""Triangle meshes and their graph representation.

A simulation time step becomes one graph: nodes carry ``[r, v, a]``, mesh-space
edges mirror element connectivity and world-space edges join nodes that are
closer than the collision radius ``R``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

AREA_REL_TOL = 1e-14
DIAGONAL_TIE_RTOL = 1e-12


class MeshError(ValueError):
    """Raised for invalid connectivity or degenerate geometry."""


def bbox_diagonal(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return 0.0
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


def triangle_areas(positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = positions[triangles]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


@dataclass
class TriMesh:
    """Reference triangle mesh.

    ``body`` optionally labels each node with the body it belongs to; contact
    detection then only pairs triangles of different bodies.
    """

    positions_ref: np.ndarray
    triangles: np.ndarray
    body: Optional[np.ndarray] = None
    mesh_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.positions_ref = np.ascontiguousarray(self.positions_ref, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.body is not None:
            self.body = np.asarray(self.body, dtype=np.int64).reshape(-1)
            if len(self.body) != self.n_nodes:
                raise MeshError(f"body labels: expected {self.n_nodes}, got {len(self.body)}")
        self._validate()
        self.mesh_edges = build_mesh_edges(self)

    @property
    def n_nodes(self) -> int:
        return len(self.positions_ref)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def _validate(self):
        tri = self.triangles
        if tri.size and (tri.min() < 0 or tri.max() >= self.n_nodes):
            raise MeshError("triangle index out of range")
        repeated = (tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])
        if repeated.any():
            raise MeshError(f"triangle {int(np.flatnonzero(repeated)[0])} repeats a node index")
        if not np.all(np.isfinite(self.positions_ref)):
            raise MeshError("non-finite reference positions")
        area_tol = AREA_REL_TOL * bbox_diagonal(self.positions_ref) ** 2
        areas = triangle_areas(self.positions_ref, tri)
        bad = areas < area_tol
        if bad.any():
            raise MeshError(f"triangle {int(np.flatnonzero(bad)[0])} is degenerate (area {areas[bad][0]:.3e})")


def quad_to_tri(quads, positions, body=None) -> TriMesh:
    """Split each quad ``(a, b, c, d)`` along its shorter reference diagonal.

    Diagonal ``a-c`` gives ``(a, b, c), (a, c, d)``; diagonal ``b-d`` gives
    ``(b, c, d), (b, d, a)``. Equal diagonals pick the one holding the lowest
    node index.
    """
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    scale = bbox_diagonal(positions)
    tris = []
    for qi, q in enumerate(quads):
        if len(set(q.tolist())) != 4:
            raise MeshError(f"quad {qi} repeats a node index")
        if q.min() < 0 or q.max() >= len(positions):
            raise MeshError(f"quad {qi} index out of range")
        p = positions[q]
        for skip in range(4):
            a, b, c = (p[k] for k in range(4) if k != skip)
            if np.linalg.norm(np.cross(b - a, c - a)) <= 2 * AREA_REL_TOL * scale**2:
                raise MeshError(f"quad {qi} is degenerate (collinear corners)")
        d_ac = np.linalg.norm(p[2] - p[0])
        d_bd = np.linalg.norm(p[3] - p[1])
        a, b, c, d = (int(k) for k in q)
        if abs(d_ac - d_bd) <= DIAGONAL_TIE_RTOL * max(d_ac, d_bd):
            use_ac = min(a, c) < min(b, d)
        else:
            use_ac = d_ac < d_bd
        if use_ac:
            tris += [(a, b, c), (a, c, d)]
        else:
            tris += [(b, c, d), (b, d, a)]
    return TriMesh(positions, np.array(tris, dtype=np.int64).reshape(-1, 3), body=body)


def build_mesh_edges(mesh: TriMesh) -> np.ndarray:
    """Directed closure of the unique element edges, sorted lexicographically."""
    tri = mesh.triangles
    if len(tri) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e = np.concatenate([e, e[:, ::-1]])
    return np.unique(e, axis=0)


def unique_undirected(pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs).reshape(-1, 2)
    return pairs[pairs[:, 0] < pairs[:, 1]]


def pairwise_distance_rows(positions: np.ndarray, rows: slice) -> np.ndarray:
    # explicit difference and norm, no |a|^2 + |b|^2 - 2ab expansion
    d = positions[rows, None, :] - positions[None, :, :]
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def build_world_edges(positions, R: float, exclude=None, chunk: int = 512) -> np.ndarray:
    """All ordered pairs ``(k, l)``, ``k != l``, with ``|r_k - r_l| <= R``.

    ``exclude`` is an optional array of directed pairs to drop (typically the
    mesh edges).
    """
    if not R > 0:
        raise ValueError("collision radius must be positive")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    found = []
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        dist = pairwise_distance_rows(positions, slice(start, stop))
        k, l = np.nonzero(dist <= R)
        k = k + start
        keep = k != l
        found.append(np.stack([k[keep], l[keep]], axis=1))
    pairs = np.concatenate(found) if found else np.zeros((0, 2), dtype=np.int64)
    pairs = pairs.astype(np.int64)
    if exclude is not None and len(exclude) and len(pairs):
        exclude = np.asarray(exclude, dtype=np.int64).reshape(-1, 2)
        key = pairs[:, 0] * n + pairs[:, 1]
        pairs = pairs[~np.isin(key, exclude[:, 0] * n + exclude[:, 1])]
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def edge_features(positions, pairs) -> np.ndarray:
    """Per pair ``(i, j)``: ``[r_i - r_j, |r_i - r_j|]``."""
    positions = np.asarray(positions, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    d = positions[pairs[:, 0]] - positions[pairs[:, 1]]
    norm = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    return np.concatenate([d, norm[:, None]], axis=1)


@dataclass
class NodeState:
    r: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64).reshape(-1, 3)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(-1, 3)
        self.a = np.asarray(self.a, dtype=np.float64).reshape(-1, 3)
        if not (self.r.shape == self.v.shape == self.a.shape):
            raise ValueError("r, v, a must have the same shape")
        for name in ("r", "v", "a"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                node = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
                raise ValueError(f"non-finite {name} at node {node}")

    def __len__(self):
        return len(self.r)

    def features(self) -> np.ndarray:
        return np.concatenate([self.r, self.v, self.a], axis=1)


@dataclass
class GraphSample:
    g: np.ndarray
    nodes: NodeState
    mesh_edges: np.ndarray
    mesh_edge_feats: np.ndarray
    world_edges: np.ndarray
    world_edge_feats: np.ndarray
    targets: Optional[np.ndarray] = None
    sim: str = ""
    step: int = 0

    @property
    def t(self) -> float:
        return float(self.g[0])

    @property
    def dt(self) -> float:
        return float(self.g[1])

    @property
    def globals(self) -> np.ndarray:
        return self.g[2:]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass
class DatasetMeta:
    R: float
    l_c: float
    n_g: int
    dt: float
    split: dict = field(default_factory=lambda: {"train": [], "val": [], "test": []})
    units: dict = field(default_factory=lambda: {"length": "model", "time": "model"})

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("R must be positive")
        if not self.l_c > 0:
            raise ValueError("l_c must be positive")


def split_counts(n: int) -> tuple[int, int, int]:
    """8:1:1 counts; the remainder goes to the training split."""
    n_val = n // 10
    n_test = n // 10
    return n - n_val - n_test, n_val, n_test


def assemble_graph_sample(mesh: TriMesh, nodes: NodeState, globals_, t: float, dt: float, R: float,
                          targets=None, exclude_mesh_pairs: bool = True, sim: str = "",
                          step: int = 0) -> GraphSample:
    if len(nodes) != mesh.n_nodes:
        raise ValueError(f"node count {len(nodes)} does not match mesh ({mesh.n_nodes})")
    globals_ = np.asarray(globals_ if globals_ is not None else [], dtype=np.float64).reshape(-1)
    g = np.concatenate([[float(t), float(dt)], globals_])
    world = build_world_edges(nodes.r, R, exclude=mesh.mesh_edges if exclude_mesh_pairs else None)
    if targets is not None:
        targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
        if len(targets) != len(nodes):
            raise ValueError("targets length does not match node count")
    return GraphSample(
        g=g,
        nodes=nodes,
        mesh_edges=mesh.mesh_edges,
        mesh_edge_feats=edge_features(nodes.r, mesh.mesh_edges),
        world_edges=world,
        world_edge_feats=edge_features(nodes.r, world),
        targets=targets,
        sim=sim,
        step=step,
    )


def structured_grid(nx: int, ny: int, x_range: Sequence[float], y_range: Sequence[float]):
    """Node coordinates and quad connectivity of an ``nx`` by ``ny`` node grid in the xy plane."""
    xs = np.linspace(x_range[0], x_range[1], nx)
    ys = np.linspace(y_range[0], y_range[1], ny)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    pts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    idx = np.arange(nx * ny).reshape(ny, nx)
    quads = np.stack([idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, 1:].ravel(), idx[1:, :-1].ravel()], axis=1)
    return pts, quads
