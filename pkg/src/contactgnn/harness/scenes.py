"""Deterministic kinematic scene and dataset generators.

Four generators: ``collinear-edges`` (a small flat mesh sliding inside a
V-shaped trough; parallel edges stay coplanar without touching),
``parabola-sheets`` (two curved sheets approaching head-on, fast enough to
tunnel), ``undulating-membranes`` (two wavy sheets pushed together with
contact-limited motion, as a multi-simulation dataset) and ``random-micro``
(two-triangle scenes for oracle comparisons).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..ccd import Trajectory
from ..mesh_graph import DatasetMeta, NodeState, TriMesh, quad_to_tri, structured_grid
from ..surrogate.objective import integrate_step
from .dataset import StepRecord, records_to_dataset, save_records, split_simulations
from .jsonio import read_json, write_json

GENERATORS = ("collinear-edges", "parabola-sheets", "undulating-membranes", "random-micro")
K_CHOICES = (np.pi / 2, np.pi, 2 * np.pi, 4 * np.pi)


class SceneError(ValueError):
    pass


@dataclass
class SceneSpec:
    """Generator id plus geometry; unused fields are ignored by a given generator.

    Membrane surfaces are ``z = A sin(k1 x) sin(k2 y) +- c3`` so ``c3`` is half
    the gap; ``k*`` set to ``None`` are drawn from ``K_CHOICES`` per simulation.
    """

    generator: str
    A: float = 0.05
    k1u: Optional[float] = None
    k2u: Optional[float] = None
    k1l: Optional[float] = None
    k2l: Optional[float] = None
    c3: float = 0.1
    speed: float = 1.0
    dt: float = 0.1
    resolution: int = 7
    seed: int = 0
    n_sims: int = 20
    n_steps: int = 10
    push: tuple = (0.1, 0.25)
    curvature: float = 0.25
    n_scenes: int = 500
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise SceneError(f"unknown generator {self.generator!r}; expected one of {GENERATORS}")
        if not self.dt > 0:
            raise SceneError("dt must be positive")
        if self.resolution < 2:
            raise SceneError("resolution must be at least 2")
        if self.c3 <= 0:
            raise SceneError("c3 (half gap) must be positive")
        if self.generator == "undulating-membranes" and not 0 <= self.A < self.c3:
            raise SceneError(f"amplitude A={self.A} must be smaller than half the gap ({self.c3})")
        self.push = tuple(self.push)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SceneError(f"unknown scene spec fields: {sorted(unknown)}")
        if "generator" not in d:
            raise SceneError("scene spec needs 'generator'")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scene:
    """Bodies moving linearly over one step; node and triangle indices are per body."""

    bodies: list  # dicts with r0, v, triangles
    dt: float

    def combined(self):
        """``(Trajectory, triangles, body labels)`` over the concatenated nodes."""
        r0, v, tris, body = [], [], [], []
        off = 0
        for b, blk in enumerate(self.bodies):
            r0.append(np.asarray(blk["r0"], dtype=np.float64).reshape(-1, 3))
            v.append(np.asarray(blk["v"], dtype=np.float64).reshape(-1, 3))
            tris.append(np.asarray(blk["triangles"], dtype=np.int64).reshape(-1, 3) + off)
            body.append(np.full(len(r0[-1]), b))
            off += len(r0[-1])
        return (Trajectory(np.concatenate(r0), np.concatenate(v), self.dt), np.concatenate(tris),
                np.concatenate(body))

    def triangle_offsets(self) -> np.ndarray:
        return np.cumsum([0] + [len(b["triangles"]) for b in self.bodies])

    def to_json(self) -> dict:
        return {"dt": self.dt, "bodies": [
            {"name": b.get("name", f"body{i}"), "r0": b["r0"], "v": b["v"], "dt": self.dt, "triangles": b["triangles"]}
            for i, b in enumerate(self.bodies)
        ]}

    @classmethod
    def from_json(cls, d: dict, where: str = "scene") -> "Scene":
        if "bodies" not in d or not d["bodies"]:
            raise SceneError(f"{where}: field 'bodies' missing or empty")
        dts = {float(b["dt"]) for b in d["bodies"] if "dt" in b}
        if "dt" in d:
            dts.add(float(d["dt"]))
        if len(dts) != 1:
            raise SceneError(f"{where}: field 'dt' missing or inconsistent between bodies")
        bodies = []
        for i, b in enumerate(d["bodies"]):
            for key in ("r0", "v", "triangles"):
                if key not in b:
                    raise SceneError(f"{where}: field 'bodies[{i}].{key}' missing")
            bodies.append({"name": b.get("name", f"body{i}"),
                           "r0": np.asarray(b["r0"], dtype=np.float64).reshape(-1, 3),
                           "v": np.asarray(b["v"], dtype=np.float64).reshape(-1, 3),
                           "triangles": np.asarray(b["triangles"], dtype=np.int64).reshape(-1, 3)})
        return cls(bodies, dts.pop())

    def save(self, path) -> Path:
        return write_json(path, self.to_json())

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_json(read_json(path), str(path))


def _grid_mesh(nx, ny, x_range, y_range, z_fn, split_flat=False):
    """Grid sheet with heights ``z_fn(x, y)``; ``split_flat`` picks diagonals before lifting."""
    pts, quads = structured_grid(nx, ny, x_range, y_range)
    if split_flat:
        flat = quad_to_tri(quads, pts)
        pts[:, 2] = z_fn(pts[:, 0], pts[:, 1])
        return TriMesh(pts, flat.triangles)
    pts[:, 2] = z_fn(pts[:, 0], pts[:, 1])
    return quad_to_tri(quads, pts)


# ----------------------------------------------------------------- collinear edges

def collinear_edges(spec: SceneSpec) -> Scene:
    """Small flat mesh sliding along x inside a V-shaped trough without touching it.

    The trough's x-aligned edges and the small mesh's x-aligned edges are
    parallel, so every such pair is coplanar for the whole step and their
    projections onto the common direction overlap.
    """
    slope, height = 2.0, 0.3
    n = max(spec.resolution, 3)
    big = _grid_mesh(n, 5, (0.0, 2.0), (0.0, 1.0), lambda x, y: slope * np.abs(y - 0.5))
    small = _grid_mesh(3, 3, (0.0, 0.5), (0.4, 0.6), lambda x, y: np.full_like(x, height))
    v_small = np.zeros_like(small.positions_ref)
    v_small[:, 0] = spec.speed
    return Scene([
        {"name": "trough", "r0": big.positions_ref, "v": np.zeros_like(big.positions_ref), "triangles": big.triangles},
        {"name": "slider", "r0": small.positions_ref, "v": v_small, "triangles": small.triangles},
    ], spec.dt)


# ----------------------------------------------------------------- parabola sheets

def parabola_sheets(spec: SceneSpec) -> Scene:
    """Upper sheet ``z = c3 + c (x^2 + y^2)`` moving down, lower mirror image moving up.

    Each sheet travels ``speed * dt``. The lower grid is shifted by a fraction
    of a cell so no vertices line up.
    """
    n = spec.resolution
    c = spec.curvature
    h = 2.0 / (n - 1)
    upper = _grid_mesh(n, n, (-1.0, 1.0), (-1.0, 1.0), lambda x, y: spec.c3 + c * (x * x + y * y))
    lo_x = (-1.0 + 0.31 * h, 1.0 + 0.31 * h)
    lo_y = (-1.0 + 0.17 * h, 1.0 + 0.17 * h)
    lower = _grid_mesh(n, n, lo_x, lo_y, lambda x, y: -spec.c3 - c * (x * x + y * y))
    vu = np.zeros_like(upper.positions_ref)
    vu[:, 2] = -spec.speed
    vl = np.zeros_like(lower.positions_ref)
    vl[:, 2] = spec.speed
    return Scene([
        {"name": "upper", "r0": upper.positions_ref, "v": vu, "triangles": upper.triangles},
        {"name": "lower", "r0": lower.positions_ref, "v": vl, "triangles": lower.triangles},
    ], spec.dt)


# ----------------------------------------------------------------- random micro scenes

def random_micro(spec: SceneSpec) -> list:
    """Two-triangle scenes; triangle B starts offset from A and heads back towards it.

    Scenes that intersect at the start are redrawn, so detected contacts are
    crossing events inside the step.
    """
    from ..ccd.oracle import triangle_pair_depth

    rng = np.random.default_rng(spec.seed)
    scenes = []
    while len(scenes) < spec.n_scenes:
        A = rng.normal(size=(3, 3)) * 0.5
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        dist = rng.uniform(0.3, 1.5)
        B = rng.normal(size=(3, 3)) * 0.5 + A.mean(axis=0) + dist * u
        if triangle_pair_depth(A[None], B[None])[0] > 0:
            continue
        vA = rng.normal(size=3) * 0.3 + 0.2 * rng.normal(size=(3, 3))
        vB = vA - u * dist * rng.uniform(0.3, 2.0) / spec.dt + 0.3 * rng.normal(size=(3, 3)) / spec.dt
        scenes.append(Scene([
            {"name": "a", "r0": A, "v": vA, "triangles": np.array([[0, 1, 2]])},
            {"name": "b", "r0": B, "v": vB, "triangles": np.array([[0, 1, 2]])},
        ], spec.dt))
    return scenes


# ----------------------------------------------------------------- undulating membranes

def smooth_max0(a, beta):
    """Smooth ``max(a, 0)``; always positive."""
    return 0.5 * (a + np.sqrt(a * a + beta * beta))


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


@dataclass
class MembraneSim:
    A: float
    k: tuple  # (k1u, k2u, k1l, k2l)
    push: float


def membrane_mesh(spec: SceneSpec, sim: MembraneSim) -> TriMesh:
    n = spec.resolution
    A, (k1u, k2u, k1l, k2l) = sim.A, sim.k
    up = _grid_mesh(n, n, (0.0, 1.0), (0.0, 1.0), lambda x, y: A * np.sin(k1u * x) * np.sin(k2u * y) + spec.c3,
                    split_flat=True)
    lo = _grid_mesh(n, n, (0.04, 0.96), (0.03, 0.97), lambda x, y: A * np.sin(k1l * x) * np.sin(k2l * y) - spec.c3,
                    split_flat=True)
    pos = np.concatenate([up.positions_ref, lo.positions_ref])
    tris = np.concatenate([up.triangles, lo.triangles + up.n_nodes])
    body = np.repeat([0, 1], [up.n_nodes, lo.n_nodes])
    return TriMesh(pos, tris, body=body)


def membrane_positions(ref: np.ndarray, body: np.ndarray, push: float, t: float, T: float, gap_eps: float,
                       beta: float) -> np.ndarray:
    """Sheets pressed together by a bump-shaped push; contact clamps each sheet to its side of z = 0."""
    x, y, z = ref[:, 0], ref[:, 1], ref[:, 2]
    bump = np.sin(np.pi * np.clip(x, 0, 1)) * np.sin(np.pi * np.clip(y, 0, 1))
    d = push * _smoothstep(t / T) * bump
    out = ref.copy()
    up = body == 0
    z_free = np.where(up, z - d, z + d)
    out[:, 2] = np.where(
        up,
        gap_eps + smooth_max0(z_free - gap_eps, beta),
        -gap_eps - smooth_max0(-z_free - gap_eps, beta),
    )
    return out


def membrane_sims(spec: SceneSpec) -> list:
    rng = np.random.default_rng(spec.seed)
    sims = []
    for _ in range(spec.n_sims):
        k = tuple(float(getattr(spec, name)) if getattr(spec, name) is not None else float(rng.choice(K_CHOICES))
                  for name in ("k1u", "k2u", "k1l", "k2l"))
        A = spec.A * rng.uniform(0.5, 1.0)
        sims.append(MembraneSim(A=A, k=k, push=float(rng.uniform(*spec.push))))
    return sims


def membrane_records(spec: SceneSpec, sim: MembraneSim, mesh: TriMesh) -> list:
    """Step records whose positions follow the integrator exactly.

    The target at step N is the acceleration that carries ``(r_N, v_N)`` onto
    the prescribed position at ``t_{N+1}``; the stored ``r_{N+1}`` is then the
    integrator's output, not the analytic value, so replaying the targets
    reproduces the stored states bit for bit.
    """
    T = spec.n_steps * spec.dt
    eps = spec.extra.get("gap_eps", 1e-5)
    beta = spec.extra.get("beta", 0.005)
    g = np.array([sim.push, sim.A])
    state = NodeState(membrane_positions(mesh.positions_ref, mesh.body, sim.push, 0.0, T, eps, beta),
                      np.zeros((mesh.n_nodes, 3)), np.zeros((mesh.n_nodes, 3)))
    recs = []
    for N in range(spec.n_steps):
        t = N * spec.dt
        goal = membrane_positions(mesh.positions_ref, mesh.body, sim.push, t + spec.dt, T, eps, beta)
        y = 2.0 * (goal - state.r - state.v * spec.dt) / (spec.dt * spec.dt)
        recs.append(StepRecord(t, spec.dt, g.copy(), state.r, state.v, state.a, y))
        state = integrate_step(state, y, spec.dt)
    return recs


def undulating_membranes(spec: SceneSpec, R: float = 0.2, l_c: float = 0.1):
    """Multi-simulation dataset; every simulation shares connectivity but not geometry.

    Node count and triangles are identical across simulations because the
    reference geometry only enters through the positions of each step.
    """
    sims = membrane_sims(spec)
    records = {}
    mesh0 = None
    for i, sim in enumerate(sims):
        mesh = membrane_mesh(spec, sim)
        if mesh0 is None:
            mesh0 = mesh
        records[f"sim{i:03d}"] = membrane_records(spec, sim, mesh)
    meta = DatasetMeta(R=R, l_c=l_c, n_g=2, dt=spec.dt, units={"length": "model", "time": "model"})
    split = split_simulations(list(records), spec.seed)
    return meta, mesh0, records, split


def membrane_scene(spec: SceneSpec) -> Scene:
    """One step of the first simulation with the push left unclamped, so the sheets interpenetrate."""
    sim = membrane_sims(spec)[0]
    mesh = membrane_mesh(spec, sim)
    T = spec.n_steps * spec.dt
    t0 = max(T - spec.dt, 0.0)
    strong = spec.extra.get("scene_push", 2.0 * spec.c3 + 2.0 * spec.A + 0.05)
    r0 = membrane_positions(mesh.positions_ref, mesh.body, strong, t0, T, -10.0, 1e-12)
    r1 = membrane_positions(mesh.positions_ref, mesh.body, strong, T, T, -10.0, 1e-12)
    v = (r1 - r0) / spec.dt
    n_up = int((mesh.body == 0).sum())
    t_up = mesh.triangles[:len(mesh.triangles) // 2]
    t_lo = mesh.triangles[len(mesh.triangles) // 2:] - n_up
    return Scene([
        {"name": "upper", "r0": r0[:n_up], "v": v[:n_up], "triangles": t_up},
        {"name": "lower", "r0": r0[n_up:], "v": v[n_up:], "triangles": t_lo},
    ], spec.dt)


def generate_scene(spec: SceneSpec, out_dir=None) -> dict:
    """Build the scene (and dataset, for sheet generators); write files when ``out_dir`` is given."""
    result: dict = {"spec": spec.to_dict()}
    if spec.generator == "collinear-edges":
        result["scene"] = collinear_edges(spec)
    elif spec.generator == "parabola-sheets":
        result["scene"] = parabola_sheets(spec)
        result["dataset"] = parabola_dataset(spec)
    elif spec.generator == "undulating-membranes":
        result["scene"] = membrane_scene(spec)
        result["dataset"] = undulating_membranes(spec)
    else:
        result["scenes"] = random_micro(spec)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "spec.json", spec.to_dict())
        if "scene" in result:
            result["scene"].save(out / "scene.json")
        if "scenes" in result:
            for i, sc in enumerate(result["scenes"]):
                sc.save(out / "scenes" / f"{i:04d}.json")
        if "dataset" in result:
            meta, mesh, records, split = result["dataset"]
            save_records(out / "dataset", meta, mesh, records, split, extra=spec.to_dict())
    return result


def parabola_dataset(spec: SceneSpec):
    """Constant-velocity approach of the two parabolic sheets over ``n_steps`` steps, one simulation per speed."""
    base = parabola_sheets(spec)
    traj, tris, body = base.combined()
    mesh = TriMesh(traj.r0, tris, body=body)
    rng = np.random.default_rng(spec.seed)
    records = {}
    for i in range(spec.n_sims):
        scale = rng.uniform(0.5, 1.5)
        v = traj.v * scale / spec.n_steps
        state = NodeState(traj.r0, v, np.zeros_like(v))
        recs = []
        for N in range(spec.n_steps):
            y = np.zeros_like(v)
            recs.append(StepRecord(N * spec.dt, spec.dt, np.array([spec.speed * scale]), state.r, state.v, state.a, y))
            state = integrate_step(state, y, spec.dt)
        records[f"sim{i:03d}"] = recs
    h = 2.0 / (spec.resolution - 1)
    meta = DatasetMeta(R=1.5 * h, l_c=h, n_g=1, dt=spec.dt)
    return meta, mesh, records, split_simulations(list(records), spec.seed)


def load_generated_dataset(spec: SceneSpec):
    meta, mesh, records, split = undulating_membranes(spec) if spec.generator == "undulating-membranes" \
        else parabola_dataset(spec)
    return records_to_dataset(meta, mesh, records, split)
