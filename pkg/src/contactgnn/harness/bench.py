"""Wall-clock timing of the contact pipeline and of surrogate inference."""
from __future__ import annotations

import csv
import io
import os
import platform
import statistics
import time
from typing import Optional

import numpy as np
import torch

from ..ccd import detect_contacts
from ..mesh_graph import NodeState, TriMesh, assemble_graph_sample
from ..surrogate.batch import GraphBatch
from ..surrogate.model import GnnConfig, init_params
from ..surrogate.objective import integrate_step
from .scenes import Scene

PHASES = ("broad", "narrow", "response", "forward", "simulation")
TABLE_FIELDS = ("problem", "network", "n_nodes", "n_triangles", "n_steps", "time_s", "time_min_s", "time_max_s")


def machine_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpu_count": os.cpu_count(),
        "torch_threads": torch.get_num_threads(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "torch": torch.__version__,
    }


def _spread(samples) -> dict:
    return {"median": statistics.median(samples), "min": min(samples), "max": max(samples), "samples": list(samples)}


def bench(scene: Scene, reps: int = 3, model=None, n_steps: int = 10, R: Optional[float] = None,
          problem: str = "scene", network: str = "tiny") -> dict:
    """Medians (with min and max) over ``reps`` repetitions of every phase.

    ``simulation`` is a self-fed rollout of ``n_steps`` steps from the scene's
    start state: graph assembly, forward pass and integration per step.
    """
    if reps < 3:
        raise ValueError("reps must be at least 3")
    traj, tris, body = scene.combined()
    mesh = TriMesh(traj.r0, tris, body=body)
    if R is None:
        edges = traj.r0[mesh.mesh_edges]
        R = float(np.linalg.norm(edges[:, 0] - edges[:, 1], axis=1).mean()) if len(edges) else 1.0
    if model is None:
        model = init_params(GnnConfig(graph_dim=2), 0)
    n_g = model.cfg.graph_dim - 2
    globals_ = np.zeros(n_g)
    nodes = NodeState(traj.r0, traj.v, np.zeros_like(traj.r0))
    times = {k: [] for k in PHASES}
    n_events = None
    for _ in range(reps):
        timings: dict = {}
        field = detect_contacts(traj, tris, body, timings=timings)
        n_events = field.n_events
        for k in ("broad", "narrow", "response"):
            times[k].append(timings.get(k, 0.0))
        sample = assemble_graph_sample(mesh, nodes, globals_, 0.0, scene.dt, R)
        batch = GraphBatch.collate([sample])
        t0 = time.perf_counter()
        with torch.no_grad():
            model(batch)
        times["forward"].append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        state = nodes
        with torch.no_grad():
            for k in range(n_steps):
                s = assemble_graph_sample(mesh, state, globals_, k * scene.dt, scene.dt, R)
                y = model(GraphBatch.collate([s])).numpy()
                state = integrate_step(state, y, scene.dt)
        times["simulation"].append(time.perf_counter() - t0)
    phases = {k: _spread(v) for k, v in times.items()}
    table = [{
        "problem": problem, "network": network, "n_nodes": mesh.n_nodes, "n_triangles": mesh.n_triangles,
        "n_steps": n_steps, "time_s": phases["simulation"]["median"],
        "time_min_s": phases["simulation"]["min"], "time_max_s": phases["simulation"]["max"],
    }]
    return {"machine": machine_descriptor(), "reps": reps, "n_candidates": int(field.candidates),
            "n_events": int(n_events), "phases_s": phases, "inference_table": table}


def table_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in report["inference_table"]:
        w.writerow(row)
    return buf.getvalue()


def workload_warnings(small: dict, large: dict) -> list:
    """Advisory check that a larger scene does not time faster in the broad phase."""
    out = []
    if large["phases_s"]["broad"]["median"] < small["phases_s"]["broad"]["median"]:
        out.append("broad phase on the larger scene timed faster than on the smaller one")
    return out
