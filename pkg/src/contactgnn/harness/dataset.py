"""Dataset bundles: ``meta.json``, ``mesh.json`` and ``steps/<sim>/<k>.json``.

Splits are drawn per simulation so that rollouts stay within one split; the
graph index lists in :class:`DatasetMeta` follow from them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..mesh_graph import DatasetMeta, NodeState, TriMesh, assemble_graph_sample, quad_to_tri, split_counts
from ..surrogate.objective import integrate_step
from .jsonio import read_json, write_json

SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    """Schema violation; the message names the file and field."""


@dataclass
class StepRecord:
    t: float
    dt: float
    globals: np.ndarray
    r: np.ndarray
    v: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def to_json(self) -> dict:
        return {"t": self.t, "dt": self.dt, "globals": self.globals, "r": self.r, "v": self.v, "a": self.a,
                "y": self.y}


@dataclass
class Dataset:
    meta: DatasetMeta
    mesh: TriMesh
    samples: list
    sims: dict  # sim id -> sample indices in time order
    sim_split: dict = field(default_factory=dict)
    exclude_mesh_pairs: bool = True

    def split_samples(self, name: str) -> list:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return [self.samples[i] for i in self.meta.split[name]]

    def sim_samples(self, sim: str) -> list:
        return [self.samples[i] for i in self.sims[sim]]


def split_simulations(sim_ids: Sequence[str], seed: int = 0) -> dict:
    """8:1:1 split of the simulations, remainder to training, shuffled by ``seed``."""
    ids = list(sim_ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train, n_val, _ = split_counts(len(ids))
    pick = [ids[i] for i in order]
    return {
        "train": sorted(pick[:n_train]),
        "val": sorted(pick[n_train:n_train + n_val]),
        "test": sorted(pick[n_train + n_val:]),
    }


def terminal_record(last: StepRecord) -> StepRecord:
    """Zero-length final step reached by integrating the last record."""
    nxt = integrate_step(NodeState(last.r, last.v, last.a), last.y, last.dt)
    return StepRecord(last.t + last.dt, 0.0, last.globals.copy(), nxt.r, nxt.v, nxt.a, np.zeros_like(last.y))


def _array(rec: dict, key: str, shape, where: str) -> np.ndarray:
    if key not in rec:
        raise DatasetError(f"{where}: missing field '{key}'")
    try:
        arr = np.asarray(rec[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: field '{key}' is not numeric") from exc
    if shape is not None and arr.shape != shape:
        raise DatasetError(f"{where}: field '{key}' has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"{where}: field '{key}' has non-finite values")
    return arr


def _scalar(rec: dict, key: str, where: str) -> float:
    return float(_array(rec, key, (), where))


def _parse_step(rec: dict, n_nodes: int, n_g: int, where: str) -> StepRecord:
    if not isinstance(rec, dict):
        raise DatasetError(f"{where}: expected an object")
    dt = _scalar(rec, "dt", where)
    if dt < 0:
        raise DatasetError(f"{where}: field 'dt' is negative")
    return StepRecord(
        t=_scalar(rec, "t", where), dt=dt,
        globals=_array(rec, "globals", (n_g,), where),
        r=_array(rec, "r", (n_nodes, 3), where), v=_array(rec, "v", (n_nodes, 3), where),
        a=_array(rec, "a", (n_nodes, 3), where), y=_array(rec, "y", (n_nodes, 3), where),
    )


def _mesh_from_json(d: dict, where: str) -> TriMesh:
    pos = _array(d, "positions_ref", None, where).reshape(-1, 3)
    body = d.get("body")
    if "triangles" in d:
        return TriMesh(pos, np.asarray(d["triangles"], dtype=np.int64), body=body)
    if "quads" in d:
        return quad_to_tri(np.asarray(d["quads"], dtype=np.int64), pos, body=body)
    raise DatasetError(f"{where}: needs 'triangles' or 'quads'")


def records_to_dataset(meta: DatasetMeta, mesh: TriMesh, records: dict, sim_split: dict,
                       exclude_mesh_pairs: bool = True) -> Dataset:
    """Build graphs from per-simulation step records, appending the terminal zero step if missing."""
    samples, sims = [], {}
    for sim, recs in records.items():
        recs = list(recs)
        if recs and recs[-1].dt > 0:
            recs.append(terminal_record(recs[-1]))
        idx = []
        for k, rec in enumerate(recs):
            nodes = NodeState(rec.r, rec.v, rec.a)
            s = assemble_graph_sample(mesh, nodes, rec.globals, rec.t, rec.dt, meta.R, targets=rec.y,
                                      exclude_mesh_pairs=exclude_mesh_pairs, sim=sim, step=k)
            idx.append(len(samples))
            samples.append(s)
        sims[sim] = idx
    _check_split(sim_split, list(sims), "meta.json")
    meta.split = {name: [i for sim in sim_split[name] for i in sims[sim]] for name in SPLITS}
    return Dataset(meta, mesh, samples, sims, sim_split, exclude_mesh_pairs)


def _check_split(sim_split: dict, sim_ids: list, where: str):
    seen = []
    for name in SPLITS:
        if name not in sim_split:
            raise DatasetError(f"{where}: field 'split_sims.{name}' missing")
        seen += list(sim_split[name])
    if len(seen) != len(set(seen)):
        raise DatasetError(f"{where}: field 'split_sims' lists a simulation twice")
    if set(seen) != set(sim_ids):
        raise DatasetError(f"{where}: field 'split_sims' does not cover the simulations exactly")


def load_dataset(path) -> Dataset:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise DatasetError(f"{meta_path}: file missing")
    m = read_json(meta_path)
    for key in ("R", "l_c", "n_g", "dt", "sims", "split_sims"):
        if key not in m:
            raise DatasetError(f"{meta_path}: missing field '{key}'")
    try:
        meta = DatasetMeta(R=float(m["R"]), l_c=float(m["l_c"]), n_g=int(m["n_g"]), dt=float(m["dt"]),
                           units=m.get("units", {"length": "model", "time": "model"}))
    except ValueError as exc:
        raise DatasetError(f"{meta_path}: {exc}") from exc
    mesh_path = root / "mesh.json"
    if not mesh_path.exists():
        raise DatasetError(f"{mesh_path}: file missing")
    mesh = _mesh_from_json(read_json(mesh_path), str(mesh_path))
    records = {}
    for i, sim in enumerate(m["sims"]):
        where = f"{meta_path}: field 'sims[{i}]'"
        if "id" not in sim or "n_steps" not in sim:
            raise DatasetError(f"{where} needs 'id' and 'n_steps'")
        sid, n_steps = str(sim["id"]), int(sim["n_steps"])
        recs = []
        for k in range(n_steps):
            p = root / "steps" / sid / f"{k}.json"
            if not p.exists():
                raise DatasetError(f"{p}: missing step file for sim {sid!r} step {k}")
            recs.append(_parse_step(read_json(p), mesh.n_nodes, meta.n_g, str(p)))
        times = [r.t for r in recs]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DatasetError(f"{root / 'steps' / sid}: field 't' is not increasing")
        records[sid] = recs
    return records_to_dataset(meta, mesh, records, m["split_sims"], bool(m.get("exclude_mesh_pairs", True)))


def save_records(path, meta: DatasetMeta, mesh: TriMesh, records: dict, sim_split: dict,
                 exclude_mesh_pairs: bool = True, extra: Optional[dict] = None) -> Path:
    root = Path(path)
    _check_split(sim_split, list(records), "split")
    meta_json = {
        "R": meta.R, "l_c": meta.l_c, "n_g": meta.n_g, "dt": meta.dt, "units": meta.units,
        "sims": [{"id": sid, "n_steps": len(recs)} for sid, recs in records.items()],
        "split_sims": sim_split, "exclude_mesh_pairs": exclude_mesh_pairs,
    }
    if extra:
        meta_json["generator"] = extra
    write_json(root / "meta.json", meta_json)
    mesh_json = {"positions_ref": mesh.positions_ref, "triangles": mesh.triangles}
    if mesh.body is not None:
        mesh_json["body"] = mesh.body
    write_json(root / "mesh.json", mesh_json)
    for sid, recs in records.items():
        for k, rec in enumerate(recs):
            write_json(root / "steps" / sid / f"{k}.json", rec.to_json())
    return root


def save_dataset(path, ds: Dataset) -> Path:
    records = {}
    for sid, idx in ds.sims.items():
        records[sid] = [
            StepRecord(s.t, s.dt, s.globals, s.nodes.r, s.nodes.v, s.nodes.a,
                       s.targets if s.targets is not None else np.zeros_like(s.nodes.r))
            for s in (ds.samples[i] for i in idx)
        ]
    return save_records(path, ds.meta, ds.mesh, records, ds.sim_split, ds.exclude_mesh_pairs)
