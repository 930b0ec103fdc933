"""Teacher-forced and self-fed rollouts with per-graph metrics."""
from __future__ import annotations

from typing import Optional

import numpy as np
import torch

from ..ccd import CcdConfig, Trajectory, detect_contacts
from ..losses_metrics import MetricReport, contact_loss, error_set, position_loss
from ..mesh_graph import assemble_graph_sample
from ..surrogate.batch import GraphBatch, Normalizer
from ..surrogate.objective import integrate_step
from .dataset import Dataset

MODES = ("tf", "self")


def _predict(model, sample, normalizer) -> np.ndarray:
    with torch.no_grad():
        return model(GraphBatch.collate([sample], normalizer)).numpy()


def rollout(model, ds: Dataset, split: str = "test", mode: str = "tf", normalizer: Optional[Normalizer] = None,
            ccd: Optional[CcdConfig] = None, with_contact: bool = True):
    """Returns ``(MetricReport, predicted positions per simulation)``.

    The true step is ``dr_N = r_{N+1} - r_N`` from the stored states;
    zero-length terminal graphs carry no step and are not scored.
    """
    if mode not in MODES:
        raise ValueError(f"unknown rollout mode {mode!r}")
    tri, body, l_c = ds.mesh.triangles, ds.mesh.body, ds.meta.l_c
    graphs, predictions = [], {}
    for sim in ds.sim_split[split]:
        samples = ds.sim_samples(sim)
        state = samples[0].nodes
        preds = [state.r.copy()]
        for N, s in enumerate(samples[:-1]):
            if s.dt <= 0:
                break
            nxt = samples[N + 1]
            if mode == "tf":
                feed = s
                state = s.nodes
            else:
                feed = assemble_graph_sample(ds.mesh, state, s.globals, s.t, s.dt, ds.meta.R, targets=s.targets,
                                             exclude_mesh_pairs=ds.exclude_mesh_pairs, sim=sim, step=s.step)
            y_hat = _predict(model, feed, normalizer)
            new = integrate_step(state, y_hat, s.dt)
            dr_hat = new.r - state.r
            dr = nxt.nodes.r - s.nodes.r
            rec = {"sim": sim, "step": s.step, "t": s.t, "position_loss": float(position_loss(dr_hat, dr, l_c)),
                   "errors": error_set(dr_hat, dr, l_c)}
            if with_contact:
                field = detect_contacts(Trajectory.from_endpoints(state.r, new.r, s.dt), tri, body, ccd)
                rec["contact_loss"] = contact_loss(field, l_c)
            graphs.append(rec)
            state = new
            preds.append(new.r.copy())
        predictions[sim] = np.stack(preds)
    return MetricReport.build(split, graphs), predictions
