"""Time integration, differentiable losses and their parameter gradients."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from ..ccd import CcdConfig, ContactField, Trajectory, detect_contacts
from ..ccd.detect import SUBTESTS, VF, field_from_events
from ..losses_metrics import LossWeights
from ..mesh_graph import NodeState
from .batch import GraphBatch
from .model import DTYPE

MODES = ("D", "DC")


def integrate_step(nodes: NodeState, y_hat, dt: float) -> NodeState:
    """Explicit update ``v+ = v + y dt``, ``r+ = r + v dt + y dt^2 / 2``, ``a+ = y``."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1, 3)
    return NodeState(nodes.r + nodes.v * dt + 0.5 * y_hat * dt * dt, nodes.v + y_hat * dt, y_hat)


def integrate_torch(r, v, y_hat, dt):
    """Same update on tensors; ``dt`` may be per node, shape (n,)."""
    if isinstance(dt, torch.Tensor) and dt.dim() == 1:
        dt = dt[:, None]
    return r + v * dt + 0.5 * y_hat * dt * dt, v + y_hat * dt


@dataclass
class LossContext:
    """Mesh connectivity and scales the losses need beyond the graph batch."""

    triangles: np.ndarray
    l_c: float
    body: Optional[np.ndarray] = None
    ccd: CcdConfig = field(default_factory=CcdConfig)

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.body is not None:
            self.body = np.asarray(self.body)
        if not self.l_c > 0:
            raise ValueError("l_c must be positive")


def contact_fields(batch: GraphBatch, r_next: np.ndarray, ctx: LossContext) -> list[Optional[ContactField]]:
    """Detect contacts on the predicted step of every graph; ``None`` for zero-length steps."""
    out = []
    r0 = batch.r.detach().numpy()
    for gi in range(batch.n_graphs):
        a, b = batch.offsets[gi], batch.offsets[gi + 1]
        dt = float(batch.samples[gi].dt)
        if dt <= 0:
            out.append(None)
            continue
        traj = Trajectory.from_endpoints(r0[a:b], r_next[a:b], dt)
        out.append(detect_contacts(traj, ctx.triangles, ctx.body, ctx.ccd))
    return out


def _vf_distance(p, a, b, c):
    n = torch.cross(b - a, c - a, dim=-1)
    nn = torch.sqrt((n * n).sum(-1).clamp_min(1e-300))
    return torch.abs(((p - a) * n).sum(-1)) / nn


def _ee_distance(p0, p1, q0, q1):
    d = 0.5 * (p0 + p1) - 0.5 * (q0 + q1)
    return torch.sqrt((d * d).sum(-1).clamp_min(1e-300))


def event_responses(r_end, triangles: np.ndarray, events: dict):
    """End-time responses of frozen events, recomputed from ``r_end`` so they carry gradients."""
    n_ev = len(events["tri_a"])
    if n_ev == 0:
        return torch.zeros(0, dtype=r_end.dtype)
    tris = np.stack([triangles[events["tri_a"]], triangles[events["tri_b"]]], axis=1)  # (n, 2, 3)
    sub = np.where(events["kind"] == VF, events["index"], 6 + events["index"])
    nodes = tris[np.arange(n_ev)[:, None], SUBTESTS[sub, 0], SUBTESTS[sub, 1]]  # (n, 4)
    P = r_end[torch.as_tensor(nodes)]
    vf = torch.as_tensor(events["kind"] == VF)
    resp = torch.where(
        vf,
        _vf_distance(P[:, 3], P[:, 0], P[:, 1], P[:, 2]),
        _ee_distance(P[:, 0], P[:, 1], P[:, 2], P[:, 3]),
    )
    # degenerate end-time faces respond 0
    return torch.where(torch.as_tensor(events["degenerate"]), torch.zeros_like(resp), resp)


def triangle_responses(r_end, triangles: np.ndarray, events: dict, n_triangles: int):
    """Per-triangle max over partner responses (max over pairs of max over sub-tests)."""
    resp = event_responses(r_end, triangles, events)
    out = torch.zeros(n_triangles, dtype=r_end.dtype)
    if len(resp) == 0:
        return out
    idx = torch.as_tensor(np.concatenate([events["tri_a"], events["tri_b"]]))
    return out.scatter_reduce(0, idx, torch.cat([resp, resp]), reduce="amax", include_self=False)


def contact_loss_torch(r_next, batch: GraphBatch, fields: Sequence[Optional[ContactField]], ctx: LossContext):
    """Mean normalised absolute response over all triangles of all graphs in the batch."""
    n_tri = len(ctx.triangles)
    total = torch.zeros((), dtype=r_next.dtype)
    for gi, f in enumerate(fields):
        if f is None or f.n_events == 0:
            continue
        a, b = batch.offsets[gi], batch.offsets[gi + 1]
        r_tri = triangle_responses(r_next[a:b], ctx.triangles, f.events, n_tri)
        total = total + torch.abs(r_tri / ctx.l_c).sum()
    return total / (n_tri * batch.n_graphs)


def compute_losses(model, batch: GraphBatch, weights: LossWeights, mode: str, ctx: Optional[LossContext] = None,
                   frozen_fields: Optional[list] = None) -> dict:
    """Forward pass plus losses; values are tensors attached to the graph.

    ``mode`` "D" uses the dynamic loss only; "DC" adds the contact term with
    the fired set detected on the prediction (or ``frozen_fields``).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if batch.y is None:
        raise ValueError("batch has no targets")
    y_hat = model(batch)
    d = y_hat - batch.y
    L_d = (d * d).mean()
    out = {"y_hat": y_hat, "L_d": L_d, "L_c": None, "fields": None}
    total = weights.w_d * L_d
    if mode == "DC":
        if ctx is None:
            raise ValueError("contact loss needs a LossContext")
        r_next, _ = integrate_torch(batch.r, batch.v, y_hat, batch.dt_node)
        fields = frozen_fields
        if fields is None:
            fields = contact_fields(batch, r_next.detach().numpy(), ctx)
        L_c = contact_loss_torch(r_next, batch, fields, ctx)
        out["L_c"], out["fields"] = L_c, fields
        total = total + weights.w_c * L_c
    if ctx is not None:
        dt = batch.dt_node[:, None]
        out["L_p"] = (torch.abs(0.5 * d * dt * dt).mean() / ctx.l_c).detach()
    out["L"] = total
    return out


def loss_gradient(model, batch: GraphBatch, weights: LossWeights, mode: str, ctx: Optional[LossContext] = None,
                  frozen_fields: Optional[list] = None, batch_id=0):
    """Gradient of the total loss for every named parameter (reverse-mode autodiff).

    Returns ``(grads, losses)``; the collision classification is held fixed
    and only the response distances are differentiated.
    """
    model.zero_grad(set_to_none=True)
    res = compute_losses(model, batch, weights, mode, ctx, frozen_fields)
    if not torch.isfinite(res["L"]):
        raise FloatingPointError(f"non-finite loss in batch {batch_id}")
    res["L"].backward()
    grads = OrderedDict(
        (name, p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    )
    losses = {k: float(res[k].detach()) for k in ("L", "L_d", "L_c", "L_p") if res.get(k) is not None}
    losses["fields"] = res["fields"]
    return grads, losses


class TargetOracle(torch.nn.Module):
    """Stand-in predictor returning the batch targets; zero error by construction."""

    def forward(self, batch):
        return batch.y.clone()


def fields_from_numpy(batch: GraphBatch, y_hat: np.ndarray, ctx: LossContext) -> list:
    r_next, _ = integrate_torch(batch.r, batch.v, torch.as_tensor(y_hat, dtype=DTYPE), batch.dt_node)
    return contact_fields(batch, r_next.numpy(), ctx)


__all__ = [
    "LossContext", "MODES", "TargetOracle", "compute_losses", "contact_fields", "contact_loss_torch",
    "event_responses", "field_from_events", "fields_from_numpy", "integrate_step", "integrate_torch",
    "loss_gradient", "triangle_responses",
]
