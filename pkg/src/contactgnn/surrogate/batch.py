"""Collation of graph samples into one disjoint-union batch of tensors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from ..mesh_graph import GraphSample
from .model import DTYPE


def reverse_index(edges: np.ndarray, n_nodes: int) -> np.ndarray:
    """Position of ``(j, i)`` for every directed edge ``(i, j)``."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        return np.zeros(0, dtype=np.int64)
    key = edges[:, 0] * n_nodes + edges[:, 1]
    order = np.argsort(key, kind="stable")
    rkey = edges[:, 1] * n_nodes + edges[:, 0]
    pos = np.searchsorted(key[order], rkey)
    pos = np.minimum(pos, len(key) - 1)
    if not np.array_equal(key[order][pos], rkey):
        raise ValueError("edge list is not symmetric")
    return order[pos]


@dataclass
class Normalizer:
    """Per-feature affine normalisation fitted on the training split."""

    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray
    graph_mean: np.ndarray
    graph_std: np.ndarray

    @classmethod
    def fit(cls, samples: Sequence[GraphSample]) -> "Normalizer":
        def stats(arr):
            arr = np.concatenate(arr) if len(arr) else np.zeros((1, 1))
            std = arr.std(axis=0)
            return arr.mean(axis=0), np.where(std > 0, std, 1.0)

        nm, ns = stats([s.nodes.features() for s in samples])
        em, es = stats([np.concatenate([s.mesh_edge_feats, s.world_edge_feats]) for s in samples])
        gm, gs = stats([s.g[None] for s in samples])
        return cls(nm, ns, em, es, gm, gs)

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


def _t(a, dtype=DTYPE):
    return torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)


@dataclass
class GraphBatch:
    x: torch.Tensor
    g: torch.Tensor
    node_graph: torch.Tensor
    mesh_edges: torch.Tensor
    mesh_feats: torch.Tensor
    mesh_rev: torch.Tensor
    world_edges: torch.Tensor
    world_feats: torch.Tensor
    world_rev: torch.Tensor
    # unnormalised state needed for integration and contact
    r: torch.Tensor
    v: torch.Tensor
    dt_node: torch.Tensor
    y: Optional[torch.Tensor]
    offsets: np.ndarray
    samples: list

    @property
    def n_graphs(self) -> int:
        return len(self.offsets) - 1

    @classmethod
    def collate(cls, samples: Sequence[GraphSample], normalizer: Optional[Normalizer] = None) -> "GraphBatch":
        sizes = [s.n_nodes for s in samples]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        n = int(offsets[-1])
        xs, me, mf, we, wf, gs, ys = [], [], [], [], [], [], []
        for off, s in zip(offsets[:-1], samples):
            xs.append(s.nodes.features())
            me.append(s.mesh_edges + off)
            mf.append(s.mesh_edge_feats)
            we.append(s.world_edges.reshape(-1, 2) + off)
            wf.append(s.world_edge_feats.reshape(-1, 4))
            gs.append(s.g)
            if s.targets is not None:
                ys.append(s.targets)
        x = np.concatenate(xs)
        mesh_edges = np.concatenate(me)
        world_edges = np.concatenate(we)
        mesh_feats = np.concatenate(mf)
        world_feats = np.concatenate(wf)
        g = np.stack(gs)
        node_graph = np.repeat(np.arange(len(samples)), sizes)
        dt_node = g[node_graph, 1]
        raw_x = x
        if normalizer is not None:
            x = (x - normalizer.node_mean) / normalizer.node_std
            mesh_feats = (mesh_feats - normalizer.edge_mean) / normalizer.edge_std
            world_feats = (world_feats - normalizer.edge_mean) / normalizer.edge_std
            g = (g - normalizer.graph_mean) / normalizer.graph_std
        return cls(
            x=_t(x), g=_t(g), node_graph=_t(node_graph, torch.long),
            mesh_edges=_t(mesh_edges, torch.long), mesh_feats=_t(mesh_feats),
            mesh_rev=_t(reverse_index(mesh_edges, n), torch.long),
            world_edges=_t(world_edges, torch.long), world_feats=_t(world_feats),
            world_rev=_t(reverse_index(world_edges, n), torch.long),
            r=_t(raw_x[:, 0:3]), v=_t(raw_x[:, 3:6]), dt_node=_t(dt_node),
            y=_t(np.concatenate(ys)) if len(ys) == len(samples) else None,
            offsets=offsets, samples=list(samples),
        )
