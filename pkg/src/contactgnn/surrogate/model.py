"""Encode-process-decode graph network predicting next-step nodal accelerations."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64


@dataclass
class GnnConfig:
    """Sizes of every MLP in the network.

    Depths count hidden layers; every hidden layer has ``mlp_width`` units.
    ``decode_mode`` is ``"dot"`` (node embedding dotted with the graph
    embedding, one scalar per node) or ``"elementwise"`` (their componentwise
    product, ``embed_dim`` values per node).
    """

    graph_dim: int = 4
    node_dim: int = 9
    edge_dim: int = 4
    embed_dim: int = 8
    mlp_width: int = 16
    depth_node_enc: int = 2
    depth_mesh_enc: int = 2
    depth_world_enc: int = 2
    depth_graph_enc: int = 2
    depth_mesh_msg: int = 2
    depth_world_msg: int = 2
    depth_update: int = 2
    depth_dec: int = 2
    k: int = 1
    decode_mode: str = "dot"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.decode_mode not in ("dot", "elementwise"):
            raise ValueError(f"unknown decode_mode {self.decode_mode!r}")
        for name, value in asdict(self).items():
            if name.startswith("depth_") and value < 1:
                raise ValueError(f"{name} must be >= 1")
            if name.endswith("_dim") and value < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GnnConfig":
        return cls(**d)


def _preset(graph_dim, enc, graph_enc, proc, k, dec):
    return GnnConfig(
        graph_dim=graph_dim, embed_dim=64, mlp_width=128,
        depth_node_enc=enc, depth_mesh_enc=enc, depth_world_enc=enc, depth_graph_enc=graph_enc,
        depth_mesh_msg=proc, depth_world_msg=proc, depth_update=proc, depth_dec=dec, k=k,
        # 64-wide decoder inputs give the reference parameter totals of these presets
        decode_mode="elementwise",
    )


PRESETS = {
    "valve-small": _preset(6, 2, 2, 2, 3, 2),
    "valve-large": _preset(6, 4, 4, 2, 20, 4),
    "membrane-small": _preset(4, 3, 2, 3, 5, 2),
    "membrane-large": _preset(4, 3, 3, 3, 20, 3),
    "tiny": GnnConfig(),
}


class Mlp(nn.Module):
    """ReLU MLP with additive skips between equal-width consecutive layers; linear output."""

    def __init__(self, in_dim: int, out_dim: int, width: int, depth: int):
        super().__init__()
        dims = [in_dim] + [width] * depth
        self.hidden = nn.ModuleList(nn.Linear(a, b, dtype=DTYPE) for a, b in zip(dims[:-1], dims[1:]))
        self.out = nn.Linear(dims[-1], out_dim, dtype=DTYPE)

    def forward(self, h):
        for layer in self.hidden:
            z = torch.relu(layer(h))
            h = z + h if z.shape[-1] == h.shape[-1] else z
        return self.out(h)


def mlp_forward(mlp: Mlp, x):
    """Evaluate ``mlp`` on a numpy or torch input; returns the same kind."""
    if isinstance(x, torch.Tensor):
        return mlp(x)
    with torch.no_grad():
        return mlp(torch.as_tensor(np.asarray(x, dtype=np.float64))).numpy()


class Round(nn.Module):
    def __init__(self, cfg: GnnConfig):
        super().__init__()
        E, W = cfg.embed_dim, cfg.mlp_width
        self.phi_mesh = Mlp(3 * E, E, W, cfg.depth_mesh_msg)
        self.phi_world = Mlp(3 * E, E, W, cfg.depth_world_msg)
        self.gamma = Mlp(3 * E, E, W, cfg.depth_update)


def skew_messages(phi: Mlp, x, e, edges, rev):
    """Raw messages ``phi(x_i, x_j, e_ij)`` antisymmetrised as ``(m_ij - m_ji) / 2``."""
    m = phi(torch.cat([x[edges[:, 0]], x[edges[:, 1]], e], dim=-1))
    return 0.5 * (m - m[rev])


def aggregate(messages, receivers, n_nodes: int):
    out = torch.zeros(n_nodes, messages.shape[-1], dtype=messages.dtype)
    return out.index_add(0, receivers, messages)


def message_round(rnd: Round, x, e_mesh, e_world, batch) -> tuple:
    """One processor round; returns updated (x, e_mesh, e_world) and the skew messages."""
    n = x.shape[0]
    mm = skew_messages(rnd.phi_mesh, x, e_mesh, batch.mesh_edges, batch.mesh_rev)
    mw = skew_messages(rnd.phi_world, x, e_world, batch.world_edges, batch.world_rev)
    agg_m = aggregate(mm, batch.mesh_edges[:, 0], n)
    agg_w = aggregate(mw, batch.world_edges[:, 0], n)
    x_new = rnd.gamma(torch.cat([x, agg_m, agg_w], dim=-1))
    return x_new, e_mesh + mm, e_world + mw, (mm, mw)


class EncodeProcessDecode(nn.Module):
    """Full parameter set: four encoders, ``k`` processor rounds, three decoders."""

    def __init__(self, cfg: GnnConfig):
        super().__init__()
        self.cfg = cfg
        E, W = cfg.embed_dim, cfg.mlp_width
        self.enc_graph = Mlp(cfg.graph_dim, E, W, cfg.depth_graph_enc)
        self.enc_node = Mlp(cfg.node_dim, E, W, cfg.depth_node_enc)
        self.enc_mesh = Mlp(cfg.edge_dim, E, W, cfg.depth_mesh_enc)
        self.enc_world = Mlp(cfg.edge_dim, E, W, cfg.depth_world_enc)
        self.rounds = nn.ModuleList(Round(cfg) for _ in range(cfg.k))
        dec_in = 1 if cfg.decode_mode == "dot" else E
        self.decoders = nn.ModuleList(Mlp(dec_in, 1, W, cfg.depth_dec) for _ in range(3))

    def encode(self, batch):
        return (
            self.enc_graph(batch.g),
            self.enc_node(batch.x),
            self.enc_mesh(batch.mesh_feats),
            self.enc_world(batch.world_feats),
        )

    def decode(self, x, g_nodes):
        """``g_nodes`` is the graph embedding broadcast to each node."""
        prod = x * g_nodes
        X = prod.sum(dim=-1, keepdim=True) if self.cfg.decode_mode == "dot" else prod
        return torch.cat([d(X) for d in self.decoders], dim=-1)

    def forward(self, batch, trace: Optional[list] = None):
        g, x, em, ew = self.encode(batch)
        for rnd in self.rounds:
            x, em, ew, msgs = message_round(rnd, x, em, ew, batch)
            if trace is not None:
                trace.append(msgs)
        return self.decode(x, g[batch.node_graph])


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def init_params(cfg: GnnConfig, seed: int) -> EncodeProcessDecode:
    """Fan-in scaled uniform initialisation drawn from a seeded numpy generator."""
    model = EncodeProcessDecode(cfg)
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Linear):
                bound = 1.0 / np.sqrt(module.in_features)
                module.weight.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(module.weight.shape))))
                module.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(module.bias.shape))))
    return model


def param_checksum(model: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for _, p in model.named_parameters():
        h.update(p.detach().numpy().astype("<f8").tobytes())
    return h.hexdigest()
