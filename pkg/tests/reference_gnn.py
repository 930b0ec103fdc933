"""Independent straight-line numpy forward pass and losses, in any float dtype.

Used as the oracle for the torch network: it reads parameters by name and
recomputes everything with plain array code (no torch, no package helpers).
"""
import numpy as np

EDGES = ((0, 1), (1, 2), (2, 0))


def params_of(model, dtype=np.longdouble):
    return {k: v.detach().numpy().astype(dtype) for k, v in model.named_parameters()}


def mlp(P, prefix, h):
    j = 0
    while f"{prefix}.hidden.{j}.weight" in P:
        z = np.maximum(h @ P[f"{prefix}.hidden.{j}.weight"].T + P[f"{prefix}.hidden.{j}.bias"], 0)
        h = z + h if z.shape[-1] == h.shape[-1] else z
        j += 1
    return h @ P[f"{prefix}.out.weight"].T + P[f"{prefix}.out.bias"]


def reverse(edges):
    lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
    return np.array([lookup[(int(b), int(a))] for a, b in edges], dtype=np.int64)


_REV = {}


def _rev(edges):
    key = edges.tobytes()
    if key not in _REV:
        _REV[key] = reverse(edges)
    return _REV[key]


def forward(P, cfg, batch, dtype=np.longdouble, trace=None):
    X = batch.x.numpy().astype(dtype)
    G = batch.g.numpy().astype(dtype)
    me, we = batch.mesh_edges.numpy(), batch.world_edges.numpy()
    g = mlp(P, "enc_graph", G)
    x = mlp(P, "enc_node", X)
    em = mlp(P, "enc_mesh", batch.mesh_feats.numpy().astype(dtype))
    ew = mlp(P, "enc_world", batch.world_feats.numpy().astype(dtype))
    for k in range(cfg.k):
        msgs = []
        aggs = []
        for name, edges, e in (("phi_mesh", me, em), ("phi_world", we, ew)):
            m = mlp(P, f"rounds.{k}.{name}", np.concatenate([x[edges[:, 0]], x[edges[:, 1]], e], axis=1))
            m = (m - m[_rev(edges)]) / 2 if len(edges) else m
            agg = np.zeros_like(x)
            np.add.at(agg, edges[:, 0], m)
            msgs.append(m)
            aggs.append(agg)
        x = mlp(P, f"rounds.{k}.gamma", np.concatenate([x] + aggs, axis=1))
        em, ew = em + msgs[0], ew + msgs[1]
        if trace is not None:
            trace.append(msgs)
    prod = x * g[batch.node_graph.numpy()]
    X_dec = prod.sum(axis=1, keepdims=True) if cfg.decode_mode == "dot" else prod
    return np.concatenate([mlp(P, f"decoders.{c}", X_dec) for c in range(3)], axis=1)


def _plane_distance(p, a, b, c):
    n = np.cross(b - a, c - a)
    return abs(np.dot(p - a, n)) / np.sqrt(np.dot(n, n))


def event_nodes(tA, tB, kind, index):
    """Nodes of one sub-test: (face a, face b, face c, vertex) for VF, (p0, p1, q0, q1) for EE."""
    if kind == 0:
        if index < 3:
            return (tB[0], tB[1], tB[2], tA[index])
        return (tA[0], tA[1], tA[2], tB[index - 3])
    ea, eb = EDGES[index // 3], EDGES[index % 3]
    return (tA[ea[0]], tA[ea[1]], tB[eb[0]], tB[eb[1]])


def event_table(fields, triangles, offsets):
    """Flattened (graph, node ids, kind, degenerate, tri_a, tri_b) of every frozen event."""
    rows = []
    for gi, f in enumerate(fields):
        if f is None:
            continue
        ev = f.events
        for k in range(len(ev["tri_a"])):
            a, b = int(ev["tri_a"][k]), int(ev["tri_b"][k])
            ids = event_nodes(triangles[a], triangles[b], int(ev["kind"][k]), int(ev["index"][k]))
            rows.append((gi, [offsets[gi] + i for i in ids], int(ev["kind"][k]), bool(ev["degenerate"][k]), a, b))
    return rows


def losses(P, cfg, batch, triangles, l_c, w_d, w_c, fields=None, dtype=np.longdouble, table=None):
    y_hat = forward(P, cfg, batch, dtype)
    y = batch.y.numpy().astype(dtype)
    L_d = np.mean((y_hat - y) ** 2)
    L_c = dtype(0)
    if fields is not None:
        if table is None:
            table = event_table(fields, triangles, batch.offsets)
        r = batch.r.numpy().astype(dtype)
        v = batch.v.numpy().astype(dtype)
        dt = batch.dt_node.numpy().astype(dtype)[:, None]
        r1 = r + v * dt + y_hat * dt * dt / 2
        total = dtype(0)
        if table:
            gi = np.array([t[0] for t in table])
            ids = np.array([t[1] for t in table])
            vf = np.array([t[2] == 0 for t in table])
            deg = np.array([t[3] for t in table])
            q = r1[ids]  # (events, 4, 3)
            n = np.cross(q[:, 1] - q[:, 0], q[:, 2] - q[:, 0])
            plane = np.abs(np.sum((q[:, 3] - q[:, 0]) * n, axis=1)) / np.sqrt(np.sum(n * n, axis=1))
            mid = (q[:, 0] + q[:, 1]) / 2 - (q[:, 2] + q[:, 3]) / 2
            d = np.where(vf, plane, np.sqrt(np.sum(mid * mid, axis=1)))
            d = np.where(deg, dtype(0), d)
            per_tri = np.zeros((batch.n_graphs, len(triangles)), dtype=dtype)
            for col in (4, 5):
                tri = np.array([t[col] for t in table])
                np.maximum.at(per_tri, (gi, tri), d)
            total = np.sum(np.abs(per_tri) / l_c)
        L_c = total / (len(triangles) * batch.n_graphs)
    return w_d * L_d + w_c * L_c, L_d, L_c
