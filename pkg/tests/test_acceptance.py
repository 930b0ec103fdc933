"""Acceptance suite: one PASS/FAIL line per criterion, then the assertion."""
import time

import numpy as np
import pytest
import torch

import reference_gnn as ref
from contactgnn.ccd import CcdConfig, EE, cubic_roots_in_interval, detect_contacts, horner, static_contacts
from contactgnn.ccd.oracle import oracle_margins
from contactgnn.ccd.roots import residual_scale
from contactgnn.harness.bench import TABLE_FIELDS, bench, table_csv
from contactgnn.harness.dataset import records_to_dataset
from contactgnn.harness.rollout import rollout
from contactgnn.harness.scenes import (
    SceneSpec,
    collinear_edges,
    load_generated_dataset,
    membrane_scene,
    parabola_sheets,
    random_micro,
    undulating_membranes,
)
from contactgnn.harness.train import TrainConfig, resolve_gnn_config, train
from contactgnn.losses_metrics import (
    LossWeights,
    MetricReport,
    accumulate_errors,
    common_slice_averages,
    contact_loss,
    dynamic_loss,
    position_loss,
    total_loss,
)
from contactgnn.mesh_graph import NodeState, TriMesh, assemble_graph_sample
from contactgnn.surrogate import PRESETS, GnnConfig, GraphBatch, LossContext, init_params, loss_gradient, param_count
from contactgnn.surrogate.objective import fields_from_numpy


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        return ok
    return emit


def test_criterion_01_ccd_oracle_agreement(verdict):
    t0 = time.perf_counter()
    scenes = random_micro(SceneSpec("random-micro", n_scenes=500, seed=0))
    fn = fp = positives = grazing = 0
    for sc in scenes:
        traj, tris, body = sc.combined()
        pts = np.concatenate([traj.r0, traj.r1])
        band = 1e-6 * float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        hit = detect_contacts(traj, tris, body).n_events > 0
        m = oracle_margins(traj, tris, np.array([[0, 1]]), 10_000, separation=hit)[0]
        positives += m > band
        grazing += abs(m) <= band
        fn += (m > band) and not hit
        fp += hit and m < -band
    elapsed = time.perf_counter() - t0
    ok = fn == 0 and fp == 0 and elapsed < 60.0
    verdict(1, ok, f"{len(scenes)} scenes, {positives} oracle positives, FN={fn}, FP outside band={fp}, "
                   f"grazing={grazing}, {elapsed:.1f} s")
    assert ok


def test_criterion_02_tunneling(verdict):
    traj, tris, body = parabola_sheets(SceneSpec("parabola-sheets", speed=10.0)).combined()
    end_only = int(static_contacts(traj.r1, tris, body).sum())
    start = int(static_contacts(traj.r0, tris, body).sum())
    field = detect_contacts(traj, tris, body)
    ok = end_only == 0 and start == 0 and field.n_events >= 1 and field.values.max() > 0
    verdict(2, ok, f"end-time checker {end_only} triangles, CCD {field.n_events} events, "
                   f"{len(field.indices)} triangles, max response {field.values.max():.3g}")
    assert ok


def test_criterion_03_collinear_edges(verdict):
    scene = collinear_edges(SceneSpec("collinear-edges"))
    traj, tris, body = scene.combined()
    off = scene.triangle_offsets()
    small = slice(off[1], off[2])
    mod = detect_contacts(traj, tris, body)
    ee_mod = mod.events["kind"] == EE
    ee_resp = float(mod.events["response"][ee_mod].sum()) if ee_mod.any() else 0.0
    classic = detect_contacts(traj, tris, body, CcdConfig(modified_ee=False))
    count_classic = int(classic.dense_counts()[small].sum())
    ok = ee_resp == 0.0 and mod.to_dense()[small].sum() == 0.0 and count_classic > 0
    verdict(3, ok, f"modified EE responses on small mesh {mod.to_dense()[small].sum():.3g} "
                   f"({int(ee_mod.sum())} EE events); unmodified collision count {count_classic}")
    assert ok


def test_criterion_04_root_finder(verdict):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    dts = rng.uniform(0.01, 10.0, 1000)
    planted, coeffs = [], []
    for dt in dts:
        while True:
            u = rng.uniform(-0.5, 1.5, 3)
            if np.min(np.abs(np.subtract.outer(u, u)) + 10 * np.eye(3)) > 1e-3:
                break
        planted.append(u * dt)
        coeffs.append(np.poly(u * dt) * rng.choice([-1, 1]) * rng.uniform(0.1, 10))
    coeffs = np.array(coeffs)
    missed = spurious = 0
    worst = 0.0
    for i, dt in enumerate(dts):
        got = np.array(cubic_roots_in_interval(coeffs[i], dt))
        inside = planted[i][(planted[i] >= 0) & (planted[i] <= dt)]
        for r in inside:
            err = np.min(np.abs(got - r)) / dt if len(got) else np.inf
            worst = max(worst, err)
            missed += err > 1e-9
        res = np.abs(horner(coeffs[i], got)) if len(got) else np.zeros(0)
        spurious += int(np.sum(res > 1e-10 * residual_scale(coeffs[i], dt)[0]))
    elapsed = time.perf_counter() - t0
    ok = missed == 0 and spurious == 0 and elapsed < 5.0
    verdict(4, ok, f"1000 cubics, missed={missed}, worst normalised error {worst:.2e}, spurious={spurious}, "
                   f"{elapsed:.2f} s")
    assert ok


def test_criterion_05_loss_identities(verdict, rng):
    y = rng.normal(size=(20, 3))
    sep = parabola_sheets(SceneSpec("parabola-sheets", speed=0.01))
    traj, tris, body = sep.combined()
    field = detect_contacts(traj, tris, body)
    a, b = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    loop = sum((a[i, k] - b[i, k]) ** 2 for i in range(6) for k in range(3)) / 18
    ploop = sum(abs(a[i, k] - b[i, k]) for i in range(6) for k in range(3)) / 18 / 0.1
    checks = {
        "dynamic_loss(y,y)=0": dynamic_loss(y, y) == 0.0,
        "separated contact_loss=0": field.n_events == 0 and contact_loss(field, 0.1) == 0.0,
        "total_loss(2,3,(1,0.5))=3.5": total_loss(2.0, 3.0, LossWeights(1.0, 0.5)) == 3.5,
        "dynamic loop": abs(dynamic_loss(a, b) - loop) <= 1e-12 * loop,
        "position loop": abs(position_loss(a, b, 0.1) - ploop) <= 1e-12 * ploop,
        "accumulation": accumulate_errors(np.array([[1.0], [2.0], [4.0]]))["Xi_M"].tolist() == [0, 1, 3],
    }
    ok = all(checks.values())
    verdict(5, ok, ", ".join(f"{k} {'ok' if v else 'WRONG'}" for k, v in checks.items()))
    assert ok


def test_criterion_06_surrogate_structure(verdict):
    ds = load_generated_dataset(SceneSpec("undulating-membranes", n_sims=10, n_steps=3, resolution=5))
    batch = GraphBatch.collate(ds.samples[:3])
    skew = 0.0
    for seed in range(10):
        trace = []
        with torch.no_grad():
            init_params(GnnConfig(graph_dim=4, k=2), seed)(batch, trace=trace)
        for mm, mw in trace:
            skew = max(skew, float((mm + mm[batch.mesh_rev]).abs().max()), float((mw + mw[batch.world_rev]).abs().max()))
    rng = np.random.default_rng(6)
    perm_err = 0.0
    for seed in range(3):
        s = ds.samples[1 + seed]
        perm = rng.permutation(ds.mesh.n_nodes)
        inv = np.argsort(perm)
        mesh_p = TriMesh(ds.mesh.positions_ref[perm], inv[ds.mesh.triangles], ds.mesh.body[perm])
        sp = assemble_graph_sample(mesh_p, NodeState(s.nodes.r[perm], s.nodes.v[perm], s.nodes.a[perm]),
                                   s.globals, s.t, s.dt, ds.meta.R)
        model = init_params(GnnConfig(graph_dim=4, k=2), seed)
        with torch.no_grad():
            y = model(GraphBatch.collate([s])).numpy()
            yp = model(GraphBatch.collate([sp])).numpy()
        perm_err = max(perm_err, float(np.abs(yp - y[perm]).max()))
    n_valve = param_count(init_params(PRESETS["valve-small"], 0))
    n_geom = param_count(init_params(PRESETS["membrane-small"], 0))
    ok = skew <= 1e-12 and perm_err <= 1e-6 and n_valve == 622_659 and n_geom == 1_216_451
    verdict(6, ok, f"skew residual {skew:.1e}, permutation error {perm_err:.1e}, "
                   f"parameter counts {n_valve:,} and {n_geom:,}")
    assert ok


def _fd_worst(model, batch, ctx, weights, mode, fields):
    grads, losses = loss_gradient(model, batch, weights, mode, ctx, fields)
    P = ref.params_of(model)
    table = ref.event_table(fields, ctx.triangles, batch.offsets) if mode == "DC" else None
    rf = fields if mode == "DC" else None

    def L():
        return ref.losses(P, model.cfg, batch, ctx.triangles, ctx.l_c, weights.w_d, weights.w_c, rf, table=table)[0]

    h = np.longdouble(1e-6)
    worst, n = 0.0, 0
    for name, g in grads.items():
        flat, gg = P[name].reshape(-1), g.numpy().reshape(-1)
        for i in np.flatnonzero(np.abs(gg) > 1e-8):
            x = flat[i]
            flat[i] = x + h
            up = L()
            flat[i] = x - h
            down = L()
            flat[i] = x
            fd = (up - down) / (2 * h)
            worst = max(worst, float(abs(fd - gg[i]) / max(abs(fd), abs(gg[i]))))
            n += 1
    return worst, n


def test_criterion_07_gradient_check(verdict):
    t0 = time.perf_counter()
    ds = load_generated_dataset(SceneSpec("undulating-membranes", n_sims=10, n_steps=4, resolution=5))
    ctx = LossContext(ds.mesh.triangles, ds.meta.l_c, ds.mesh.body)
    batch = GraphBatch.collate([ds.samples[0]])
    model = init_params(GnnConfig(graph_dim=4), 0)
    worst_d, n_d = _fd_worst(model, batch, ctx, LossWeights(1.0, 0.0), "D", None)
    # events frozen from a prediction that drives the sheets through each other
    y = batch.y.numpy().copy()
    up = ds.mesh.body == 0
    y[up, 2] -= 200.0
    y[~up, 2] += 200.0
    fields = fields_from_numpy(batch, y, ctx)
    worst_c, n_c = _fd_worst(model, batch, ctx, LossWeights(1.0, 1.0), "DC", fields)
    elapsed = time.perf_counter() - t0
    ok = worst_d <= 1e-4 and worst_c <= 1e-3 and fields[0].n_events > 0 and elapsed < 120.0
    verdict(7, ok, f"dynamic max rel err {worst_d:.1e} over {n_d} params, contact ({fields[0].n_events} events) "
                   f"{worst_c:.1e} over {n_c} params, {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_08_desk_scale_training(verdict):
    t0 = time.perf_counter()
    ds = load_generated_dataset(SceneSpec("undulating-membranes"))
    runs = {}
    for mode in ("D", "DC"):
        cfg = TrainConfig(epochs=500, mode=mode, contact_activation_epoch=100, seed=0,
                          lr_schedule=[(0, 3e-3), (300, 1e-3)])
        res = train(cfg, ds, "tiny")
        rep, _ = rollout(res.model, ds, "test", "tf")
        runs[mode] = (res, rep.contact_loss_stats["mean"], rep.position_loss_stats["mean"])
    elapsed = time.perf_counter() - t0
    d_hist = runs["D"][0].history
    drop = d_hist[0]["train_L"] / d_hist[-1]["train_L"]
    c_d, c_dc = runs["D"][1], runs["DC"][1]
    p_d, p_dc = runs["D"][2], runs["DC"][2]
    ok_a = drop >= 10.0
    ok_b = c_dc < c_d and p_dc <= 2.0 * p_d
    ok = ok_a and ok_b and elapsed < 1800.0
    verdict(8, ok, f"({ds.mesh.n_nodes // 2} nodes/mesh, {len(ds.sims)} sims) D loss drop {drop:.0f}x; "
                   f"test contact D {c_d:.4g} vs DC {c_dc:.4g}; position D {p_d:.3g} vs DC {p_dc:.3g}; "
                   f"{elapsed / 60:.1f} min")
    assert ok


def test_criterion_09_metrics(verdict):
    spec = SceneSpec("undulating-membranes", n_sims=10, n_steps=6, resolution=5)
    meta, mesh, records, split = undulating_membranes(spec)
    lengths = {sim: 2 + i % 5 for i, sim in enumerate(records)}
    records = {sim: recs[:lengths[sim]] for sim, recs in records.items()}
    split = {"train": sorted(records), "val": [], "test": []}
    ds = records_to_dataset(meta, mesh, records, split)
    model = init_params(resolve_gnn_config("tiny", 4), 0)
    monotone = True
    for mode in ("tf", "self"):
        rep, _ = rollout(model, ds, "train", mode, with_contact=False)
        monotone &= all(np.all(np.diff(d["Xi_M"]) >= 0) for d in rep.per_sim.values())
        monotone &= bool(np.all(np.diff(rep.common["Xi_bar_N"]) >= 0))
    # least common slice against direct arithmetic
    n_common = min(lengths.values())
    per_sim = []
    graphs = []
    rng = np.random.default_rng(9)
    for sim, n in lengths.items():
        e = rng.random((n, 4))
        per_sim.append(e)
        graphs += [{"sim": sim, "step": k, "position_loss": 0.0, "errors": e[k]} for k in range(n)]
    report = MetricReport.build("test", graphs)
    direct_e = [np.mean([e[k].mean() for e in per_sim]) for k in range(n_common)]
    direct_xi = [np.mean([e[:k].sum(axis=0).mean() for e in per_sim]) for k in range(n_common)]
    slice_ok = (report.common["n_common"] == n_common
                and np.allclose(report.common["e_bar_N"], direct_e, rtol=1e-12)
                and np.allclose(report.common["Xi_bar_N"], direct_xi, rtol=1e-12, atol=1e-15)
                and common_slice_averages(per_sim)["n_common"] == n_common)
    ok = monotone and slice_ok and rep.common["n_common"] == n_common
    verdict(9, ok, f"Xi_M non-decreasing in tf and self rollouts: {monotone}; sim lengths "
                   f"{sorted(set(lengths.values()))} -> common slice {n_common}, averages match: {slice_ok}")
    assert ok


def test_criterion_10_timing_report(verdict):
    scene = membrane_scene(SceneSpec("undulating-membranes"))
    rep = bench(scene, 3, n_steps=10, problem="membrane")
    lines = table_csv(rep).splitlines()
    row = rep["inference_table"][0]
    ok = (lines[0] == ",".join(TABLE_FIELDS) and len(lines) == 2 and row["time_s"] > 0
          and all(len(v["samples"]) == 3 for v in rep["phases_s"].values()) and "platform" in rep["machine"])
    verdict(10, ok, f"columns {','.join(TABLE_FIELDS)}; {row['n_nodes']} nodes, "
                    f"{row['time_s'] * 1e3:.1f} ms per {row['n_steps']}-step simulation (median of 3)")
    assert ok
