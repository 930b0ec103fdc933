import json

import numpy as np
import pytest

from contactgnn.ccd import detect_contacts
from contactgnn.harness.bench import TABLE_FIELDS, bench, table_csv, workload_warnings
from contactgnn.harness.dataset import (
    DatasetError,
    load_dataset,
    save_dataset,
    split_simulations,
)
from contactgnn.harness.jsonio import dumps, read_json
from contactgnn.harness.rollout import rollout
from contactgnn.harness.scenes import (
    K_CHOICES,
    Scene,
    SceneError,
    SceneSpec,
    generate_scene,
    membrane_scene,
    parabola_dataset,
    random_micro,
)
from contactgnn.harness.train import TrainConfig, TrainingError, resolve_gnn_config, train
from contactgnn.mesh_graph import split_counts
from contactgnn.surrogate import TargetOracle, init_params, integrate_step


def test_jsonio_exact_floats():
    x = 0.1 + 0.2
    assert json.loads(dumps({"x": x}))["x"] == x
    assert dumps(np.array([1.5, np.inf]))


def test_split_by_simulation():
    ids = [f"s{i}" for i in range(23)]
    sp = split_simulations(ids, 0)
    assert [len(sp[k]) for k in ("train", "val", "test")] == list(split_counts(23)) == [19, 2, 2]
    assert sorted(sum(sp.values(), [])) == sorted(ids)
    assert sp == split_simulations(ids, 0) and sp != split_simulations(ids, 1)


def test_dataset_round_trip_bit_identical(tmp_path, small_membrane_dataset):
    ds = small_membrane_dataset
    save_dataset(tmp_path / "d", ds)
    back = load_dataset(tmp_path / "d")
    assert back.meta.split == ds.meta.split and back.sim_split == ds.sim_split
    assert len(back.samples) == len(ds.samples)
    for a, b in zip(ds.samples, back.samples):
        for x, y in ((a.g, b.g), (a.nodes.r, b.nodes.r), (a.nodes.v, b.nodes.v), (a.nodes.a, b.nodes.a),
                     (a.targets, b.targets), (a.mesh_edges, b.mesh_edges), (a.world_edges, b.world_edges),
                     (a.world_edge_feats, b.world_edge_feats)):
            assert np.array_equal(x, y)
    assert back.meta.dt == 0.1


def test_terminal_step_synthesised(small_membrane_dataset):
    ds = small_membrane_dataset
    for sim in ds.sims:
        samples = ds.sim_samples(sim)
        assert len(samples) == 5
        last, prev = samples[-1], samples[-2]
        assert last.dt == 0.0 and not last.targets.any()
        nxt = integrate_step(prev.nodes, prev.targets, prev.dt)
        assert np.array_equal(last.nodes.r, nxt.r)


def test_missing_step_file_error(tmp_path, small_membrane_dataset):
    save_dataset(tmp_path / "d", small_membrane_dataset)
    (tmp_path / "d" / "steps" / "sim003" / "2.json").unlink()
    with pytest.raises(DatasetError, match=r"sim 'sim003' step 2"):
        load_dataset(tmp_path / "d")


def test_bad_field_error_names_file_and_field(tmp_path, small_membrane_dataset):
    save_dataset(tmp_path / "d", small_membrane_dataset)
    p = tmp_path / "d" / "steps" / "sim001" / "0.json"
    rec = read_json(p)
    rec["v"] = rec["v"][:-1]
    p.write_text(json.dumps(rec))
    with pytest.raises(DatasetError, match=r"0\.json: field 'v' has shape"):
        load_dataset(tmp_path / "d")


def test_small_dt_kept(tmp_path, small_membrane_dataset):
    ds = small_membrane_dataset
    save_dataset(tmp_path / "d", ds)
    meta = read_json(tmp_path / "d" / "meta.json")
    meta["dt"] = 0.025
    (tmp_path / "d" / "meta.json").write_text(json.dumps(meta))
    assert load_dataset(tmp_path / "d").meta.dt == 0.025


def test_scene_generators_deterministic(tmp_path):
    for gen in ("collinear-edges", "parabola-sheets", "undulating-membranes"):
        spec = SceneSpec(gen, n_sims=3, n_steps=2)
        a, b = generate_scene(spec)["scene"], generate_scene(spec)["scene"]
        ta, tb = a.combined()[0], b.combined()[0]
        assert np.array_equal(ta.r0, tb.r0) and np.array_equal(ta.v, tb.v)
        a.save(tmp_path / f"{gen}.json")
        c = Scene.load(tmp_path / f"{gen}.json").combined()[0]
        assert np.array_equal(c.r0, ta.r0) and np.array_equal(c.v, ta.v)
    r1 = random_micro(SceneSpec("random-micro", n_scenes=5, seed=2))
    r2 = random_micro(SceneSpec("random-micro", n_scenes=5, seed=2))
    assert all(np.array_equal(x.combined()[0].v, y.combined()[0].v) for x, y in zip(r1, r2))


def test_scene_spec_errors():
    with pytest.raises(SceneError, match="half the gap"):
        SceneSpec("undulating-membranes", A=0.2, c3=0.1)
    with pytest.raises(SceneError, match="unknown generator"):
        SceneSpec("cubes")
    with pytest.raises(SceneError, match="unknown scene spec fields"):
        SceneSpec.from_dict({"generator": "collinear-edges", "sped": 1})


def test_membrane_k_values_from_allowed_set(small_membrane_dataset):
    from contactgnn.harness.scenes import membrane_sims

    for sim in membrane_sims(SceneSpec("undulating-membranes", n_sims=20)):
        assert all(k in K_CHOICES for k in sim.k)


def test_membrane_contact_field_asymmetric():
    spec = SceneSpec("undulating-membranes", k1u=np.pi, k2u=np.pi, k1l=2 * np.pi, k2l=4 * np.pi)
    scene = membrane_scene(spec)
    traj, tris, body = scene.combined()
    field = detect_contacts(traj, tris, body)
    off = scene.triangle_offsets()
    dense = field.to_dense()
    upper, lower = dense[:off[1]], dense[off[1]:]
    assert field.n_events > 0
    assert upper.sum() > 0 and lower.sum() > 0
    assert not np.allclose(np.sort(upper), np.sort(lower))


def test_membrane_records_follow_integrator(small_membrane_dataset):
    ds = small_membrane_dataset
    for sim in ds.sims:
        s = ds.sim_samples(sim)
        for a, b in zip(s[:-1], s[1:]):
            nxt = integrate_step(a.nodes, a.targets, a.dt)
            assert np.array_equal(nxt.r, b.nodes.r) and np.array_equal(nxt.v, b.nodes.v)


def test_parabola_dataset_shapes():
    meta, mesh, records, split = parabola_dataset(SceneSpec("parabola-sheets", n_sims=10, n_steps=3))
    assert meta.n_g == 1 and len(records) == 10
    assert all(len(r) == 3 for r in records.values())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_schedule=[(5, 1e-3)])
    with pytest.raises(ValueError):
        TrainConfig(mode="C")
    with pytest.raises(ValueError):
        TrainConfig(mode="DC", epochs=10, contact_activation_epoch=10)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"epoch": 3})
    cfg = TrainConfig(lr_schedule=[(0, 1e-2), (5, 1e-3)])
    assert cfg.lr_at(4) == 1e-2 and cfg.lr_at(5) == 1e-3
    assert resolve_gnn_config("tiny", 4).graph_dim == 4
    assert resolve_gnn_config({"preset": "tiny", "k": 2}, 3).k == 2


def test_d_and_dc_identical_before_activation(tmp_path, small_membrane_dataset):
    ds = small_membrane_dataset
    before = [s.nodes.r.copy() for s in ds.samples]
    d = train(TrainConfig(epochs=5, mode="D", contact_activation_epoch=3, batch_size=8, checkpoint_every=1),
              ds, "tiny")
    dc = train(TrainConfig(epochs=5, mode="DC", contact_activation_epoch=3, batch_size=8, checkpoint_every=1),
               ds, "tiny", out_dir=tmp_path)
    for e in range(3):
        assert dumps(d.history[e]) == dumps(dc.history[e])
        assert all(np.array_equal(a, b) for a, b in zip(d.checkpoints[e], dc.checkpoints[e]))
    assert not all(np.array_equal(a, b) for a, b in zip(d.checkpoints[4], dc.checkpoints[4]))
    assert dc.history[3]["mode"] == "DC" and dc.w_c > 0
    # the contact term joins at activation: the total jumps
    assert dc.history[3]["val_L"] > d.history[3]["val_L"]
    assert all(np.isnan(r["train_L_c"]) for r in d.history)
    assert all(r["train_L"] == r["train_L_d"] for r in d.history)
    assert all(np.array_equal(a, s.nodes.r) for a, s in zip(before, ds.samples))
    assert (tmp_path / "checkpoint_final.bin").exists() and (tmp_path / "checkpoint_00002.bin").exists()
    assert (tmp_path / "history.csv").read_text().splitlines()[0].startswith("epoch,lr,mode")


def test_train_rejects_empty_split(small_membrane_dataset):
    import copy

    ds = copy.copy(small_membrane_dataset)
    ds.meta = copy.copy(ds.meta)
    ds.meta.split = {"train": [], "val": [], "test": []}
    with pytest.raises(TrainingError):
        train(TrainConfig(epochs=1), ds)


@pytest.mark.parametrize("mode", ["tf", "self"])
def test_oracle_rollout_has_zero_error(small_membrane_dataset, mode):
    rep, preds = rollout(TargetOracle(), small_membrane_dataset, "test", mode)
    assert rep.error_stats["max"] == 0.0 and rep.position_loss_stats["max"] == 0.0
    for sim in small_membrane_dataset.sim_split["test"]:
        truth = np.stack([s.nodes.r for s in small_membrane_dataset.sim_samples(sim)])
        assert np.array_equal(preds[sim], truth)


def test_self_rollout_accumulated_error_non_decreasing(small_membrane_dataset):
    model = init_params(resolve_gnn_config("tiny", 4), 0)
    rep, _ = rollout(model, small_membrane_dataset, "train", "self")
    for sim, d in rep.per_sim.items():
        assert np.all(np.diff(d["Xi_M"]) >= 0)
    assert np.all(np.diff(rep.common["Xi_bar_N"]) >= 0)
    assert rep.error_stats["q1"] <= rep.error_stats["median"] <= rep.error_stats["q3"]


def test_rollout_mode_error(small_membrane_dataset):
    with pytest.raises(ValueError):
        rollout(TargetOracle(), small_membrane_dataset, "test", "free")


def test_bench_report_format():
    scene = membrane_scene(SceneSpec("undulating-membranes", resolution=5))
    rep = bench(scene, 3, n_steps=2, problem="membrane")
    assert set(rep["phases_s"]) == {"broad", "narrow", "response", "forward", "simulation"}
    for v in rep["phases_s"].values():
        assert len(v["samples"]) == 3 and v["min"] <= v["median"] <= v["max"]
    assert {"platform", "cpu_count", "torch"} <= set(rep["machine"])
    lines = table_csv(rep).splitlines()
    assert lines[0] == ",".join(TABLE_FIELDS) and len(lines) == 2
    assert isinstance(workload_warnings(rep, rep), list)
    with pytest.raises(ValueError, match="at least 3"):
        bench(scene, 2)
