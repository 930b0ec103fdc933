"""``contactgnn`` command line.

Every command writes JSON and CSV into ``--out`` (default: the current
directory). Failures exit nonzero with a JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .jsonio import read_json, write_json


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def _csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_gen_scene(args):
    from .scenes import SceneSpec, generate_scene

    spec = SceneSpec.from_dict(read_json(args.spec))
    out = _out(args)
    res = generate_scene(spec, out)
    rows = []
    if "scene" in res:
        for b in res["scene"].bodies:
            rows.append([b["name"], len(b["r0"]), len(b["triangles"])])
    summary = {"generator": spec.generator, "bodies": [dict(zip(("name", "n_nodes", "n_triangles"), r)) for r in rows]}
    if "scenes" in res:
        summary["n_scenes"] = len(res["scenes"])
    if "dataset" in res:
        summary["dataset"] = str(out / "dataset")
        summary["n_sims"] = len(res["dataset"][2])
    write_json(out / "summary.json", summary)
    _csv(out / "summary.csv", ["name", "n_nodes", "n_triangles"], rows)
    return summary


def cmd_detect(args):
    from ..ccd import CcdConfig, detect_contacts
    from .scenes import Scene

    scene = Scene.load(args.scene)
    traj, tris, body = scene.combined()
    field = detect_contacts(traj, tris, body, CcdConfig(modified_ee=not args.unmodified_ee))
    out = _out(args)
    events = [e.__dict__ for e in field.event_list()]
    offsets = scene.triangle_offsets()
    per_body = []
    for b, blk in enumerate(scene.bodies):
        sel = (field.indices >= offsets[b]) & (field.indices < offsets[b + 1])
        per_body.append({"name": blk.get("name", f"body{b}"), "n_contact_triangles": int(sel.sum()),
                         "collision_count": int(field.counts[sel].sum()), "response_sum": float(field.values[sel].sum())})
    write_json(out / "events.json", {"n_candidates": field.candidates, "events": events})
    _csv(out / "events.csv", ["tri_a", "tri_b", "kind", "index", "t_star", "response", "degenerate"],
         [[e["tri_a"], e["tri_b"], e["kind"], e["index"], e["t_star"], e["response"], int(e["degenerate"])]
          for e in events])
    write_json(out / "contact_field.json", {
        "n_triangles": field.n_triangles, "indices": field.indices, "values": field.values, "counts": field.counts,
        "bodies": per_body, "modified_ee": not args.unmodified_ee,
    })
    _csv(out / "contact_field.csv", ["triangle_id", "response"], zip(field.indices.tolist(), field.values.tolist()))
    return {"n_events": field.n_events, "n_contact_triangles": len(field.indices), "bodies": per_body}


def cmd_graph(args):
    from .dataset import load_dataset

    ds = load_dataset(args.dataset)
    rows = [[s.sim, s.step, s.t, s.dt, s.n_nodes, len(s.mesh_edges), len(s.world_edges)] for s in ds.samples]
    header = ["sim", "step", "t", "dt", "n_nodes", "n_mesh_edges", "n_world_edges"]
    out = _out(args)
    write_json(out / "graphs.json", {"n_graphs": len(rows), "split": ds.meta.split,
                                     "graphs": [dict(zip(header, r)) for r in rows]})
    _csv(out / "graphs.csv", header, rows)
    return {"n_graphs": len(rows)}


def cmd_train(args):
    from .dataset import load_dataset
    from .train import TrainConfig, train

    conf = read_json(args.config)
    ds = load_dataset(args.dataset)
    cfg = TrainConfig.from_dict(conf.get("train", {}))
    res = train(cfg, ds, conf.get("gnn", "tiny"), out_dir=_out(args))
    last = res.history[-1]
    return {"epochs": cfg.epochs, "final": last, "w_c": res.w_c, "checkpoint": str(Path(args.out) / "checkpoint_final.bin")}


def _load_model(path):
    from ..surrogate.batch import Normalizer
    from ..surrogate.checkpoint import load_checkpoint

    model, side = load_checkpoint(path)
    norm = side.get("normalizer")
    return model, (Normalizer.from_dict(norm) if norm else None)


def _report(args, mode, split):
    from .dataset import load_dataset
    from .rollout import rollout

    model, norm = _load_model(args.checkpoint)
    ds = load_dataset(args.dataset)
    if model.cfg.graph_dim != 2 + ds.meta.n_g:
        raise CliError(f"checkpoint expects {model.cfg.graph_dim - 2} globals, dataset has {ds.meta.n_g}")
    report, preds = rollout(model, ds, split, mode, norm)
    out = _out(args)
    stem = f"metrics_{mode}_{split}"
    (out / f"{stem}.json").write_text(report.to_json())
    (out / f"{stem}.csv").write_text(report.to_csv())
    return report, preds, out


def cmd_infer(args):
    report, _, _ = _report(args, "tf", args.split)
    return {"split": args.split, "error_stats": report.error_stats, "position_loss": report.position_loss_stats}


def cmd_rollout(args):
    report, preds, out = _report(args, args.mode, args.split)
    rows = []
    for sim, arr in preds.items():
        for k, pos in enumerate(arr):
            for i, p in enumerate(pos):
                rows.append([sim, k, i, float(p[0]), float(p[1]), float(p[2])])
    _csv(out / f"positions_{args.mode}_{args.split}.csv", ["sim", "step", "node", "x", "y", "z"], rows)
    write_json(out / f"positions_{args.mode}_{args.split}.json", {sim: arr for sim, arr in preds.items()})
    return {"mode": args.mode, "split": args.split, "common_time_slice": report.common}


def cmd_bench(args):
    from .bench import bench, table_csv
    from .scenes import Scene

    scene = Scene.load(args.scene)
    model = _load_model(args.checkpoint)[0] if args.checkpoint else None
    rep = bench(scene, args.reps, model=model, n_steps=args.steps, problem=Path(args.scene).stem)
    out = _out(args)
    write_json(out / "bench.json", rep)
    (out / "bench.csv").write_text(table_csv(rep))
    return {"phases_median_s": {k: v["median"] for k, v in rep["phases_s"].items()}}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="contactgnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-scene", help="generate a scene (and dataset) from a spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_scene)

    s = sub.add_parser("detect", help="continuous collision detection on a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--unmodified-ee", action="store_true", help="count parallel overlapping edges as colliding")
    s.set_defaults(fn=cmd_detect)

    s = sub.add_parser("graph", help="build graphs for a dataset and summarise them")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_graph)

    s = sub.add_parser("train", help="train a surrogate")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("infer", help="teacher-forced one-step metrics on a split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", required=True, choices=("train", "val", "test"))
    s.add_argument("--out", default=".")
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("rollout", help="teacher-forced or self-fed rollout")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--mode", required=True, choices=("tf", "self"))
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--out", default=".")
    s.set_defaults(fn=cmd_rollout)

    s = sub.add_parser("bench", help="timing report")
    s.add_argument("--scene", required=True)
    s.add_argument("--reps", type=int, default=3)
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--checkpoint")
    s.add_argument("--out", default=".")
    s.set_defaults(fn=cmd_bench)
    return p


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        result = args.fn(args)
        print(json.dumps({"status": "ok", "command": args.command, "result": result}, default=_default))
        return 0
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        print(json.dumps({"status": "error", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
