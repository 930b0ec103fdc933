"""Desk-scale training with dynamic-only (D) and dynamic+contact (DC) modes."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from ..losses_metrics import LossWeights
from ..surrogate.batch import GraphBatch, Normalizer
from ..surrogate.checkpoint import save_checkpoint
from ..surrogate.model import PRESETS, GnnConfig, init_params
from ..surrogate.objective import LossContext, compute_losses
from .dataset import Dataset
from .jsonio import write_json


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 16
    lr_schedule: list = field(default_factory=lambda: [(0, 1e-3)])
    weight_decay: float = 0.0
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    mode: str = "D"
    contact_activation_epoch: int = 100
    w_d: float = 1.0
    w_c: Optional[float] = None  # None: auto-scale at activation
    w_c_eps: float = 1e-12
    seed: int = 0
    normalize: bool = False
    checkpoint_every: int = 0  # 0: final checkpoint only

    def __post_init__(self):
        self.lr_schedule = [(int(e), float(r)) for e, r in self.lr_schedule]
        epochs = [e for e, _ in self.lr_schedule]
        if not epochs or epochs[0] != 0 or any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("lr_schedule epochs must start at 0 and strictly increase")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.mode not in ("D", "DC"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "DC" and not 0 <= self.contact_activation_epoch < self.epochs:
            raise ValueError("contact_activation_epoch must be below epochs in DC mode")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("epochs and batch_size must be positive")

    def lr_at(self, epoch: int) -> float:
        rate = self.lr_schedule[0][1]
        for e, r in self.lr_schedule:
            if epoch >= e:
                rate = r
        return rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


def resolve_gnn_config(spec, graph_dim: int) -> GnnConfig:
    """Preset name or dict of :class:`GnnConfig` fields; ``graph_dim`` follows the dataset."""
    if spec is None:
        spec = "tiny"
    if isinstance(spec, str):
        if spec not in PRESETS:
            raise ValueError(f"unknown preset {spec!r}")
        d = PRESETS[spec].to_dict()
    else:
        d = dict(spec)
        if "preset" in d:
            base = PRESETS[d.pop("preset")].to_dict()
            base.update(d)
            d = base
    d["graph_dim"] = graph_dim
    return GnnConfig.from_dict(d)


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list
    checkpoints: dict  # epoch -> list of parameter arrays
    normalizer: Optional[Normalizer]
    w_c: float
    wall_time: float

    HISTORY_FIELDS = ("epoch", "lr", "mode", "w_c", "train_L", "train_L_d", "train_L_c", "train_L_p",
                      "val_L", "val_L_d", "val_L_c", "val_L_p")

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.HISTORY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def _batches(samples, size, normalizer):
    return [GraphBatch.collate(samples[i:i + size], normalizer) for i in range(0, len(samples), size)]


def _evaluate(model, batches, weights, mode, ctx) -> dict:
    sums = {"L": 0.0, "L_d": 0.0, "L_c": 0.0, "L_p": 0.0}
    n = 0
    with torch.no_grad():
        for b in batches:
            res = compute_losses(model, b, weights, mode, ctx)
            for k in sums:
                if res.get(k) is not None:
                    sums[k] += float(res[k].detach()) * b.n_graphs
            n += b.n_graphs
    out = {k: v / max(n, 1) for k, v in sums.items()}
    if mode == "D":
        out["L_c"] = float("nan")
    return out


def snapshot(model) -> list:
    return [p.detach().numpy().copy() for p in model.parameters()]


def train(cfg: TrainConfig, ds: Dataset, gnn=None, out_dir=None, log: Optional[Callable] = None) -> TrainResult:
    """Adam with weight decay, per-batch gradient-norm clipping and a step learning-rate schedule.

    In DC mode the contact term joins at ``contact_activation_epoch``; unless
    ``w_c`` is given it is set there to ``L_d / max(L_c, w_c_eps)`` over the
    training split. The dataset is only read.
    """
    t_start = time.perf_counter()
    train_s = ds.split_samples("train")
    val_s = ds.split_samples("val")
    if not train_s:
        raise TrainingError("dataset has an empty training split")
    gcfg = gnn if isinstance(gnn, GnnConfig) else resolve_gnn_config(gnn, 2 + ds.meta.n_g)
    torch.manual_seed(cfg.seed)
    model = init_params(gcfg, cfg.seed)
    normalizer = Normalizer.fit(train_s) if cfg.normalize else None
    ctx = LossContext(ds.mesh.triangles, ds.meta.l_c, ds.mesh.body)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(train_s))
    train_b = _batches([train_s[i] for i in order], cfg.batch_size, normalizer)
    val_b = _batches(val_s, cfg.batch_size, normalizer)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_at(0), eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    w_c = 0.0
    history, checkpoints = [], {}
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        mode = "DC" if cfg.mode == "DC" and epoch >= cfg.contact_activation_epoch else "D"
        if mode == "DC" and epoch == cfg.contact_activation_epoch:
            if cfg.w_c is not None:
                w_c = float(cfg.w_c)
            else:
                probe = _evaluate(model, train_b, LossWeights(cfg.w_d, 0.0), "DC", ctx)
                w_c = probe["L_d"] / max(probe["L_c"], cfg.w_c_eps)
        weights = LossWeights(cfg.w_d, w_c if mode == "DC" else 0.0)
        sums = {"L": 0.0, "L_d": 0.0, "L_c": 0.0, "L_p": 0.0}
        n = 0
        for bi in rng.permutation(len(train_b)):
            b = train_b[bi]
            opt.zero_grad(set_to_none=True)
            res = compute_losses(model, b, weights, mode, ctx)
            if not torch.isfinite(res["L"]):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {int(bi)}")
            res["L"].backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            opt.step()
            for k in sums:
                if res.get(k) is not None:
                    sums[k] += float(res[k].detach()) * b.n_graphs
            n += b.n_graphs
        tr = {k: v / n for k, v in sums.items()}
        if mode == "D":
            tr["L_c"] = float("nan")
        va = _evaluate(model, val_b, weights, mode, ctx) if val_b else {k: float("nan") for k in sums}
        row = {"epoch": epoch, "lr": lr, "mode": mode, "w_c": weights.w_c}
        row.update({f"train_{k}": v for k, v in tr.items()})
        row.update({f"val_{k}": v for k, v in va.items()})
        history.append(row)
        if log is not None:
            log(row)
        last = epoch == cfg.epochs - 1
        if last or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0):
            checkpoints[epoch] = snapshot(model)
            if out_dir is not None:
                extra = {"epoch": epoch, "train_config": cfg.to_dict(),
                         "normalizer": normalizer.to_dict() if normalizer else None}
                name = "checkpoint_final.bin" if last else f"checkpoint_{epoch:05d}.bin"
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                save_checkpoint(Path(out_dir) / name, model, cfg.seed, extra)
    result = TrainResult(model, history, checkpoints, normalizer, w_c, time.perf_counter() - t_start)
    if out_dir is not None:
        write_json(Path(out_dir) / "history.json", {"history": history, "w_c": w_c, "wall_time_s": result.wall_time})
        (Path(out_dir) / "history.csv").write_text(result.history_csv())
    return result


def is_finite(x) -> bool:
    return isinstance(x, float) and math.isfinite(x)
