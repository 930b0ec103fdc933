"""Training losses and evaluation metrics.

The reductions work on numpy arrays; :func:`dynamic_loss`,
:func:`position_loss` and :func:`total_loss` also accept torch tensors.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    w_d: float = 1.0
    w_c: float = 0.0

    def __post_init__(self):
        if self.w_d < 0 or self.w_c < 0:
            raise ValueError("loss weights must be non-negative")
        if self.w_d == 0 and self.w_c == 0:
            raise ValueError("loss weights cannot both be zero")


def _check_shapes(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def dynamic_loss(y_hat, y):
    """Mean squared acceleration error over graphs, nodes and the 3 components."""
    _check_shapes(y_hat, y)
    d = y_hat - y
    return (d * d).mean()


def contact_loss(fields, l_c: float) -> float:
    """Mean of ``|r_i| / l_c`` over every triangle of every graph.

    ``fields`` is one :class:`~contactgnn.ccd.ContactField` or a sequence of
    them; triangles without contact count in the denominator.
    """
    if not l_c > 0:
        raise ValueError("l_c must be positive")
    if not isinstance(fields, (list, tuple)):
        fields = [fields]
    num = sum(float(np.abs(f.values / l_c).sum()) for f in fields)
    den = sum(f.n_triangles for f in fields)
    return num / den if den else 0.0


def total_loss(L_d, L_c, weights: LossWeights):
    return weights.w_d * L_d + weights.w_c * L_c


def position_loss(dr_hat, dr, l_c: float):
    """Mean absolute displacement-step error per component, divided by ``l_c``."""
    if not l_c > 0:
        raise ValueError("l_c must be positive")
    _check_shapes(dr_hat, dr)
    d = dr_hat - dr
    return abs(d).mean() / l_c


def error_set(dr_hat, dr, l_c: float) -> np.ndarray:
    """Per-node Euclidean norm of ``(dr - dr_hat) / l_c``."""
    dr_hat = np.asarray(dr_hat, dtype=np.float64)
    dr = np.asarray(dr, dtype=np.float64)
    _check_shapes(dr_hat, dr)
    xi = (dr - dr_hat) / l_c
    return np.sqrt((xi * xi).sum(axis=-1))


def quartile_stats(values) -> dict:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if len(v) == 0:
        return {"min": float("nan"), "q1": float("nan"), "median": float("nan"), "q3": float("nan"),
                "max": float("nan"), "mean": float("nan"), "count": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": float(v.max()), "mean": float(v.mean()), "count": int(len(v))}


def accumulate_errors(errors, steps=None) -> dict:
    """Accumulated errors of one simulation.

    ``errors`` is (n_graphs, n_nodes) in time order, ``steps`` the optional
    step numbers used to verify the ordering. ``Xi_Mi[M-1] = sum_{N <= M-1} e_Ni``
    so the first entry is zero.
    """
    e = np.asarray(errors, dtype=np.float64)
    if e.ndim != 2:
        raise ValueError("errors must be (n_graphs, n_nodes)")
    if steps is not None:
        steps = np.asarray(steps)
        if len(steps) != len(e) or np.any(np.diff(steps) <= 0):
            raise ValueError("errors are not in increasing time order")
    Xi_Mi = np.zeros_like(e)
    if len(e) > 1:
        Xi_Mi[1:] = np.cumsum(e[:-1], axis=0)
    return {
        "Xi_Mi": Xi_Mi,
        "Xi_M": Xi_Mi.mean(axis=1),
        "e_bar_N": e.mean(axis=1),
        "e_bar": float(e.mean()) if e.size else 0.0,
        "Xi_bar_N": Xi_Mi.mean(axis=1),
        "Xi_bar": float(Xi_Mi.mean()) if e.size else 0.0,
    }


def common_slice_averages(per_sim_errors: Sequence[np.ndarray]) -> dict:
    """Cross-simulation per-step averages restricted to the least common number of steps."""
    if not per_sim_errors:
        return {"n_common": 0, "e_bar_N": np.zeros(0), "Xi_bar_N": np.zeros(0)}
    n_common = min(len(e) for e in per_sim_errors)
    acc = [accumulate_errors(np.asarray(e)[:n_common]) for e in per_sim_errors]
    e_stack = np.stack([np.asarray(e)[:n_common] for e in per_sim_errors])  # (sims, N, nodes)
    xi_stack = np.stack([a["Xi_Mi"] for a in acc])
    return {
        "n_common": n_common,
        "e_bar_N": e_stack.mean(axis=(0, 2)),
        "Xi_bar_N": xi_stack.mean(axis=(0, 2)),
    }


@dataclass
class MetricReport:
    """Per-graph losses, error-set statistics and accumulated errors for one split."""

    split: str
    rows: list = field(default_factory=list)
    error_stats: dict = field(default_factory=dict)
    position_loss_stats: dict = field(default_factory=dict)
    contact_loss_stats: dict = field(default_factory=dict)
    per_sim: dict = field(default_factory=dict)
    common: dict = field(default_factory=dict)

    CSV_FIELDS = ("sim", "step", "t", "position_loss", "contact_loss", "e_mean", "e_q1", "e_median", "e_q3",
                  "e_max", "Xi_M")

    @classmethod
    def build(cls, split: str, graphs: Iterable[dict]) -> "MetricReport":
        """``graphs`` items hold sim, step, t, position_loss, contact_loss and errors (per node)."""
        graphs = list(graphs)
        rows = []
        by_sim: dict = {}
        for gr in graphs:
            by_sim.setdefault(gr["sim"], []).append(gr)
        per_sim = {}
        sim_errors = []
        for sim, items in by_sim.items():
            items.sort(key=lambda d: d["step"])
            e = np.stack([np.asarray(d["errors"]) for d in items])
            acc = accumulate_errors(e, [d["step"] for d in items])
            sim_errors.append(e)
            for d, xi in zip(items, acc["Xi_M"]):
                st = quartile_stats(d["errors"])
                rows.append({
                    "sim": sim, "step": int(d["step"]), "t": float(d.get("t", 0.0)),
                    "position_loss": float(d["position_loss"]),
                    "contact_loss": float(d.get("contact_loss", float("nan"))),
                    "e_mean": st["mean"], "e_q1": st["q1"], "e_median": st["median"], "e_q3": st["q3"],
                    "e_max": st["max"], "Xi_M": float(xi),
                })
            per_sim[sim] = {
                "n_graphs": len(items),
                "e_bar": acc["e_bar"], "Xi_bar": acc["Xi_bar"],
                "e_bar_N": acc["e_bar_N"].tolist(), "Xi_M": acc["Xi_M"].tolist(),
                "position_loss_mean": float(np.mean([d["position_loss"] for d in items])),
                "contact_loss_mean": float(np.mean([d.get("contact_loss", np.nan) for d in items])),
            }
        common = common_slice_averages(sim_errors)
        all_e = np.concatenate([np.asarray(d["errors"]).reshape(-1) for d in graphs]) if graphs else []
        return cls(
            split=split,
            rows=rows,
            error_stats=quartile_stats(all_e),
            position_loss_stats=quartile_stats([r["position_loss"] for r in rows]),
            contact_loss_stats=quartile_stats([r["contact_loss"] for r in rows if not np.isnan(r["contact_loss"])]),
            per_sim=per_sim,
            common={"n_common": int(common["n_common"]), "e_bar_N": np.asarray(common["e_bar_N"]).tolist(),
                    "Xi_bar_N": np.asarray(common["Xi_bar_N"]).tolist()},
        )

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "error_stats": self.error_stats,
            "position_loss_stats": self.position_loss_stats,
            "contact_loss_stats": self.contact_loss_stats,
            "per_sim": self.per_sim,
            "common_time_slice": self.common,
            "graphs": self.rows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()
