"""Parameter-importance scores and the anchored quadratic penalty.

Importance has two ingredients: the magnitude of the task-loss gradient
per parameter, and the magnitude of the gradient of the squared norm of
the middle layer's attention coefficients (the topology sensitivity).
A task's combined scores are frozen together with a parameter snapshot;
later tasks pay a quadratic penalty for moving anchored parameters.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..engine import (
    GradientMap,
    Tape,
    TapeMode,
    Tensor,
    abs_,
    add,
    backward,
    binary_cross_entropy,
    cross_entropy,
    mul,
    reshape,
    square,
    sub,
    sum_,
)
from ..nn import ForwardContext, GnnModel, ModelError, model_forward
from ..nn.checkpoint import read_blob, write_blob

ArraySet = Dict[str, np.ndarray]


@dataclass
class ImportanceRecord:
    """Frozen post-task state: parameter snapshot plus importance."""

    task_index: int
    snapshot: ArraySet
    importance: ArraySet

    def __post_init__(self):
        if set(self.snapshot) != set(self.importance):
            raise ModelError("snapshot/importance parameter sets differ")
        for name, imp in self.importance.items():
            if imp.shape != self.snapshot[name].shape:
                raise ModelError(f"shape mismatch for '{name}'")
            if np.any(imp < 0):
                raise ModelError(f"negative importance for '{name}'")


def _abs_grads(model: GnnModel, grads: GradientMap) -> ArraySet:
    return {name: np.abs(grads[p].data)
            for name, p in model.named_parameters()}


def task_loss_from_logits(logits: Tensor, ctx: ForwardContext,
                          local_labels: np.ndarray,
                          mask: Optional[np.ndarray]) -> Tensor:
    """Cross entropy over masked nodes, or sigmoid loss per pooled graph."""
    if ctx.node_to_graph is None:
        return cross_entropy(logits, local_labels, mask)
    flat = reshape(logits, (logits.shape[0],))
    return binary_cross_entropy(flat, ctx.graph_labels)


def compute_loss_importance(model: GnnModel, ctx: ForwardContext, task,
                            local_labels: np.ndarray) -> ArraySet:
    """|gradient| of the full-batch training loss, per parameter."""
    params = model.parameters()
    with Tape():
        logits, _ = model_forward(model, ctx, task)
        loss = task_loss_from_logits(logits, ctx, local_labels,
                                     task.train_mask)
        grads = backward(loss, params)
    return _abs_grads(model, grads)


def topo_scalar(model: GnnModel, ctx: ForwardContext, task) -> Tensor:
    """Squared l2 norm of middle-layer attention coefficients on edges
    aggregating into training nodes (all nodes for pooled contexts)."""
    _, snapshot = model_forward(model, ctx, task, want_attention=True)
    mask = task.train_mask if ctx.node_to_graph is None else None
    return snapshot.squared_norm(mask)


def compute_topo_importance(model: GnnModel, ctx: ForwardContext,
                            task) -> ArraySet:
    """|gradient| of the topology scalar; parameters downstream of the
    middle layer are on the tape but off its dependency path, so their
    entries come out exactly zero."""
    params = model.parameters()
    with Tape():
        t = topo_scalar(model, ctx, task)
        grads = backward(t, params)
    return _abs_grads(model, grads)


def combine_importance(model: GnnModel, i_loss: ArraySet, i_ts: ArraySet,
                       lambda_l: float, lambda_t: float,
                       task_index: int) -> ImportanceRecord:
    combined: ArraySet = {}
    for name, p in model.named_parameters():
        a, b = i_loss[name], i_ts[name]
        if a.shape != p.shape or b.shape != p.shape:
            raise ModelError(f"importance shape mismatch for '{name}'")
        combined[name] = lambda_l * a + lambda_t * b
    snapshot = {name: p.data.copy() for name, p in model.named_parameters()}
    return ImportanceRecord(task_index=task_index, snapshot=snapshot,
                            importance=combined)


def twp_penalty(model: GnnModel,
                records: Sequence[ImportanceRecord]) -> Tensor:
    """Sum over records of importance-weighted squared drift from the
    record's snapshot. Zero (a constant) with no records."""
    total: Optional[Tensor] = None
    named = model.named_parameters()
    for rec in records:
        for name, p in named:
            if name not in rec.importance:
                raise ModelError(
                    f"record for task {rec.task_index} lacks '{name}'")
            if rec.importance[name].shape != p.shape:
                raise ModelError(f"record shape mismatch for '{name}'")
            term = sum_(mul(Tensor(rec.importance[name]),
                            square(sub(p, Tensor(rec.snapshot[name])))))
            total = term if total is None else add(total, term)
    return total if total is not None else Tensor(np.asarray(0.0))


def capacity_from_grads(model: GnnModel, f: GradientMap, g: GradientMap,
                        lambda_l: float, lambda_t: float,
                        beta: float) -> Tensor:
    """beta * l1 norm of the combined importance built from live,
    differentiable gradient maps."""
    total: Optional[Tensor] = None
    for _, p in model.named_parameters():
        term = add(mul(Tensor(lambda_l), sum_(abs_(f[p]))),
                   mul(Tensor(lambda_t), sum_(abs_(g[p]))))
        total = term if total is None else add(total, term)
    return mul(Tensor(beta), total)


def capacity_regularizer(model: GnnModel, ctx: ForwardContext, task,
                         local_labels: np.ndarray, lambda_l: float,
                         lambda_t: float, beta: float) -> Tensor:
    """The l1 capacity term as a differentiable scalar.

    Must run under an active HIGHER_ORDER tape: both gradient maps are
    recorded with create_graph=True so the returned scalar supports a
    further backward pass.
    """
    params = model.parameters()
    logits, snapshot = model_forward(model, ctx, task, want_attention=True)
    loss = task_loss_from_logits(logits, ctx, local_labels, task.train_mask)
    mask = task.train_mask if ctx.node_to_graph is None else None
    t = snapshot.squared_norm(mask)
    f = backward(loss, params, create_graph=True)
    g = backward(t, params, create_graph=True)
    return capacity_from_grads(model, f, g, lambda_l, lambda_t, beta)


def save_records(records: Sequence[ImportanceRecord], path: str) -> None:
    """Records as a manifest plus one little-endian float64 blob."""
    os.makedirs(path, exist_ok=True)
    arrays = []
    meta = []
    for rec in records:
        names = list(rec.snapshot)
        for name in names:
            arrays.append((f"{rec.task_index}.snap.{name}",
                           rec.snapshot[name]))
            arrays.append((f"{rec.task_index}.imp.{name}",
                           rec.importance[name]))
        meta.append({"task_index": rec.task_index, "params": names})
    index = write_blob(os.path.join(path, "records.bin"), arrays)
    with open(os.path.join(path, "records.json"), "w") as f:
        json.dump({"format": 1, "records": meta, "index": index}, f,
                  indent=1)


def load_records(path: str) -> List[ImportanceRecord]:
    with open(os.path.join(path, "records.json")) as f:
        manifest = json.load(f)
    if manifest.get("format") != 1:
        raise ModelError(
            f"unsupported records format {manifest.get('format')!r}")
    arrays = read_blob(os.path.join(path, "records.bin"),
                       manifest["index"])
    out: List[ImportanceRecord] = []
    for meta in manifest["records"]:
        k = meta["task_index"]
        snap = {name: arrays[f"{k}.snap.{name}"] for name in meta["params"]}
        imp = {name: arrays[f"{k}.imp.{name}"] for name in meta["params"]}
        out.append(ImportanceRecord(task_index=k, snapshot=snap,
                                    importance=imp))
    return out
