"""GNN models: stacked backbone layers plus a shared class head.

The head covers the union of all tasks' classes; a forward pass returns
logits restricted to one task's columns. The attention coefficients of
the middle layer (native for GAT, synthesized for GCN/GIN) are exposed
as an AttentionSnapshot for sensitivity analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..engine import (
    Tensor,
    add,
    div,
    gather_rows,
    matmul,
    mul,
    scatter_sum,
    segment_softmax,
    sq_l2_norm,
    sum_axis,
    tanh,
)
from ..graphs import (
    Graph,
    NormalizedAdjacency,
    TaskSequence,
    TaskSpec,
    TaskType,
    merge_graphs,
    normalize_adjacency,
)
from .layers import GatLayer, GcnLayer, GinLayer, ModelError, glorot

BACKBONES = ("gcn", "gat", "gin")


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "gat"
    num_layers: int = 2
    hidden_dim: int = 16
    heads: Tuple[int, ...] = (4, 1)
    activation: str = "elu"
    attention_slope: float = 0.2
    gin_eps: float = 0.0
    gin_eps_learnable: bool = False

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ModelError(f"unknown backbone '{self.backbone}'")
        if self.num_layers < 1:
            raise ModelError("num_layers must be >= 1")
        if self.backbone == "gat" and len(self.heads) != self.num_layers:
            raise ModelError(
                f"{self.num_layers} layers need {self.num_layers} head "
                f"counts, got {self.heads}")


@dataclass
class ForwardContext:
    """Precomputed structure for forwarding one (possibly merged) graph."""

    graph: Graph
    adj: NormalizedAdjacency
    node_to_graph: Optional[np.ndarray] = None
    num_graphs: Optional[int] = None
    graph_labels: Optional[np.ndarray] = None

    @classmethod
    def for_graph(cls, graph: Graph) -> "ForwardContext":
        return cls(graph=graph, adj=normalize_adjacency(graph))

    @classmethod
    def for_pool(cls, graphs: Sequence[Graph]) -> "ForwardContext":
        merged, n2g = merge_graphs(graphs)
        labels = np.asarray([g.graph_label for g in graphs],
                            dtype=np.float64)
        return cls(graph=merged, adj=normalize_adjacency(merged),
                   node_to_graph=n2g, num_graphs=len(graphs),
                   graph_labels=labels)


@dataclass
class AttentionSnapshot:
    """Normalized middle-layer coefficients, one 1-D Tensor per head.

    ``edge_dst[e]`` is the aggregating node of coefficient e; each
    (head, node) group sums to 1.
    """

    heads: List[Tensor]
    edge_dst: np.ndarray
    num_nodes: int

    def squared_norm(self, node_mask: Optional[np.ndarray] = None) -> Tensor:
        """Sum of squared coefficients, optionally restricted to edges
        whose aggregating node is selected by ``node_mask``."""
        total: Optional[Tensor] = None
        sel = None
        if node_mask is not None:
            sel = Tensor(node_mask[self.edge_dst].astype(np.float64))
        for coeffs in self.heads:
            term = coeffs if sel is None else mul(coeffs, sel)
            part = sq_l2_norm(term)
            total = part if total is None else add(total, part)
        return total


def nonparam_attention(weight: Tensor, h: Tensor,
                       adj: NormalizedAdjacency) -> AttentionSnapshot:
    """Attention synthesized from a plain projection weight.

    Edge score for aggregating node i and neighbor j is
    (h_i W)^T tanh(h_j W); scores normalize per neighborhood by segment
    softmax, self-loops included.
    """
    hw = matmul(h, weight)
    th = tanh(hw)
    e = adj.edge_src.shape[0]
    scores = sum_axis(mul(gather_rows(hw, adj.edge_dst),
                          gather_rows(th, adj.edge_src)), axis=1)
    coeffs = segment_softmax(scores, adj.edge_dst, adj.num_nodes)
    return AttentionSnapshot(heads=[coeffs], edge_dst=adj.edge_dst,
                             num_nodes=adj.num_nodes)


class GnnModel:
    """Backbone stack plus shared linear head over all classes."""

    def __init__(self, config: ModelConfig, in_dim: int, num_classes: int,
                 rng: np.random.Generator):
        self.config = config
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.layers: List = []
        d = in_dim
        for l in range(config.num_layers):
            d_out = config.hidden_dim
            if config.backbone == "gcn":
                layer = GcnLayer(d, d_out, config.activation, rng)
            elif config.backbone == "gat":
                last = l == config.num_layers - 1
                layer = GatLayer(d, d_out, config.heads[l],
                                 config.activation, rng,
                                 merge="mean" if last else "concat",
                                 slope=config.attention_slope)
            else:
                layer = GinLayer(d, d_out, config.activation, rng,
                                 eps=config.gin_eps,
                                 eps_learnable=config.gin_eps_learnable)
            self.layers.append(layer)
            d = d_out
        self.head_W = glorot(rng, d, num_classes, (d, num_classes))
        self.head_b = Tensor(np.zeros(num_classes), requires_grad=True)

    @property
    def middle_layer_index(self) -> int:
        return math.ceil(self.config.num_layers / 2) - 1

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = []
        for l, layer in enumerate(self.layers):
            for name, p in layer.named_parameters():
                out.append((f"layers.{l}.{name}", p))
        out.append(("head.W", self.head_W))
        out.append(("head.b", self.head_b))
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def middle_weight(self) -> Tensor:
        """The projection used for synthesized attention at the middle
        layer (GCN weight, GIN first affine)."""
        layer = self.layers[self.middle_layer_index]
        if isinstance(layer, GcnLayer):
            return layer.W
        if isinstance(layer, GinLayer):
            return layer.W1
        raise ModelError("GAT layers expose their own attention")

    def forward_embeddings(self, ctx: ForwardContext,
                           want_attention: bool = False
                           ) -> Tuple[Tensor, Optional[AttentionSnapshot]]:
        h = Tensor(ctx.graph.features)
        snapshot: Optional[AttentionSnapshot] = None
        for l, layer in enumerate(self.layers):
            if want_attention and l == self.middle_layer_index:
                if isinstance(layer, GatLayer):
                    h, alphas = layer.forward_with_attention(h, ctx)
                    snapshot = AttentionSnapshot(
                        heads=alphas, edge_dst=ctx.adj.edge_dst,
                        num_nodes=ctx.adj.num_nodes)
                else:
                    snapshot = nonparam_attention(self.middle_weight(), h,
                                                  ctx.adj)
                    h = layer.forward(h, ctx)
            else:
                h = layer.forward(h, ctx)
        return h, snapshot

    def state_arrays(self) -> List[Tuple[str, np.ndarray]]:
        return [(name, p.data) for name, p in self.named_parameters()]

    def load_state(self, arrays: dict) -> None:
        for name, p in self.named_parameters():
            if name not in arrays:
                raise ModelError(f"missing parameter '{name}'")
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != p.shape:
                raise ModelError(
                    f"parameter '{name}' shape {a.shape} != {p.shape}")
            p.data = a.copy()

    def clone(self) -> "GnnModel":
        twin = GnnModel(self.config, self.in_dim, self.num_classes,
                        np.random.default_rng(0))
        twin.load_state(dict(self.state_arrays()))
        return twin


def class_columns(model: GnnModel, classes: Sequence[int]) -> Tensor:
    """Constant selection matrix picking head columns for ``classes``."""
    for c in classes:
        if not 0 <= c < model.num_classes:
            raise ModelError(
                f"class {c} outside the model's head [0, "
                f"{model.num_classes})")
    sel = np.zeros((model.num_classes, len(classes)))
    for j, c in enumerate(classes):
        sel[c, j] = 1.0
    return Tensor(sel)


def head_logits(model: GnnModel, ctx: ForwardContext,
                emb: Tensor) -> Tensor:
    """Full head logits from embeddings; pooled contexts mean-pool per
    graph first."""
    if ctx.node_to_graph is not None:
        counts = np.bincount(ctx.node_to_graph,
                             minlength=ctx.num_graphs).astype(np.float64)
        emb = div(scatter_sum(emb, ctx.node_to_graph, ctx.num_graphs),
                  Tensor(counts[:, None]))
    return add(matmul(emb, model.head_W), model.head_b)


def model_forward(model: GnnModel, ctx: ForwardContext, task: TaskSpec,
                  want_attention: bool = False
                  ) -> Tuple[Tensor, Optional[AttentionSnapshot]]:
    """Logits restricted to the task's classes, plus the middle-layer
    attention snapshot when requested.

    Node contexts give per-node logits [N x |classes|]; pooled graph
    contexts give per-graph logits [G x |classes|] via mean pooling.
    """
    emb, snapshot = model.forward_embeddings(ctx, want_attention)
    full = head_logits(model, ctx, emb)
    logits = matmul(full, class_columns(model, task.classes))
    return logits, snapshot
