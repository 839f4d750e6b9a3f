"""Graph containers, adjacency normalization, and task sequences.

Graphs are CSR: row i lists the neighbors of node i, both directions
present for undirected input, no self-loops in the raw structure.
Instances are treated as immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np


class GraphError(ValueError):
    """Malformed graph structure or task split."""


class TaskType(Enum):
    NODE = "node"
    GRAPH = "graph"


class Graph:
    """CSR adjacency with per-node features and integer labels.

    ``labels`` carries node classes for node-level tasks; graph-level
    instances use ``graph_label`` (0/1) instead and keep ``labels`` as
    zeros.
    """

    def __init__(self, num_nodes: int, row_ptr: np.ndarray,
                 col_idx: np.ndarray, features: np.ndarray,
                 labels: np.ndarray, graph_label: Optional[int] = None):
        self.num_nodes = int(num_nodes)
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(col_idx, dtype=np.int64)
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.graph_label = graph_label
        self._validate()
        # edge arrays in CSR order: edge e runs col_idx[e] -> dst[e]
        self.edge_dst = np.repeat(np.arange(self.num_nodes, dtype=np.int64),
                                  np.diff(self.row_ptr))
        self.edge_src = self.col_idx

    def _validate(self) -> None:
        n = self.num_nodes
        if n <= 0:
            raise GraphError("graph must have at least one node")
        if self.row_ptr.shape != (n + 1,):
            raise GraphError(f"row_ptr must have length {n + 1}")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != self.col_idx.shape[0]:
            raise GraphError("row_ptr endpoints do not match edge count")
        if np.any(np.diff(self.row_ptr) < 0):
            raise GraphError("row_ptr must be non-decreasing")
        if self.col_idx.size and (
                self.col_idx.min() < 0 or self.col_idx.max() >= n):
            raise GraphError(f"column indices out of range [0, {n})")
        for i in range(n):
            row = self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]
            if np.any(row == i):
                raise GraphError(f"self-loop on node {i}")
            if len(np.unique(row)) != len(row):
                raise GraphError(f"duplicate edges in row {i}")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise GraphError(
                f"features must be [{n} x d], got {self.features.shape}")
        if self.labels.shape != (n,):
            raise GraphError(f"labels must have length {n}")

    @property
    def num_edges(self) -> int:
        return int(self.col_idx.shape[0])

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)


def graph_from_edges(num_nodes: int, edges: Sequence[Tuple[int, int]],
                     features: np.ndarray, labels: np.ndarray,
                     directed: bool = False,
                     graph_label: Optional[int] = None) -> Graph:
    """Build a CSR graph from an edge list, deduplicating.

    Undirected input stores both directions; a directed pair is kept
    as given (row i = targets of i's out-edges).
    """
    pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= num_nodes):
        raise GraphError(f"edge endpoint out of range [0, {num_nodes})")
    if not directed and pairs.size:
        pairs = np.concatenate([pairs, pairs[:, ::-1]], axis=0)
    if pairs.size:
        pairs = np.unique(pairs, axis=0)
        rows, cols = pairs[:, 0], pairs[:, 1]
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    counts = np.bincount(rows, minlength=num_nodes)
    row_ptr = np.concatenate([[0], np.cumsum(counts)])
    return Graph(num_nodes, row_ptr, cols, features, labels, graph_label)


class NormalizedAdjacency:
    """Symmetrically normalized adjacency with self-loops.

    Edge weight is 1/sqrt(deg_i * deg_j) with degrees counted after a
    self-loop is added to every node. The edge arrays therefore include
    one (i, i) entry per node and are the neighborhood structure used
    wherever self-loops are wanted (attention included).
    """

    def __init__(self, graph: Graph):
        n = graph.num_nodes
        deg = graph.degrees() + 1
        src_parts = []
        dst_parts = []
        for i in range(n):
            row = graph.col_idx[graph.row_ptr[i]:graph.row_ptr[i + 1]]
            merged = np.sort(np.concatenate([row, [i]]))
            src_parts.append(merged)
            dst_parts.append(np.full(len(merged), i, dtype=np.int64))
        self.num_nodes = n
        self.edge_src = np.concatenate(src_parts)
        self.edge_dst = np.concatenate(dst_parts)
        counts = np.bincount(self.edge_dst, minlength=n)
        self.row_ptr = np.concatenate([[0], np.cumsum(counts)])
        self.col_idx = self.edge_src
        inv_sqrt = 1.0 / np.sqrt(deg.astype(np.float64))
        self.weights = inv_sqrt[self.edge_dst] * inv_sqrt[self.edge_src]


def normalize_adjacency(graph: Graph) -> NormalizedAdjacency:
    return NormalizedAdjacency(graph)


@dataclass(frozen=True, eq=False)
class TaskSpec:
    """One task: its class set and the train/test membership.

    Node tasks use boolean masks over the shared graph's nodes; graph
    tasks use index lists into the sequence's graph pool.
    """

    task_index: int
    classes: Tuple[int, ...]
    train_mask: Optional[np.ndarray] = None
    test_mask: Optional[np.ndarray] = None
    train_graphs: Tuple[int, ...] = ()
    test_graphs: Tuple[int, ...] = ()

    def train_nodes(self) -> np.ndarray:
        return np.nonzero(self.train_mask)[0]

    def test_nodes(self) -> np.ndarray:
        return np.nonzero(self.test_mask)[0]


@dataclass
class TaskSequence:
    """Ordered disjoint tasks over one shared graph or a graph pool."""

    task_type: TaskType
    tasks: List[TaskSpec]
    graph: Optional[Graph] = None
    graphs: List[Graph] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def feature_dim(self) -> int:
        g = self.graph if self.graph is not None else self.graphs[0]
        return g.features.shape[1]

    @property
    def all_classes(self) -> Tuple[int, ...]:
        out: List[int] = []
        for t in self.tasks:
            out.extend(t.classes)
        return tuple(out)

    def validate(self) -> None:
        if not self.tasks:
            raise GraphError("a task sequence needs at least one task")
        seen: set = set()
        for k, t in enumerate(self.tasks):
            if t.task_index != k:
                raise GraphError(f"task {k} has index {t.task_index}")
            cs = set(t.classes)
            if not cs:
                raise GraphError(f"task {k} has an empty class set")
            if cs & seen:
                raise GraphError(
                    f"task {k} classes {sorted(cs & seen)} reused from an "
                    "earlier task")
            seen |= cs
        if self.task_type is TaskType.NODE:
            if self.graph is None:
                raise GraphError("node tasks need a shared graph")
            labels = self.graph.labels
            for t in self.tasks:
                if t.train_mask is None or t.test_mask is None:
                    raise GraphError(
                        f"task {t.task_index} is missing node masks")
                for name in ("train_mask", "test_mask"):
                    m = getattr(t, name)
                    if m.dtype != np.bool_ or m.shape != (
                            self.graph.num_nodes,):
                        raise GraphError(
                            f"task {t.task_index} {name} must be boolean "
                            f"over {self.graph.num_nodes} nodes")
                if np.any(t.train_mask & t.test_mask):
                    raise GraphError(
                        f"task {t.task_index} train/test masks overlap")
                cs = set(t.classes)
                covered = t.train_mask | t.test_mask
                bad = set(np.unique(labels[covered])) - cs
                if bad:
                    raise GraphError(
                        f"task {t.task_index} masks include labels "
                        f"{sorted(bad)} outside its class set")
        else:
            if not self.graphs:
                raise GraphError("graph tasks need a graph pool")
            used: set = set()
            for t in self.tasks:
                idx = set(t.train_graphs) | set(t.test_graphs)
                if not idx:
                    raise GraphError(f"task {t.task_index} has no graphs")
                if set(t.train_graphs) & set(t.test_graphs):
                    raise GraphError(
                        f"task {t.task_index} train/test graphs overlap")
                if idx & used:
                    raise GraphError(
                        f"task {t.task_index} reuses graphs from an "
                        "earlier task")
                if max(idx) >= len(self.graphs) or min(idx) < 0:
                    raise GraphError(
                        f"task {t.task_index} graph index out of range")
                used |= idx


def merge_graphs(graphs: Sequence[Graph]) -> Tuple[Graph, np.ndarray]:
    """Block-diagonal union of graphs for batched forward passes.

    Returns the merged graph and a node-to-graph id vector aligned with
    its nodes.
    """
    if not graphs:
        raise GraphError("cannot merge zero graphs")
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    col = np.concatenate(
        [g.col_idx + off for g, off in zip(graphs, offsets)])
    ptr_parts = [np.asarray([0], dtype=np.int64)]
    edge_off = 0
    for g in graphs:
        ptr_parts.append(g.row_ptr[1:] + edge_off)
        edge_off += g.num_edges
    row_ptr = np.concatenate(ptr_parts)
    feats = np.concatenate([g.features for g in graphs], axis=0)
    labels = np.concatenate([g.labels for g in graphs])
    merged = Graph(int(offsets[-1]), row_ptr, col, feats, labels)
    node_to_graph = np.repeat(np.arange(len(graphs), dtype=np.int64),
                              [g.num_nodes for g in graphs])
    return merged, node_to_graph
