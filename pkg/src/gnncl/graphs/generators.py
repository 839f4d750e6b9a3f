"""Synthetic task sequences: SBM node splits and rule-labeled graph pools.

All randomness flows through ``numpy.random.default_rng`` seeded with
``[seed, stream]`` sequences, so a fixed seed reproduces edge lists,
features, and splits bit for bit.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from .structures import (
    Graph,
    GraphError,
    TaskSequence,
    TaskSpec,
    TaskType,
    graph_from_edges,
)


def _split_mask(nodes: np.ndarray, num_nodes: int, train_fraction: float,
                rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(nodes)
    n_train = int(round(train_fraction * len(nodes)))
    train = np.zeros(num_nodes, dtype=bool)
    test = np.zeros(num_nodes, dtype=bool)
    train[perm[:n_train]] = True
    test[perm[n_train:]] = True
    return train, test


def generate_sbm_tasks(num_classes: int, classes_per_task: int,
                       nodes_per_class: int, p_in: float, p_out: float,
                       feature_dim: int, noise_sigma: float,
                       seed: int, train_fraction: float = 0.6
                       ) -> TaskSequence:
    """Stochastic-block-model node-classification sequence.

    One graph; class c occupies a contiguous node block and gets
    features drawn around a unit-norm prototype. Tasks partition the
    classes in order, ``classes_per_task`` at a time, each with a
    per-class train/test split (default 60/40).
    """
    if num_classes % classes_per_task != 0:
        raise GraphError(
            f"{num_classes} classes do not divide into tasks of "
            f"{classes_per_task}")
    for name, p in (("p_in", p_in), ("p_out", p_out)):
        if not 0.0 <= p <= 1.0:
            raise GraphError(f"{name}={p} outside [0, 1]")
    if p_in <= p_out:
        raise GraphError("p_in must exceed p_out")

    n = num_classes * nodes_per_class
    labels = np.repeat(np.arange(num_classes), nodes_per_class)

    edge_rng = np.random.default_rng([seed, 0])
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    draw = edge_rng.random((n, n))
    upper = np.triu(draw < prob, k=1)
    src, dst = np.nonzero(upper)
    edges = np.stack([src, dst], axis=1)

    feat_rng = np.random.default_rng([seed, 1])
    protos = feat_rng.normal(size=(num_classes, feature_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    features = protos[labels]
    if noise_sigma > 0:
        features = features + noise_sigma * feat_rng.normal(
            size=(n, feature_dim))

    graph = graph_from_edges(n, edges, features, labels, directed=False)

    split_rng = np.random.default_rng([seed, 2])
    tasks: List[TaskSpec] = []
    for k in range(num_classes // classes_per_task):
        classes = tuple(range(k * classes_per_task,
                              (k + 1) * classes_per_task))
        train = np.zeros(n, dtype=bool)
        test = np.zeros(n, dtype=bool)
        for c in classes:
            tr, te = _split_mask(np.nonzero(labels == c)[0], n,
                                 train_fraction, split_rng)
            train |= tr
            test |= te
        tasks.append(TaskSpec(task_index=k, classes=classes,
                              train_mask=train, test_mask=test))
    return TaskSequence(task_type=TaskType.NODE, tasks=tasks, graph=graph)


RULE_KINDS = ("mean_degree", "edge_density", "max_degree", "triangle_count")


def rule_statistic(graph: Graph, kind: str) -> float:
    """The structural statistic a graph-task labeling rule thresholds."""
    deg = graph.degrees()
    if kind == "mean_degree":
        return float(deg.mean())
    if kind == "edge_density":
        n = graph.num_nodes
        possible = n * (n - 1)
        return float(graph.num_edges / possible) if possible else 0.0
    if kind == "max_degree":
        return float(deg.max())
    if kind == "triangle_count":
        n = graph.num_nodes
        a = np.zeros((n, n))
        a[graph.edge_dst, graph.edge_src] = 1.0
        return float(np.round(np.trace(a @ a @ a) / 6.0))
    raise GraphError(f"unknown rule kind '{kind}'")


def _random_graph(rng: np.random.Generator, num_nodes: int,
                  feature_dim: int) -> Graph:
    p = rng.uniform(0.15, 0.5)
    draw = rng.random((num_nodes, num_nodes))
    upper = np.triu(draw < p, k=1)
    src, dst = np.nonzero(upper)
    edges = np.stack([src, dst], axis=1)
    # constant first channel plus noise: degree information then flows
    # through sum aggregation
    features = rng.normal(scale=0.1, size=(num_nodes, feature_dim))
    features[:, 0] = 1.0
    labels = np.zeros(num_nodes, dtype=np.int64)
    return graph_from_edges(num_nodes, edges, features, labels,
                            directed=False)


def generate_graph_classification_tasks(num_tasks: int, graphs_per_task: int,
                                        nodes_range: Tuple[int, int],
                                        seed: int, feature_dim: int = 4,
                                        train_fraction: float = 0.6
                                        ) -> TaskSequence:
    """Binary graph-classification sequence over random graph pools.

    Task t owns its own ``graphs_per_task`` graphs and labels them 1
    when a task-specific structural statistic exceeds the pool median,
    giving a roughly balanced binary target per task. Task t's class id
    is t (one binary head column per task).
    """
    if num_tasks < 1:
        raise GraphError("need at least one task")
    lo, hi = nodes_range
    if lo < 3 or hi < lo:
        raise GraphError(f"bad nodes_range {nodes_range}")
    graphs: List[Graph] = []
    tasks: List[TaskSpec] = []
    for t in range(num_tasks):
        rng = np.random.default_rng([seed, 10 + t])
        pool = [_random_graph(rng, int(rng.integers(lo, hi + 1)),
                              feature_dim) for _ in range(graphs_per_task)]
        kind = RULE_KINDS[t % len(RULE_KINDS)]
        stats = np.array([rule_statistic(g, kind) for g in pool])
        threshold = float(np.median(stats))
        for g, s in zip(pool, stats):
            g.graph_label = int(s > threshold)
        base = len(graphs)
        graphs.extend(pool)
        idx = np.arange(base, base + graphs_per_task)
        perm = rng.permutation(idx)
        n_train = int(round(train_fraction * graphs_per_task))
        tasks.append(TaskSpec(
            task_index=t, classes=(t,),
            train_graphs=tuple(int(i) for i in perm[:n_train]),
            test_graphs=tuple(int(i) for i in perm[n_train:])))
    return TaskSequence(task_type=TaskType.GRAPH, tasks=tasks, graphs=graphs)
