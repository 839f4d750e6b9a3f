"""Dataset directory serialization for node-task sequences.

Layout: ``graph.json`` (node count, directed flag, edge list),
``features.csv`` (row i = node i), ``labels.csv`` (one integer per
line), ``tasks.json`` (ordered class partitions with optional explicit
masks). Graph-level sequences are generator-only and not covered by
this format.
"""

from __future__ import annotations

import json
import os
from typing import List, Optional

import numpy as np

from .structures import (
    Graph,
    GraphError,
    TaskSequence,
    TaskSpec,
    TaskType,
    graph_from_edges,
)


class DatasetError(ValueError):
    """A dataset directory failed validation; message names file/line."""


def save_dataset(seq: TaskSequence, path: str) -> None:
    """Write a node-task sequence as a dataset directory.

    Undirected edges are emitted once (src < dst); masks are written as
    explicit node-index lists.
    """
    if seq.task_type is not TaskType.NODE:
        raise DatasetError(
            "only node-task sequences have a directory format; "
            "graph-task sequences are generator-defined")
    os.makedirs(path, exist_ok=True)
    g = seq.graph
    keep = g.edge_src < g.edge_dst
    edges = np.stack([g.edge_src[keep], g.edge_dst[keep]], axis=1)
    with open(os.path.join(path, "graph.json"), "w") as f:
        json.dump({"num_nodes": g.num_nodes, "directed": False,
                   "edges": edges.tolist()}, f)
    with open(os.path.join(path, "features.csv"), "w") as f:
        for row in g.features:
            f.write(",".join("%.17g" % v for v in row) + "\n")
    with open(os.path.join(path, "labels.csv"), "w") as f:
        for v in g.labels:
            f.write(f"{int(v)}\n")
    with open(os.path.join(path, "tasks.json"), "w") as f:
        json.dump({"tasks": [
            {"classes": list(t.classes),
             "train_mask": [int(i) for i in t.train_nodes()],
             "test_mask": [int(i) for i in t.test_nodes()]}
            for t in seq.tasks]}, f)


def _load_json(path: str, name: str) -> dict:
    full = os.path.join(path, name)
    if not os.path.exists(full):
        raise DatasetError(f"{name}: file missing from {path}")
    try:
        with open(full) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{name} line {e.lineno}: {e.msg}") from None


def _parse_mask(raw, num_nodes: int, what: str) -> np.ndarray:
    vals = list(raw)
    mask = np.zeros(num_nodes, dtype=bool)
    if len(vals) == num_nodes and all(v in (0, 1, True, False)
                                      for v in vals):
        mask[:] = np.asarray(vals, dtype=bool)
        return mask
    for v in vals:
        if not isinstance(v, int) or not 0 <= v < num_nodes:
            raise DatasetError(
                f"tasks.json: {what} entry {v!r} is not a node index in "
                f"[0, {num_nodes})")
    mask[vals] = True
    return mask


def load_dataset(path: str, train_fraction: float = 0.6) -> TaskSequence:
    """Read a dataset directory into a validated node-task sequence.

    Tasks lacking explicit masks get a deterministic per-class split:
    the first ``train_fraction`` of each class's nodes in index order
    train, the rest test.
    """
    gspec = _load_json(path, "graph.json")
    for key in ("num_nodes", "directed", "edges"):
        if key not in gspec:
            raise DatasetError(f"graph.json: missing key '{key}'")
    num_nodes = gspec["num_nodes"]
    if not isinstance(num_nodes, int) or num_nodes <= 0:
        raise DatasetError(f"graph.json: bad num_nodes {num_nodes!r}")

    features: List[List[float]] = []
    width: Optional[int] = None
    fpath = os.path.join(path, "features.csv")
    if not os.path.exists(fpath):
        raise DatasetError(f"features.csv: file missing from {path}")
    with open(fpath) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError:
                raise DatasetError(
                    f"features.csv line {lineno}: non-numeric value"
                ) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DatasetError(
                    f"features.csv line {lineno}: expected {width} values, "
                    f"got {len(row)}")
            features.append(row)
    if len(features) != num_nodes:
        raise DatasetError(
            f"features.csv: {len(features)} rows for {num_nodes} nodes")

    labels: List[int] = []
    lpath = os.path.join(path, "labels.csv")
    if not os.path.exists(lpath):
        raise DatasetError(f"labels.csv: file missing from {path}")
    with open(lpath) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise DatasetError(
                    f"labels.csv line {lineno}: not an integer") from None
    if len(labels) != num_nodes:
        raise DatasetError(
            f"labels.csv: {len(labels)} labels for {num_nodes} nodes")
    label_arr = np.asarray(labels, dtype=np.int64)

    try:
        graph = graph_from_edges(num_nodes, gspec["edges"],
                                 np.asarray(features), label_arr,
                                 directed=bool(gspec["directed"]))
    except (GraphError, ValueError) as e:
        raise DatasetError(f"graph.json: {e}") from None

    tspec = _load_json(path, "tasks.json")
    if "tasks" not in tspec or not isinstance(tspec["tasks"], list):
        raise DatasetError("tasks.json: missing 'tasks' list")
    tasks: List[TaskSpec] = []
    for k, entry in enumerate(tspec["tasks"]):
        if "classes" not in entry:
            raise DatasetError(f"tasks.json: task {k} missing 'classes'")
        classes = tuple(int(c) for c in entry["classes"])
        bad = [c for c in classes if c < 0 or c > int(label_arr.max())]
        if bad:
            raise DatasetError(
                f"tasks.json: task {k} classes {bad} exceed the label "
                f"range [0, {int(label_arr.max())}]")
        has_train = "train_mask" in entry and entry["train_mask"] is not None
        has_test = "test_mask" in entry and entry["test_mask"] is not None
        if has_train != has_test:
            raise DatasetError(
                f"tasks.json: task {k} must give both masks or neither")
        if has_train:
            train = _parse_mask(entry["train_mask"], num_nodes,
                                f"task {k} train_mask")
            test = _parse_mask(entry["test_mask"], num_nodes,
                               f"task {k} test_mask")
        else:
            train = np.zeros(num_nodes, dtype=bool)
            test = np.zeros(num_nodes, dtype=bool)
            for c in classes:
                nodes = np.nonzero(label_arr == c)[0]
                n_train = int(round(train_fraction * len(nodes)))
                train[nodes[:n_train]] = True
                test[nodes[n_train:]] = True
        tasks.append(TaskSpec(task_index=k, classes=classes,
                              train_mask=train, test_mask=test))
    try:
        return TaskSequence(task_type=TaskType.NODE, tasks=tasks,
                            graph=graph)
    except GraphError as e:
        raise DatasetError(f"tasks.json: {e}") from None


def sequences_equal(a: TaskSequence, b: TaskSequence) -> bool:
    """Structural equality: same graph arrays, classes, and masks."""
    if a.task_type is not b.task_type or a.num_tasks != b.num_tasks:
        return False
    ga, gb = a.graph, b.graph
    if ga.num_nodes != gb.num_nodes:
        return False
    if not (np.array_equal(ga.row_ptr, gb.row_ptr)
            and np.array_equal(ga.col_idx, gb.col_idx)
            and np.array_equal(ga.features, gb.features)
            and np.array_equal(ga.labels, gb.labels)):
        return False
    for ta, tb in zip(a.tasks, b.tasks):
        if ta.classes != tb.classes:
            return False
        if not (np.array_equal(ta.train_mask, tb.train_mask)
                and np.array_equal(ta.test_mask, tb.test_mask)):
            return False
    return True
