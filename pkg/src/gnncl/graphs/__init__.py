"""Graph data structures, generators, and dataset serialization."""

from .generators import (
    RULE_KINDS,
    generate_graph_classification_tasks,
    generate_sbm_tasks,
    rule_statistic,
)
from .io import DatasetError, load_dataset, save_dataset, sequences_equal
from .structures import (
    Graph,
    GraphError,
    NormalizedAdjacency,
    TaskSequence,
    TaskSpec,
    TaskType,
    graph_from_edges,
    merge_graphs,
    normalize_adjacency,
)

__all__ = [
    "DatasetError", "Graph", "GraphError", "NormalizedAdjacency",
    "RULE_KINDS", "TaskSequence", "TaskSpec", "TaskType",
    "generate_graph_classification_tasks", "generate_sbm_tasks",
    "graph_from_edges", "load_dataset", "merge_graphs",
    "normalize_adjacency", "rule_statistic", "save_dataset",
    "sequences_equal",
]
