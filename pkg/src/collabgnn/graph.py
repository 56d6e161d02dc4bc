"""Graph containers, symmetric adjacency normalization and batching."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, segment_mean
from .errors import ShapeError, ValidationError


def _edge_array(edges, n: int) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if np.any(arr[:, 0] >= arr[:, 1]):
        raise ValidationError("edges must be stored as (i, j) pairs with i < j")
    if arr.min() < 0 or arr.max() >= n:
        raise ValidationError(f"edge index out of range for {n} nodes")
    if len(np.unique(arr, axis=0)) != len(arr):
        raise ValidationError("duplicate edges")
    return arr


def normalized_adjacency(n: int, edges: np.ndarray) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 for an undirected 0/1 edge list over ``n`` nodes."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    i, j = edges[:, 0], edges[:, 1]
    degree = 1.0 + np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    loops = np.arange(n)
    rows = np.concatenate([loops, i, j])
    cols = np.concatenate([loops, j, i])
    values = 1.0 / np.sqrt(degree[rows] * degree[cols])
    return sp.csr_matrix((values, (rows, cols)), shape=(n, n))


@dataclass(frozen=True, eq=False)
class Graph:
    """Node features plus an undirected edge list for one modality of one sample."""

    node_features: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.node_features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValidationError(f"node features must be a nonempty N x C matrix, got shape {x.shape}")
        object.__setattr__(self, "node_features", x)
        object.__setattr__(self, "edges", _edge_array(self.edges, x.shape[0]))

    @property
    def node_count(self) -> int:
        return self.node_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        return normalized_adjacency(self.node_count, self.edges)


def normalize_adjacency(g: Graph) -> sp.csr_matrix:
    return g.adjacency


@dataclass(frozen=True, eq=False)
class PairedSample:
    id: str
    image_graph: Graph
    text_graph: Graph
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"sample {self.id!r}: label must be 0 or 1, got {self.label!r}")


@dataclass(eq=False)
class GraphBatch:
    """Several graphs stacked into one block-diagonal graph.

    ``ptr`` holds node offsets: graph ``g`` owns rows ``ptr[g]:ptr[g+1]``.
    ``x`` is None for batches that only describe topology (after pooling
    the features live in tensors owned by the forward pass).
    """

    x: np.ndarray | None
    edges: np.ndarray
    ptr: np.ndarray
    adjacency: sp.csr_matrix
    _subgraphs: dict = field(default_factory=dict, repr=False)

    @property
    def num_graphs(self) -> int:
        return len(self.ptr) - 1

    @property
    def num_nodes(self) -> int:
        return int(self.ptr[-1])

    @cached_property
    def graph_id(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_graphs), np.diff(self.ptr))

    def subgraph(self, keep: np.ndarray) -> GraphBatch:
        """Induced subgraph on ``keep`` (sorted global node indices), renormalized."""
        keep = np.asarray(keep, dtype=np.int64)
        key = keep.tobytes()
        if key not in self._subgraphs:
            self._subgraphs[key] = self._induce(keep)
        return self._subgraphs[key]

    def _induce(self, keep: np.ndarray) -> GraphBatch:
        remap = np.full(self.num_nodes, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        e = remap[self.edges]
        e = e[(e[:, 0] >= 0) & (e[:, 1] >= 0)]
        counts = np.bincount(self.graph_id[keep], minlength=self.num_graphs)
        ptr = np.concatenate([[0], np.cumsum(counts)])
        x = None if self.x is None else self.x[keep]
        return GraphBatch(x=x, edges=e, ptr=ptr, adjacency=normalized_adjacency(len(keep), e))


def batch_graphs(graphs: Sequence[Graph]) -> GraphBatch:
    if not graphs:
        raise ValidationError("cannot batch an empty list of graphs")
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise ValidationError(f"mixed feature dimensions in batch: {sorted(dims)}")
    counts = np.array([g.node_count for g in graphs])
    ptr = np.concatenate([[0], np.cumsum(counts)])
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, ptr[:-1])], axis=0)
    adjacency = sp.block_diag([g.adjacency for g in graphs], format="csr")
    x = np.concatenate([g.node_features for g in graphs], axis=0)
    return GraphBatch(x=x, edges=edges.reshape(-1, 2), ptr=ptr, adjacency=adjacency)


def per_graph_center(batch: GraphBatch, features: Tensor) -> Tensor:
    """Mean feature row of every graph in the batch (G x C)."""
    if features.shape[0] != batch.num_nodes:
        raise ShapeError(f"features have {features.shape[0]} rows, batch has {batch.num_nodes} nodes")
    return segment_mean(features, batch.ptr)
