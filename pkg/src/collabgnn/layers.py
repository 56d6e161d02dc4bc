"""Graph convolution, cross-branch fusion, self-attention pooling and readout."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    add,
    concat_cols,
    matmul,
    mul,
    relu,
    row_select,
    segment_max,
    segment_mean,
    spmm,
    tanh,
)
from .errors import ContractError, ShapeError
from .graph import GraphBatch


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class GCNLayer:
    """ReLU(A_hat H W) with no bias term."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str = "gcn"):
        self.weight = Parameter(glorot(rng, in_dim, out_dim), name=f"{name}.weight")

    def parameters(self) -> dict[str, Tensor]:
        return {self.weight.name: self.weight}

    def __call__(self, adj, h: Tensor) -> Tensor:
        return gcn_forward(self, adj, h)


def gcn_forward(layer: GCNLayer, adj, h: Tensor) -> Tensor:
    if adj.shape[0] != h.shape[0]:
        raise ShapeError(f"adjacency is {adj.shape[0]}x{adj.shape[1]} but features have {h.shape[0]} rows")
    return relu(spmm(adj, matmul(h, layer.weight)))


def fuse(h_self: Tensor, center_other: Tensor, mu: Tensor, graph_id=None) -> Tensor:
    """Add ``mu`` times the other branch's graph center to every node.

    ``center_other`` is G x C; ``graph_id`` maps each row of ``h_self`` to
    its graph. Without ``graph_id`` a single 1 x C center is broadcast.
    """
    if center_other.shape[-1] != h_self.shape[-1]:
        raise ShapeError(f"fuse: feature widths differ, {h_self.shape} vs center {center_other.shape}")
    if graph_id is None:
        if center_other.shape[0] != 1:
            raise ShapeError("fuse: several centers given without graph_id")
        rows = center_other
    else:
        rows = row_select(center_other, graph_id)
    return add(h_self, mul(mu, rows))


class FusionLayer:
    """Learnable fusion weights for one block, one scalar per direction."""

    def __init__(self, mu_init: float = 1.0, name: str = "fusion", shared: bool = False):
        self.image_to_text = Parameter(np.full((1, 1), float(mu_init)), name=f"{name}.image_to_text")
        self.text_to_image = self.image_to_text if shared else Parameter(
            np.full((1, 1), float(mu_init)), name=f"{name}.text_to_image"
        )

    def parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in (self.image_to_text, self.text_to_image)}

    def __call__(self, img: Tensor, img_batch: GraphBatch, txt: Tensor, txt_batch: GraphBatch):
        # both centers come from pre-fusion activations
        img_center = segment_mean(img, img_batch.ptr)
        txt_center = segment_mean(txt, txt_batch.ptr)
        new_img = fuse(img, txt_center, self.text_to_image, img_batch.graph_id)
        new_txt = fuse(txt, img_center, self.image_to_text, txt_batch.graph_id)
        return new_img, new_txt


def pool_size(n: int, ratio: float) -> int:
    # tolerance guards against products like 0.7 * 10 = 7.000000000000001
    return max(1, math.ceil(ratio * n - 1e-9))


class SAGPoolLayer:
    """Self-attention graph pooling with a one-output GCN scorer."""

    def __init__(self, in_dim: int, rng: np.random.Generator, ratio: float = 0.8, gate: bool = True, name: str = "pool"):
        if not 0 < ratio <= 1:
            raise ValueError(f"pooling ratio must lie in (0, 1], got {ratio}")
        self.ratio = ratio
        self.gate = gate
        self.score_weight = Parameter(glorot(rng, in_dim, 1), name=f"{name}.weight")

    def parameters(self) -> dict[str, Tensor]:
        return {self.score_weight.name: self.score_weight}

    def scores(self, batch: GraphBatch, h: Tensor) -> Tensor:
        return tanh(spmm(batch.adjacency, matmul(h, self.score_weight)))

    def __call__(self, batch: GraphBatch, h: Tensor):
        return sag_pool(self, batch, h)


def select_top(scores: np.ndarray, ptr: np.ndarray, ratio: float) -> np.ndarray:
    """Global indices of the kept nodes, ascending; ties favour lower index."""
    kept = []
    for start, stop in zip(ptr[:-1], ptr[1:]):
        z = scores[start:stop]
        k = pool_size(stop - start, ratio)
        order = np.lexsort((np.arange(len(z)), -z))
        kept.append(np.sort(order[:k]) + start)
    return np.concatenate(kept)


def sag_pool(layer: SAGPoolLayer, batch: GraphBatch, h: Tensor):
    """Returns (pooled features, pooled batch, kept global indices)."""
    if batch.num_nodes != h.shape[0]:
        raise ShapeError(f"features have {h.shape[0]} rows, batch has {batch.num_nodes} nodes")
    z = layer.scores(batch, h)
    kept = select_top(z.data[:, 0], batch.ptr, layer.ratio)
    out = row_select(h, kept)
    if layer.gate:
        out = mul(out, row_select(z, kept))
    return out, batch.subgraph(kept), kept


def readout(h: Tensor, ptr=None) -> Tensor:
    """Column-wise max concatenated with column-wise mean, per graph."""
    if h.shape[0] == 0:
        raise ContractError("readout of an empty graph")
    if ptr is None:
        ptr = [0, h.shape[0]]
    return concat_cols(segment_max(h, ptr), segment_mean(h, ptr))


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str = "linear"):
        self.weight = Parameter(glorot(rng, in_dim, out_dim), name=f"{name}.weight")
        self.bias = Parameter(np.zeros((1, out_dim)), name=f"{name}.bias")

    def parameters(self) -> dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)
