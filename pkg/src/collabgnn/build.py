"""Edge construction from node feature vectors by cosine similarity."""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError
from .graph import Graph, PairedSample

# Similarities closer than this are treated as tied and ordered by index,
# so a rescaled feature vector cannot reorder pairs through rounding noise.
SIMILARITY_DECIMALS = 12


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"vectors differ in length: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0:
        raise ValidationError("first vector has zero norm")
    if nb == 0:
        raise ValidationError("second vector has zero norm")
    return float(a @ b / (na * nb))


def pairwise_cosine(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValidationError(f"node {int(zero[0])} has a zero-norm feature vector")
    unit = x / norms[:, None]
    return unit @ unit.T


def build_edges(node_features) -> np.ndarray:
    """Keep the ceil(P/2) most similar of the P = N(N-1)/2 node pairs.

    Pairs are ranked by descending cosine similarity; ties go to the
    lexicographically smaller (i, j). Returned edges are sorted.
    """
    x = np.asarray(node_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError(f"need at least one node, got feature shape {x.shape}")
    n = x.shape[0]
    sims = pairwise_cosine(x)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    i, j = np.triu_indices(n, k=1)
    pair_sims = np.round(sims[i, j], SIMILARITY_DECIMALS)
    order = np.argsort(-pair_sims, kind="stable")
    kept = np.sort(order[: math.ceil(len(order) / 2)])
    return np.stack([i[kept], j[kept]], axis=1).astype(np.int64)


def build_graph(node_features) -> Graph:
    return Graph(np.asarray(node_features, dtype=np.float64), build_edges(node_features))


def build_sample(image_feats, text_feats, label: int, id: str) -> PairedSample:
    image_feats = np.asarray(image_feats, dtype=np.float64)
    text_feats = np.asarray(text_feats, dtype=np.float64)
    if image_feats.ndim != 2 or image_feats.shape[0] == 0:
        raise ValidationError(f"sample {id!r}: image modality is empty")
    if text_feats.ndim != 2 or text_feats.shape[0] == 0:
        raise ValidationError(f"sample {id!r}: text modality is empty")
    graphs = {}
    for modality, feats in (("image", image_feats), ("text", text_feats)):
        try:
            graphs[modality] = build_graph(feats)
        except ValidationError as exc:
            raise ValidationError(f"sample {id!r}, {modality} modality: {exc}") from exc
    return PairedSample(id=id, image_graph=graphs["image"], text_graph=graphs["text"], label=int(label))
