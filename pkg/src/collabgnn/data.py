"""Line-delimited JSON datasets and the synthetic cross-modal generator.

One record per line::

    {"id": "s0", "label": 1,
     "image_features": [[...], ...], "text_features": [[...], ...],
     "image_edges": [[0, 1], ...], "text_edges": [[0, 2], ...]}

The edge fields are optional; when absent, edges are built with the
top-50% cosine rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .build import build_edges
from .errors import ValidationError
from .graph import Graph, PairedSample

MIN_IMAGES = 3
MAX_IMAGES = 8
MIN_SENTENCES = 5


class RecordError(ValidationError):
    """A dataset line that cannot be parsed or violates the record schema."""

    def __init__(self, message: str, line: int | None = None, record_id: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if record_id is not None:
            where.append(f"record {record_id!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.record_id = record_id


def _matrix(value, field: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ValidationError(f"{field}: vectors must all have the same length") from None
    if arr.ndim != 2:
        raise ValidationError(f"{field}: expected a list of equal-length vectors")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{field}: non-finite value")
    return arr


def validate_record(rec: dict, check_counts: bool = True) -> None:
    """Raise ValidationError naming the offending field."""
    for key in ("id", "label", "image_features", "text_features"):
        if key not in rec:
            raise ValidationError(f"missing field {key!r}")
    if not isinstance(rec["id"], str):
        raise ValidationError("id: must be a string")
    if rec["label"] not in (0, 1) or isinstance(rec["label"], bool):
        raise ValidationError(f"label: must be 0 or 1, got {rec['label']!r}")
    n_img = len(rec["image_features"])
    n_txt = len(rec["text_features"])
    if check_counts:
        if n_img < MIN_IMAGES:
            raise ValidationError(f"image_features: image count below minimum {MIN_IMAGES} (got {n_img})")
        if n_img > MAX_IMAGES:
            raise ValidationError(f"image_features: image count above maximum {MAX_IMAGES} (got {n_img})")
        if n_txt < MIN_SENTENCES:
            raise ValidationError(f"text_features: sentence count below minimum {MIN_SENTENCES} (got {n_txt})")
    elif n_img == 0 or n_txt == 0:
        raise ValidationError("both modalities need at least one node")
    _matrix(rec["image_features"], "image_features")
    _matrix(rec["text_features"], "text_features")


def record_to_sample(rec: dict, check_counts: bool = True) -> PairedSample:
    validate_record(rec, check_counts)
    graphs = {}
    for modality in ("image", "text"):
        x = _matrix(rec[f"{modality}_features"], f"{modality}_features")
        edges = rec.get(f"{modality}_edges")
        try:
            if edges is None:
                edges = build_edges(x)
            graphs[modality] = Graph(x, edges)
        except ValidationError as exc:
            raise ValidationError(f"{modality}: {exc}") from None
    return PairedSample(rec["id"], graphs["image"], graphs["text"], int(rec["label"]))


def sample_to_record(sample: PairedSample, include_edges: bool = True) -> dict:
    rec = {
        "id": sample.id,
        "label": int(sample.label),
        "image_features": sample.image_graph.node_features.tolist(),
        "text_features": sample.text_graph.node_features.tolist(),
    }
    if include_edges:
        rec["image_edges"] = sample.image_graph.edges.tolist()
        rec["text_edges"] = sample.text_graph.edges.tolist()
    return rec


def iter_records(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"malformed JSON ({exc.msg})", line=lineno) from None
            if not isinstance(rec, dict):
                raise RecordError("expected a JSON object", line=lineno)
            yield lineno, rec


def load_dataset(path, check_counts: bool = True) -> list[PairedSample]:
    samples = []
    dims: dict[str, int] = {}
    for lineno, rec in iter_records(path):
        rid = rec.get("id") if isinstance(rec.get("id"), str) else None
        try:
            sample = record_to_sample(rec, check_counts)
        except ValidationError as exc:
            raise RecordError(str(exc), line=lineno, record_id=rid) from None
        for modality, g in (("image", sample.image_graph), ("text", sample.text_graph)):
            expected = dims.setdefault(modality, g.feature_dim)
            if g.feature_dim != expected:
                raise RecordError(
                    f"{modality}_features: dimension {g.feature_dim} differs from corpus dimension {expected}",
                    line=lineno,
                    record_id=rid,
                )
        samples.append(sample)
    return samples


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


def save_dataset(path, samples: Iterable[PairedSample], include_edges: bool = True) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(dumps_record(sample_to_record(s, include_edges)) + "\n")
            count += 1
    return count


# -- synthetic data ---------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic paired-graph task.

    Each modality has one prototype per class, separated by
    ``prototype_gap`` along a class direction; a per-sample, per-modality
    shift of scale ``class_noise`` along that direction blurs the classes so
    one modality alone stays ambiguous. On top of that every sample carries
    a random sign ``a``: image nodes get ``+a`` along an image latent axis,
    text nodes get ``+a`` (label 1) or ``-a`` (label 0) along a text latent
    axis, both scaled by ``cross_modal_strength * latent_scale``. Neither
    latent reveals the label alone; their agreement does. ``noise_sigma`` is
    independent per-node, per-coordinate Gaussian noise.
    """

    n_samples: int
    feature_dim: int = 256
    noise_sigma: float = 0.3
    cross_modal_strength: float = 0.8
    seed: int = 0
    prototype_gap: float = 1.0
    class_noise: float = 1.0
    latent_scale: float = 1.0
    offset_scale: float = 3.0
    world_seed: int = 20200706
    image_nodes: tuple[int, int] = (3, 8)
    text_nodes: tuple[int, int] = (5, 20)

    def __post_init__(self):
        if self.n_samples < 0:
            raise ValidationError("n_samples must be >= 0")
        if self.noise_sigma < 0 or self.class_noise < 0:
            raise ValidationError("noise_sigma and class_noise must be >= 0")
        if not 0 <= self.cross_modal_strength <= 1:
            raise ValidationError("cross_modal_strength must lie in [0, 1]")
        if self.feature_dim < 3:
            raise ValidationError("feature_dim must be at least 3")


def _world(spec: SynthSpec) -> dict[str, np.ndarray]:
    """Fixed directions shared by every draw with the same world_seed."""
    rng = np.random.default_rng(spec.world_seed)
    out = {}
    for modality in ("image", "text"):
        raw = rng.standard_normal((3, spec.feature_dim))
        q, _ = np.linalg.qr(raw.T)
        offset, class_axis, latent_axis = q.T
        out[modality] = (offset * spec.offset_scale, class_axis, latent_axis)
    return out


def generate_synthetic(spec: SynthSpec) -> list[PairedSample]:
    world = _world(spec)
    rng = np.random.default_rng(spec.seed)
    labels = np.arange(spec.n_samples) % 2
    rng.shuffle(labels)
    latent = spec.cross_modal_strength * spec.latent_scale
    samples = []
    for idx, y in enumerate(labels):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        agree = sign if y == 1 else -sign
        feats = {}
        for modality, s, (lo, hi) in (("image", sign, spec.image_nodes), ("text", agree, spec.text_nodes)):
            offset, class_axis, latent_axis = world[modality]
            n = int(rng.integers(lo, hi + 1))
            shift = (y - 0.5) * spec.prototype_gap + spec.class_noise * rng.standard_normal()
            center = offset + shift * class_axis + s * latent * latent_axis
            noise = rng.standard_normal((n, spec.feature_dim)) * spec.noise_sigma
            feats[modality] = center + noise
        samples.append(_synth_sample(f"synth-{spec.seed}-{idx}", feats["image"], feats["text"], int(y)))
    return samples


def _synth_sample(sid: str, image: np.ndarray, text: np.ndarray, label: int) -> PairedSample:
    return PairedSample(sid, Graph(image, build_edges(image)), Graph(text, build_edges(text)), label)
