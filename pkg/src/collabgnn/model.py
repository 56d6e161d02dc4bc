"""The two-branch collaborative network, its five baselines, and checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat_cols, relu, segment_mean
from .errors import ContractError, ShapeError, ValidationError
from .graph import GraphBatch
from .layers import FusionLayer, GCNLayer, Linear, SAGPoolLayer, readout

VARIANTS = (
    "collaborative",
    "two_branch_sagpool",
    "two_branch_plain",
    "image_only",
    "text_only",
    "two_branch_avg",
)
GRAPH_PAIR_VARIANTS = ("collaborative", "two_branch_sagpool", "two_branch_plain")
SINGLE_BRANCH_VARIANTS = ("image_only", "text_only")

CHECKPOINT_FORMAT = "collabgnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    input_dim: int = 256
    gcn_dims: tuple[int, ...] = (64, 32)
    pooling_ratio: float = 0.8
    fc_dims: tuple[int, ...] = (64, 32, 2)
    mu_init: float = 1.0
    variant: str = "collaborative"
    shared_mu: bool = False
    pool_gating: bool = True

    def __post_init__(self):
        self.gcn_dims = tuple(int(d) for d in self.gcn_dims)
        self.fc_dims = tuple(int(d) for d in self.fc_dims)
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        if self.input_dim < 1 or not self.gcn_dims or min(self.gcn_dims) < 1:
            raise ValidationError("input_dim and gcn_dims must be positive")
        if not 0 < self.pooling_ratio <= 1:
            raise ValidationError(f"pooling_ratio must lie in (0, 1], got {self.pooling_ratio}")
        if not self.fc_dims or self.fc_dims[-1] != 2:
            raise ValidationError("fc_dims must end in 2 output logits")

    @property
    def fc_input_dim(self) -> int:
        readout_width = 2 * self.gcn_dims[-1]
        if self.variant in SINGLE_BRANCH_VARIANTS:
            return readout_width
        return 2 * readout_width

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gcn_dims"] = list(self.gcn_dims)
        d["fc_dims"] = list(self.fc_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class Branch:
    """Stacked GCN blocks for one modality, optionally with pooling."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, name: str, pooling: bool):
        dims = (cfg.input_dim,) + cfg.gcn_dims
        self.convs = []
        self.pools = []
        for i in range(len(cfg.gcn_dims)):
            self.convs.append(GCNLayer(dims[i], dims[i + 1], rng, name=f"{name}.block{i}.gcn"))
            if pooling:
                self.pools.append(
                    SAGPoolLayer(dims[i + 1], rng, cfg.pooling_ratio, cfg.pool_gating, name=f"{name}.block{i}.pool")
                )

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, conv in enumerate(self.convs):
            out.update(conv.parameters())
            if self.pools:
                out.update(self.pools[i].parameters())
        return out

    def conv(self, i: int, batch: GraphBatch, h: Tensor) -> Tensor:
        return self.convs[i](batch.adjacency, h)

    def pool(self, i: int, batch: GraphBatch, h: Tensor):
        if not self.pools:
            return h, batch
        h, batch, _ = self.pools[i](batch, h)
        return h, batch


class TwoBranchModel:
    """All six variants behind one interface.

    Weights are drawn from three independent streams (image branch, text
    branch, head) spawned from ``seed``, so variants that share a
    component also share its initial weights.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.seed = seed
        cfg = self.config
        img_ss, txt_ss, head_ss = np.random.SeedSequence(seed).spawn(3)
        img_rng = np.random.default_rng(img_ss)
        txt_rng = np.random.default_rng(txt_ss)
        head_rng = np.random.default_rng(head_ss)

        self.image_branch = self.text_branch = None
        self.fusions: list[FusionLayer] = []
        self.image_embed = self.text_embed = None
        v = cfg.variant
        pooling = v != "two_branch_plain"
        if v in GRAPH_PAIR_VARIANTS or v == "image_only":
            self.image_branch = Branch(cfg, img_rng, "image", pooling)
        if v in GRAPH_PAIR_VARIANTS or v == "text_only":
            self.text_branch = Branch(cfg, txt_rng, "text", pooling)
        if v == "collaborative":
            self.fusions = [
                FusionLayer(cfg.mu_init, name=f"fusion.block{i}", shared=cfg.shared_mu) for i in range(len(cfg.gcn_dims))
            ]
        if v == "two_branch_avg":
            width = 2 * cfg.gcn_dims[-1]
            self.image_embed = Linear(cfg.input_dim, width, img_rng, name="image.embed")
            self.text_embed = Linear(cfg.input_dim, width, txt_rng, name="text.embed")

        dims = (cfg.fc_input_dim,) + cfg.fc_dims
        self.head = [Linear(dims[i], dims[i + 1], head_rng, name=f"head.fc{i}") for i in range(len(cfg.fc_dims))]

    @property
    def variant(self) -> str:
        return self.config.variant

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for part in (self.image_branch, self.text_branch, self.image_embed, self.text_embed):
            if part is not None:
                out.update(part.parameters())
        for fusion in self.fusions:
            out.update(fusion.parameters())
        for layer in self.head:
            out.update(layer.parameters())
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.parameters()
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise ValidationError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, value in state.items():
            if name not in params:
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != params[name].shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != model shape {params[name].shape}")
            params[name].data = value.copy()

    # -- forward passes -----------------------------------------------------

    def __call__(self, batch_img: GraphBatch | None, batch_txt: GraphBatch | None) -> Tensor:
        return self.forward(batch_img, batch_txt)

    def forward(self, batch_img: GraphBatch | None, batch_txt: GraphBatch | None) -> Tensor:
        v = self.variant
        if v == "image_only":
            return self.forward_single_branch(batch_img)
        if v == "text_only":
            return self.forward_single_branch(batch_txt)
        if batch_img is None or batch_txt is None or batch_img.num_graphs != batch_txt.num_graphs:
            raise ContractError("image and text batches must hold the same samples")
        if v == "two_branch_avg":
            return self.forward_avg_baseline(batch_img, batch_txt)
        return self._forward_pair(batch_img, batch_txt)

    def _check_input(self, batch: GraphBatch) -> None:
        if batch.x is None or batch.x.shape[1] != self.config.input_dim:
            got = None if batch.x is None else batch.x.shape[1]
            raise ShapeError(f"model expects {self.config.input_dim}-dim node features, batch has {got}")

    def _forward_pair(self, bi: GraphBatch, bt: GraphBatch) -> Tensor:
        self._check_input(bi)
        self._check_input(bt)
        hi, ht = Tensor(bi.x), Tensor(bt.x)
        for i in range(len(self.config.gcn_dims)):
            hi = self.image_branch.conv(i, bi, hi)
            ht = self.text_branch.conv(i, bt, ht)
            if self.fusions:
                hi, ht = self.fusions[i](hi, bi, ht, bt)
            hi, bi = self.image_branch.pool(i, bi, hi)
            ht, bt = self.text_branch.pool(i, bt, ht)
        features = concat_cols(readout(hi, bi.ptr), readout(ht, bt.ptr))
        return self._head(features)

    def forward_single_branch(self, batch: GraphBatch) -> Tensor:
        if self.variant not in SINGLE_BRANCH_VARIANTS:
            raise ContractError(f"forward_single_branch is only defined for {SINGLE_BRANCH_VARIANTS}, model is {self.variant}")
        if batch is None:
            raise ContractError(f"variant {self.variant} needs its modality batch")
        self._check_input(batch)
        branch = self.image_branch if self.variant == "image_only" else self.text_branch
        h = Tensor(batch.x)
        for i in range(len(self.config.gcn_dims)):
            h = branch.conv(i, batch, h)
            h, batch = branch.pool(i, batch, h)
        return self._head(readout(h, batch.ptr))

    def forward_avg_baseline(self, bi: GraphBatch, bt: GraphBatch) -> Tensor:
        if self.variant != "two_branch_avg":
            raise ContractError(f"forward_avg_baseline needs variant two_branch_avg, model is {self.variant}")
        self._check_input(bi)
        self._check_input(bt)
        img = relu(self.image_embed(segment_mean(Tensor(bi.x), bi.ptr)))
        txt = relu(self.text_embed(segment_mean(Tensor(bt.x), bt.ptr)))
        return self._head(concat_cols(img, txt))

    def _head(self, x: Tensor) -> Tensor:
        for layer in self.head[:-1]:
            x = relu(layer(x))
        return self.head[-1](x)


# -- checkpoints ------------------------------------------------------------


def checkpoint_dict(model: TwoBranchModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "config": model.config.to_dict(),
        "parameters": {
            name: {"shape": list(p.shape), "data": p.data.ravel().tolist()} for name, p in model.parameters().items()
        },
    }


def save_checkpoint(model: TwoBranchModel, path) -> None:
    """Write config and parameters as JSON (float repr round-trips exactly)."""
    Path(path).write_text(json.dumps(checkpoint_dict(model)) + "\n", encoding="utf-8")


def load_checkpoint(path) -> TwoBranchModel:
    try:
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a checkpoint file ({exc})") from exc
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    model = TwoBranchModel(ModelConfig.from_dict(blob["config"]), seed=blob.get("seed", 0))
    state = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in blob["parameters"].items()
    }
    model.load_state_dict(state)
    return model
