"""Training loop, metrics and the multi-variant comparison harness."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .autodiff import backward, no_grad, softmax_cross_entropy
from .errors import DivergenceError, ValidationError
from .graph import PairedSample, batch_graphs
from .model import VARIANTS, ModelConfig, TwoBranchModel
from .optim import Adam

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_logloss", "val_logloss", "val_accuracy")


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.001
    weight_decay: float = 1e-6
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValidationError("max_epochs must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class MetricsReport:
    logloss: float
    accuracy: float
    n: int
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def make_batches(samples: Sequence[PairedSample]):
    img = batch_graphs([s.image_graph for s in samples])
    txt = batch_graphs([s.text_graph for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return img, txt, labels


def predict_logits(model: TwoBranchModel, samples: Sequence[PairedSample], batch_size: int = 64) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            img, txt, _ = make_batches(samples[start : start + batch_size])
            out.append(model(img, txt).data)
    return np.concatenate(out, axis=0)


def metrics_from_logits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Mean log loss and accuracy; ties in the logits predict class 0."""
    m = logits.max(axis=1, keepdims=True)
    log_probs = logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(len(labels)), labels].mean())
    pred = (logits[:, 1] > logits[:, 0]).astype(np.int64)
    return loss, float(np.count_nonzero(pred == labels) / len(labels))


def evaluate(model: TwoBranchModel, dataset: Sequence[PairedSample]) -> MetricsReport:
    if not dataset:
        raise ValidationError("cannot evaluate on an empty dataset")
    labels = np.array([s.label for s in dataset], dtype=np.int64)
    loss, acc = metrics_from_logits(predict_logits(model, dataset), labels)
    return MetricsReport(logloss=loss, accuracy=acc, n=len(dataset))


def train(
    model: TwoBranchModel,
    train_set: Sequence[PairedSample],
    val_set: Sequence[PairedSample],
    cfg: TrainConfig | None = None,
) -> tuple[TwoBranchModel, list[dict]]:
    """Train with Adam and early stopping on validation log loss.

    Epoch 0 of the history is the untrained model. On return the model
    holds the parameters of the epoch with the lowest validation log loss
    (earliest on ties).
    """
    cfg = cfg or TrainConfig()
    if not train_set or not val_set:
        raise ValidationError("training and validation sets must be nonempty")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    val = evaluate(model, val_set)
    history = [
        {"epoch": 0, "train_logloss": evaluate(model, train_set).logloss, "val_logloss": val.logloss, "val_accuracy": val.accuracy}
    ]
    best_loss, best_epoch, best_state = val.logloss, 0, model.state_dict()

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = [train_set[i] for i in order[start : start + cfg.batch_size]]
            img, txt, labels = make_batches(chunk)
            loss = softmax_cross_entropy(model(img, txt), labels)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b} (samples {[s.id for s in chunk][:5]}...)")
            backward(loss)
            opt.step()
            total += value * len(chunk)
            seen += len(chunk)
        val = evaluate(model, val_set)
        history.append(
            {"epoch": epoch, "train_logloss": total / seen, "val_logloss": val.logloss, "val_accuracy": val.accuracy}
        )
        logger.debug("epoch %d train %.4f val %.4f acc %.3f", epoch, total / seen, val.logloss, val.accuracy)
        if val.logloss < best_loss:
            best_loss, best_epoch, best_state = val.logloss, epoch, model.state_dict()
        elif epoch - best_epoch >= cfg.patience:
            break

    model.load_state_dict(best_state)
    for row in history:
        row["best"] = row["epoch"] == best_epoch
    return model, history


def split_dataset(samples: Sequence[PairedSample], seed: int = 0, fractions=(0.8, 0.1, 0.1)):
    """Seeded shuffle into train/val/test with the given proportions."""
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    pick = lambda idx: [samples[i] for i in idx]  # noqa: E731
    return pick(order[:n_train]), pick(order[n_train : n_train + n_val]), pick(order[n_train + n_val :])


@dataclass
class ComparisonRow:
    variant: str
    seed: int
    test_logloss: float | None
    test_accuracy: float | None
    best_epoch: int | None
    epochs_run: int | None
    error: str | None = None


def run_comparison(
    train_set,
    val_set,
    test_set,
    variants: Sequence[str] = VARIANTS,
    seeds: Sequence[int] = (0,),
    train_cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
) -> dict:
    """Train every variant on every seed with identical data.

    A failing cell is recorded with its error message; the rest of the
    table still runs.
    """
    if not seeds:
        raise ValidationError("need at least one seed")
    train_cfg = train_cfg or TrainConfig()
    base = model_cfg or ModelConfig()
    rows: list[ComparisonRow] = []
    for variant in variants:
        for seed in seeds:
            try:
                cfg = ModelConfig.from_dict({**base.to_dict(), "variant": variant})
                model = TwoBranchModel(cfg, seed=seed)
                tcfg = TrainConfig(**{**asdict(train_cfg), "seed": seed})
                model, history = train(model, train_set, val_set, tcfg)
                report = evaluate(model, test_set)
                best = next(r["epoch"] for r in history if r["best"])
                rows.append(ComparisonRow(variant, seed, report.logloss, report.accuracy, best, history[-1]["epoch"]))
            except Exception as exc:  # one bad cell must not sink the table
                logger.error("variant %s seed %d failed: %s", variant, seed, exc)
                rows.append(ComparisonRow(variant, seed, None, None, None, None, f"{type(exc).__name__}: {exc}"))
            logger.info("%s seed %d done", variant, seed)
    return {"rows": [asdict(r) for r in rows], "summary": summarize(rows, variants)}


def summarize(rows: Sequence[ComparisonRow], variants: Sequence[str]) -> list[dict]:
    out = []
    for variant in variants:
        ok = [r for r in rows if r.variant == variant and r.error is None]
        acc = np.array([r.test_accuracy for r in ok])
        loss = np.array([r.test_logloss for r in ok])
        out.append(
            {
                "variant": variant,
                "runs": len(ok),
                "accuracy_mean": float(acc.mean()) if ok else None,
                "accuracy_sd": float(acc.std(ddof=1)) if len(ok) > 1 else 0.0 if ok else None,
                "logloss_mean": float(loss.mean()) if ok else None,
                "logloss_sd": float(loss.std(ddof=1)) if len(ok) > 1 else 0.0 if ok else None,
            }
        )
    return out
