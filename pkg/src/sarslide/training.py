"""Mini-batch training with on-the-fly augmentation, and test-split metrics."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .detection import resample_patch
from .nn.adam import AdamState, adam_step
from .nn.model import Model
from .sampling import LANDSLIDE, AugmentationConfig, Patch, PatchSet, augment

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    seed: int = 0
    early_stop_patience: int | None = None

    def __post_init__(self):
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentationConfig(**self.augmentation)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_labels(cls, truth, predicted, positive: int = LANDSLIDE) -> "ConfusionMatrix":
        t = np.asarray(truth) == positive
        p = np.asarray(predicted) == positive
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)), int(np.sum(t & ~p)))


def metrics(cm: ConfusionMatrix) -> tuple[float, float | None, float | None]:
    """Accuracy, precision, recall; precision/recall are None when undefined."""
    if cm.total == 0:
        raise ValueError("no samples in confusion matrix")
    accuracy = (cm.tp + cm.tn) / cm.total
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else None
    return accuracy, precision, recall


@dataclass
class EvalReport:
    accuracy: float
    precision: float | None
    recall: float | None
    confusion: ConfusionMatrix
    loss_curve: list = field(default_factory=list)

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, loss_curve=()) -> "EvalReport":
        return cls(*metrics(cm), cm, list(loss_curve))

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "confusion": asdict(self.confusion),
            "loss_curve": list(self.loss_curve),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["accuracy"], d["precision"], d["recall"], ConfusionMatrix(**d["confusion"]),
                   d.get("loss_curve", []))


def _pct(v):
    return "n/a" if v is None else f"{100 * v:.2f}"


def format_table(rows: dict[str, EvalReport]) -> str:
    """Aligned text table: dataset name, accuracy, precision, recall (percent)."""
    header = ("Dataset Name", "Accuracy(%)", "Precision(%)", "Recall(%)")
    body = [(name, _pct(r.accuracy), _pct(r.precision), _pct(r.recall)) for name, r in rows.items()]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(4)]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
    rule = "-" * len(fmt(header))
    return "\n".join([rule, fmt(header), rule, *map(fmt, body), rule]) + "\n"


def _stack(patches: Sequence[Patch]) -> tuple[np.ndarray, np.ndarray]:
    x = resample_patch(np.stack([p.pixels for p in patches]).astype(np.float32))
    y = np.array([p.label for p in patches], dtype=np.int64)
    return x, y


def predict(model: Model, patches: Sequence[Patch], batch: int = 256) -> np.ndarray:
    """Class probabilities (n, 2) in inference mode."""
    out = []
    for i in range(0, len(patches), batch):
        x, _ = _stack(patches[i:i + batch])
        out.append(model.forward(x, training=False))
    return np.concatenate(out)


def evaluate(model: Model, patches: Sequence[Patch]) -> EvalReport:
    if not patches:
        raise ValueError("cannot evaluate an empty patch list")
    pred = predict(model, patches).argmax(axis=1)
    truth = [p.label for p in patches]
    return EvalReport.from_confusion(ConfusionMatrix.from_labels(truth, pred))


def _mean_loss(model: Model, patches: Sequence[Patch], batch: int = 256) -> float:
    total = 0.0
    for i in range(0, len(patches), batch):
        x, y = _stack(patches[i:i + batch])
        total += model.loss(x, y) * len(y)
    return total / len(patches)


def train(model: Model, patchset: PatchSet, cfg: TrainConfig) -> tuple[Model, EvalReport]:
    """Train ``model`` in place and return it with a test-split report.

    Each epoch shuffles the train split, augments every patch with a fresh
    draw, resamples to the network input and takes one Adam step per batch.
    An Adam state already attached to the model is continued.
    """
    if not patchset.train or not patchset.test:
        raise ValueError("train and test splits must both be non-empty")
    if patchset.train[0].pixels.shape != (25, 25, 3) or model.input_shape != (32, 32, 3):
        raise ValueError("model must take 32x32x3 input and patches must be 25x25x3")
    rng = np.random.default_rng([cfg.seed, cfg.augmentation.seed])
    params = model.parameters()
    if model.optimizer is None or not model.optimizer.m:
        model.optimizer = AdamState.for_params(params, lr=cfg.learning_rate)
    state = model.optimizer
    state.lr = cfg.learning_rate

    curve = []
    best = (np.inf, None, 0)  # test loss, parameter snapshot, epoch
    train_set = patchset.train
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            if cfg.augmentation.enabled:
                batch = [augment(p, cfg.augmentation, rng) for p in batch]
            x, y = _stack(batch)
            loss, grads = model.backward(x, y, rng=rng)
            adam_step(params, grads, state)
            epoch_loss += loss * len(batch)
        curve.append(epoch_loss / len(train_set))
        log.info("epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, curve[-1])

        if cfg.early_stop_patience is not None:
            test_loss = _mean_loss(model, patchset.test)
            if test_loss < best[0]:
                best = (test_loss, [p.copy() for p in params], epoch)
            elif epoch - best[2] >= cfg.early_stop_patience:
                log.info("early stop at epoch %d (best %d)", epoch + 1, best[2] + 1)
                for p, saved in zip(params, best[1]):
                    p[...] = saved
                break

    report = evaluate(model, patchset.test)
    report.loss_curve = curve
    return model, report
