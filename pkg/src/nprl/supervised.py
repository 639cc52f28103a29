"""Classification training of the shared trunk with a softmax head."""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import LabeledDataset
from .errors import ConfigError, DataError, NumericError
from .model import Head, ModelGraph, TrunkConfig, build_model
from .optim import make_optimizer, optimizer_step

log = logging.getLogger(__name__)

CURVE_FIELDS = ("epoch", "train_acc", "test_acc", "train_loss")


@dataclass
class SupConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    hflip: bool = True
    crop_pad: int = 0
    seed: int = 0
    eval_batch: int = 128

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        for name in ("batch_size", "lr", "eval_batch"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.crop_pad < 0:
            raise ConfigError("crop_pad must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SupResult:
    model: ModelGraph  # parameters after the last epoch
    best: ModelGraph  # parameters of the epoch with the highest test accuracy
    curves: list[dict]
    best_epoch: int


def to_input(images_u8: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(images_u8.transpose(0, 3, 1, 2), dtype=np.float32) / np.float32(255.0)


def augment(images: np.ndarray, cfg: SupConfig, rng: np.random.Generator) -> np.ndarray:
    """Label-preserving augmentation of a uint8 N x H x W x 3 batch; shape is kept."""
    out = images.copy()
    if cfg.hflip:
        flip = rng.random(len(out)) < 0.5
        out[flip] = out[flip, :, ::-1]
    if cfg.crop_pad:
        p = cfg.crop_pad
        n, h, w, _ = out.shape
        padded = np.pad(out, ((0, 0), (p, p), (p, p), (0, 0)), mode="edge")
        offs = rng.integers(0, 2 * p + 1, size=(n, 2))
        for i, (dy, dx) in enumerate(offs):
            out[i] = padded[i, dy:dy + h, dx:dx + w]
    return out


def train_batches(dataset: LabeledDataset, batch_size: int, rng: np.random.Generator):
    """Shuffled minibatch indices drawn from the train split only."""
    idx = dataset.indices("train")
    if idx.size == 0:
        raise DataError("dataset has no training items")
    order = rng.permutation(idx)
    for start in range(0, len(order), batch_size):
        batch = order[start:start + batch_size]
        if not np.all(dataset.splits[batch] == "train"):
            raise DataError("batch sampler drew a non-training item")
        yield batch


def predict(model: ModelGraph, images_u8: np.ndarray, batch: int = 128) -> np.ndarray:
    """Eval-mode argmax class per image."""
    preds = []
    with T.no_grad():
        for s in range(0, len(images_u8), batch):
            preds.append(np.argmax(model.forward(to_input(images_u8[s:s + batch]), "eval").data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, np.int64)


def evaluate_accuracy(model, dataset: LabeledDataset, split: str = "test", batch: int = 128) -> float:
    """Fraction of argmax predictions equal to the label over one split."""
    if getattr(model, "head", None) is not None and model.head.n_outputs != dataset.n_classes:
        raise ConfigError(f"model predicts {model.head.n_outputs} classes, dataset has {dataset.n_classes}")
    idx = dataset.indices(split)
    if idx.size == 0:
        raise DataError(f"split {split!r} is empty")
    if isinstance(model, ModelGraph):
        pred = predict(model, dataset.images[idx], batch)
    else:  # any callable mapping a uint8 batch to scores
        pred = np.argmax(np.asarray(model(dataset.images[idx])), axis=1)
    return float(np.mean(pred == dataset.labels[idx]))


def write_curves(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CURVE_FIELDS)
        for row in rows:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in CURVE_FIELDS[1:]])


def read_curves(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{"epoch": int(r["epoch"]), **{k: float(r[k]) for k in CURVE_FIELDS[1:]}} for r in csv.DictReader(f)]


def train_classifier(dataset: LabeledDataset, cfg: SupConfig, out_dir=None, resume=None,
                     trunk: TrunkConfig | None = None, progress=None) -> SupResult:
    """Minimize softmax cross-entropy on the train split; evaluate on test after each epoch.

    ``resume`` is a checkpoint written by an earlier run; its epoch counter and
    curves (when ``out_dir`` holds them) are continued.  Optimizer moments are
    not stored in checkpoints and restart from zero on resume.
    """
    if dataset.n_classes < 2:
        raise ConfigError("classification needs at least two classes")
    trunk = trunk or TrunkConfig(resolution=dataset.resolution)
    if trunk.resolution != dataset.resolution:
        raise ConfigError(f"dataset resolution {dataset.resolution} != model resolution {trunk.resolution}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    curves: list[dict] = []
    start_epoch = 0
    if resume is not None:
        model = load_checkpoint(resume)
        if model.head != Head.classifier(dataset.n_classes) or model.trunk != trunk:
            raise ConfigError(f"checkpoint {resume} does not match the dataset/model configuration")
        start_epoch = int(model.meta.get("epoch", 0))
        if out is not None and (out / "curves.csv").is_file():
            curves = [r for r in read_curves(out / "curves.csv") if r["epoch"] <= start_epoch]
    else:
        model = build_model(trunk, Head.classifier(dataset.n_classes), seed=cfg.seed)
    model.meta = {**model.meta, "trainer": "supervised", "classes": list(dataset.class_names),
                  "config": cfg.to_dict(), "epoch": start_epoch}

    opt = make_optimizer(cfg.optimizer, cfg.lr)
    best = model.copy()
    best_acc, best_epoch = -1.0, start_epoch
    if curves:
        top = max(curves, key=lambda r: r["test_acc"])
        best_acc, best_epoch = top["test_acc"], top["epoch"]
    has_test = dataset.indices("test").size > 0

    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        correct = seen = 0
        loss_sum = 0.0
        for idx in train_batches(dataset, cfg.batch_size, rng):
            x = to_input(augment(dataset.images[idx], cfg, rng))
            y = dataset.labels[idx]
            model.zero_grad()
            try:
                logits = model.forward(x, "train")
                loss = T.softmax_cross_entropy(logits, y)
                loss.backward()
            except NumericError as exc:
                raise NumericError(f"non-finite loss in epoch {epoch} at batch starting with item "
                                   f"{dataset.refs[idx[0]]!r}: {exc}") from exc
            optimizer_step(model.parameters(), opt)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == y))
            seen += len(idx)
            loss_sum += loss.item() * len(idx)
        test_acc = evaluate_accuracy(model, dataset, "test", cfg.eval_batch) if has_test else float("nan")
        row = {"epoch": epoch, "train_acc": correct / seen, "test_acc": test_acc, "train_loss": loss_sum / seen}
        curves.append(row)
        model.meta["epoch"] = epoch
        if has_test and test_acc > best_acc:
            best_acc, best_epoch = test_acc, epoch
            best = model.copy()
            if out is not None:
                save_checkpoint(best, out / "best.nprl")
        if out is not None:
            save_checkpoint(model, out / "model.nprl")
            write_curves(curves, out / "curves.csv")
        log.info("epoch %d train_acc %.4f test_acc %.4f loss %.4f", epoch, row["train_acc"], test_acc,
                 row["train_loss"])
        if progress is not None:
            progress(row)
    if out is not None:
        if cfg.epochs == 0:
            save_checkpoint(model, out / "model.nprl")
            write_curves(curves, out / "curves.csv")
        if not (out / "best.nprl").is_file():
            save_checkpoint(best, out / "best.nprl")
    return SupResult(model=model, best=best, curves=curves, best_epoch=best_epoch)
