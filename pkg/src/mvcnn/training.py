"""Supervised training loop, model selection on dev accuracy, evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ADAGRAD_EPS, L2_LAMBDA, adagrad_step, l2_regularize
from .checkpoint import dumps, loads
from .errors import MVCNNError
from .network import MVCNN
from .text import Dataset, build_batches

log = logging.getLogger(__name__)

LOSS_LIMIT = 1e6


@dataclass
class TrainConfig:
    lr: float = 0.01
    dropout_keep_prob: float = 0.8
    l2_lambda: float = L2_LAMBDA
    batch_size: int = 50
    max_epochs: int = 25
    patience: int = 10
    seed: int = 0
    l2_embeddings: bool = False
    adagrad_eps: float = ADAGRAD_EPS
    # stop as soon as training accuracy reaches this value (None: never)
    target_train_acc: float | None = None

    def __post_init__(self):
        problems = []
        if self.lr < 0:
            problems.append("lr must be >= 0")
        if not 0 < self.dropout_keep_prob <= 1:
            problems.append("dropout_keep_prob must be in (0, 1]")
        if self.l2_lambda < 0:
            problems.append("l2_lambda must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.max_epochs < 1 or self.patience < 1:
            problems.append("max_epochs and patience must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    dev_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_acc: float = 0.0
    test_acc: float | None = None
    epochs_to_target: int | None = None
    wall_clock: float = 0.0

    def to_text(self) -> str:
        lines = ["epoch\ttrain_loss\ttrain_acc\tdev_acc"]
        for e, (loss, tacc, dacc) in enumerate(zip(self.train_loss, self.train_acc, self.dev_acc), 1):
            lines.append(f"{e}\t{loss:.6f}\t{tacc:.4f}\t{dacc:.4f}")
        lines.append(f"best_epoch\t{self.best_epoch}")
        lines.append(f"best_dev_acc\t{self.best_dev_acc:.4f}")
        if self.test_acc is not None:
            lines.append(f"test_acc\t{self.test_acc:.4f}")
        lines.append(f"wall_clock_s\t{self.wall_clock:.2f}")
        return "\n".join(lines) + "\n"


def _check_classes(model: MVCNN, ds: Dataset) -> None:
    if ds.num_classes > model.config.num_classes:
        raise MVCNNError(f"{ds.split} set has {ds.num_classes} classes, "
                         f"model has {model.config.num_classes}")


def loss_and_accuracy(model: MVCNN, dataset: Dataset) -> tuple[float, float]:
    """Mean cross-entropy and accuracy with dropout disabled."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    _check_classes(model, dataset)
    vocab = model.table.vocab
    total, correct = 0.0, 0
    for label, toks in dataset.examples:
        cache = model.forward(vocab.encode(toks))
        total += -float(np.log(max(cache.probs[label], 1e-300)))
        correct += int(np.argmax(cache.probs) == label)
    return total / len(dataset), correct / len(dataset)


def evaluate(model: MVCNN, dataset: Dataset) -> float:
    """Fraction of examples whose most probable class (lowest index on ties)
    equals the label."""
    return loss_and_accuracy(model, dataset)[1]


def _restore(model: MVCNN, blob: bytes) -> None:
    best = loads(blob).named_parameters()
    for name, p in model.named_parameters().items():
        p.value[...] = best[name].value


def train_supervised(model: MVCNN, datasets: dict[str, Dataset], config: TrainConfig,
                     on_epoch=None) -> tuple[TrainReport, bytes]:
    """Train with mini-batch AdaGrad and keep the best-on-dev checkpoint.

    ``datasets`` needs ``"train"``; ``"dev"`` and ``"test"`` are optional.
    Without a dev set the checkpoint is chosen on training accuracy. The
    model ends up holding the selected parameters; the serialized checkpoint
    is returned next to the report.
    """
    train = datasets["train"]
    dev = datasets.get("dev")
    test = datasets.get("test")
    for ds in (train, dev, test):
        if ds is not None:
            if len(ds) == 0:
                raise ValueError(f"{ds.split} set is empty")
            _check_classes(model, ds)

    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    model.config.dropout_keep_prob = config.dropout_keep_prob
    named = model.named_parameters()
    dense = [p for n, p in named.items() if not n.startswith("emb.")]
    emb = model.table.channels
    reg = model.regularized_parameters(config.l2_embeddings)
    vocab = model.table.vocab
    model.zero_grad()

    report = TrainReport()
    best_blob, best_score, stale = None, -1.0, 0
    for epoch in range(1, config.max_epochs + 1):
        for bi, batch in enumerate(build_batches(train, vocab, config.batch_size, rng)):
            scale = 1.0 / len(batch)
            loss = 0.0
            for ids, label in zip(batch.sentences(), batch.labels):
                sl, _ = model.loss_and_backward(ids, int(label), train=True, rng=rng, scale=scale)
                loss += scale * sl
            loss += l2_regularize(reg, config.l2_lambda)
            if not np.isfinite(loss) or loss > LOSS_LIMIT:
                raise FloatingPointError(
                    f"training diverged at epoch {epoch}, batch {bi + 1}: loss={loss!r} "
                    f"(lr={config.lr}, batch_size={config.batch_size})")
            for p in dense:
                adagrad_step(p, config.lr, config.adagrad_eps)
            rows = None if config.l2_embeddings else np.unique(batch.token_ids)
            for ch in emb:
                adagrad_step(ch, config.lr, config.adagrad_eps, rows=rows)
            model.table.mask_padding()

        tr_loss, tr_acc = loss_and_accuracy(model, train)
        tr_loss += 0.5 * config.l2_lambda * sum(float(np.sum(p.value ** 2)) for p in reg)
        dev_acc = evaluate(model, dev) if dev is not None else tr_acc
        report.train_loss.append(tr_loss)
        report.train_acc.append(tr_acc)
        report.dev_acc.append(dev_acc)
        log.info("epoch %d loss %.6f train_acc %.4f dev_acc %.4f", epoch, tr_loss, tr_acc, dev_acc)
        if on_epoch is not None:
            on_epoch(epoch, tr_loss, tr_acc, dev_acc)

        if dev_acc > best_score:
            best_blob, best_score, stale = dumps(model), dev_acc, 0
            report.best_epoch, report.best_dev_acc = epoch, dev_acc
        else:
            stale += 1
        if config.target_train_acc is not None and tr_acc >= config.target_train_acc:
            report.epochs_to_target = epoch
            break
        if stale >= config.patience:
            break

    _restore(model, best_blob)
    if test is not None:
        report.test_acc = evaluate(model, test)
    report.wall_clock = time.perf_counter() - start
    return report, best_blob
