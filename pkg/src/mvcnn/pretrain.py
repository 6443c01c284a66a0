"""Unsupervised pretraining: the sentence representation, averaged with the
vectors of the surrounding context words, must pick out the middle word
against sampled noise words (noise-contrastive estimation)."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import ADAGRAD_EPS, Parameter, adagrad_step, check_finite
from .network import MVCNN
from .text import PAD_ID

log = logging.getLogger(__name__)

REDRAW_LIMIT = 100


@dataclass
class PretrainConfig:
    t: int = 3
    noise_k: int = 10
    epochs: int = 5
    lr: float = 0.01
    alpha: float = 0.75
    init_range: float = 0.1
    adagrad_eps: float = ADAGRAD_EPS

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.noise_k < 1:
            raise ValueError("noise_k must be >= 1")
        if self.epochs < 0 or self.lr < 0:
            raise ValueError("epochs and lr must be nonnegative")


@dataclass
class PretrainTables:
    """Context-word vectors and NCE output vectors + biases. Both are thrown
    away once pretraining ends."""

    context: Parameter
    output: Parameter
    bias: Parameter

    @classmethod
    def random(cls, vocab_size: int, dim: int, rng: np.random.Generator,
               init_range: float = 0.1) -> "PretrainTables":
        def draw():
            v = rng.uniform(-init_range, init_range, size=(vocab_size, dim))
            v[PAD_ID] = 0.0
            return Parameter(v)

        return cls(draw(), draw(), Parameter(np.zeros(vocab_size)))

    def parameters(self) -> list[Parameter]:
        return [self.context, self.output, self.bias]


class NoiseDistribution:
    """Unigram counts raised to ``alpha`` and normalized."""

    def __init__(self, probs: np.ndarray):
        self.probs = np.asarray(probs, dtype=float)
        self.cdf = np.cumsum(self.probs)
        self.cdf[-1] = 1.0

    def __len__(self):
        return len(self.probs)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = np.searchsorted(self.cdf, rng.random(size), side="right")
        return np.minimum(idx, len(self.probs) - 1)


def build_noise_distribution(corpus: Sequence[Sequence[int]], vocab_size: int | None = None,
                             alpha: float = 0.75) -> NoiseDistribution:
    """``corpus`` is a list of token-id sequences; ids never seen get probability 0."""
    counts = Counter()
    for sent in corpus:
        counts.update(int(i) for i in sent)
    counts.pop(PAD_ID, None)
    if not counts:
        raise ValueError("corpus is empty")
    n = vocab_size if vocab_size is not None else max(counts) + 1
    weights = np.zeros(n)
    for w, c in counts.items():
        weights[w] = float(c) ** alpha
    return NoiseDistribution(weights / weights.sum())


def average_prediction(sentence_rep: np.ndarray, context_vecs) -> np.ndarray:
    vecs = [np.asarray(sentence_rep)] + [np.asarray(v) for v in context_vecs]
    if any(v.shape != vecs[0].shape for v in vecs):
        raise ValueError("all vectors must share one dimension")
    return np.mean(vecs, axis=0)


def _log_sigmoid_neg(x):
    # -log(sigmoid(x))
    return np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass
class NCEResult:
    loss: float
    d_pred: np.ndarray
    words: np.ndarray = field(repr=False)
    coefs: np.ndarray = field(repr=False)


def nce_loss(pred: np.ndarray, target: int, noise: Sequence[int], output: np.ndarray,
             bias: np.ndarray, noise_probs: np.ndarray) -> NCEResult:
    """Binary-logistic NCE loss for one true word and ``k`` noise words.

    With ``delta(w) = output[w] @ pred + bias[w] - log(k * Pn(w))`` the loss is
    ``-log sig(delta(target)) - sum_j log sig(-delta(noise_j))``. The returned
    ``coefs`` are ``dloss/dscore`` for ``words = [target, *noise]``.
    """
    noise = np.asarray(noise, dtype=np.int64)
    k = len(noise)
    words = np.concatenate([[target], noise]).astype(np.int64)
    n = output.shape[0]
    if np.any(words < 0) or np.any(words >= n):
        raise KeyError("word outside the vocabulary")
    pn = noise_probs[words]
    if np.any(pn <= 0):
        raise KeyError("word has zero noise probability")
    delta = output[words] @ pred + bias[words] - np.log(k * pn)
    loss = float(_log_sigmoid_neg(delta[0]) + np.sum(_log_sigmoid_neg(-delta[1:])))
    coefs = _sigmoid(delta)
    coefs[0] -= 1.0
    d_pred = coefs @ output[words]
    return NCEResult(loss, d_pred, words, coefs)


def _nce_forward(model, tables, ids, pos, noise, noise_probs, t):
    cache = model.forward(ids, train=False)
    ctx = [ids[j] for j in range(max(0, pos - t), min(len(ids), pos + t + 1)) if j != pos]
    n_avg = len(ctx) + 1
    pred = (cache.rep + tables.context.value[ctx].sum(axis=0)) / n_avg
    res = nce_loss(pred, int(ids[pos]), noise, tables.output.value, tables.bias.value, noise_probs)
    return cache, ctx, n_avg, pred, res


def nce_value(model: MVCNN, tables: PretrainTables, ids: np.ndarray, pos: int,
              noise: np.ndarray, noise_probs: np.ndarray, t: int) -> float:
    """Same loss as :func:`nce_step` without any gradient work."""
    return _nce_forward(model, tables, ids, pos, noise, noise_probs, t)[-1].loss


def nce_step(model: MVCNN, tables: PretrainTables, ids: np.ndarray, pos: int,
             noise: np.ndarray, noise_probs: np.ndarray, t: int) -> float:
    """Loss for predicting ``ids[pos]``; accumulates every gradient."""
    cache, ctx, n_avg, pred, res = _nce_forward(model, tables, ids, pos, noise, noise_probs, t)
    np.add.at(tables.output.grad, res.words, np.outer(res.coefs, pred))
    np.add.at(tables.bias.grad, res.words, res.coefs)
    g = res.d_pred / n_avg
    if ctx:
        np.add.at(tables.context.grad, ctx, np.broadcast_to(g, (len(ctx), g.shape[0])))
    model.backward(cache, d_rep=g)
    return res.loss


def draw_noise(dist: NoiseDistribution, target: int, k: int, rng: np.random.Generator) -> np.ndarray:
    out = dist.sample(rng, k)
    for j in range(k):
        tries = 0
        while out[j] == target and tries < REDRAW_LIMIT:
            out[j] = dist.sample(rng, 1)[0]
            tries += 1
    return out


@dataclass
class PretrainResult:
    epoch_losses: list[float]
    step_losses: list[float]
    tables: PretrainTables


def run_pretraining(corpus: Sequence[Sequence[int]], model: MVCNN, config: PretrainConfig,
                    rng: np.random.Generator, tables: PretrainTables | None = None) -> PretrainResult:
    """Update every model parameter (embeddings included) plus the pretraining
    tables with one AdaGrad step per (sentence, position)."""
    sentences = [np.asarray(s, dtype=np.int64) for s in corpus]
    if not sentences:
        raise ValueError("corpus is empty")
    if any(len(s) < 1 for s in sentences):
        raise ValueError("corpus contains an empty sentence")
    V = len(model.table.vocab)
    dist = build_noise_distribution(sentences, V, config.alpha)
    if tables is None:
        tables = PretrainTables.random(V, model.config.hidden_dim, rng, config.init_range)
    named = model.named_parameters()
    dense = [p for name, p in named.items() if not name.startswith("emb.")]
    params = list(named.values()) + tables.parameters()
    model.zero_grad()
    for p in tables.parameters():
        p.zero_grad()

    epoch_losses, step_losses = [], []
    for epoch in range(config.epochs):
        total, steps = 0.0, 0
        for si in rng.permutation(len(sentences)):
            ids = sentences[si]
            for pos in range(len(ids)):
                noise = draw_noise(dist, int(ids[pos]), config.noise_k, rng)
                loss = nce_step(model, tables, ids, pos, noise, dist.probs, config.t)
                if not np.isfinite(loss):
                    raise FloatingPointError(f"non-finite pretraining loss at epoch {epoch + 1}")
                for p in dense:
                    adagrad_step(p, config.lr, config.adagrad_eps)
                for ch in model.table.channels:
                    adagrad_step(ch, config.lr, config.adagrad_eps, rows=ids)
                ctx_rows = ids[max(0, pos - config.t):pos + config.t + 1]
                adagrad_step(tables.context, config.lr, config.adagrad_eps, rows=ctx_rows)
                touched = np.concatenate([[ids[pos]], noise])
                adagrad_step(tables.output, config.lr, config.adagrad_eps, rows=touched)
                adagrad_step(tables.bias, config.lr, config.adagrad_eps, rows=touched)
                model.table.mask_padding()
                total += loss
                steps += 1
                step_losses.append(loss)
        epoch_losses.append(total / steps)
        log.info("pretrain epoch %d loss %.6f", epoch + 1, epoch_losses[-1])
    for p in params:
        check_finite(p.value, "parameter after pretraining")
    return PretrainResult(epoch_losses, step_losses, tables)
