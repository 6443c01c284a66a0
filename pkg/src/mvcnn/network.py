"""Multichannel variable-size convolutional network: forward and backward.

Layer 0 is a stack of ``c`` maps of shape ``d x s`` (one per embedding
channel). Every convolution layer holds, for each filter size ``l`` and
kernel ``j``, one ``rows x l`` weight slice per input map; the slices are
applied as wide convolutions, summed over input maps, shifted by a bias and
squashed with tanh. The result is one single-row map per (size, kernel),
which dynamic k-max pooling cuts to a common length before the next layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import DEFAULT_DTYPE, Parameter, dropout_mask, softmax
from .embeddings import MultichannelTable
from .errors import ShapeError
from .text import PAD_ID

DEFAULT_FILTER_SIZES = (3, 5, 7, 9)


@dataclass
class NetworkConfig:
    c: int
    d: int
    num_layers: int = 2
    filter_sizes: tuple[int, ...] = DEFAULT_FILTER_SIZES
    kernels_per_size: int = 5
    k_top: int = 4
    hidden_dim: int | None = None
    num_classes: int = 2
    dropout_keep_prob: float = 0.8

    def __post_init__(self):
        self.filter_sizes = tuple(int(x) for x in self.filter_sizes)
        if self.hidden_dim is None:
            self.hidden_dim = self.d
        problems = []
        if self.c < 1:
            problems.append("c must be >= 1")
        if self.d < 1:
            problems.append("d must be >= 1")
        if self.num_layers < 1:
            problems.append("num_layers must be >= 1")
        if not self.filter_sizes or min(self.filter_sizes) < 1:
            problems.append("filter_sizes must be nonempty positive integers")
        elif any(a >= b for a, b in zip(self.filter_sizes, self.filter_sizes[1:])):
            problems.append("filter_sizes must be strictly increasing")
        if self.kernels_per_size < 1:
            problems.append("kernels_per_size must be >= 1")
        if self.k_top < 1:
            problems.append("k_top must be >= 1")
        if self.hidden_dim < 1:
            problems.append("hidden_dim must be >= 1")
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        if not 0 < self.dropout_keep_prob <= 1:
            problems.append("dropout_keep_prob must be in (0, 1]")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def maps_per_layer(self) -> int:
        return len(self.filter_sizes) * self.kernels_per_size

    @property
    def flat_dim(self) -> int:
        return self.maps_per_layer * self.k_top

    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(map(str, v)) if isinstance(v, tuple) else repr(v)
        return out

    @classmethod
    def from_dict(cls, kv: dict[str, str]) -> "NetworkConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            if f.name == "filter_sizes":
                kw[f.name] = tuple(int(x) for x in raw.split(","))
            elif f.name == "dropout_keep_prob":
                kw[f.name] = float(raw)
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


# --- primitive ops -------------------------------------------------------------

def wide_conv(fmap: np.ndarray, filt: np.ndarray) -> np.ndarray:
    """Wide convolution of a ``rows x s`` map with a ``rows x l`` filter.

    Output position ``i`` (0-based) is the sum of ``filt * window`` where the
    window covers input columns ``i-l+1 .. i``; columns outside ``0..s-1``
    are zeros. Output length is ``s + l - 1``.
    """
    fmap = np.atleast_2d(np.asarray(fmap, dtype=float))
    filt = np.atleast_2d(np.asarray(filt, dtype=float))
    if fmap.shape[0] != filt.shape[0]:
        raise ShapeError(f"filter has {filt.shape[0]} rows, map has {fmap.shape[0]}")
    l = filt.shape[1]
    if l < 1:
        raise ShapeError("filter width must be >= 1")
    win = _windows(fmap[None], l)[0]  # rows x P x l
    return np.einsum("rpa,ra->p", win, filt)


def _windows(X: np.ndarray, l: int) -> np.ndarray:
    """``n x rows x m`` -> ``n x rows x (m+l-1) x l`` zero-padded windows."""
    Xp = np.pad(X, ((0, 0), (0, 0), (l - 1, l - 1)))
    return sliding_window_view(Xp, l, axis=2)


def dynamic_k(i: int, num_layers: int, s: int, k_top: int) -> int:
    """Pooled length at layer ``i`` (1-based): ``max(k_top, ceil((L-i)/L * s))``."""
    if not 1 <= i <= num_layers:
        raise ValueError(f"layer index {i} outside 1..{num_layers}")
    if s < 1:
        raise ValueError("sentence length must be >= 1")
    return max(k_top, -(-(num_layers - i) * s // num_layers))


def kmax_indices(x: np.ndarray, k: int) -> np.ndarray:
    """Positions of the ``k`` largest values per row, ascending; ``-1`` pads
    rows shorter than ``k``. Ties go to the earliest position."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = np.asarray(x)
    m = x.shape[-1]
    kk = min(k, m)
    top = np.argsort(-x, axis=-1, kind="stable")[..., :kk]
    top = np.sort(top, axis=-1)
    if kk < k:
        pad = np.full(x.shape[:-1] + (k - kk,), -1, dtype=top.dtype)
        top = np.concatenate([top, pad], axis=-1)
    return top


def _gather(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    vals = np.take_along_axis(x, np.maximum(idx, 0), axis=-1)
    return np.where(idx >= 0, vals, 0.0)


def kmax_pool(fmap: np.ndarray, k: int) -> np.ndarray:
    """Keep the ``k`` largest values of each row in their original order;
    rows shorter than ``k`` are right-padded with zeros."""
    fmap = np.asarray(fmap, dtype=float)
    return _gather(fmap, kmax_indices(fmap, k))


# --- filter banks ----------------------------------------------------------------

class FilterBank:
    """All convolution weights of one layer.

    ``weights[l]`` has shape ``kernels x n_in x rows x l`` and ``biases[l]``
    shape ``kernels``.
    """

    def __init__(self, filter_sizes: Sequence[int], kernels: int, n_in: int, rows: int,
                 rng: np.random.Generator | None = None, dtype=DEFAULT_DTYPE):
        self.filter_sizes = tuple(filter_sizes)
        self.kernels = kernels
        self.n_in = n_in
        self.rows = rows
        self.weights: dict[int, Parameter] = {}
        self.biases: dict[int, Parameter] = {}
        for l in self.filter_sizes:
            shape = (kernels, n_in, rows, l)
            if rng is None:
                w = np.zeros(shape, dtype=dtype)
            else:
                bound = math.sqrt(6.0 / (n_in * rows * l + kernels * l))
                w = rng.uniform(-bound, bound, size=shape).astype(dtype)
            self.weights[l] = Parameter(w)
            self.biases[l] = Parameter(np.zeros(kernels, dtype=dtype))

    @property
    def n_out(self) -> int:
        return len(self.filter_sizes) * self.kernels


@dataclass
class FeatureMapStack:
    maps: np.ndarray  # n x rows x positions
    layer_index: int = 0


def _conv_size_forward(win: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    # win: n x rows x P x l, W: J x n x rows x l -> J x P
    return np.tensordot(W, win, axes=([1, 2, 3], [0, 1, 3])) + b[:, None]


def conv_layer_forward(stack, bank: FilterBank, activate: bool = True) -> list[np.ndarray]:
    """Apply every (size, kernel) filter to all input maps and sum over maps.

    Returns one ``kernels x (m + l - 1)`` array per filter size, in
    ``bank.filter_sizes`` order; each row is one output map.
    """
    X = stack.maps if isinstance(stack, FeatureMapStack) else np.asarray(stack)
    if X.ndim != 3 or X.shape[0] != bank.n_in or X.shape[1] != bank.rows:
        raise ShapeError(f"bank expects {bank.n_in} maps of {bank.rows} rows, got {X.shape}")
    out = []
    for l in bank.filter_sizes:
        pre = _conv_size_forward(_windows(X, l), bank.weights[l].value, bank.biases[l].value)
        out.append(np.tanh(pre) if activate else pre)
    return out


# --- the network -------------------------------------------------------------------

@dataclass
class _SizeCache:
    win: np.ndarray
    y: np.ndarray
    idx: np.ndarray


@dataclass
class ForwardCache:
    ids: np.ndarray
    ks: list[int]
    inputs: list[np.ndarray]
    layers: list[list[_SizeCache]]
    flat: np.ndarray
    rep: np.ndarray
    mask: np.ndarray
    probs: np.ndarray
    logits: np.ndarray = field(default=None)

    @property
    def s(self) -> int:
        return len(self.ids)


class MVCNN:
    """The full classifier: multichannel input, ``num_layers`` convolution
    layers with dynamic k-max pooling, a tanh hidden layer and softmax output."""

    def __init__(self, config: NetworkConfig, table: MultichannelTable,
                 rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        if table.c != config.c or table.d != config.d:
            raise ShapeError(f"table is {table.c}x{table.d}, config wants {config.c}x{config.d}")
        self.config = config
        self.table = table
        self.dtype = dtype
        self.banks = []
        n_in, rows = config.c, config.d
        for _ in range(config.num_layers):
            bank = FilterBank(config.filter_sizes, config.kernels_per_size, n_in, rows, rng, dtype)
            self.banks.append(bank)
            n_in, rows = bank.n_out, 1
        h, f, K = config.hidden_dim, config.flat_dim, config.num_classes
        self.fc_W = Parameter(_glorot(rng, (h, f), dtype))
        self.fc_b = Parameter(np.zeros(h, dtype=dtype))
        self.out_W = Parameter(_glorot(rng, (K, h), dtype))
        self.out_b = Parameter(np.zeros(K, dtype=dtype))

    # parameters -------------------------------------------------------------
    def named_parameters(self) -> dict[str, Parameter]:
        out = {f"emb.{i}": ch for i, ch in enumerate(self.table.channels)}
        for li, bank in enumerate(self.banks):
            for l in bank.filter_sizes:
                out[f"conv{li + 1}.size{l}.W"] = bank.weights[l]
                out[f"conv{li + 1}.size{l}.b"] = bank.biases[l]
        out["fc.W"], out["fc.b"] = self.fc_W, self.fc_b
        out["out.W"], out["out.b"] = self.out_W, self.out_b
        return out

    def regularized_parameters(self, include_embeddings: bool = False) -> list[Parameter]:
        """Weight matrices subject to L2 (biases are never regularized)."""
        return [p for name, p in self.named_parameters().items()
                if name.endswith(".W") or (include_embeddings and name.startswith("emb."))]

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.zero_grad()

    # forward ----------------------------------------------------------------
    def forward(self, ids, train: bool = False, rng: np.random.Generator | None = None,
                mask: np.ndarray | None = None) -> ForwardCache:
        ids = np.asarray(ids, dtype=np.int64)
        s = len(ids)
        if s < 1:
            raise ValueError("cannot classify an empty token list")
        cfg = self.config
        X = self.table.lookup(ids)
        inputs, layers, ks = [], [], []
        for i, bank in enumerate(self.banks, start=1):
            k = dynamic_k(i, cfg.num_layers, s, cfg.k_top)
            inputs.append(X)
            sizes, pooled = [], []
            for l in bank.filter_sizes:
                win = _windows(X, l)
                y = np.tanh(_conv_size_forward(win, bank.weights[l].value, bank.biases[l].value))
                assert y.shape[1] == X.shape[2] + l - 1
                idx = kmax_indices(y, k)
                sizes.append(_SizeCache(win, y, idx))
                pooled.append(_gather(y, idx))
            X = np.concatenate(pooled)[:, None, :]
            layers.append(sizes)
            ks.append(k)
        flat = X.reshape(-1)
        rep = np.tanh(self.fc_W.value @ flat + self.fc_b.value)
        if mask is None:
            mask = dropout_mask(rep.shape, cfg.dropout_keep_prob, rng, train, rep.dtype)
        logits = self.out_W.value @ (rep * mask) + self.out_b.value
        return ForwardCache(ids, ks, inputs, layers, flat, rep, mask, softmax(logits), logits)

    def predict_proba(self, ids) -> np.ndarray:
        return self.forward(ids).probs

    # backward ---------------------------------------------------------------
    def backward(self, cache: ForwardCache | None, d_logits: np.ndarray | None = None,
                 d_rep: np.ndarray | None = None) -> None:
        """Accumulate parameter gradients given upstream gradients on the logits
        and/or directly on the (pre-dropout) sentence representation."""
        if cache is None:
            raise RuntimeError("backward called before forward")
        g_rep = np.zeros_like(cache.rep)
        if d_logits is not None:
            hd = cache.rep * cache.mask
            self.out_W.grad += np.outer(d_logits, hd)
            self.out_b.grad += d_logits
            g_rep += (self.out_W.value.T @ d_logits) * cache.mask
        if d_rep is not None:
            g_rep += d_rep
        g_a = g_rep * (1.0 - cache.rep * cache.rep)
        self.fc_W.grad += np.outer(g_a, cache.flat)
        self.fc_b.grad += g_a
        g_X = (self.fc_W.value.T @ g_a).reshape(self.banks[-1].n_out, 1, -1)

        for bank, X_in, sizes in zip(reversed(self.banks), reversed(cache.inputs),
                                     reversed(cache.layers)):
            J = bank.kernels
            g_in = np.zeros_like(X_in)
            g_in_pad = None
            for bi, (l, sc) in enumerate(zip(bank.filter_sizes, sizes)):
                g_pool = g_X[bi * J:(bi + 1) * J, 0, :]
                g_y = np.zeros_like(sc.y)
                rows, cols = np.nonzero(sc.idx >= 0)
                g_y[rows, sc.idx[rows, cols]] = g_pool[rows, cols]
                g_pre = g_y * (1.0 - sc.y * sc.y)
                W = bank.weights[l]
                W.grad += np.tensordot(g_pre, sc.win, axes=([1], [2]))
                bank.biases[l].grad += g_pre.sum(axis=1)
                g_win = np.tensordot(g_pre, W.value, axes=([0], [0]))  # P x n x rows x l
                m = X_in.shape[2]
                g_pad = np.zeros((X_in.shape[0], X_in.shape[1], m + 2 * l - 2), dtype=g_in.dtype)
                P = g_win.shape[0]
                for a in range(l):
                    g_pad[:, :, a:a + P] += g_win[:, :, :, a].transpose(1, 2, 0)
                g_in += g_pad[:, :, l - 1:l - 1 + m]
            g_X = g_in

        # g_X is now c x d x s
        for ch, g in zip(self.table.channels, g_X):
            np.add.at(ch.grad, cache.ids, g.T)
            ch.grad[PAD_ID] = 0.0

    def loss_and_backward(self, ids, label: int, train: bool = False,
                          rng: np.random.Generator | None = None,
                          mask: np.ndarray | None = None, scale: float = 1.0):
        """Cross-entropy for one sentence; gradients (times ``scale``) are added."""
        cache = self.forward(ids, train=train, rng=rng, mask=mask)
        loss = _cross_entropy(cache.logits, label)
        g = cache.probs.copy()
        g[label] -= 1.0
        self.backward(cache, d_logits=scale * g)
        return loss, cache


    def loss(self, ids, label: int, mask: np.ndarray | None = None) -> float:
        """Cross-entropy for one sentence, no gradients (dropout off unless
        ``mask`` is given)."""
        return _cross_entropy(self.forward(ids, mask=mask).logits, label)


def _cross_entropy(logits: np.ndarray, label: int) -> float:
    m = logits.max()
    return float(m + np.log(np.exp(logits - m).sum()) - logits[label])


def _glorot(rng, shape, dtype):
    if rng is None:
        return np.zeros(shape, dtype=dtype)
    bound = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def sentence_forward(model: MVCNN, ids, train: bool = False,
                     rng: np.random.Generator | None = None):
    """Return ``(sentence_rep, class_probs)`` for one sentence."""
    cache = model.forward(ids, train=train, rng=rng)
    return cache.rep, cache.probs


def build_model(vocab, config: NetworkConfig, rng: np.random.Generator, versions=None,
                imputed=None, init_range: float = 0.1, dtype=DEFAULT_DTYPE) -> MVCNN:
    """Create the input table (pretrained channels if ``versions`` is given,
    otherwise ``config.c`` random channels) and a freshly initialized network."""
    from .embeddings import init_multichannel, random_table

    if versions:
        table = init_multichannel(vocab, versions, rng, imputed=imputed,
                                  init_range=init_range, dtype=dtype)
    else:
        table = random_table(vocab, config.c, config.d, rng, init_range, dtype)
    return MVCNN(config, table, rng, dtype)
