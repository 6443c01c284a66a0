"""Dense array ops with hand-written backward rules, AdaGrad, dropout and a
finite-difference gradient checker.

Arrays are plain ``numpy.ndarray`` objects (float64 by default). Every op comes
as a forward function plus a matching ``*_backward`` function; the pairs are
collected in :data:`OP_RULES` so they can be checked generically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple

import numpy as np

from .errors import NonDeterministicError, NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64
ADAGRAD_EPS = 1e-6
L2_LAMBDA = 5e-3


def check_finite(x: np.ndarray, what: str = "array") -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite value in {what}")


@dataclass
class Parameter:
    """A trainable array together with its gradient and AdaGrad accumulator."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)
    accum: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.accum is None:
            self.accum = np.zeros_like(self.value)
        if not (self.value.shape == self.grad.shape == self.accum.shape):
            raise ShapeError("value, grad and accum must share one shape")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


# --- element-wise tanh -------------------------------------------------------

def tanh_map(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    check_finite(x, "tanh input")
    return np.tanh(x)


def tanh_backward(y: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return upstream * (1.0 - y * y)


# --- affine map --------------------------------------------------------------

def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``W @ x + b`` for an ``m x n`` matrix, ``n``-vector and ``m``-vector."""
    W, x, b = np.asarray(W), np.asarray(x), np.asarray(b)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"affine expects 2-D W, 1-D x and b, got {W.shape}, {x.shape}, {b.shape}")
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ShapeError(f"affine shape mismatch: W{W.shape} x{x.shape} b{b.shape}")
    return W @ x + b


def affine_backward(W: np.ndarray, x: np.ndarray, upstream: np.ndarray):
    """Gradients ``(dW, dx, db)`` of ``W @ x + b`` given the upstream gradient."""
    return np.outer(upstream, x), W.T @ upstream, upstream.copy()


# --- softmax + cross-entropy -------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Return ``(loss, probs)`` where loss is ``-log softmax(logits)[label]``."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 1:
        raise ShapeError("logits must be a vector")
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    check_finite(logits, "logits")
    m = np.max(logits)
    lse = m + math.log(np.exp(logits - m).sum())
    probs = softmax(logits)
    return float(lse - logits[label]), probs


def softmax_cross_entropy_backward(probs: np.ndarray, label: int) -> np.ndarray:
    g = probs.copy()
    g[label] -= 1.0
    return g


# --- dropout -----------------------------------------------------------------

def dropout_mask(shape, keep_prob: float, rng: np.random.Generator | None = None,
                 train: bool = True, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Inverted dropout mask: entries are ``1/keep_prob`` with probability
    ``keep_prob`` and 0 otherwise. Outside training the mask is all ones."""
    if not (0.0 < keep_prob <= 1.0):
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if not train or keep_prob == 1.0:
        return np.ones(shape, dtype=dtype)
    if rng is None:
        raise ValueError("a random generator is required in training mode")
    keep = rng.random(shape) < keep_prob
    return keep.astype(dtype) / keep_prob


# --- optimizer and regularizer -----------------------------------------------

def adagrad_step(p: Parameter, lr: float, eps: float = ADAGRAD_EPS, rows=None) -> None:
    """``accum += g^2; value -= lr * g / (sqrt(accum) + eps)``; clears ``g``.

    ``rows`` limits the update to those leading-axis rows; rows with a zero
    gradient are unaffected by the rule, so this is exact when every row with
    a nonzero gradient is listed.
    """
    if rows is None:
        g = p.grad
        check_finite(g, "gradient")
        p.accum += g * g
        p.value -= lr * g / (np.sqrt(p.accum) + eps)
        p.grad.fill(0.0)
        return
    rows = np.unique(np.asarray(rows, dtype=np.int64))
    g = p.grad[rows]
    check_finite(g, "gradient")
    acc = p.accum[rows] + g * g
    p.accum[rows] = acc
    p.value[rows] -= lr * g / (np.sqrt(acc) + eps)
    p.grad[rows] = 0.0


def l2_regularize(params: Iterable[Parameter], lam: float = L2_LAMBDA) -> float:
    """Add ``lam * w`` to each gradient and return ``lam/2 * sum ||w||^2``."""
    if lam < 0:
        raise ValueError(f"L2 weight must be nonnegative, got {lam}")
    params = list(params)
    for p in params:
        p.grad += lam * p.value
    return l2_value(params, lam)


def l2_value(params: Iterable[Parameter], lam: float = L2_LAMBDA) -> float:
    """``lam/2 * sum ||w||^2`` without touching gradients."""
    if lam == 0:
        return 0.0
    total = 0.0
    for p in params:
        total += float(np.sum(p.value * p.value))
    return 0.5 * lam * total


# --- generic op table --------------------------------------------------------

class OpRule(NamedTuple):
    """Forward function over a tuple of inputs, and its backward rule
    ``(inputs, output, upstream) -> tuple of input gradients``."""

    forward: Callable
    backward: Callable


def _tanh_rule_bw(inputs, y, g):
    return (tanh_backward(y, g),)


def _affine_rule_bw(inputs, y, g):
    W, x, _ = inputs
    return affine_backward(W, x, g)


def _dropout_apply_bw(inputs, y, g):
    x, mask = inputs
    return (g * mask, np.zeros_like(mask))


OP_RULES: dict[str, OpRule] = {
    "tanh": OpRule(lambda x: tanh_map(x), _tanh_rule_bw),
    "affine": OpRule(lambda W, x, b: affine(W, x, b), _affine_rule_bw),
    "dropout_apply": OpRule(lambda x, mask: x * mask, _dropout_apply_bw),
}


# --- gradient checking -------------------------------------------------------

def _as_list(params) -> list[Parameter]:
    if isinstance(params, Mapping):
        return list(params.values())
    if isinstance(params, Parameter):
        return [params]
    return list(params)


@dataclass
class FDReport:
    """Outcome of a finite-difference check. ``skipped`` counts coordinates
    where the loss was not smooth inside the stencil even at the smallest
    step (only possible with ``smooth_retries > 0``)."""

    max_rel_error: float
    probed: int
    skipped: int
    worst_param: int | None = None


def _central(at, h):
    return (at(h) - at(-h)) / (2 * h)


def finite_difference_report(loss_fn: Callable[[], float], params, eps: float = 1e-5,
                             max_coords: int = 12, rng: np.random.Generator | None = None,
                             order: int = 2, value_fn: Callable[[], float] | None = None,
                             smooth_retries: int = 0) -> FDReport:
    """Compare analytic gradients with central differences.

    ``loss_fn()`` must return the scalar loss and, as a side effect, add its
    analytic gradient into ``p.grad`` for every parameter in ``params``. The
    checker zeroes gradients before each call. Up to ``max_coords``
    coordinates per parameter are probed, half of them drawn from coordinates
    with a nonzero analytic gradient. The error of one coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.

    ``order=2`` is the usual ``(f(x+e) - f(x-e)) / 2e``. ``order=4`` uses the
    five-point stencil, whose smaller truncation error allows a larger ``eps``
    and so less float rounding on coordinates with tiny gradients.
    ``value_fn``, if given, must return the same loss without touching
    gradients; it is used for the perturbed evaluations.

    With ``order=4`` and ``smooth_retries > 0`` the two central differences
    inside the stencil are compared; when they disagree the loss jumps
    inside the stencil (k-max pooling switches selection there), so the step
    is divided by 10 and the coordinate retried, up to ``smooth_retries``
    times, after which it is skipped.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    if smooth_retries and order != 4:
        raise ValueError("smoothness retries need order=4")
    plist = _as_list(params)
    rng = rng if rng is not None else np.random.default_rng(0)

    def run() -> float:
        for p in plist:
            p.zero_grad()
        return float(loss_fn())

    base = run()
    analytic = [p.grad.copy() for p in plist]
    again = run()
    if again != base:
        raise NonDeterministicError(f"loss_fn returned {base!r} then {again!r}")
    if value_fn is not None and float(value_fn()) != base:
        raise ValueError("value_fn and loss_fn disagree at the unperturbed point")

    worst, worst_param, probed, skipped = 0.0, None, 0, 0
    for pi, (p, g) in enumerate(zip(plist, analytic)):
        flat_g = g.reshape(-1)
        n = flat_g.size
        nonzero = np.flatnonzero(flat_g)
        want_nz = min(len(nonzero), max(1, max_coords // 2))
        picks = list(rng.choice(nonzero, size=want_nz, replace=False)) if want_nz else []
        rest = max_coords - len(picks)
        if rest > 0:
            picks += list(rng.choice(n, size=min(rest, n), replace=False))
        flat_v = p.value.reshape(-1)
        for idx in sorted(set(int(i) for i in picks)):
            old = flat_v[idx]

            def at(h):
                flat_v[idx] = old + h
                v = float(value_fn()) if value_fn is not None else run()
                flat_v[idx] = old
                return v

            if order == 2:
                numeric = _central(at, eps)
            else:
                h = eps
                for attempt in range(smooth_retries + 1):
                    d1, d2 = _central(at, h), _central(at, 2 * h)
                    numeric = (4 * d1 - d2) / 3
                    if not smooth_retries or abs(d2 - d1) <= 1e-3 * max(abs(d1), abs(d2)) + 1e-7:
                        break
                    h /= 10
                else:
                    skipped += 1
                    continue
            probed += 1
            a = flat_g[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst, worst_param = err, pi
    for p in plist:
        p.zero_grad()
    return FDReport(worst, probed, skipped, worst_param)


def finite_difference_check(loss_fn: Callable[[], float], params, eps: float = 1e-5,
                            max_coords: int = 12, rng: np.random.Generator | None = None,
                            order: int = 2, value_fn: Callable[[], float] | None = None,
                            smooth_retries: int = 0) -> float:
    """Max relative error of :func:`finite_difference_report`."""
    return finite_difference_report(loss_fn, params, eps, max_coords, rng, order,
                                    value_fn, smooth_retries).max_rel_error
