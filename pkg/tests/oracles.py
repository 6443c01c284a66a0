"""Slow, obviously-correct reference implementations used by the tests."""

import math
from fractions import Fraction

import numpy as np


def conv_oracle(fmap, filt):
    """Nested-loop wide convolution with explicit zero padding."""
    fmap = np.atleast_2d(fmap)
    filt = np.atleast_2d(filt)
    rows, s = fmap.shape
    l = filt.shape[1]
    out = np.zeros(s + l - 1)
    for p in range(s + l - 1):
        total = 0.0
        for r in range(rows):
            for a in range(l):
                col = p - l + 1 + a
                if 0 <= col < s:
                    total += filt[r, a] * fmap[r, col]
        out[p] = total
    return out


def layer_oracle(X, weights, biases, activate=True):
    """X: n x rows x m; weights[l]: J x n x rows x l. Sum over maps, bias, tanh."""
    out = []
    for l, W in weights.items():
        J = W.shape[0]
        y = np.zeros((J, X.shape[2] + l - 1))
        for j in range(J):
            acc = np.zeros(X.shape[2] + l - 1)
            for k in range(X.shape[0]):
                acc = acc + conv_oracle(X[k], W[j, k])
            y[j] = acc + biases[l][j]
        out.append(np.tanh(y) if activate else y)
    return out


def kmax_oracle(row, k):
    """Sort (value desc, position asc), keep k, restore positional order, pad."""
    order = sorted(range(len(row)), key=lambda i: (-row[i], i))[:k]
    vals = [row[i] for i in sorted(order)]
    return np.array(vals + [0.0] * (k - len(vals)))


def dynamic_k_oracle(i, L, s, k_top):
    """Exact rational arithmetic, no integer tricks."""
    return max(k_top, math.ceil(Fraction(L - i, L) * s))
