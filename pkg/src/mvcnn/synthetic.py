"""Small synthetic corpora for tests, gradient checks and demos.

Words ``w0 .. w{V-1}`` are split into two topic blocks (one per class) and a
neutral block. A sentence draws each token from its class's topic block with
probability ``topic_rate`` and from the neutral block otherwise, and always
contains at least one topic word, so the classes are separable.
"""

from __future__ import annotations

import numpy as np

from .text import Dataset


def _sentence(rng, label, vocab_size, topic_frac, topic_rate, min_len, max_len):
    n_topic = max(1, int(vocab_size * topic_frac))
    topic = np.arange(label * n_topic, (label + 1) * n_topic)
    neutral = np.arange(2 * n_topic, vocab_size)
    s = int(rng.integers(min_len, max_len + 1))
    toks = [int(rng.choice(topic)) if rng.random() < topic_rate or len(neutral) == 0
            else int(rng.choice(neutral)) for _ in range(s)]
    if not any(t in topic for t in toks):
        toks[int(rng.integers(s))] = int(rng.choice(topic))
    return [f"w{t}" for t in toks]


def separable_task(n_sentences: int = 50, vocab_size: int = 100, seed: int = 0,
                   topic_frac: float = 0.2, topic_rate: float = 0.3,
                   min_len: int = 4, max_len: int = 12) -> Dataset:
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n_sentences):
        label = i % 2
        examples.append((label, _sentence(rng, label, vocab_size, topic_frac, topic_rate,
                                          min_len, max_len)))
    order = rng.permutation(n_sentences)
    return Dataset([examples[i] for i in order], 2, "train")


def unlabeled_corpus(n_sentences: int = 200, vocab_size: int = 100, seed: int = 1,
                     **kw) -> list[list[str]]:
    return separable_task(n_sentences, vocab_size, seed, **kw).sentences


def vocabulary_words(vocab_size: int = 100) -> list[str]:
    return [f"w{i}" for i in range(vocab_size)]
