"""Tokenization, tweet normalization, TSV datasets and padded mini-batches."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DatasetFormatError

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1

URL_PREFIXES = ("http://", "https://", "www.")

# a letter repeated three or more times
_LETTER_RUN = re.compile(r"([^\W\d_])\1{2,}")
_TOKEN = re.compile(r"\S+")


def _squeeze_runs(token: str) -> str:
    return _LETTER_RUN.sub(lambda m: m.group(1) * 2, token)


def _normalize_token(tok: str) -> str:
    if tok.startswith("@"):
        return "username"
    low = tok.lower()
    # runs are squeezed on the lowercased token, and URLs are recognized
    # before or after squeezing, so that f(f(x)) == f(x)
    folded = _squeeze_runs(low)
    if low.startswith(URL_PREFIXES) or folded.startswith(URL_PREFIXES):
        return "url"
    return folded


def normalize_tweet(text: str) -> str:
    """Apply the tweet rules token by token, leaving whitespace as is.

    URLs become ``url`` and ``@``-mentions ``username``; any letter repeated
    more than twice is cut to two occurrences; everything is lowercased.

    >>> normalize_tweet("@thomasss cooooooool http://x.com")
    'username cool url'
    """
    return _TOKEN.sub(lambda m: _normalize_token(m.group(0)), text)


def tokenize(text: str) -> list[str]:
    return text.split()


@dataclass
class Dataset:
    examples: list[tuple[int, list[str]]]
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        for label, toks in self.examples:
            if not 0 <= label < self.num_classes:
                raise DatasetFormatError(f"label {label} outside [0, {self.num_classes})")
            if not toks:
                raise DatasetFormatError("empty token list")

    def __len__(self):
        return len(self.examples)

    @property
    def labels(self) -> list[int]:
        return [y for y, _ in self.examples]

    @property
    def sentences(self) -> list[list[str]]:
        return [t for _, t in self.examples]


def _lines(stream) -> Iterable[str]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    for line in stream:
        yield line.rstrip("\r\n")


def load_tsv(stream, num_classes: int | None = None, split: str = "train",
             tweet: bool = False) -> Dataset:
    """Read ``label<TAB>text`` lines. Blank lines are skipped.

    ``num_classes`` defaults to ``max label + 1``; when given, larger labels
    are an error.
    """
    examples = []
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DatasetFormatError(f"line {lineno}: expected 'label<TAB>text'")
        label_s, text = line.split("\t", 1)
        try:
            label = int(label_s)
        except ValueError:
            raise DatasetFormatError(f"line {lineno}: bad label {label_s!r}") from None
        if label < 0:
            raise DatasetFormatError(f"line {lineno}: negative label {label}")
        if num_classes is not None and label >= num_classes:
            raise DatasetFormatError(
                f"line {lineno}: label {label} >= declared num_classes {num_classes}")
        if tweet:
            text = normalize_tweet(text)
        toks = tokenize(text)
        if not toks:
            raise DatasetFormatError(f"line {lineno}: no tokens")
        examples.append((label, toks))
    if not examples:
        raise DatasetFormatError("dataset is empty")
    k = num_classes if num_classes is not None else max(y for y, _ in examples) + 1
    return Dataset(examples, k, split)


def load_corpus(stream, tweet: bool = False) -> list[list[str]]:
    """One sentence per line; blank lines are dropped."""
    out = []
    for line in _lines(stream):
        if tweet:
            line = normalize_tweet(line)
        toks = tokenize(line)
        if toks:
            out.append(toks)
    return out


@dataclass
class Vocabulary:
    """Word to row mapping. Row 0 is padding and row 1 the unknown word."""

    words: list[str] = field(default_factory=lambda: [PAD, UNK])

    def __post_init__(self):
        if self.words[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with the padding and unknown words")
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate words in vocabulary")

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocabulary":
        seen = set()
        for toks in sentences:
            seen.update(toks)
        seen.discard(PAD)
        seen.discard(UNK)
        return cls([PAD, UNK] + sorted(seen))

    def __len__(self):
        return len(self.words)

    def __contains__(self, w):
        return w in self.index

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]


@dataclass
class Batch:
    token_ids: np.ndarray  # batch_size x s_max, padded with PAD_ID
    lengths: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.lengths)

    def sentences(self) -> list[np.ndarray]:
        """Un-padded id rows at their true lengths."""
        return [self.token_ids[i, :n] for i, n in enumerate(self.lengths)]


def pad_batch(id_lists: Sequence[Sequence[int]], labels: Sequence[int]) -> Batch:
    lengths = np.array([len(x) for x in id_lists], dtype=np.int64)
    mat = np.full((len(id_lists), int(lengths.max())), PAD_ID, dtype=np.int64)
    for i, ids in enumerate(id_lists):
        mat[i, : len(ids)] = ids
    return Batch(mat, lengths, np.asarray(labels, dtype=np.int64))


def build_batches(dataset: Dataset, vocab: Vocabulary | Mapping[str, int], batch_size: int,
                  rng: np.random.Generator | None = None) -> list[Batch]:
    """Shuffle (when ``rng`` is given) and cut into padded batches; the last
    batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(dataset) == 0:
        raise DatasetFormatError("dataset is empty")
    if isinstance(vocab, Vocabulary):
        encode = vocab.encode
    else:
        encode = lambda toks: [vocab.get(t, UNK_ID) for t in toks]  # noqa: E731
    order = np.arange(len(dataset))
    if rng is not None:
        order = rng.permutation(len(dataset))
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        ids = [encode(dataset.examples[i][1]) for i in idx]
        batches.append(pad_batch(ids, [dataset.examples[i][0] for i in idx]))
    return batches
