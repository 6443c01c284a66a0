"""Pretrained embedding versions, vocabulary coverage and the multichannel
input table."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import DEFAULT_DTYPE, Parameter
from .errors import EmbeddingFormatError, ShapeError
from .text import PAD, PAD_ID, UNK, Vocabulary

log = logging.getLogger(__name__)

INIT_RANGE = 0.1

# provenance codes stored per (channel, row)
RANDOM, PRETRAINED, IMPUTED = 0, 1, 2
PROVENANCE_NAMES = {RANDOM: "random", PRETRAINED: "pretrained", IMPUTED: "imputed"}


@dataclass
class EmbeddingVersion:
    name: str
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    duplicate_warnings: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ShapeError("embedding dim must be positive")
        for w, v in self.entries.items():
            if np.shape(v) != (self.dim,):
                raise ShapeError(f"{self.name}: vector for {w!r} has shape {np.shape(v)}")

    def __contains__(self, word):
        return word in self.entries

    def __len__(self):
        return len(self.entries)

    @property
    def vocab(self) -> set[str]:
        return set(self.entries)

    def matrix(self, words: Sequence[str]) -> np.ndarray:
        return np.array([self.entries[w] for w in words], dtype=float).reshape(len(words), self.dim)


def load_embeddings(stream, name: str = "emb") -> EmbeddingVersion:
    """Parse ``word v1 ... vd`` lines.

    An optional first line ``count dim`` is treated as a header. The dimension
    otherwise comes from the first data line. Duplicate words keep their first
    vector and are counted in ``duplicate_warnings``.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    dim = None
    entries: dict[str, np.ndarray] = {}
    dups = 0
    for lineno, raw in enumerate(stream, start=1):
        parts = raw.rstrip("\r\n").split()
        if not parts:
            continue
        if lineno == 1 and len(parts) == 2 and dim is None:
            try:
                _, hdr_dim = int(parts[0]), int(parts[1])
            except ValueError:
                pass
            else:
                dim = hdr_dim
                continue
        word, vals = parts[0], parts[1:]
        if dim is None:
            dim = len(vals)
            if dim == 0:
                raise EmbeddingFormatError(f"line {lineno}: no vector components")
        if len(vals) != dim:
            raise EmbeddingFormatError(
                f"line {lineno}: dimension mismatch, expected {dim} values, got {len(vals)}")
        try:
            vec = np.array([float(v) for v in vals])
        except ValueError:
            raise EmbeddingFormatError(f"line {lineno}: unparsable real in {raw.strip()!r}") from None
        if not np.all(np.isfinite(vec)):
            raise EmbeddingFormatError(f"line {lineno}: non-finite value")
        if word in entries:
            dups += 1
            continue
        entries[word] = vec
    if dim is None:
        raise EmbeddingFormatError("no embeddings found")
    if dups:
        log.warning("%s: %d duplicate word(s) ignored", name, dups)
    return EmbeddingVersion(name, dim, entries, dups)


def load_embedding_file(path) -> EmbeddingVersion:
    from pathlib import Path

    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        try:
            return load_embeddings(fh, name=path.stem)
        except EmbeddingFormatError as e:
            raise EmbeddingFormatError(f"{path}: {e}") from None


def write_embeddings(version: EmbeddingVersion, stream) -> None:
    stream.write(f"{len(version)} {version.dim}\n")
    for w in sorted(version.entries):
        stream.write(w + " " + " ".join(repr(float(x)) for x in version.entries[w]) + "\n")


@dataclass
class CoverageStats:
    names: list[str]
    per_version_unknown: list[int]
    vocab_size: int
    full_hit: int
    partial_hit: int
    no_hit: int

    def rows(self) -> list[tuple[str, int]]:
        """Rows in the order: one per version, vocab size, full/partial/no hit."""
        out = list(zip(self.names, self.per_version_unknown))
        out += [("Voc size", self.vocab_size), ("Full hit", self.full_hit),
                ("Partial hit", self.partial_hit), ("No hit", self.no_hit)]
        return out

    def format(self) -> str:
        width = max(len(k) for k, _ in self.rows())
        return "\n".join(f"{k:<{width}}  {v}" for k, v in self.rows())


def coverage_stats(versions: Sequence[EmbeddingVersion], corpus_vocab: Iterable[str]) -> CoverageStats:
    if not versions:
        raise ValueError("at least one embedding version is required")
    vocab = set(corpus_vocab) - {PAD, UNK}
    if not vocab:
        raise ValueError("corpus vocabulary is empty")
    hits = {w: sum(w in v for v in versions) for w in vocab}
    c = len(versions)
    full = sum(1 for h in hits.values() if h == c)
    none = sum(1 for h in hits.values() if h == 0)
    return CoverageStats(
        names=[v.name for v in versions],
        per_version_unknown=[len(vocab) - len(vocab & v.vocab) for v in versions],
        vocab_size=len(vocab),
        full_hit=full,
        partial_hit=len(vocab) - full - none,
        no_hit=none,
    )


@dataclass
class MultichannelTable:
    """``c`` trainable lookup tables over one shared vocabulary.

    ``provenance[i, row]`` records whether channel ``i``'s row came from the
    pretrained version, from mutual-learning imputation, or from random init.
    Row 0 (padding) is zero in every channel and never updated.
    """

    vocab: Vocabulary
    channels: list[Parameter]
    provenance: np.ndarray

    def __post_init__(self):
        if not self.channels:
            raise ValueError("need at least one channel")
        shape = self.channels[0].shape
        if any(ch.shape != shape for ch in self.channels) or shape[0] != len(self.vocab):
            raise ShapeError("channels must all be |vocab| x d")

    @property
    def c(self) -> int:
        return len(self.channels)

    @property
    def d(self) -> int:
        return self.channels[0].shape[1]

    @property
    def word_index(self) -> dict[str, int]:
        return self.vocab.index

    @property
    def presence(self) -> np.ndarray:
        return self.provenance != RANDOM

    def lookup(self, ids) -> np.ndarray:
        """Return a ``c x d x s`` array for the token ids."""
        return np.stack([ch.value[ids].T for ch in self.channels])

    def mask_padding(self) -> None:
        for ch in self.channels:
            ch.value[PAD_ID] = 0.0
            ch.grad[PAD_ID] = 0.0


def random_table(vocab: Vocabulary, c: int, d: int, rng: np.random.Generator,
                 init_range: float = INIT_RANGE, dtype=DEFAULT_DTYPE) -> MultichannelTable:
    chans = []
    for _ in range(c):
        v = rng.uniform(-init_range, init_range, size=(len(vocab), d)).astype(dtype)
        v[PAD_ID] = 0.0
        chans.append(Parameter(v))
    return MultichannelTable(vocab, chans, np.zeros((c, len(vocab)), dtype=np.int8))


def init_multichannel(corpus_vocab, versions: Sequence[EmbeddingVersion],
                      rng: np.random.Generator, imputed: Sequence[EmbeddingVersion] | None = None,
                      init_range: float = INIT_RANGE, dtype=DEFAULT_DTYPE) -> MultichannelTable:
    """Build one channel per embedding version over ``corpus_vocab``.

    Each row takes the version's vector when known, else the imputed vector
    (if an imputed version is supplied for that channel), else a uniform draw
    in ``[-init_range, init_range]``. ``imputed`` may be a ``CompletedVersions``
    or a plain list aligned with ``versions``.
    """
    if not versions:
        raise ValueError("at least one embedding version is required")
    d = versions[0].dim
    if any(v.dim != d for v in versions):
        raise ShapeError("embedding versions have different dimensions")
    if imputed is not None:
        imputed = list(getattr(imputed, "versions", imputed))
        if len(imputed) != len(versions):
            raise ShapeError("need one imputed version per channel")
        if any(v.dim != d for v in imputed):
            raise ShapeError("imputed vectors do not match the embedding dimension")
    vocab = corpus_vocab if isinstance(corpus_vocab, Vocabulary) else Vocabulary.build([corpus_vocab])
    table = random_table(vocab, len(versions), d, rng, init_range, dtype)
    for i, ver in enumerate(versions):
        val, prov = table.channels[i].value, table.provenance[i]
        for row, w in enumerate(vocab.words):
            if row == PAD_ID:
                continue
            if w in ver.entries:
                val[row] = ver.entries[w]
                prov[row] = PRETRAINED
            elif imputed is not None and w in imputed[i].entries:
                val[row] = imputed[i].entries[w]
                prov[row] = IMPUTED
    return table
