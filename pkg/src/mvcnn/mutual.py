"""Linear projections between embedding spaces and imputation of words that
one version lacks but others know."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingVersion
from .errors import ShapeError, SingularSystemError

PRETRAINED = "pretrained"
IMPUTED = "imputed"

RIDGE_SCALE = 1e-3


@dataclass
class ProjectionMatrix:
    source: str
    target: str
    M: np.ndarray
    train_residual: float
    n_train: int = 0

    def __call__(self, vec: np.ndarray) -> np.ndarray:
        return self.M @ vec


def train_projection(src: EmbeddingVersion, tgt: EmbeddingVersion,
                     ridge: float | None = None) -> ProjectionMatrix:
    """Least-squares map ``M`` with ``M @ src[w] ~= tgt[w]`` over shared words.

    Minimizes ``sum ||M x - y||^2 + ridge * ||M||_F^2`` in closed form. With
    ``ridge=None`` the penalty is ``1e-3 * |intersection|``. ``train_residual``
    is the mean squared error per word on the intersection.
    """
    if src.dim != tgt.dim:
        raise ShapeError(f"{src.name} has dim {src.dim}, {tgt.name} has dim {tgt.dim}")
    shared = sorted(src.vocab & tgt.vocab)
    if not shared:
        raise ValueError(f"no shared vocabulary between {src.name!r} and {tgt.name!r}")
    X, Y = src.matrix(shared), tgt.matrix(shared)
    d = src.dim
    if ridge is None:
        ridge = RIDGE_SCALE * len(shared)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    gram = X.T @ X + ridge * np.eye(d)
    if ridge == 0 and np.linalg.matrix_rank(X) < d:
        raise SingularSystemError(
            f"{src.name}->{tgt.name}: {len(shared)} shared word(s) do not span {d} dimensions; "
            "use ridge > 0")
    try:
        Mt = np.linalg.solve(gram, X.T @ Y)
    except np.linalg.LinAlgError as e:
        raise SingularSystemError(f"{src.name}->{tgt.name}: {e}; use ridge > 0") from None
    M = Mt.T
    resid = X @ Mt - Y
    return ProjectionMatrix(src.name, tgt.name, M, float(np.mean(np.sum(resid * resid, axis=1))),
                            len(shared))


def train_all_projections(versions: Sequence[EmbeddingVersion], ridge: float | None = None,
                          pairs=None) -> dict[tuple[int, int], ProjectionMatrix]:
    """One directed projection per ordered pair ``(i, j)``, keyed by index pair.

    ``pairs`` restricts training to the given index pairs.
    """
    if len(versions) < 2:
        raise ValueError("need at least two embedding versions")
    out = {}
    for i, j in (pairs if pairs is not None else permutations(range(len(versions)), 2)):
        try:
            out[(i, j)] = train_projection(versions[i], versions[j], ridge)
        except (ValueError, SingularSystemError) as e:
            raise type(e)(f"pair ({i}, {j}) {versions[i].name}->{versions[j].name}: {e}") from None
    return out


def impute(word: str, target: int, versions: Sequence[EmbeddingVersion],
           projections: dict[tuple[int, int], ProjectionMatrix]) -> np.ndarray:
    """Average of ``M[k, target] @ versions[k][word]`` over every other
    version ``k`` that knows ``word``."""
    sources = [k for k, v in enumerate(versions) if k != target and word in v]
    if not sources:
        raise KeyError(f"{word!r} is not known in any source version")
    projected = [projections[(k, target)](versions[k].entries[word]) for k in sources]
    return np.mean(projected, axis=0)


@dataclass
class CompletedVersions:
    versions: list[EmbeddingVersion]
    provenance: list[dict[str, str]] = field(default_factory=list)
    projections: dict = field(default_factory=dict)

    @property
    def vocab(self) -> set[str]:
        return self.versions[0].vocab if self.versions else set()

    def imputed_count(self) -> int:
        return sum(1 for p in self.provenance for s in p.values() if s == IMPUTED)


def complete_all(versions: Sequence[EmbeddingVersion], ridge: float | None = None) -> CompletedVersions:
    """Extend every version to the union vocabulary by imputation.

    Only the projections actually needed are trained. The inputs are not
    modified.
    """
    if len(versions) < 2:
        raise ValueError("need at least two embedding versions")
    union = set().union(*(v.vocab for v in versions))
    missing = [sorted(union - v.vocab) for v in versions]
    needed = sorted({(k, i) for i, words in enumerate(missing) for w in words
                     for k, v in enumerate(versions) if k != i and w in v})
    projections = train_all_projections(versions, ridge, pairs=needed) if needed else {}

    out, prov = [], []
    for i, ver in enumerate(versions):
        entries = {w: vec.copy() for w, vec in ver.entries.items()}
        status = {w: PRETRAINED for w in entries}
        for w in missing[i]:
            entries[w] = impute(w, i, versions, projections)
            status[w] = IMPUTED
        out.append(EmbeddingVersion(ver.name, ver.dim, entries))
        prov.append(status)
    return CompletedVersions(out, prov, projections)


def write_provenance(completed: CompletedVersions, stream) -> None:
    """Tab-separated sidecar: a header of version names, then one row per word."""
    names = [v.name for v in completed.versions]
    stream.write("word\t" + "\t".join(names) + "\n")
    for w in sorted(completed.vocab):
        stream.write(w + "\t" + "\t".join(p[w] for p in completed.provenance) + "\n")
