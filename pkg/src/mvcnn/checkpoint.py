"""Binary checkpoint format.

Layout::

    MVCNN-CHECKPOINT\\n
    format_version=1\\n
    [config]\\n
    key=value lines (NetworkConfig)
    [vocab] N\\n
    N words, one per line
    [params] P\\n
    then P records: "<name> <ndim> <dim1> ... <dimn>\\n" + raw little-endian float32 data
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np

from .autodiff import Parameter
from .embeddings import MultichannelTable
from .errors import CheckpointError
from .network import MVCNN, NetworkConfig
from .text import Vocabulary

MAGIC = b"MVCNN-CHECKPOINT\n"
FORMAT_VERSION = 1


def dumps(model: MVCNN) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(f"format_version={FORMAT_VERSION}\n".encode())
    buf.write(b"[config]\n")
    for k, v in model.config.to_dict().items():
        buf.write(f"{k}={v}\n".encode())
    words = model.table.vocab.words
    buf.write(f"[vocab] {len(words)}\n".encode())
    for w in words:
        buf.write(w.encode("utf-8") + b"\n")
    params = model.named_parameters()
    buf.write(f"[params] {len(params)}\n".encode())
    for name, p in params.items():
        dims = " ".join(str(x) for x in p.shape)
        buf.write(f"{name} {p.value.ndim} {dims}\n".encode())
        buf.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(model: MVCNN, path) -> str:
    """Write the checkpoint and return its SHA-256 hex digest."""
    data = dumps(model)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _readline(buf: io.BytesIO) -> str:
    line = buf.readline()
    if not line.endswith(b"\n"):
        raise CheckpointError("truncated checkpoint")
    return line[:-1].decode("utf-8")


def loads(data: bytes) -> MVCNN:
    buf = io.BytesIO(data)
    if buf.readline() != MAGIC:
        raise CheckpointError("not an MVCNN checkpoint (bad magic)")
    line = _readline(buf)
    if not line.startswith("format_version="):
        raise CheckpointError("missing format version")
    version = int(line.split("=", 1)[1])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version} "
                              f"(expected {FORMAT_VERSION})")
    if _readline(buf) != "[config]":
        raise CheckpointError("missing [config] block")
    kv = {}
    while True:
        line = _readline(buf)
        if line.startswith("[vocab]"):
            break
        k, _, v = line.partition("=")
        kv[k] = v
    config = NetworkConfig.from_dict(kv)
    words = [_readline(buf) for _ in range(int(line.split()[1]))]
    header = _readline(buf)
    if not header.startswith("[params]"):
        raise CheckpointError("missing [params] block")
    arrays = {}
    for _ in range(int(header.split()[1])):
        parts = _readline(buf).split()
        name, ndim = parts[0], int(parts[1])
        shape = tuple(int(x) for x in parts[2:2 + ndim])
        n = int(np.prod(shape)) if shape else 1
        raw = buf.read(4 * n)
        if len(raw) != 4 * n:
            raise CheckpointError(f"truncated data for {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

    vocab = Vocabulary(words)
    chans = [Parameter(np.zeros((len(words), config.d))) for _ in range(config.c)]
    table = MultichannelTable(vocab, chans, np.zeros((config.c, len(words)), dtype=np.int8))
    model = MVCNN(config, table, rng=None)
    params = model.named_parameters()
    if set(params) != set(arrays):
        raise CheckpointError(f"parameter names differ: {sorted(set(params) ^ set(arrays))}")
    for name, p in params.items():
        if p.shape != arrays[name].shape:
            raise CheckpointError(f"{name}: shape {arrays[name].shape}, expected {p.shape}")
        p.value[...] = arrays[name]
    return model


def load_checkpoint(path) -> MVCNN:
    try:
        return loads(Path(path).read_bytes())
    except CheckpointError as e:
        raise CheckpointError(f"{path}: {e}") from None
