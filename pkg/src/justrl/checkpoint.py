"""Policy checkpoint files.

Binary layout (little-endian)::

    offset  size  field
    0       8     magic  b"JUSTRLPL"
    8       4     version (uint32, currently 1)
    12      4     V, vocabulary size (uint32)
    16      4     k, context width (uint32)
    20      4     D, embedding dim (uint32)
    24      8*N   parameters, float64, N = V * (2 * D + 1)

A JSON sidecar with the same stem (``.json``) carries the vocabulary tokens,
the training step and the configuration snapshot.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError
from .policy import ToyPolicy, n_params
from .vocab import DEFAULT_VOCAB, Vocab

MAGIC = b"JUSTRLPL"
VERSION = 1
_HEADER = struct.Struct("<8sIIII")


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def save_policy(policy: ToyPolicy, path: str | Path, meta: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, policy.vocab_size, policy.context_width, policy.embed_dim)
    path.write_bytes(header + policy.params.astype("<f8").tobytes())
    side = {"format": "justrl-policy", "version": VERSION, "vocab": list(policy.vocab.tokens)}
    side.update(meta or {})
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def read_sidecar(path: str | Path) -> dict[str, Any]:
    side = sidecar_path(path)
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{side}: sidecar is not valid JSON ({exc.msg})") from exc


def load_policy(path: str | Path) -> tuple[ToyPolicy, dict[str, Any]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror or exc})") from exc
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: {len(data)} bytes, shorter than the {_HEADER.size}-byte header")
    magic, version, v, k, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}, expected {VERSION}")
    expected = n_params(v, k, d)
    body = len(data) - _HEADER.size
    if body != 8 * expected:
        raise CheckpointError(
            f"{path}: header says V={v}, k={k}, D={d} ({expected} float64 parameters, "
            f"{8 * expected} bytes) but the body has {body} bytes"
        )
    params = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(params)):
        raise CheckpointError(f"{path}: parameters contain non-finite values")
    meta = read_sidecar(path)
    tokens = meta.get("vocab")
    vocab = Vocab(tuple(tokens)) if tokens else DEFAULT_VOCAB
    if len(vocab) != v:
        raise CheckpointError(f"{path}: header V={v} but the vocabulary has {len(vocab)} tokens")
    return ToyPolicy(params, vocab, k, d), meta
