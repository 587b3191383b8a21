"""Content digest helpers used by caching, provenance, and the stubs."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def sha256_bytes(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(len(chunk).to_bytes(8, "little"))
        h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return sha256_bytes(text.encode("utf-8"))


def sha256_json(value) -> str:
    """Digest of a JSON-serializable value, independent of dict ordering."""
    return sha256_bytes(
        json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")
    )


def sha256_array(array) -> str:
    arr = np.ascontiguousarray(array)
    return sha256_bytes(f"{arr.shape}:{arr.dtype}".encode(), arr.tobytes())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def seed_from_digest(digest: str) -> int:
    """Fold a hex digest into a 64-bit RNG seed."""
    return int(digest[:16], 16)


def tree_digest(root) -> str:
    """Digest of a directory: sorted relative paths plus file contents."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        h.update(rel.encode("utf-8"))
        h.update(bytes.fromhex(sha256_file(path)))
    return h.hexdigest()
