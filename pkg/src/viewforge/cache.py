"""Content-addressed stage cache.

Every pipeline product lives under the cache directory in a per-entry
subdirectory named by the stage and a prefix of the input-digest key.
Keys are digests of all declared stage inputs (including the relevant
config subsections), never timestamps, so renaming directories or
re-running with identical inputs hits the cache with zero backend calls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

STAGES = ("prompt", "structure", "appearance", "eval")

INDEX_FILE = "index.json"
# cache-level ledgers, owned by the cache itself rather than any entry
UNOWNED_FILES = (INDEX_FILE, "reports.csv", "trace.jsonl")

KEY_PREFIX_LEN = 16


@dataclass(frozen=True)
class CacheEntry:
    """One cached stage product: its key and the files it owns."""

    stage: str
    key: str
    paths: Tuple[str, ...]  # relative to the cache root

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}, want one of {STAGES}")
        object.__setattr__(self, "paths", tuple(self.paths))

    def to_dict(self) -> dict:
        return {"stage": self.stage, "key": self.key, "paths": list(self.paths)}

    @classmethod
    def from_dict(cls, d: dict) -> "CacheEntry":
        return cls(stage=d["stage"], key=d["key"], paths=tuple(d["paths"]))


class CacheIndex:
    """The index of all entries in one cache directory."""

    def __init__(self, cache_dir):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._entries: Dict[Tuple[str, str], CacheEntry] = {}
        index_path = self.cache_dir / INDEX_FILE
        if index_path.exists():
            data = json.loads(index_path.read_text(encoding="utf-8"))
            for rec in data.get("entries", []):
                entry = CacheEntry.from_dict(rec)
                self._entries[(entry.stage, entry.key)] = entry

    def _save(self) -> None:
        payload = {
            "entries": [
                e.to_dict()
                for _, e in sorted(self._entries.items())
            ]
        }
        with open(self.cache_dir / INDEX_FILE, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def entry_dir(self, stage: str, key: str) -> Path:
        return self.cache_dir / stage / key[:KEY_PREFIX_LEN]

    def lookup(self, stage: str, key: str) -> Optional[CacheEntry]:
        """The entry for (stage, key) if present and all its files exist."""
        entry = self._entries.get((stage, key))
        if entry is None:
            return None
        if not all((self.cache_dir / p).exists() for p in entry.paths):
            return None
        return entry

    def store(self, stage: str, key: str, paths) -> CacheEntry:
        """Register files (absolute or cache-relative) under (stage, key).

        Ownership is exclusive: any older entry claiming one of these
        paths had its product overwritten, so it is evicted.
        """
        rel = []
        for p in paths:
            p = Path(p)
            if p.is_absolute():
                p = p.relative_to(self.cache_dir)
            rel.append(str(p))
        claimed = set(rel)
        stale = [
            k for k, e in self._entries.items()
            if k != (stage, key) and claimed.intersection(e.paths)
        ]
        for k in stale:
            del self._entries[k]
        entry = CacheEntry(stage=stage, key=key, paths=tuple(sorted(rel)))
        self._entries[(stage, key)] = entry
        self._save()
        return entry

    def entries(self) -> List[CacheEntry]:
        return [e for _, e in sorted(self._entries.items())]

    def audit(self) -> dict:
        """Check that every file is owned by exactly one entry.

        Returns {"orphans": [...], "missing": [...], "duplicates": [...]};
        all empty means the cache is healthy.
        """
        owners: Dict[str, int] = {}
        missing = []
        for entry in self._entries.values():
            for p in entry.paths:
                owners[p] = owners.get(p, 0) + 1
                if not (self.cache_dir / p).exists():
                    missing.append(f"{entry.stage}/{entry.key[:8]}: {p}")
        orphans = []
        for path in sorted(self.cache_dir.rglob("*")):
            if not path.is_file():
                continue
            rel = str(path.relative_to(self.cache_dir))
            if rel in UNOWNED_FILES:
                continue
            if rel not in owners:
                orphans.append(rel)
        duplicates = sorted(p for p, n in owners.items() if n > 1)
        return {
            "orphans": orphans,
            "missing": sorted(missing),
            "duplicates": duplicates,
        }
