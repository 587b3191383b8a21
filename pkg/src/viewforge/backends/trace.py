"""Backend call trace log.

Every backend call is recorded as one JSON-lines record: operation, stage
label, request digest, response digest, latency. The log is enough to
audit call counts per stage and to verify a bundle's provenance digests
offline. ``content_digest`` deliberately excludes latencies and
timestamps so replaying a deterministic pipeline reproduces it exactly.
"""

from __future__ import annotations

import hashlib
import json
import time
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional


class TraceLog:
    """In-memory call log, optionally mirrored to a JSON-lines file."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records: List[dict] = []
        self._stage: Optional[str] = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            # truncate: one trace file per run
            self.path.write_text("", encoding="utf-8")

    @contextmanager
    def stage(self, name: str):
        """Label all calls recorded inside the block with a stage name."""
        previous = self._stage
        self._stage = name
        try:
            yield self
        finally:
            self._stage = previous

    def record(
        self,
        kind: str,
        operation: str,
        request_digest: str,
        response_digest: str,
        latency_s: float,
    ) -> dict:
        rec = {
            "kind": kind,
            "operation": operation,
            "stage": self._stage,
            "request_digest": request_digest,
            "response_digest": response_digest,
            "latency_s": round(latency_s, 6),
            "wall_time": time.time(),
        }
        self.records.append(rec)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return rec

    def count(self, operation=None, stage=None, kind=None) -> int:
        n = 0
        for rec in self.records:
            if operation is not None and rec["operation"] != operation:
                continue
            if stage is not None and rec["stage"] != stage:
                continue
            if kind is not None and rec["kind"] != kind:
                continue
            n += 1
        return n

    def content_digest(self) -> str:
        """Digest over the deterministic part of the log (call order, kinds,
        request/response digests); stable across replays."""
        h = hashlib.sha256()
        for rec in self.records:
            h.update(
                json.dumps(
                    [rec["kind"], rec["operation"], rec["stage"],
                     rec["request_digest"], rec["response_digest"]],
                ).encode()
            )
        return h.hexdigest()

    @staticmethod
    def read(path) -> List[dict]:
        records = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                records.append(json.loads(line))
        return records

    @staticmethod
    def content_digest_of_records(records) -> str:
        h = hashlib.sha256()
        for rec in records:
            h.update(
                json.dumps(
                    [rec["kind"], rec["operation"], rec["stage"],
                     rec["request_digest"], rec["response_digest"]],
                ).encode()
            )
        return h.hexdigest()
