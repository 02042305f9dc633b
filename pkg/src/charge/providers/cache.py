"""Persistent response cache: append-only JSONL ledger keyed by fingerprint."""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Optional

from .base import ProviderResponse


class ResponseCache:
    """fingerprint -> response map backed by an append-only JSONL file.

    Pass path=None for a purely in-memory cache. The last entry wins when
    a ledger contains duplicate fingerprints.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, ProviderResponse] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    self._entries[row["fingerprint"]] = ProviderResponse.from_json(row["response"])

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, fingerprint: str) -> Optional[ProviderResponse]:
        return self._entries.get(fingerprint)

    def put(self, fingerprint: str, response: ProviderResponse) -> None:
        with self._lock:
            self._entries[fingerprint] = response
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                row = {"fingerprint": fingerprint, "response": response.to_json()}
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
