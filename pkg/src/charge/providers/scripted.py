"""Deterministic fixture-backed backend for offline runs and tests."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import replace
from pathlib import Path

from ..errors import BackendUnavailable
from .base import ImageRef, ProviderRequest, ProviderResponse


class ScriptedProvider:
    """Backend that answers from a fingerprint -> response fixture map.

    fallback="error" raises BackendUnavailable on unknown fingerprints;
    fallback="echo" answers text-style requests with their own slot values,
    which is occasionally handy for smoke tests. Invocations are counted
    per fingerprint so tests can assert the cache's at-most-one-call
    guarantee.
    """

    def __init__(self, fixture: dict[str, ProviderResponse] | None = None,
                 fallback: str = "error", provider_id: str = "scripted"):
        if fallback not in ("error", "echo"):
            raise ValueError(f"unknown fallback mode: {fallback!r}")
        self.fixture: dict[str, ProviderResponse] = dict(fixture or {})
        self.fallback = fallback
        self.provider_id = provider_id
        self.call_counts: Counter[str] = Counter()

    # -- scripting ---------------------------------------------------------

    def script(self, request: ProviderRequest, response: ProviderResponse) -> str:
        fingerprint = request.fingerprint()
        self.fixture[fingerprint] = response
        return fingerprint

    def script_text(self, request: ProviderRequest, text: str) -> str:
        return self.script(request, ProviderResponse(text=text, provider_id=self.provider_id))

    def script_structured(self, request: ProviderRequest, obj) -> str:
        return self.script(request, ProviderResponse(structured=obj, provider_id=self.provider_id))

    # -- backend protocol ----------------------------------------------------

    def invoke(self, request: ProviderRequest) -> ProviderResponse:
        fingerprint = request.fingerprint()
        self.call_counts[fingerprint] += 1
        if fingerprint in self.fixture:
            return replace(self.fixture[fingerprint], cached=False)
        if self.fallback == "echo":
            return self._echo(request)
        raise BackendUnavailable(
            f"no scripted response for kind={request.kind} "
            f"template={request.prompt_template_id!r} fingerprint={fingerprint[:12]}")

    def _echo(self, request: ProviderRequest) -> ProviderResponse:
        if request.kind in ("embed_text", "embed_image"):
            raise BackendUnavailable("echo fallback cannot produce embeddings")
        if request.kind == "ocr":
            return ProviderResponse(structured={"entries": [], "raw_text": ""},
                                    provider_id=self.provider_id)
        parts = []
        for name in sorted(request.slots):
            value = request.slots[name]
            parts.append(value.content_hash[:12] if isinstance(value, ImageRef) else value)
        return ProviderResponse(text="\n".join(parts), provider_id=self.provider_id)

    # -- fixture persistence ---------------------------------------------------

    def save_fixture(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for fingerprint in sorted(self.fixture):
                row = {"fingerprint": fingerprint,
                       "response": self.fixture[fingerprint].to_json()}
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")

    @classmethod
    def load_fixture(cls, path: str | Path, fallback: str = "error") -> "ScriptedProvider":
        fixture = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    fixture[row["fingerprint"]] = ProviderResponse.from_json(row["response"])
        return cls(fixture=fixture, fallback=fallback)
