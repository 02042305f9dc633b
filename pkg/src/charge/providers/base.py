"""Request/response model and the caching client wrapper.

Every model call in the pipeline goes through a ProviderClient: requests
are fingerprinted, answered from the persistent cache when possible, and
otherwise dispatched to the configured backend with bounded retries.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Protocol, Union

from ..errors import RateLimited, StructuredParseError, UnreadableImage

KINDS = ("text_gen", "vision_gen", "embed_text", "embed_image", "ocr", "judge")

RETRY_SCHEDULE = (1.0, 2.0, 4.0)


class ImageRef:
    """Opaque image handle. Fingerprints by content so cache keys and
    scripted fixtures survive the file moving between directories.
    """

    def __init__(self, path: str):
        self.path = str(path)
        self._content_hash: Optional[str] = None

    def read_bytes(self) -> bytes:
        p = Path(self.path)
        if not p.is_file():
            raise UnreadableImage(f"cannot resolve image handle: {self.path}")
        return p.read_bytes()

    @property
    def content_hash(self) -> str:
        if self._content_hash is None:
            self._content_hash = hashlib.sha256(self.read_bytes()).hexdigest()
        return self._content_hash

    def __repr__(self):
        return f"ImageRef({self.path!r})"


SlotValue = Union[str, ImageRef]


@dataclass
class ProviderRequest:
    kind: str
    prompt_template_id: str = ""
    slots: dict[str, SlotValue] = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown request kind: {self.kind!r}")

    def fingerprint(self) -> str:
        """Stable identity of the request: kind, template, normalized slots,
        and params. Strings are NFC-normalized; images hash by content.
        """
        slots = {}
        for name, value in self.slots.items():
            if isinstance(value, ImageRef):
                slots[name] = f"img:{value.content_hash}"
            else:
                slots[name] = "txt:" + unicodedata.normalize("NFC", value)
        payload = json.dumps(
            {"kind": self.kind, "template": self.prompt_template_id,
             "slots": slots, "params": self.params},
            sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ProviderResponse:
    text: Optional[str] = None
    vector: Optional[list[float]] = None
    structured: Optional[object] = None
    provider_id: str = ""
    cached: bool = False

    def __post_init__(self):
        populated = sum(v is not None for v in (self.text, self.vector, self.structured))
        if populated != 1:
            raise ValueError("exactly one of text/vector/structured must be set")

    def to_json(self) -> dict:
        return {"text": self.text, "vector": self.vector,
                "structured": self.structured, "provider_id": self.provider_id}

    @classmethod
    def from_json(cls, row: dict) -> "ProviderResponse":
        return cls(text=row.get("text"), vector=row.get("vector"),
                   structured=row.get("structured"),
                   provider_id=row.get("provider_id", ""))


class Backend(Protocol):
    provider_id: str

    def invoke(self, request: ProviderRequest) -> ProviderResponse: ...


class ProviderClient:
    """Caching, retrying front door for one backend.

    Safe for concurrent use: cache writes are serialized and at most
    `max_in_flight` backend calls run at once. Retryable failures follow
    the 1s/2s/4s schedule and then surface as RateLimited.
    """

    def __init__(self, backend: Backend, cache=None,
                 sleep: Callable[[float], None] = time.sleep,
                 max_in_flight: int = 4):
        self.backend = backend
        self.cache = cache
        self._sleep = sleep
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()

    @property
    def provider_id(self) -> str:
        return self.backend.provider_id

    def call(self, request: ProviderRequest) -> ProviderResponse:
        fingerprint = request.fingerprint()
        if self.cache is not None:
            hit = self.cache.get(fingerprint)
            if hit is not None:
                return replace(hit, cached=True)
        with self._gate:
            response = self._invoke_with_retries(request)
        if not response.provider_id:
            response = replace(response, provider_id=self.backend.provider_id)
        if self.cache is not None:
            with self._lock:
                # Another thread may have raced the same fingerprint in.
                hit = self.cache.get(fingerprint)
                if hit is not None:
                    return replace(hit, cached=True)
                self.cache.put(fingerprint, response)
        return response

    def _invoke_with_retries(self, request: ProviderRequest) -> ProviderResponse:
        for delay in RETRY_SCHEDULE:
            try:
                return self.backend.invoke(request)
            except RateLimited:
                self._sleep(delay)
        try:
            return self.backend.invoke(request)
        except RateLimited:
            raise RateLimited(
                f"backend {self.backend.provider_id} still rate-limited after "
                f"{len(RETRY_SCHEDULE) + 1} attempts")


def parse_structured(response: ProviderResponse):
    """Best-effort extraction of a JSON value from a response."""
    if response.structured is not None:
        return response.structured
    if response.text is None:
        return None
    text = response.text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    for open_ch, close_ch in ("{}", "[]"):
        start, end = text.find(open_ch), text.rfind(close_ch)
        if start != -1 and end > start:
            try:
                return json.loads(text[start : end + 1])
            except json.JSONDecodeError:
                continue
    return None


def call_structured(client: ProviderClient, request: ProviderRequest):
    """Call expecting strict JSON; one reprompt on parse failure, then
    StructuredParseError.
    """
    parsed = parse_structured(client.call(request))
    if parsed is not None:
        return parsed
    retry = replace(request, params={**request.params, "reprompt": 1})
    parsed = parse_structured(client.call(retry))
    if parsed is None:
        raise StructuredParseError(
            f"unparseable structured response for template "
            f"{request.prompt_template_id!r}")
    return parsed
