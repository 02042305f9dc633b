"""Model provider abstraction: requests, caching client, backends."""

from .base import (
    KINDS,
    RETRY_SCHEDULE,
    Backend,
    ImageRef,
    ProviderClient,
    ProviderRequest,
    ProviderResponse,
    call_structured,
    parse_structured,
)
from .cache import ResponseCache
from .embedder import HashEmbedder, HashEmbedderBackend
from .http_backend import HTTPBackend
from .judge import judge_equivalent, judge_request
from .ocr import OcrClient, ocr_request
from .scripted import ScriptedProvider
from .templates import list_templates, load_template, render_template

__all__ = [
    "KINDS",
    "RETRY_SCHEDULE",
    "Backend",
    "HTTPBackend",
    "HashEmbedder",
    "HashEmbedderBackend",
    "ImageRef",
    "OcrClient",
    "ProviderClient",
    "ProviderRequest",
    "ProviderResponse",
    "ResponseCache",
    "ScriptedProvider",
    "call_structured",
    "judge_equivalent",
    "judge_request",
    "list_templates",
    "load_template",
    "ocr_request",
    "parse_structured",
    "render_template",
]
