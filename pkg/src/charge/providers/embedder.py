"""Deterministic hash embedder standing in for real embedding models.

Token-level feature hashing with a sign hash gives vectors whose cosine
reflects lexical overlap, so retrieval behaves meaningfully in offline
runs without any model weights.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import BackendUnavailable
from ..text import tokenize
from .base import ImageRef, ProviderRequest, ProviderResponse


def _hash_int(token: str, seed: int, salt: bytes) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8,
                        key=seed.to_bytes(8, "little") + salt)
    return int.from_bytes(h.digest(), "little")


class HashEmbedder:
    """Feature-hashing embedder: bucket by one hash, sign by a second,
    L2-normalize. Deterministic in (input, seed, dimension).
    """

    def __init__(self, dimension: int, seed: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed

    def embed_tokens(self, tokens: list[str]) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in tokens:
            bucket = _hash_int(token, self.seed, b"bucket") % self.dimension
            sign = 1.0 if _hash_int(token, self.seed, b"sign") & 1 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # Empty or fully-cancelled input still needs a unit vector.
            vec[_hash_int("", self.seed, b"bucket") % self.dimension] = 1.0
            return vec
        return vec / norm

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_tokens(tokenize(text))


class HashEmbedderBackend:
    """Provider backend serving embed_text and embed_image requests.

    Images embed by their searchable text when the request carries a
    `text_hint` slot (captions/OCR text supplied by the index builder);
    otherwise by a single content-hash token, which only matches exact
    duplicate images.
    """

    def __init__(self, dimension: int, seed: int = 0):
        self.embedder = HashEmbedder(dimension, seed)
        self.dimension = dimension
        self.provider_id = f"hash-embedder-d{dimension}-s{seed}"

    def invoke(self, request: ProviderRequest) -> ProviderResponse:
        if request.kind == "embed_text":
            vec = self.embedder.embed_text(_str_slot(request, "text"))
        elif request.kind == "embed_image":
            hint = request.slots.get("text_hint")
            if isinstance(hint, str) and hint.strip():
                vec = self.embedder.embed_text(hint)
            else:
                image = request.slots.get("image")
                if not isinstance(image, ImageRef):
                    raise BackendUnavailable("embed_image request lacks an image slot")
                vec = self.embedder.embed_tokens([image.content_hash])
        else:
            raise BackendUnavailable(
                f"hash embedder cannot serve kind={request.kind}")
        return ProviderResponse(vector=[float(x) for x in vec],
                                provider_id=self.provider_id)


def _str_slot(request: ProviderRequest, name: str) -> str:
    value = request.slots.get(name)
    if not isinstance(value, str):
        raise BackendUnavailable(f"embed request lacks a {name!r} text slot")
    return value
