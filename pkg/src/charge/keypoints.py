"""Keypoint extraction and initial modality classification.

A keypoint is a self-contained atomic factual statement pulled from one
text chunk or one chart. Extraction is provider-backed; this module owns
the linting, dedup, id scheme, pool routing, and persistence.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Optional

from .corpus import Chart, TextChunk
from .errors import StructuredParseError
from .providers.base import ImageRef, ProviderClient, ProviderRequest, call_structured
from .text import normalize

MODALITIES = ("text", "chart")
POOLS = ("text", "chart", "both")
STATUSES = ("candidate", "retained", "dropped")
DROP_REASONS = ("retrievable_crossmodally", "not_retrievable_from_source",
                "judge_unavailable")

MAX_KEYPOINTS_PER_SOURCE = 20

# Statements opening with these words depend on an antecedent, so they
# fail the self-containedness requirement regardless of prompt quality.
_LEADING_PRONOUNS = frozenset(
    "it this that these those they he she we its their them his her such".split())

TEXT_EXTRACT_TEMPLATE = "keypoints_from_text"
CHART_EXTRACT_TEMPLATE = "keypoints_from_chart"
CLASSIFY_TEMPLATE = "keypoint_modality"


@dataclass
class Keypoint:
    kp_id: str
    statement: str
    claimed_modality: str
    doc_id: str
    source_id: str
    status: str = "candidate"
    drop_reason: Optional[str] = None
    pool: str = ""

    def __post_init__(self):
        if not self.statement.strip():
            raise ValueError("keypoint statement is empty")
        if self.claimed_modality not in MODALITIES:
            raise ValueError(f"bad modality: {self.claimed_modality!r}")
        if self.status not in STATUSES:
            raise ValueError(f"bad status: {self.status!r}")
        if not self.pool:
            self.pool = self.claimed_modality

    def mark_retained(self) -> None:
        self._transition()
        self.status = "retained"

    def mark_dropped(self, reason: str) -> None:
        if reason not in DROP_REASONS:
            raise ValueError(f"bad drop reason: {reason!r}")
        self._transition()
        self.status = "dropped"
        self.drop_reason = reason

    def _transition(self) -> None:
        if self.status != "candidate":
            raise ValueError(f"keypoint {self.kp_id} already {self.status}")


def keypoint_id(doc_id: str, source_id: str, statement: str) -> str:
    h = hashlib.sha256("\x00".join((doc_id, source_id, normalize(statement))).encode("utf-8"))
    return h.hexdigest()[:16]


def is_self_contained(statement: str) -> bool:
    words = normalize(statement).split()
    return bool(words) and words[0] not in _LEADING_PRONOUNS


def _statements_from(parsed) -> list[str]:
    if not isinstance(parsed, list):
        raise StructuredParseError(
            f"expected a JSON array of statements, got {type(parsed).__name__}")
    return [s.strip() for s in parsed if isinstance(s, str) and s.strip()]


def _build_keypoints(statements: Iterable[str], modality: str, doc_id: str,
                     source_id: str, limit: int) -> list[Keypoint]:
    out: list[Keypoint] = []
    seen: set[str] = set()
    for statement in statements:
        if not is_self_contained(statement):
            continue
        key = normalize(statement)
        if key in seen:
            continue
        seen.add(key)
        out.append(Keypoint(
            kp_id=keypoint_id(doc_id, source_id, statement),
            statement=statement,
            claimed_modality=modality,
            doc_id=doc_id,
            source_id=source_id,
        ))
        if len(out) >= limit:
            break
    return out


# -- request builders (shared with fixture scripting) ----------------------

def text_extract_request(chunk: TextChunk) -> ProviderRequest:
    return ProviderRequest(kind="text_gen", prompt_template_id=TEXT_EXTRACT_TEMPLATE,
                           slots={"passage": chunk.text})


def chart_extract_request(chart: Chart) -> ProviderRequest:
    return ProviderRequest(kind="vision_gen", prompt_template_id=CHART_EXTRACT_TEMPLATE,
                           slots={"chart": ImageRef(chart.image_ref),
                                  "values": chart.values.to_prompt_text()})


def classify_request(keypoint: Keypoint, chunk: Optional[TextChunk],
                     chart: Optional[Chart]) -> ProviderRequest:
    return ProviderRequest(kind="text_gen", prompt_template_id=CLASSIFY_TEMPLATE,
                           slots={"statement": keypoint.statement,
                                  "passage": chunk.text if chunk else "",
                                  "values": chart.values.to_prompt_text() if chart else ""})


# -- operations -------------------------------------------------------------

def extract_text_keypoints(chunk: TextChunk, provider: ProviderClient,
                           limit: int = MAX_KEYPOINTS_PER_SOURCE) -> list[Keypoint]:
    if not chunk.text.strip():
        raise ValueError(f"chunk {chunk.chunk_id} is empty")
    parsed = call_structured(provider, text_extract_request(chunk))
    return _build_keypoints(_statements_from(parsed), "text",
                            chunk.doc_id, chunk.chunk_id, limit)


def extract_chart_keypoints(chart: Chart, provider: ProviderClient,
                            limit: int = MAX_KEYPOINTS_PER_SOURCE) -> list[Keypoint]:
    parsed = call_structured(provider, chart_extract_request(chart))
    return _build_keypoints(_statements_from(parsed), "chart",
                            chart.doc_id, chart.chart_id, limit)


def classify_modality(keypoint: Keypoint, chunk: Optional[TextChunk],
                      chart: Optional[Chart], provider: ProviderClient) -> str:
    """Classify where the keypoint's information lives: text, chart, or both.

    Verbatim presence in both the paired chunk and the chart's OCR text
    decides "both" without a provider call.
    """
    key = normalize(keypoint.statement)
    in_text = chunk is not None and key in normalize(chunk.text)
    in_chart = chart is not None and key in normalize(chart.values.to_prompt_text())
    if in_text and in_chart:
        return "both"
    response = provider.call(classify_request(keypoint, chunk, chart))
    return _parse_pool(response)


def _parse_pool(response) -> str:
    value = response.structured
    if isinstance(value, dict):
        value = value.get("where") or value.get("modality") or value.get("pool")
    if value is None:
        value = response.text
    if isinstance(value, str):
        word = value.strip().lower().split()[0].strip('."\'') if value.strip() else ""
        if word in POOLS:
            return word
    raise StructuredParseError(f"unusable modality classification: {value!r}")


def assign_pools(keypoints: Iterable[Keypoint], corpus, provider: ProviderClient) -> None:
    """Set each candidate's pool from the classifier, pairing it with the
    nearest opposite-modality source in its document. A keypoint stays in
    its source pool unless classified as present in both modalities.
    """
    for kp in keypoints:
        if kp.claimed_modality == "text":
            chunk = corpus.chunks[kp.source_id]
            chart = corpus.nearest_chart(kp.source_id)
        else:
            chart = corpus.charts[kp.source_id]
            chunk = corpus.nearest_chunk(kp.source_id)
        verdict = classify_modality(kp, chunk, chart, provider)
        kp.pool = "both" if verdict == "both" else kp.claimed_modality


def split_pools(keypoints: Iterable[Keypoint]) -> dict[str, list[Keypoint]]:
    pools: dict[str, list[Keypoint]] = {"text": [], "chart": [], "both": []}
    for kp in keypoints:
        pools[kp.pool].append(kp)
    return pools


# -- persistence -------------------------------------------------------------

def save_keypoints(keypoints: Iterable[Keypoint], path: str | Path) -> None:
    rows = sorted(keypoints, key=lambda k: (k.doc_id, k.source_id, k.kp_id))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for kp in rows:
            fh.write(json.dumps(asdict(kp), ensure_ascii=False, sort_keys=True) + "\n")


def load_keypoints(path: str | Path) -> list[Keypoint]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Keypoint(**json.loads(line)))
    return out
