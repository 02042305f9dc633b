"""QA pair generation: combine retained keypoints into single-point and
multi-hop questions across the eight scope/modality categories.

Category grid: scope in {single_point, intra_document, inter_document} x
modality in {text_only, chart_only, text_chart}, minus the impossible
(single_point, text_chart) cell: one keypoint has one modality.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Corpus
from .errors import PoolExhausted, UnknownKeypoint
from .keypoints import Keypoint
from .providers.base import ImageRef, ProviderClient, ProviderRequest, call_structured
from .retrieval import embed_text_request
from .text import normalize

SCOPES = ("single_point", "intra_document", "inter_document")
MODALITIES = ("text_only", "chart_only", "text_chart")

DEFAULT_RETRIEVAL_K = 10
DEFAULT_DEDUP_THRESHOLD = 0.95
DEFAULT_RETRY_BUDGET = 5

SINGLE_TEXT_TEMPLATE = "qa_single_point_text"
SINGLE_CHART_TEMPLATE = "qa_single_point_chart"
MULTIHOP_TEMPLATE = "qa_multihop"

REVIEW_STATES = ("pending", "accepted", "rejected")
REJECTION_REASONS = ("ocr_error", "redundant", "other")


@dataclass(frozen=True)
class QACategory:
    scope: str
    modality: str

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ValueError(f"bad scope: {self.scope!r}")
        if self.modality not in MODALITIES:
            raise ValueError(f"bad modality: {self.modality!r}")
        if self.scope == "single_point" and self.modality == "text_chart":
            raise ValueError("a single keypoint cannot span two modalities")

    @property
    def label(self) -> str:
        return f"{self.scope}:{self.modality}"

    @classmethod
    def from_label(cls, label: str) -> "QACategory":
        scope, _, modality = label.partition(":")
        return cls(scope=scope, modality=modality)


ALL_CATEGORIES = tuple(
    QACategory(scope, modality)
    for scope in SCOPES for modality in MODALITIES
    if not (scope == "single_point" and modality == "text_chart"))


@dataclass
class QAPair:
    qa_id: str
    question: str
    answer: str
    category: QACategory
    hops: int
    gt_keypoints: list[str]
    gt_sources: list[tuple[str, str, str]]  # (doc_id, source_id, modality)
    review_state: str = "pending"
    rejection_reason: Optional[str] = None

    def __post_init__(self):
        self.gt_sources = [tuple(s) for s in self.gt_sources]
        if not self.question.strip() or not self.answer.strip():
            raise ValueError(f"QA pair {self.qa_id} has an empty question or answer")
        if self.review_state not in REVIEW_STATES:
            raise ValueError(f"bad review state: {self.review_state!r}")
        if self.rejection_reason is not None and self.rejection_reason not in REJECTION_REASONS:
            raise ValueError(f"bad rejection reason: {self.rejection_reason!r}")
        if self.hops not in (1, 2):
            raise ValueError(f"hops must be 1 or 2, got {self.hops}")
        if (self.hops == 1) != (len(self.gt_keypoints) == 1):
            raise ValueError("hops=1 requires exactly one ground-truth keypoint")
        if (self.hops == 1) != (self.category.scope == "single_point"):
            raise ValueError("hops=1 and single_point scope imply each other")
        if len(self.gt_keypoints) != len(set(self.gt_keypoints)):
            raise ValueError("duplicate ground-truth keypoints")
        if not self.gt_sources or len(self.gt_sources) > len(self.gt_keypoints):
            raise ValueError("gt_sources must be the deduplicated keypoint sources")
        if len(self.gt_sources) != len(set(self.gt_sources)):
            raise ValueError("duplicate gt_sources")
        doc_ids = {s[0] for s in self.gt_sources}
        if self.category.scope == "inter_document" and len(doc_ids) != 2:
            raise ValueError("inter_document pairs need sources from two documents")
        if self.category.scope in ("single_point", "intra_document") and len(doc_ids) != 1:
            raise ValueError(f"{self.category.scope} pairs stay within one document")
        source_modalities = {s[2] for s in self.gt_sources}
        expected = {"text_only": {"text"}, "chart_only": {"chart"},
                    "text_chart": {"text", "chart"}}[self.category.modality]
        if source_modalities != expected:
            raise ValueError(
                f"source modalities {sorted(source_modalities)} do not fit "
                f"category {self.category.label}")

    def to_json(self) -> dict:
        return {"qa_id": self.qa_id, "question": self.question, "answer": self.answer,
                "scope": self.category.scope, "modality": self.category.modality,
                "hops": self.hops, "gt_keypoints": list(self.gt_keypoints),
                "gt_sources": [list(s) for s in self.gt_sources],
                "review_state": self.review_state,
                "rejection_reason": self.rejection_reason}

    @classmethod
    def from_json(cls, row: dict) -> "QAPair":
        return cls(qa_id=row["qa_id"], question=row["question"], answer=row["answer"],
                   category=QACategory(row["scope"], row["modality"]), hops=row["hops"],
                   gt_keypoints=list(row["gt_keypoints"]),
                   gt_sources=[tuple(s) for s in row["gt_sources"]],
                   review_state=row.get("review_state", "pending"),
                   rejection_reason=row.get("rejection_reason"))


def qa_pair_id(category: QACategory, gt_keypoints: Sequence[str], question: str) -> str:
    payload = "\x00".join([category.label, *gt_keypoints, normalize(question)])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def categorize(selected: Keypoint, retrieved: Keypoint) -> QACategory:
    scope = ("intra_document" if selected.doc_id == retrieved.doc_id
             else "inter_document")
    pair = {selected.claimed_modality, retrieved.claimed_modality}
    if pair == {"text"}:
        modality = "text_only"
    elif pair == {"chart"}:
        modality = "chart_only"
    else:
        modality = "text_chart"
    return QACategory(scope=scope, modality=modality)


def sources_of(keypoints: Sequence[Keypoint]) -> list[tuple[str, str, str]]:
    seen = []
    for kp in keypoints:
        source = (kp.doc_id, kp.source_id, kp.claimed_modality)
        if source not in seen:
            seen.append(source)
    return seen


# -- keypoint embedding index -------------------------------------------------

class KeypointIndex:
    """kp_id -> unit embedding of the keypoint statement."""

    def __init__(self, embedder_id: str = ""):
        self.embedder_id = embedder_id
        self.entries: dict[str, np.ndarray] = {}

    def __len__(self):
        return len(self.entries)

    def add(self, kp_id: str, vector: Sequence[float]) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"keypoint vector for {kp_id} is not unit norm")
        if self.entries and vec.shape != next(iter(self.entries.values())).shape:
            raise ValueError("inconsistent embedding dimensions")
        self.entries[kp_id] = vec


def build_keypoint_index(keypoints: Iterable[Keypoint],
                         embed_client: ProviderClient) -> KeypointIndex:
    index = KeypointIndex(embedder_id=embed_client.provider_id)
    for kp in sorted(keypoints, key=lambda k: k.kp_id):
        response = embed_client.call(embed_text_request(kp.statement))
        index.add(kp.kp_id, response.vector)
    return index


def retrieve_related(selected: str, index: KeypointIndex, k: int,
                     allowed: Optional[Iterable[str]] = None) -> list[tuple[str, float]]:
    """Top-k related keypoints by cosine, excluding the query itself.
    `allowed` restricts the candidate pool; ties break by ascending kp_id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if selected not in index.entries:
        raise UnknownKeypoint(f"keypoint {selected} not in index")
    query = index.entries[selected]
    pool = set(allowed) if allowed is not None else set(index.entries)
    pool.discard(selected)
    scored = [(kp_id, float(index.entries[kp_id] @ query))
              for kp_id in pool if kp_id in index.entries]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


# -- generation requests ---------------------------------------------------------

def single_point_request(keypoint: Keypoint, corpus: Corpus) -> ProviderRequest:
    if keypoint.claimed_modality == "text":
        chunk = corpus.chunks[keypoint.source_id]
        return ProviderRequest(kind="text_gen", prompt_template_id=SINGLE_TEXT_TEMPLATE,
                               slots={"statement": keypoint.statement,
                                      "passage": chunk.text})
    chart = corpus.charts[keypoint.source_id]
    return ProviderRequest(kind="vision_gen", prompt_template_id=SINGLE_CHART_TEMPLATE,
                           slots={"statement": keypoint.statement,
                                  "chart": ImageRef(chart.image_ref),
                                  "values": chart.values.to_prompt_text()})


def multihop_request(selected: Keypoint, retrieved: Keypoint,
                     corpus: Corpus) -> ProviderRequest:
    parts: list[str] = []
    slots: dict = {}
    any_chart = False
    for i, kp in enumerate((selected, retrieved)):
        if kp.claimed_modality == "text":
            chunk = corpus.chunks[kp.source_id]
            parts.append(f"Passage {i + 1}:\n{chunk.text}")
        else:
            chart = corpus.charts[kp.source_id]
            parts.append(f"Chart {i + 1} values:\n{chart.values.to_prompt_text()}")
            slots[f"chart_{i + 1}"] = ImageRef(chart.image_ref)
            any_chart = True
    slots.update({"first_fact": selected.statement,
                  "second_fact": retrieved.statement,
                  "context": "\n\n".join(parts)})
    return ProviderRequest(kind="vision_gen" if any_chart else "text_gen",
                           prompt_template_id=MULTIHOP_TEMPLATE, slots=slots)


def _qa_from(parsed, category: QACategory, keypoints: Sequence[Keypoint]) -> QAPair:
    if not isinstance(parsed, dict) or "question" not in parsed or "answer" not in parsed:
        raise ValueError(f"generator returned no question/answer object: {parsed!r}")
    question = str(parsed["question"]).strip()
    answer = str(parsed["answer"]).strip()
    gt = [kp.kp_id for kp in keypoints]
    return QAPair(qa_id=qa_pair_id(category, gt, question), question=question,
                  answer=answer, category=category, hops=len(keypoints),
                  gt_keypoints=gt, gt_sources=sources_of(keypoints))


def generate_single_point(keypoint: Keypoint, corpus: Corpus,
                          providers: Mapping[str, ProviderClient]) -> QAPair:
    if keypoint.status != "retained":
        raise ValueError(f"keypoint {keypoint.kp_id} is {keypoint.status}, not retained")
    provider = providers["text_gen" if keypoint.claimed_modality == "text" else "vision_gen"]
    parsed = call_structured(provider, single_point_request(keypoint, corpus))
    category = QACategory("single_point",
                          "text_only" if keypoint.claimed_modality == "text" else "chart_only")
    return _qa_from(parsed, category, [keypoint])


def generate_multihop(selected: Keypoint, retrieved: Keypoint, corpus: Corpus,
                      providers: Mapping[str, ProviderClient]) -> QAPair:
    for kp in (selected, retrieved):
        if kp.status != "retained":
            raise ValueError(f"keypoint {kp.kp_id} is {kp.status}, not retained")
    if selected.kp_id == retrieved.kp_id:
        raise ValueError("multi-hop generation needs two distinct keypoints")
    category = categorize(selected, retrieved)
    request = multihop_request(selected, retrieved, corpus)
    provider = providers["vision_gen" if request.kind == "vision_gen" else "text_gen"]
    parsed = call_structured(provider, request)
    return _qa_from(parsed, category, [selected, retrieved])


# -- dataset builder ----------------------------------------------------------------

def _selected_pool(category: QACategory, by_modality: Mapping[str, list[Keypoint]]) -> list[Keypoint]:
    """The pool the selected keypoint is drawn from. For mixed pairs the
    chart keypoint anchors and text is retrieved alongside."""
    if category.modality == "text_only":
        return by_modality["text"]
    return by_modality["chart"]


def _candidate_pool(category: QACategory, selected: Keypoint,
                    retained: Mapping[str, Keypoint]) -> list[str]:
    want_modality = "text" if category.modality in ("text_only", "text_chart") else "chart"
    same_doc = category.scope == "intra_document"
    out = []
    for kp_id, kp in retained.items():
        if kp_id == selected.kp_id or kp.claimed_modality != want_modality:
            continue
        if (kp.doc_id == selected.doc_id) != same_doc:
            continue
        out.append(kp_id)
    return out


@dataclass
class DatasetBuild:
    pairs: list[QAPair]
    manifest: dict


def build_dataset(corpus: Corpus, keypoints: Iterable[Keypoint],
                  quotas: Mapping[QACategory | str, int], seed: int,
                  providers: Mapping[str, ProviderClient],
                  retrieval_k: int = DEFAULT_RETRIEVAL_K,
                  dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD,
                  retry_budget: int = DEFAULT_RETRY_BUDGET) -> DatasetBuild:
    """Fill per-category quotas with generated pairs.

    Deterministic in (corpus, fixtures, seed): selection uses a dedicated
    random.Random stream, pools are sorted, candidate ranking ties break
    by kp_id, and near-duplicate questions (embedding cosine above the
    threshold against accepted ones) are discarded with bounded retries.
    Unreachable quotas are reported per category, not raised.
    """
    retained = {kp.kp_id: kp for kp in keypoints if kp.status == "retained"}
    by_modality: dict[str, list[Keypoint]] = {"text": [], "chart": []}
    for kp_id in sorted(retained):
        by_modality[retained[kp_id].claimed_modality].append(retained[kp_id])

    index = build_keypoint_index(retained.values(), providers["embed_text"])
    rng = random.Random(seed)
    pairs: list[QAPair] = []
    accepted_vectors: list[np.ndarray] = []
    seen_questions: set[str] = set()
    counts: dict[str, int] = {}
    shortfalls: dict[str, str] = {}

    normalized_quotas: dict[QACategory, int] = {}
    for category, quota in quotas.items():
        if isinstance(category, str):
            category = QACategory.from_label(category)
        normalized_quotas[category] = quota

    def question_vector(question: str) -> np.ndarray:
        response = providers["embed_text"].call(embed_text_request(question))
        return np.asarray(response.vector, dtype=np.float64)

    for category in sorted(normalized_quotas, key=lambda c: c.label):
        quota = normalized_quotas[category]
        counts[category.label] = 0
        pool = [kp.kp_id for kp in _selected_pool(category, by_modality)]
        while counts[category.label] < quota:
            filled = False
            for _ in range(retry_budget):
                if not pool:
                    break
                selected = retained[pool.pop(rng.randrange(len(pool)))]
                qa = _try_generate(category, selected, retained, corpus, index,
                                   providers, retrieval_k)
                if qa is None:
                    continue
                if normalize(qa.question) in seen_questions:
                    continue
                vec = question_vector(qa.question)
                if any(float(vec @ prior) > dedup_threshold for prior in accepted_vectors):
                    continue
                pairs.append(qa)
                accepted_vectors.append(vec)
                seen_questions.add(normalize(qa.question))
                counts[category.label] += 1
                filled = True
                break
            if not filled:
                exhausted = PoolExhausted(
                    category.label,
                    f"{counts[category.label]}/{quota} pairs for {category.label}")
                shortfalls[category.label] = str(exhausted)
                break

    manifest = {
        "seed": seed,
        "generator": "random.Random",
        "quotas": {c.label: q for c, q in sorted(normalized_quotas.items(),
                                                 key=lambda kv: kv[0].label)},
        "retrieval_k": retrieval_k,
        "dedup_threshold": dedup_threshold,
        "retry_budget": retry_budget,
        "provider_ids": {name: client.provider_id
                         for name, client in sorted(providers.items())},
        "counts": counts,
        "shortfalls": shortfalls,
        "total": len(pairs),
    }
    return DatasetBuild(pairs=pairs, manifest=manifest)


def _try_generate(category: QACategory, selected: Keypoint,
                  retained: Mapping[str, Keypoint], corpus: Corpus,
                  index: KeypointIndex, providers: Mapping[str, ProviderClient],
                  retrieval_k: int) -> Optional[QAPair]:
    if category.scope == "single_point":
        return generate_single_point(selected, corpus, providers)
    allowed = _candidate_pool(category, selected, retained)
    if not allowed:
        return None
    ranked = retrieve_related(selected.kp_id, index, retrieval_k, allowed=allowed)
    if not ranked:
        return None
    partner = retained[ranked[0][0]]
    return generate_multihop(selected, partner, corpus, providers)


# -- persistence ------------------------------------------------------------------------

def save_dataset(build: DatasetBuild, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "dataset.jsonl", "w", encoding="utf-8") as fh:
        for pair in sorted(build.pairs, key=lambda p: (p.category.label, p.qa_id)):
            fh.write(json.dumps(pair.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    (directory / "manifest.json").write_text(
        json.dumps(build.manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8")


def load_dataset(directory: str | Path) -> DatasetBuild:
    directory = Path(directory)
    pairs = []
    with open(directory / "dataset.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                pairs.append(QAPair.from_json(json.loads(line)))
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    return DatasetBuild(pairs=pairs, manifest=manifest)
