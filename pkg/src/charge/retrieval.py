"""Retrieval over chunks and charts: three index architectures, ranked
fusion, and the multimodal recall metric.

Architectures:
  unified_single   — chunks and charts share one dense store.
  caption_combined — charts become text captions; dense + BM25 lists are
                     merged by reciprocal-rank fusion.
  separate_fused   — per-modality dense stores; results interleaved by a
                     text:chart slot ratio with deficit backfill.

All dense searches are exhaustive cosine scans (corpora here are small),
so ranking is exact with ties broken by ascending ref id.
"""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Chart, Corpus
from .errors import DimensionMismatch, EmptyIndex, UnknownRef
from .providers.base import ImageRef, ProviderClient, ProviderRequest
from .text import normalize, tokenize

ARCHITECTURES = ("unified_single", "caption_combined", "separate_fused")
RATIO_POLICIES = ("three_to_two", "balanced")

RRF_CONSTANT = 60
BM25_K1 = 1.2
BM25_B = 0.75

CAPTION_TEMPLATE = "chart_caption"

_UNIT_TOLERANCE = 1e-6


# -- dense store --------------------------------------------------------------

class DenseStore:
    """ref_id -> unit vector map with exhaustive cosine top-k search."""

    def __init__(self, dimension: int, embedder_id: str = "", modality: str = "mixed"):
        if modality not in ("text", "chart", "mixed"):
            raise ValueError(f"bad store modality: {modality!r}")
        self.dimension = dimension
        self.embedder_id = embedder_id
        self.modality = modality
        self.entries: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, ref_id: str, vector: Sequence[float]) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise DimensionMismatch(
                f"ref {ref_id}: got dimension {vec.shape}, store holds {self.dimension}")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > _UNIT_TOLERANCE:
            raise ValueError(f"ref {ref_id}: vector norm {norm} is not unit")
        if ref_id in self.entries:
            raise ValueError(f"duplicate ref {ref_id}")
        self.entries[ref_id] = vec

    def search(self, query: Sequence[float], k: int) -> list[tuple[str, float]]:
        if not self.entries:
            raise EmptyIndex("search over an empty dense store")
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise DimensionMismatch(
                f"query dimension {q.shape} against store of {self.dimension}")
        scored = [(ref_id, float(vec @ q)) for ref_id, vec in self.entries.items()]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k]

    # -- persistence: raw little-endian float32 + JSON sidecar -------------

    def save(self, directory: str | Path, name: str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ref_ids = sorted(self.entries)
        with open(directory / f"{name}.vec", "wb") as fh:
            for ref_id in ref_ids:
                fh.write(struct.pack(f"<{self.dimension}f", *self.entries[ref_id]))
        sidecar = {"ref_ids": ref_ids, "dimension": self.dimension,
                   "embedder_id": self.embedder_id, "modality": self.modality}
        (directory / f"{name}.json").write_text(
            json.dumps(sidecar, sort_keys=True, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path, name: str) -> "DenseStore":
        directory = Path(directory)
        sidecar = json.loads((directory / f"{name}.json").read_text(encoding="utf-8"))
        store = cls(dimension=sidecar["dimension"], embedder_id=sidecar["embedder_id"],
                    modality=sidecar["modality"])
        dim = store.dimension
        raw = (directory / f"{name}.vec").read_bytes()
        for i, ref_id in enumerate(sidecar["ref_ids"]):
            values = struct.unpack_from(f"<{dim}f", raw, i * dim * 4)
            vec = np.asarray(values, dtype=np.float64)
            norm = float(np.linalg.norm(vec))
            store.entries[ref_id] = vec / norm if norm else vec
        return store


# -- sparse BM25 index ----------------------------------------------------------

class SparseIndex:
    """Okapi BM25 index over tokenized ref texts.

    Uses the nonnegative idf form ln(1 + (N - df + 0.5)/(df + 0.5)), so a
    score is 0 exactly when no query term occurs in the ref. The classic
    form goes to 0 for a term in half the corpus, which breaks that
    equivalence on small fixtures.
    """

    def __init__(self, k1: float = BM25_K1, b: float = BM25_B):
        self.k1 = k1
        self.b = b
        self.postings: dict[str, dict[str, int]] = {}
        self.lengths: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.lengths)

    def add(self, ref_id: str, text: str) -> None:
        if ref_id in self.lengths:
            raise ValueError(f"duplicate ref {ref_id}")
        tokens = tokenize(text)
        self.lengths[ref_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            self.postings.setdefault(term, {})[ref_id] = tf

    @property
    def avgdl(self) -> float:
        return sum(self.lengths.values()) / len(self.lengths) if self.lengths else 0.0

    def idf(self, term: str) -> float:
        n = len(self.lengths)
        df = len(self.postings.get(term, {}))
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def score(self, query: str | Sequence[str], ref_id: str) -> float:
        if ref_id not in self.lengths:
            raise UnknownRef(f"ref {ref_id} not in sparse index")
        terms = tokenize(query) if isinstance(query, str) else list(query)
        avgdl = self.avgdl
        dl = self.lengths[ref_id]
        total = 0.0
        for term in terms:
            tf = self.postings.get(term, {}).get(ref_id, 0)
            if tf == 0:
                continue
            length_norm = self.k1 * (1.0 - self.b + self.b * dl / avgdl)
            total += self.idf(term) * tf * (self.k1 + 1.0) / (tf + length_norm)
        return total

    def search(self, query: str, k: int) -> list[tuple[str, float]]:
        if not self.lengths:
            raise EmptyIndex("search over an empty sparse index")
        terms = tokenize(query)
        candidates = set()
        for term in terms:
            candidates.update(self.postings.get(term, {}))
        scored = [(ref_id, self.score(terms, ref_id)) for ref_id in candidates]
        scored = [(r, s) for r, s in scored if s > 0.0]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            meta = {"k1": self.k1, "b": self.b, "lengths": self.lengths}
            fh.write(json.dumps({"meta": meta}, sort_keys=True, ensure_ascii=False) + "\n")
            for term in sorted(self.postings):
                row = {"term": term,
                       "postings": sorted(self.postings[term].items())}
                fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SparseIndex":
        with open(path, encoding="utf-8") as fh:
            meta = json.loads(fh.readline())["meta"]
            index = cls(k1=meta["k1"], b=meta["b"])
            index.lengths = dict(meta["lengths"])
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    index.postings[row["term"]] = {r: tf for r, tf in row["postings"]}
        return index


def bm25_score(index: SparseIndex, query_terms: Sequence[str] | str, ref_id: str) -> float:
    return index.score(query_terms, ref_id)


# -- retrieved sets ---------------------------------------------------------------

@dataclass
class RetrievedRef:
    ref_id: str
    score: float
    modality: str


@dataclass
class RetrievedSet:
    query_id: str
    refs: list[RetrievedRef]
    k: int
    architecture: str

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"bad architecture: {self.architecture!r}")
        if len(self.refs) > self.k:
            raise ValueError(f"{len(self.refs)} refs exceed k={self.k}")
        ids = [r.ref_id for r in self.refs]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate ref ids in retrieved set")
        by_modality: dict[str, list[float]] = {}
        for ref in self.refs:
            by_modality.setdefault(ref.modality, []).append(ref.score)
        for modality, scores in by_modality.items():
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise ValueError(f"{modality} stream scores increase")

    def ref_ids(self) -> list[str]:
        return [r.ref_id for r in self.refs]

    def to_json(self) -> dict:
        return {"query_id": self.query_id, "k": self.k,
                "architecture": self.architecture,
                "refs": [[r.ref_id, r.score, r.modality] for r in self.refs]}

    @classmethod
    def from_json(cls, row: dict) -> "RetrievedSet":
        return cls(query_id=row["query_id"], k=row["k"],
                   architecture=row["architecture"],
                   refs=[RetrievedRef(*entry) for entry in row["refs"]])


# -- embedding helpers -------------------------------------------------------------

def embed_text_request(text: str) -> ProviderRequest:
    return ProviderRequest(kind="embed_text", slots={"text": text})


def embed_image_request(image_ref: ImageRef, text_hint: str = "") -> ProviderRequest:
    return ProviderRequest(kind="embed_image",
                           slots={"image": image_ref, "text_hint": text_hint})


def chart_search_text(chart: Chart) -> str:
    """The text a chart is findable by absent a real image encoder:
    caption plus serialized values."""
    parts = [chart.caption or "", chart.values.to_prompt_text()]
    return "\n".join(p for p in parts if p)


def _embed_text(client: ProviderClient, text: str) -> list[float]:
    response = client.call(embed_text_request(text))
    return response.vector


def _embed_chart(client: ProviderClient, chart: Chart) -> list[float]:
    response = client.call(embed_image_request(ImageRef(chart.image_ref),
                                               text_hint=chart_search_text(chart)))
    return response.vector


def caption_request(chart: Chart) -> ProviderRequest:
    return ProviderRequest(kind="vision_gen", prompt_template_id=CAPTION_TEMPLATE,
                           slots={"chart": ImageRef(chart.image_ref),
                                  "values": chart.values.to_prompt_text()})


# -- index builders ------------------------------------------------------------------

@dataclass
class UnifiedIndex:
    architecture = "unified_single"
    store: DenseStore
    client: ProviderClient
    ref_modality: dict[str, str] = field(default_factory=dict)

    def search(self, query: str, k: int, query_id: str = "") -> RetrievedSet:
        hits = self.store.search(_embed_text(self.client, query), k)
        refs = [RetrievedRef(ref_id, score, self.ref_modality[ref_id])
                for ref_id, score in hits]
        return RetrievedSet(query_id=query_id, refs=refs, k=k,
                            architecture=self.architecture)


@dataclass
class CaptionCombinedIndex:
    architecture = "caption_combined"
    dense: DenseStore
    sparse: SparseIndex
    client: ProviderClient
    ref_modality: dict[str, str] = field(default_factory=dict)
    captions: dict[str, str] = field(default_factory=dict)
    rrf_constant: int = RRF_CONSTANT

    def search(self, query: str, k: int, query_id: str = "") -> RetrievedSet:
        dense_hits = self.dense.search(_embed_text(self.client, query), len(self.dense))
        sparse_hits = self.sparse.search(query, len(self.sparse))
        fused = rrf_merge([dense_hits, sparse_hits], constant=self.rrf_constant)
        refs = [RetrievedRef(ref_id, score, self.ref_modality[ref_id])
                for ref_id, score in fused[:k]]
        return RetrievedSet(query_id=query_id, refs=refs, k=k,
                            architecture=self.architecture)


@dataclass
class SeparateFusedIndex:
    architecture = "separate_fused"
    text_store: DenseStore
    chart_store: DenseStore
    text_client: ProviderClient
    image_client: ProviderClient
    sparse: Optional[SparseIndex] = None

    def search(self, query: str, k: int, query_id: str = "",
               ratio: str = "three_to_two") -> RetrievedSet:
        if not len(self.text_store) and not len(self.chart_store):
            raise EmptyIndex("both modality stores are empty")
        text_take, chart_take = fusion_slots(
            k, ratio, len(self.text_store), len(self.chart_store))
        refs: list[RetrievedRef] = []
        if text_take:
            for ref_id, score in self.text_store.search(
                    _embed_text(self.text_client, query), text_take):
                refs.append(RetrievedRef(ref_id, score, "text"))
        if chart_take:
            for ref_id, score in self.chart_store.search(
                    _embed_text(self.image_client, query), chart_take):
                refs.append(RetrievedRef(ref_id, score, "chart"))
        return RetrievedSet(query_id=query_id, refs=refs, k=k,
                            architecture=self.architecture)


def index_unified(corpus: Corpus, client: ProviderClient) -> UnifiedIndex:
    """One mixed store: chunks embedded as text, charts as images."""
    store: Optional[DenseStore] = None
    ref_modality: dict[str, str] = {}

    def ensure_store(vector: list[float]) -> DenseStore:
        nonlocal store
        if store is None:
            store = DenseStore(len(vector), embedder_id=client.provider_id,
                               modality="mixed")
        elif len(vector) != store.dimension:
            raise DimensionMismatch(
                f"embedder returned {len(vector)} dims into a "
                f"{store.dimension}-dim store")
        return store

    for chunk_id in sorted(corpus.chunks):
        vec = _embed_text(client, corpus.chunks[chunk_id].text)
        ensure_store(vec).add(chunk_id, vec)
        ref_modality[chunk_id] = "text"
    for chart_id in sorted(corpus.charts):
        vec = _embed_chart(client, corpus.charts[chart_id])
        ensure_store(vec).add(chart_id, vec)
        ref_modality[chart_id] = "chart"
    if store is None:
        store = DenseStore(1, embedder_id=client.provider_id, modality="mixed")
    return UnifiedIndex(store=store, client=client, ref_modality=ref_modality)


def index_caption_combined(corpus: Corpus, captioner: ProviderClient,
                           text_client: ProviderClient,
                           k1: float = BM25_K1, b: float = BM25_B) -> CaptionCombinedIndex:
    """Charts become captions; captions and chunks live in one dense store
    and one BM25 index, charts keeping their original ref ids."""
    dense: Optional[DenseStore] = None
    sparse = SparseIndex(k1=k1, b=b)
    ref_modality: dict[str, str] = {}
    captions: dict[str, str] = {}

    def add(ref_id: str, text: str, modality: str) -> None:
        nonlocal dense
        vec = _embed_text(text_client, text)
        if dense is None:
            dense = DenseStore(len(vec), embedder_id=text_client.provider_id,
                               modality="mixed")
        dense.add(ref_id, vec)
        sparse.add(ref_id, text)
        ref_modality[ref_id] = modality

    for chunk_id in sorted(corpus.chunks):
        add(chunk_id, corpus.chunks[chunk_id].text, "text")
    for chart_id in sorted(corpus.charts):
        response = captioner.call(caption_request(corpus.charts[chart_id]))
        caption = (response.text or "").strip()
        captions[chart_id] = caption
        add(chart_id, caption, "chart")
    if dense is None:
        dense = DenseStore(1, embedder_id=text_client.provider_id, modality="mixed")
    return CaptionCombinedIndex(dense=dense, sparse=sparse, client=text_client,
                                ref_modality=ref_modality, captions=captions)


def index_separate(corpus: Corpus, image_client: ProviderClient,
                   text_client: ProviderClient,
                   with_sparse: bool = False,
                   k1: float = BM25_K1, b: float = BM25_B) -> SeparateFusedIndex:
    text_store: Optional[DenseStore] = None
    chart_store: Optional[DenseStore] = None
    sparse = SparseIndex(k1=k1, b=b) if with_sparse else None

    for chunk_id in sorted(corpus.chunks):
        vec = _embed_text(text_client, corpus.chunks[chunk_id].text)
        if text_store is None:
            text_store = DenseStore(len(vec), embedder_id=text_client.provider_id,
                                    modality="text")
        text_store.add(chunk_id, vec)
        if sparse is not None:
            sparse.add(chunk_id, corpus.chunks[chunk_id].text)
    for chart_id in sorted(corpus.charts):
        vec = _embed_chart(image_client, corpus.charts[chart_id])
        if chart_store is None:
            chart_store = DenseStore(len(vec), embedder_id=image_client.provider_id,
                                     modality="chart")
        chart_store.add(chart_id, vec)

    if text_store is None:
        text_store = DenseStore(1, embedder_id=text_client.provider_id, modality="text")
    if chart_store is None:
        chart_store = DenseStore(text_store.dimension,
                                 embedder_id=image_client.provider_id, modality="chart")
    return SeparateFusedIndex(text_store=text_store, chart_store=chart_store,
                              text_client=text_client, image_client=image_client,
                              sparse=sparse)


# -- fusion --------------------------------------------------------------------------

def rrf_merge(ranked_lists: Sequence[Sequence[tuple[str, float]]],
              constant: int = RRF_CONSTANT) -> list[tuple[str, float]]:
    """Reciprocal-rank fusion: score(ref) = Σ 1/(constant + rank), rank
    starting at 1 in each list. Ties broken by ascending ref id."""
    scores: dict[str, float] = {}
    for ranked in ranked_lists:
        for rank, (ref_id, _) in enumerate(ranked, start=1):
            scores[ref_id] = scores.get(ref_id, 0.0) + 1.0 / (constant + rank)
    return sorted(scores.items(), key=lambda pair: (-pair[1], pair[0]))


def fusion_slots(k: int, ratio: str, text_available: int,
                 chart_available: int) -> tuple[int, int]:
    """Split k retrieval slots between modalities.

    three_to_two: text gets round(0.6k). balanced: an even split, text
    taking the extra slot for odd k. Deficits caused by a short store
    backfill from the other modality.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if ratio == "three_to_two":
        text_slots = round(0.6 * k)
    elif ratio == "balanced":
        text_slots = (k + 1) // 2
    else:
        raise ValueError(f"unknown ratio policy: {ratio!r}")
    chart_slots = k - text_slots

    text_take = min(text_slots, text_available)
    chart_take = min(chart_slots, chart_available)
    deficit_text = text_slots - text_take
    deficit_chart = chart_slots - chart_take
    text_take += min(deficit_chart, text_available - text_take)
    chart_take += min(deficit_text, chart_available - chart_take)
    return text_take, chart_take


def search(index, query: str, k: int, query_id: str = "",
           ratio: str = "three_to_two") -> RetrievedSet:
    """Architecture-dispatching facade over the three index types."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(index, SeparateFusedIndex):
        return index.search(query, k, query_id=query_id, ratio=ratio)
    return index.search(query, k, query_id=query_id)


# -- ground truth + recall ---------------------------------------------------------

@dataclass
class GroundTruthRefs:
    refs: list[tuple[str, str, list[str]]]  # (ref_id, modality, sentences)

    def __post_init__(self):
        if not self.refs:
            raise ValueError("ground truth needs at least one ref")

    @classmethod
    def from_qapair(cls, qa, corpus: Corpus) -> "GroundTruthRefs":
        refs = []
        seen = set()
        for doc_id, source_id, modality in qa.gt_sources:
            if source_id in seen:
                continue
            seen.add(source_id)
            if modality == "text":
                refs.append((source_id, "text",
                             list(corpus.chunks[source_id].sentences)))
            else:
                refs.append((source_id, "chart", []))
        return cls(refs=refs)


def recall_at_k(retrieved: RetrievedSet, gt: GroundTruthRefs,
                ref_texts: Optional[Mapping[str, str]] = None) -> float:
    """Fraction of ground-truth refs found in the retrieved set.

    A chart ref is found iff its exact id was retrieved. A text ref is
    found iff every one of its sentences appears (normalized substring)
    in at least one retrieved ref's text. `ref_texts` maps ref ids to
    their searchable text (chunks always, charts when captioned).
    """
    retrieved_ids = set(retrieved.ref_ids())
    texts = []
    for ref in retrieved.refs:
        if ref_texts and ref.ref_id in ref_texts:
            texts.append(normalize(ref_texts[ref.ref_id]))
    matched = 0
    for ref_id, modality, sentences in gt.refs:
        if modality == "chart":
            matched += ref_id in retrieved_ids
        else:
            needed = [normalize(s) for s in sentences]
            if needed and all(any(s in t for t in texts) for s in needed):
                matched += 1
    return matched / len(gt.refs)


# -- persistence ----------------------------------------------------------------------

def save_index(index, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"architecture": index.architecture}
    if isinstance(index, UnifiedIndex):
        index.store.save(directory, "unified")
        manifest["ref_modality"] = index.ref_modality
    elif isinstance(index, CaptionCombinedIndex):
        index.dense.save(directory, "dense")
        index.sparse.save(directory / "sparse.jsonl")
        manifest["ref_modality"] = index.ref_modality
        manifest["captions"] = index.captions
        manifest["rrf_constant"] = index.rrf_constant
    elif isinstance(index, SeparateFusedIndex):
        index.text_store.save(directory, "text")
        index.chart_store.save(directory, "chart")
        if index.sparse is not None:
            index.sparse.save(directory / "sparse.jsonl")
    else:
        raise TypeError(f"cannot persist {type(index).__name__}")
    (directory / "index.json").write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False), encoding="utf-8")


def load_index(directory: str | Path, clients: Mapping[str, ProviderClient]):
    """Rehydrate a saved index. `clients` maps "embed_text"/"embed_image"
    to provider clients (vectors persist; encoders do not)."""
    directory = Path(directory)
    manifest = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    arch = manifest["architecture"]
    if arch == "unified_single":
        return UnifiedIndex(store=DenseStore.load(directory, "unified"),
                            client=clients["embed_text"],
                            ref_modality=manifest["ref_modality"])
    if arch == "caption_combined":
        return CaptionCombinedIndex(
            dense=DenseStore.load(directory, "dense"),
            sparse=SparseIndex.load(directory / "sparse.jsonl"),
            client=clients["embed_text"],
            ref_modality=manifest["ref_modality"],
            captions=manifest["captions"],
            rrf_constant=manifest.get("rrf_constant", RRF_CONSTANT))
    if arch == "separate_fused":
        sparse_path = directory / "sparse.jsonl"
        return SeparateFusedIndex(
            text_store=DenseStore.load(directory, "text"),
            chart_store=DenseStore.load(directory, "chart"),
            text_client=clients["embed_text"],
            image_client=clients["embed_image"],
            sparse=SparseIndex.load(sparse_path) if sparse_path.exists() else None)
    raise ValueError(f"unknown architecture in manifest: {arch!r}")


def save_retrieved(sets: Iterable[RetrievedSet], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rs in sets:
            fh.write(json.dumps(rs.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def load_retrieved(path: str | Path) -> list[RetrievedSet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(RetrievedSet.from_json(json.loads(line)))
    return out
