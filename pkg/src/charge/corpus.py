"""Canonical corpus data model: documents, text chunks, and chart units.

Ingestion turns a raw document bundle (text blocks + chart image files)
into chunked text and registered charts with OCR-extracted values. All
ids are content-derived so repeated ingestion of the same bytes yields
the same corpus.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Optional

from .errors import DuplicateDocument, EmptyBundle, ProviderError, UnreadableImage
from .text import split_sentences, word_count

DEFAULT_TARGET_WORDS = 25


@dataclass
class ChartValue:
    label: str
    series: Optional[str]
    value: float
    unit: Optional[str]


@dataclass
class ChartValues:
    entries: list[ChartValue] = field(default_factory=list)
    raw_ocr_text: str = ""

    def __post_init__(self):
        for e in self.entries:
            v = float(e.value)
            if v != v or v in (float("inf"), float("-inf")):
                raise ValueError(f"non-finite chart value for label {e.label!r}")

    def to_prompt_text(self) -> str:
        """Serialize for prompt slots: one 'label (series): value unit' line
        per entry, followed by the raw OCR text. Empty values serialize to ''.
        """
        lines = []
        for e in self.entries:
            label = f"{e.label} ({e.series})" if e.series else e.label
            value = f"{e.value:g}" + (f" {e.unit}" if e.unit else "")
            lines.append(f"{label}: {value}")
        if self.raw_ocr_text:
            lines.append(self.raw_ocr_text)
        return "\n".join(lines)


@dataclass
class TextChunk:
    chunk_id: str
    doc_id: str
    text: str
    sentences: list[str]
    word_count: int


@dataclass
class Chart:
    chart_id: str
    doc_id: str
    image_ref: str
    caption: Optional[str]
    values: ChartValues


@dataclass
class Document:
    doc_id: str
    title: str
    source_uri: str
    chunk_ids: list[str]
    chart_ids: list[str]
    domain_tag: str = ""


@dataclass
class DocumentBundle:
    """Raw ingestion input: ordered text blocks plus chart image paths."""

    title: str
    text_blocks: list[str] = field(default_factory=list)
    chart_images: list[str] = field(default_factory=list)
    chart_captions: list[Optional[str]] = field(default_factory=list)
    source_uri: str = ""
    domain_tag: str = ""

    def content_bytes(self) -> bytes:
        h = hashlib.sha256()
        for block in self.text_blocks:
            h.update(b"t\x00")
            h.update(block.encode("utf-8"))
        for image in self.chart_images:
            h.update(b"c\x00")
            h.update(_read_image_bytes(image))
        return h.digest()


def _read_image_bytes(image_ref: str) -> bytes:
    path = Path(image_ref)
    if not path.is_file():
        raise UnreadableImage(f"cannot resolve image handle: {image_ref}")
    return path.read_bytes()


def _short_hash(*parts: str) -> str:
    h = hashlib.sha256("\x00".join(parts).encode("utf-8"))
    return h.hexdigest()[:12]


def chunk_text(text: str, target_words: int = DEFAULT_TARGET_WORDS, doc_id: str = "") -> list[TextChunk]:
    """Greedy sentence packing: accumulate whole sentences until adding the
    next one would exceed `target_words`, then emit. Sentences are never
    split, so a single long sentence becomes its own oversized chunk.
    """
    if target_words < 5:
        raise ValueError("target_words must be >= 5")
    sentences = split_sentences(text)
    if not sentences:
        return []
    groups: list[list[str]] = []
    current: list[str] = []
    current_wc = 0
    for sentence in sentences:
        wc = word_count(sentence)
        if current and current_wc + wc > target_words:
            groups.append(current)
            current, current_wc = [], 0
        current.append(sentence)
        current_wc += wc
    if current:
        groups.append(current)

    chunks = []
    for ordinal, group in enumerate(groups):
        joined = " ".join(group)
        chunk_id = f"{_short_hash(doc_id, joined)}-{ordinal}"
        chunks.append(TextChunk(
            chunk_id=chunk_id,
            doc_id=doc_id,
            text=joined,
            sentences=group,
            word_count=word_count(joined),
        ))
    return chunks


@dataclass
class CorpusStats:
    documents: int
    chunks: int
    charts: int
    mean_chunk_words: float
    mean_chart_entries: float


class Corpus:
    """In-memory corpus; append-only during ingestion, immutable afterwards."""

    def __init__(self):
        self.documents: dict[str, Document] = {}
        self.chunks: dict[str, TextChunk] = {}
        self.charts: dict[str, Chart] = {}

    def ingest(self, bundle: DocumentBundle, ocr=None,
               target_words: int = DEFAULT_TARGET_WORDS) -> Document:
        """Ingest a bundle: chunk its text, register its charts through the
        OCR provider, and store the document. Ids derive from content bytes.
        """
        text = "\n\n".join(b for b in bundle.text_blocks if b.strip())
        if not text.strip() and not bundle.chart_images:
            raise EmptyBundle(f"bundle {bundle.title!r} has no text and no charts")

        doc_id = bundle.content_bytes().hex()[:12]
        if doc_id in self.documents:
            raise DuplicateDocument(doc_id)

        chunks = chunk_text(text, target_words=target_words, doc_id=doc_id)
        charts = []
        captions = list(bundle.chart_captions) + [None] * (
            len(bundle.chart_images) - len(bundle.chart_captions))
        for ordinal, image_ref in enumerate(bundle.chart_images):
            chart = register_chart(image_ref, ocr, doc_id=doc_id, ordinal=ordinal,
                                   caption=captions[ordinal])
            charts.append(chart)

        doc = Document(
            doc_id=doc_id,
            title=bundle.title,
            source_uri=bundle.source_uri,
            chunk_ids=[c.chunk_id for c in chunks],
            chart_ids=[c.chart_id for c in charts],
            domain_tag=bundle.domain_tag,
        )
        self.documents[doc_id] = doc
        for c in chunks:
            self.chunks[c.chunk_id] = c
        for c in charts:
            self.charts[c.chart_id] = c
        return doc

    def stats(self) -> CorpusStats:
        n_chunks = len(self.chunks)
        n_charts = len(self.charts)
        mean_words = (sum(c.word_count for c in self.chunks.values()) / n_chunks
                      if n_chunks else 0.0)
        mean_entries = (sum(len(c.values.entries) for c in self.charts.values()) / n_charts
                        if n_charts else 0.0)
        return CorpusStats(
            documents=len(self.documents),
            chunks=n_chunks,
            charts=n_charts,
            mean_chunk_words=mean_words,
            mean_chart_entries=mean_entries,
        )

    # -- document-order helpers used by verification pairing ---------------

    def nearest_chart(self, chunk_id: str) -> Optional[Chart]:
        chunk = self.chunks[chunk_id]
        doc = self.documents[chunk.doc_id]
        return self._nearest(doc.chunk_ids.index(chunk_id), doc.chart_ids, self.charts)

    def nearest_chunk(self, chart_id: str) -> Optional[TextChunk]:
        chart = self.charts[chart_id]
        doc = self.documents[chart.doc_id]
        return self._nearest(doc.chart_ids.index(chart_id), doc.chunk_ids, self.chunks)

    @staticmethod
    def _nearest(ordinal: int, other_ids: list[str], table: dict):
        if not other_ids:
            return None
        best = min(range(len(other_ids)), key=lambda j: (abs(j - ordinal), j))
        return table[other_ids[best]]


def register_chart(image_ref: str, ocr=None, doc_id: str = "", ordinal: int = 0,
                   caption: Optional[str] = None) -> Chart:
    """Register one chart image: resolve the handle, run OCR, store values.

    A provider-reported OCR failure yields empty ChartValues rather than an
    error; only an unresolvable image handle raises.
    """
    data = _read_image_bytes(image_ref)
    chart_id = f"{_short_hash(doc_id, hashlib.sha256(data).hexdigest())}-{ordinal}"
    values = ChartValues()
    if ocr is not None:
        try:
            values = ocr.extract_values(image_ref)
        except ProviderError:
            values = ChartValues()
    return Chart(chart_id=chart_id, doc_id=doc_id, image_ref=image_ref,
                 caption=caption, values=values)


# -- persistence ----------------------------------------------------------

def save_corpus(corpus: Corpus, directory: str | Path) -> None:
    """Persist as a directory: corpus.jsonl / chunks.jsonl / charts.jsonl
    plus an images/ blob folder. Image refs are rewritten to be relative
    to the corpus directory.
    """
    directory = Path(directory)
    images = directory / "images"
    images.mkdir(parents=True, exist_ok=True)
    _write_jsonl(directory / "corpus.jsonl",
                 (asdict(d) for d in _ordered(corpus.documents)))
    _write_jsonl(directory / "chunks.jsonl",
                 (asdict(c) for c in _ordered(corpus.chunks)))
    chart_rows = []
    for chart in _ordered(corpus.charts):
        src = Path(chart.image_ref)
        blob = images / f"{chart.chart_id}{src.suffix or '.png'}"
        if src.resolve() != blob.resolve():
            shutil.copyfile(src, blob)
        row = asdict(chart)
        row["image_ref"] = str(blob.relative_to(directory))
        chart_rows.append(row)
    _write_jsonl(directory / "charts.jsonl", chart_rows)


def load_corpus(directory: str | Path) -> Corpus:
    directory = Path(directory)
    corpus = Corpus()
    for row in _read_jsonl(directory / "corpus.jsonl"):
        corpus.documents[row["doc_id"]] = Document(**row)
    for row in _read_jsonl(directory / "chunks.jsonl"):
        corpus.chunks[row["chunk_id"]] = TextChunk(**row)
    for row in _read_jsonl(directory / "charts.jsonl"):
        values = ChartValues(
            entries=[ChartValue(**e) for e in row["values"]["entries"]],
            raw_ocr_text=row["values"]["raw_ocr_text"],
        )
        corpus.charts[row["chart_id"]] = Chart(
            chart_id=row["chart_id"], doc_id=row["doc_id"],
            image_ref=str(directory / row["image_ref"]),
            caption=row["caption"], values=values,
        )
    return corpus


def _ordered(table: dict) -> list:
    return [table[k] for k in sorted(table)]


def _write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> Iterable[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)
