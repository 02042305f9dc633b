"""Pipeline stages over an artifact directory.

Each stage reads the previous stage's files, writes its own, and records
a stamp of its input digests. Rerunning a completed stage with unchanged
inputs is a no-op, so a pipeline can resume from any point. All artifact
writers are deterministic: same inputs, same bytes.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import tarfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .config import PipelineConfig
from .corpus import Corpus, DocumentBundle, load_corpus, save_corpus
from .errors import ConfigInvalid, MissingStageInput, ProviderError
from .evaluation import EvalCondition, answer, gt_source_refs, score_response, \
    summarize, write_report
from .keypoints import (assign_pools, extract_chart_keypoints,
                        extract_text_keypoints, load_keypoints, save_keypoints)
from .providers.base import ProviderClient
from .providers.cache import ResponseCache
from .providers.embedder import HashEmbedderBackend
from .providers.http_backend import HTTPBackend
from .providers.ocr import OcrClient
from .providers.scripted import ScriptedProvider
from .qagen import build_dataset, load_dataset, save_dataset
from .retrieval import (GroundTruthRefs, chart_search_text, index_caption_combined,
                        index_separate, index_unified, load_index, load_retrieved,
                        recall_at_k, save_index, save_retrieved, search)
from .review import ReviewStore
from .verification import save_records, verify_all

STAGES = ("ingest", "extract", "verify", "generate", "index",
          "retrieve", "answer", "evaluate", "export")


@dataclass
class Workspace:
    """Path schema of one pipeline run's artifact tree."""

    root: Path

    @property
    def corpus_dir(self) -> Path: return self.root / "corpus"

    @property
    def candidates_path(self) -> Path: return self.root / "keypoints" / "candidates.jsonl"

    @property
    def keypoints_path(self) -> Path: return self.root / "keypoints" / "keypoints.jsonl"

    @property
    def verification_path(self) -> Path: return self.root / "keypoints" / "verification.jsonl"

    @property
    def dataset_dir(self) -> Path: return self.root / "dataset"

    @property
    def index_dir(self) -> Path: return self.root / "index"

    @property
    def retrieved_path(self) -> Path: return self.root / "retrieval" / "retrieved.jsonl"

    @property
    def responses_path(self) -> Path: return self.root / "eval" / "responses.jsonl"

    @property
    def eval_dir(self) -> Path: return self.root / "eval"

    @property
    def review_dir(self) -> Path: return self.root / "review"

    @property
    def export_path(self) -> Path: return self.root / "export" / "charge-export.tar.gz"

    @property
    def stamps_dir(self) -> Path: return self.root / "stamps"

    @property
    def log_path(self) -> Path: return self.root / "stage_log.jsonl"

    def index_path(self, architecture: str) -> Path:
        return self.index_dir / architecture


def workspace(config: PipelineConfig) -> Workspace:
    return Workspace(root=Path(config.root))


# -- resumability ------------------------------------------------------------

def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _input_digests(paths: Sequence[Path]) -> dict[str, str]:
    digests: dict[str, str] = {}
    for path in paths:
        if path.is_dir():
            for member in sorted(p for p in path.rglob("*") if p.is_file()):
                digests[str(member)] = _file_digest(member)
        elif path.is_file():
            digests[str(path)] = _file_digest(path)
    return digests


def _canonical(params: Optional[dict]) -> dict:
    return json.loads(json.dumps(params or {}, sort_keys=True, default=str))


def require(path: Path) -> Path:
    if not path.exists():
        raise MissingStageInput(str(path))
    return path


class StageRunner:
    """Stamp bookkeeping shared by all stages: decide whether a stage can
    be skipped, and record digests after it runs."""

    def __init__(self, ws: Workspace):
        self.ws = ws

    def _stamp_path(self, stage: str) -> Path:
        return self.ws.stamps_dir / f"{stage}.json"

    def up_to_date(self, stage: str, inputs: Sequence[Path],
                   params: Optional[dict] = None) -> bool:
        stamp_path = self._stamp_path(stage)
        if not stamp_path.is_file():
            return False
        try:
            stamp = json.loads(stamp_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return False
        if stamp.get("params") != _canonical(params):
            return False
        if stamp.get("inputs") != _input_digests(list(inputs)):
            return False
        return all(Path(p).exists() for p in stamp.get("outputs", []))

    def write_stamp(self, stage: str, inputs: Sequence[Path],
                    outputs: Sequence[Path], params: Optional[dict] = None) -> None:
        self.ws.stamps_dir.mkdir(parents=True, exist_ok=True)
        stamp = {"stage": stage,
                 "params": _canonical(params),
                 "inputs": _input_digests(list(inputs)),
                 "outputs": sorted(str(p) for p in outputs)}
        tmp = self._stamp_path(stage).with_suffix(".tmp")
        tmp.write_text(json.dumps(stamp, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
        tmp.replace(self._stamp_path(stage))

    def log(self, stage: str, status: str, detail: str = "") -> None:
        self.ws.root.mkdir(parents=True, exist_ok=True)
        row = {"stage": stage, "status": status, "detail": detail}
        with open(self.ws.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


# -- provider wiring -----------------------------------------------------------

def build_clients(config: PipelineConfig) -> dict[str, ProviderClient]:
    """Instantiate one caching client per configured provider slot. All
    slots share one persistent response cache keyed by request fingerprint,
    so a rerun stage answers from disk instead of the backend.
    """
    config.cache_path.parent.mkdir(parents=True, exist_ok=True)
    cache = ResponseCache(config.cache_path)
    template_root = str(config.template_root) if config.template_root else None
    clients: dict[str, ProviderClient] = {}
    for slot, spec in sorted(config.providers.items()):
        if spec.backend == "http":
            backend = HTTPBackend(spec.endpoint, spec.model,
                                  auth_token=spec.auth_token,
                                  template_root=template_root)
        elif spec.backend == "hash":
            backend = HashEmbedderBackend(spec.dimension, seed=config.seed)
        else:
            fixture = Path(spec.fixture)
            if not fixture.is_file():
                raise ConfigInvalid(
                    f"provider slot {slot!r}: fixture file not found: {fixture}")
            backend = ScriptedProvider.load_fixture(fixture, fallback=spec.fallback)
        clients[slot] = ProviderClient(backend, cache=cache)
    return clients


def _client(clients: Mapping[str, ProviderClient], slot: str) -> ProviderClient:
    if slot not in clients:
        raise ConfigInvalid(f"no provider configured for slot {slot!r}")
    return clients[slot]


def conditions_for(config: PipelineConfig,
                   modes: Optional[Sequence[str]] = None,
                   k: Optional[int] = None) -> list[EvalCondition]:
    out = []
    for mode in (modes or config.eval_modes):
        if mode == "rag_k":
            out.append(EvalCondition("rag_k", k=k or config.retrieval_k,
                                     architecture=config.architecture,
                                     ratio=config.ratio))
        else:
            out.append(EvalCondition(mode))
    return out


# -- stages --------------------------------------------------------------------

def run_ingest(config: PipelineConfig, clients: Mapping[str, ProviderClient],
               force: bool = False) -> dict:
    """Read document bundles (one JSON file each) from the input directory,
    chunk text, OCR charts, and persist the corpus."""
    ws = workspace(config)
    runner = StageRunner(ws)
    require(config.input_dir)
    bundle_files = sorted(config.input_dir.rglob("*.json"))
    if not bundle_files:
        raise MissingStageInput(str(config.input_dir / "*.json"))

    inputs = [config.input_dir]
    params = {"target_words": config.target_words}
    if not force and runner.up_to_date("ingest", inputs, params):
        runner.log("ingest", "skipped")
        return {"stage": "ingest", "skipped": True}

    ocr = OcrClient(_client(clients, "ocr")) if "ocr" in clients else None
    corpus = Corpus()
    for bundle_file in bundle_files:
        raw = json.loads(bundle_file.read_text(encoding="utf-8"))
        images = [str((bundle_file.parent / img).resolve())
                  for img in raw.get("chart_images", [])]
        bundle = DocumentBundle(
            title=raw["title"],
            text_blocks=list(raw.get("text_blocks", [])),
            chart_images=images,
            chart_captions=list(raw.get("chart_captions", [])),
            source_uri=raw.get("source_uri", ""),
            domain_tag=raw.get("domain_tag", ""),
        )
        corpus.ingest(bundle, ocr=ocr, target_words=config.target_words)
    save_corpus(corpus, ws.corpus_dir)
    runner.write_stamp("ingest", inputs, [ws.corpus_dir], params)
    stats = corpus.stats()
    runner.log("ingest", "ok", f"{stats.documents} documents")
    return {"stage": "ingest", "skipped": False, "documents": stats.documents,
            "chunks": stats.chunks, "charts": stats.charts}


def run_extract(config: PipelineConfig, clients: Mapping[str, ProviderClient],
                force: bool = False) -> dict:
    """Pull candidate keypoints out of every chunk and chart, then classify
    each one's pool (text, chart, or present in both)."""
    ws = workspace(config)
    runner = StageRunner(ws)
    require(ws.corpus_dir / "corpus.jsonl")

    inputs = [ws.corpus_dir]
    if not force and runner.up_to_date("extract", inputs):
        runner.log("extract", "skipped")
        return {"stage": "extract", "skipped": True}

    corpus = load_corpus(ws.corpus_dir)
    text_gen = _client(clients, "text_gen")
    vision_gen = _client(clients, "vision_gen")
    keypoints = []
    for chunk_id in sorted(corpus.chunks):
        keypoints.extend(extract_text_keypoints(corpus.chunks[chunk_id], text_gen))
    for chart_id in sorted(corpus.charts):
        keypoints.extend(extract_chart_keypoints(corpus.charts[chart_id], vision_gen))
    assign_pools(keypoints, corpus, text_gen)
    save_keypoints(keypoints, ws.candidates_path)
    runner.write_stamp("extract", inputs, [ws.candidates_path])
    runner.log("extract", "ok", f"{len(keypoints)} candidates")
    return {"stage": "extract", "skipped": False, "candidates": len(keypoints)}


def run_verify(config: PipelineConfig, clients: Mapping[str, ProviderClient],
               force: bool = False) -> dict:
    """Probe every candidate from both modalities and retain only those
    answerable from their own source and not from the other."""
    ws = workspace(config)
    runner = StageRunner(ws)
    require(ws.candidates_path)

    inputs = [ws.corpus_dir, ws.candidates_path]
    if not force and runner.up_to_date("verify", inputs):
        runner.log("verify", "skipped")
        return {"stage": "verify", "skipped": True}

    corpus = load_corpus(ws.corpus_dir)
    keypoints = load_keypoints(ws.candidates_path)
    providers = {"text_gen": _client(clients, "text_gen"),
                 "vision_gen": _client(clients, "vision_gen"),
                 "judge": clients.get("judge")}
    records = verify_all(keypoints, corpus, providers)
    save_records(records, ws.verification_path)
    save_keypoints(keypoints, ws.keypoints_path)
    retained = sum(1 for kp in keypoints if kp.status == "retained")
    runner.write_stamp("verify", inputs,
                       [ws.verification_path, ws.keypoints_path])
    runner.log("verify", "ok", f"{retained}/{len(keypoints)} retained")
    return {"stage": "verify", "skipped": False, "checked": len(records),
            "retained": retained, "dropped": len(keypoints) - retained}


def run_generate(config: PipelineConfig, clients: Mapping[str, ProviderClient],
                 force: bool = False) -> dict:
    """Build the QA dataset from retained keypoints against the configured
    per-category quotas."""
    ws = workspace(config)
    runner = StageRunner(ws)
    require(ws.keypoints_path)
    if not config.quotas:
        raise ConfigInvalid("qagen.quotas must be configured to generate a dataset")

    inputs = [ws.corpus_dir, ws.keypoints_path]
    params = {"seed": config.seed, "quotas": config.quotas,
              "retrieval_k": config.qa_retrieval_k,
              "dedup_threshold": config.dedup_threshold,
              "retry_budget": config.retry_budget}
    if not force and runner.up_to_date("generate", inputs, params):
        runner.log("generate", "skipped")
        return {"stage": "generate", "skipped": True}

    corpus = load_corpus(ws.corpus_dir)
    keypoints = load_keypoints(ws.keypoints_path)
    providers = {"text_gen": _client(clients, "text_gen"),
                 "vision_gen": _client(clients, "vision_gen"),
                 "embed_text": _client(clients, "embed_text")}
    build = build_dataset(corpus, keypoints, config.quotas, seed=config.seed,
                          providers=providers, retrieval_k=config.qa_retrieval_k,
                          dedup_threshold=config.dedup_threshold,
                          retry_budget=config.retry_budget)
    save_dataset(build, ws.dataset_dir)
    runner.write_stamp("generate", inputs, [ws.dataset_dir], params)
    runner.log("generate", "ok", f"{len(build.pairs)} pairs")
    return {"stage": "generate", "skipped": False, "pairs": len(build.pairs),
            "counts": build.manifest["counts"],
            "shortfalls": build.manifest["shortfalls"]}


def run_index(config: PipelineConfig, clients: Mapping[str, ProviderClient],
              force: bool = False) -> dict:
    """Embed the corpus into the configured retrieval architecture."""
    ws = workspace(config)
    runner = StageRunner(ws)
    require(ws.corpus_dir / "corpus.jsonl")

    inputs = [ws.corpus_dir]
    params = {"architecture": config.architecture}
    out_dir = ws.index_path(config.architecture)
    if not force and runner.up_to_date("index", inputs, params):
        runner.log("index", "skipped")
        return {"stage": "index", "skipped": True}

    corpus = load_corpus(ws.corpus_dir)
    if config.architecture == "unified_single":
        index = index_unified(corpus, _client(clients, "embed_text"))
    elif config.architecture == "caption_combined":
        index = index_caption_combined(corpus, _client(clients, "captioner"),
                                       _client(clients, "embed_text"))
    else:
        index = index_separate(corpus, _client(clients, "embed_image"),
                               _client(clients, "embed_text"))
    save_index(index, out_dir)
    runner.write_stamp("index", inputs, [out_dir], params)
    runner.log("index", "ok", config.architecture)
    return {"stage": "index", "skipped": False, "architecture": config.architecture}


def run_retrieve(config: PipelineConfig, clients: Mapping[str, ProviderClient],
                 force: bool = False) -> dict:
    """Run every dataset question against the index and persist the
    retrieved sets."""
    ws = workspace(config)
    runner = StageRunner(ws)
    index_dir = ws.index_path(config.architecture)
    require(index_dir / "index.json")
    require(ws.dataset_dir / "dataset.jsonl")

    inputs = [index_dir, ws.dataset_dir]
    params = {"k": config.retrieval_k, "ratio": config.ratio}
    if not force and runner.up_to_date("retrieve", inputs, params):
        runner.log("retrieve", "skipped")
        return {"stage": "retrieve", "skipped": True}

    index = load_index(index_dir, {"embed_text": _client(clients, "embed_text"),
                                   "embed_image": clients.get("embed_image")
                                   or _client(clients, "embed_text")})
    build = load_dataset(ws.dataset_dir)
    sets = [search(index, pair.question, config.retrieval_k,
                   query_id=pair.qa_id, ratio=config.ratio)
            for pair in sorted(build.pairs, key=lambda p: p.qa_id)]
    save_retrieved(sets, ws.retrieved_path)
    runner.write_stamp("retrieve", inputs, [ws.retrieved_path], params)
    runner.log("retrieve", "ok", f"{len(sets)} queries")
    return {"stage": "retrieve", "skipped": False, "queries": len(sets)}


def run_answer(config: PipelineConfig, clients: Mapping[str, ProviderClient],
               conditions: Optional[Sequence[EvalCondition]] = None,
               force: bool = False) -> dict:
    """Collect responder output for every (condition, question). The rag
    condition reads its context from the retrieve stage's output."""
    ws = workspace(config)
    runner = StageRunner(ws)
    require(ws.dataset_dir / "dataset.jsonl")
    conditions = list(conditions if conditions is not None
                      else conditions_for(config))
    needs_rag = any(c.mode == "rag_k" for c in conditions)
    if needs_rag:
        require(ws.retrieved_path)

    inputs = [ws.corpus_dir, ws.dataset_dir]
    if needs_rag:
        inputs.append(ws.retrieved_path)
    params = {"conditions": [c.label for c in conditions]}
    if not force and runner.up_to_date("answer", inputs, params):
        runner.log("answer", "skipped")
        return {"stage": "answer", "skipped": True}

    corpus = load_corpus(ws.corpus_dir)
    build = load_dataset(ws.dataset_dir)
    pairs = sorted(build.pairs, key=lambda p: p.qa_id)
    retrieved_by_qa = {}
    if needs_rag:
        retrieved_by_qa = {rs.query_id: rs for rs in load_retrieved(ws.retrieved_path)}
    responder = clients.get("responder")
    providers = {"text_gen": responder or _client(clients, "text_gen"),
                 "vision_gen": responder or _client(clients, "vision_gen")}

    rows = []
    failures = 0
    for condition in conditions:
        for pair in pairs:
            if condition.mode == "rag_k":
                if pair.qa_id not in retrieved_by_qa:
                    raise MissingStageInput(f"{ws.retrieved_path}#{pair.qa_id}")
                sources = retrieved_by_qa[pair.qa_id]
            elif condition.mode == "gt_retrieval":
                sources = gt_source_refs(pair)
            else:
                sources = None
            try:
                response = answer(pair.question, condition, corpus, sources, providers)
                failed = False
            except ProviderError:
                response, failed = "", True
                failures += 1
            rows.append({"condition": condition.label, "qa_id": pair.qa_id,
                         "response": response, "failed": failed})

    rows.sort(key=lambda r: (r["condition"], r["qa_id"]))
    ws.responses_path.parent.mkdir(parents=True, exist_ok=True)
    with open(ws.responses_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    runner.write_stamp("answer", inputs, [ws.responses_path], params)
    runner.log("answer", "ok", f"{len(rows)} responses, {failures} failures")
    return {"stage": "answer", "skipped": False, "responses": len(rows),
            "failures": failures, "conditions": params["conditions"]}


def run_evaluate(config: PipelineConfig, clients: Mapping[str, ProviderClient],
                 conditions: Optional[Sequence[EvalCondition]] = None,
                 force: bool = False) -> dict:
    """Score stored responses and write the report: per-item records, the
    aggregate table as JSON/text/CSV, and summary figures."""
    ws = workspace(config)
    runner = StageRunner(ws)
    require(ws.dataset_dir / "dataset.jsonl")
    require(ws.keypoints_path)
    require(ws.responses_path)
    conditions = list(conditions if conditions is not None
                      else conditions_for(config))
    needs_rag = any(c.mode == "rag_k" for c in conditions)
    if needs_rag:
        require(ws.retrieved_path)

    inputs = [ws.corpus_dir, ws.dataset_dir, ws.keypoints_path, ws.responses_path]
    if needs_rag:
        inputs.append(ws.retrieved_path)
    params = {"conditions": [c.label for c in conditions], "run_id": config.run_id}
    out_dir = ws.eval_dir / config.run_id
    if not force and runner.up_to_date("evaluate", inputs, params):
        runner.log("evaluate", "skipped")
        return {"stage": "evaluate", "skipped": True}

    corpus = load_corpus(ws.corpus_dir)
    build = load_dataset(ws.dataset_dir)
    pairs = sorted(build.pairs, key=lambda p: p.qa_id)
    keypoints = {kp.kp_id: kp for kp in load_keypoints(ws.keypoints_path)}
    responses = {}
    with open(ws.responses_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                responses[(row["condition"], row["qa_id"])] = row
    retrieved_by_qa = {}
    if needs_rag:
        retrieved_by_qa = {rs.query_id: rs for rs in load_retrieved(ws.retrieved_path)}
    ref_texts = {chunk_id: chunk.text for chunk_id, chunk in corpus.chunks.items()}
    ref_texts.update({chart_id: chart_search_text(chart)
                      for chart_id, chart in corpus.charts.items()})
    providers = {"text_gen": _client(clients, "text_gen"),
                 "judge": clients.get("judge")}

    records = []
    for condition in conditions:
        for pair in pairs:
            key = (condition.label, pair.qa_id)
            if key not in responses:
                raise MissingStageInput(f"{ws.responses_path}#{condition.label}:{pair.qa_id}")
            row = responses[key]
            recall = None
            if condition.mode == "rag_k" and pair.qa_id in retrieved_by_qa:
                recall = recall_at_k(retrieved_by_qa[pair.qa_id],
                                     GroundTruthRefs.from_qapair(pair, corpus),
                                     ref_texts)
            records.append(score_response(pair, keypoints, condition.label,
                                          row["response"], providers,
                                          recall=recall, failed=row["failed"]))

    judge = clients.get("judge")
    report = summarize(records, run_id=config.run_id,
                       conditions=[c.label for c in conditions],
                       dataset_size=len(pairs),
                       judge=judge.provider_id if judge is not None else "lexical")
    write_report(records, report, out_dir)
    runner.write_stamp("evaluate", inputs, [out_dir], params)
    runner.log("evaluate", "ok", f"{len(records)} records")
    return {"stage": "evaluate", "skipped": False, "records": len(records),
            "report_dir": str(out_dir), "report": report}


def run_export(config: PipelineConfig, force: bool = False) -> dict:
    """Bundle the dataset, its manifest, and any review outcomes into one
    reproducible gzipped tar archive."""
    ws = workspace(config)
    runner = StageRunner(ws)
    require(ws.dataset_dir / "dataset.jsonl")
    require(ws.dataset_dir / "manifest.json")

    inputs = [ws.dataset_dir]
    review_log = ws.review_dir / "log.jsonl"
    if review_log.is_file():
        inputs.append(ws.review_dir)
    if not force and runner.up_to_date("export", inputs):
        runner.log("export", "skipped")
        return {"stage": "export", "skipped": True}

    build = load_dataset(ws.dataset_dir)
    outcomes: dict[str, dict] = {}
    if review_log.is_file():
        store = ReviewStore(ws.review_dir)
        outcomes = {qa_id: store.outcomes[qa_id] for qa_id in sorted(store.outcomes)}
    final_pairs = []
    for pair in sorted(build.pairs, key=lambda p: p.qa_id):
        row = pair.to_json()
        outcome = outcomes.get(pair.qa_id)
        if outcome:
            row["review_state"] = outcome["review_state"]
            row["rejection_reason"] = outcome["rejection_reason"]
        final_pairs.append(row)

    members = {
        "dataset.jsonl": (ws.dataset_dir / "dataset.jsonl").read_bytes(),
        "manifest.json": (ws.dataset_dir / "manifest.json").read_bytes(),
        "outcomes.jsonl": "".join(
            json.dumps(o, ensure_ascii=False, sort_keys=True) + "\n"
            for o in outcomes.values()).encode("utf-8"),
        "final_dataset.jsonl": "".join(
            json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n"
            for row in final_pairs).encode("utf-8"),
    }
    ws.export_path.parent.mkdir(parents=True, exist_ok=True)
    # Fixed tar metadata and a zeroed gzip mtime keep the archive
    # byte-identical across reruns.
    with open(ws.export_path, "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
            with tarfile.open(fileobj=gz, mode="w") as tar:
                for name in sorted(members):
                    data = members[name]
                    info = tarfile.TarInfo(name=f"charge-export/{name}")
                    info.size = len(data)
                    info.mtime = 0
                    info.uid = info.gid = 0
                    info.uname = info.gname = ""
                    tar.addfile(info, io.BytesIO(data))
    runner.write_stamp("export", inputs, [ws.export_path])
    runner.log("export", "ok", str(ws.export_path))
    return {"stage": "export", "skipped": False, "archive": str(ws.export_path),
            "pairs": len(final_pairs), "outcomes": len(outcomes)}
