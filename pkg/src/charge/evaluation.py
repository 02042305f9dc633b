"""Answer generation under no-context / retrieval@k / ground-truth-context
conditions, and keypoint-based scoring of the responses.

Correctness is binary: the response's extracted keypoints must match the
ground-truth set completely and with equal cardinality. Coverage is the
fraction of ground-truth keypoints recovered. Matching is greedy under
the two-tier equivalence judge.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .corpus import Corpus
from .errors import ProviderError, StructuredParseError
from .keypoints import Keypoint
from .providers.base import (ImageRef, ProviderClient, ProviderRequest,
                             call_structured)
from .providers.judge import _parse_verdict, judge_equivalent
from .qagen import QAPair
from .retrieval import (ARCHITECTURES, GroundTruthRefs, RetrievedSet,
                        recall_at_k, search)
from .text import normalize

MODES = ("no_rag", "rag_k", "gt_retrieval")
PREFERENCES = ("text_phrasing", "chart_phrasing", "both_acknowledged", "neither")

NO_CONTEXT_TEMPLATE = "respond_no_context"
WITH_CONTEXT_TEMPLATE = "respond_with_context"
EXTRACT_TEMPLATE = "response_keypoints"
ECHO_TEMPLATE = "phrasing_echo"


@dataclass(frozen=True)
class EvalCondition:
    mode: str
    k: Optional[int] = None
    architecture: Optional[str] = None
    ratio: str = "three_to_two"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"bad mode: {self.mode!r}")
        if self.mode == "rag_k":
            if self.k is None or self.k < 1:
                raise ValueError("rag_k needs a positive k")
            if self.architecture not in ARCHITECTURES:
                raise ValueError(f"rag_k needs an architecture, got {self.architecture!r}")
        else:
            # context comes from nowhere or from ground truth; k is meaningless
            object.__setattr__(self, "k", None)
            object.__setattr__(self, "architecture", None)

    @property
    def label(self) -> str:
        if self.mode == "rag_k":
            return f"rag_k{self.k}_{self.architecture}"
        return self.mode


@dataclass(frozen=True)
class BiasProbe:
    """One question phrased two ways: as its text source words it and as
    its chart source words it (e.g. "one third" versus "35.2%")."""

    qa_id: str
    text_phrasing: str
    chart_phrasing: str

    def __post_init__(self):
        if not self.text_phrasing.strip() or not self.chart_phrasing.strip():
            raise ValueError("probe phrasings must be non-empty")
        if normalize(self.text_phrasing) == normalize(self.chart_phrasing):
            raise ValueError("probe phrasings must differ")


@dataclass
class EvalRecord:
    qa_id: str
    condition: str
    category: str
    response: str
    extracted: list[str]
    matched_gt: list[str]
    gt_keypoints: list[str]
    correctness: int
    coverage: float
    recall: Optional[float] = None
    failed: bool = False

    def __post_init__(self):
        if not self.gt_keypoints:
            raise ValueError("a record needs at least one ground-truth keypoint")
        if len(self.matched_gt) != len(set(self.matched_gt)):
            raise ValueError("duplicate matched keypoints")
        if not set(self.matched_gt) <= set(self.gt_keypoints):
            raise ValueError("matched keypoints must come from the ground truth")
        if self.correctness not in (0, 1):
            raise ValueError(f"correctness must be 0 or 1, got {self.correctness}")
        want = len(self.matched_gt) / len(self.gt_keypoints)
        if abs(self.coverage - want) > 1e-9:
            raise ValueError(f"coverage {self.coverage} != |matched|/|gt| = {want}")
        if self.correctness == 1 and self.coverage != 1.0:
            raise ValueError("a fully correct record must have full coverage")
        if self.recall is not None and not 0.0 <= self.recall <= 1.0:
            raise ValueError(f"recall out of range: {self.recall}")

    def to_json(self) -> dict:
        return {"qa_id": self.qa_id, "condition": self.condition,
                "category": self.category, "response": self.response,
                "extracted": list(self.extracted), "matched_gt": list(self.matched_gt),
                "gt_keypoints": list(self.gt_keypoints),
                "correctness": self.correctness, "coverage": self.coverage,
                "recall": self.recall, "failed": self.failed}

    @classmethod
    def from_json(cls, row: dict) -> "EvalRecord":
        return cls(qa_id=row["qa_id"], condition=row["condition"],
                   category=row["category"], response=row["response"],
                   extracted=list(row["extracted"]), matched_gt=list(row["matched_gt"]),
                   gt_keypoints=list(row["gt_keypoints"]),
                   correctness=row["correctness"], coverage=row["coverage"],
                   recall=row.get("recall"), failed=row.get("failed", False))


# -- context assembly and answering ------------------------------------------

SourceRefs = Sequence[tuple[str, str]]  # (ref_id, modality)


def gt_source_refs(pair: QAPair) -> list[tuple[str, str]]:
    return [(source_id, modality) for _, source_id, modality in pair.gt_sources]


def assemble_context(corpus: Corpus, refs: SourceRefs) -> tuple[str, dict[str, ImageRef]]:
    """Context block for the responder: chunk texts inline, chart values
    inline, chart images as extra slots riding on the request."""
    parts: list[str] = []
    images: dict[str, ImageRef] = {}
    for ref_id, modality in refs:
        if modality == "text":
            parts.append(f"Passage ({ref_id}):\n{corpus.chunks[ref_id].text}")
        else:
            chart = corpus.charts[ref_id]
            images[f"chart_{len(images) + 1}"] = ImageRef(chart.image_ref)
            parts.append(f"Chart ({ref_id}) values:\n{chart.values.to_prompt_text()}")
    return "\n\n".join(parts), images


def no_context_request(question: str) -> ProviderRequest:
    return ProviderRequest(kind="text_gen", prompt_template_id=NO_CONTEXT_TEMPLATE,
                           slots={"question": question})


def with_context_request(question: str, context: str,
                         images: Mapping[str, ImageRef] = ()) -> ProviderRequest:
    slots: dict = {"question": question, "context": context}
    slots.update(images)
    return ProviderRequest(kind="vision_gen" if images else "text_gen",
                           prompt_template_id=WITH_CONTEXT_TEMPLATE, slots=slots)


def answer(question: str, condition: EvalCondition, corpus: Corpus,
           sources: Union[None, RetrievedSet, SourceRefs],
           providers: Mapping[str, ProviderClient]) -> str:
    """Responder output, verbatim. `sources` is a RetrievedSet for rag_k,
    the pair's source refs for gt_retrieval, ignored for no_rag."""
    if condition.mode == "no_rag":
        request = no_context_request(question)
    else:
        if sources is None:
            raise ValueError(f"{condition.mode} needs sources to build context")
        if isinstance(sources, RetrievedSet):
            refs = [(r.ref_id, r.modality) for r in sources.refs]
        else:
            refs = list(sources)
        context, images = assemble_context(corpus, refs)
        request = with_context_request(question, context, images)
    client = providers["vision_gen" if request.kind == "vision_gen" else "text_gen"]
    text = client.call(request).text
    return text if text is not None else ""


# -- response keypoints and matching ---------------------------------------------

def extract_request(question: str, response: str) -> ProviderRequest:
    return ProviderRequest(kind="text_gen", prompt_template_id=EXTRACT_TEMPLATE,
                           slots={"question": question, "response": response})


def extract_response_keypoints(response: str, question: str,
                               provider: ProviderClient) -> list[str]:
    if not response.strip():
        return []
    parsed = call_structured(provider, extract_request(question, response))
    if not isinstance(parsed, list):
        raise StructuredParseError(
            f"expected a JSON array of keypoints, got {type(parsed).__name__}")
    out: list[str] = []
    seen: set[str] = set()
    for item in parsed:
        if not isinstance(item, str) or not item.strip():
            continue
        key = normalize(item)
        if key not in seen:
            seen.add(key)
            out.append(item.strip())
    return out


def match_keypoints(extracted: Sequence[str], gt: Sequence[str],
                    judge: Optional[ProviderClient] = None) -> tuple[list[int], bool]:
    """Greedy one-to-one matching: extracted items in emission order claim
    the first equivalent unmatched ground-truth item in dataset order.
    Returns matched gt indices (ascending) and the perfect flag, which
    requires the matching to saturate both sides.
    """
    used = [False] * len(gt)
    for item in extracted:
        for i, target in enumerate(gt):
            if used[i]:
                continue
            if judge_equivalent(item, target, judge):
                used[i] = True
                break
    matched = [i for i, hit in enumerate(used) if hit]
    perfect = len(matched) == len(gt) == len(extracted)
    return matched, perfect


def correctness(extracted_count: int, matched_count: int, gt_count: int) -> int:
    """1 iff the matching saturates both sides with equal cardinality."""
    return int(matched_count == gt_count == extracted_count)


def coverage(matched_count: int, gt_count: int) -> float:
    if gt_count < 1:
        raise ValueError("coverage needs a non-empty ground-truth set")
    return matched_count / gt_count


# -- per-item evaluation ------------------------------------------------------------

def score_response(pair: QAPair, keypoints: Mapping[str, Keypoint],
                   condition_label: str, response: str,
                   providers: Mapping[str, ProviderClient],
                   recall: Optional[float] = None,
                   failed: bool = False) -> EvalRecord:
    """Score one stored response against the pair's ground truth.

    `failed` marks a response that never arrived: it scores (0, 0) without
    an extraction call. Extraction or judging failures degrade the record
    the same way.
    """
    gt_ids = list(pair.gt_keypoints)
    gt_statements = [keypoints[kp_id].statement for kp_id in gt_ids]
    extracted: list[str] = []
    matched_idx: list[int] = []
    if failed:
        response = ""
    else:
        try:
            extracted = extract_response_keypoints(response, pair.question,
                                                   providers["text_gen"])
            matched_idx, _ = match_keypoints(extracted, gt_statements,
                                             providers.get("judge"))
        except ProviderError:
            response, extracted, matched_idx = "", [], []
            failed = True

    matched_ids = [gt_ids[i] for i in matched_idx]
    corr = 0 if failed else correctness(len(extracted), len(matched_ids), len(gt_ids))
    return EvalRecord(qa_id=pair.qa_id, condition=condition_label,
                      category=pair.category.label, response=response,
                      extracted=extracted, matched_gt=matched_ids,
                      gt_keypoints=gt_ids, correctness=corr,
                      coverage=coverage(len(matched_ids), len(gt_ids)),
                      recall=recall, failed=failed)


def evaluate_pair(pair: QAPair, keypoints: Mapping[str, Keypoint], corpus: Corpus,
                  condition: EvalCondition, providers: Mapping[str, ProviderClient],
                  retrieved: Optional[RetrievedSet] = None,
                  recall: Optional[float] = None) -> EvalRecord:
    """Answer one question under one condition and score the response.
    Provider failures yield a (0, 0) record flagged as failed."""
    sources: Union[None, RetrievedSet, SourceRefs]
    if condition.mode == "rag_k":
        sources = retrieved
    elif condition.mode == "gt_retrieval":
        sources = gt_source_refs(pair)
    else:
        sources = None

    try:
        response = answer(pair.question, condition, corpus, sources, providers)
    except ProviderError:
        return score_response(pair, keypoints, condition.label, "", providers,
                              recall=recall, failed=True)
    return score_response(pair, keypoints, condition.label, response, providers,
                          recall=recall)


# -- suite runner and report ----------------------------------------------------

def run_suite(pairs: Sequence[QAPair], keypoints: Mapping[str, Keypoint],
              corpus: Corpus, conditions: Sequence[EvalCondition],
              providers: Mapping[str, ProviderClient], out_dir: str | Path,
              run_id: str = "run", indexes: Optional[Mapping[str, object]] = None,
              ref_texts: Optional[Mapping[str, str]] = None,
              figures: bool = True) -> dict:
    """Evaluate every pair under every condition; write records.jsonl,
    report.json, report.txt, report.csv and summary figures under
    out_dir/run_id/. Returns the report."""
    if not pairs:
        raise ValueError("evaluation needs a non-empty dataset")
    records: list[EvalRecord] = []
    for condition in conditions:
        for pair in pairs:
            retrieved = None
            recall = None
            if condition.mode == "rag_k":
                if not indexes or condition.architecture not in indexes:
                    raise ValueError(f"no index supplied for {condition.architecture}")
                retrieved = search(indexes[condition.architecture], pair.question,
                                   condition.k, query_id=pair.qa_id,
                                   ratio=condition.ratio)
                recall = recall_at_k(retrieved, GroundTruthRefs.from_qapair(pair, corpus),
                                     ref_texts)
            records.append(evaluate_pair(pair, keypoints, corpus, condition,
                                         providers, retrieved=retrieved, recall=recall))

    judge = providers.get("judge")
    report = summarize(records, run_id=run_id,
                       conditions=[c.label for c in conditions],
                       dataset_size=len(pairs),
                       judge=judge.provider_id if judge is not None else "lexical")
    write_report(records, report, Path(out_dir) / run_id, figures=figures)
    return report


def summarize(records: Sequence[EvalRecord], run_id: str = "run",
              conditions: Optional[Sequence[str]] = None,
              dataset_size: Optional[int] = None, judge: str = "lexical") -> dict:
    """Aggregate per-item records into per-(condition, category) means,
    as percentages with two decimals, plus an overall row per condition."""
    if conditions is None:
        seen: list[str] = []
        for record in records:
            if record.condition not in seen:
                seen.append(record.condition)
        conditions = seen
    rows = []
    failures: dict[str, int] = {}
    for condition in conditions:
        subset = [r for r in records if r.condition == condition]
        failures[condition] = sum(r.failed for r in subset)
        groups = sorted({r.category for r in subset})
        for category in groups + ["overall"]:
            members = (subset if category == "overall"
                       else [r for r in subset if r.category == category])
            if not members:
                continue
            recalls = [r.recall for r in members if r.recall is not None]
            rows.append({
                "condition": condition,
                "category": category,
                "n": len(members),
                "failures": sum(r.failed for r in members),
                "correctness": round(100.0 * sum(r.correctness for r in members)
                                     / len(members), 2),
                "coverage": round(100.0 * sum(r.coverage for r in members)
                                  / len(members), 2),
                "recall": (round(100.0 * sum(recalls) / len(recalls), 2)
                           if recalls else None),
            })
    return {"run_id": run_id, "dataset_size": dataset_size,
            "judge": judge, "conditions": list(conditions),
            "failures": failures, "rows": rows}


def write_report(records: Sequence[EvalRecord], report: dict,
                 directory: str | Path, figures: bool = True) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ordered = sorted(records, key=lambda r: (r.condition, r.category, r.qa_id))
    with open(directory / "records.jsonl", "w", encoding="utf-8") as fh:
        for record in ordered:
            fh.write(json.dumps(record.to_json(), ensure_ascii=False,
                                sort_keys=True) + "\n")
    (directory / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8")
    (directory / "report.txt").write_text(_format_table(report), encoding="utf-8")
    _write_csv(report, directory / "report.csv")
    if figures:
        render_figures(report, directory / "figures")


def _format_table(report: dict) -> str:
    headers = ["condition", "category", "n", "fail", "corr", "cov", "recall"]
    body = []
    for row in report["rows"]:
        body.append([row["condition"], row["category"], str(row["n"]),
                     str(row["failures"]), f"{row['correctness']:.2f}",
                     f"{row['coverage']:.2f}",
                     "-" if row["recall"] is None else f"{row['recall']:.2f}"])
    widths = [max(len(headers[i]), *(len(r[i]) for r in body)) if body
              else len(headers[i]) for i in range(len(headers))]
    lines = [f"evaluation run: {report['run_id']}  (judge: {report['judge']})",
             "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
             "  ".join("-" * w for w in widths)]
    for row in body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"


def _write_csv(report: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "category", "n", "failures",
                         "correctness", "coverage", "recall"])
        for row in report["rows"]:
            writer.writerow([row["condition"], row["category"], row["n"],
                             row["failures"], f"{row['correctness']:.2f}",
                             f"{row['coverage']:.2f}",
                             "" if row["recall"] is None else f"{row['recall']:.2f}"])


def render_figures(report: dict, directory: str | Path) -> list[Path]:
    """Bar charts summarizing the report: coverage per category for each
    condition, and overall correctness/coverage per condition."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    conditions = report["conditions"]
    categories = sorted({row["category"] for row in report["rows"]
                         if row["category"] != "overall"})
    cell = {(row["condition"], row["category"]): row for row in report["rows"]}
    paths = []

    fig, ax = plt.subplots(figsize=(max(6.0, 1.6 * len(categories)), 4.0))
    width = 0.8 / max(1, len(conditions))
    for ci, condition in enumerate(conditions):
        values = [cell.get((condition, cat), {}).get("coverage", 0.0) or 0.0
                  for cat in categories]
        positions = [i + ci * width for i in range(len(categories))]
        ax.bar(positions, values, width=width, label=condition)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(categories))])
    ax.set_xticklabels(categories, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("coverage (%)")
    ax.set_ylim(0, 105)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = directory / "coverage_by_category.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(max(5.0, 1.4 * len(conditions)), 4.0))
    overall = [cell.get((c, "overall"), {}) for c in conditions]
    xs = range(len(conditions))
    ax.bar([x - 0.2 for x in xs], [row.get("correctness", 0.0) for row in overall],
           width=0.4, label="correctness")
    ax.bar([x + 0.2 for x in xs], [row.get("coverage", 0.0) for row in overall],
           width=0.4, label="coverage")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(conditions, rotation=15, ha="right", fontsize=8)
    ax.set_ylabel("score (%)")
    ax.set_ylim(0, 105)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = directory / "scores_by_condition.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def load_records(path: str | Path) -> list[EvalRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(EvalRecord.from_json(json.loads(line)))
    return records


# -- modality preference probing ---------------------------------------------------

def echo_request(phrasing: str, response: str) -> ProviderRequest:
    return ProviderRequest(kind="judge", prompt_template_id=ECHO_TEMPLATE,
                           slots={"phrasing": phrasing, "response": response})


def modality_preference(response: str, probe: BiasProbe,
                        judge: Optional[ProviderClient] = None) -> str:
    """Which phrasing of the fact the response echoes. Verbatim containment
    decides first; the judge is consulted per phrasing otherwise."""
    if not response.strip():
        return "neither"
    flat = normalize(response)

    def echoes(phrasing: str) -> bool:
        if normalize(phrasing) in flat:
            return True
        if judge is None:
            return False
        return _parse_verdict(judge.call(echo_request(phrasing, response)))

    text_hit = echoes(probe.text_phrasing)
    chart_hit = echoes(probe.chart_phrasing)
    if text_hit and chart_hit:
        return "both_acknowledged"
    if text_hit:
        return "text_phrasing"
    if chart_hit:
        return "chart_phrasing"
    return "neither"
