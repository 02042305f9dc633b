"""Crossmodal verification of candidate keypoints.

A keypoint survives only if a probe question built from it is answered
correctly from its own modality and NOT answered correctly from the
other modality. Keypoints failing either leg are dropped with a reason.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .corpus import Chart, Corpus, TextChunk
from .errors import BackendUnavailable, ProviderError
from .keypoints import Keypoint
from .providers.base import ImageRef, ProviderClient, ProviderRequest
from .providers.judge import judge_equivalent

PROBE_TEMPLATE = "probe_question"
TEXT_ANSWER_TEMPLATE = "answer_from_text"
CHART_ANSWER_TEMPLATE = "answer_from_chart"


@dataclass
class ProbeQuestion:
    kp_id: str
    question: str

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError(f"empty probe question for keypoint {self.kp_id}")


@dataclass
class VerificationRecord:
    kp_id: str
    probe: ProbeQuestion
    answer_from_text: str
    answer_from_chart: str
    match_source: bool
    match_other: bool
    decision: str

    def __post_init__(self):
        expected = "Retain" if self.match_source and not self.match_other else "Drop"
        if self.decision != expected:
            raise ValueError(
                f"decision {self.decision!r} inconsistent with matches "
                f"({self.match_source}, {self.match_other})")


def decide(match_source: bool, match_other: bool) -> str:
    return "Retain" if match_source and not match_other else "Drop"


# -- request builders (shared with fixture scripting) ----------------------

def probe_request(keypoint: Keypoint) -> ProviderRequest:
    return ProviderRequest(kind="text_gen", prompt_template_id=PROBE_TEMPLATE,
                           slots={"statement": keypoint.statement})


def text_answer_request(probe: ProbeQuestion, chunk: TextChunk) -> ProviderRequest:
    return ProviderRequest(kind="text_gen", prompt_template_id=TEXT_ANSWER_TEMPLATE,
                           slots={"question": probe.question, "passage": chunk.text})


def chart_answer_request(probe: ProbeQuestion, chart: Chart) -> ProviderRequest:
    return ProviderRequest(kind="vision_gen", prompt_template_id=CHART_ANSWER_TEMPLATE,
                           slots={"question": probe.question,
                                  "chart": ImageRef(chart.image_ref),
                                  "values": chart.values.to_prompt_text()})


# -- operations -------------------------------------------------------------

def generate_probe(keypoint: Keypoint, provider: ProviderClient) -> ProbeQuestion:
    if keypoint.status != "candidate":
        raise ValueError(f"keypoint {keypoint.kp_id} is {keypoint.status}, not candidate")
    response = provider.call(probe_request(keypoint))
    if not response.text or not response.text.strip():
        raise BackendUnavailable(f"no probe question for keypoint {keypoint.kp_id}")
    return ProbeQuestion(kp_id=keypoint.kp_id, question=response.text.strip())


def answer_from_text(probe: ProbeQuestion, chunk: TextChunk,
                     provider: ProviderClient) -> str:
    response = provider.call(text_answer_request(probe, chunk))
    return (response.text or "").strip()


def answer_from_chart(probe: ProbeQuestion, chart: Chart,
                      provider: ProviderClient) -> str:
    response = provider.call(chart_answer_request(probe, chart))
    return (response.text or "").strip()


def verify(keypoint: Keypoint, chunk: Optional[TextChunk], chart: Optional[Chart],
           providers: Mapping[str, ProviderClient],
           strict: bool = False) -> VerificationRecord:
    """Run the full retain/drop check for one candidate keypoint.

    `providers` must map "text_gen", "vision_gen", and "judge" to clients.
    The keypoint's status is updated in place; nothing else is mutated.
    A provider failure drops the keypoint as unverifiable unless `strict`,
    in which case it propagates and the keypoint stays candidate.
    """
    if keypoint.status != "candidate":
        raise ValueError(f"keypoint {keypoint.kp_id} is {keypoint.status}, not candidate")
    if keypoint.claimed_modality == "text" and chunk is None:
        raise ValueError(f"text keypoint {keypoint.kp_id} verified without its chunk")
    if keypoint.claimed_modality == "chart" and chart is None:
        raise ValueError(f"chart keypoint {keypoint.kp_id} verified without its chart")

    judge = providers["judge"]
    try:
        probe = generate_probe(keypoint, providers["text_gen"])
        text_answer = (answer_from_text(probe, chunk, providers["text_gen"])
                       if chunk is not None else "")
        chart_answer = (answer_from_chart(probe, chart, providers["vision_gen"])
                        if chart is not None else "")
        if keypoint.claimed_modality == "text":
            source_answer, other_answer = text_answer, chart_answer
            other_present = chart is not None
        else:
            source_answer, other_answer = chart_answer, text_answer
            other_present = chunk is not None
        match_source = judge_equivalent(source_answer, keypoint.statement, judge)
        match_other = (other_present
                       and judge_equivalent(other_answer, keypoint.statement, judge))
    except ProviderError:
        if strict:
            raise
        keypoint.mark_dropped("judge_unavailable")
        return VerificationRecord(
            kp_id=keypoint.kp_id,
            probe=ProbeQuestion(kp_id=keypoint.kp_id, question="(unavailable)"),
            answer_from_text="", answer_from_chart="",
            match_source=False, match_other=False, decision="Drop")

    decision = decide(match_source, match_other)
    if decision == "Retain":
        keypoint.mark_retained()
    elif not match_source:
        keypoint.mark_dropped("not_retrievable_from_source")
    else:
        keypoint.mark_dropped("retrievable_crossmodally")
    return VerificationRecord(
        kp_id=keypoint.kp_id, probe=probe,
        answer_from_text=text_answer, answer_from_chart=chart_answer,
        match_source=match_source, match_other=match_other, decision=decision)


def verify_all(keypoints: Iterable[Keypoint], corpus: Corpus,
               providers: Mapping[str, ProviderClient],
               strict: bool = False) -> list[VerificationRecord]:
    """Verify every candidate against its paired opposite-modality source
    (nearest in document order). Pool "both" keypoints are skipped: they
    already failed exclusivity by construction.
    """
    records = []
    for kp in keypoints:
        if kp.status != "candidate" or kp.pool == "both":
            continue
        if kp.claimed_modality == "text":
            chunk = corpus.chunks[kp.source_id]
            chart = corpus.nearest_chart(kp.source_id)
        else:
            chart = corpus.charts[kp.source_id]
            chunk = corpus.nearest_chunk(kp.source_id)
        records.append(verify(kp, chunk, chart, providers, strict=strict))
    return records


# -- persistence -------------------------------------------------------------

def save_records(records: Iterable[VerificationRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted(records, key=lambda r: r.kp_id)
    with open(path, "w", encoding="utf-8") as fh:
        for record in rows:
            fh.write(json.dumps(asdict(record), ensure_ascii=False, sort_keys=True) + "\n")


def load_records(path: str | Path) -> list[VerificationRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                row["probe"] = ProbeQuestion(**row["probe"])
                out.append(VerificationRecord(**row))
    return out
