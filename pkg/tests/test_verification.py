import itertools

import pytest

from charge.corpus import ChartValue, ChartValues, Corpus, DocumentBundle
from charge.errors import BackendUnavailable
from charge.keypoints import Keypoint, keypoint_id
from charge.verification import (
    ProbeQuestion,
    VerificationRecord,
    answer_from_chart,
    answer_from_text,
    chart_answer_request,
    decide,
    generate_probe,
    load_records,
    probe_request,
    save_records,
    text_answer_request,
    verify,
    verify_all,
)

CHART_KP = "33% of U.S. adults say they use TikTok"
PROBE = "What share of U.S. adults say they use TikTok?"


class FakeOcr:
    def __init__(self, values):
        self.values = values

    def extract_values(self, image_ref):
        return self.values


@pytest.fixture
def doc_fixture(make_chart_png):
    corpus = Corpus()
    values = ChartValues(entries=[ChartValue("TikTok", None, 33.0, "%")])
    doc = corpus.ingest(DocumentBundle(
        title="t",
        text_blocks=["Most adults in the study reported daily social media use."],
        chart_images=[make_chart_png(values=(33.0,))]), ocr=FakeOcr(values))
    chunk = corpus.chunks[doc.chunk_ids[0]]
    chart = corpus.charts[doc.chart_ids[0]]
    return corpus, doc, chunk, chart


def make_kp(doc, source_id, modality, statement=CHART_KP):
    return Keypoint(kp_id=keypoint_id(doc.doc_id, source_id, statement),
                    statement=statement, claimed_modality=modality,
                    doc_id=doc.doc_id, source_id=source_id)


def script_verification(scripted, kp, chunk, chart, source_answer, other_answer):
    """Script probe + both answers. Answers equal to kp.statement match at
    judge tier 1; anything else fails lexically (no judge fixture needed)."""
    question = f"Is it true that {kp.statement}?"
    probe = ProbeQuestion(kp_id=kp.kp_id, question=question)
    scripted.script_text(probe_request(kp), question)
    if kp.claimed_modality == "text":
        text_answer, chart_answer = source_answer, other_answer
    else:
        text_answer, chart_answer = other_answer, source_answer
    if chunk is not None:
        scripted.script_text(text_answer_request(probe, chunk), text_answer)
    if chart is not None:
        scripted.script_text(chart_answer_request(probe, chart), chart_answer)


# -- pieces -------------------------------------------------------------------

def test_generate_probe(doc_fixture, scripted, make_client):
    corpus, doc, chunk, chart = doc_fixture
    kp = make_kp(doc, chart.chart_id, "chart")
    scripted.script_text(probe_request(kp), PROBE)
    probe = generate_probe(kp, make_client(scripted))
    assert probe.question == PROBE
    assert probe.kp_id == kp.kp_id


def test_generate_probe_requires_candidate(doc_fixture, scripted, make_client):
    corpus, doc, chunk, chart = doc_fixture
    kp = make_kp(doc, chart.chart_id, "chart")
    kp.mark_retained()
    with pytest.raises(ValueError):
        generate_probe(kp, make_client(scripted))


def test_generate_probe_without_fixture(doc_fixture, scripted, make_client):
    corpus, doc, chunk, chart = doc_fixture
    kp = make_kp(doc, chart.chart_id, "chart")
    with pytest.raises(BackendUnavailable):
        generate_probe(kp, make_client(scripted))


def test_answers_return_provider_text(doc_fixture, scripted, make_client):
    corpus, doc, chunk, chart = doc_fixture
    probe = ProbeQuestion(kp_id="k", question=PROBE)
    scripted.script_text(text_answer_request(probe, chunk), "cannot answer")
    scripted.script_text(chart_answer_request(probe, chart), CHART_KP)
    client = make_client(scripted)
    assert answer_from_text(probe, chunk, client) == "cannot answer"
    assert answer_from_chart(probe, chart, client) == CHART_KP


def test_chart_answer_request_carries_image_and_values(doc_fixture):
    corpus, doc, chunk, chart = doc_fixture
    request = chart_answer_request(ProbeQuestion(kp_id="k", question=PROBE), chart)
    assert request.kind == "vision_gen"
    assert request.slots["values"] == chart.values.to_prompt_text()
    assert request.slots["chart"].content_hash  # resolvable image handle


def test_probe_question_nonempty():
    with pytest.raises(ValueError):
        ProbeQuestion(kp_id="k", question="  ")


# -- decision table --------------------------------------------------------------

def test_decide_truth_table():
    assert decide(True, False) == "Retain"
    assert decide(True, True) == "Drop"
    assert decide(False, False) == "Drop"
    assert decide(False, True) == "Drop"


def test_record_enforces_decision_consistency():
    probe = ProbeQuestion(kp_id="k", question=PROBE)
    with pytest.raises(ValueError):
        VerificationRecord(kp_id="k", probe=probe, answer_from_text="a",
                           answer_from_chart="b", match_source=True,
                           match_other=False, decision="Drop")


@pytest.mark.parametrize("modality", ["text", "chart"])
@pytest.mark.parametrize("match_source,match_other", list(itertools.product([True, False], repeat=2)))
def test_verify_full_truth_table(doc_fixture, scripted, make_client,
                                 modality, match_source, match_other):
    corpus, doc, chunk, chart = doc_fixture
    source_id = chunk.chunk_id if modality == "text" else chart.chart_id
    kp = make_kp(doc, source_id, modality)
    script_verification(
        scripted, kp, chunk, chart,
        source_answer=kp.statement if match_source else "cannot answer",
        other_answer=kp.statement if match_other else "cannot answer")
    providers = {"text_gen": make_client(scripted), "vision_gen": make_client(scripted),
                 "judge": None}

    record = verify(kp, chunk, chart, providers)
    expected = "Retain" if match_source and not match_other else "Drop"
    assert record.decision == expected
    assert record.match_source == match_source
    assert record.match_other == match_other
    assert kp.status == ("retained" if expected == "Retain" else "dropped")
    if expected == "Drop":
        assert kp.drop_reason == ("not_retrievable_from_source" if not match_source
                                  else "retrievable_crossmodally")
    # Both answers recorded whatever the outcome.
    assert record.answer_from_text
    assert record.answer_from_chart


def test_verify_symmetry_between_modalities(doc_fixture, scripted, make_client):
    """Mirrored fixtures: a text keypoint and a chart keypoint whose
    source/other answers are swapped end with identical decisions."""
    corpus, doc, chunk, chart = doc_fixture
    text_kp = make_kp(doc, chunk.chunk_id, "text", statement="Fact stated in text.")
    chart_kp = make_kp(doc, chart.chart_id, "chart", statement="Fact stated in chart.")
    script_verification(scripted, text_kp, chunk, chart,
                        source_answer=text_kp.statement, other_answer="cannot answer")
    script_verification(scripted, chart_kp, chunk, chart,
                        source_answer=chart_kp.statement, other_answer="cannot answer")
    providers = {"text_gen": make_client(scripted), "vision_gen": make_client(scripted),
                 "judge": None}
    text_record = verify(text_kp, chunk, chart, providers)
    chart_record = verify(chart_kp, chunk, chart, providers)
    assert text_record.decision == chart_record.decision == "Retain"
    assert text_record.match_source and chart_record.match_source
    # The source answer lives in the claimed modality's column.
    assert text_record.answer_from_text == text_kp.statement
    assert chart_record.answer_from_chart == chart_kp.statement


def test_verify_missing_other_modality(doc_fixture, scripted, make_client):
    corpus, doc, chunk, chart = doc_fixture
    kp = make_kp(doc, chunk.chunk_id, "text", statement="A text-only fact.")
    probe = ProbeQuestion(kp_id=kp.kp_id, question=PROBE)
    scripted.script_text(probe_request(kp), PROBE)
    scripted.script_text(text_answer_request(probe, chunk), kp.statement)
    providers = {"text_gen": make_client(scripted), "vision_gen": make_client(scripted),
                 "judge": None}
    record = verify(kp, chunk, None, providers)
    assert record.decision == "Retain"
    assert not record.match_other
    assert record.answer_from_chart == ""


def test_verify_requires_source_material(doc_fixture, make_client, scripted):
    corpus, doc, chunk, chart = doc_fixture
    kp = make_kp(doc, chunk.chunk_id, "text")
    providers = {"text_gen": make_client(scripted), "vision_gen": make_client(scripted),
                 "judge": None}
    with pytest.raises(ValueError):
        verify(kp, None, chart, providers)


def test_verify_provider_failure_drops_by_default(doc_fixture, scripted, make_client):
    corpus, doc, chunk, chart = doc_fixture
    kp = make_kp(doc, chart.chart_id, "chart")
    providers = {"text_gen": make_client(scripted), "vision_gen": make_client(scripted),
                 "judge": None}
    record = verify(kp, chunk, chart, providers)
    assert record.decision == "Drop"
    assert kp.status == "dropped"
    assert kp.drop_reason == "judge_unavailable"


def test_verify_strict_propagates(doc_fixture, scripted, make_client):
    corpus, doc, chunk, chart = doc_fixture
    kp = make_kp(doc, chart.chart_id, "chart")
    providers = {"text_gen": make_client(scripted), "vision_gen": make_client(scripted),
                 "judge": None}
    with pytest.raises(BackendUnavailable):
        verify(kp, chunk, chart, providers, strict=True)
    assert kp.status == "candidate"


def test_verify_does_not_touch_other_keypoints(doc_fixture, scripted, make_client):
    corpus, doc, chunk, chart = doc_fixture
    kp = make_kp(doc, chart.chart_id, "chart")
    bystander = make_kp(doc, chart.chart_id, "chart", statement="Another chart fact.")
    script_verification(scripted, kp, chunk, chart, kp.statement, "cannot answer")
    providers = {"text_gen": make_client(scripted), "vision_gen": make_client(scripted),
                 "judge": None}
    verify(kp, chunk, chart, providers)
    assert bystander.status == "candidate"


def test_verify_all_engineered_retain_set(doc_fixture, scripted, make_client):
    corpus, doc, chunk, chart = doc_fixture
    keep = make_kp(doc, chart.chart_id, "chart", statement="Chart fact one survives.")
    leak = make_kp(doc, chart.chart_id, "chart", statement="Chart fact two leaks.")
    weak = make_kp(doc, chunk.chunk_id, "text", statement="Text fact three is unsupported.")
    dual = make_kp(doc, chunk.chunk_id, "text", statement="Routed to the both pool.")
    dual.pool = "both"
    script_verification(scripted, keep, chunk, chart, keep.statement, "cannot answer")
    script_verification(scripted, leak, chunk, chart, leak.statement, leak.statement)
    script_verification(scripted, weak, chunk, chart, "cannot answer", "cannot answer")
    providers = {"text_gen": make_client(scripted), "vision_gen": make_client(scripted),
                 "judge": None}

    records = verify_all([keep, leak, weak, dual], corpus, providers)
    assert len(records) == 3  # the both-pool keypoint is skipped
    assert keep.status == "retained"
    assert leak.status == "dropped" and leak.drop_reason == "retrievable_crossmodally"
    assert weak.status == "dropped" and weak.drop_reason == "not_retrievable_from_source"
    assert dual.status == "candidate"


# -- persistence -------------------------------------------------------------------

def test_records_roundtrip(tmp_path):
    probe = ProbeQuestion(kp_id="k1", question=PROBE)
    records = [
        VerificationRecord(kp_id="k1", probe=probe, answer_from_text=CHART_KP,
                           answer_from_chart="cannot answer", match_source=True,
                           match_other=False, decision="Retain"),
        VerificationRecord(kp_id="k0", probe=ProbeQuestion(kp_id="k0", question="Q?"),
                           answer_from_text="x", answer_from_chart="y",
                           match_source=False, match_other=True, decision="Drop"),
    ]
    path = tmp_path / "verification.jsonl"
    save_records(records, path)
    loaded = load_records(path)
    assert [r.kp_id for r in loaded] == ["k0", "k1"]  # sorted on save
    assert loaded[1].probe.question == PROBE
    assert loaded[1].decision == "Retain"
