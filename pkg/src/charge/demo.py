"""Self-contained offline pipeline run.

Builds a three-document corpus (text plus one bar chart each), scripts
every provider interaction into a fixture, then drives the real stages:
ingest, extract, verify, generate, index, retrieve, answer, evaluate,
export. No network, no model weights; embeddings come from the hash
embedder and everything else from the fixture, so two runs produce the
same bytes.

The fixture grows between stages: each step's requests are built with the
exact request builders the pipeline uses, against the artifacts the
previous stage just wrote.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

from .config import load_config
from .corpus import load_corpus
from .errors import ChargeError
from .evaluation import (assemble_context, extract_request, gt_source_refs,
                         no_context_request, with_context_request)
from .keypoints import (Keypoint, chart_extract_request, classify_request,
                        load_keypoints, text_extract_request)
from .png import bar_chart_pixels, write_png
from .providers.base import ImageRef
from .providers.ocr import ocr_request
from .providers.scripted import ScriptedProvider
from .qagen import load_dataset, multihop_request, single_point_request
from .retrieval import load_retrieved
from .stages import (build_clients, conditions_for, run_answer, run_evaluate,
                     run_export, run_extract, run_generate, run_index,
                     run_ingest, run_retrieve, run_verify, workspace)
from .verification import (ProbeQuestion, chart_answer_request, probe_request,
                           text_answer_request)

DEMO_SEED = 71
MISS_RESPONSE = "The retrieved material does not cover this question."
NOT_IN_TEXT = "The passage does not give that figure."
NOT_IN_CHART = "The chart does not show that value."


@dataclass
class DemoDoc:
    title: str
    blocks: list[str]
    chart_caption: str
    chart_labels: list[str]
    chart_values: list[float]
    chart_unit: str
    chart_color: tuple[int, int, int]
    text_statements: list[str]
    chart_statement: str
    questions: dict[str, str]


WORLD = [
    DemoDoc(
        title="Harbor City Energy Report",
        blocks=[
            "Harbor City approved 4200 residential solar permits during 2024,"
            " the fastest pace the planning office has recorded.",
            "The city council voted to retire the Eastport coal plant by 2027"
            " and reinvest its budget in battery storage.",
        ],
        chart_caption="Installed solar capacity by district",
        chart_labels=["North", "South", "East"],
        chart_values=[12.0, 8.0, 5.0],
        chart_unit="MW",
        chart_color=(40, 90, 200),
        text_statements=[
            "Harbor City approved 4200 residential solar permits during 2024.",
            "Harbor City will retire the Eastport coal plant by 2027.",
        ],
        chart_statement="The North district leads Harbor City with 12 megawatts"
                        " of installed solar capacity.",
        questions={
            "Harbor City approved 4200 residential solar permits during 2024.":
                "How many residential solar permits did Harbor City approve during 2024?",
            "Harbor City will retire the Eastport coal plant by 2027.":
                "By what year will Harbor City retire the Eastport coal plant?",
            "The North district leads Harbor City with 12 megawatts"
            " of installed solar capacity.":
                "Which Harbor City district has the most installed solar capacity?",
        },
    ),
    DemoDoc(
        title="Lakeside County Transit Survey",
        blocks=[
            "Lakeside County buses and trains carried nine million riders in"
            " 2024, a twelve percent increase over the prior year.",
            "Crews finished 45 kilometers of protected bike lanes connecting"
            " four suburbs to the downtown transit hub.",
        ],
        chart_caption="Average weekday boardings by rail line",
        chart_labels=["Red", "Blue", "Green"],
        chart_values=[480.0, 350.0, 210.0],
        chart_unit="thousand",
        chart_color=(200, 60, 60),
        text_statements=[
            "Lakeside County transit ridership grew twelve percent in 2024.",
            "Lakeside County finished 45 kilometers of protected bike lanes.",
        ],
        chart_statement="The Red line averages 480 thousand weekday boardings"
                        " in Lakeside County.",
        questions={
            "Lakeside County transit ridership grew twelve percent in 2024.":
                "By how much did Lakeside County transit ridership grow in 2024?",
            "Lakeside County finished 45 kilometers of protected bike lanes.":
                "How many kilometers of protected bike lanes did Lakeside County finish?",
            "The Red line averages 480 thousand weekday boardings"
            " in Lakeside County.":
                "How many weekday boardings does the Red line average in Lakeside County?",
        },
    ),
    DemoDoc(
        title="Riverbend Water Authority Bulletin",
        blocks=[
            "Riverbend households cut average water use by fourteen percent"
            " since 2020 through fixture rebates and tiered pricing.",
            "The authority now serves 310 thousand customers across three"
            " counties after the Milltown system merger.",
        ],
        chart_caption="Reservoir storage as percent of capacity",
        chart_labels=["January", "February", "March"],
        chart_values=[72.0, 78.0, 85.0],
        chart_unit="percent",
        chart_color=(50, 150, 90),
        text_statements=[
            "Riverbend households cut average water use by fourteen percent since 2020.",
            "Riverbend Water Authority serves 310 thousand customers across three counties.",
        ],
        chart_statement="Riverbend reservoir storage reached 85 percent of"
                        " capacity in March.",
        questions={
            "Riverbend households cut average water use by fourteen percent since 2020.":
                "By how much did Riverbend households cut average water use since 2020?",
            "Riverbend Water Authority serves 310 thousand customers across three counties.":
                "How many customers does the Riverbend Water Authority serve?",
            "Riverbend reservoir storage reached 85 percent of capacity in March.":
                "What share of capacity did Riverbend reservoir storage reach in March?",
        },
    ),
]

CONFIG_TOML = """\
seed = {seed}

[paths]
root = "work"
input = "input"
cache = "work/cache/responses.jsonl"

[chunking]
target_words = 25

[retrieval]
k = 5
ratio = "three_to_two"
architecture = "separate_fused"

[qagen]
retrieval_k = 10
dedup_threshold = 0.95
retry_budget = 5

[qagen.quotas]
"single_point:text_only" = 2
"single_point:chart_only" = 1
"intra_document:text_only" = 1
"intra_document:text_chart" = 1
"inter_document:text_only" = 1
"inter_document:chart_only" = 1
"inter_document:text_chart" = 1

[evaluation]
modes = ["none", "gt", "rag"]
run_id = "demo"

[review]
port = 8321

[review.tokens]
"demo-ann" = "ann"
"demo-bob" = "bob"
"demo-cay" = "cay"

[providers.text_gen]
backend = "scripted"
fixture = "fixtures/scripted.jsonl"

[providers.vision_gen]
backend = "scripted"
fixture = "fixtures/scripted.jsonl"

[providers.ocr]
backend = "scripted"
fixture = "fixtures/scripted.jsonl"

[providers.responder]
backend = "scripted"
fixture = "fixtures/scripted.jsonl"

[providers.embed_text]
backend = "hash"
dimension = 512

[providers.embed_image]
backend = "hash"
dimension = 512
"""


def _clause(statement: str) -> str:
    return statement.rstrip(".")


def _multihop_question(first: str, second: str) -> str:
    return (f"What do these two findings show together: {_clause(first)},"
            f" and {_clause(second)}?")


class FixtureBuilder:
    """Accumulates scripted responses, refusing contradictory rescripts of
    the same request."""

    def __init__(self, path: Path):
        self.path = path
        self.provider = ScriptedProvider()

    def text(self, request, value: str) -> None:
        self._put(request, {"text": value})

    def structured(self, request, value) -> None:
        self._put(request, {"structured": value})

    def _put(self, request, payload: dict) -> None:
        fp = request.fingerprint()
        existing = self.provider.fixture.get(fp)
        if existing is not None:
            if existing.to_json() | payload != existing.to_json():
                raise ChargeError(
                    f"fixture collision: request {fp[:12]} scripted twice "
                    f"with different responses")
            return
        if "text" in payload:
            self.provider.script_text(request, payload["text"])
        else:
            self.provider.script_structured(request, payload["structured"])

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.provider.save_fixture(self.path)


def _write_inputs(demo_dir: Path) -> None:
    input_dir = demo_dir / "input"
    input_dir.mkdir(parents=True, exist_ok=True)
    for i, doc in enumerate(WORLD):
        png_name = f"doc{i}_chart.png"
        write_png(input_dir / png_name,
                  bar_chart_pixels(doc.chart_values, color=doc.chart_color))
        bundle = {
            "title": doc.title,
            "text_blocks": doc.blocks,
            "chart_images": [png_name],
            "chart_captions": [doc.chart_caption],
            "source_uri": f"demo://{png_name.removesuffix('_chart.png')}",
            "domain_tag": "civic-reports",
        }
        (input_dir / f"doc{i}.json").write_text(
            json.dumps(bundle, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _doc_by_title(corpus) -> dict[str, str]:
    return {doc.title: doc_id for doc_id, doc in corpus.documents.items()}


def run_demo(demo_dir: str | Path) -> dict:
    """Run the whole pipeline offline under `demo_dir`. Returns a summary
    with the dataset counts and the evaluation report location."""
    started = time.monotonic()
    demo_dir = Path(demo_dir).resolve()
    demo_dir.mkdir(parents=True, exist_ok=True)
    _write_inputs(demo_dir)
    (demo_dir / "charge.toml").write_text(CONFIG_TOML.format(seed=DEMO_SEED),
                                          encoding="utf-8")

    fixture = FixtureBuilder(demo_dir / "fixtures" / "scripted.jsonl")

    # ingest: chart OCR
    for i, doc in enumerate(WORLD):
        image = ImageRef(str(demo_dir / "input" / f"doc{i}_chart.png"))
        entries = [{"label": label, "series": None, "value": value,
                    "unit": doc.chart_unit}
                   for label, value in zip(doc.chart_labels, doc.chart_values)]
        raw = "; ".join(f"{label} {value:g} {doc.chart_unit}"
                        for label, value in zip(doc.chart_labels, doc.chart_values))
        fixture.structured(ocr_request(image),
                           {"entries": entries, "raw_text": raw})
    fixture.save()

    config = load_config(demo_dir / "charge.toml")
    ws = workspace(config)
    run_ingest(config, build_clients(config))

    # extract: one statement per chunk, one per chart, then pool routing
    corpus = load_corpus(ws.corpus_dir)
    by_title = _doc_by_title(corpus)
    for doc in WORLD:
        record = corpus.documents[by_title[doc.title]]
        if len(record.chunk_ids) != len(doc.blocks):
            raise ChargeError(f"demo corpus drifted: {doc.title} chunked into "
                              f"{len(record.chunk_ids)} pieces")
        for chunk_id, statement in zip(record.chunk_ids, doc.text_statements):
            fixture.structured(text_extract_request(corpus.chunks[chunk_id]),
                               [statement])
        chart = corpus.charts[record.chart_ids[0]]
        fixture.structured(chart_extract_request(chart), [doc.chart_statement])

        for ordinal, (chunk_id, statement) in enumerate(
                zip(record.chunk_ids, doc.text_statements)):
            kp = Keypoint(kp_id="tmp", statement=statement, claimed_modality="text",
                          doc_id=record.doc_id, source_id=chunk_id)
            fixture.text(classify_request(kp, corpus.chunks[chunk_id],
                                          corpus.nearest_chart(chunk_id)), "text")
        chart_kp = Keypoint(kp_id="tmp", statement=doc.chart_statement,
                            claimed_modality="chart", doc_id=record.doc_id,
                            source_id=chart.chart_id)
        fixture.text(classify_request(chart_kp, corpus.nearest_chunk(chart.chart_id),
                                      chart), "chart")
    fixture.save()
    run_extract(config, build_clients(config))

    # verify: every keypoint answerable from its own modality only
    candidates = load_keypoints(ws.candidates_path)
    for kp in candidates:
        probe = ProbeQuestion(kp_id=kp.kp_id,
                              question=f"Does the material state that "
                                       f"{_clause(kp.statement)}?")
        fixture.text(probe_request(kp), probe.question)
        if kp.claimed_modality == "text":
            chunk = corpus.chunks[kp.source_id]
            chart = corpus.nearest_chart(kp.source_id)
            fixture.text(text_answer_request(probe, chunk), kp.statement)
            if chart is not None:
                fixture.text(chart_answer_request(probe, chart), NOT_IN_CHART)
        else:
            chart = corpus.charts[kp.source_id]
            chunk = corpus.nearest_chunk(kp.source_id)
            fixture.text(chart_answer_request(probe, chart), kp.statement)
            if chunk is not None:
                fixture.text(text_answer_request(probe, chunk), NOT_IN_TEXT)
    fixture.save()
    run_verify(config, build_clients(config))

    # generate: script every single and every ordered keypoint combination,
    # so whatever the seeded selection picks is covered
    retained = [kp for kp in load_keypoints(ws.keypoints_path)
                if kp.status == "retained"]
    questions = {}
    for doc in WORLD:
        questions.update(doc.questions)
    for kp in retained:
        fixture.structured(single_point_request(kp, corpus),
                           {"question": questions[kp.statement],
                            "answer": kp.statement})
    for first in retained:
        for second in retained:
            if first.kp_id == second.kp_id:
                continue
            fixture.structured(
                multihop_request(first, second, corpus),
                {"question": _multihop_question(first.statement, second.statement),
                 "answer": f"{first.statement} {second.statement}"})
    fixture.save()
    generate_summary = run_generate(config, build_clients(config))

    run_index(config, build_clients(config))
    run_retrieve(config, build_clients(config))

    # answer: engineered responder behavior per condition
    build = load_dataset(ws.dataset_dir)
    pairs = sorted(build.pairs, key=lambda p: p.qa_id)
    statements = {kp.kp_id: kp.statement for kp in retained}
    retrieved_by_qa = {rs.query_id: rs
                       for rs in load_retrieved(ws.retrieved_path)}
    for i, pair in enumerate(pairs):
        gt_statements = [statements[kp_id] for kp_id in pair.gt_keypoints]
        full = " ".join(gt_statements)
        fixture.text(no_context_request(pair.question), "")

        context, images = assemble_context(corpus, gt_source_refs(pair))
        fixture.text(with_context_request(pair.question, context, images), full)
        fixture.structured(extract_request(pair.question, full), gt_statements)

        refs = [(r.ref_id, r.modality) for r in retrieved_by_qa[pair.qa_id].refs]
        context, images = assemble_context(corpus, refs)
        # alternate hit/miss down the sorted dataset: half the rag answers
        # cover everything, half come back empty-handed
        if i % 2 == 0:
            fixture.text(with_context_request(pair.question, context, images), full)
        else:
            fixture.text(with_context_request(pair.question, context, images),
                         MISS_RESPONSE)
            fixture.structured(extract_request(pair.question, MISS_RESPONSE), [])
    fixture.save()

    conditions = conditions_for(config)
    run_answer(config, build_clients(config), conditions=conditions)
    run_evaluate(config, build_clients(config), conditions=conditions)
    run_export(config)

    report_dir = ws.eval_dir / config.run_id
    report = json.loads((report_dir / "report.json").read_text(encoding="utf-8"))
    overall = {row["condition"]: {"correctness": row["correctness"],
                                  "coverage": row["coverage"],
                                  "recall": row["recall"]}
               for row in report["rows"] if row["category"] == "overall"}
    categories = sorted({pair.category.label for pair in build.pairs})
    return {
        "workspace": str(ws.root),
        "seed": DEMO_SEED,
        "pairs": len(build.pairs),
        "categories": categories,
        "counts": generate_summary.get("counts",
                                       build.manifest.get("counts", {})),
        "shortfalls": build.manifest.get("shortfalls", {}),
        "report_dir": str(report_dir),
        "overall": overall,
        "archive": str(ws.export_path),
        "elapsed_seconds": round(time.monotonic() - started, 2),
    }
