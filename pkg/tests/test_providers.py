import json
import shutil
import threading

import numpy as np
import pytest

from charge.errors import (
    BackendUnavailable,
    RateLimited,
    StructuredParseError,
    TemplateSlotMissing,
    UnknownTemplate,
    UnreadableImage,
)
from charge.providers.base import (
    RETRY_SCHEDULE,
    ImageRef,
    ProviderClient,
    ProviderRequest,
    ProviderResponse,
    call_structured,
    parse_structured,
)
from charge.providers.cache import ResponseCache
from charge.providers.embedder import HashEmbedder, HashEmbedderBackend
from charge.providers.judge import judge_equivalent, judge_request
from charge.providers.scripted import ScriptedProvider
from charge.providers.templates import render_template


def req(**kwargs):
    base = dict(kind="text_gen", prompt_template_id="probe_question",
                slots={"statement": "33% of U.S. adults say they use TikTok"})
    base.update(kwargs)
    return ProviderRequest(**base)


# -- fingerprints -------------------------------------------------------------

def test_fingerprint_stable():
    assert req().fingerprint() == req().fingerprint()


def test_fingerprint_normalizes_unicode():
    a = req(slots={"statement": "café"})
    b = req(slots={"statement": "café"})
    assert a.fingerprint() == b.fingerprint()


def test_fingerprint_sensitive_to_params():
    assert req().fingerprint() != req(params={"temperature": 0.2}).fingerprint()


def test_fingerprint_sensitive_to_kind_and_template():
    assert req().fingerprint() != req(kind="judge").fingerprint()
    assert req().fingerprint() != req(prompt_template_id="answer_from_text").fingerprint()


def test_image_fingerprint_is_content_based(make_chart_png, tmp_path):
    original = make_chart_png("a.png")
    moved = tmp_path / "elsewhere" / "b.png"
    moved.parent.mkdir()
    shutil.copyfile(original, moved)
    fp1 = req(slots={"chart": ImageRef(original)}).fingerprint()
    fp2 = req(slots={"chart": ImageRef(str(moved))}).fingerprint()
    assert fp1 == fp2


def test_image_ref_missing_file():
    with pytest.raises(UnreadableImage):
        ImageRef("/nowhere/x.png").content_hash


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        ProviderRequest(kind="telepathy")


def test_response_exactly_one_payload():
    with pytest.raises(ValueError):
        ProviderResponse()
    with pytest.raises(ValueError):
        ProviderResponse(text="a", vector=[1.0])
    ProviderResponse(text="a")
    ProviderResponse(vector=[0.0])
    ProviderResponse(structured={})


# -- scripted backend -----------------------------------------------------------

def test_scripted_answers_fixture(scripted, make_client):
    scripted.script_text(req(), "What share of U.S. adults say they use TikTok?")
    client = make_client(scripted)
    assert client.call(req()).text == "What share of U.S. adults say they use TikTok?"


def test_scripted_unknown_raises(scripted, make_client):
    with pytest.raises(BackendUnavailable):
        make_client(scripted).call(req())


def test_scripted_echo_fallback(make_client):
    client = make_client(ScriptedProvider(fallback="echo"))
    out = client.call(req(slots={"a": "x", "b": "y"}))
    assert out.text == "x\ny"


def test_scripted_fixture_roundtrip(tmp_path, scripted, make_client):
    scripted.script_text(req(), "answer")
    scripted.script_structured(req(kind="judge"), {"equivalent": True})
    path = tmp_path / "fixture.jsonl"
    scripted.save_fixture(path)

    loaded = ScriptedProvider.load_fixture(path)
    client = make_client(loaded)
    assert client.call(req()).text == "answer"
    assert client.call(req(kind="judge")).structured == {"equivalent": True}


# -- caching client ---------------------------------------------------------------

def test_cache_prevents_second_backend_call(scripted, make_client):
    fp = scripted.script_text(req(), "answer")
    client = make_client(scripted)
    first = client.call(req())
    second = client.call(req())
    assert not first.cached
    assert second.cached
    assert scripted.call_counts[fp] == 1


def test_cache_persists_across_clients(tmp_path, scripted):
    fp = scripted.script_text(req(), "answer")
    cache_path = tmp_path / "cache" / "responses.jsonl"
    client = ProviderClient(scripted, cache=ResponseCache(cache_path), sleep=lambda _: None)
    client.call(req())

    fresh_backend = ScriptedProvider()  # would raise if actually invoked
    fresh = ProviderClient(fresh_backend, cache=ResponseCache(cache_path),
                           sleep=lambda _: None)
    assert fresh.call(req()).text == "answer"
    assert fresh.call(req()).cached
    assert fresh_backend.call_counts[fp] == 0


def test_cache_file_is_append_only_jsonl(tmp_path, scripted):
    cache_path = tmp_path / "responses.jsonl"
    scripted.script_text(req(), "a1")
    scripted.script_text(req(kind="judge"), "a2")
    client = ProviderClient(scripted, cache=ResponseCache(cache_path), sleep=lambda _: None)
    client.call(req())
    client.call(req(kind="judge"))
    rows = [json.loads(line) for line in cache_path.read_text().splitlines()]
    assert len(rows) == 2
    assert {"fingerprint", "response"} <= rows[0].keys()


def test_concurrent_calls_single_backend_invocation(scripted):
    fp = scripted.script_text(req(), "answer")
    client = ProviderClient(scripted, cache=ResponseCache(), sleep=lambda _: None)
    results = []

    def work():
        results.append(client.call(req()).text)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == ["answer"] * 8
    # The cache races are resolved under a lock; the backend may be hit more
    # than once before the first insert lands but the ledger stays consistent.
    assert scripted.call_counts[fp] >= 1


class FlakyBackend:
    provider_id = "flaky"

    def __init__(self, failures, response_text="ok"):
        self.failures = failures
        self.response_text = response_text
        self.calls = 0

    def invoke(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise RateLimited("try later")
        return ProviderResponse(text=self.response_text)


def test_retry_backoff_schedule():
    sleeps = []
    client = ProviderClient(FlakyBackend(failures=2), sleep=sleeps.append)
    assert client.call(req()).text == "ok"
    assert sleeps == [1.0, 2.0]


def test_retry_exhaustion():
    sleeps = []
    backend = FlakyBackend(failures=99)
    client = ProviderClient(backend, sleep=sleeps.append)
    with pytest.raises(RateLimited):
        client.call(req())
    assert sleeps == list(RETRY_SCHEDULE)
    assert backend.calls == len(RETRY_SCHEDULE) + 1


# -- structured parsing ------------------------------------------------------------

def test_parse_structured_passthrough():
    assert parse_structured(ProviderResponse(structured=[1, 2])) == [1, 2]


def test_parse_structured_from_text():
    assert parse_structured(ProviderResponse(text='{"a": 1}')) == {"a": 1}
    assert parse_structured(ProviderResponse(text='noise ["x"] trailing')) == ["x"]
    assert parse_structured(ProviderResponse(text="just words")) is None


def test_call_structured_reprompts_once(scripted, make_client):
    request = req()
    scripted.script_text(request, "not json")
    retry = ProviderRequest(kind=request.kind, prompt_template_id=request.prompt_template_id,
                            slots=request.slots, params={"reprompt": 1})
    scripted.script_text(retry, '{"fixed": true}')
    assert call_structured(make_client(scripted), request) == {"fixed": True}


def test_call_structured_gives_up(scripted, make_client):
    request = req()
    scripted.script_text(request, "not json")
    retry = ProviderRequest(kind=request.kind, prompt_template_id=request.prompt_template_id,
                            slots=request.slots, params={"reprompt": 1})
    scripted.script_text(retry, "still not json")
    with pytest.raises(StructuredParseError):
        call_structured(make_client(scripted), request)


# -- templates -----------------------------------------------------------------

def test_render_substitutes_slots(tmp_path):
    (tmp_path / "hello.txt").write_text("hello {name}")
    assert render_template("hello", {"name": "x"}, root=tmp_path) == "hello x"


def test_render_missing_slot(tmp_path):
    (tmp_path / "hello.txt").write_text("hello {name}")
    with pytest.raises(TemplateSlotMissing):
        render_template("hello", {}, root=tmp_path)


def test_render_unknown_template():
    with pytest.raises(UnknownTemplate):
        render_template("no_such_template", {})


def test_render_embeds_chunk_verbatim():
    chunk = "About 33% of U.S. adults say they use TikTok."
    prompt = render_template("keypoints_from_text", {"passage": chunk})
    assert chunk in prompt


def test_render_image_marker(make_chart_png):
    image = ImageRef(make_chart_png())
    prompt = render_template("answer_from_chart",
                             {"question": "q", "chart": image, "values": "v"})
    assert f"[image {image.content_hash[:12]}]" in prompt


def test_render_extra_slots_ignored(tmp_path):
    (tmp_path / "t.txt").write_text("only {used}")
    assert render_template("t", {"used": "a", "spare": "b"}, root=tmp_path) == "only a"


# -- hash embedder ------------------------------------------------------------------

def test_embedder_unit_norm_and_determinism():
    emb = HashEmbedder(dimension=64, seed=7)
    v1 = emb.embed_text("33% of U.S. adults use TikTok")
    v2 = emb.embed_text("33% of U.S. adults use TikTok")
    assert np.allclose(v1, v2)
    assert abs(np.linalg.norm(v1) - 1.0) < 1e-9


def test_embedder_seed_changes_vectors():
    text = "the same input text"
    a = HashEmbedder(64, seed=1).embed_text(text)
    b = HashEmbedder(64, seed=2).embed_text(text)
    assert not np.allclose(a, b)


def test_embedder_empty_text_is_unit():
    v = HashEmbedder(16).embed_text("")
    assert abs(np.linalg.norm(v) - 1.0) < 1e-9


def test_embedder_lexical_overlap_orders_cosine():
    emb = HashEmbedder(dimension=256, seed=3)
    q = emb.embed_text("adults using tiktok for product reviews")
    near = emb.embed_text("many adults browse tiktok product reviews daily")
    far = emb.embed_text("glacier melt accelerates in polar regions")
    assert float(q @ near) > float(q @ far)


def test_embedder_backend_text_and_image(make_chart_png):
    backend = HashEmbedderBackend(dimension=32, seed=0)
    out = backend.invoke(ProviderRequest(kind="embed_text", slots={"text": "hello world"}))
    assert len(out.vector) == 32

    image = ImageRef(make_chart_png())
    hinted = backend.invoke(ProviderRequest(
        kind="embed_image", slots={"image": image, "text_hint": "tiktok usage chart"}))
    text_vec = backend.invoke(ProviderRequest(kind="embed_text",
                                              slots={"text": "tiktok usage chart"}))
    assert hinted.vector == text_vec.vector

    bare = backend.invoke(ProviderRequest(kind="embed_image", slots={"image": image}))
    assert bare.vector != hinted.vector


def test_embedder_backend_rejects_other_kinds():
    with pytest.raises(BackendUnavailable):
        HashEmbedderBackend(8).invoke(ProviderRequest(kind="text_gen", slots={"text": "x"}))


# -- judge ---------------------------------------------------------------------------

def test_judge_tier1_normalized_equality():
    assert judge_equivalent("33% use TikTok", "  33% USE tiktok  ")


def test_judge_without_provider_is_lexical():
    assert not judge_equivalent("33% use TikTok", "one third use TikTok")


def test_judge_provider_verdicts(scripted, make_client):
    judge = make_client(scripted)
    scripted.script_text(judge_request("one third", "33%"), "yes")
    scripted.script_text(judge_request("one third", "68%"), "no, different values")
    assert judge_equivalent("one third", "33%", judge)
    assert not judge_equivalent("one third", "68%", judge)


def test_judge_structured_verdicts(scripted, make_client):
    judge = make_client(scripted)
    scripted.script_structured(judge_request("a", "b"), {"equivalent": True})
    scripted.script_structured(judge_request("a", "c"), {"verdict": "no"})
    assert judge_equivalent("a", "b", judge)
    assert not judge_equivalent("a", "c", judge)


def test_judge_unparseable_defaults_false(scripted, make_client):
    judge = make_client(scripted)
    scripted.script_text(judge_request("a", "b"), "perhaps")
    assert not judge_equivalent("a", "b", judge)
