import shutil
from pathlib import Path

import pytest

from charge.config import (PROVIDER_SLOTS, REQUIRED_TEMPLATES, load_config,
                           PipelineConfig, ProviderSlotConfig)
from charge.errors import ConfigInvalid
from charge.providers.templates import PACKAGED_TEMPLATE_DIR

MINIMAL = "seed = 7\n"


def write_config(tmp_path, body=MINIMAL, name="charge.toml"):
    path = tmp_path / name
    path.write_text(body, encoding="utf-8")
    return path


def test_minimal_config_defaults(tmp_path):
    cfg = load_config(write_config(tmp_path))
    assert cfg.seed == 7
    assert cfg.root == tmp_path / "work"
    assert cfg.input_dir == tmp_path / "input"
    assert cfg.target_words == 25
    assert cfg.retrieval_k == 5
    assert cfg.ratio == "three_to_two"
    assert cfg.architecture == "separate_fused"
    assert cfg.eval_modes == ("no_rag", "rag_k", "gt_retrieval")
    assert cfg.quotas == {}
    assert cfg.providers == {}


def test_missing_file_and_bad_toml(tmp_path):
    with pytest.raises(ConfigInvalid, match="not found"):
        load_config(tmp_path / "nope.toml")
    with pytest.raises(ConfigInvalid, match="TOML"):
        load_config(write_config(tmp_path, "seed = [unclosed\n"))


def test_seed_is_mandatory_and_integer(tmp_path):
    with pytest.raises(ConfigInvalid, match="seed"):
        load_config(write_config(tmp_path, "[paths]\nroot = 'w'\n"))
    with pytest.raises(ConfigInvalid, match="integer"):
        load_config(write_config(tmp_path, "seed = 'thirteen'\n"))
    with pytest.raises(ConfigInvalid, match="integer"):
        load_config(write_config(tmp_path, "seed = true\n"))


def test_paths_resolve_against_config_directory(tmp_path):
    nested = tmp_path / "conf"
    nested.mkdir()
    cfg = load_config(write_config(
        nested, "seed = 1\n[paths]\nroot = '../artifacts'\ninput = 'docs'\n"))
    assert cfg.root == tmp_path / "artifacts"
    assert cfg.input_dir == nested / "docs"
    assert cfg.cache_path == tmp_path / "artifacts" / "cache" / "responses.jsonl"


def test_absolute_paths_kept(tmp_path):
    cfg = load_config(write_config(
        tmp_path, f"seed = 1\n[paths]\nroot = '{tmp_path}/abs'\n"))
    assert cfg.root == tmp_path / "abs"


def test_env_overrides(tmp_path):
    path = write_config(tmp_path, "seed = 1\n[retrieval]\nk = 5\n")
    cfg = load_config(path, env={
        "CHARGE_SEED": "99",
        "CHARGE_RETRIEVAL__K": "11",
        "CHARGE_CHUNKING__TARGET_WORDS": "30",
        "CHARGE_RETRIEVAL__RATIO": "balanced",
        "UNRELATED": "ignored",
    })
    assert cfg.seed == 99
    assert cfg.retrieval_k == 11
    assert cfg.target_words == 30
    assert cfg.ratio == "balanced"


def test_env_override_parses_toml_scalars(tmp_path):
    path = write_config(tmp_path, "seed = 1\n")
    cfg = load_config(path, env={"CHARGE_QAGEN__DEDUP_THRESHOLD": "0.9"})
    assert cfg.dedup_threshold == 0.9


def test_env_override_rejects_scalar_section_clash(tmp_path):
    path = write_config(tmp_path, "seed = 1\n")
    with pytest.raises(ConfigInvalid, match="not a config section"):
        load_config(path, env={"CHARGE_SEED__K": "1"})


def test_quota_labels_validated(tmp_path):
    body = 'seed = 1\n[qagen.quotas]\n"single_point:text_only" = 2\n'
    cfg = load_config(write_config(tmp_path, body))
    assert cfg.quotas == {"single_point:text_only": 2}
    bad = 'seed = 1\n[qagen.quotas]\n"single_point:text_chart" = 1\n'
    with pytest.raises(ConfigInvalid):
        load_config(write_config(tmp_path, bad))
    negative = 'seed = 1\n[qagen.quotas]\n"single_point:text_only" = -1\n'
    with pytest.raises(ConfigInvalid, match="non-negative"):
        load_config(write_config(tmp_path, negative))


def test_retrieval_knobs_validated(tmp_path):
    with pytest.raises(ConfigInvalid, match="ratio"):
        load_config(write_config(tmp_path, "seed = 1\n[retrieval]\nratio = 'even'\n"))
    with pytest.raises(ConfigInvalid, match="architecture"):
        load_config(write_config(
            tmp_path, "seed = 1\n[retrieval]\narchitecture = 'hybrid'\n"))
    with pytest.raises(ConfigInvalid, match="k must be"):
        load_config(write_config(tmp_path, "seed = 1\n[retrieval]\nk = 0\n"))


def test_eval_modes_accept_aliases_and_reject_unknown(tmp_path):
    cfg = load_config(write_config(
        tmp_path, "seed = 1\n[evaluation]\nmodes = ['none', 'rag', 'gt']\n"))
    assert cfg.eval_modes == ("no_rag", "rag_k", "gt_retrieval")
    with pytest.raises(ConfigInvalid, match="unknown evaluation mode"):
        load_config(write_config(
            tmp_path, "seed = 1\n[evaluation]\nmodes = ['zero_shot']\n"))


def test_provider_slot_validation(tmp_path):
    with pytest.raises(ConfigInvalid, match="unknown backend"):
        load_config(write_config(
            tmp_path, "seed = 1\n[providers.text_gen]\nbackend = 'grpc'\n"))
    with pytest.raises(ConfigInvalid, match="endpoint and model"):
        load_config(write_config(
            tmp_path, "seed = 1\n[providers.text_gen]\nbackend = 'http'\n"))
    with pytest.raises(ConfigInvalid, match="fixture"):
        load_config(write_config(
            tmp_path, "seed = 1\n[providers.text_gen]\nbackend = 'scripted'\n"))
    with pytest.raises(ConfigInvalid, match="only valid for"):
        load_config(write_config(
            tmp_path, "seed = 1\n[providers.text_gen]\nbackend = 'hash'\n"))
    with pytest.raises(ConfigInvalid, match="unknown provider slot"):
        load_config(write_config(
            tmp_path,
            "seed = 1\n[providers.narrator]\nbackend = 'hash'\ndimension = 8\n"))
    with pytest.raises(ConfigInvalid, match="unknown keys"):
        load_config(write_config(
            tmp_path, "seed = 1\n[providers.embed_text]\nbackend = 'hash'\nwidth = 4\n"))


def test_provider_table_defaults_merge(tmp_path):
    body = ("seed = 1\n[providers]\nendpoint = 'http://models.local'\n"
            "[providers.text_gen]\nbackend = 'http'\nmodel = 'big-writer'\n"
            "[providers.judge]\nbackend = 'http'\nmodel = 'strict-judge'\n")
    cfg = load_config(write_config(tmp_path, body))
    assert cfg.providers["text_gen"].endpoint == "http://models.local"
    assert cfg.providers["judge"].model == "strict-judge"


def test_scripted_fixture_resolved_relative_to_config(tmp_path):
    body = ("seed = 1\n[providers.text_gen]\nbackend = 'scripted'\n"
            "fixture = 'fx/responses.jsonl'\n")
    cfg = load_config(write_config(tmp_path, body))
    assert cfg.providers["text_gen"].fixture == str(tmp_path / "fx" / "responses.jsonl")


def test_template_root_must_hold_every_template(tmp_path):
    custom = tmp_path / "templates"
    custom.mkdir()
    for template_id in REQUIRED_TEMPLATES:
        shutil.copyfile(PACKAGED_TEMPLATE_DIR / f"{template_id}.txt",
                        custom / f"{template_id}.txt")
    ok = write_config(tmp_path, "seed = 1\n[templates]\nroot = 'templates'\n")
    assert load_config(ok).template_root == custom

    (custom / "probe_question.txt").unlink()
    with pytest.raises(ConfigInvalid, match="probe_question"):
        load_config(ok)


def test_every_pipeline_template_is_packaged():
    for template_id in REQUIRED_TEMPLATES:
        assert (PACKAGED_TEMPLATE_DIR / f"{template_id}.txt").is_file()


def test_slot_names_cover_pipeline_roles():
    assert set(PROVIDER_SLOTS) >= {"text_gen", "vision_gen", "embed_text",
                                   "embed_image", "ocr", "judge", "captioner",
                                   "responder"}


def test_direct_validate_rejects_bad_port_and_words():
    base = dict(seed=1, root=Path("w"), input_dir=Path("i"),
                cache_path=Path("c.jsonl"))
    with pytest.raises(ConfigInvalid, match="target_words"):
        PipelineConfig(**base, target_words=2).validate()
    with pytest.raises(ConfigInvalid, match="port"):
        PipelineConfig(**base, port=70000).validate()
    with pytest.raises(ConfigInvalid, match="dedup_threshold"):
        PipelineConfig(**base, dedup_threshold=1.5).validate()


def test_slot_config_hash_dimension():
    with pytest.raises(ConfigInvalid, match="dimension"):
        ProviderSlotConfig(backend="hash", dimension=0).validate("embed_text")
    ProviderSlotConfig(backend="hash", dimension=64).validate("embed_image")


def test_review_tokens_parsed(tmp_path):
    body = 'seed = 1\n[review.tokens]\n"tok-a" = "ann"\n"tok-b" = "bob"\n'
    cfg = load_config(write_config(tmp_path, body))
    assert cfg.review_tokens == {"tok-a": "ann", "tok-b": "bob"}
