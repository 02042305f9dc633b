"""Pipeline configuration.

One TOML file drives a whole run: provider wiring per slot, the seed,
chunking and retrieval defaults, generation quotas, and artifact paths.
Environment variables prefixed CHARGE_ override file values so a run can
be tweaked without editing the canonical config artifact.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .errors import ConfigInvalid
from .providers.templates import template_path
from .qagen import (DEFAULT_DEDUP_THRESHOLD, DEFAULT_RETRIEVAL_K,
                    DEFAULT_RETRY_BUDGET, QACategory)
from .retrieval import ARCHITECTURES, RATIO_POLICIES

ENV_PREFIX = "CHARGE_"
# Section and key joined by a double underscore so keys may themselves
# contain single underscores: CHARGE_CHUNKING__TARGET_WORDS=30.
ENV_SEPARATOR = "__"

PROVIDER_SLOTS = ("text_gen", "vision_gen", "embed_text", "embed_image",
                  "ocr", "judge", "captioner", "responder")
BACKEND_KINDS = ("http", "hash", "scripted")

EVAL_MODES = ("no_rag", "rag_k", "gt_retrieval")
# Short spellings accepted on the command line and in config files.
MODE_ALIASES = {"none": "no_rag", "no_rag": "no_rag",
                "rag": "rag_k", "rag_k": "rag_k",
                "gt": "gt_retrieval", "gt_retrieval": "gt_retrieval"}

# Every prompt template the pipeline renders. A custom template root must
# provide all of them; a typo'd override should fail at config time, not
# mid-run.
REQUIRED_TEMPLATES = (
    "answer_from_chart",
    "answer_from_text",
    "chart_caption",
    "chart_values",
    "judge_equivalence",
    "keypoint_modality",
    "keypoints_from_chart",
    "keypoints_from_text",
    "phrasing_echo",
    "probe_question",
    "qa_multihop",
    "qa_single_point_chart",
    "qa_single_point_text",
    "respond_no_context",
    "respond_with_context",
    "response_keypoints",
)


@dataclass
class ProviderSlotConfig:
    """How one provider slot is backed.

    http: a remote model endpoint. hash: the deterministic local feature
    embedder (embedding slots only). scripted: canned responses from a
    fixture file, for offline runs.
    """

    backend: str = "http"
    endpoint: str = ""
    model: str = ""
    auth_token: str = ""
    fixture: str = ""
    fallback: str = "error"
    dimension: int = 512

    def validate(self, slot: str) -> None:
        if self.backend not in BACKEND_KINDS:
            raise ConfigInvalid(
                f"provider slot {slot!r}: unknown backend {self.backend!r} "
                f"(expected one of {', '.join(BACKEND_KINDS)})")
        if self.backend == "http" and not (self.endpoint and self.model):
            raise ConfigInvalid(
                f"provider slot {slot!r}: http backend needs endpoint and model")
        if self.backend == "scripted" and not self.fixture:
            raise ConfigInvalid(
                f"provider slot {slot!r}: scripted backend needs a fixture path")
        if self.backend == "hash":
            if slot not in ("embed_text", "embed_image"):
                raise ConfigInvalid(
                    f"provider slot {slot!r}: hash backend is only valid for "
                    f"embedding slots")
            if self.dimension < 1:
                raise ConfigInvalid(
                    f"provider slot {slot!r}: dimension must be >= 1")


@dataclass
class PipelineConfig:
    seed: int
    root: Path
    input_dir: Path
    cache_path: Path
    target_words: int = 25
    retrieval_k: int = 5
    ratio: str = "three_to_two"
    architecture: str = "separate_fused"
    quotas: dict[str, int] = field(default_factory=dict)
    qa_retrieval_k: int = DEFAULT_RETRIEVAL_K
    dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD
    retry_budget: int = DEFAULT_RETRY_BUDGET
    eval_modes: tuple[str, ...] = EVAL_MODES
    run_id: str = "run"
    template_root: Optional[Path] = None
    providers: dict[str, ProviderSlotConfig] = field(default_factory=dict)
    review_tokens: dict[str, str] = field(default_factory=dict)
    port: int = 8321

    def validate(self) -> None:
        if self.target_words < 5:
            raise ConfigInvalid("chunking.target_words must be >= 5")
        if self.retrieval_k < 1:
            raise ConfigInvalid("retrieval.k must be >= 1")
        if self.ratio not in RATIO_POLICIES:
            raise ConfigInvalid(
                f"retrieval.ratio must be one of {', '.join(RATIO_POLICIES)}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigInvalid(
                f"retrieval.architecture must be one of {', '.join(ARCHITECTURES)}")
        if not 0.0 < self.dedup_threshold <= 1.0:
            raise ConfigInvalid("qagen.dedup_threshold must be in (0, 1]")
        if self.retry_budget < 1 or self.qa_retrieval_k < 1:
            raise ConfigInvalid("qagen.retry_budget and qagen.retrieval_k must be >= 1")
        for label, quota in self.quotas.items():
            try:
                QACategory.from_label(label)
            except Exception as exc:
                raise ConfigInvalid(f"qagen.quotas: {exc}") from exc
            if not isinstance(quota, int) or quota < 0:
                raise ConfigInvalid(
                    f"qagen.quotas[{label!r}] must be a non-negative integer")
        for mode in self.eval_modes:
            if mode not in EVAL_MODES:
                raise ConfigInvalid(
                    f"evaluation.modes entries must map to {', '.join(EVAL_MODES)}")
        for slot, provider in self.providers.items():
            if slot not in PROVIDER_SLOTS:
                raise ConfigInvalid(
                    f"unknown provider slot {slot!r} "
                    f"(expected one of {', '.join(PROVIDER_SLOTS)})")
            provider.validate(slot)
        root = str(self.template_root) if self.template_root else None
        for template_id in REQUIRED_TEMPLATES:
            path = template_path(template_id, root)
            if not path.is_file():
                raise ConfigInvalid(f"missing template file: {path}")
        if self.port < 1 or self.port > 65535:
            raise ConfigInvalid("review.port must be a valid TCP port")


def _parse_env_value(raw: str):
    """Env override values use TOML scalar syntax; bare words fall back to
    strings so CHARGE_RETRIEVAL__RATIO=balanced works unquoted.
    """
    try:
        return _toml.loads(f"value = {raw}")["value"]
    except _toml.TOMLDecodeError:
        return raw


def apply_env_overrides(data: dict, env: Mapping[str, str]) -> dict:
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX):].lower()
        value = _parse_env_value(env[name])
        if ENV_SEPARATOR in dotted:
            section, key = dotted.split(ENV_SEPARATOR, 1)
            table = data.setdefault(section, {})
            if not isinstance(table, dict):
                raise ConfigInvalid(
                    f"{name} targets {section!r}, which is not a config section")
            table[key.replace(ENV_SEPARATOR, ".")] = value
        else:
            data[dotted] = value
    return data


def _section(data: dict, name: str) -> dict:
    table = data.get(name, {})
    if not isinstance(table, dict):
        raise ConfigInvalid(f"config section {name!r} must be a table")
    return table


def _provider_slots(data: dict) -> dict[str, ProviderSlotConfig]:
    table = _section(data, "providers")
    defaults = {k: v for k, v in table.items() if not isinstance(v, dict)}
    slots = {}
    for slot, raw in table.items():
        if not isinstance(raw, dict):
            continue
        merged = {**defaults, **raw}
        unknown = set(merged) - set(ProviderSlotConfig.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(
                f"provider slot {slot!r}: unknown keys {sorted(unknown)}")
        slots[slot] = ProviderSlotConfig(**merged)
    return slots


def load_config(path: str | Path, env: Optional[Mapping[str, str]] = None) -> PipelineConfig:
    """Parse and validate a pipeline config file.

    Relative paths in the file resolve against the file's own directory,
    so a config directory is relocatable as a unit.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file not found: {path}")
    try:
        data = _toml.loads(path.read_text(encoding="utf-8"))
    except _toml.TOMLDecodeError as exc:
        raise ConfigInvalid(f"config file {path} is not valid TOML: {exc}") from exc
    if env:
        data = apply_env_overrides(data, env)

    if "seed" not in data:
        raise ConfigInvalid("config must set an explicit top-level seed")
    seed = data["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigInvalid("seed must be an integer")

    base = path.resolve().parent

    def resolve(raw: str) -> Path:
        p = Path(raw)
        if not p.is_absolute():
            p = base / p
        return Path(os.path.normpath(p))

    paths = _section(data, "paths")
    root = resolve(str(paths.get("root", "work")))
    input_dir = resolve(str(paths.get("input", "input")))
    cache_path = resolve(str(paths.get("cache", str(root / "cache" / "responses.jsonl"))))

    chunking = _section(data, "chunking")
    retrieval = _section(data, "retrieval")
    qagen = _section(data, "qagen")
    quotas = qagen.get("quotas", {})
    if not isinstance(quotas, dict):
        raise ConfigInvalid("qagen.quotas must be a table of category -> count")
    evaluation = _section(data, "evaluation")
    raw_modes = evaluation.get("modes", list(EVAL_MODES))
    if not isinstance(raw_modes, list) or not raw_modes:
        raise ConfigInvalid("evaluation.modes must be a non-empty list")
    modes = []
    for mode in raw_modes:
        canon = MODE_ALIASES.get(str(mode))
        if canon is None:
            raise ConfigInvalid(f"unknown evaluation mode {mode!r}")
        if canon not in modes:
            modes.append(canon)
    review = _section(data, "review")
    tokens = review.get("tokens", {})
    if not isinstance(tokens, dict) or not all(
            isinstance(v, str) for v in tokens.values()):
        raise ConfigInvalid("review.tokens must map token -> reviewer id")

    templates = _section(data, "templates")
    template_root = templates.get("root")

    providers = _provider_slots(data)
    for slot in providers.values():
        if slot.fixture:
            slot.fixture = str(resolve(slot.fixture))

    config = PipelineConfig(
        seed=seed,
        root=root,
        input_dir=input_dir,
        cache_path=cache_path,
        target_words=int(chunking.get("target_words", 25)),
        retrieval_k=int(retrieval.get("k", 5)),
        ratio=str(retrieval.get("ratio", "three_to_two")),
        architecture=str(retrieval.get("architecture", "separate_fused")),
        quotas={str(k): v for k, v in quotas.items()},
        qa_retrieval_k=int(qagen.get("retrieval_k", DEFAULT_RETRIEVAL_K)),
        dedup_threshold=float(qagen.get("dedup_threshold", DEFAULT_DEDUP_THRESHOLD)),
        retry_budget=int(qagen.get("retry_budget", DEFAULT_RETRY_BUDGET)),
        eval_modes=tuple(modes),
        run_id=str(evaluation.get("run_id", "run")),
        template_root=resolve(str(template_root)) if template_root else None,
        providers=providers,
        review_tokens={str(k): str(v) for k, v in tokens.items()},
        port=int(review.get("port", 8321)),
    )
    config.validate()
    return config
