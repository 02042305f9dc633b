"""Two-tier equivalence check between short factual statements."""

from __future__ import annotations

from typing import Optional

from ..text import normalize
from .base import ProviderClient, ProviderRequest

JUDGE_TEMPLATE = "judge_equivalence"

_YES = ("yes", "y", "true", "same", "equivalent")
_NO = ("no", "n", "false", "different")


def judge_request(a: str, b: str) -> ProviderRequest:
    return ProviderRequest(kind="judge", prompt_template_id=JUDGE_TEMPLATE,
                           slots={"first": a, "second": b})


def judge_equivalent(a: str, b: str, judge: Optional[ProviderClient] = None) -> bool:
    """Tier 1: normalized exact match. Tier 2: ask the judge provider
    whether the two statements carry the same factual content. Without a
    judge the check is purely lexical.
    """
    if normalize(a) == normalize(b):
        return True
    if judge is None:
        return False
    response = judge.call(judge_request(a, b))
    return _parse_verdict(response)


def _parse_verdict(response) -> bool:
    if response.structured is not None:
        value = response.structured
        if isinstance(value, bool):
            return value
        if isinstance(value, dict):
            for key in ("equivalent", "same", "match", "verdict"):
                if key in value:
                    v = value[key]
                    return v if isinstance(v, bool) else str(v).strip().lower() in _YES
        return False
    text = (response.text or "").strip().lower()
    first = text.split()[0].rstrip(".,:;") if text else ""
    if first in _YES:
        return True
    if first in _NO:
        return False
    return False
