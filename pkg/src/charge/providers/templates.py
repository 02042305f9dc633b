"""Prompt template loading and slot substitution.

Templates are plain text files with `{slot}` placeholders, shipped as
package data and overridable via an explicit directory.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Optional

from ..errors import TemplateSlotMissing, UnknownTemplate
from .base import ImageRef, SlotValue

_PLACEHOLDER = re.compile(r"\{([a-z0-9_]+)\}")

PACKAGED_TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"


def template_path(template_id: str, root: Optional[str | Path] = None) -> Path:
    return Path(root or PACKAGED_TEMPLATE_DIR) / f"{template_id}.txt"


def load_template(template_id: str, root: Optional[str | Path] = None) -> str:
    path = template_path(template_id, root)
    if not path.is_file():
        raise UnknownTemplate(f"no template file {path}")
    return path.read_text(encoding="utf-8")


def render_template(template_id: str, slots: dict[str, SlotValue],
                    root: Optional[str | Path] = None) -> str:
    """Substitute placeholders and nothing else. Image slots render as a
    stable `[image <hash12>]` marker; the actual bytes travel out of band.
    """
    template = load_template(template_id, root)

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in slots:
            raise TemplateSlotMissing(
                f"template {template_id!r} needs slot {name!r}")
        value = slots[name]
        if isinstance(value, ImageRef):
            return f"[image {value.content_hash[:12]}]"
        return value

    return _PLACEHOLDER.sub(substitute, template)


def list_templates(root: Optional[str | Path] = None) -> list[str]:
    directory = Path(root or PACKAGED_TEMPLATE_DIR)
    return sorted(p.stem for p in directory.glob("*.txt"))
