"""Chart value extraction client.

Turns a chart image into the structured value table the rest of the
pipeline works from: a list of (label, series, value, unit) entries plus
the raw recognized text.
"""

from __future__ import annotations

from ..corpus import ChartValue, ChartValues
from ..errors import ProviderError
from .base import ImageRef, ProviderClient, ProviderRequest, call_structured

OCR_TEMPLATE = "chart_values"


def ocr_request(image_ref: ImageRef) -> ProviderRequest:
    return ProviderRequest(
        kind="ocr", prompt_template_id=OCR_TEMPLATE, slots={"chart": image_ref})


def _entry(row: dict) -> ChartValue | None:
    label = str(row.get("label", "")).strip()
    if not label:
        return None
    try:
        value = float(row.get("value"))
    except (TypeError, ValueError):
        return None
    series = str(row.get("series") or "").strip() or None
    unit = str(row.get("unit") or "").strip() or None
    return ChartValue(label=label, series=series, value=value, unit=unit)


class OcrClient:
    """Wraps a ProviderClient and parses its output into ChartValues.

    Malformed rows are skipped rather than failing the whole chart; a
    completely unusable response surfaces as ProviderError so callers can
    fall back to an empty value table.
    """

    def __init__(self, client: ProviderClient):
        self.client = client

    def extract_values(self, image_ref) -> ChartValues:
        if not isinstance(image_ref, ImageRef):
            image_ref = ImageRef(image_ref)
        parsed = call_structured(self.client, ocr_request(image_ref))
        if not isinstance(parsed, dict):
            raise ProviderError("chart value extraction returned a non-object")
        entries = []
        for row in parsed.get("entries", []):
            if isinstance(row, dict):
                entry = _entry(row)
                if entry is not None:
                    entries.append(entry)
        return ChartValues(entries=entries,
                           raw_ocr_text=str(parsed.get("raw_text", "")))
