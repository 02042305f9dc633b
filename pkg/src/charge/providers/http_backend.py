"""HTTP JSON backend for remote model endpoints."""

from __future__ import annotations

import base64

import requests

from ..errors import BackendUnavailable, RateLimited
from .base import ImageRef, ProviderRequest, ProviderResponse
from .templates import render_template


class HTTPBackend:
    """Speaks a simple JSON protocol: POST {kind, model, prompt, images,
    params} and read back one of {text, vector, structured}. 429 and 5xx
    responses are retryable (the client owns the retry loop); other HTTP
    errors are terminal.
    """

    def __init__(self, endpoint: str, model: str, auth_token: str = "",
                 template_root=None, timeout: float = 60.0,
                 session: requests.Session | None = None):
        self.endpoint = endpoint
        self.model = model
        self.auth_token = auth_token
        self.template_root = template_root
        self.timeout = timeout
        self.session = session or requests.Session()
        self.provider_id = f"http:{model}"

    def invoke(self, request: ProviderRequest) -> ProviderResponse:
        payload = self._payload(request)
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        try:
            http_response = self.session.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise RateLimited(f"transport failure talking to {self.endpoint}: {exc}")
        if http_response.status_code == 429 or http_response.status_code >= 500:
            raise RateLimited(f"{self.endpoint} answered {http_response.status_code}")
        if http_response.status_code >= 400:
            raise BackendUnavailable(
                f"{self.endpoint} answered {http_response.status_code}: "
                f"{http_response.text[:200]}")
        body = http_response.json()
        return ProviderResponse(
            text=body.get("text"), vector=body.get("vector"),
            structured=body.get("structured"), provider_id=self.provider_id)

    def _payload(self, request: ProviderRequest) -> dict:
        text_slots, images = {}, []
        for name, value in sorted(request.slots.items()):
            if isinstance(value, ImageRef):
                images.append({"slot": name,
                               "data": base64.b64encode(value.read_bytes()).decode("ascii")})
            else:
                text_slots[name] = value
        payload = {"kind": request.kind, "model": self.model,
                   "params": request.params, "slots": text_slots, "images": images}
        if request.prompt_template_id:
            payload["prompt"] = render_template(
                request.prompt_template_id, request.slots, root=self.template_root)
        return payload
