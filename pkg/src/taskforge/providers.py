"""Text-generation providers.

Every provider maps a :class:`ProviderRequest` to text. The request carries
both the rendered prompt (all an external model sees) and the structured
payload the prompt was rendered from (which the offline provider uses to
answer deterministically). Callers always parse the returned text, so both
kinds of provider travel the same validation path.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Any, Protocol

from .errors import ConfigError, ProviderError

log = logging.getLogger(__name__)

ENDPOINT_ENV = "ANYTASK_PROVIDER_ENDPOINT"
KEY_ENV = "ANYTASK_PROVIDER_KEY"
MAX_RETRIES = 3


@dataclass(frozen=True)
class ProviderRequest:
    kind: str
    prompt: str
    payload: dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    @property
    def prompt_hash(self) -> str:
        return hashlib.sha256(self.prompt.encode()).hexdigest()[:16]


class TextProvider(Protocol):
    provider_id: str

    def complete(self, request: ProviderRequest) -> str: ...


def load_prompt(template: str) -> Template:
    text = resources.files("taskforge").joinpath("prompts", f"{template}.txt").read_text(encoding="utf-8")
    return Template(text)


def render_prompt(template: str, /, **fields: Any) -> str:
    values = {k: v if isinstance(v, str) else json.dumps(v, sort_keys=True) for k, v in fields.items()}
    return load_prompt(template).safe_substitute(values)


def call_provider(provider: TextProvider, request: ProviderRequest, retries: int = MAX_RETRIES) -> str:
    """Call with retries; empty output or repeated failure raises ProviderError."""
    last: Exception | None = None
    for attempt in range(retries):
        try:
            text = provider.complete(request)
        except ProviderError as exc:
            last = exc
            log.warning("provider %s failed on %s (attempt %d): %s", provider.provider_id, request.kind, attempt + 1, exc)
            continue
        if text and text.strip():
            return text
        last = ProviderError(f"provider {provider.provider_id} returned empty text for {request.kind}")
    raise last if isinstance(last, ProviderError) else ProviderError(str(last))


class HttpProvider:
    """OpenAI-style chat-completions client configured from the environment.

    Credentials never come from flags: the endpoint and key are read from
    ``ANYTASK_PROVIDER_ENDPOINT`` and ``ANYTASK_PROVIDER_KEY``.
    """

    def __init__(self, model: str = "default", temperature: float = 0.7, timeout: float = 60.0):
        self.endpoint = os.environ.get(ENDPOINT_ENV)
        self.key = os.environ.get(KEY_ENV)
        if not self.endpoint:
            raise ConfigError(f"{ENDPOINT_ENV} is not set")
        self.model = model
        self.temperature = temperature
        self.timeout = timeout
        self.provider_id = f"http:{model}"

    def complete(self, request: ProviderRequest) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        body = {
            "model": self.model,
            "temperature": self.temperature,
            "seed": request.seed,
            "messages": [{"role": "user", "content": request.prompt}],
        }
        try:
            resp = requests.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise ProviderError(f"http provider error: {exc}") from exc
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProviderError("malformed provider response") from None


class ScriptedProvider:
    """Replays canned responses per request kind (for tests and fault injection)."""

    def __init__(self, responses: dict[str, list[str] | str], provider_id: str = "scripted", fallback=None):
        self.responses = {k: list(v) if isinstance(v, list) else [v] for k, v in responses.items()}
        self.provider_id = provider_id
        self.fallback = fallback
        self.calls: list[ProviderRequest] = []

    def complete(self, request: ProviderRequest) -> str:
        self.calls.append(request)
        queue = self.responses.get(request.kind)
        if queue:
            return queue.pop(0) if len(queue) > 1 else queue[0]
        if self.fallback is not None:
            return self.fallback.complete(request)
        raise ProviderError(f"no scripted response for {request.kind}")


def stable_seed(*parts: Any) -> int:
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(h, "little")
