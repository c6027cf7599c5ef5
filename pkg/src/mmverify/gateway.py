"""Single choke point for model calls: live, replay and scripted modes."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

import httpx

from .errors import (
    FixtureMissing,
    GatewayError,
    MalformedResponse,
    OfflineViolation,
    RateLimited,
    TransportError,
)
from .fixtures import FixtureStore

logger = logging.getLogger(__name__)

# The eight pipeline prompts plus the two helper prompts (image summary for
# text-only models, output-format repair).
TEMPLATE_IDS = (
    "direct",
    "cot",
    "initial_inference",
    "external_need",
    "query_generation",
    "topic_filter",
    "evidence_extraction",
    "refined_prediction",
    "image_summary",
    "format_repair",
)

MODES = ("live", "replay", "scripted")
FINISH_REASONS = ("complete", "truncated", "refused")

DEFAULT_MODEL_HINT = "gpt-4-vision-preview"
DEFAULT_MAX_TOKENS = 1024
DEFAULT_TEMPERATURE = 0.0


@dataclass(frozen=True)
class ModelRequest:
    template_id: str
    rendered_prompt: str
    image: Optional[bytes] = None
    image_media_type: Optional[str] = None
    model_hint: str = DEFAULT_MODEL_HINT
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    # Free-form labels for logs (post id, stage); never part of the digest.
    metadata: Mapping[str, str] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.template_id not in TEMPLATE_IDS:
            raise ValueError(f"unregistered template id {self.template_id!r}")
        if not self.rendered_prompt:
            raise ValueError("rendered_prompt must be non-empty")
        if not 0.0 <= float(self.temperature) <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ModelResponse:
    text: str
    finish_reason: str
    provider_latency_ms: int
    request_digest: str

    def __post_init__(self):
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"unknown finish reason {self.finish_reason!r}")


def canonical_digest(request: ModelRequest) -> str:
    """sha256 over the canonical JSON of the fields that determine an answer.

    The image enters through an explicit presence flag plus the sha256 of its
    bytes, so "no image" and "empty image" hash differently.
    """
    if request.image is None:
        image = {"present": False}
    else:
        image = {"present": True, "sha256": hashlib.sha256(request.image).hexdigest()}
    preimage = {
        "image": image,
        "max_tokens": int(request.max_tokens),
        "model_hint": request.model_hint,
        "rendered_prompt": request.rendered_prompt,
        "template_id": request.template_id,
        "temperature": float(request.temperature),
    }
    blob = json.dumps(preimage, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class RetryPolicy:
    max_attempts: int = 5
    base_delay: float = 1.0
    factor: float = 2.0
    jitter: float = 0.2
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=random.Random)

    def delay(self, attempt: int) -> float:
        """Backoff before retry number ``attempt`` (1-based)."""
        base = self.base_delay * self.factor ** (attempt - 1)
        return base * (1.0 + self.rng.uniform(-self.jitter, self.jitter))


class _Retryable(Exception):
    def __init__(self, exc_type, message):
        super().__init__(message)
        self.exc_type = exc_type


_FINISH_MAP = {
    "stop": "complete",
    "end_turn": "complete",
    "length": "truncated",
    "max_tokens": "truncated",
    "content_filter": "refused",
}


class ChatCompletionsClient:
    """Live transport speaking the chat-completions JSON protocol."""

    def __init__(
        self,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        *,
        timeout: float = 120.0,
        retry: Optional[RetryPolicy] = None,
        transport: Optional[httpx.BaseTransport] = None,
        offline: bool = False,
    ):
        self.base_url = (base_url or os.environ.get("MMVERIFY_BASE_URL") or "https://api.openai.com/v1").rstrip("/")
        self.api_key = api_key or os.environ.get("MMVERIFY_API_KEY") or os.environ.get("OPENAI_API_KEY")
        self.retry = retry or RetryPolicy()
        self.offline = offline
        self.retries = 0
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _payload(self, request: ModelRequest) -> dict:
        content: list[dict] = [{"type": "text", "text": request.rendered_prompt}]
        if request.image is not None:
            mime = request.image_media_type or "image/png"
            uri = f"data:{mime};base64,{base64.b64encode(request.image).decode('ascii')}"
            content.append({"type": "image_url", "image_url": {"url": uri}})
        return {
            "model": request.model_hint,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }

    def _attempt(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=payload, headers=headers)
        except httpx.TransportError as exc:
            raise _Retryable(TransportError, f"transport failure: {exc}") from exc
        if resp.status_code == 429:
            raise _Retryable(RateLimited, "rate limited (HTTP 429)")
        if resp.status_code >= 500:
            raise _Retryable(TransportError, f"server error HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise GatewayError(f"provider rejected request: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponse("provider returned non-JSON body") from exc

    def send(self, request: ModelRequest) -> tuple[str, str, dict]:
        """Returns (text, finish_reason, raw payload)."""
        if self.offline:
            raise OfflineViolation("live model call attempted while offline")
        payload = self._payload(request)
        attempt = 1
        while True:
            try:
                raw = self._attempt(payload)
                break
            except _Retryable as exc:
                if attempt >= self.retry.max_attempts:
                    raise exc.exc_type(f"{exc} after {attempt} attempts") from None
                delay = self.retry.delay(attempt)
                logger.warning("model call failed (%s); retry %d in %.2fs", exc, attempt, delay)
                self.retries += 1
                self.retry.sleep(delay)
                attempt += 1
        try:
            choice = raw["choices"][0]
            text = choice["message"]["content"]
            if isinstance(text, list):
                text = "".join(part.get("text", "") for part in text)
            if not isinstance(text, str):
                raise TypeError("content is not text")
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response shape: {exc}") from exc
        finish = _FINISH_MAP.get(choice.get("finish_reason") or "stop", "complete")
        return text, finish, raw


Script = Callable[[ModelRequest], Union[str, ModelResponse]]


class Gateway:
    """Routes every :class:`ModelRequest` through exactly one provider mode.

    ``record=True`` writes each live (or scripted) exchange to the fixture
    store so it can later be replayed byte for byte.
    """

    def __init__(
        self,
        mode: str,
        *,
        store: Optional[FixtureStore] = None,
        record: bool = False,
        script: Optional[Script] = None,
        client: Optional[ChatCompletionsClient] = None,
        max_concurrency: int = 4,
        cache=None,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown gateway mode {mode!r}")
        if mode == "replay" and store is None:
            raise ValueError("replay mode needs a fixture store")
        if mode == "scripted" and script is None:
            raise ValueError("scripted mode needs a script")
        if mode == "live" and client is None:
            raise ValueError("live mode needs a client")
        if record and store is None:
            raise ValueError("record mode needs a fixture store")
        self.mode = mode
        self.store = store
        self.record = record and mode != "replay"
        self.script = script
        self.client = client
        self.cache = cache
        self._live_slots = threading.BoundedSemaphore(max_concurrency)
        self._lock = threading.Lock()
        self.calls: Counter = Counter()
        self.latencies: list[tuple[str, int]] = []

    def complete(self, request: ModelRequest) -> ModelResponse:
        digest = canonical_digest(request)
        with self._lock:
            self.calls[request.template_id] += 1
        if self.mode == "replay":
            fixture = self.store.load("model", digest)
            if fixture is None:
                raise FixtureMissing(f"no recording for {request.template_id} request {digest[:12]}")
            r = fixture["response"]
            return self._done(ModelResponse(r["text"], r["finish_reason"], int(r["provider_latency_ms"]), digest))

        start = time.perf_counter()
        if self.mode == "scripted":
            out = self.script(request)
            if isinstance(out, ModelResponse):
                text, finish = out.text, out.finish_reason
            else:
                text, finish = str(out), "complete"
            raw = {"scripted": True, "text": text}
        else:
            text, finish, raw = self._live(request, digest)
        latency = int((time.perf_counter() - start) * 1000)
        response = ModelResponse(text, finish, latency, digest)
        if self.record:
            self.store.save(
                "model",
                digest,
                {
                    "digest": digest,
                    "request": _request_record(request),
                    "response": {"text": text, "finish_reason": finish, "provider_latency_ms": latency},
                    "raw": raw,
                },
                template_id=request.template_id,
            )
        return self._done(response)

    def _live(self, request: ModelRequest, digest: str) -> tuple[str, str, dict]:
        if self.cache is not None:
            hit = self.cache.get("model", digest)
            if hit is not None:
                d = json.loads(hit)
                return d["text"], d["finish_reason"], d["raw"]
        with self._live_slots:
            text, finish, raw = self.client.send(request)
        if self.cache is not None:
            self.cache.put("model", digest, json.dumps({"text": text, "finish_reason": finish, "raw": raw}).encode())
        return text, finish, raw

    def _done(self, response: ModelResponse) -> ModelResponse:
        with self._lock:
            self.latencies.append((response.request_digest, response.provider_latency_ms))
        return response

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())


def _request_record(request: ModelRequest) -> dict:
    return {
        "template_id": request.template_id,
        "rendered_prompt": request.rendered_prompt,
        "image_sha256": hashlib.sha256(request.image).hexdigest() if request.image is not None else None,
        "image_media_type": request.image_media_type,
        "model_hint": request.model_hint,
        "max_tokens": request.max_tokens,
        "temperature": request.temperature,
        "metadata": dict(request.metadata),
    }
