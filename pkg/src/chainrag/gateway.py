"""Chat-completion and embedding clients.

``OpenAIGateway`` talks to any OpenAI-compatible ``/chat/completions`` and
``/embeddings`` endpoint. ``MockGateway`` answers from a fixture table or a
scripted responder so the whole pipeline runs without a network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import httpx
import numpy as np

logger = logging.getLogger(__name__)

NO_THINK_TAG = "/no_think"
THINK_MODES = ("think", "no_think", "n/a")


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Network or server-side failure; safe to retry."""


class ConfigError(GatewayError):
    """Bad credentials or endpoint configuration; retrying will not help."""


class MockMissError(GatewayError):
    """The mock has no response for a request."""


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    system: str
    user: str
    temperature: float = 0.0
    max_output_tokens: int = 512
    think_mode: str = "n/a"

    def __post_init__(self):
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.think_mode not in THINK_MODES:
            raise ValueError(f"think_mode must be one of {THINK_MODES}")

    def outgoing_user(self) -> str:
        """User text as actually sent, with the soft switch applied."""
        return apply_think_mode(self.user, self.think_mode)

    def fingerprint(self) -> str:
        payload = [self.model_id, self.system, self.outgoing_user(), self.think_mode,
                   self.temperature, self.max_output_tokens]
        return hashlib.sha256(json.dumps(payload).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: Usage
    latency_ms: float
    provider_reported: bool


def apply_think_mode(user: str, think_mode: str) -> str:
    """Append the ``/no_think`` soft switch once for no_think requests."""
    if think_mode != "no_think" or user.endswith(" " + NO_THINK_TAG):
        return user
    return f"{user} {NO_THINK_TAG}"


_SYMBOL_RUN = re.compile(r"(?:[^\w\s]|_)+")


def estimate_tokens(text: str) -> int:
    """Approximate token count: whitespace-delimited words plus runs of symbols.

    Only an approximation of a real tokenizer, used when the provider does not
    report usage. ``"a, b."`` counts as 4.
    """
    return len(text.split()) + len(_SYMBOL_RUN.findall(text))


class Gateway:
    """Base class: holds the model id, decoding defaults and the in-flight cap."""

    def __init__(self, model_id: str = "mock", temperature: float = 0.0,
                 max_output_tokens: int = 512, max_in_flight: int = 8):
        self.model_id = model_id
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.max_in_flight = max_in_flight
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def request(self, system: str, user: str, think_mode: str = "n/a", **overrides) -> ChatRequest:
        return ChatRequest(
            model_id=overrides.get("model_id", self.model_id),
            system=system,
            user=user,
            temperature=overrides.get("temperature", self.temperature),
            max_output_tokens=overrides.get("max_output_tokens", self.max_output_tokens),
            think_mode=think_mode,
        )

    def chat(self, system: str, user: str, think_mode: str = "n/a") -> ChatResponse:
        return self.chat_complete(self.request(system, user, think_mode))

    def chat_complete(self, request: ChatRequest) -> ChatResponse:
        with self._slots:
            return self._complete(request)

    def _complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        raise NotImplementedError(f"{type(self).__name__} has no embedding endpoint")


class OpenAIGateway(Gateway):
    """Client for OpenAI-compatible servers (OpenAI, vLLM, SGLang, ...)."""

    def __init__(self, base_url: str, api_key: str | None = None, model_id: str = "",
                 embedding_model: str | None = None, timeout: float = 120.0,
                 max_attempts: int = 3, backoff_s: float = 1.0,
                 client: httpx.Client | None = None, **kwargs):
        super().__init__(model_id=model_id, **kwargs)
        self.base_url = base_url.rstrip("/")
        self.embedding_model = embedding_model or model_id
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def _post(self, path: str, payload: dict) -> dict:
        last_error = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self._client.post(f"{self.base_url}{path}", json=payload)
            except httpx.HTTPError as e:
                last_error = TransportError(f"{path}: {e}")
                logger.warning("attempt %d/%d failed: %s", attempt + 1, self.max_attempts, e)
                continue
            if resp.status_code in (401, 403):
                raise ConfigError(f"{path}: authentication failed ({resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = TransportError(f"{path}: HTTP {resp.status_code}")
                logger.warning("attempt %d/%d failed: HTTP %d", attempt + 1, self.max_attempts, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise ConfigError(f"{path}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as e:
                last_error = TransportError(f"{path}: response is not JSON: {e}")
        raise last_error

    def _complete(self, request: ChatRequest) -> ChatResponse:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.outgoing_user()})
        payload = {
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        t0 = time.perf_counter()
        data = self._post("/chat/completions", payload)
        latency_ms = (time.perf_counter() - t0) * 1000.0
        try:
            message = data["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as e:
            raise TransportError(f"malformed completion payload: {e}") from e
        text = message.get("content") or ""
        # some servers split the think block out of the content
        reasoning = message.get("reasoning_content")
        if reasoning:
            text = f"<think>{reasoning}</think>\n{text}"
        usage = data.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            return ChatResponse(text, Usage(int(usage["prompt_tokens"]), int(usage["completion_tokens"])),
                                latency_ms, provider_reported=True)
        return ChatResponse(text, estimate_usage(request, text), latency_ms, provider_reported=False)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        data = self._post("/embeddings", {"model": self.embedding_model, "input": list(texts)})
        rows = sorted(data["data"], key=lambda r: r["index"])
        return [np.asarray(r["embedding"], dtype=float) for r in rows]


def estimate_usage(request: ChatRequest, text: str) -> Usage:
    return Usage(estimate_tokens(request.system + "\n" + request.outgoing_user()), estimate_tokens(text))


@dataclass(frozen=True)
class LatencyModel:
    """Simulated latency for mock calls, so mock runs stay reproducible."""

    base_ms: float = 1.0
    per_input_token_ms: float = 0.01
    per_output_token_ms: float = 0.5

    def __call__(self, usage: Usage) -> float:
        return self.base_ms + self.per_input_token_ms * usage.input_tokens + self.per_output_token_ms * usage.output_tokens


Responder = Callable[[ChatRequest], "str | None"]


class MockGateway(Gateway):
    """Deterministic stand-in for a hosted model.

    Lookup order: ``responses`` keyed by request fingerprint, then by the
    exact outgoing user text, then ``responder(request)``, then ``default``.
    A request nothing answers raises ``MockMissError``. Usage always comes
    from :func:`estimate_tokens`; latency from ``latency``.
    """

    def __init__(self, responses: dict[str, str] | None = None, responder: Responder | None = None,
                 default: str | None = None, latency: LatencyModel | None = None,
                 embed_dim: int = 64, **kwargs):
        super().__init__(**kwargs)
        self.responses = dict(responses or {})
        self.responder = responder
        self.default = default
        self.latency = latency or LatencyModel()
        self.embedder = PseudoEmbedder(embed_dim)
        self.calls: list[ChatRequest] = []
        self._lock = threading.Lock()

    def register(self, key: str, text: str) -> None:
        self.responses[key] = text

    def _complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls.append(request)
        text = self.responses.get(request.fingerprint())
        if text is None:
            text = self.responses.get(request.outgoing_user())
        if text is None and self.responder is not None:
            text = self.responder(request)
        if text is None:
            text = self.default
        if text is None:
            raise MockMissError(f"no mock response for request {request.fingerprint()}")
        usage = estimate_usage(request, text)
        return ChatResponse(text, usage, self.latency(usage), provider_reported=False)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self.embedder.embed(texts)


_EMBED_TOKEN = re.compile(r"[^\W_]+")


class PseudoEmbedder:
    """Hashing-trick bag-of-words embedder, L2-normalized.

    Deterministic across processes (blake2b, not ``hash()``). Texts without
    any word token get a vector derived from their raw bytes, so every output
    has unit norm.
    """

    def __init__(self, dim: int = 64):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim

    def _vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        tokens = _EMBED_TOKEN.findall(text.lower()) or [f"\0raw:{text}"]
        for tok in tokens:
            h = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
            slot = int.from_bytes(h[:4], "little") % self.dim
            sign = 1.0 if h[4] & 1 else -1.0
            vec[slot] += sign
        norm = math.sqrt(float(vec @ vec))
        if norm == 0.0:
            # opposite-signed collisions cancelled out
            h = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
            vec[int.from_bytes(h[:4], "little") % self.dim] = 1.0
            norm = 1.0
        return vec / norm

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self._vector(t) for t in texts]
