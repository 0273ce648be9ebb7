"""Text-generation backends, decoding settings, and token accounting.

Two interchangeable backends: an HTTP client for any chat-completion
compatible endpoint, and a scripted backend that replays a fixed list of
responses for deterministic tests. Agents emit reasoning prose before
their JSON payload, so structured output is recovered by scanning for the
last top-level JSON object in the response text.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Protocol

import httpx

from .errors import BackendError, ParseError, ScriptError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecodingParams:
    """Sampling settings sent with every generation request."""

    temperature: float = 0.7
    top_p: float = 0.8
    top_k: int = 20  # 0 disables top-k
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")

    def to_json(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "top_k": self.top_k,
            "max_output_tokens": self.max_output_tokens,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DecodingParams":
        return cls(**data)


AGENT_DECODING = DecodingParams()
# Pairwise difficulty comparisons sample at full temperature.
COMPARISON_DECODING = DecodingParams(temperature=1.0, top_p=1.0, top_k=0)


@dataclass(frozen=True)
class GenRequest:
    system: str
    user: str
    params: DecodingParams = AGENT_DECODING
    request_id: str = ""


@dataclass(frozen=True)
class GenResponse:
    text: str
    output_tokens: int
    latency_s: float
    backend_id: str
    approx_tokens: bool = False


class Backend(Protocol):
    """Anything that can answer a GenRequest."""

    backend_id: str

    def generate(self, req: GenRequest) -> GenResponse: ...

    @property
    def total_output_tokens(self) -> int: ...


def _approx_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted response; ``match`` is a required substring or "*"."""

    match: str
    response: str


class ScriptedBackend:
    """Deterministic stand-in for a model endpoint.

    Entries are consumed strictly in order: each request must match the
    next entry's substring (or "*"), otherwise the script is considered
    mis-ordered and the call fails loudly. All requests are kept for test
    introspection.
    """

    def __init__(self, entries, backend_id: str = "scripted"):
        self.backend_id = backend_id
        self._entries = [
            e if isinstance(e, ScriptEntry) else ScriptEntry(e["match"], e["response"])
            for e in entries
        ]
        self._cursor = 0
        self._total_tokens = 0
        self.requests: list[GenRequest] = []

    @classmethod
    def from_file(cls, path, backend_id: str = "scripted") -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, list):
            raise ScriptError(f"script file {path} must hold a JSON list")
        return cls(data, backend_id=backend_id)

    @property
    def remaining(self) -> int:
        return len(self._entries) - self._cursor

    @property
    def total_output_tokens(self) -> int:
        return self._total_tokens

    def generate(self, req: GenRequest) -> GenResponse:
        self.requests.append(req)
        if self._cursor >= len(self._entries):
            raise ScriptError(f"script exhausted after {self._cursor} responses ({req.request_id})")
        entry = self._entries[self._cursor]
        if entry.match != "*" and entry.match not in req.system + "\n" + req.user:
            raise ScriptError(
                f"script mismatch at entry {self._cursor}: "
                f"expected request containing {entry.match!r} ({req.request_id})"
            )
        self._cursor += 1
        tokens = _approx_tokens(entry.response)
        self._total_tokens += tokens
        return GenResponse(
            text=entry.response,
            output_tokens=tokens,
            latency_s=0.0,
            backend_id=self.backend_id,
            approx_tokens=True,
        )


class HttpBackend:
    """Client for an OpenAI-style /chat/completions endpoint.

    Transient failures (connection errors, timeouts, 429, 5xx) are retried
    with exponential backoff; auth and other client errors fail
    immediately. An optional in-flight cap bounds concurrent callers.
    """

    TRANSIENT_STATUS = frozenset({408, 409, 429, 500, 502, 503, 504})

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        max_in_flight: Optional[int] = None,
        backend_id: str = "",
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.backend_id = backend_id or model
        self._url = endpoint.rstrip("/") + "/chat/completions"
        self._model = model
        self._api_key_env = api_key_env
        self._max_retries = max_retries
        self._backoff_base = backoff_base
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._semaphore = threading.BoundedSemaphore(max_in_flight) if max_in_flight else None
        self._lock = threading.Lock()
        self._total_tokens = 0

    @property
    def total_output_tokens(self) -> int:
        return self._total_tokens

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self._api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, req: GenRequest) -> dict:
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.user})
        payload = {
            "model": self._model,
            "messages": messages,
            "temperature": req.params.temperature,
            "top_p": req.params.top_p,
            "max_tokens": req.params.max_output_tokens,
        }
        if req.params.top_k:
            payload["top_k"] = req.params.top_k
        return payload

    def generate(self, req: GenRequest) -> GenResponse:
        if self._semaphore:
            self._semaphore.acquire()
        try:
            return self._generate_with_retries(req)
        finally:
            if self._semaphore:
                self._semaphore.release()

    def _generate_with_retries(self, req: GenRequest) -> GenResponse:
        started = time.monotonic()
        last_error: Optional[str] = None
        for attempt in range(self._max_retries):
            if attempt:
                time.sleep(self._backoff_base * 2 ** (attempt - 1))
            try:
                response = self._client.post(self._url, json=self._payload(req), headers=self._headers())
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
                logger.warning("request %s attempt %d failed: %s", req.request_id, attempt + 1, exc)
                continue
            if response.status_code in (401, 403):
                raise BackendError(
                    f"authentication failed ({response.status_code}); "
                    f"check the {self._api_key_env} environment variable"
                )
            if response.status_code in self.TRANSIENT_STATUS:
                last_error = f"HTTP {response.status_code}"
                logger.warning(
                    "request %s attempt %d got %d", req.request_id, attempt + 1, response.status_code
                )
                continue
            if response.status_code != 200:
                raise BackendError(f"backend returned HTTP {response.status_code}: {response.text[:200]}")
            return self._parse_response(response, started)
        raise BackendError(
            f"request {req.request_id or '<unnamed>'} failed after "
            f"{self._max_retries} attempts ({last_error})"
        )

    def _parse_response(self, response: httpx.Response, started: float) -> GenResponse:
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise BackendError(f"malformed completion payload: {exc}") from exc
        usage = body.get("usage") or {}
        tokens = usage.get("completion_tokens")
        approx = tokens is None
        with self._lock:
            count = int(tokens) if tokens is not None else _approx_tokens(text)
            self._total_tokens += count
        return GenResponse(
            text=text,
            output_tokens=count,
            latency_s=time.monotonic() - started,
            backend_id=self.backend_id,
            approx_tokens=approx,
        )


class TokenLedger:
    """Cumulative output-token accounting, per stage and per round."""

    def __init__(self):
        self._increments: dict[str, list[tuple[int, int]]] = {}

    def record(self, stage: str, round_index: int, count: int) -> None:
        if count < 0:
            raise ValueError("token count must be >= 0")
        self._increments.setdefault(stage, []).append((round_index, count))

    def increments(self, stage: str) -> list[tuple[int, int]]:
        return list(self._increments.get(stage, []))

    def cumulative(self, stage: str) -> int:
        return sum(count for _, count in self._increments.get(stage, []))

    def cumulative_series(self, stage: str) -> list[int]:
        """Running totals in recording order; non-decreasing by construction."""
        series, total = [], 0
        for _, count in self._increments.get(stage, []):
            total += count
            series.append(total)
        return series

    def to_json(self) -> dict:
        return {
            stage: {
                "cumulative": self.cumulative(stage),
                "per_round": [[r, c] for r, c in incs],
            }
            for stage, incs in sorted(self._increments.items())
        }


def extract_json_payload(text: str) -> dict:
    """Return the last top-level JSON object embedded in free-form text.

    Agents explain themselves in prose before emitting their JSON payload,
    and sometimes show intermediate objects; the final object wins. Objects
    nested inside an earlier object are not considered separate candidates.
    """
    decoder = json.JSONDecoder()
    best: Optional[dict] = None
    idx = text.find("{")
    while idx != -1:
        try:
            value, end = decoder.raw_decode(text[idx:])
        except json.JSONDecodeError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(value, dict):
            best = value
        idx = text.find("{", idx + end)
    if best is None:
        raise ParseError("no valid JSON object found in model output")
    return best


FORMAT_REMINDER = (
    "\n\nReminder: your previous reply could not be parsed. "
    "End your answer with a single valid JSON object in exactly the specified format."
)


def generate_json(
    backend: Backend,
    system: str,
    user: str,
    params: DecodingParams,
    request_id: str = "",
) -> Optional[dict]:
    """Generate and parse a JSON payload, re-prompting once on failure.

    Returns None when even the re-prompted response is unparseable; the
    caller decides what an unusable round means. The loop must never crash
    on model noise.
    """
    for attempt, suffix in enumerate(("", FORMAT_REMINDER)):
        response = backend.generate(
            GenRequest(system, user + suffix, params, f"{request_id}#{attempt}" if attempt else request_id)
        )
        try:
            return extract_json_payload(response.text)
        except ParseError:
            logger.warning("unparseable model output for %s (attempt %d)", request_id, attempt + 1)
    return None
