"""Model access: one chat-completion interface for the orchestrator,
mindsets and gates, plus an image-generation interface, each with a
deterministic scripted double for tests.

A chat backend is anything with ``complete(messages, params) -> Completion``;
an image backend is anything with ``generate_image(request) -> ImageGenResult``.
The live implementations speak the OpenAI-compatible chat-completions JSON
schema over HTTP.
"""

from __future__ import annotations

import base64
import json
import math
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace

import requests

# --- message model ---------------------------------------------------------

ROLE_SYSTEM = "system"
ROLE_USER = "user"
ROLE_ASSISTANT = "assistant"


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    image_id: str
    data: bytes


@dataclass
class ChatMessage:
    role: str
    parts: list

    def __post_init__(self) -> None:
        if self.role not in (ROLE_SYSTEM, ROLE_USER, ROLE_ASSISTANT):
            raise ValueError(f"unknown role: {self.role}")
        if not self.parts:
            raise ValueError("message must have at least one part")
        if self.role != ROLE_USER and any(isinstance(p, ImagePart) for p in self.parts):
            raise ValueError("image parts only appear in user messages")

    @classmethod
    def text(cls, role: str, text: str) -> "ChatMessage":
        return cls(role=role, parts=[TextPart(text)])

    @property
    def text_content(self) -> str:
        return "".join(p.text for p in self.parts if isinstance(p, TextPart))


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.7
    top_p: float = 0.95
    max_tokens: int = 32768
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if len(self.stop_sequences) > 8:
            raise ValueError("at most 8 stop sequences")

    def with_stops(self, stops: tuple[str, ...]) -> "SamplingParams":
        return replace(self, stop_sequences=stops)


FINISH_NATURAL = "natural"
FINISH_LENGTH = "length"
FINISH_STOP = "stop_sequence_hit"


@dataclass
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def add(self, other: "Usage") -> None:
        self.prompt_tokens += other.prompt_tokens
        self.completion_tokens += other.completion_tokens


@dataclass
class Completion:
    text: str
    finish: str = FINISH_NATURAL
    stop_hit: str | None = None
    usage: Usage = field(default_factory=Usage)


class BackendError(Exception):
    """Base for everything a backend can signal."""


class TransportError(BackendError):
    """Network failure or HTTP >= 500 after retries."""


class RateLimited(BackendError):
    """HTTP 429 after retries."""


class ContextOverflow(BackendError):
    """Backend-reported prompt too long; retrying cannot help."""


class QueueEmpty(BackendError):
    """Scripted backend ran out of queued responses."""


class GenerationFailed(BackendError):
    """Image backend failed after retries."""


class UnsupportedReference(BackendError):
    """Image backend rejected the reference images."""


# --- fenced code detection ---------------------------------------------------

_FENCE_RE = re.compile(r"```([^\n`]*)\n(.*?)(?:```|\Z)", re.S)


def extract_fenced_block(text: str) -> str | None:
    """Interior of the first triple-backtick block, language hint stripped.
    An unclosed final fence extends to the end of the text."""
    match = _FENCE_RE.search(text)
    if match is None:
        return None
    return match.group(2).rstrip("\n")


# --- scripted chat backend ----------------------------------------------------


def synthetic_usage(prompt_chars: int, completion_chars: int) -> Usage:
    """Deterministic synthetic token counts: ceil(chars / 4) per side."""
    return Usage(
        prompt_tokens=math.ceil(prompt_chars / 4),
        completion_tokens=math.ceil(completion_chars / 4),
    )


def apply_stop_sequences(text: str, stops: tuple[str, ...]) -> tuple[str, str, str | None]:
    """Truncate at the earliest stop occurrence; ties broken by stop order."""
    best_at, best_stop = -1, None
    for stop in stops:
        at = text.find(stop)
        if at != -1 and (best_at == -1 or at < best_at):
            best_at, best_stop = at, stop
    if best_stop is None:
        return text, FINISH_NATURAL, None
    return text[:best_at], FINISH_STOP, best_stop


class ScriptedBackend:
    """FIFO replay double: queued responses come back in push order, every
    call records the exact messages and params it received, and usage is
    synthetic (character-based) so token accounting stays checkable."""

    def __init__(self, name: str = "scripted") -> None:
        self.name = name
        self._queue: deque[str] = deque()
        self._lock = threading.Lock()
        self.calls: list[tuple[list[ChatMessage], SamplingParams]] = []
        self.completions: list[Completion] = []

    def push(self, response: str) -> None:
        with self._lock:
            self._queue.append(response)

    def push_many(self, responses: list[str]) -> None:
        for response in responses:
            self.push(response)

    def assert_drained(self) -> None:
        with self._lock:
            if self._queue:
                raise AssertionError(
                    f"{self.name}: {len(self._queue)} unconsumed scripted responses"
                )

    def complete(self, messages: list[ChatMessage], params: SamplingParams) -> Completion:
        if not messages:
            raise ValueError("messages must be non-empty")
        with self._lock:
            if not self._queue:
                raise QueueEmpty(f"{self.name}: scripted queue drained")
            raw = self._queue.popleft()
            self.calls.append((list(messages), params))
            text, finish, stop_hit = apply_stop_sequences(raw, params.stop_sequences)
            prompt_chars = sum(len(m.text_content) for m in messages)
            completion = Completion(
                text=text,
                finish=finish,
                stop_hit=stop_hit,
                usage=synthetic_usage(prompt_chars, len(text)),
            )
            self.completions.append(completion)
            return completion


def scripted_push(backend: ScriptedBackend, response: str) -> None:
    backend.push(response)


def scripted_assert_drained(backend: ScriptedBackend) -> None:
    backend.assert_drained()


# --- live chat backend ----------------------------------------------------------


def encode_message(message: ChatMessage) -> dict:
    """Chat-completions JSON for one message; images become data URLs."""
    if all(isinstance(p, TextPart) for p in message.parts) and len(message.parts) == 1:
        return {"role": message.role, "content": message.parts[0].text}
    content = []
    for part in message.parts:
        if isinstance(part, TextPart):
            content.append({"type": "text", "text": part.text})
        else:
            b64 = base64.b64encode(part.data).decode("ascii")
            content.append(
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
            )
    return {"role": message.role, "content": content}


def build_chat_payload(model: str, messages: list[ChatMessage], params: SamplingParams) -> dict:
    payload = {
        "model": model,
        "messages": [encode_message(m) for m in messages],
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
    }
    if params.stop_sequences:
        payload["stop"] = list(params.stop_sequences)
    return payload


def _default_transport(url: str, headers: dict, payload: dict, timeout: float) -> tuple[int, dict]:
    response = requests.post(url, headers=headers, json=payload, timeout=timeout)
    try:
        body = response.json()
    except ValueError:
        body = {"error": {"message": response.text[:500]}}
    return response.status_code, body


_CONTEXT_OVERFLOW_MARKERS = ("context length", "maximum context", "too many tokens", "context_length")


class OpenAICompatBackend:
    """Chat-completions client: retries transient failures with exponential
    backoff (1 s / 2 s / 4 s), surfaces rate limiting, transport failure and
    context overflow as distinct errors."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "",
        retries: int = 3,
        timeout_s: float = 120.0,
        transport=None,
        sleep=time.sleep,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.timeout_s = timeout_s
        self._transport = transport or _default_transport
        self._sleep = sleep

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "") if self.api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: list[ChatMessage], params: SamplingParams) -> Completion:
        if not messages:
            raise ValueError("messages must be non-empty")
        payload = build_chat_payload(self.model, messages, params)
        last_error: BackendError | None = None
        for attempt in range(self.retries):
            try:
                status, body = self._transport(self.endpoint, self._headers(), payload, self.timeout_s)
            except requests.RequestException as exc:
                last_error = TransportError(str(exc))
            else:
                if status == 429:
                    last_error = RateLimited(f"HTTP 429: {_error_message(body)}")
                elif status >= 500:
                    last_error = TransportError(f"HTTP {status}: {_error_message(body)}")
                elif status >= 400:
                    message = _error_message(body)
                    if any(marker in message.lower() for marker in _CONTEXT_OVERFLOW_MARKERS):
                        raise ContextOverflow(message)
                    raise TransportError(f"HTTP {status}: {message}")
                else:
                    return _parse_completion(body)
            if attempt < self.retries - 1:
                self._sleep(2**attempt)
        assert last_error is not None
        raise last_error


def _error_message(body: dict) -> str:
    err = body.get("error")
    if isinstance(err, dict):
        return str(err.get("message", err))
    return str(err or body)[:500]


def _parse_completion(body: dict) -> Completion:
    try:
        choice = body["choices"][0]
        content = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion response: {exc}") from exc
    if isinstance(content, list):
        content = "".join(
            part.get("text", "") for part in content if isinstance(part, dict)
        )
    finish_reason = choice.get("finish_reason", "stop")
    finish = FINISH_LENGTH if finish_reason == "length" else FINISH_NATURAL
    usage_obj = body.get("usage") or {}
    usage = Usage(
        prompt_tokens=int(usage_obj.get("prompt_tokens", 0) or 0),
        completion_tokens=int(usage_obj.get("completion_tokens", 0) or 0),
    )
    return Completion(text=content or "", finish=finish, usage=usage)


# --- image generation ------------------------------------------------------------


@dataclass
class ImageGenRequest:
    instruction: str
    reference_images: list[bytes] = field(default_factory=list)


@dataclass
class ImageGenResult:
    image: bytes | None = None
    code: str | None = None
    notes: str = ""

    def __post_init__(self) -> None:
        if self.image is not None and self.code is not None:
            raise ValueError("result carries image bytes xor code, never both")


class ScriptedImageBackend:
    """Replay double for the image interface.  Push raw PNG bytes for an
    image reply, text for a model reply (classified by fenced-block
    detection into code vs plain notes), or a failure."""

    def __init__(self, name: str = "scripted-image") -> None:
        self.name = name
        self._queue: deque[tuple[str, object, str]] = deque()
        self._lock = threading.Lock()
        self.requests: list[ImageGenRequest] = []

    def push_image(self, data: bytes, notes: str = "") -> None:
        with self._lock:
            self._queue.append(("image", data, notes))

    def push_text(self, text: str) -> None:
        with self._lock:
            self._queue.append(("text", text, ""))

    def push_failure(self, message: str = "image backend failure") -> None:
        with self._lock:
            self._queue.append(("error", message, ""))

    def assert_drained(self) -> None:
        with self._lock:
            if self._queue:
                raise AssertionError(f"{self.name}: {len(self._queue)} unconsumed image replies")

    def generate_image(self, request: ImageGenRequest) -> ImageGenResult:
        if not request.instruction.strip():
            raise ValueError("image generation instruction must be non-empty")
        with self._lock:
            if not self._queue:
                raise QueueEmpty(f"{self.name}: scripted queue drained")
            kind, value, notes = self._queue.popleft()
            self.requests.append(request)
        if kind == "image":
            assert isinstance(value, bytes)
            return ImageGenResult(image=value, notes=notes)
        if kind == "error":
            raise GenerationFailed(str(value))
        assert isinstance(value, str)
        code = extract_fenced_block(value)
        if code is not None:
            return ImageGenResult(code=code, notes=value)
        return ImageGenResult(notes=value)


class OpenAICompatImageBackend:
    """Image generation over a chat-style endpoint.  The reply is classified
    as: base64 image content -> image bytes; fenced code block -> code to be
    executed for a figure; anything else -> notes only."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "",
        retries: int = 3,
        timeout_s: float = 300.0,
        transport=None,
        sleep=time.sleep,
    ) -> None:
        self._chat = OpenAICompatBackend(
            endpoint, model, api_key_env, retries=retries, timeout_s=timeout_s,
            transport=transport, sleep=sleep,
        )

    def generate_image(self, request: ImageGenRequest) -> ImageGenResult:
        if not request.instruction.strip():
            raise ValueError("image generation instruction must be non-empty")
        parts: list = [TextPart(request.instruction)]
        for i, data in enumerate(request.reference_images, start=1):
            parts.append(ImagePart(image_id=f"ref_{i}", data=data))
        try:
            completion = self._chat.complete(
                [ChatMessage(role=ROLE_USER, parts=parts)],
                SamplingParams(stop_sequences=()),
            )
        except BackendError as exc:
            raise GenerationFailed(str(exc)) from exc
        text = completion.text
        image = _decode_data_url_image(text)
        if image is not None:
            return ImageGenResult(image=image, notes="")
        code = extract_fenced_block(text)
        if code is not None:
            return ImageGenResult(code=code, notes=text)
        return ImageGenResult(notes=text)


_DATA_URL_RE = re.compile(r"data:image/(?:png|jpeg);base64,([A-Za-z0-9+/=]+)")


def _decode_data_url_image(text: str) -> bytes | None:
    match = _DATA_URL_RE.search(text)
    if match is None:
        return None
    try:
        return base64.b64decode(match.group(1), validate=True)
    except (ValueError, json.JSONDecodeError):
        return None
