"""Chat-completion providers.

Two implementations behind one complete() surface: a deterministic
rule-based mock for tests and offline use, and an adapter for any
OpenAI-compatible chat completions endpoint with SSE token streaming.
API keys come from the environment and never appear in chunk text or
error messages.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterator, Protocol

import requests

from .prompt import PromptGrammarError, parse_data_block

DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_TOKENS = 1024
API_KEY_ENV = "LLM_API_KEY"

# Keyed on the lowercased Persona line; fixed so persona routing is
# assertable end to end.
MOCK_FRAMINGS = {
    "clinician": "For clinical review:",
    "caregiver": "In plain terms:",
    "patient": "About your health:",
}

NO_FACTS_ANSWER = "No clinical facts on record."


class ProviderFault(Exception):
    pass


class AuthError(ProviderFault):
    """Upstream rejected the credentials (HTTP 401/403)."""


class RateLimited(ProviderFault):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class UpstreamError(ProviderFault):
    pass


class Timeout(ProviderFault):
    pass


@dataclass(frozen=True)
class ChatRequest:
    system_text: str
    user_text: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    stream: bool = True

    def __post_init__(self):
        if not self.system_text or not self.user_text:
            raise ValueError("system and user text must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("maxTokens must be positive")


@dataclass(frozen=True)
class ChatChunk:
    index: int
    text: str
    final: bool = False


class ChatProvider(Protocol):
    def complete(self, request: ChatRequest) -> Iterator[ChatChunk]: ...


def reassemble(chunks: Iterator[ChatChunk]) -> str:
    return "".join(chunk.text for chunk in chunks)


def mock_answer(request: ChatRequest) -> str:
    """Deterministic answer: persona framing plus one sentence per
    non-empty segment enumerating its facts."""
    persona_name, segments = parse_data_block(request.user_text)
    framing = MOCK_FRAMINGS.get(persona_name.lower())
    if framing is None:
        raise PromptGrammarError(f"no framing for persona {persona_name!r}")
    sentences = []
    for label, facts in segments.items():
        if not facts:
            continue
        word = label if sentences else label.lower()
        sentences.append(f"{word} are {'; '.join(facts)}.")
    if not sentences:
        return NO_FACTS_ANSWER
    return f"{framing} {' '.join(sentences)}"


class MockChatProvider:
    """Echoes the prompt's enumerated facts; identical requests yield
    identical answers and identical chunkings."""

    def __init__(self, chunk_size: int = 12):
        if chunk_size < 1:
            raise ValueError("chunk size must be >= 1")
        self.chunk_size = chunk_size

    def complete(self, request: ChatRequest) -> Iterator[ChatChunk]:
        answer = mock_answer(request)
        if not request.stream:
            yield ChatChunk(index=0, text=answer, final=True)
            return
        pieces = [answer[i : i + self.chunk_size] for i in range(0, len(answer), self.chunk_size)] or [""]
        for i, piece in enumerate(pieces):
            yield ChatChunk(index=i, text=piece, final=i == len(pieces) - 1)


class OpenAiChatProvider:
    """POST {base}/v1/chat/completions against any OpenAI-compatible server.

    Streaming mode parses `data: {json}` SSE events up to `data: [DONE]`.
    """

    def __init__(
        self,
        base_url: str,
        model: str = "gpt-4o",
        api_key: str | None = None,
        timeout_s: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def _post(self, payload: dict, stream: bool) -> requests.Response:
        url = f"{self.base_url}/v1/chat/completions"
        try:
            reply = self._session.post(url, json=payload, headers=self._headers(), timeout=self.timeout_s, stream=stream)
        except requests.Timeout:
            raise Timeout(f"no response from {self.base_url} within {self.timeout_s}s") from None
        except requests.RequestException as exc:
            raise UpstreamError(f"chat endpoint unreachable: {exc.__class__.__name__}") from None
        if reply.status_code in (401, 403):
            raise AuthError("chat endpoint rejected the API credentials")
        if reply.status_code == 429:
            retry_after = None
            header = reply.headers.get("Retry-After")
            if header is not None:
                try:
                    retry_after = float(header)
                except ValueError:
                    pass
            raise RateLimited("chat endpoint rate limited the request", retry_after=retry_after)
        if not 200 <= reply.status_code < 300:
            raise UpstreamError(f"chat endpoint answered HTTP {reply.status_code}")
        return reply

    def complete(self, request: ChatRequest) -> Iterator[ChatChunk]:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stream": request.stream,
        }
        if not request.stream:
            reply = self._post(payload, stream=False)
            try:
                content = reply.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError):
                raise UpstreamError("chat endpoint returned an unexpected body") from None
            yield ChatChunk(index=0, text=content, final=True)
            return

        reply = self._post(payload, stream=True)
        index = 0
        try:
            for line in reply.iter_lines():
                if not line or not line.startswith(b"data: "):
                    continue
                payload_bytes = line[len(b"data: ") :]
                if payload_bytes == b"[DONE]":
                    break
                try:
                    event = json.loads(payload_bytes)
                    delta = event["choices"][0].get("delta", {})
                except (ValueError, KeyError, IndexError):
                    raise UpstreamError("chat endpoint sent an unparseable stream event") from None
                text = delta.get("content")
                if text:
                    yield ChatChunk(index=index, text=text)
                    index += 1
        except requests.RequestException:
            raise UpstreamError("chat stream broke mid-response") from None
        finally:
            reply.close()
        yield ChatChunk(index=index, text="", final=True)
