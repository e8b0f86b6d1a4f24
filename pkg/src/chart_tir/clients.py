"""Chat-completions clients for the policy, the synthesis LLM and the judge.

All three roles speak the same JSON wire protocol. The network is reached
through a *transport* (``send(request) -> response``), which makes it easy to
swap the live HTTP transport for a cassette replay or a scripted stub.
"""

from __future__ import annotations

import base64
import collections
import enum
import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

from .errors import (
    CapabilityError,
    CassetteMiss,
    DeadlineExceeded,
    EndpointUnavailable,
    MalformedReply,
    UnparseableVerdict,
)
from .model import ChartImage

log = logging.getLogger(__name__)


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    image: ChartImage


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: tuple[TextPart | ImagePart, ...]

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "content", tuple(self.content))
        if not self.content:
            raise ValueError("a chat message needs at least one content part")

    @classmethod
    def text(cls, role: Role | str, text: str) -> "ChatMessage":
        return cls(Role(role), (TextPart(text),))

    @property
    def plain_text(self) -> str:
        return "".join(p.text for p in self.content if isinstance(p, TextPart))


@dataclass(frozen=True)
class Sampling:
    temperature: float = 1.0
    max_tokens: int = 2048
    want_logprobs: bool = False
    seed: int | None = None


@dataclass(frozen=True)
class PolicyReply:
    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None = None


@dataclass(frozen=True)
class JudgeVerdict:
    correct: bool
    raw: str


def _encode_part(part) -> dict:
    if isinstance(part, TextPart):
        return {"type": "text", "text": part.text}
    b64 = base64.b64encode(part.image.to_png()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}


def build_request(model: str, messages: Sequence[ChatMessage], sampling: Sampling) -> dict:
    req: dict[str, Any] = {
        "model": model,
        "messages": [{"role": m.role.value, "content": [_encode_part(p) for p in m.content]} for m in messages],
        "temperature": sampling.temperature,
        "max_tokens": sampling.max_tokens,
    }
    if sampling.want_logprobs:
        req["logprobs"] = True
    if sampling.seed is not None:
        req["seed"] = sampling.seed
    return req


def request_key(request: dict) -> str:
    canon = json.dumps(request, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canon.encode()).hexdigest()


def completion_response(text: str, logprobs: Sequence[tuple[str, float]] | None = None) -> dict:
    """Wrap ``text`` in the minimal response shape the clients understand."""
    choice: dict[str, Any] = {"index": 0, "message": {"role": "assistant", "content": text}}
    if logprobs is not None:
        choice["logprobs"] = {"content": [{"token": t, "logprob": lp} for t, lp in logprobs]}
    return {"choices": [choice]}


# --- transports --------------------------------------------------------------


class TransientError(Exception):
    """A retryable transport failure."""

    def __init__(self, message: str, deadline: bool = False):
        super().__init__(message)
        self.deadline = deadline


class Transport(Protocol):
    def send(self, request: dict) -> dict: ...


class HttpTransport:
    RETRYABLE_STATUS = (408, 429, 500, 502, 503, 504)

    def __init__(self, endpoint_url: str, api_key_env: str | None = None, timeout_s: float = 60.0):
        import httpx

        self.url = endpoint_url.rstrip("/")
        if not self.url.endswith("/chat/completions"):
            self.url += "/chat/completions"
        self.api_key_env = api_key_env
        self._client = httpx.Client(timeout=timeout_s)

    @property
    def identity(self) -> str:
        return self.url

    def send(self, request: dict) -> dict:
        import httpx

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env) if self.api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._client.post(self.url, json=request, headers=headers)
        except httpx.TimeoutException as e:
            raise TransientError(f"timeout talking to {self.url}: {e}", deadline=True) from e
        except httpx.TransportError as e:
            raise TransientError(f"cannot reach {self.url}: {e}") from e
        if resp.status_code in self.RETRYABLE_STATUS:
            raise TransientError(f"{self.url} answered {resp.status_code}")
        if resp.status_code >= 400:
            raise EndpointUnavailable(f"{self.url} answered {resp.status_code}: {resp.text[:300]}")
        try:
            return resp.json()
        except ValueError as e:
            raise MalformedReply(f"non-JSON body from {self.url}") from e

    def close(self):
        self._client.close()


class ScriptedTransport:
    """Stub endpoint replaying canned replies.

    ``replies`` is either a list consumed in order (strings, response dicts,
    or exceptions to raise) or a callable ``request -> str | dict``.
    """

    identity = "scripted"

    def __init__(self, replies: Sequence[Any] | Callable[[dict], Any], cycle: bool = False):
        self._fn = replies if callable(replies) else None
        self._queue = collections.deque([] if callable(replies) else list(replies))
        self._all = list(self._queue)
        self._cycle = cycle
        self._lock = threading.Lock()
        self.requests: list[dict] = []

    def send(self, request: dict) -> dict:
        with self._lock:
            self.requests.append(request)
            if self._fn is not None:
                item = self._fn(request)
            else:
                if not self._queue:
                    if not self._cycle or not self._all:
                        raise CassetteMiss("scripted transport ran out of replies")
                    self._queue.extend(self._all)
                item = self._queue.popleft()
        if isinstance(item, BaseException):
            raise item
        if isinstance(item, str):
            return completion_response(item)
        return item


class CassetteTransport:
    """Record/replay of request/response pairs in a JSONL file.

    Replay matches on a hash of the canonical request. Identical requests
    are answered in the order they were recorded.
    """

    def __init__(self, path: str | Path, mode: str = "replay", inner: Transport | None = None):
        if mode not in ("replay", "record"):
            raise ValueError(f"unknown cassette mode {mode!r}")
        if mode == "record" and inner is None:
            raise ValueError("record mode needs an inner transport")
        self.path = Path(path)
        self.mode = mode
        self.inner = inner
        self._lock = threading.Lock()
        self._entries: dict[str, collections.deque] = collections.defaultdict(collections.deque)
        if mode == "replay":
            if not self.path.exists():
                raise EndpointUnavailable(f"cassette {self.path} does not exist")
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        key = row.get("key") or request_key(row["request"])
                        self._entries[key].append(row["response"])

    @property
    def identity(self) -> str:
        return f"cassette:{self.path.name}"

    def send(self, request: dict) -> dict:
        key = request_key(request)
        if self.mode == "replay":
            with self._lock:
                q = self._entries.get(key)
                if not q:
                    raise CassetteMiss(f"no recorded response for request {key[:12]}")
                return q.popleft()
        response = self.inner.send(request)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"key": key, "request": request, "response": response}, ensure_ascii=False) + "\n")
        return response


# --- client ------------------------------------------------------------------


class ChatClient:
    """Retrying client shared by all endpoint roles."""

    def __init__(
        self,
        transport: Transport,
        model: str = "default",
        max_retries: int = 3,
        backoff_s: float = 0.5,
        max_inflight: int = 8,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.transport = transport
        self.model = model
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._inflight = threading.BoundedSemaphore(max(1, max_inflight))
        self._sleep = sleep

    @property
    def identity(self) -> str:
        return f"{getattr(self.transport, 'identity', type(self.transport).__name__)}#{self.model}"

    def complete(self, messages: Sequence[ChatMessage], sampling: Sampling | None = None) -> PolicyReply:
        sampling = sampling or Sampling()
        request = build_request(self.model, messages, sampling)
        last: TransientError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                with self._inflight:
                    response = self.transport.send(request)
            except TransientError as e:
                log.warning("transient endpoint failure (attempt %d): %s", attempt + 1, e)
                last = e
                continue
            return parse_reply(response, sampling.want_logprobs)
        if last is not None and last.deadline:
            raise DeadlineExceeded(str(last))
        raise EndpointUnavailable(f"endpoint unavailable after {self.max_retries + 1} attempts: {last}")


policy_complete = ChatClient.complete


def parse_reply(response: Any, want_logprobs: bool = False) -> PolicyReply:
    try:
        choice = response["choices"][0]
        text = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as e:
        raise MalformedReply(f"reply lacks choices[0].message.content: {e}") from None
    if not isinstance(text, str):
        raise MalformedReply("reply content is not a string")
    lps = None
    if want_logprobs:
        raw = (choice.get("logprobs") or {}).get("content") if isinstance(choice, dict) else None
        if raw is not None:
            try:
                lps = tuple((str(t["token"]), float(t["logprob"])) for t in raw)
            except (KeyError, TypeError, ValueError) as e:
                raise MalformedReply(f"bad logprobs payload: {e}") from None
            if not all(math.isfinite(lp) for _, lp in lps):
                raise MalformedReply("non-finite logprob in reply")
    return PolicyReply(text, lps)


def require_logprobs(reply: PolicyReply) -> tuple[tuple[str, float], ...]:
    if reply.token_logprobs is None:
        raise CapabilityError("the policy endpoint did not return token logprobs")
    return reply.token_logprobs


# --- judge -------------------------------------------------------------------

JUDGE_TEMPLATE_VERSION = "judge-v1"

JUDGE_TEMPLATE = """You are grading an answer to a chart question.
Question: {question}
Reference answer: {gold}
Candidate answer: {pred}
Does the candidate answer mean the same as the reference answer? Reply with exactly one line:
verdict: yes
or
verdict: no"""

_VERDICT_RE = re.compile(r"\bverdict\s*[:=]\s*\**\s*(yes|no)\b", re.IGNORECASE)


def parse_yes_no(raw: str) -> bool:
    m = _VERDICT_RE.search(raw)
    if m:
        return m.group(1).lower() == "yes"
    head = re.sub(r"[^a-z]", " ", raw.strip().lower()).split()
    if head and head[0] in ("yes", "no"):
        return head[0] == "yes"
    raise UnparseableVerdict(f"cannot read a yes/no verdict from {raw[:80]!r}")


def judge_answer(judge: ChatClient, question: str, gold: str, pred: str) -> JudgeVerdict:
    prompt = JUDGE_TEMPLATE.format(question=question, gold=gold, pred=pred)
    reply = judge.complete([ChatMessage.text(Role.USER, prompt)], Sampling(temperature=0.0, max_tokens=16))
    return JudgeVerdict(parse_yes_no(reply.text), reply.text)
