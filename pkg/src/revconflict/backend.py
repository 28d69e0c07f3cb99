"""Chat-completion backends: a live HTTP client and a deterministic scripted stub.

Every model call in the package flows through ``Backend.complete``. The live
client speaks the common chat-completions wire shape (``model``, ``messages``,
sampling fields in; ``choices[0].message.content`` plus ``usage`` out). The
scripted backend replays canned responses keyed by a fingerprint of the
message sequence, which is what makes full pipeline runs reproducible.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import requests

from .model import PipelineResult, RoleUsage, _require

logger = logging.getLogger(__name__)

_VALID_ROLES = ("system", "user", "assistant")


class BackendError(Exception):
    """Base class for model-access failures."""


class TransportError(BackendError):
    """Network or HTTP failure that survived the retry policy."""


class CredentialError(BackendError):
    """A named credential environment variable is not set."""


class ScriptMiss(BackendError):
    """The scripted backend has no entry for a fingerprint."""

    def __init__(self, fingerprint: str, nearest: str | None):
        self.fingerprint = fingerprint
        self.nearest = nearest
        hint = f"; nearest registered: {nearest}" if nearest else "; script is empty"
        super().__init__(f"no scripted response for fingerprint {fingerprint}{hint}")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        _require(self.role in _VALID_ROLES, f"role must be one of {_VALID_ROLES}")
        if self.role in ("system", "user"):
            _require(bool(self.content), f"{self.role} message content must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class DecodingConfig:
    temperature: float = 0.0
    top_p: float = 1.0
    top_k: int | None = None
    seed: int = 42
    max_output_tokens: int = 8192

    def __post_init__(self) -> None:
        _require(self.temperature >= 0, "temperature must be >= 0")
        _require(0 < self.top_p <= 1, "top_p must be in (0, 1]")
        _require(self.max_output_tokens > 0, "max_output_tokens must be > 0")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_s: float = 0.5

    def __post_init__(self) -> None:
        _require(self.max_attempts >= 1, "max_attempts must be >= 1")
        _require(self.backoff_s >= 0, "backoff_s must be >= 0")


@dataclass(frozen=True)
class ChatResponse:
    """Model text plus accounting. ``text`` may be empty; a transport
    failure raises instead."""

    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    truncated: bool = False

    def __post_init__(self) -> None:
        _require(self.input_tokens >= 0, "input_tokens must be >= 0")
        _require(self.output_tokens >= 0, "output_tokens must be >= 0")


@dataclass(frozen=True)
class BackendBinding:
    """Which endpoint and decoding settings a pipeline role uses.

    ``credential_env`` names an environment variable; the key itself is
    never stored in config. In scripted mode the endpoint fields are inert.
    """

    role: str
    model: str = "scripted"
    base_url: str = ""
    credential_env: str | None = None
    decoding: DecodingConfig = field(default_factory=DecodingConfig)
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        _require(bool(self.role), "binding role must be non-empty")


def fingerprint(messages: Sequence[ChatMessage]) -> str:
    """Stable hash of the role+content sequence, independent of decoding config."""
    canonical = json.dumps(
        [[m.role, m.content] for m in messages],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Backend(Protocol):
    def complete(
        self, binding: BackendBinding, messages: Sequence[ChatMessage]
    ) -> ChatResponse: ...


class HttpBackend:
    """Chat-completions client with bounded exponential-backoff retries."""

    RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(self, timeout_s: float = 120.0, session: requests.Session | None = None):
        self.timeout_s = timeout_s
        self.session = session or requests.Session()

    def _headers(self, binding: BackendBinding) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if binding.credential_env:
            key = os.environ.get(binding.credential_env)
            if not key:
                raise CredentialError(
                    f"environment variable {binding.credential_env} is not set "
                    f"(required by role {binding.role!r})"
                )
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, binding: BackendBinding, messages: Sequence[ChatMessage]) -> dict:
        decoding = binding.decoding
        payload = {
            "model": binding.model,
            "messages": [m.to_dict() for m in messages],
            "temperature": decoding.temperature,
            "top_p": decoding.top_p,
            "seed": decoding.seed,
            "max_tokens": decoding.max_output_tokens,
        }
        # top_k is nonstandard; omit entirely when disabled so strict
        # providers don't reject the request.
        if decoding.top_k is not None:
            payload["top_k"] = decoding.top_k
        return payload

    def complete(
        self, binding: BackendBinding, messages: Sequence[ChatMessage]
    ) -> ChatResponse:
        _require(bool(messages), "messages must be non-empty")
        url = binding.base_url.rstrip("/") + "/chat/completions"
        headers = self._headers(binding)
        payload = self._payload(binding, messages)
        last_error: str = "no attempt made"
        for attempt in range(1, binding.retry.max_attempts + 1):
            if attempt > 1 and binding.retry.backoff_s > 0:
                time.sleep(binding.retry.backoff_s * 2 ** (attempt - 2))
            try:
                response = self.session.post(
                    url, json=payload, headers=headers, timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
                logger.warning("attempt %d/%d failed: %s", attempt, binding.retry.max_attempts, last_error)
                continue
            if response.status_code in self.RETRYABLE_STATUS:
                last_error = f"HTTP {response.status_code}"
                logger.warning("attempt %d/%d failed: %s", attempt, binding.retry.max_attempts, last_error)
                continue
            if response.status_code != 200:
                raise TransportError(
                    f"HTTP {response.status_code} from {url}: {response.text[:500]}"
                )
            return self._parse(response.json(), url)
        raise TransportError(
            f"{url} failed after {binding.retry.max_attempts} attempts ({last_error})"
        )

    @staticmethod
    def _parse(data: dict, url: str) -> ChatResponse:
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload from {url}: {exc}") from exc
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            truncated=choice.get("finish_reason") == "length",
        )


@dataclass(frozen=True)
class ScriptEntry:
    fingerprint: str
    response: str
    input_tokens: int = 0
    output_tokens: int = 0
    truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "response": self.response,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScriptEntry":
        return cls(
            fingerprint=data["fingerprint"],
            response=data["response"],
            input_tokens=int(data.get("input_tokens", 0)),
            output_tokens=int(data.get("output_tokens", 0)),
            truncated=bool(data.get("truncated", False)),
        )


def load_script(path: str | Path) -> list[ScriptEntry]:
    entries = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                entries.append(ScriptEntry.from_dict(json.loads(line)))
    return entries


def write_script(entries: Iterable[ScriptEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for entry in entries:
            handle.write(json.dumps(entry.to_dict(), ensure_ascii=False))
            handle.write("\n")


class ScriptedBackend:
    """Replays registered responses; a pure function of the message fingerprint."""

    def __init__(self, entries: Iterable[ScriptEntry]):
        self._entries: dict[str, ScriptEntry] = {}
        for entry in entries:
            # last registration wins, mirroring re-recorded transcripts
            self._entries[entry.fingerprint] = entry

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        return cls(load_script(path))

    def __len__(self) -> int:
        return len(self._entries)

    def complete(
        self, binding: BackendBinding, messages: Sequence[ChatMessage]
    ) -> ChatResponse:
        key = fingerprint(messages)
        entry = self._entries.get(key)
        if entry is None:
            nearest = difflib.get_close_matches(key, self._entries.keys(), n=1, cutoff=0.0)
            raise ScriptMiss(key, nearest[0] if nearest else None)
        return ChatResponse(
            text=entry.response,
            input_tokens=entry.input_tokens,
            output_tokens=entry.output_tokens,
            truncated=entry.truncated,
        )


class RecordingBackend:
    """Wraps a backend and captures every exchange as a script entry."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self._lock = threading.Lock()
        self._entries: list[ScriptEntry] = []

    def complete(
        self, binding: BackendBinding, messages: Sequence[ChatMessage]
    ) -> ChatResponse:
        response = self.inner.complete(binding, messages)
        entry = ScriptEntry(
            fingerprint=fingerprint(messages),
            response=response.text,
            input_tokens=response.input_tokens,
            output_tokens=response.output_tokens,
            truncated=response.truncated,
        )
        with self._lock:
            self._entries.append(entry)
        return response

    @property
    def entries(self) -> list[ScriptEntry]:
        with self._lock:
            return list(self._entries)

    def write(self, path: str | Path) -> None:
        write_script(self.entries, path)


class UsageMeter:
    """Thread-safe per-role token accumulator for one pipeline run."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._usage: dict[str, RoleUsage] = {}

    def add(self, role: str, response: ChatResponse) -> None:
        with self._lock:
            current = self._usage.get(role, RoleUsage())
            self._usage[role] = current.plus(response.input_tokens, response.output_tokens)

    def snapshot(self) -> tuple[tuple[str, RoleUsage], ...]:
        with self._lock:
            return tuple(sorted(self._usage.items()))


def usage_report(results: Sequence[PipelineResult]) -> dict:
    """Aggregate token usage: totals and per-pair means, per role and overall."""
    per_role: dict[str, RoleUsage] = {}
    for result in results:
        for role, usage in result.token_usage:
            current = per_role.get(role, RoleUsage())
            per_role[role] = RoleUsage(
                input_tokens=current.input_tokens + usage.input_tokens,
                output_tokens=current.output_tokens + usage.output_tokens,
                calls=current.calls + usage.calls,
            )
    pair_count = len(results)

    def summarize(usage: RoleUsage) -> dict:
        summary = usage.to_dict()
        if pair_count:
            summary["mean_input_tokens_per_pair"] = usage.input_tokens / pair_count
            summary["mean_output_tokens_per_pair"] = usage.output_tokens / pair_count
        else:
            summary["mean_input_tokens_per_pair"] = 0.0
            summary["mean_output_tokens_per_pair"] = 0.0
        return summary

    total = RoleUsage(
        input_tokens=sum(u.input_tokens for u in per_role.values()),
        output_tokens=sum(u.output_tokens for u in per_role.values()),
        calls=sum(u.calls for u in per_role.values()),
    )
    return {
        "pairs": pair_count,
        "roles": {role: summarize(per_role[role]) for role in sorted(per_role)},
        "total": summarize(total),
    }
