"""Chat-completions clients: HTTP endpoint, prompt-hash replay file, and in-process scripts."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass
from typing import Callable, Protocol

import httpx

log = logging.getLogger(__name__)


class LLMError(RuntimeError):
    """Transport or protocol failure talking to a model endpoint."""


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ChatClient(Protocol):
    def complete(self, prompt: str) -> str: ...


@dataclass(frozen=True)
class EndpointSpec:
    url: str = "http://localhost:8000/v1/chat/completions"
    model: str = "gpt-4o-mini"
    key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_in_flight: int = 8
    temperature: float = 0.0


class HTTPChatClient:
    """OpenAI-compatible ``/chat/completions`` over HTTP, bounded in-flight requests."""

    def __init__(self, spec: EndpointSpec, transport: httpx.BaseTransport | None = None):
        self.spec = spec
        self._sem = threading.BoundedSemaphore(max(1, spec.max_in_flight))
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(spec.key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(timeout=spec.timeout, headers=headers, transport=transport)

    def complete(self, prompt: str) -> str:
        body = {
            "model": self.spec.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.spec.temperature,
        }
        with self._sem:
            try:
                resp = self._http.post(self.spec.url, json=body)
                resp.raise_for_status()
                data = resp.json()
            except (httpx.HTTPError, ValueError) as exc:
                log.warning("chat request failed: %s", type(exc).__name__)
                raise LLMError(str(exc)) from exc
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise LLMError("malformed chat-completions payload") from exc

    def close(self) -> None:
        self._http.close()


class ReplayClient:
    """Answers from a JSONL file of ``{"prompt_hash": ..., "response": ...}`` rows."""

    def __init__(self, path: str | os.PathLike, default: str | None = None):
        self.table: dict[str, str] = {}
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                row = json.loads(line)
                try:
                    self.table[row["prompt_hash"]] = row["response"]
                except KeyError as exc:
                    raise ValueError(f"{path}:{n}: replay row missing {exc}") from None
        self.default = default

    def complete(self, prompt: str) -> str:
        h = prompt_hash(prompt)
        if h in self.table:
            return self.table[h]
        if self.default is not None:
            return self.default
        raise LLMError(f"no replay entry for prompt {h[:12]}")


class RecordingClient:
    """Wraps a client and keeps every (prompt_hash, response) for later replay."""

    def __init__(self, inner: ChatClient):
        self.inner = inner
        self.rows: list[dict] = []
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        out = self.inner.complete(prompt)
        with self._lock:
            self.rows.append({"prompt_hash": prompt_hash(prompt), "response": out})
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for row in sorted(self.rows, key=lambda r: r["prompt_hash"]):
                fh.write(json.dumps(row, sort_keys=True) + "\n")


class ScriptedClient:
    """Calls ``fn(prompt, call_index)``; the index counts calls made so far."""

    def __init__(self, fn: Callable[[str, int], str]):
        self.fn = fn
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            n = self.calls
            self.calls += 1
        return self.fn(prompt, n)
