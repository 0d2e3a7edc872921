"""Provider-agnostic chat completions with record/replay cassettes.

Every agent in the pipeline talks through one gateway. In replay mode the
gateway is a pure lookup table keyed by request digest, which is what makes
whole pipeline runs deterministic and offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CassetteMissError, TransportError

CASSETTE_SCHEMA_VERSION = 1

MODE_LIVE = "live"
MODE_RECORD = "record"
MODE_REPLAY = "replay"
GATEWAY_MODES = (MODE_LIVE, MODE_RECORD, MODE_REPLAY)

ROLE_SYSTEM = "system"
ROLE_USER = "user"
ROLE_ASSISTANT = "assistant"
_ROLES = (ROLE_SYSTEM, ROLE_USER, ROLE_ASSISTANT)

ENV_API_BASE = "TYPEFORGE_API_BASE"
ENV_API_KEY = "TYPEFORGE_API_KEY"
ENV_MODEL = "TYPEFORGE_MODEL"


@dataclass(frozen=True)
class ChatTurn:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.content:
            raise ValueError("turn content must be non-empty")


class Conversation:
    """An append-only turn list; earlier turns are never rewritten."""

    def __init__(self, turns: tuple[ChatTurn, ...] = ()):
        self._turns: list[ChatTurn] = []
        for turn in turns:
            self.append_turn(turn)

    @property
    def turns(self) -> tuple[ChatTurn, ...]:
        return tuple(self._turns)

    def append(self, role: str, content: str) -> None:
        self.append_turn(ChatTurn(role, content))

    def append_turn(self, turn: ChatTurn) -> None:
        if not self._turns and turn.role == ROLE_ASSISTANT:
            raise ValueError("a conversation must start with a system or user turn")
        self._turns.append(turn)

    def copy(self) -> "Conversation":
        return Conversation(self.turns)

    def to_payload(self) -> list[dict]:
        return [{"role": t.role, "content": t.content} for t in self._turns]

    def __len__(self) -> int:
        return len(self._turns)


@dataclass(frozen=True)
class ModelConfig:
    model_id: str = "typeforge-default"
    temperature: float = 0.0
    max_tokens: int = 2048
    timeout_s: float = 60.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @classmethod
    def from_env(cls, **overrides) -> "ModelConfig":
        model = os.environ.get(ENV_MODEL)
        if model and "model_id" not in overrides:
            overrides["model_id"] = model
        return cls(**overrides)


def request_digest(conv: Conversation, cfg: ModelConfig) -> str:
    """Stable digest over the turn sequence and the sampling-relevant config.

    Timeouts, timestamps, and credentials are deliberately excluded.
    """
    material = json.dumps(
        {
            "turns": [[t.role, t.content] for t in conv.turns],
            "model_id": cfg.model_id,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class Cassette:
    """A persisted map from request digest to recorded response text."""

    def __init__(self, entries: dict[str, dict] | None = None, metadata: dict | None = None):
        self.entries: dict[str, dict] = dict(entries or {})
        self.metadata: dict = dict(metadata or {})

    @classmethod
    def load(cls, path: Path | str) -> "Cassette":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(entries=payload.get("entries", {}), metadata=payload.get("metadata", {}))

    def save(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "schema_version": CASSETTE_SCHEMA_VERSION,
            "metadata": self.metadata,
            "entries": self.entries,
        }
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False), encoding="utf-8")
        tmp.replace(path)

    def get(self, digest: str) -> str | None:
        entry = self.entries.get(digest)
        return None if entry is None else entry["response"]

    def put(self, digest: str, response: str, model_id: str) -> None:
        self.entries[digest] = {"response": response, "model_id": model_id}

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class GatewayStats:
    calls: int = 0
    attempts: int = 0
    retries: int = 0
    replays: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def reset(self) -> None:
        with self._lock:
            self.calls = self.attempts = self.retries = self.replays = 0


def _http_transport(payload: dict, api_base: str, api_key: str | None, timeout_s: float) -> str:
    import requests

    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    url = api_base.rstrip("/") + "/chat/completions"
    try:
        response = requests.post(url, json=payload, headers=headers, timeout=timeout_s)
    except requests.RequestException as exc:
        raise TransportError(f"transport failure: {exc}") from exc
    if response.status_code != 200:
        raise TransportError(
            f"provider returned HTTP {response.status_code}", status=response.status_code
        )
    body = response.json()
    try:
        return body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed provider response: {exc}") from exc


class LLMGateway:
    """Chat-completion access with live, record, and replay modes.

    Safe for concurrent use: cassette writes are serialized internally. A
    custom ``transport`` callable (payload -> response text) replaces the
    HTTP layer, which is how tests script providers without a network.
    """

    MAX_ATTEMPTS = 3

    def __init__(
        self,
        mode: str = MODE_REPLAY,
        config: ModelConfig | None = None,
        cassette: Cassette | None = None,
        cassette_path: Path | str | None = None,
        transport=None,
        api_base: str | None = None,
        api_key: str | None = None,
        sleeper=time.sleep,
    ):
        if mode not in GATEWAY_MODES:
            raise ValueError(f"unknown gateway mode {mode!r}")
        if mode in (MODE_RECORD, MODE_REPLAY) and cassette is None and cassette_path is None:
            raise ValueError(f"{mode} mode requires a cassette")
        self.mode = mode
        self.config = config or ModelConfig.from_env()
        self.cassette_path = Path(cassette_path) if cassette_path else None
        if cassette is not None:
            self.cassette = cassette
        elif self.cassette_path and self.cassette_path.exists():
            self.cassette = Cassette.load(self.cassette_path)
        elif mode == MODE_RECORD:
            self.cassette = Cassette(metadata={"model_id": self.config.model_id})
        elif mode == MODE_REPLAY:
            raise ValueError(f"replay cassette {cassette_path} does not exist")
        else:
            self.cassette = None
        self._transport = transport
        self._api_base = api_base or os.environ.get(ENV_API_BASE)
        self._api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        self._sleeper = sleeper
        self._lock = threading.Lock()
        self.stats = GatewayStats()

    def complete(self, conv: Conversation, cfg: ModelConfig | None = None) -> str:
        cfg = cfg or self.config
        digest = request_digest(conv, cfg)
        with self.stats._lock:
            self.stats.calls += 1
        if self.mode == MODE_REPLAY:
            response = self.cassette.get(digest)
            if response is None:
                raise CassetteMissError(digest)
            with self.stats._lock:
                self.stats.replays += 1
            return response
        response = self._call_with_retries(conv, cfg)
        if self.mode == MODE_RECORD:
            with self._lock:
                self.cassette.put(digest, response, cfg.model_id)
                if self.cassette_path:
                    self.cassette.save(self.cassette_path)
        return response

    def save_cassette(self, path: Path | str | None = None) -> None:
        target = Path(path) if path else self.cassette_path
        if target is None:
            raise ValueError("no cassette path to save to")
        with self._lock:
            self.cassette.save(target)

    def _call_with_retries(self, conv: Conversation, cfg: ModelConfig) -> str:
        payload = {
            "model": cfg.model_id,
            "messages": conv.to_payload(),
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        delay = 1.0
        last_error: TransportError | None = None
        for attempt in range(1, self.MAX_ATTEMPTS + 1):
            with self.stats._lock:
                self.stats.attempts += 1
            try:
                if self._transport is not None:
                    return self._transport(payload)
                if not self._api_base:
                    raise TransportError(
                        f"no API base configured; set {ENV_API_BASE} or pass api_base"
                    )
                return _http_transport(payload, self._api_base, self._api_key, cfg.timeout_s)
            except TransportError as exc:
                last_error = exc
                if attempt < self.MAX_ATTEMPTS:
                    with self.stats._lock:
                        self.stats.retries += 1
                    self._sleeper(delay)
                    delay *= 2
        last_error.attempts = self.MAX_ATTEMPTS
        raise last_error
