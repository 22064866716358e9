"""Chat-completions client with deterministic decoding and a response cache.

Requests are cached on disk keyed by the SHA-256 of the canonical request
JSON, so a repeated run is served without any network traffic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import requests

from ..core import canonical_json
from ..errors import CacheCorruption, ProviderRefusal, TransportError
from ..harness import TOKEN, ModelBackend

log = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


@dataclass
class RemoteConfig:
    endpoint: str
    model: str
    api_key_env: str = "LAGSIM_API_KEY"
    seed: int = 0
    max_tokens: int = 32
    temperature: float = 0.0
    cache_dir: str = ".lagsim-cache"
    max_attempts: int = 4
    backoff: float = 0.5
    backoff_factor: float = 2.0
    timeout: float = 60.0
    min_interval: float = 0.0
    context_window: int = 4096

    def __post_init__(self):
        if self.temperature != 0:
            raise ValueError("only greedy decoding (temperature 0) is supported")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")

    @classmethod
    def from_toml(cls, path) -> "RemoteConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        data = data.get("remote", data)
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown remote options: {sorted(unknown)}")
        return cls(**data)


class RemoteChatBackend(ModelBackend):
    """Sends ``S`` as the system message and the rest of the context as the user message.

    Tokens are joined with single spaces on the way out and the reply is
    split on whitespace.  ``complete`` returns the whole reply, which the
    harness then segments into codewords.
    """

    kind = TOKEN
    share_safe = True

    def __init__(self, config: RemoteConfig, system_prompt: Sequence = (), session: requests.Session | None = None):
        self.config = config
        self.system_prompt = tuple(system_prompt)
        self.context_window = config.context_window
        self.cache_dir = Path(config.cache_dir)
        self.session = session or requests.Session()
        self.network_calls = 0
        self.attempts: list[dict] = []
        self._lock = threading.Lock()
        self._last_request = 0.0

    def describe(self) -> dict:
        c = self.config
        return {
            **super().describe(),
            "endpoint": c.endpoint,
            "model": c.model,
            "seed": c.seed,
            "temperature": c.temperature,
            "max_tokens": c.max_tokens,
            "system_prompt_tokens": len(self.system_prompt),
        }

    # -- request construction ---------------------------------------------------
    def build_request(self, context: Sequence) -> dict:
        ctx = list(context)
        n = len(self.system_prompt)
        if n and tuple(ctx[:n]) == self.system_prompt:
            system, user = ctx[:n], ctx[n:]
        else:
            system, user = [], ctx
        return {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": " ".join(str(t) for t in system)},
                {"role": "user", "content": " ".join(str(t) for t in user)},
            ],
            "temperature": self.config.temperature,
            "seed": self.config.seed,
            "max_tokens": self.config.max_tokens,
        }

    @staticmethod
    def request_hash(request: dict) -> str:
        return hashlib.sha256(canonical_json(request).encode("utf-8")).hexdigest()

    # -- cache ------------------------------------------------------------------
    def _paths(self, h: str) -> tuple[Path, Path]:
        return self.cache_dir / f"{h}.request.json", self.cache_dir / f"{h}.response.json"

    def cache_get(self, request: dict) -> str | None:
        h = self.request_hash(request)
        req_path, resp_path = self._paths(h)
        if not resp_path.exists():
            return None
        try:
            stored = req_path.read_bytes()
            resp = json.loads(resp_path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise CacheCorruption(f"unreadable cache entry {h}: {exc}") from exc
        if hashlib.sha256(stored).hexdigest() != h or resp.get("request_sha256") != h:
            raise CacheCorruption(f"cache entry {h} does not match its request hash")
        if not isinstance(resp.get("content"), str):
            raise CacheCorruption(f"cache entry {h} has no content")
        return resp["content"]

    def _atomic_write(self, path: Path, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def cache_put(self, request: dict, content: str) -> None:
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        h = self.request_hash(request)
        req_path, resp_path = self._paths(h)
        self._atomic_write(req_path, canonical_json(request).encode("utf-8"))
        body = {"request_sha256": h, "content": content}
        self._atomic_write(resp_path, canonical_json(body).encode("utf-8"))

    # -- transport --------------------------------------------------------------
    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _throttle(self) -> None:
        wait = self._last_request + self.config.min_interval - time.monotonic()
        if wait > 0:
            time.sleep(wait)
        self._last_request = time.monotonic()

    def _post(self, request: dict) -> str:
        c = self.config
        delay = c.backoff
        last_error = ""
        for attempt in range(1, c.max_attempts + 1):
            self._throttle()
            self.network_calls += 1
            try:
                resp = self.session.post(c.endpoint, json=request, headers=self._headers(), timeout=c.timeout)
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                self.attempts.append({"attempt": attempt, "error": last_error})
                log.warning("request attempt %d failed: %s", attempt, last_error)
            else:
                self.attempts.append({"attempt": attempt, "status": resp.status_code})
                log.info("request attempt %d: HTTP %d", attempt, resp.status_code)
                if resp.status_code == 200:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise TransportError(f"malformed provider response: {exc}") from exc
                if resp.status_code not in RETRYABLE_STATUS:
                    raise ProviderRefusal(resp.status_code, resp.text)
                last_error = f"HTTP {resp.status_code}"
            if attempt < c.max_attempts:
                time.sleep(delay)
                delay *= c.backoff_factor
        raise TransportError(f"giving up after {c.max_attempts} attempts: {last_error}")

    def respond(self, context: Sequence) -> str:
        request = self.build_request(context)
        cached = self.cache_get(request)
        if cached is not None:
            return cached
        with self._lock:
            cached = self.cache_get(request)
            if cached is not None:
                return cached
            content = self._post(request)
            self.cache_put(request, content)
        return content

    def complete(self, context, max_outputs, done):
        return self.respond(context).split()[:max_outputs]

    def next_output(self, context):
        toks = self.respond(context).split()
        return toks[0] if toks else None

    def config_dict(self) -> dict:
        return asdict(self.config)
