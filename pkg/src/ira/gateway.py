"""Uniform client layer for the four frozen external model roles.

Backends are selected per endpoint by ``base_url``: an HTTP URL talks the
JSON wire protocol (POST /v1/complete, /v1/vqa, /v1/caption, /v1/embed),
while ``stub:<seed>`` routes to the deterministic offline backend. Responses
are cached in a content-addressed on-disk store keyed by (role, model,
request hash); eviction is manual.
"""

from __future__ import annotations

import base64
import collections
import hashlib
import json
import os
import random
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .errors import (
    DimensionMismatch,
    RetriesExhausted,
    ServiceError,
    Timeout,
    UnreadableImage,
)
from .stubs import StubBackend, StubFixtures

ROLES = ("completion", "vqa", "caption", "embed_text", "embed_image")
TRANSIENT_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass
class ServiceEndpointConfig:
    """Connection settings for one model role."""

    role: str
    base_url: str
    model_name: str
    timeout: float = 30.0
    max_retries: int = 2
    rate_limit: float | None = None
    embed_dim: int | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.rate_limit is not None and self.rate_limit <= 0:
            raise ValueError("rate_limit must be > 0 when set")

    @property
    def is_stub(self) -> bool:
        return self.base_url.startswith("stub:")

    @property
    def stub_seed(self) -> int:
        return int(self.base_url.split(":", 1)[1] or 0)


@dataclass
class CompletionRequest:
    prompt: str
    max_tokens: int
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        self.stop_sequences = tuple(self.stop_sequences)

    def payload(self, model: str) -> dict:
        return {
            "model": model,
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "stop": list(self.stop_sequences),
        }


@dataclass
class EmbeddingVector:
    values: np.ndarray
    dim: int
    normalized: bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.values) != self.dim:
            raise DimensionMismatch(f"vector length {len(self.values)} != declared dim {self.dim}")
        if self.normalized and abs(np.linalg.norm(self.values) - 1.0) >= 1e-6:
            raise DimensionMismatch("vector flagged normalized but |v|_2 != 1")

    @classmethod
    def from_raw(cls, values) -> "EmbeddingVector":
        """Build an L2-normalized vector from raw service output."""
        arr = np.asarray(values, dtype=np.float64)
        norm = np.linalg.norm(arr)
        if norm > 0:
            return cls(arr / norm, dim=len(arr), normalized=True)
        return cls(arr, dim=len(arr), normalized=False)


class ResponseCache:
    """Content-addressed on-disk store; one JSON record per key, append-safe."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        with self._lock:
            return json.loads(path.read_text(encoding="utf-8"))

    def put(self, key: str, record: dict) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with self._lock:
            tmp.write_text(json.dumps(record, sort_keys=True), encoding="utf-8")
            os.replace(tmp, path)


class RateLimiter:
    """Sliding-window limiter: at most ``rate`` issues in any 1-second window."""

    def __init__(self, rate: float, time_fn=time.monotonic, sleep_fn=time.sleep):
        self.rate = rate
        self._time = time_fn
        self._sleep = sleep_fn
        self._issued: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self._time()
                while self._issued and self._issued[0] <= now - 1.0:
                    self._issued.popleft()
                if len(self._issued) < self.rate:
                    self._issued.append(now)
                    return
                self._sleep(self._issued[0] + 1.0 - now)


def cache_key(role: str, model: str, payload: dict) -> str:
    blob = json.dumps({"role": role, "model": model, "request": payload}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def read_image_b64(image_ref: str | Path) -> str:
    try:
        data = Path(image_ref).read_bytes()
    except OSError as e:
        raise UnreadableImage(f"cannot read image {image_ref!r}: {e}") from e
    return base64.b64encode(data).decode("ascii")


class ModelGateway:
    """Thread-safe client over the configured endpoints.

    Backend invocations are counted per role (``call_count``), rate limited
    when configured, bounded to ``max_in_flight`` concurrent requests per
    endpoint, and served from the cache when one is attached.
    """

    def __init__(
        self,
        endpoints: dict[str, ServiceEndpointConfig],
        cache_dir: str | Path | None = None,
        stub_fixtures: StubFixtures | str | Path | None = None,
        max_in_flight: int = 4,
        time_fn=time.monotonic,
        sleep_fn=time.sleep,
        backoff_base: float = 1.0,
        jitter_seed: int = 0,
    ):
        for role, cfg in endpoints.items():
            if cfg.role != role:
                raise ValueError(f"endpoint registered under {role!r} has role {cfg.role!r}")
        self.endpoints = dict(endpoints)
        if cache_dir is None:
            cache_dir = os.environ.get("IRA_CACHE_DIR") or None
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        if isinstance(stub_fixtures, (str, Path)):
            stub_fixtures = StubFixtures.load(stub_fixtures)
        self._fixtures = stub_fixtures
        self._stubs: dict[str, StubBackend] = {}
        self._sleep = sleep_fn
        self._backoff_base = backoff_base
        self._jitter = random.Random(jitter_seed)
        self._session = requests.Session()
        self._limiters = {
            role: RateLimiter(cfg.rate_limit, time_fn, sleep_fn)
            for role, cfg in self.endpoints.items()
            if cfg.rate_limit is not None
        }
        self._semaphores = {role: threading.Semaphore(max_in_flight) for role in self.endpoints}
        self.backend_calls: collections.Counter = collections.Counter()
        self.request_log: deque = deque(maxlen=1000)
        self._counter_lock = threading.Lock()

    # -- plumbing ----------------------------------------------------------

    def _config(self, role: str) -> ServiceEndpointConfig:
        try:
            return self.endpoints[role]
        except KeyError:
            raise ValueError(f"no endpoint configured for role {role!r}") from None

    def _stub(self, cfg: ServiceEndpointConfig) -> StubBackend:
        if cfg.role not in self._stubs:
            self._stubs[cfg.role] = StubBackend(
                cfg.stub_seed, self._fixtures, embed_dim=cfg.embed_dim or 64
            )
        return self._stubs[cfg.role]

    def call_count(self, role: str | None = None) -> int:
        if role is None:
            return sum(self.backend_calls.values())
        return self.backend_calls[role]

    def _headers(self) -> dict:
        headers = {}
        api_key = os.environ.get("IRA_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _post_with_retry(self, cfg: ServiceEndpointConfig, endpoint: str, payload: dict) -> dict:
        url = cfg.base_url.rstrip("/") + endpoint
        attempts = cfg.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt > 0:
                delay = self._backoff_base * 2 ** (attempt - 1)
                delay *= 1.0 + self._jitter.uniform(-0.2, 0.2)
                self._sleep(delay)
            try:
                resp = self._session.post(
                    url, json=payload, timeout=cfg.timeout, headers=self._headers()
                )
            except requests.exceptions.Timeout:
                last_error = Timeout(f"request to {url} timed out after {cfg.timeout}s")
                continue
            except requests.exceptions.ConnectionError as e:
                last_error = ServiceError(0, f"connection error: {e}")
                continue
            if resp.status_code == 200:
                return resp.json()
            if resp.status_code in TRANSIENT_STATUSES:
                last_error = ServiceError(resp.status_code, resp.text)
                continue
            raise ServiceError(resp.status_code, resp.text)
        assert last_error is not None
        if attempts == 1:
            raise last_error
        raise RetriesExhausted(f"{attempts} attempts to {url} failed: {last_error}") from last_error

    def _dispatch(self, cfg: ServiceEndpointConfig, endpoint: str, payload: dict, stub_fn) -> dict:
        """Cache lookup, then one rate-limited, in-flight-bounded backend call."""
        key = cache_key(cfg.role, cfg.model_name, payload)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return cached["response"]
        if cfg.role in self._limiters:
            self._limiters[cfg.role].acquire()
        with self._semaphores[cfg.role]:
            with self._counter_lock:
                self.backend_calls[cfg.role] += 1
                self.request_log.append((cfg.role, payload))
            if cfg.is_stub:
                response = stub_fn(self._stub(cfg))
            else:
                response = self._post_with_retry(cfg, endpoint, payload)
        if self.cache is not None:
            self.cache.put(key, {"role": cfg.role, "model": cfg.model_name, "response": response})
        return response

    # -- the four operations -------------------------------------------------

    def complete(self, req: CompletionRequest) -> str:
        cfg = self._config("completion")
        payload = req.payload(cfg.model_name)
        response = self._dispatch(
            cfg,
            "/v1/complete",
            payload,
            lambda stub: {"text": stub.complete(req.prompt, req.max_tokens, req.stop_sequences)},
        )
        return response["text"]

    def vqa_answer(self, image_ref: str, question: str) -> str:
        cfg = self._config("vqa")
        if cfg.is_stub:
            payload = {"model": cfg.model_name, "image_ref": str(image_ref), "question": question}
        else:
            payload = {
                "model": cfg.model_name,
                "image_b64": read_image_b64(image_ref),
                "question": question,
            }
        response = self._dispatch(
            cfg, "/v1/vqa", payload, lambda stub: {"answer": stub.vqa(str(image_ref), question)}
        )
        return response["answer"]

    def caption(self, image_ref: str, question: str | None = None) -> str:
        cfg = self._config("caption")
        if cfg.is_stub:
            payload = {"model": cfg.model_name, "image_ref": str(image_ref)}
        else:
            payload = {"model": cfg.model_name, "image_b64": read_image_b64(image_ref)}
        if question is not None:
            payload["question"] = question
        response = self._dispatch(
            cfg,
            "/v1/caption",
            payload,
            lambda stub: {"caption": stub.caption(str(image_ref), question)},
        )
        return response["caption"]

    def embed(self, payload_value: str, kind: str) -> EmbeddingVector:
        if kind not in ("text", "image"):
            raise ValueError(f"unknown embedding kind {kind!r}")
        role = "embed_text" if kind == "text" else "embed_image"
        cfg = self._config(role)
        if kind == "text":
            payload = {"model": cfg.model_name, "kind": "text", "text": payload_value}
        elif cfg.is_stub:
            payload = {"model": cfg.model_name, "kind": "image", "image_ref": str(payload_value)}
        else:
            payload = {
                "model": cfg.model_name,
                "kind": "image",
                "image_b64": read_image_b64(payload_value),
            }
        stub_payload = payload_value if kind == "text" else str(payload_value)
        response = self._dispatch(
            cfg,
            "/v1/embed",
            payload,
            lambda stub: {"vector": stub.embed(kind, stub_payload), "dim": stub.embed_dim},
        )
        vector = response["vector"]
        declared = response.get("dim", len(vector))
        if len(vector) != declared:
            raise DimensionMismatch(
                f"service declared dim {declared} but returned {len(vector)} values"
            )
        if cfg.embed_dim is not None and declared != cfg.embed_dim:
            raise DimensionMismatch(
                f"endpoint configured for dim {cfg.embed_dim} but service reports {declared}"
            )
        return EmbeddingVector.from_raw(vector)

    def embed_text(self, text: str) -> EmbeddingVector:
        return self.embed(text, "text")

    def embed_image(self, image_ref: str) -> EmbeddingVector:
        return self.embed(image_ref, "image")


def stub_endpoints(
    seed: int = 0,
    embed_dim: int = 64,
    model_name: str = "stub-model",
) -> dict[str, ServiceEndpointConfig]:
    """Endpoint map with every role served by the seeded stub backend."""
    return {
        role: ServiceEndpointConfig(
            role=role,
            base_url=f"stub:{seed}",
            model_name=model_name,
            embed_dim=embed_dim if role.startswith("embed") else None,
        )
        for role in ROLES
    }
