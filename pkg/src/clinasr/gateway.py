"""Provider-neutral access to text-generation models.

One implementation talks HTTP with retries, rate limiting, and secret
scrubbing; the scripted and callable gateways are bit-deterministic test
doubles. Structured-output extraction tolerates surrounding prose and
fenced blocks. Repair re-prompts are owned by callers, not the gateway.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, runtime_checkable

import httpx

REDACTED = "[redacted]"


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.1
    top_p: float = 0.95
    top_k: int = 40
    max_tokens: int = 65000

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be a positive integer")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be a positive integer")

    def to_dict(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "top_k": self.top_k,
            "max_tokens": self.max_tokens,
        }


# Conservative decoding for long-context alignment outputs.
ALIGNER_PRESET = DecodingParams(temperature=0.1, top_p=0.95, top_k=40, max_tokens=65000)
ALIGNER_MAX_OUTPUT_TOKENS = 65000


@dataclass(frozen=True)
class GenerationRequest:
    instruction: str
    payload: str
    params: DecodingParams = ALIGNER_PRESET
    response_contract: str = "free_text"  # or "structured_document"

    def __post_init__(self) -> None:
        if not self.instruction:
            raise ValueError("instruction must be nonempty")

    def digest(self) -> str:
        key = self.instruction + "\x00" + self.payload
        return hashlib.sha256(key.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenerationResult:
    text: str
    usage: dict[str, int] = field(default_factory=dict)
    latency: float = 0.0
    attempts: int = 1


@dataclass(frozen=True)
class ProviderProfile:
    name: str
    endpoint: str
    auth_env: str
    rate_limit_per_minute: int = 60
    retry_attempts: int = 3
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        if self.retry_attempts < 1:
            raise ValueError("retry attempts must be >= 1")
        if self.rate_limit_per_minute < 1:
            raise ValueError("rate limit must be >= 1 request/minute")

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "ProviderProfile":
        return ProviderProfile(
            name=d["name"],
            endpoint=d["endpoint"],
            auth_env=d["auth_env"],
            rate_limit_per_minute=int(d.get("rate_limit_per_minute", 60)),
            retry_attempts=int(d.get("retry_attempts", 3)),
            backoff_base=float(d.get("backoff_base", 0.5)),
        )


class GatewayError(RuntimeError):
    """Base class for generation failures."""


class AuthError(GatewayError):
    """Missing or rejected credentials."""


class RateLimitExhausted(GatewayError):
    """The provider kept refusing within the retry budget."""


class TransportError(GatewayError):
    """Transport kept failing within the retry budget."""


class ResponseContractError(GatewayError):
    """The provider answered with something other than the agreed body."""


class StructuredOutputError(GatewayError):
    """No parseable structured document in the model output."""

    def __init__(self, message: str, raw: str, offset: int = -1):
        super().__init__(message)
        self.raw = raw
        self.offset = offset


@runtime_checkable
class LlmGateway(Protocol):
    def generate(self, req: GenerationRequest) -> GenerationResult: ...


def scrub(text: str, secrets: list[str]) -> str:
    for secret in secrets:
        if secret:
            text = text.replace(secret, REDACTED)
    return text


class RateLimiter:
    """Sliding one-minute window; blocks via the injected sleep when full."""

    def __init__(self, limit_per_minute: int,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.limit = limit_per_minute
        self.clock = clock
        self.sleep = sleep
        self._events: deque[float] = deque()

    def acquire(self) -> None:
        while True:
            now = self.clock()
            while self._events and now - self._events[0] >= 60.0:
                self._events.popleft()
            if len(self._events) < self.limit:
                self._events.append(now)
                return
            self.sleep(60.0 - (now - self._events[0]))


class AuditLog:
    """Line-delimited request audit: payload digests, never bodies or secrets."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def record(self, req: GenerationRequest, outcome: str,
               latency: float = 0.0, attempts: int = 0) -> None:
        entry = {
            "instruction_digest": hashlib.sha256(req.instruction.encode()).hexdigest(),
            "payload_digest": hashlib.sha256(req.payload.encode()).hexdigest(),
            "contract": req.response_contract,
            "outcome": outcome,
            "latency": latency,
            "attempts": attempts,
        }
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


class HttpGateway:
    """Minimal JSON-over-HTTP provider client.

    POSTs {instruction, payload, params} and expects {"text": ...} back.
    Transient transport failures and 429/5xx responses retry with exponential
    backoff up to the profile limit; contract violations never retry.
    """

    def __init__(self, profile: ProviderProfile,
                 client: httpx.Client | None = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep,
                 audit: AuditLog | None = None):
        self.profile = profile
        self._client = client or httpx.Client(timeout=120.0)
        self._clock = clock
        self._sleep = sleep
        self._limiter = RateLimiter(profile.rate_limit_per_minute, clock, sleep)
        self._audit = audit
        secret = os.environ.get(profile.auth_env)
        if not secret:
            raise AuthError(
                f"profile {profile.name!r} needs a secret in ${profile.auth_env}"
            )
        self._secret = secret

    def _scrub(self, text: str) -> str:
        return scrub(text, [self._secret])

    def generate(self, req: GenerationRequest) -> GenerationResult:
        body = {
            "instruction": req.instruction,
            "payload": req.payload,
            "params": req.params.to_dict(),
        }
        headers = {"Authorization": f"Bearer {self._secret}"}
        start = self._clock()
        last_error: Exception | None = None
        rate_limited = False
        for attempt in range(1, self.profile.retry_attempts + 1):
            self._limiter.acquire()
            try:
                resp = self._client.post(self.profile.endpoint, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last_error = exc
                self._backoff(attempt)
                continue
            if resp.status_code in (401, 403):
                self._record(req, "auth_error", start, attempt)
                raise AuthError(
                    f"provider {self.profile.name!r} rejected credentials "
                    f"(status {resp.status_code})"
                )
            if resp.status_code == 429:
                rate_limited = True
                self._backoff(attempt)
                continue
            if resp.status_code >= 500:
                last_error = ResponseContractError(f"server error {resp.status_code}")
                self._backoff(attempt)
                continue
            try:
                doc = resp.json()
                text = doc["text"]
            except (ValueError, KeyError) as exc:
                self._record(req, "contract_error", start, attempt)
                raise ResponseContractError(
                    self._scrub(f"malformed provider response: {exc}")
                ) from None
            latency = self._clock() - start
            self._record(req, "ok", start, attempt)
            return GenerationResult(
                text=text,
                usage=doc.get("usage", {}),
                latency=latency,
                attempts=attempt,
            )
        self._record(req, "exhausted", start, self.profile.retry_attempts)
        if rate_limited:
            raise RateLimitExhausted(
                f"provider {self.profile.name!r} rate limit persisted across "
                f"{self.profile.retry_attempts} attempts"
            )
        raise TransportError(
            self._scrub(
                f"transport to {self.profile.name!r} failed after "
                f"{self.profile.retry_attempts} attempts: {last_error}"
            )
        )

    def _backoff(self, attempt: int) -> None:
        if attempt < self.profile.retry_attempts:
            self._sleep(self.profile.backoff_base * (2 ** (attempt - 1)))

    def _record(self, req: GenerationRequest, outcome: str, start: float,
                attempts: int) -> None:
        if self._audit is not None:
            self._audit.record(req, outcome, self._clock() - start, attempts)


class ScriptedGateway:
    """Deterministic mock keyed on the exact (instruction, payload) digest.

    Script values may be a string, a list of strings consumed in order, or an
    exception instance to raise. Exact-match keying catches prompt drift.
    """

    def __init__(self, script: dict[str, Any] | None = None,
                 default: str | None = None):
        self.script: dict[str, Any] = dict(script or {})
        self.default = default
        self.calls: list[GenerationRequest] = []

    @staticmethod
    def key_for(instruction: str, payload: str) -> str:
        return GenerationRequest(instruction=instruction, payload=payload).digest()

    def add(self, instruction: str, payload: str, response: Any) -> None:
        self.script[self.key_for(instruction, payload)] = response

    @staticmethod
    def load(path: str | Path) -> "ScriptedGateway":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return ScriptedGateway(script=doc.get("responses", {}),
                               default=doc.get("default"))

    def generate(self, req: GenerationRequest) -> GenerationResult:
        self.calls.append(req)
        key = req.digest()
        if key not in self.script:
            if self.default is not None:
                return GenerationResult(text=self.default)
            raise TransportError(f"no scripted response for digest {key[:12]}...")
        value = self.script[key]
        if isinstance(value, list):
            if not value:
                raise TransportError(f"scripted responses for {key[:12]}... exhausted")
            value = value.pop(0)
        if isinstance(value, Exception):
            raise value
        return GenerationResult(text=str(value))


class CallableGateway:
    """Adapter for tests that want to script behavior with a function."""

    def __init__(self, fn: Callable[[GenerationRequest], str]):
        self.fn = fn
        self.calls: list[GenerationRequest] = []

    def generate(self, req: GenerationRequest) -> GenerationResult:
        self.calls.append(req)
        return GenerationResult(text=self.fn(req))


class FlakyGateway:
    """Wraps a gateway and fails a scripted number of calls first."""

    def __init__(self, inner: LlmGateway, failures: int,
                 error: Exception | None = None):
        self.inner = inner
        self.remaining_failures = failures
        self.error = error or TransportError("scripted transport failure")
        self.attempts = 0

    def generate(self, req: GenerationRequest) -> GenerationResult:
        self.attempts += 1
        if self.remaining_failures > 0:
            self.remaining_failures -= 1
            raise self.error
        result = self.inner.generate(req)
        return GenerationResult(
            text=result.text,
            usage=result.usage,
            latency=result.latency,
            attempts=self.attempts,
        )


def generate_with_retries(gateway: LlmGateway, req: GenerationRequest,
                          attempts: int = 3, backoff_base: float = 0.0,
                          sleep: Callable[[float], None] = time.sleep) -> GenerationResult:
    """Retry transient transport failures; contract violations surface at once."""
    last: Exception | None = None
    for attempt in range(1, attempts + 1):
        try:
            result = gateway.generate(req)
            return GenerationResult(
                text=result.text, usage=result.usage,
                latency=result.latency, attempts=attempt,
            )
        except (TransportError, RateLimitExhausted) as exc:
            last = exc
            if attempt < attempts and backoff_base > 0:
                sleep(backoff_base * (2 ** (attempt - 1)))
    raise TransportError(f"transport failed after {attempts} attempts: {last}")


def extract_structured(text: str) -> Any:
    """Locate and parse the first well-formed JSON document in the text.

    Tolerates leading prose and fenced blocks. Raises StructuredOutputError
    carrying the raw text and the offset of the last parse attempt.
    """
    decoder = json.JSONDecoder()
    offset = -1
    for i, ch in enumerate(text):
        if ch not in "{[":
            continue
        offset = i
        try:
            doc, _ = decoder.raw_decode(text[i:])
            return doc
        except ValueError:
            continue
    raise StructuredOutputError(
        "no parseable structured document in model output", raw=text, offset=offset
    )
