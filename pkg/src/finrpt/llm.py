"""Chat-completion backends, retrying gateway, usage ledger and cost accounting."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_BACKOFF = 1.0


class GatewayError(Exception):
    """Base class for backend failures."""


class TransportError(GatewayError):
    """Retryable: connection problems, timeouts, 429 and 5xx responses."""


class AuthError(GatewayError):
    """Non-retryable credential rejection (HTTP 401/403)."""


class BadResponse(GatewayError):
    """Non-retryable: malformed payload or a 4xx other than auth/rate limit."""


class UnknownModel(KeyError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[dict, ...]
    temperature: float = 0.0
    top_p: float = 1.0
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(dict(m) for m in self.messages))
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        for m in self.messages:
            if m.get("role") not in ROLES or not isinstance(m.get("content"), str):
                raise ValueError(f"bad message {m!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    @classmethod
    def user(cls, model: str, prompt: str, **kwargs: Any) -> "ChatRequest":
        return cls(model=model, messages=({"role": "user", "content": prompt},), **kwargs)

    @property
    def prompt_text(self) -> str:
        return "\n".join(m["content"] for m in self.messages)

    def payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [dict(m) for m in self.messages],
            "temperature": self.temperature,
            "top_p": self.top_p,
            "frequency_penalty": 0,
            "presence_penalty": 0,
        }


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")


class Backend(Protocol):
    def send(self, request: ChatRequest, tag: str) -> ChatResponse:
        """One attempt. Raise TransportError for retryable failures."""


class HttpBackend:
    """OpenAI-compatible ``POST {endpoint}/chat/completions`` client."""

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)

    @classmethod
    def from_env(cls, endpoint: str, key_env: str, **kwargs: Any) -> "HttpBackend":
        key = os.environ.get(key_env, "").strip()
        if not key:
            raise AuthError(f"environment variable {key_env} is not set")
        return cls(endpoint, key, **kwargs)

    def send(self, request: ChatRequest, tag: str) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(self.url, json=request.payload(), headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code} from {self.url}")
        if resp.status_code in (408, 429) or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code} from {self.url}")
        if resp.status_code >= 400:
            raise BadResponse(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BadResponse(f"unexpected completion payload: {exc!r}") from exc
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens") or 0),
            completion_tokens=int(usage.get("completion_tokens") or 0),
        )


def count_tokens(text: str) -> int:
    return len(text.split())


Reply = str | Sequence[str] | Callable[[ChatRequest, str], str]


class MockBackend:
    """Deterministic scripted backend.

    ``script`` maps an agent tag to a reply string, a sequence of replies
    (served in order per tag, the last one repeating), or a callable
    ``(request, tag) -> str``. ``default`` answers tags missing from the script.
    Tokens are whitespace-delimited word counts.
    """

    def __init__(self, script: Mapping[str, Reply] | None = None, default: Reply | None = None):
        self.script = dict(script or {})
        self.default = default
        self.calls: list[tuple[str, ChatRequest]] = []
        self._cursor: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    def _reply(self, request: ChatRequest, tag: str) -> str:
        reply = self.script.get(tag, self.default)
        if reply is None:
            raise BadResponse(f"mock has no reply scripted for {tag!r}")
        if callable(reply):
            return reply(request, tag)
        if isinstance(reply, str):
            return reply
        with self._lock:
            i = self._cursor[tag]
            self._cursor[tag] += 1
        return reply[min(i, len(reply) - 1)]

    def send(self, request: ChatRequest, tag: str) -> ChatResponse:
        with self._lock:
            self.calls.append((tag, request))
        text = self._reply(request, tag)
        return ChatResponse(text, count_tokens(request.prompt_text), count_tokens(text))

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "MockBackend":
        """Load ``{"replies": {tag: str | [str]}, "default": str}``; the literal
        path ``demo`` selects :func:`demo_responder`."""
        if str(path) == "demo":
            return cls(default=demo_responder())
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(data.get("replies") or {}, data.get("default"))


def demo_responder() -> Callable[[ChatRequest, str], str]:
    """Well-formed replies for every agent and curation prompt, derived from a
    hash of the prompt. Repeating a prompt advances a per-prompt counter, so
    re-inference yields fresh (but reproducible) content."""
    seen: dict[str, int] = defaultdict(int)
    lock = threading.Lock()

    def respond(request: ChatRequest, tag: str) -> str:
        prompt = request.prompt_text
        with lock:
            n = seen[prompt]
            seen[prompt] += 1
        digest = hashlib.sha256(f"{n}\x00{prompt}".encode()).hexdigest()
        word = digest[:8]
        value = int(digest[8:12], 16) / 100
        para = f"Analysis {word}: the figure of {value:.2f}% and {int(digest[12:15], 16)} units frame the view."
        if tag == "NewsExtraction":
            return json.dumps({"news": [
                {"date": "", "content": f"Key item {word}", "potential_impact": "Neutral"}
            ]})
        if tag in ("IncomeExtraction", "BalanceExtraction", "CashExtraction"):
            return para
        if tag in ("FinanceAnalysis", "NewsAnalysis", "StatusAnalysis"):
            return json.dumps({"paragraph": para, "title": f"View {word}"})
        if tag == "RiskAnalysis":
            return json.dumps({"risks": [f"Risk {digest[i:i + 4]}" for i in (0, 4, 8)]})
        if tag == "Prediction":
            rating = "Buy" if int(digest[-1], 16) % 2 == 0 else "Sell"
            return json.dumps({"paragraph": para, "title": f"Outlook {word}", "rating": rating})
        if tag in ("summarize-news", "summarize-announcement"):
            body = prompt.rsplit("[Text]:", 1)[-1].strip()
            first = body.split(". ")[0].strip()
            return json.dumps({"summary": first or body, "relevant": True})
        if tag.startswith("judge"):
            return json.dumps({"preferred": "A" if int(digest[0], 16) % 2 == 0 else "B"})
        # correctors and polisher: hand the embedded report back unchanged
        start, end = prompt.rfind("<<REPORT>>"), prompt.rfind("<</REPORT>>")
        if start >= 0 and end > start:
            return prompt[start + len("<<REPORT>>"):end].strip()
        return para

    return respond


@dataclass
class UsageRow:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    attempts: int = 0


class UsageLedger:
    """Thread-safe per-(agent, model) call and token accumulator."""

    def __init__(self) -> None:
        self._rows: dict[tuple[str, str], UsageRow] = {}
        self._lock = threading.Lock()

    def record(self, agent: str, model: str, response: ChatResponse, attempts: int = 1) -> None:
        with self._lock:
            row = self._rows.setdefault((agent, model), UsageRow())
            row.calls += 1
            row.attempts += attempts
            row.prompt_tokens += response.prompt_tokens
            row.completion_tokens += response.completion_tokens

    def rows(self) -> dict[tuple[str, str], UsageRow]:
        with self._lock:
            return {k: UsageRow(**vars(v)) for k, v in sorted(self._rows.items())}

    def calls(self, agent: str | None = None) -> int:
        return sum(r.calls for (a, _), r in self.rows().items() if agent is None or a == agent)

    def to_dict(self) -> dict:
        return {
            "entries": [
                {"agent": a, "model": m, **vars(r)} for (a, m), r in self.rows().items()
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UsageLedger":
        ledger = cls()
        for e in data.get("entries", []):
            ledger._rows[(e["agent"], e["model"])] = UsageRow(
                calls=int(e.get("calls", 0)),
                prompt_tokens=int(e.get("prompt_tokens", 0)),
                completion_tokens=int(e.get("completion_tokens", 0)),
                attempts=int(e.get("attempts", e.get("calls", 0))),
            )
        return ledger


def complete(
    backend: Backend,
    request: ChatRequest,
    *,
    agent: str,
    ledger: UsageLedger | None = None,
    backoff: float = DEFAULT_BACKOFF,
    sleep: Callable[[float], None] = time.sleep,
) -> ChatResponse:
    """Send ``request`` with exponential-backoff retries on TransportError.

    Auth and malformed-response errors surface immediately. The ledger gets
    one logical call per successful completion, whatever the attempt count.
    """
    last: TransportError | None = None
    for attempt in range(1, request.max_attempts + 1):
        try:
            response = backend.send(request, agent)
        except TransportError as exc:
            last = exc
            logger.warning("%s: attempt %d/%d failed: %s", agent, attempt, request.max_attempts, exc)
            if attempt < request.max_attempts:
                sleep(backoff * 2 ** (attempt - 1))
            continue
        if ledger is not None:
            ledger.record(agent, request.model, response, attempts=attempt)
        return response
    raise TransportError(f"{agent}: gave up after {request.max_attempts} attempts: {last}")


@dataclass
class Gateway:
    """A backend plus the sampling defaults and ledger shared by one workflow."""

    backend: Backend
    model: str = "gpt-4o"
    temperature: float = 0.0
    top_p: float = 1.0
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    backoff: float = DEFAULT_BACKOFF
    ledger: UsageLedger = field(default_factory=UsageLedger)
    sleep: Callable[[float], None] = time.sleep

    def request(self, prompt: str, *, temperature: float | None = None) -> ChatRequest:
        return ChatRequest.user(
            self.model,
            prompt,
            temperature=self.temperature if temperature is None else temperature,
            top_p=self.top_p,
            max_attempts=self.max_attempts,
        )

    def ask(self, prompt: str, *, agent: str, temperature: float | None = None) -> ChatResponse:
        return complete(
            self.backend,
            self.request(prompt, temperature=temperature),
            agent=agent,
            ledger=self.ledger,
            backoff=self.backoff,
            sleep=self.sleep,
        )


@dataclass(frozen=True)
class Price:
    prompt: float
    completion: float

    def __post_init__(self) -> None:
        if self.prompt < 0 or self.completion < 0:
            raise ValueError("prices must be non-negative")


PriceTable = Mapping[str, Price]


def load_price_table(data: Mapping[str, Any]) -> dict[str, Price]:
    """``{"model": {"prompt": per_token, "completion": per_token}}``"""
    return {m: Price(float(p["prompt"]), float(p["completion"])) for m, p in data.items()}


@dataclass
class CostRow:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost: float = 0.0


@dataclass
class CostReport:
    agents: dict[str, CostRow]
    total: CostRow

    def to_dict(self) -> dict:
        return {"agents": {a: vars(r) for a, r in self.agents.items()}, "total": vars(self.total)}


def cost_report(ledger: UsageLedger, prices: PriceTable) -> CostReport:
    agents: dict[str, CostRow] = {}
    total = CostRow()
    for (agent, model), usage in ledger.rows().items():
        if model not in prices:
            raise UnknownModel(model)
        price = prices[model]
        cost = usage.prompt_tokens * price.prompt + usage.completion_tokens * price.completion
        row = agents.setdefault(agent, CostRow())
        for target in (row, total):
            target.calls += usage.calls
            target.prompt_tokens += usage.prompt_tokens
            target.completion_tokens += usage.completion_tokens
            target.cost += cost
    return CostReport(agents, total)
