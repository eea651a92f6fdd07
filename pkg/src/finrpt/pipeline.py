"""The nine-agent report generator: extraction, analysis and prediction stages
run as a DAG over a chat-completion gateway."""

from __future__ import annotations

import datetime as dt
import enum
import json
import logging
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from graphlib import TopologicalSorter
from pathlib import Path
from typing import Any, Callable, Mapping

from .core import InputBundle, Rating, Report, Section
from .llm import Gateway
from .prompts import PromptTemplate, load_template

logger = logging.getLogger(__name__)

MAX_NEWS = 10
IMPACTS = ("Positive", "Negative", "Neutral")
RISK_TITLE = "Key Risks"


class AgentRole(str, enum.Enum):
    NEWS_EXTRACTION = "NewsExtraction"
    INCOME_EXTRACTION = "IncomeExtraction"
    BALANCE_EXTRACTION = "BalanceExtraction"
    CASH_EXTRACTION = "CashExtraction"
    FINANCE_ANALYSIS = "FinanceAnalysis"
    NEWS_ANALYSIS = "NewsAnalysis"
    STATUS_ANALYSIS = "StatusAnalysis"
    RISK_ANALYSIS = "RiskAnalysis"
    PREDICTION = "Prediction"


R = AgentRole
ROLE_ORDER = tuple(AgentRole)
EXTRACTION_ROLES = (R.INCOME_EXTRACTION, R.BALANCE_EXTRACTION, R.CASH_EXTRACTION)
SECTION_ROLES = (R.FINANCE_ANALYSIS, R.NEWS_ANALYSIS, R.STATUS_ANALYSIS)

# role -> upstream agents whose parsed output it consumes. Status analysis
# reads announcements straight from the bundle; prediction also reads P and M.
GRAPH: dict[AgentRole, tuple[AgentRole, ...]] = {
    R.NEWS_EXTRACTION: (),
    R.INCOME_EXTRACTION: (),
    R.BALANCE_EXTRACTION: (),
    R.CASH_EXTRACTION: (),
    R.FINANCE_ANALYSIS: EXTRACTION_ROLES,
    R.NEWS_ANALYSIS: (R.NEWS_EXTRACTION,),
    R.STATUS_ANALYSIS: (),
    R.RISK_ANALYSIS: SECTION_ROLES,
    R.PREDICTION: SECTION_ROLES + (R.RISK_ANALYSIS,),
}


def check_graph(graph: Mapping[AgentRole, tuple[AgentRole, ...]]) -> list[AgentRole]:
    """Topological order of ``graph``; raises if cyclic or without a unique sink."""
    order = list(TopologicalSorter(graph).static_order())
    consumed = {dep for deps in graph.values() for dep in deps}
    sinks = [role for role in graph if role not in consumed]
    if sinks != [R.PREDICTION]:
        raise ValueError(f"graph must have Prediction as its only sink, found {sinks}")
    return order


check_graph(GRAPH)


class ParseFailure(ValueError):
    def __init__(self, role: AgentRole | str, reason: str) -> None:
        super().__init__(f"{AgentRole(role).value}: {reason}")
        self.role = AgentRole(role)
        self.reason = reason


@dataclass(frozen=True)
class RankedNews:
    date: str
    content: str
    potential_impact: str

    def to_dict(self) -> dict:
        return {"date": self.date, "content": self.content, "potential_impact": self.potential_impact}


@dataclass(frozen=True)
class Prediction:
    section: Section
    rating: Rating


@dataclass(frozen=True)
class StageOutput:
    role: AgentRole
    # tuple[RankedNews] | str | Section | tuple[str] | Prediction, by role
    payload: Any


def extract_json_block(raw: str) -> Any:
    """Parse the outermost ``{...}`` span in ``raw`` (fences and chatter around it are ignored)."""
    start, end = raw.find("{"), raw.rfind("}")
    if start < 0 or end < start:
        raise ValueError("no JSON object found")
    return json.loads(raw[start:end + 1])


def _text(obj: Mapping, key: str, *, required: bool = True) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or (required and not value.strip()):
        raise ValueError(f"missing or empty {key!r}")
    return value.strip()


def _parse_section(obj: Any) -> Section:
    if not isinstance(obj, Mapping):
        raise ValueError("expected a JSON object")
    if "title" not in obj:
        raise ValueError("missing 'title'")
    return Section(title=_text(obj, "title", required=False), paragraph=_text(obj, "paragraph"))


def parse_agent_output(role: AgentRole | str, raw: str) -> StageOutput:
    """Validate one agent's completion against its output contract."""
    role = AgentRole(role)
    try:
        if role in EXTRACTION_ROLES:
            if not raw.strip():
                raise ValueError("empty paragraph")
            return StageOutput(role, raw.strip())
        data = extract_json_block(raw)
        if role is R.NEWS_EXTRACTION:
            items = data.get("news") if isinstance(data, Mapping) else None
            if not isinstance(items, list):
                raise ValueError("'news' must be a list")
            if len(items) > MAX_NEWS:
                raise ValueError(f"{len(items)} news items, at most {MAX_NEWS} allowed")
            ranked = []
            for item in items:
                impact = str(item.get("potential_impact", "")).strip().capitalize()
                if impact not in IMPACTS:
                    raise ValueError(f"potential_impact {item.get('potential_impact')!r} not in {IMPACTS}")
                ranked.append(RankedNews(str(item.get("date", "")), _text(item, "content"), impact))
            return StageOutput(role, tuple(ranked))
        if role in SECTION_ROLES:
            return StageOutput(role, _parse_section(data))
        if role is R.RISK_ANALYSIS:
            risks = data.get("risks") if isinstance(data, Mapping) else None
            if not isinstance(risks, list) or not risks:
                raise ValueError("'risks' must be a non-empty list")
            if not all(isinstance(r, str) and r.strip() for r in risks):
                raise ValueError("every risk must be a non-empty string")
            return StageOutput(role, tuple(r.strip() for r in risks))
        section = _parse_section(data)
        return StageOutput(role, Prediction(section, Rating.parse(data.get("rating", ""))))
    except ParseFailure:
        raise
    except (ValueError, TypeError, AttributeError) as exc:
        raise ParseFailure(role, str(exc)) from exc


# -- prompt contexts ----------------------------------------------------------


def _num(value: Any) -> str:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return str(value)
    return f"{value:,}"


def format_statement(rows) -> str:
    lines = [
        "Date: " + ", ".join([d.isoformat()] + [f"{k}: {_num(v)}" for k, v in values.items()]) + ";"
        for d, values in rows
    ]
    return "\n".join(lines)


def format_series(series: Mapping, until: dt.date | None = None) -> str:
    """``date: value`` pairs in date order; points after ``until`` are left out."""
    return ", ".join(f"{d.isoformat()}: {series[d]}" for d in sorted(series) if until is None or d <= until)


def format_news(bundle: InputBundle) -> str:
    blocks = []
    for i, item in enumerate(bundle.news, 1):
        blocks.append(
            f"News {i}:\nNews Date: {item.date.isoformat()}\nNews Title: {item.title}\n"
            f"News Summary: {item.summary or item.body}"
        )
    return "\n".join(blocks)


def format_ranked_news(items) -> str:
    return "\n".join(
        f"News Date: {n.date}. News Content: {n.content} (Potential impact: {n.potential_impact})"
        for n in items
    )


def format_announcements(bundle: InputBundle) -> str:
    return "\n".join(
        f"{i}. [{a.date.isoformat()}] {a.text}" for i, a in enumerate(bundle.announcements, 1)
    )


def _base(bundle: InputBundle) -> dict[str, str]:
    return {"analysis_date": bundle.date.isoformat(), "company_name": bundle.company_name}


def _analyses(out: Mapping[AgentRole, Any]) -> dict[str, str]:
    return {
        "finance_output": out[R.FINANCE_ANALYSIS].as_text(),
        "news_output": out[R.NEWS_ANALYSIS].as_text(),
        "status_output": out[R.STATUS_ANALYSIS].as_text(),
    }


ContextBuilder = Callable[[InputBundle, Mapping[AgentRole, Any]], dict[str, str]]

CONTEXT: dict[AgentRole, ContextBuilder] = {
    R.NEWS_EXTRACTION: lambda b, o: {**_base(b), "news": format_news(b)},
    R.INCOME_EXTRACTION: lambda b, o: {**_base(b), "income_statement": format_statement(b.financials.income)},
    R.BALANCE_EXTRACTION: lambda b, o: {**_base(b), "balance_sheet": format_statement(b.financials.balance)},
    R.CASH_EXTRACTION: lambda b, o: {**_base(b), "cash_flow_statement": format_statement(b.financials.cash_flow)},
    R.FINANCE_ANALYSIS: lambda b, o: {
        **_base(b),
        "income_output": o[R.INCOME_EXTRACTION],
        "balance_output": o[R.BALANCE_EXTRACTION],
        "cash_output": o[R.CASH_EXTRACTION],
    },
    R.NEWS_ANALYSIS: lambda b, o: {**_base(b), "core_news": format_ranked_news(o[R.NEWS_EXTRACTION])},
    R.STATUS_ANALYSIS: lambda b, o: {**_base(b), "announcements": format_announcements(b)},
    R.RISK_ANALYSIS: lambda b, o: {**_base(b), **_analyses(o)},
    R.PREDICTION: lambda b, o: {
        **_base(b),
        **_analyses(o),
        "risks_output": ", ".join(o[R.RISK_ANALYSIS]) + ".",
        "market_indices": format_series(b.market_indices, b.date),
        "stock_prices": format_series(b.stock_prices, b.date),
    },
}


def _required(role: AgentRole) -> set[str]:
    keys = {
        R.NEWS_EXTRACTION: {"news"},
        R.INCOME_EXTRACTION: {"income_statement"},
        R.BALANCE_EXTRACTION: {"balance_sheet"},
        R.CASH_EXTRACTION: {"cash_flow_statement"},
        R.FINANCE_ANALYSIS: {"income_output", "balance_output", "cash_output"},
        R.NEWS_ANALYSIS: {"core_news"},
        R.STATUS_ANALYSIS: {"announcements"},
        R.RISK_ANALYSIS: {"finance_output", "news_output", "status_output"},
        R.PREDICTION: {
            "finance_output", "news_output", "status_output", "risks_output",
            "market_indices", "stock_prices",
        },
    }[role]
    return keys | {"analysis_date", "company_name"}


def load_templates(directory: str | Path | None = None) -> dict[AgentRole, PromptTemplate]:
    """Load and check the nine agent templates (user directory overrides packaged ones)."""
    templates = {}
    for role in ROLE_ORDER:
        template = load_template(role.value, directory)
        template.require(_required(role))
        templates[role] = template
    return templates


# -- execution ----------------------------------------------------------------


@dataclass
class TraceEntry:
    role: AgentRole
    prompt: str
    raw: str
    ok: bool
    error: str | None = None
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def to_dict(self) -> dict:
        return {
            "role": self.role.value,
            "prompt": self.prompt,
            "raw": self.raw,
            "ok": self.ok,
            "error": self.error,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


@dataclass
class PipelineTrace:
    ticker: str
    date: str
    entries: list[TraceEntry] = field(default_factory=list)
    failure: AgentRole | None = None
    reason: str | None = None

    def entry(self, role: AgentRole) -> TraceEntry | None:
        return next((e for e in self.entries if e.role is role), None)

    def output(self, role: AgentRole) -> Any | None:
        """Re-parse a successful node's completion; None if it did not succeed."""
        e = self.entry(role)
        if e is None or not e.ok:
            return None
        return parse_agent_output(role, e.raw).payload

    def to_dict(self) -> dict:
        return {
            "ticker": self.ticker,
            "date": self.date,
            "entries": [e.to_dict() for e in self.entries],
            "failure": self.failure.value if self.failure else None,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineTrace":
        entries = [
            TraceEntry(
                role=AgentRole(e["role"]),
                prompt=e.get("prompt", ""),
                raw=e.get("raw", ""),
                ok=bool(e.get("ok")),
                error=e.get("error"),
                prompt_tokens=int(e.get("prompt_tokens", 0)),
                completion_tokens=int(e.get("completion_tokens", 0)),
            )
            for e in data.get("entries", [])
        ]
        failure = data.get("failure")
        return cls(
            ticker=data.get("ticker", ""),
            date=data.get("date", ""),
            entries=entries,
            failure=AgentRole(failure) if failure else None,
            reason=data.get("reason"),
        )


@dataclass
class PipelineResult:
    report: Report | None
    trace: PipelineTrace

    @property
    def ok(self) -> bool:
        return self.report is not None


def assemble_report(outputs: Mapping[AgentRole, Any]) -> Report:
    risks = outputs[R.RISK_ANALYSIS]
    prediction: Prediction = outputs[R.PREDICTION]
    return Report(
        fin=outputs[R.FINANCE_ANALYSIS],
        news=outputs[R.NEWS_ANALYSIS],
        manage=outputs[R.STATUS_ANALYSIS],
        risk=Section(RISK_TITLE, "\n".join(f"- {r}" for r in risks)),
        invest=prediction.section,
        rating=prediction.rating,
    )


def run_pipeline(
    bundle: InputBundle,
    gateway: Gateway,
    templates: Mapping[AgentRole, PromptTemplate] | None = None,
    *,
    jobs: int = 1,
    temperature: float | None = None,
) -> PipelineResult:
    """Run all nine agents in dependency order, up to ``jobs`` at a time.

    A node whose upstream failed to parse is skipped; independent branches
    still run, so the set of executed nodes never depends on ``jobs``. The
    reported failure is the first failed role in canonical role order.
    Gateway errors (transport, auth) propagate.
    """
    templates = templates or load_templates()
    outputs: dict[AgentRole, Any] = {}
    entries: dict[AgentRole, TraceEntry] = {}
    failures: dict[AgentRole, str] = {}
    skipped: set[AgentRole] = set()

    def call(role: AgentRole, prompt: str) -> tuple[TraceEntry, Any]:
        response = gateway.ask(prompt, agent=role.value, temperature=temperature)
        entry = TraceEntry(role, prompt, response.text, True, None,
                           response.prompt_tokens, response.completion_tokens)
        try:
            return entry, parse_agent_output(role, response.text).payload
        except ParseFailure as exc:
            entry.ok, entry.error = False, exc.reason
            return entry, None

    sorter = TopologicalSorter(GRAPH)
    sorter.prepare()
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        pending = {}
        while sorter.is_active():
            for role in sorter.get_ready():
                if any(dep in failures or dep in skipped for dep in GRAPH[role]):
                    skipped.add(role)
                    sorter.done(role)
                    continue
                prompt = templates[role].render(CONTEXT[role](bundle, outputs))
                pending[pool.submit(call, role, prompt)] = role
            if not pending:
                continue
            done, _ = wait(pending, return_when=FIRST_COMPLETED)
            for fut in done:
                role = pending.pop(fut)
                entry, payload = fut.result()
                entries[role] = entry
                if entry.ok:
                    outputs[role] = payload
                else:
                    failures[role] = entry.error or "parse failure"
                    logger.warning("%s %s: %s output rejected: %s",
                                   bundle.ticker, bundle.date, role.value, entry.error)
                sorter.done(role)

    trace = PipelineTrace(
        bundle.ticker, bundle.date.isoformat(), [entries[r] for r in ROLE_ORDER if r in entries]
    )
    if failures:
        first = next(r for r in ROLE_ORDER if r in failures)
        trace.failure, trace.reason = first, failures[first]
        return PipelineResult(None, trace)
    return PipelineResult(assemble_report(outputs), trace)
