"""Input filtering, LLM summarisation, splitting, statistics and SFT export."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import random
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from ..core import Announcement, InputBundle, Sample, parse_date
from ..llm import Gateway
from ..pipeline import (
    AgentRole,
    PipelineTrace,
    extract_json_block,
    format_announcements,
    format_ranked_news,
    format_series,
)
from ..prompts import load_template

logger = logging.getLogger(__name__)

DEFAULT_CUTOFF = dt.date(2024, 10, 31)


@dataclass(frozen=True)
class FilterPolicy:
    require_financials: bool = True
    min_news: int = 2
    min_announcement_chars: int = 300

    def __post_init__(self) -> None:
        if self.min_news < 0 or self.min_announcement_chars < 0:
            raise ValueError("filter minimums must be non-negative")


@dataclass(frozen=True)
class FilterDecision:
    accepted: bool
    reason: str | None = None


def announcement_chars(bundle: InputBundle) -> int:
    # len() counts code points, so CJK and Latin characters weigh the same
    return sum(len(a.text) for a in bundle.announcements)


def filter_bundle(bundle: InputBundle, policy: FilterPolicy = FilterPolicy()) -> FilterDecision:
    """Reject bundles without statements, with too few news items, or whose
    (summarised) announcements are too short in total."""
    if policy.require_financials and bundle.financials.is_empty():
        return FilterDecision(False, "no_financials")
    if len(bundle.news) < policy.min_news:
        return FilterDecision(False, f"news<{policy.min_news}")
    if announcement_chars(bundle) < policy.min_announcement_chars:
        return FilterDecision(False, f"announcements<{policy.min_announcement_chars}")
    return FilterDecision(True)


def _parse_summary(raw: str) -> tuple[str, bool]:
    if "{" not in raw:
        text = raw.strip()
        relevant = True
    else:
        data = extract_json_block(raw)
        text = str(data.get("summary") or "").strip()
        relevant = data.get("relevant", True)
        if not isinstance(relevant, bool):
            relevant = str(relevant).strip().lower() not in ("false", "no", "0", "irrelevant")
    if not text:
        raise ValueError("empty summary")
    return text, relevant


def summarize_aligned(
    items: Sequence[str],
    kind: str,
    gateway: Gateway,
    *,
    company_name: str = "",
    jobs: int = 1,
    template_dir: str | Path | None = None,
) -> list[str | None]:
    """Summarise each text; one entry per input, None where the item was
    judged irrelevant (news only) or the reply could not be parsed."""
    if kind not in ("news", "announcement"):
        raise ValueError(f"kind must be 'news' or 'announcement', got {kind!r}")
    template = load_template("SummarizeNews" if kind == "news" else "SummarizeAnnouncement", template_dir)

    def one(i_text: tuple[int, str]) -> str | None:
        i, text = i_text
        raw = gateway.ask(
            template.render({"company_name": company_name, "text": text}), agent=f"summarize-{kind}"
        ).text
        try:
            summary, relevant = _parse_summary(raw)
        except (ValueError, AttributeError) as exc:
            logger.warning("%s item %d skipped, unparseable summary: %s", kind, i, exc)
            return None
        if kind == "news" and not relevant:
            logger.info("news item %d dropped as irrelevant", i)
            return None
        return summary

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(one, enumerate(items)))


def summarize_items(items: Sequence[str], kind: str, gateway: Gateway, **kwargs) -> list[str]:
    """Summaries of the kept items, in input order."""
    return [s for s in summarize_aligned(items, kind, gateway, **kwargs) if s is not None]


def summarize_bundle(bundle: InputBundle, gateway: Gateway, *, jobs: int = 1,
                     template_dir: str | Path | None = None) -> InputBundle:
    """Attach news summaries (dropping irrelevant items) and replace
    announcement texts with their summaries."""
    news = summarize_aligned([n.body or n.title for n in bundle.news], "news", gateway,
                           company_name=bundle.company_name, jobs=jobs, template_dir=template_dir)
    anns = summarize_aligned([a.text for a in bundle.announcements], "announcement", gateway,
                           company_name=bundle.company_name, jobs=jobs, template_dir=template_dir)
    return replace(
        bundle,
        news=tuple(replace(n, summary=s) for n, s in zip(bundle.news, news) if s is not None),
        announcements=tuple(Announcement(a.date, s) for a, s in zip(bundle.announcements, anns) if s is not None),
    )


@dataclass(frozen=True)
class SplitSpec:
    cutoff_date: dt.date = DEFAULT_CUTOFF
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")


def split_dataset(samples: Sequence[Sample], spec: SplitSpec = SplitSpec()) -> tuple[list, list, list]:
    """Samples dated after the cutoff form the test set; the rest are shuffled
    with ``spec.seed`` and cut at ``round(n * train_fraction)``.

    Samples are put in (date, ticker) order first, so the split does not
    depend on input order.
    """
    ordered = sorted(samples, key=lambda s: (s.date, s.ticker))
    test = [s for s in ordered if s.date > spec.cutoff_date]
    pool = [s for s in ordered if s.date <= spec.cutoff_date]
    random.Random(spec.seed).shuffle(pool)
    n_train = round(len(pool) * spec.train_fraction)
    return pool[:n_train], pool[n_train:], test


@dataclass
class DatasetStats:
    reports: int
    stocks: int
    dates: int
    reports_per_stock: float
    reports_per_date: float
    industry_proportions: dict[str, float]

    def to_dict(self) -> dict:
        return vars(self).copy()


def dataset_stats(samples: Sequence[Sample], industry: Mapping[str, str] | None = None) -> DatasetStats:
    industry = industry or {}
    n = len(samples)
    stocks = Counter(s.ticker for s in samples)
    dates = Counter(s.date for s in samples)
    inds = Counter(industry.get(s.ticker, "Unknown") for s in samples)
    return DatasetStats(
        reports=n,
        stocks=len(stocks),
        dates=len(dates),
        reports_per_stock=n / len(stocks) if stocks else 0.0,
        reports_per_date=n / len(dates) if dates else 0.0,
        industry_proportions={k: v / n for k, v in sorted(inds.items())},
    )


def load_industry_map(path: str | Path) -> dict[str, str]:
    """CSV with a ``ticker,industry`` header."""
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["ticker"].strip(): row["industry"].strip() for row in csv.DictReader(fh)}


TRAINABLE = (AgentRole.FINANCE_ANALYSIS, AgentRole.NEWS_ANALYSIS, AgentRole.STATUS_ANALYSIS, AgentRole.PREDICTION)


@dataclass(frozen=True)
class SftPair:
    agent: AgentRole
    input_text: str
    target_text: str

    def __post_init__(self) -> None:
        if self.agent not in TRAINABLE:
            raise ValueError(f"{self.agent} is not a trainable agent")
        if not self.input_text.strip() or not self.target_text.strip():
            raise ValueError("SFT input and target must be non-empty")

    def to_dict(self) -> dict:
        return {"agent": self.agent.value, "input": self.input_text, "target": self.target_text}


def _section_json(section, **extra) -> str:
    return json.dumps({"paragraph": section.paragraph, "title": section.title, **extra}, ensure_ascii=False)


def export_sft_pairs(sample: Sample, trace: PipelineTrace | None) -> list[SftPair]:
    """Demonstration pairs for the four trainable agents.

    Inputs that come from extraction agents are read from the generation
    trace; targets are the sample's (enhanced) report sections, in the JSON
    shape each agent is asked to produce. Agents whose inputs are missing are
    skipped with a log line.
    """
    report, bundle = sample.report, sample.bundle
    tag = f"{sample.ticker} {sample.date.isoformat()}"
    pairs = []

    def upstream(role: AgentRole):
        return trace.output(role) if trace is not None else None

    extractions = [upstream(r) for r in (AgentRole.INCOME_EXTRACTION, AgentRole.BALANCE_EXTRACTION, AgentRole.CASH_EXTRACTION)]
    if all(extractions):
        x = "\n\n".join(
            f"[{name} Extraction Agent Output]:\n{text}"
            for name, text in zip(("Income", "Balance", "Cash"), extractions)
        )
        pairs.append(SftPair(AgentRole.FINANCE_ANALYSIS, x, _section_json(report.fin)))
    else:
        logger.info("%s: finance pair skipped, extraction outputs missing from trace", tag)

    ranked = upstream(AgentRole.NEWS_EXTRACTION)
    if ranked:
        pairs.append(SftPair(AgentRole.NEWS_ANALYSIS, f"[Core News]:\n{format_ranked_news(ranked)}",
                             _section_json(report.news)))
    else:
        logger.info("%s: news pair skipped, no ranked news in trace", tag)

    announcements = format_announcements(bundle)
    if announcements:
        pairs.append(SftPair(AgentRole.STATUS_ANALYSIS, f"[Company Announcements]:\n{announcements}",
                             _section_json(report.manage)))
    else:
        logger.info("%s: status pair skipped, bundle has no announcements", tag)

    x = "\n\n".join([
        f"[Finance Analysis]:\n{report.fin.as_text()}",
        f"[News Analysis]:\n{report.news.as_text()}",
        f"[Status Analysis]:\n{report.manage.as_text()}",
        f"[Risks Analysis]:\n{report.risk.paragraph}",
        f"[History Market Indices]:\n{format_series(bundle.market_indices, bundle.date)}",
        f"[Historical Stock Prices]:\n{format_series(bundle.stock_prices, bundle.date)}",
    ])
    pairs.append(SftPair(AgentRole.PREDICTION, x, _section_json(report.invest, rating=report.rating.value)))
    return pairs


# -- JSONL helpers ----------------------------------------------------------------


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{n}: {exc}") from exc
    return rows


def dumps_jsonl(rows) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rows)


def load_samples(path: str | Path) -> list[Sample]:
    return [Sample.from_dict(r) for r in read_jsonl(path)]


def sample_key(row: Mapping) -> tuple[str, str]:
    return (str(row["ticker"]), parse_date(row["date"]).isoformat())
