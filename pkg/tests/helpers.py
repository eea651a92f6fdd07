"""Builders for synthetic bundles, reports and scripted agent replies."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import random

from finrpt.core import (
    Announcement,
    FinancialStatements,
    InputBundle,
    NewsItem,
    Rating,
    Report,
    Sample,
    Section,
    TrendLabel,
)
from finrpt.llm import Gateway, MockBackend

WORDS = (
    "revenue margin demand pricing supply chain export battery liquor bank loan deposit capacity "
    "factory order guidance profit dividend buyback regulator policy subsidy inventory channel "
    "consumer premium retail wholesale overseas domestic"
).split()


def trading_days(start: str, n: int) -> list[dt.date]:
    d, out = dt.date.fromisoformat(start), []
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def random_body(rng: random.Random, n_words: int = 40) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n_words)) + f" {rng.randint(1, 999)}.{rng.randint(0, 9)}%"


def make_bundle(
    ticker: str = "600519.SH",
    *,
    seed: int = 0,
    n_news: int = 4,
    ann_chars: int = 400,
    financials: bool = True,
    n_days: int = 40,
    at: int = 19,
    drift: float = 0.1,
) -> InputBundle:
    rng = random.Random(seed)
    days = trading_days("2024-09-02", n_days)
    t = days[at]
    fin = FinancialStatements(
        income=((dt.date(2024, 6, 30), {"revenue": 1_250_000.5, "net_income": 310_000}),),
        balance=((dt.date(2024, 6, 30), {"total_assets": 9_800_000}),),
        cash_flow=((dt.date(2024, 6, 30), {"operating_cash_flow": 420_000}),),
    ) if financials else FinancialStatements()
    ann_text = ("Board approved the interim dividend plan and a share buyback. " * 20)[:ann_chars]
    return InputBundle(
        ticker=ticker,
        date=t,
        company_info=f"Company {ticker}\nListed manufacturer.",
        financials=fin,
        announcements=(Announcement(days[at - 3], ann_text),) if ann_chars else (),
        news=tuple(
            NewsItem(days[i], f"headline {i}", random_body(rng)) for i in range(n_news)
        ),
        stock_prices={d: 10 + drift * i for i, d in enumerate(days)},
        market_indices={d: 3500.0 + i for i, d in enumerate(days)},
    )


def make_report(rating: Rating | str = Rating.BUY, tag: str = "x") -> Report:
    s = lambda name: Section(f"{name} {tag}", f"The {name} paragraph for {tag} cites 12.5% growth and 300 units.")  # noqa: E731
    return Report(
        fin=s("finance"), news=s("news"), manage=s("status"), risk=s("risk"), invest=s("outlook"),
        rating=Rating.parse(rating) if isinstance(rating, str) else rating,
    )


def make_sample(ticker: str = "600519.SH", rating: Rating = Rating.BUY, date: dt.date | None = None, seed: int = 0) -> Sample:
    bundle = make_bundle(ticker, seed=seed)
    if date is not None:
        bundle = InputBundle(**{**vars(bundle), "date": date})
    label = TrendLabel(rating, 0.05, 0.01, 15)
    return Sample(ticker, bundle.date, bundle, make_report(rating, ticker), label)


AGENT_REPLIES = {
    "NewsExtraction": json.dumps({"news": [
        {"date": "2024-09-20", "content": "Export orders rose", "potential_impact": "Positive"},
        {"date": "2024-09-21", "content": "Regulator review", "potential_impact": "negative"},
    ]}),
    "IncomeExtraction": "Revenue 1,250,000.5; net income 310,000.",
    "BalanceExtraction": "Total assets 9,800,000.",
    "CashExtraction": "Operating cash flow 420,000.",
    "FinanceAnalysis": json.dumps({"paragraph": "Revenue grew 12.5% on pricing.", "title": "Solid growth"}),
    "NewsAnalysis": json.dumps({"paragraph": "Orders are strong.", "title": "Upbeat news"}),
    "StatusAnalysis": json.dumps({"paragraph": "Dividend and buyback approved.", "title": "Shareholder returns"}),
    "RiskAnalysis": json.dumps({"risks": ["Demand slowdown", "Policy change"]}),
    "Prediction": json.dumps({"paragraph": "Outperform the index.", "title": "Buy call", "rating": "Buy"}),
}


def agent_backend(**overrides) -> MockBackend:
    return MockBackend({**AGENT_REPLIES, **overrides})


def gateway_for(backend) -> Gateway:
    return Gateway(backend, sleep=lambda s: None)


def hash_judge(request, tag: str) -> str:
    """Deterministic judge whose choice depends on the whole prompt (so it is
    free to be position-biased); batched prompts get one choice per criterion."""
    prompt = request.prompt_text
    digest = hashlib.sha256(prompt.encode()).digest()
    if tag == "judge-batched":
        codes = json.loads(prompt.strip().rsplit("\n", 1)[-1])
        return json.dumps({c: "AB"[digest[i] % 2] for i, c in enumerate(codes)})
    return json.dumps({"preferred": "AB"[digest[0] % 2]})


def content_judge(request, tag: str) -> str:
    """Prefers the report whose text hashes higher for the criterion; position-blind."""
    prompt = request.prompt_text
    head, rest = prompt.split("[Report A]:\n", 1)
    a, rest = rest.split("\n\n[Report B]:\n", 1)
    b = rest.split("\n\n[Instruction]:", 1)[0]

    def score(text):
        return hashlib.sha256((head + text).encode()).hexdigest()

    return json.dumps({"preferred": "A" if score(a) >= score(b) else "B"})
