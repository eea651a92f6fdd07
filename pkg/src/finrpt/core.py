"""Domain types shared by every stage: bundles, reports, samples, trend labels."""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

DEFAULT_HORIZON = 15

SECTION_KEYS = ("fin", "news", "manage", "risk", "invest")


class Rating(str, enum.Enum):
    BUY = "Buy"
    SELL = "Sell"

    @classmethod
    def parse(cls, value: str) -> "Rating":
        """Case-insensitive lookup; anything outside Buy/Sell raises ValueError."""
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        for member in cls:
            if member.value.lower() == text:
                return member
        raise ValueError(f"rating must be Buy or Sell, got {value!r}")


class MissingDate(LookupError):
    pass


class InsufficientHorizon(ValueError):
    pass


class SchemaError(ValueError):
    """A JSON document does not match the bundle/report/sample schema."""


def parse_date(value: Any) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value).strip())
    except ValueError as exc:
        raise SchemaError(f"invalid ISO date {value!r}") from exc


def check_ticker(symbol: str) -> str:
    if not isinstance(symbol, str) or not symbol or any(c.isspace() for c in symbol):
        raise SchemaError(f"invalid ticker {symbol!r}: must be non-empty without whitespace")
    return symbol


@dataclass(frozen=True)
class Section:
    title: str
    paragraph: str

    def as_text(self) -> str:
        return f"{self.title}: {self.paragraph}" if self.title else self.paragraph


@dataclass(frozen=True)
class Report:
    fin: Section
    news: Section
    manage: Section
    risk: Section
    invest: Section
    rating: Rating

    def __post_init__(self) -> None:
        for key in SECTION_KEYS:
            if not getattr(self, key).paragraph.strip():
                raise ValueError(f"report section {key!r} has an empty paragraph")
        if not isinstance(self.rating, Rating):
            object.__setattr__(self, "rating", Rating.parse(self.rating))

    def sections(self) -> dict[str, Section]:
        return {key: getattr(self, key) for key in SECTION_KEYS}

    def text(self) -> str:
        """All sections joined in report order; used for text-similarity metrics."""
        return "\n".join(self.sections()[key].as_text() for key in SECTION_KEYS)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            key: {"title": s.title, "paragraph": s.paragraph} for key, s in self.sections().items()
        }
        out["rating"] = self.rating.value
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Report":
        try:
            sections = {
                key: Section(str(data[key].get("title", "")), str(data[key]["paragraph"]))
                for key in SECTION_KEYS
            }
            return cls(rating=Rating.parse(data["rating"]), **sections)
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise SchemaError(f"invalid report: {exc}") from exc


@dataclass(frozen=True)
class NewsItem:
    date: dt.date
    title: str
    body: str
    summary: str | None = None

    def to_dict(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "title": self.title,
            "body": self.body,
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NewsItem":
        return cls(
            date=parse_date(data["date"]),
            title=str(data.get("title") or ""),
            body=str(data.get("body") or ""),
            summary=data.get("summary"),
        )


@dataclass(frozen=True)
class Announcement:
    date: dt.date
    text: str

    def to_dict(self) -> dict:
        return {"date": self.date.isoformat(), "text": self.text}


@dataclass(frozen=True)
class FinancialStatements:
    # each field: tuple of (date, {item: number}), newest first
    income: tuple = ()
    balance: tuple = ()
    cash_flow: tuple = ()

    def is_empty(self) -> bool:
        return not (self.income or self.balance or self.cash_flow)

    def to_dict(self) -> dict:
        return {
            name: [{"date": d.isoformat(), **values} for d, values in getattr(self, name)]
            for name in ("income", "balance", "cash_flow")
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "FinancialStatements":
        data = data or {}
        parsed = {}
        for name in ("income", "balance", "cash_flow"):
            rows = []
            for row in data.get(name) or []:
                values = {k: v for k, v in row.items() if k != "date"}
                rows.append((parse_date(row["date"]), values))
            parsed[name] = tuple(rows)
        return cls(**parsed)


def _series_from_json(data: Mapping[str, Any] | None) -> dict[dt.date, float]:
    # insertion order is kept so validate_bundle can report unsorted input
    return {parse_date(k): float(v) for k, v in (data or {}).items()}


@dataclass(frozen=True)
class InputBundle:
    """One company/date observation: company info, statements, announcements,
    news, stock close prices and benchmark index levels."""

    ticker: str
    date: dt.date
    company_info: str = ""
    financials: FinancialStatements = field(default_factory=FinancialStatements)
    announcements: tuple[Announcement, ...] = ()
    news: tuple[NewsItem, ...] = ()
    stock_prices: Mapping[dt.date, float] = field(default_factory=dict)
    market_indices: Mapping[dt.date, float] = field(default_factory=dict)

    @property
    def company_name(self) -> str:
        first = self.company_info.strip().splitlines()[0].strip() if self.company_info.strip() else ""
        return first or self.ticker

    def with_news(self, news: Sequence[NewsItem]) -> "InputBundle":
        return replace(self, news=tuple(news))

    def to_dict(self) -> dict:
        return {
            "ticker": self.ticker,
            "date": self.date.isoformat(),
            "company_info": self.company_info,
            "financials": self.financials.to_dict(),
            "announcements": [a.to_dict() for a in self.announcements],
            "news": [n.to_dict() for n in self.news],
            "prices": {d.isoformat(): p for d, p in self.stock_prices.items()},
            "indices": {d.isoformat(): p for d, p in self.market_indices.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "InputBundle":
        try:
            return cls(
                ticker=check_ticker(data["ticker"]),
                date=parse_date(data["date"]),
                company_info=str(data.get("company_info") or ""),
                financials=FinancialStatements.from_dict(data.get("financials")),
                announcements=tuple(
                    Announcement(parse_date(a["date"]), str(a.get("text") or ""))
                    for a in data.get("announcements") or []
                ),
                news=tuple(NewsItem.from_dict(n) for n in data.get("news") or []),
                stock_prices=_series_from_json(data.get("prices")),
                market_indices=_series_from_json(data.get("indices")),
            )
        except SchemaError:
            raise
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise SchemaError(f"invalid bundle: {exc!r}") from exc


@dataclass(frozen=True)
class TrendLabel:
    label: Rating
    stock_return: float
    index_return: float
    horizon_days: int

    def to_dict(self) -> dict:
        return {
            "label": self.label.value,
            "stock_return": self.stock_return,
            "index_return": self.index_return,
            "horizon_days": self.horizon_days,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrendLabel":
        return cls(
            label=Rating.parse(data["label"]),
            stock_return=float(data["stock_return"]),
            index_return=float(data["index_return"]),
            horizon_days=int(data["horizon_days"]),
        )


@dataclass(frozen=True)
class Sample:
    ticker: str
    date: dt.date
    bundle: InputBundle
    report: Report
    label: TrendLabel | None = None

    def __post_init__(self) -> None:
        check_ticker(self.ticker)
        if self.label is not None and self.label.horizon_days <= 0:
            raise ValueError("label horizon must be positive")

    @property
    def key(self) -> tuple[str, dt.date]:
        return (self.ticker, self.date)

    def to_dict(self) -> dict:
        return {
            "ticker": self.ticker,
            "date": self.date.isoformat(),
            "bundle": self.bundle.to_dict(),
            "report": self.report.to_dict(),
            "label": self.label.to_dict() if self.label else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Sample":
        bundle = InputBundle.from_dict(data["bundle"])
        return cls(
            ticker=check_ticker(data.get("ticker", bundle.ticker)),
            date=parse_date(data.get("date", bundle.date.isoformat())),
            bundle=bundle,
            report=Report.from_dict(data["report"]),
            label=TrendLabel.from_dict(data["label"]) if data.get("label") else None,
        )


def _forward_return(series: Mapping[dt.date, float], t: dt.date, horizon: int, name: str) -> float:
    days = sorted(series)
    try:
        start = days.index(t)
    except ValueError:
        raise MissingDate(f"{name}: analysis date {t.isoformat()} not present") from None
    end = start + horizon
    if end >= len(days):
        raise InsufficientHorizon(
            f"{name}: need {horizon} trading days after {t.isoformat()}, have {len(days) - start - 1}"
        )
    return series[days[end]] / series[days[start]] - 1.0


def derive_trend_label(
    prices: Mapping[dt.date, float],
    indices: Mapping[dt.date, float],
    t: dt.date,
    horizon: int = DEFAULT_HORIZON,
) -> TrendLabel:
    """Buy iff the stock's close-to-close return over ``horizon`` trading days
    strictly beats the index's; ties go to Sell."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    stock_return = _forward_return(prices, t, horizon, "stock_prices")
    index_return = _forward_return(indices, t, horizon, "market_indices")
    label = Rating.BUY if stock_return > index_return else Rating.SELL
    return TrendLabel(label, stock_return, index_return, horizon)


def _check_series(name: str, series: Mapping[dt.date, float]) -> list[str]:
    problems = []
    values = list(series.values())
    if any(not v > 0 for v in values):
        problems.append(f"{name}: non-positive value")
    days = list(series)
    if any(b <= a for a, b in zip(days, days[1:])):
        problems.append(f"{name}: dates not increasing")
    return problems


def validate_bundle(bundle: InputBundle) -> list[str]:
    """Return a list of ``"field: rule"`` violations; empty when the bundle is valid."""
    problems: list[str] = []
    try:
        check_ticker(bundle.ticker)
    except SchemaError:
        problems.append("ticker: empty or contains whitespace")
    problems += _check_series("stock_prices", bundle.stock_prices)
    problems += _check_series("market_indices", bundle.market_indices)
    for name in ("income", "balance", "cash_flow"):
        days = [d for d, _ in getattr(bundle.financials, name)]
        if any(b >= a for a, b in zip(days, days[1:])):
            problems.append(f"financials.{name}: dates not descending")
    for i, item in enumerate(bundle.news):
        if not (item.title.strip() or item.body.strip()):
            problems.append(f"news[{i}]: title and body both empty")
    return problems
