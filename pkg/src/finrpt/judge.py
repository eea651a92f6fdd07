"""Pairwise LLM judging with position swapping, tallies and adjusted win rates."""

from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import Report
from .llm import Gateway
from .pipeline import extract_json_block
from .prompts import load_template

logger = logging.getLogger(__name__)


class Criterion(str, enum.Enum):
    FN = "FN"
    NEWS = "News"
    CMI = "CMI"
    INVEST = "Invest"
    RISK = "Risk"
    WRITING = "Writing"


CRITERIA = tuple(Criterion)

DESCRIPTIONS = {
    Criterion.FN: "Financial Numeric: are the reported figures correct and is the financial analysis deep?",
    Criterion.NEWS: "News: is the news coverage relevant to the company and its stock, and complete?",
    Criterion.CMI: "Company, Market and Industry: insight into management, development path, market trends and industry context.",
    Criterion.INVEST: "Invest: is the recommendation backed by thorough, logical reasoning?",
    Criterion.RISK: "Risk: how thoroughly are the risks of holding the stock analysed?",
    Criterion.WRITING: "Writing: coherence, readability and internal logical consistency.",
}


class Outcome(str, enum.Enum):
    WIN_A = "Win_A"
    WIN_B = "Win_B"
    TIE = "Tie"

    def mirrored(self) -> "Outcome":
        return {Outcome.WIN_A: Outcome.WIN_B, Outcome.WIN_B: Outcome.WIN_A}.get(self, Outcome.TIE)


class EmptyTally(ValueError):
    pass


class EvenRaters(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PairVerdict:
    """Preferences are stated in report identity (A = first argument), not in
    the position the report occupied in the prompt. None marks an unparseable pass."""

    criterion: Criterion
    first_pass: str | None
    second_pass: str | None

    @property
    def outcome(self) -> Outcome:
        if self.first_pass == self.second_pass == "A":
            return Outcome.WIN_A
        if self.first_pass == self.second_pass == "B":
            return Outcome.WIN_B
        return Outcome.TIE

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion.value,
            "first_pass": self.first_pass,
            "second_pass": self.second_pass,
            "outcome": self.outcome.value,
        }


def report_text(report: Report) -> str:
    return json.dumps(report.to_dict(), ensure_ascii=False, indent=1)


def _preference(raw: str) -> str:
    value = extract_json_block(raw).get("preferred")
    if value not in ("A", "B"):
        raise ValueError(f"preferred must be 'A' or 'B', got {value!r}")
    return value


_SWAP = {"A": "B", "B": "A"}


class Judge:
    def __init__(
        self,
        gateway: Gateway,
        *,
        batched: bool = False,
        template_dir: str | Path | None = None,
    ) -> None:
        self.gateway = gateway
        self.batched = batched
        self.single = load_template("Judge", template_dir)
        self.multi = load_template("JudgeBatched", template_dir)

    def _ask_one(self, first: Report, second: Report, criterion: Criterion) -> str | None:
        prompt = self.single.render({
            "criterion_name": criterion.value,
            "criterion_description": DESCRIPTIONS[criterion],
            "report_a": report_text(first),
            "report_b": report_text(second),
        })
        raw = self.gateway.ask(prompt, agent=f"judge-{criterion.value}").text
        try:
            return _preference(raw)
        except (ValueError, AttributeError) as exc:
            logger.warning("judge reply for %s unparseable, counting as tie: %s", criterion.value, exc)
            return None

    def _ask_all(self, first: Report, second: Report, criteria: Sequence[Criterion]) -> dict:
        prompt = self.multi.render({
            "criteria": "\n".join(f"- {c.value}: {DESCRIPTIONS[c]}" for c in criteria),
            "report_a": report_text(first),
            "report_b": report_text(second),
            "example": json.dumps({c.value: "A" for c in criteria}),
        })
        raw = self.gateway.ask(prompt, agent="judge-batched").text
        try:
            data = extract_json_block(raw)
        except ValueError as exc:
            logger.warning("batched judge reply unparseable, counting as ties: %s", exc)
            return {c: None for c in criteria}
        prefs = {}
        for c in criteria:
            value = data.get(c.value) if isinstance(data, Mapping) else None
            if value not in ("A", "B"):
                logger.warning("batched judge gave no valid choice for %s", c.value)
                value = None
            prefs[c] = value
        return prefs

    def judge_pair(self, report_a: Report, report_b: Report, criterion: Criterion) -> PairVerdict:
        first = self._ask_one(report_a, report_b, criterion)
        swapped = self._ask_one(report_b, report_a, criterion)
        return PairVerdict(criterion, first, _SWAP.get(swapped) if swapped else None)

    def judge_all(
        self, report_a: Report, report_b: Report, criteria: Sequence[Criterion] = CRITERIA
    ) -> list[PairVerdict]:
        if not self.batched:
            return [self.judge_pair(report_a, report_b, c) for c in criteria]
        first = self._ask_all(report_a, report_b, criteria)
        swapped = self._ask_all(report_b, report_a, criteria)
        return [
            PairVerdict(c, first[c], _SWAP.get(swapped[c]) if swapped[c] else None)
            for c in criteria
        ]


def judge_pair(report_a: Report, report_b: Report, criterion: Criterion, gateway: Gateway) -> PairVerdict:
    return Judge(gateway).judge_pair(report_a, report_b, criterion)


@dataclass
class Counts:
    wins: int = 0
    losses: int = 0
    ties: int = 0

    @property
    def total(self) -> int:
        return self.wins + self.losses + self.ties


@dataclass
class Tally:
    """Per-criterion counts from report A's point of view."""

    counts: dict[Criterion, Counts] = field(default_factory=dict)

    def add(self, verdict: PairVerdict) -> None:
        c = self.counts.setdefault(verdict.criterion, Counts())
        outcome = verdict.outcome
        if outcome is Outcome.WIN_A:
            c.wins += 1
        elif outcome is Outcome.WIN_B:
            c.losses += 1
        else:
            c.ties += 1

    def merge(self, other: "Tally") -> "Tally":
        out = Tally()
        for source in (self, other):
            for crit, c in source.counts.items():
                t = out.counts.setdefault(crit, Counts())
                t.wins += c.wins
                t.losses += c.losses
                t.ties += c.ties
        return out

    @classmethod
    def of(cls, verdicts: Iterable[PairVerdict]) -> "Tally":
        tally = cls()
        for v in verdicts:
            tally.add(v)
        return tally

    def to_dict(self) -> dict:
        return {
            c.value: vars(self.counts[c]) for c in CRITERIA if c in self.counts
        }


def win_rate(wins: int, losses: int, ties: int) -> float:
    """(W + T/2) / (W + L + T)."""
    total = wins + losses + ties
    if total <= 0:
        raise EmptyTally("no judged pairs")
    return (wins + 0.5 * ties) / total


@dataclass
class WinRates:
    per_criterion: dict[Criterion, float]
    average: float

    def to_dict(self) -> dict:
        return {
            "per_criterion": {c.value: v for c, v in self.per_criterion.items()},
            "average": self.average,
        }


def adjusted_win_rate(tally: Tally) -> WinRates:
    """Adjusted win rate per judged criterion and their unweighted mean."""
    rates = {
        c: win_rate(n.wins, n.losses, n.ties)
        for c in CRITERIA
        if (n := tally.counts.get(c)) is not None and n.total > 0
    }
    if not rates:
        raise EmptyTally("tally has no judged pairs")
    return WinRates(rates, sum(rates.values()) / len(rates))


def majority_vote(votes: Sequence[str]) -> str:
    if len(votes) % 2 == 0:
        raise EvenRaters(f"{len(votes)} raters cannot give a strict majority")
    return max(sorted(set(votes)), key=list(votes).count)


def majority_agreement(human_votes: Sequence[Sequence[str]], machine: Sequence[str]) -> float:
    """Share of items where the machine's pick equals the human majority."""
    if len(human_votes) != len(machine):
        raise LengthMismatch(f"{len(human_votes)} human rows vs {len(machine)} machine choices")
    if not machine:
        raise LengthMismatch("no items")
    hits = sum(majority_vote(row) == m for row, m in zip(human_votes, machine))
    return hits / len(machine)


@dataclass
class PairResult:
    key: tuple[str, str]
    verdicts: list[PairVerdict]

    def to_dict(self) -> dict:
        return {
            "ticker": self.key[0],
            "date": self.key[1],
            "verdicts": [v.to_dict() for v in self.verdicts],
        }


@dataclass
class TournamentResult:
    pairs: list[PairResult]
    tally: Tally

    def to_dict(self) -> dict:
        out = {"pairs": [p.to_dict() for p in self.pairs], "tally": self.tally.to_dict()}
        try:
            out["adjusted_win_rate"] = adjusted_win_rate(self.tally).to_dict()
        except EmptyTally:
            out["adjusted_win_rate"] = None
        return out


def run_tournament(
    pairs: Sequence[tuple[tuple[str, str], Report, Report]],
    judge: Judge,
    *,
    jobs: int = 1,
    criteria: Sequence[Criterion] = CRITERIA,
) -> TournamentResult:
    """Judge every aligned (key, report_a, report_b); results keep input order."""

    def one(item):
        key, a, b = item
        return PairResult(key, judge.judge_all(a, b, criteria))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, pairs))
    tally = Tally()
    for r in results:
        tally = tally.merge(Tally.of(r.verdicts))
    return TournamentResult(results, tally)
