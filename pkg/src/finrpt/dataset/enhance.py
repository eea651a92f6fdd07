"""Dataset enhancement: re-infer until the rating matches the trend label,
then revise against expert reports, then polish. Ratings never change after
the first stage."""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from ..core import SECTION_KEYS, Report, Sample, Section, TrendLabel
from ..llm import Gateway
from ..pipeline import extract_json_block
from ..prompts import load_template

logger = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 5


class InvalidSample(Exception):
    def __init__(self, sample: Sample, attempts: int) -> None:
        super().__init__(f"{sample.ticker} {sample.date}: rating never matched label after {attempts} attempts")
        self.sample = sample
        self.attempts = attempts


@dataclass(frozen=True)
class EnhancementRecord:
    ticker: str
    date: str
    stage: str  # "rating" | "expert" | "polish"
    attempts: int
    accepted: bool
    rating_before: str
    rating_after: str
    note: str = ""

    def to_dict(self) -> dict:
        return vars(self).copy()


class EnhancementLog:
    """Append-only, thread-safe record of enhancement outcomes."""

    def __init__(self) -> None:
        self._records: list[EnhancementRecord] = []
        self._lock = threading.Lock()

    def append(self, record: EnhancementRecord) -> None:
        with self._lock:
            self._records.append(record)

    @property
    def records(self) -> list[EnhancementRecord]:
        with self._lock:
            return list(self._records)

    def sorted_dicts(self) -> list[dict]:
        order = {"rating": 0, "expert": 1, "polish": 2}
        return [r.to_dict() for r in sorted(self.records, key=lambda r: (r.ticker, r.date, order.get(r.stage, 9)))]


def rating_corrector(
    sample: Sample,
    label: TrendLabel,
    regenerate: Callable[[int], Report | None],
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    log: EnhancementLog | None = None,
) -> Sample:
    """Keep the sample's report if its rating matches ``label``; otherwise call
    ``regenerate(attempt)`` up to ``max_attempts`` times until one does.

    A regeneration that returns None (the generator failed) counts as a miss.
    Raises InvalidSample once every regeneration misses.
    """
    before = sample.report.rating
    report = sample.report
    attempts = 0
    while report.rating is not label.label:
        if attempts == max_attempts:
            if log:
                log.append(EnhancementRecord(sample.ticker, sample.date.isoformat(), "rating",
                                             attempts, False, before.value, report.rating.value))
            raise InvalidSample(sample, attempts)
        attempts += 1
        report = regenerate(attempts) or report
    if log:
        log.append(EnhancementRecord(sample.ticker, sample.date.isoformat(), "rating",
                                     attempts, True, before.value, report.rating.value))
    return replace(sample, report=report, label=label)


def _merge_revision(original: Report, raw: str) -> tuple[Report, list[str]]:
    """Overlay a revised report JSON on ``original``: empty or missing sections
    keep the original, and the rating is always the original's."""
    data = extract_json_block(raw)
    if not isinstance(data, dict):
        raise ValueError("revision is not a JSON object")
    notes = []
    sections = {}
    for key in SECTION_KEYS:
        old: Section = getattr(original, key)
        new = data.get(key)
        paragraph = new.get("paragraph") if isinstance(new, dict) else None
        if not isinstance(paragraph, str) or not paragraph.strip():
            notes.append(f"{key}: kept original")
            sections[key] = old
            continue
        title = new.get("title")
        if not isinstance(title, str) or not title.strip():
            title = old.title
        sections[key] = Section(title.strip(), paragraph.strip())
    revised_rating = str(data.get("rating", "")).strip()
    if revised_rating.lower() != original.rating.value.lower():
        notes.append(f"rating {revised_rating!r} restored to {original.rating.value}")
    return Report(rating=original.rating, **sections), notes


def _revise(
    stage: str,
    template_name: str,
    report: Report,
    gateway: Gateway,
    extra: dict,
    key: tuple[str, str],
    log: EnhancementLog | None,
    template_dir: str | Path | None,
) -> Report:
    template = load_template(template_name, template_dir)
    prompt = template.render({"report_json": json.dumps(report.to_dict(), ensure_ascii=False, indent=1), **extra})
    raw = gateway.ask(prompt, agent=stage).text
    try:
        revised, notes = _merge_revision(report, raw)
    except (ValueError, TypeError) as exc:
        logger.warning("%s %s: %s reply unusable, keeping report: %s", *key, stage, exc)
        revised, notes = report, [f"unparseable reply kept original: {exc}"]
    for note in notes:
        logger.info("%s %s: %s: %s", *key, stage, note)
    if log:
        log.append(EnhancementRecord(key[0], key[1], stage, 1, revised is not report,
                                     report.rating.value, revised.rating.value, "; ".join(notes)))
    return revised


def expert_corrector(
    report: Report,
    expert_reports: Sequence[str],
    gateway: Gateway,
    *,
    key: tuple[str, str] = ("", ""),
    log: EnhancementLog | None = None,
    template_dir: str | Path | None = None,
) -> Report:
    """Revise ``report`` against analyst-written reports without changing its rating."""
    texts = [t.strip() for t in expert_reports if t.strip()]
    if not texts:
        raise ValueError("expert_corrector needs at least one expert report")
    block = "\n\n".join(f"Report {i}:\n{t}" for i, t in enumerate(texts, 1))
    return _revise("expert", "ExpertCorrector", report, gateway, {"expert_reports": block},
                   key, log, template_dir)


def polish(
    report: Report,
    gateway: Gateway,
    *,
    key: tuple[str, str] = ("", ""),
    log: EnhancementLog | None = None,
    template_dir: str | Path | None = None,
) -> Report:
    """Rewrite for readability; structure and rating are preserved."""
    return _revise("polish", "Polisher", report, gateway, {}, key, log, template_dir)


def enhance_sample(
    sample: Sample,
    label: TrendLabel,
    regenerate: Callable[[int], Report | None],
    gateway: Gateway,
    expert_reports: Sequence[str] = (),
    *,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    log: EnhancementLog | None = None,
    template_dir: str | Path | None = None,
) -> Sample:
    """All three stages in order. Expert correction is skipped when no expert
    reports are available for the sample."""
    sample = rating_corrector(sample, label, regenerate, max_attempts, log)
    key = (sample.ticker, sample.date.isoformat())
    report = sample.report
    if any(t.strip() for t in expert_reports):
        report = expert_corrector(report, expert_reports, gateway, key=key, log=log, template_dir=template_dir)
    report = polish(report, gateway, key=key, log=log, template_dir=template_dir)
    assert report.rating is sample.report.rating
    return replace(sample, report=report)
