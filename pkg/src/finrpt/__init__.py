"""Multi-agent equity research report generation, dataset construction and evaluation."""

from .core import InputBundle, Rating, Report, Sample, Section, TrendLabel, derive_trend_label
from .llm import Gateway, HttpBackend, MockBackend, UsageLedger
from .pipeline import AgentRole, ParseFailure, PipelineResult, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "AgentRole", "Gateway", "HttpBackend", "InputBundle", "MockBackend", "ParseFailure",
    "PipelineResult", "Rating", "Report", "Sample", "Section", "TrendLabel", "UsageLedger",
    "derive_trend_label", "run_pipeline",
]
