"""JSON run configuration. Secrets are never stored in the file: the backend
section names the environment variable that holds the API key."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .core import DEFAULT_HORIZON, parse_date
from .dataset.curation import FilterPolicy, SplitSpec
from .dataset.dedup import DedupPolicy
from .dataset.enhance import DEFAULT_MAX_ATTEMPTS
from .llm import Gateway, HttpBackend, MockBackend, Price, UsageLedger, load_price_table
from .metrics import HashingEmbedder
from .rl import ClipConfig, RewardWeights


class ConfigError(ValueError):
    pass


@dataclass
class BackendConfig:
    kind: str = "http"  # "http" | "mock"
    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key_env: str = "OPENAI_API_KEY"
    script: str | None = None  # mock reply file, or "demo"
    timeout: float = 120.0
    max_attempts: int = 3
    backoff: float = 1.0
    temperature: float = 0.0
    top_p: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("http", "mock"):
            raise ConfigError(f"backend.kind must be 'http' or 'mock', got {self.kind!r}")
        if self.kind == "mock" and not self.script:
            raise ConfigError("mock backend needs backend.script (a reply file or 'demo')")
        if self.max_attempts < 1:
            raise ConfigError("backend.max_attempts must be >= 1")


@dataclass
class Config:
    backend: BackendConfig = field(default_factory=BackendConfig)
    template_dir: Path | None = None
    filter: FilterPolicy = field(default_factory=FilterPolicy)
    dedup: DedupPolicy = field(default_factory=DedupPolicy)
    split: SplitSpec = field(default_factory=SplitSpec)
    reward: RewardWeights = field(default_factory=RewardWeights)
    clip: ClipConfig = field(default_factory=ClipConfig)
    price_table: Path | None = None
    embedder_dim: int = 256
    label_horizon: int = DEFAULT_HORIZON
    rating_max_attempts: int = DEFAULT_MAX_ATTEMPTS
    regenerate_temperature: float = 0.7
    judge_batched: bool = False

    def gateway(self, ledger: UsageLedger | None = None) -> Gateway:
        b = self.backend
        if b.kind == "mock":
            backend = MockBackend.from_file(b.script)
        else:
            backend = HttpBackend.from_env(b.endpoint, b.api_key_env, timeout=b.timeout)
        return Gateway(
            backend,
            model=b.model,
            temperature=b.temperature,
            top_p=b.top_p,
            max_attempts=b.max_attempts,
            backoff=b.backoff,
            ledger=ledger or UsageLedger(),
        )

    def embedder(self) -> HashingEmbedder:
        return HashingEmbedder(self.embedder_dim)

    def prices(self) -> dict[str, Price]:
        if self.price_table is None:
            raise ConfigError("no price_table configured")
        with open(self.price_table, encoding="utf-8") as fh:
            return load_price_table(json.load(fh))


def _build(cls, data: Any, section: str, convert: Mapping[str, Any] | None = None):
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"{section} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    kwargs = dict(data)
    for key, fn in (convert or {}).items():
        if key in kwargs:
            kwargs[key] = fn(kwargs[key])
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _existing(path: Any, what: str, base: Path) -> Path:
    p = Path(path)
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise ConfigError(f"{what} {p} does not exist")
    return p


TOP_LEVEL = {
    "backend", "template_dir", "filter", "dedup", "split", "reward", "clip", "price_table",
    "embedder_dim", "label_horizon", "rating_max_attempts", "regenerate_temperature", "judge_batched",
}


def config_from_dict(data: Mapping[str, Any], base: Path = Path(".")) -> Config:
    """Build a Config; relative paths resolve against ``base`` and must exist."""
    unknown = set(data) - TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    backend = _build(BackendConfig, data.get("backend"), "backend")
    if backend.kind == "mock" and backend.script != "demo":
        backend.script = str(_existing(backend.script, "mock script", base))
    cfg = Config(
        backend=backend,
        filter=_build(FilterPolicy, data.get("filter"), "filter"),
        dedup=_build(DedupPolicy, data.get("dedup"), "dedup"),
        split=_build(SplitSpec, data.get("split"), "split", {"cutoff_date": parse_date}),
        reward=_build(RewardWeights, data.get("reward"), "reward"),
        clip=_build(ClipConfig, data.get("clip"), "clip"),
    )
    if data.get("template_dir"):
        cfg.template_dir = _existing(data["template_dir"], "template_dir", base)
    if data.get("price_table"):
        cfg.price_table = _existing(data["price_table"], "price_table", base)
    for key in ("embedder_dim", "label_horizon", "rating_max_attempts"):
        if key in data:
            value = data[key]
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{key} must be a positive integer")
            setattr(cfg, key, value)
    if "regenerate_temperature" in data:
        cfg.regenerate_temperature = float(data["regenerate_temperature"])
    if "judge_batched" in data:
        cfg.judge_batched = bool(data["judge_batched"])
    return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data, path.parent)
