"""Basic report metrics: completion rate, rating accuracy, ROUGE-1/ROUGE-L,
embedding-based semantic F1, NumberRate, and Fleiss' kappa."""

from __future__ import annotations

import hashlib
import re
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Hashable, Protocol, Sequence

import numpy as np

WORD = "unicode-word"
CHAR = "character"
MODES = (WORD, CHAR)


class ModeMismatch(ValueError):
    pass


class ProviderError(RuntimeError):
    pass


class DimensionMismatch(ValueError):
    pass


class UndefinedReference(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class InsufficientRaters(ValueError):
    pass


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[str, ...]
    mode: str = WORD

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown tokenization mode {self.mode!r}")
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)


_WORD_RE = re.compile(r"\w+", re.UNICODE)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0x3040 <= cp <= 0x30FF
        or 0xAC00 <= cp <= 0xD7AF
        or 0xF900 <= cp <= 0xFAFF
        or 0x20000 <= cp <= 0x2FA1F
    )


def detect_mode(text: str) -> str:
    return CHAR if any(_is_cjk(c) for c in text) else WORD


def tokenize(text: str, mode: str | None = None) -> TokenSeq:
    """Lower-cased tokens. Word mode keeps ``\\w+`` runs; character mode keeps
    every non-space, non-punctuation character. ``mode=None`` picks character
    mode when the text contains CJK script."""
    mode = mode or detect_mode(text)
    text = unicodedata.normalize("NFKC", text).lower()
    if mode == WORD:
        return TokenSeq(tuple(_WORD_RE.findall(text)), WORD)
    chars = (c for c in text if not c.isspace() and not unicodedata.category(c).startswith(("P", "S")))
    return TokenSeq(tuple(chars), CHAR)


def _check_modes(a: TokenSeq, b: TokenSeq) -> None:
    if a.mode != b.mode:
        raise ModeMismatch(f"cannot compare {a.mode} tokens with {b.mode} tokens")


def _f1(overlap: int, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    # equals 2PR/(P+R) with P = o/c, R = o/r, but rounds only once
    return 2 * overlap / (n_cand + n_ref)


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: TokenSeq, reference: TokenSeq) -> float:
    """LCS-based F1 (beta = 1)."""
    _check_modes(candidate, reference)
    return _f1(lcs_length(candidate.tokens, reference.tokens), len(candidate), len(reference))


def rouge_1(candidate: TokenSeq, reference: TokenSeq) -> float:
    """Unigram F1 with clipped counts."""
    _check_modes(candidate, reference)
    overlap = sum((Counter(candidate.tokens) & Counter(reference.tokens)).values())
    return _f1(overlap, len(candidate), len(reference))


class EmbeddingProvider(Protocol):
    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        """Return an array of shape (len(tokens), dim)."""


class HashingEmbedder:
    """Deterministic random vector per token string.

    No semantics: identical tokens match, distinct tokens are nearly
    orthogonal. Stand-in for a contextual encoder when none is attached.
    """

    def __init__(self, dim: int = 256, salt: str = "") -> None:
        self.dim = dim
        self.salt = salt

    def _vector(self, token: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.blake2b((self.salt + token).encode(), digest_size=8).digest(), "little")
        return np.random.default_rng(seed).standard_normal(self.dim)

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self._vector(t) for t in tokens])


def _embed(provider: EmbeddingProvider, seq: TokenSeq) -> np.ndarray:
    try:
        vecs = np.asarray(provider.embed(list(seq.tokens)), dtype=float)
    except Exception as exc:  # provider internals are opaque
        raise ProviderError(f"embedding provider failed: {exc}") from exc
    if vecs.ndim != 2 or vecs.shape[0] != len(seq):
        raise ProviderError(f"provider returned shape {vecs.shape} for {len(seq)} tokens")
    if not np.all(np.isfinite(vecs)):
        raise ProviderError("provider returned non-finite values")
    return vecs


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def bert_f1(candidate: TokenSeq, reference: TokenSeq, provider: EmbeddingProvider) -> float:
    """Greedy-match F1 over token embeddings, without IDF weights or baseline
    rescaling. Cosines are clipped to [0, 1]."""
    _check_modes(candidate, reference)
    if not len(candidate) or not len(reference):
        return 0.0
    c, r = _embed(provider, candidate), _embed(provider, reference)
    if c.shape[1] != r.shape[1]:
        raise DimensionMismatch(f"candidate dim {c.shape[1]} != reference dim {r.shape[1]}")
    sim = np.clip(_unit_rows(c) @ _unit_rows(r).T, 0.0, 1.0)
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    if precision + recall == 0:
        return 0.0
    return min(1.0, 2 * precision * recall / (precision + recall))


# digit-grouped numbers first so "123,122,542.45" is one match; the lookahead
# stops "12,3456" from being read as a grouped number
_NUMBER_RE = re.compile(r"\d{1,3}(?:,\d{3})+(?![\d])(?:\.\d+)?[%％]?|\d+(?:\.\d+)?[%％]?")


def extract_numbers(text: str) -> list[str]:
    return _NUMBER_RE.findall(text)


def number_rate(generated: str, reference: str) -> float:
    """min(N_gen / N_ref, 1).

    Often written as max(N_gen / N_ref, 1), which can never fall below 1 and
    so cannot produce the sub-100% values such tables report; the capped
    ratio is used instead.
    """
    n_ref = len(extract_numbers(reference))
    if n_ref == 0:
        raise UndefinedReference("reference text contains no numbers")
    return min(len(extract_numbers(generated)) / n_ref, 1.0)


def accuracy(predictions: Sequence, labels: Sequence) -> float:
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise EmptyInput("accuracy of an empty set")
    return sum(p == l for p, l in zip(predictions, labels)) / len(labels)


def completion_rate(outcomes: Sequence[bool]) -> float:
    if not outcomes:
        raise EmptyInput("completion rate of an empty set")
    return sum(bool(o) for o in outcomes) / len(outcomes)


def fleiss_kappa(ratings: Sequence[Sequence[Hashable]]) -> float:
    """Fleiss' kappa for an items x raters matrix of category labels."""
    n_items = len(ratings)
    if n_items < 2:
        raise EmptyInput("need at least two items")
    n_raters = len(ratings[0])
    if n_raters < 2:
        raise InsufficientRaters("need at least two raters per item")
    if any(len(row) != n_raters for row in ratings):
        raise LengthMismatch("every item must have the same number of ratings")
    categories = sorted({c for row in ratings for c in row}, key=repr)
    counts = np.array([[row.count(c) for c in categories] for row in map(list, ratings)], dtype=float)
    p_items = ((counts ** 2).sum(axis=1) - n_raters) / (n_raters * (n_raters - 1))
    p_bar = p_items.mean()
    p_cat = counts.sum(axis=0) / (n_items * n_raters)
    p_e = float((p_cat ** 2).sum())
    if np.isclose(p_e, 1.0):
        return 1.0
    return float((p_bar - p_e) / (1 - p_e))


@dataclass
class MetricReport:
    completion_rate: float | None = None
    accuracy: float | None = None
    rouge_l: float | None = None
    rouge_1: float | None = None
    bert_f1: float | None = None
    number_rate: float | None = None
    pairs: int = 0

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if name != "pairs" and value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)
