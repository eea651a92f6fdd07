"""Near-duplicate news removal: MinHash over character shingles, optionally
backed by an embedding similarity check."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import NewsItem
from ..metrics import EmbeddingProvider, bert_f1, tokenize

MERSENNE = (1 << 31) - 1  # keeps a*x + b below 2**63 for x, a, b < 2**31
_SPACE = re.compile(r"\s+")


@dataclass(frozen=True)
class DedupPolicy:
    minhash_permutations: int = 128
    shingle_size: int = 3
    jaccard_threshold: float = 0.7
    semantic_threshold: float = 0.9
    min_body_chars: int = 120

    def __post_init__(self) -> None:
        if self.minhash_permutations < 16:
            raise ValueError("need at least 16 permutations")
        if self.shingle_size < 1:
            raise ValueError("shingle_size must be >= 1")
        for name in ("jaccard_threshold", "semantic_threshold"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.min_body_chars < 0:
            raise ValueError("min_body_chars must be >= 0")


def normalize(text: str) -> str:
    return _SPACE.sub(" ", text.lower()).strip()


def shingles(text: str, k: int = 3) -> set[str]:
    """Character k-grams of the normalised text; short texts yield themselves."""
    text = normalize(text)
    if len(text) <= k:
        return {text} if text else set()
    return {text[i:i + k] for i in range(len(text) - k + 1)}


def _hash(shingle: str) -> int:
    return int.from_bytes(hashlib.blake2b(shingle.encode(), digest_size=8).digest(), "little") % MERSENNE


class MinHasher:
    """Signatures from ``num_perm`` universal hash functions (a*x + b) mod p."""

    def __init__(self, num_perm: int = 128, shingle_size: int = 3, seed: int = 1) -> None:
        rng = np.random.default_rng(seed)
        self.num_perm = num_perm
        self.shingle_size = shingle_size
        self.a = rng.integers(1, MERSENNE, size=num_perm, dtype=np.uint64)
        self.b = rng.integers(0, MERSENNE, size=num_perm, dtype=np.uint64)

    def signature(self, text: str) -> np.ndarray:
        grams = shingles(text, self.shingle_size)
        if not grams:
            return np.full(self.num_perm, MERSENNE, dtype=np.uint64)
        x = np.fromiter((_hash(g) for g in grams), dtype=np.uint64, count=len(grams))
        h = (np.outer(self.a, x) + self.b[:, None]) % np.uint64(MERSENNE)
        return h.min(axis=1)

    @staticmethod
    def similarity(sig_a: np.ndarray, sig_b: np.ndarray) -> float:
        return float(np.mean(sig_a == sig_b))

    def estimate(self, text_a: str, text_b: str) -> float:
        return self.similarity(self.signature(text_a), self.signature(text_b))


@dataclass(frozen=True)
class DedupDecision:
    index: int  # position in the caller's input list
    kept: bool
    reason: str  # "kept" | "short" | "minhash" | "semantic"
    duplicate_of: int | None = None
    score: float | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("index", "kept", "reason", "duplicate_of", "score")}


def dedup_news(
    items: Sequence[NewsItem],
    policy: DedupPolicy = DedupPolicy(),
    embedder: EmbeddingProvider | None = None,
    *,
    seed: int = 1,
) -> tuple[list[NewsItem], list[DedupDecision]]:
    """Drop short articles, then later near-duplicates of earlier kept ones.

    Items are visited in date order (ties keep input order). An item is a
    duplicate when its MinHash Jaccard estimate against some kept item reaches
    ``jaccard_threshold``, or, with an embedder, when the semantic F1 reaches
    ``semantic_threshold``. Decisions come back in input order.
    """
    hasher = MinHasher(policy.minhash_permutations, policy.shingle_size, seed)
    order = sorted(range(len(items)), key=lambda i: items[i].date)
    kept: list[tuple[int, np.ndarray]] = []
    decisions: dict[int, DedupDecision] = {}
    for i in order:
        body = items[i].body
        if len(body.strip()) < policy.min_body_chars:
            decisions[i] = DedupDecision(i, False, "short")
            continue
        sig = hasher.signature(body)
        verdict = None
        for j, other in kept:
            score = hasher.similarity(sig, other)
            if score >= policy.jaccard_threshold:
                verdict = DedupDecision(i, False, "minhash", j, score)
                break
            if embedder is not None:
                cand = tokenize(body)
                score = bert_f1(cand, tokenize(items[j].body, cand.mode), embedder)
                if score >= policy.semantic_threshold:
                    verdict = DedupDecision(i, False, "semantic", j, score)
                    break
        if verdict is None:
            kept.append((i, sig))
            verdict = DedupDecision(i, True, "kept")
        decisions[i] = verdict
    survivors = [items[i] for i, _ in kept]
    return survivors, [decisions[i] for i in range(len(items))]
