"""Reward, group-standardised advantages and the asymmetric-clip surrogate
objective used to fine-tune the prediction agent. Pure functions only."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .core import Rating
from .metrics import detect_mode, rouge_1, rouge_l, tokenize

STD_FLOOR = 1e-8


class GroupTooSmall(ValueError):
    pass


class EmptySequence(ValueError):
    pass


class NonpositiveRatio(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 0.6
    beta: float = 0.2
    gamma: float = 0.2

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0 or self.alpha + self.beta + self.gamma <= 0:
            raise ValueError("reward weights must be non-negative with a positive sum")


@dataclass(frozen=True)
class ClipConfig:
    eps_low: float = 0.2
    eps_high: float = 0.28

    def __post_init__(self) -> None:
        if not (0 < self.eps_low < 1 and 0 < self.eps_high < 1):
            raise ValueError("clip ratios must lie in (0, 1)")


@dataclass(frozen=True)
class RewardBreakdown:
    acc_component: float
    rouge1_component: float
    rougeL_component: float
    total: float


@dataclass(frozen=True)
class Answer:
    """The prediction agent's scored output: investment text plus rating."""

    invest_text: str
    rating: Rating

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Answer":
        return cls(str(data["invest_text"]), Rating.parse(data["rating"]))


def reward(generated: Answer, reference: Answer, weights: RewardWeights = RewardWeights()) -> RewardBreakdown:
    """alpha * rating match + beta * ROUGE-1 + gamma * ROUGE-L on the investment text.

    Both texts are tokenised in the mode detected from the reference.
    """
    mode = detect_mode(reference.invest_text)
    cand, ref = tokenize(generated.invest_text, mode), tokenize(reference.invest_text, mode)
    acc = 1.0 if Rating.parse(generated.rating) is Rating.parse(reference.rating) else 0.0
    r1, rl = rouge_1(cand, ref), rouge_l(cand, ref)
    total = weights.alpha * acc + weights.beta * r1 + weights.gamma * rl
    return RewardBreakdown(acc, r1, rl, total)


def group_advantages(rewards: Sequence[float], eps: float = STD_FLOOR) -> list[float]:
    """(R_i - mean) / max(population std, eps); all-equal groups give zeros."""
    if len(rewards) < 2:
        raise GroupTooSmall(f"need at least 2 rollouts per group, got {len(rewards)}")
    r = np.asarray(rewards, dtype=float)
    if np.all(r == r[0]):
        return [0.0] * len(r)
    return ((r - r.mean()) / max(float(r.std()), eps)).tolist()


@dataclass(frozen=True)
class RolloutGroup:
    """G sampled sequences for one prompt: a reward per sequence and the
    new/old policy probability ratio at each generated token."""

    rewards: tuple[float, ...]
    ratios: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rewards", tuple(float(x) for x in self.rewards))
        object.__setattr__(self, "ratios", tuple(tuple(float(x) for x in seq) for seq in self.ratios))
        if len(self.rewards) != len(self.ratios):
            raise ValueError("one reward per sequence is required")
        if len(self.ratios) < 2:
            raise GroupTooSmall("a rollout group needs at least 2 sequences")
        if any(len(seq) == 0 for seq in self.ratios):
            raise EmptySequence("every sequence needs at least one token")
        if any(x <= 0 for seq in self.ratios for x in seq):
            raise NonpositiveRatio("probability ratios must be positive")


def clipped_term(ratio: float, advantage: float, clip: ClipConfig = ClipConfig()) -> float:
    clipped = min(max(ratio, 1 - clip.eps_low), 1 + clip.eps_high)
    return min(ratio * advantage, clipped * advantage)


def dapo_objective(
    ratios: RolloutGroup | Sequence[Sequence[float]],
    advantages: Sequence[float],
    clip: ClipConfig = ClipConfig(),
) -> float:
    """Token-mean clipped surrogate over a group.

    Each sequence's advantage is shared by all of its tokens, and the sum is
    divided by the total token count of the group (not per sequence).
    """
    if isinstance(ratios, RolloutGroup):
        ratios = ratios.ratios
    if len(ratios) != len(advantages):
        raise ValueError(f"{len(ratios)} sequences but {len(advantages)} advantages")
    if not ratios or any(len(seq) == 0 for seq in ratios):
        raise EmptySequence("every sequence needs at least one token")
    r = np.concatenate([np.asarray(seq, dtype=float) for seq in ratios])
    if np.any(r <= 0):
        raise NonpositiveRatio("probability ratios must be positive")
    a = np.concatenate([np.full(len(seq), adv, dtype=float) for seq, adv in zip(ratios, advantages)])
    clipped = np.clip(r, 1 - clip.eps_low, 1 + clip.eps_high)
    return float(np.minimum(r * a, clipped * a).sum() / len(r))


def group_objective(group: RolloutGroup, clip: ClipConfig = ClipConfig()) -> tuple[float, list[float]]:
    adv = group_advantages(group.rewards)
    return dapo_objective(group.ratios, adv, clip), adv


def score_rollout_record(
    record: Mapping[str, Any],
    weights: RewardWeights = RewardWeights(),
    clip: ClipConfig = ClipConfig(),
) -> dict:
    """Batch-mode record: ``{"rewards": [...], "ratios": [[...], ...]}``.

    Instead of ``rewards`` a record may carry ``completions`` (list of
    ``{"invest_text", "rating"}``) plus a ``reference`` answer, in which case
    rewards are computed first.
    """
    out: dict[str, Any] = {}
    if "rewards" in record:
        rewards = [float(x) for x in record["rewards"]]
    else:
        ref = Answer.from_dict(record["reference"])
        parts = [reward(Answer.from_dict(c), ref, weights) for c in record["completions"]]
        rewards = [p.total for p in parts]
        out["reward_breakdown"] = [vars(p) for p in parts]
    out["rewards"] = rewards
    out["advantages"] = group_advantages(rewards)
    if "ratios" in record:
        group = RolloutGroup(tuple(rewards), tuple(tuple(s) for s in record["ratios"]))
        out["objective"] = dapo_objective(group, out["advantages"], clip)
    return out
