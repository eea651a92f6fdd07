import datetime as dt
import random

import pytest
from hypothesis import given, settings, strategies as st

from finrpt.core import NewsItem
from finrpt.dataset import DedupPolicy, MinHasher, dedup_news, shingles
from finrpt.metrics import HashingEmbedder
from helpers import WORDS, random_body

D0 = dt.date(2024, 9, 2)


def item(body: str, day: int = 0) -> NewsItem:
    return NewsItem(D0 + dt.timedelta(days=day), "t", body)


def jaccard(a: str, b: str, k: int = 3) -> float:
    sa, sb = shingles(a, k), shingles(b, k)
    return len(sa & sb) / len(sa | sb)


def perturb(text: str, rng: random.Random, n_swaps: int) -> str:
    words = text.split()
    for _ in range(n_swaps):
        words[rng.randrange(len(words))] = rng.choice(WORDS)
    return " ".join(words)


def test_identical_bodies_keep_first():
    body = random_body(random.Random(1))
    kept, decisions = dedup_news([item(body), item(body, 1)])
    assert kept == [item(body)]
    assert decisions[1].reason == "minhash" and decisions[1].duplicate_of == 0
    assert decisions[1].score == 1.0


def test_disjoint_bodies_are_kept():
    a = "alpha bravo charlie delta echo " * 6
    b = "1234567890 " * 20
    kept, decisions = dedup_news([item(a), item(b)])
    assert len(kept) == 2 and all(d.kept for d in decisions)


def test_short_bodies_are_dropped():
    kept, decisions = dedup_news([item("tiny"), item(random_body(random.Random(2)))])
    assert [d.reason for d in decisions] == ["short", "kept"] and len(kept) == 1


def test_high_jaccard_pair_is_dropped():
    rng = random.Random(3)
    base = random_body(rng, 80)
    near = perturb(base, rng, 3)
    assert jaccard(base, near) >= 0.8
    kept, decisions = dedup_news([item(base), item(near, 1)])
    assert len(kept) == 1 and decisions[1].reason == "minhash"


def test_earliest_by_date_is_kept_and_decisions_in_input_order():
    body = random_body(random.Random(4))
    later, earlier = item(body, 5), item(body, 0)
    kept, decisions = dedup_news([later, earlier])
    assert kept == [earlier]
    assert [d.index for d in decisions] == [0, 1]
    assert decisions[0].duplicate_of == 1 and decisions[1].kept


def test_minhash_estimate_tracks_exact_jaccard():
    rng = random.Random(5)
    hasher = MinHasher(128)
    for _ in range(50):
        base = random_body(rng, 50)
        other = perturb(base, rng, rng.randint(0, 40))
        assert abs(hasher.estimate(base, other) - jaccard(base, other)) <= 0.15


def test_minhash_is_seeded():
    text_a, text_b = random_body(random.Random(6)), random_body(random.Random(7))
    assert MinHasher(seed=3).estimate(text_a, text_b) == MinHasher(seed=3).estimate(text_a, text_b)
    assert (MinHasher(seed=3).signature(text_a) != MinHasher(seed=4).signature(text_a)).any()


def test_semantic_route_catches_reordered_text():
    rng = random.Random(8)
    words = ["".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(3)) for _ in range(50)]
    shuffled = words[:]
    rng.shuffle(shuffled)
    a, b = " ".join(words), " ".join(shuffled)
    assert MinHasher().estimate(a, b) < 0.7
    kept, _ = dedup_news([item(a), item(b, 1)])
    assert len(kept) == 2
    kept, decisions = dedup_news([item(a), item(b, 1)], embedder=HashingEmbedder(64))
    assert len(kept) == 1 and decisions[1].reason == "semantic"


def test_policy_validation():
    with pytest.raises(ValueError):
        DedupPolicy(minhash_permutations=8)
    with pytest.raises(ValueError):
        DedupPolicy(jaccard_threshold=0)
    with pytest.raises(ValueError):
        DedupPolicy(min_body_chars=-1)
    with pytest.raises(ValueError):
        DedupPolicy(shingle_size=0)


def test_empty_input():
    assert dedup_news([]) == ([], [])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3)), min_size=1, max_size=8))
def test_every_dropped_item_points_at_a_kept_one(layout):
    # layout: (template id, day); same template means an identical body
    templates = [random_body(random.Random(100 + i), 30) for i in range(5)]
    items = [item(templates[t], day) for t, day in layout]
    kept, decisions = dedup_news(items)
    kept_idx = {d.index for d in decisions if d.kept}
    assert len(kept) == len(kept_idx) == len({t for t, _ in layout})
    for d in decisions:
        if not d.kept:
            assert d.duplicate_of in kept_idx
            assert items[d.duplicate_of].body == items[d.index].body
            assert items[d.duplicate_of].date <= items[d.index].date
