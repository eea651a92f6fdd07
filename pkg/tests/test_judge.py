import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from finrpt.judge import (
    CRITERIA,
    Criterion,
    Counts,
    EmptyTally,
    EvenRaters,
    Judge,
    LengthMismatch,
    Outcome,
    PairVerdict,
    Tally,
    adjusted_win_rate,
    majority_agreement,
    majority_vote,
    run_tournament,
    win_rate,
)
from finrpt.llm import MockBackend
from helpers import content_judge, gateway_for, hash_judge, make_report

DATA = Path(__file__).parent / "data"
C = Criterion


def judge_with(default, batched=False):
    backend = MockBackend(default=default)
    return Judge(gateway_for(backend), batched=batched), backend


def scripted(*choices):
    """Judge replies in call order; None sends malformed JSON."""
    queue = list(choices)

    def respond(request, tag):
        choice = queue.pop(0)
        return "no verdict" if choice is None else json.dumps({"preferred": choice})

    return respond


A, B = make_report(tag="alpha"), make_report(tag="beta")


# -- swapped passes -------------------------------------------------------------


def test_both_passes_prefer_a():
    # second pass sees B first, so "B" in that prompt means report A
    judge, backend = judge_with(scripted("A", "B"))
    verdict = judge.judge_pair(A, B, C.FN)
    assert verdict.outcome is Outcome.WIN_A
    assert len(backend.calls) == 2


def test_position_bias_becomes_tie():
    judge, _ = judge_with(scripted("A", "A"))
    assert judge.judge_pair(A, B, C.NEWS).outcome is Outcome.TIE


def test_malformed_reply_is_tie():
    judge, _ = judge_with(scripted("A", None))
    verdict = judge.judge_pair(A, B, C.RISK)
    assert verdict.outcome is Outcome.TIE and verdict.second_pass is None


def test_both_passes_prefer_b():
    judge, _ = judge_with(scripted("B", "A"))
    assert judge.judge_pair(A, B, C.CMI).outcome is Outcome.WIN_B


def test_second_pass_swaps_prompt_order():
    judge, backend = judge_with(scripted("A", "B"))
    judge.judge_pair(A, B, C.FN)
    first, second = (req.prompt_text for _, req in backend.calls)
    assert first.index("alpha") < first.index("beta")
    assert second.index("beta") < second.index("alpha")


def test_mirror_symmetry_with_position_biased_judge():
    pairs = [(make_report(tag=f"x{i}"), make_report(tag=f"y{i}")) for i in range(20)]
    judge, _ = judge_with(hash_judge)
    for a, b in pairs:
        for c in (C.FN, C.WRITING):
            assert judge.judge_pair(a, b, c).outcome is judge.judge_pair(b, a, c).outcome.mirrored()


def test_position_blind_judge_is_never_tied():
    judge, _ = judge_with(content_judge)
    for i in range(10):
        assert judge.judge_pair(make_report(tag=f"p{i}"), make_report(tag=f"q{i}"), C.INVEST).outcome is not Outcome.TIE


# -- batched mode -------------------------------------------------------------------


def test_batched_mode_two_calls_and_symmetry():
    judge, backend = judge_with(hash_judge, batched=True)
    verdicts = judge.judge_all(A, B)
    assert len(backend.calls) == 2
    assert [v.criterion for v in verdicts] == list(CRITERIA)
    back = judge.judge_all(B, A)
    assert [v.outcome for v in back] == [v.outcome.mirrored() for v in verdicts]


def test_batched_missing_criterion_is_tie():
    replies = iter([json.dumps({"FN": "A", "News": "A"}), json.dumps({"FN": "B", "News": "Z"})])
    judge, _ = judge_with(lambda request, tag: next(replies), batched=True)
    out = {v.criterion: v.outcome for v in judge.judge_all(A, B, (C.FN, C.NEWS, C.RISK))}
    assert out == {C.FN: Outcome.WIN_A, C.NEWS: Outcome.TIE, C.RISK: Outcome.TIE}


def test_batched_malformed_reply_is_all_ties():
    judge, _ = judge_with(lambda request, tag: "garbage", batched=True)
    assert {v.outcome for v in judge.judge_all(A, B)} == {Outcome.TIE}


# -- tallies and win rates ------------------------------------------------------------


def test_win_rate_examples():
    assert win_rate(3, 1, 0) == 0.75
    assert win_rate(0, 0, 5) == 0.5
    assert win_rate(1, 1, 2) == 0.5
    with pytest.raises(EmptyTally):
        win_rate(0, 0, 0)
    with pytest.raises(EmptyTally):
        adjusted_win_rate(Tally())


def test_awr_matches_published_counts():
    rows = json.loads((DATA / "awr_table.json").read_text())
    checked = [r for r in rows if "excluded" not in r]
    assert len(checked) == 34
    for r in checked:
        assert win_rate(r["wins"], r["losses"], r["ties"]) == pytest.approx(r["reported"], abs=0.005), r


def test_adjusted_win_rate_averages_judged_criteria():
    tally = Tally({C.FN: Counts(3, 1, 0), C.NEWS: Counts(0, 0, 4)})
    rates = adjusted_win_rate(tally)
    assert rates.per_criterion == {C.FN: 0.75, C.NEWS: 0.5}
    assert rates.average == pytest.approx(0.625)


counts = st.integers(0, 500)


@given(counts, counts, counts)
def test_win_rate_complement(w, l, t):
    if w + l + t == 0:
        return
    assert win_rate(w, l, t) + win_rate(l, w, t) == pytest.approx(1.0, abs=1e-12)
    assert 0.0 <= win_rate(w, l, t) <= 1.0


@given(counts, counts, counts, st.integers(1, 20))
def test_win_rate_scale_invariant(w, l, t, k):
    if w + l + t == 0:
        return
    assert win_rate(k * w, k * l, k * t) == pytest.approx(win_rate(w, l, t), abs=1e-12)


choice = st.sampled_from(["A", "B", None])
verdicts = st.lists(st.builds(PairVerdict, st.sampled_from(CRITERIA), choice, choice), max_size=40)


@given(verdicts)
def test_tally_conservation(vs):
    tally = Tally.of(vs)
    for c in CRITERIA:
        n = tally.counts.get(c, Counts())
        assert n.total == sum(v.criterion is c for v in vs)


@given(verdicts, verdicts, verdicts)
def test_tally_merge_associative_and_order_free(x, y, z):
    tx, ty, tz = Tally.of(x), Tally.of(y), Tally.of(z)
    left = tx.merge(ty).merge(tz).to_dict()
    assert left == tx.merge(ty.merge(tz)).to_dict()
    assert left == tz.merge(tx).merge(ty).to_dict()
    assert left == Tally.of(z + y + x).to_dict()


def test_all_ties_give_one_half():
    tally = Tally.of(PairVerdict(c, "A", None) for c in CRITERIA for _ in range(7))
    rates = adjusted_win_rate(tally)
    assert set(rates.per_criterion.values()) == {0.5} and rates.average == 0.5


# -- human agreement -------------------------------------------------------------------


def test_majority_vote():
    assert majority_vote(["A", "B", "A"]) == "A"
    assert majority_vote(["Tie", "Tie", "B"]) == "Tie"
    with pytest.raises(EvenRaters):
        majority_vote(["A", "B"])


def test_majority_agreement_extremes():
    humans = [["A", "A", "B"], ["B", "B", "B"]]
    assert majority_agreement(humans, ["A", "B"]) == 1.0
    assert majority_agreement(humans, ["B", "A"]) == 0.0
    with pytest.raises(LengthMismatch):
        majority_agreement(humans, ["A"])
    with pytest.raises(LengthMismatch):
        majority_agreement([], [])


def test_human_study_fixture():
    rows = json.loads((DATA / "human_study.json").read_text())
    assert len(rows) == 50
    for r in rows:
        assert majority_vote(r["raters"]) == r["majority"]
    assert majority_agreement([r["raters"] for r in rows], [r["judge"] for r in rows]) == 0.9


# -- tournament --------------------------------------------------------------------------


def test_run_tournament_order_and_jobs():
    pairs = [((f"T{i}", "2024-09-27"), make_report(tag=f"a{i}"), make_report(tag=f"b{i}")) for i in range(6)]
    results = []
    for jobs in (1, 4):
        judge, backend = judge_with(hash_judge)
        out = run_tournament(pairs, judge, jobs=jobs, criteria=(C.FN, C.RISK))
        assert len(backend.calls) == 6 * 2 * 2
        results.append(json.dumps(out.to_dict(), sort_keys=True))
    assert results[0] == results[1]
    data = json.loads(results[0])
    assert [p["ticker"] for p in data["pairs"]] == [f"T{i}" for i in range(6)]
    assert sum(data["tally"]["FN"].values()) == 6


def test_tournament_without_pairs_has_no_rate():
    judge, _ = judge_with(hash_judge)
    assert run_tournament([], judge).to_dict()["adjusted_win_rate"] is None
