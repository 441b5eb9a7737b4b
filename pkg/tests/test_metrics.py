from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskforge import metrics
from taskforge.errors import CorpusTooSmall, LengthMismatch, PreconditionError

CORPUS = [
    "Pick up the red cube and lift it off the table.",
    "Pick up the blue cube and lift it above the table.",
    "Push the banana forward along the table.",
    "Open the wooden drawer by pulling its handle.",
    "Stack the red cube on top of the blue cube.",
]


def grams(tokens, k):
    return [" ".join(tokens[i : i + k]) for i in range(len(tokens) - k + 1)]


def bleu_oracle(hyp, refs, n=4):
    """Straight product of clipped precisions counted with list scans."""
    if not hyp:
        return 0.0
    prod = 1.0
    for k in range(1, n + 1):
        hg = grams(hyp, k)
        if not hg:
            return 0.0
        matched = 0
        for g in set(hg):
            best = max(grams(r, k).count(g) for r in refs)
            matched += min(hg.count(g), best)
        prod *= matched / len(hg)
    if prod == 0.0:
        return 0.0
    lens = sorted(len(r) for r in refs)
    r = min(lens, key=lambda L: (abs(L - len(hyp)), L))
    bp = 1.0 if len(hyp) > r else math.exp(1 - r / len(hyp))
    return bp * prod ** (1.0 / n)


def self_bleu_oracle(corpus, n=4):
    toks = [metrics.tokenize(s) for s in corpus]
    scores = [bleu_oracle(toks[i], [t for j, t in enumerate(toks) if j != i], n) for i in range(len(toks))]
    return sum(scores) / len(scores)


def test_self_bleu_matches_oracle_on_hand_corpus():
    rep = metrics.self_bleu(CORPUS, 4)
    want = self_bleu_oracle(CORPUS, 4)
    assert abs(rep.self_bleu - want) <= 1e-9
    assert rep.self_bleu > 0.0 and rep.corpus_size == 5 and len(rep.per_sentence) == 5


def test_hand_computed_bleu2():
    # precisions 5/6 and 3/5, equal lengths so no brevity penalty
    hyp = "the cat sat on the mat".split()
    ref = "the cat is on the mat".split()
    assert metrics.sentence_bleu(hyp, [ref], 2) == pytest.approx(math.sqrt(0.5), abs=1e-15)
    assert metrics.sentence_bleu(hyp, [ref], 4) == 0.0


def test_brevity_penalty_uses_closest_shorter_reference():
    hyp = "a b c".split()
    refs = ["a b c d e".split(), "a b c x".split(), "a".split()]
    # |4 - 3| = 1 beats |1 - 3| = 2, so the effective reference length is 4
    assert metrics.sentence_bleu(hyp, refs, 1) == pytest.approx(math.exp(1 - 4 / 3))


def test_identical_and_disjoint_corpora():
    assert metrics.self_bleu(["the red cube is here"] * 3).self_bleu == 1.0
    assert metrics.self_bleu(["alpha beta gamma delta", "one two three four"]).self_bleu == 0.0


def test_tokenizer_drops_punctuation():
    assert metrics.tokenize("Lift it, then STOP!  now_ok") == ["lift", "it", "then", "stop", "now", "ok"]


words = st.lists(st.sampled_from("a b c d e f".split()), min_size=0, max_size=10)


@settings(max_examples=200)
@given(words, st.lists(words.filter(bool), min_size=1, max_size=3), st.integers(1, 4))
def test_sentence_bleu_matches_oracle(hyp, refs, n):
    got = metrics.sentence_bleu(hyp, refs, n)
    assert abs(got - bleu_oracle(hyp, refs, n)) <= 1e-12
    assert 0.0 <= got <= 1.0 + 1e-12


def test_bleu_errors():
    with pytest.raises(PreconditionError):
        metrics.sentence_bleu(["a"], [])
    with pytest.raises(CorpusTooSmall):
        metrics.self_bleu(["only one"])


def test_solved_threshold_is_strict():
    assert not metrics.is_solved(0.10) and metrics.is_solved(0.1000001)
    stats = metrics.solved_stats([("lifting", 0.5), ("lifting", 0.1), ("pushing", 0.0), ("pushing", 0.2)])
    assert stats["families"]["lifting"] == {"solved": 1, "total": 2, "fraction": 0.5}
    assert stats["overall"] == {"solved": 2, "total": 4, "fraction": 0.5}
    assert metrics.solved_union({"a": {"t1": 0.5, "t2": 0.0}, "b": {"t2": 0.2, "t3": 0.05}}) == {"t1", "t2"}


def test_throughput_report():
    manifest = {
        "tasks": {"a": {"rendered": 10, "frames_rendered": 100, "frames_attempted": 400}, "b": {"rendered": 2, "frames_rendered": 20, "frames_attempted": 80}},
        "timings": {"collect": 1800.0, "replay": 1800.0},
    }
    rep = metrics.throughput_report(manifest)
    assert rep["demos_per_hour"] == pytest.approx(12.0)
    assert rep["replay_speedup_estimate"] == pytest.approx(4.0)
    assert metrics.throughput_report({"tasks": {}})["replay_speedup_estimate"] == 1.0


def test_confusion_matrix():
    cm = metrics.confusion([True, True, False, False, True], [True, False, True, False, True])
    assert cm.to_dict() == {"tp": 2, "fp": 1, "fn": 1, "tn": 1} and cm.off_diagonal == 2
    assert (cm + cm).total == 10
    with pytest.raises(LengthMismatch):
        metrics.confusion([True], [])


def test_format_table():
    out = metrics.format_table([("a", 0.5), ("bb", 1)], ["k", "v"])
    assert out.splitlines() == ["k   v", "a   0.5000", "bb  1"]
