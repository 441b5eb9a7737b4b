"""Diversity, success, throughput and agreement metrics."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import CorpusTooSmall, LengthMismatch, PreconditionError

SOLVED_THRESHOLD = 0.10
_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, then split on whitespace and punctuation (punctuation dropped)."""
    return _TOKEN_RE.findall(text.lower())


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(hypothesis: Sequence[str], references: Sequence[Sequence[str]], n: int = 4) -> float:
    """BLEU-n with uniform weights, clipped counts, brevity penalty and no smoothing."""
    if not references:
        raise PreconditionError("BLEU needs at least one reference")
    c = len(hypothesis)
    if c == 0:
        return 0.0
    log_p = 0.0
    for k in range(1, n + 1):
        hyp = ngram_counts(hypothesis, k)
        total = sum(hyp.values())
        if total == 0:
            return 0.0
        max_ref: Counter = Counter()
        for ref in references:
            for g, cnt in ngram_counts(ref, k).items():
                if cnt > max_ref[g]:
                    max_ref[g] = cnt
        clipped = sum(min(cnt, max_ref[g]) for g, cnt in hyp.items())
        if clipped == 0:
            return 0.0
        log_p += math.log(clipped / total) / n
    # closest reference length, shorter one on ties
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


@dataclass(frozen=True)
class DiversityReport:
    corpus_size: int
    n: int
    self_bleu: float
    per_sentence: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"corpus_size": self.corpus_size, "n": self.n, "self_bleu": self.self_bleu, "per_sentence": list(self.per_sentence)}


def self_bleu(corpus: Sequence[str], n: int = 4) -> DiversityReport:
    """Mean BLEU of each sentence against all the others as references."""
    if len(corpus) < 2:
        raise CorpusTooSmall("self-BLEU needs at least two sentences")
    toks = [tokenize(s) for s in corpus]
    scores = tuple(sentence_bleu(toks[i], toks[:i] + toks[i + 1 :], n) for i in range(len(toks)))
    return DiversityReport(len(corpus), n, math.fsum(scores) / len(scores), scores)


def is_solved(rate: float) -> bool:
    return rate > SOLVED_THRESHOLD


def solved_stats(results: Iterable[tuple[str, float]]) -> dict:
    """Per-family and overall solved fractions from (family, success rate) pairs."""
    fam: dict[str, list[bool]] = {}
    for family, rate in results:
        fam.setdefault(family, []).append(is_solved(rate))
    families = {
        f: {"solved": sum(v), "total": len(v), "fraction": sum(v) / len(v)} for f, v in sorted(fam.items()) if v
    }
    total = sum(d["total"] for d in families.values())
    solved = sum(d["solved"] for d in families.values())
    return {"families": families, "overall": {"solved": solved, "total": total, "fraction": solved / total if total else 0.0}}


def solved_union(per_agent: Mapping[str, Mapping[str, float]]) -> set[str]:
    """Tasks solved by at least one agent."""
    return {task for rates in per_agent.values() for task, r in rates.items() if is_solved(r)}


def throughput_report(manifest: Mapping) -> dict:
    """Demos per hour and the render-time speedup of replaying only successes."""
    tasks = manifest.get("tasks", {})
    rendered = sum(t.get("rendered", 0) for t in tasks.values())
    frames_rendered = sum(t.get("frames_rendered", 0) for t in tasks.values())
    frames_attempted = sum(t.get("frames_attempted", 0) for t in tasks.values())
    timings = manifest.get("timings", {})
    wall = float(timings.get("total", sum(v for k, v in timings.items() if k != "total")))
    demos_per_hour = rendered / (wall / 3600.0) if wall > 0 else 0.0
    speedup = frames_attempted / frames_rendered if frames_rendered else 1.0
    return {
        "rendered": rendered,
        "wall_seconds": wall,
        "demos_per_hour": demos_per_hour,
        "stage_timings": dict(timings),
        "replay_speedup_estimate": speedup,
    }


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def off_diagonal(self) -> int:
        return self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def confusion(judgments: Sequence[bool], oracle: Sequence[bool]) -> ConfusionMatrix:
    if len(judgments) != len(oracle):
        raise LengthMismatch(f"{len(judgments)} judgments vs {len(oracle)} oracle verdicts")
    c = Counter((bool(j), bool(o)) for j, o in zip(judgments, oracle))
    return ConfusionMatrix(c[(True, True)], c[(True, False)], c[(False, True)], c[(False, False)])


def format_table(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    cells = [[str(h) for h in header]] + [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells)
