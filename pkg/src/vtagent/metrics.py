"""Answer scoring: normalization, exact accuracy, ANLS, keyframe hit rate.

ANLS follows the community-standard definition: max over golds of the
normalized edit similarity, zeroed below the threshold (0.5). Normalization
is deliberately minimal — lowercase, whitespace collapse, terminal period
strip — and is applied identically on both sides of every comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import EmptyScoreSet
from .grammar import KeyframeSet


@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    accuracy: int  # 0 or 1
    anls: float
    hit: Optional[bool] = None  # defined only when pseudo keyframes + a selection exist


@dataclass(frozen=True)
class MetricReport:
    split_tag: str
    n: int
    mean_accuracy: float  # x100
    mean_anls: float      # x100
    hit_rate: Optional[float] = None  # x100, over samples with hit defined
    n_hit_defined: int = 0


def normalize_answer(text: str) -> str:
    out = " ".join(text.lower().split())
    if out.endswith("."):
        out = out[:-1].rstrip()
    return out


def exact_accuracy(pred: str, golds: Sequence[str]) -> int:
    if not golds:
        raise ValueError("golds must be non-empty")
    p = normalize_answer(pred)
    return 1 if any(p == normalize_answer(g) for g in golds) else 0


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode scalar values (two-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1,          # delete
                           cur[j - 1] + 1,       # insert
                           prev[j - 1] + (ca != cb)))  # substitute
        prev = cur
    return prev[-1]


def anls(pred: str, golds: Sequence[str], threshold: float = 0.5) -> float:
    if not golds:
        raise ValueError("golds must be non-empty")
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must be in [0, 1]")
    p = normalize_answer(pred)
    best = 0.0
    for g in golds:
        gn = normalize_answer(g)
        longest = max(len(p), len(gn))
        if longest == 0:
            s = 1.0
        else:
            s = 1.0 - levenshtein(p, gn) / longest
        best = max(best, s)
    return best if best >= threshold else 0.0


def hit(selected: KeyframeSet, annotated: frozenset[int] | set[int]) -> bool:
    if not annotated:
        raise ValueError("annotated set must be non-empty")
    return bool(set(selected.ids) & set(annotated))


def aggregate(scores: Iterable[SampleScore], split_tag: str = "") -> MetricReport:
    scores = list(scores)
    if not scores:
        raise EmptyScoreSet("no scores to aggregate")
    n = len(scores)
    mean_acc = 100.0 * sum(s.accuracy for s in scores) / n
    mean_anls = 100.0 * sum(s.anls for s in scores) / n
    with_hit = [s for s in scores if s.hit is not None]
    hit_rate = (100.0 * sum(1 for s in with_hit if s.hit) / len(with_hit)
                if with_hit else None)
    return MetricReport(split_tag=split_tag, n=n, mean_accuracy=mean_acc,
                        mean_anls=mean_anls, hit_rate=hit_rate,
                        n_hit_defined=len(with_hit))


def format_report(report: MetricReport, label: str = "") -> str:
    """Aligned-column text row: ACC. / ANLS (x100, 2 decimals for display)."""
    name = label or report.split_tag or "all"
    hit_col = f"{report.hit_rate:8.2f}" if report.hit_rate is not None else "       -"
    return f"{name:<24} {report.n:>6} {report.mean_accuracy:8.2f} {report.mean_anls:8.2f} {hit_col}"


REPORT_HEADER = f"{'split':<24} {'n':>6} {'ACC.':>8} {'ANLS':>8} {'Hit%':>8}"
