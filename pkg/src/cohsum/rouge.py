"""ROUGE-1/2/L overlap metrics and the weighted reward combination.

All functions operate on plain token lists (already lowercased and
split); multi-sentence summaries are flattened by the caller. No
stemming, no stopword removal, no length cutoff.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass


@dataclass(frozen=True)
class RougeScore:
    """Recall / precision / F1 triple for one ROUGE variant."""

    recall: float
    precision: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "RougeScore":
        denom = precision + recall
        f1 = 2.0 * precision * recall / denom if denom > 0 else 0.0
        return cls(recall=recall, precision=precision, f1=f1)


@dataclass(frozen=True)
class RewardWeights:
    """Mixing weights for the combined R-1 / R-2 / R-L reward."""

    w1: float = 0.4
    w2: float = 1.0
    wl: float = 0.5

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.wl < 0:
            raise ValueError(f"reward weights must be non-negative, got {self}")


DEFAULT_WEIGHTS = RewardWeights()


def ngram_counts(tokens: list[str], n: int) -> Counter:
    """Multiset of contiguous n-grams; empty when len(tokens) < n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: list[str], reference: list[str], n: int) -> RougeScore:
    """Clipped n-gram overlap: recall over reference counts, precision over candidate."""
    cand = ngram_counts(candidate, n)
    ref = ngram_counts(reference, n)
    match = sum(min(count, ref[gram]) for gram, count in cand.items())
    cand_total = sum(cand.values())
    ref_total = sum(ref.values())
    recall = match / ref_total if ref_total > 0 else 0.0
    precision = match / cand_total if cand_total > 0 else 0.0
    return RougeScore.from_pr(precision, recall)


def lcs_length(a: list[str], b: list[str]) -> int:
    """Length of the longest common subsequence, standard DP."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> RougeScore:
    """LCS-based score: recall = LCS/len(reference), precision = LCS/len(candidate)."""
    lcs = lcs_length(candidate, reference)
    recall = lcs / len(reference) if reference else 0.0
    precision = lcs / len(candidate) if candidate else 0.0
    return RougeScore.from_pr(precision, recall)


def combined_rouge(
    candidate: list[str],
    reference: list[str],
    weights: RewardWeights = DEFAULT_WEIGHTS,
) -> float:
    """Weighted sum of the three variants' F1 scores, the training reward."""
    return (
        weights.w1 * rouge_n(candidate, reference, 1).f1
        + weights.w2 * rouge_n(candidate, reference, 2).f1
        + weights.wl * rouge_l(candidate, reference).f1
    )
