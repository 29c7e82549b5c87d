"""ROUGE-N and ROUGE-L (F-measure), no stemming or stopword removal."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

from .. import _kernels
from ..corpus import tokenize


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, p: float, r: float) -> "RougeScore":
        return cls(p, r, 2 * p * r / (p + r) if p + r > 0 else 0.0)


def ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[Hashable], reference: Sequence[Hashable], n: int = 1) -> RougeScore:
    if n < 1:
        raise ValueError("n must be >= 1")
    c, r = ngrams(candidate, n), ngrams(reference, n)
    nc, nr = sum(c.values()), sum(r.values())
    if nc == 0 or nr == 0:
        return RougeScore(0.0, 0.0, 0.0)
    match = sum((c & r).values())
    return RougeScore.from_pr(match / nc, match / nr)


def _as_ids(a: Sequence[Hashable], b: Sequence[Hashable]) -> tuple[list[int], list[int]]:
    table: dict = {}
    ia = [table.setdefault(t, len(table)) for t in a]
    ib = [table.setdefault(t, len(table)) for t in b]
    return ia, ib


def lcs(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    ia, ib = _as_ids(a, b)
    return _kernels.lcs_length(ia, ib)


def rouge_l(candidate: Sequence[Hashable], reference: Sequence[Hashable]) -> RougeScore:
    if not candidate or not reference:
        return RougeScore(0.0, 0.0, 0.0)
    ell = lcs(candidate, reference)
    return RougeScore.from_pr(ell / len(candidate), ell / len(reference))


def rouge_scores(candidate: str, reference: str) -> dict[str, RougeScore]:
    """ROUGE-1/2/L between two raw strings, tokenized with the corpus tokenizer."""
    c, r = tokenize(candidate), tokenize(reference)
    return {"rouge1": rouge_n(c, r, 1), "rouge2": rouge_n(c, r, 2), "rougeL": rouge_l(c, r)}
