"""C_V topic coherence.

Boolean sliding windows give word and word-pair probabilities; every top word is
represented by its NPMI vector against the whole top-word set, and the topic score is
the mean cosine between each word's vector and the sum of all vectors (one-set
segmentation). Cosines are clamped to [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .. import _kernels

EPS = 1e-12
DEFAULT_WINDOW = 110


@dataclass
class CoherenceReport:
    per_topic: list[float]

    @property
    def mean(self) -> float:
        return sum(self.per_topic) / len(self.per_topic) if self.per_topic else 0.0


@dataclass
class WindowCounts:
    n_windows: int
    occ: np.ndarray       # (W,)
    co: np.ndarray        # (W, W)


def count_windows(words: Sequence[str], docs: Iterable[Sequence[str]], window: int = DEFAULT_WINDOW,
                  method: str = "fast") -> WindowCounts:
    """Window counts for ``words`` over tokenized ``docs``.

    ``method="brute"`` enumerates every window as a set (the test oracle);
    ``"fast"`` streams each document through the sliding-window kernel.
    """
    index = {w: i for i, w in enumerate(words)}
    n = len(words)
    occ = np.zeros(n, dtype=np.int64)
    co = np.zeros((n, n), dtype=np.int64)
    total = 0
    for doc in docs:
        if method == "brute":
            if not doc:
                continue
            span = min(window, len(doc))
            for s in range(len(doc) - span + 1):
                present = {index[t] for t in doc[s:s + span] if t in index}
                total += 1
                for i in present:
                    occ[i] += 1
                    for j in present:
                        co[i, j] += 1
        elif method == "fast":
            ids = np.fromiter((index.get(t, -1) for t in doc), dtype=np.int64, count=len(doc))
            nw, o, c = _kernels.window_cooccurrence(ids, n, window)
            total += nw
            occ += o
            co += c
        else:
            raise ValueError(f"unknown method {method!r}")
    return WindowCounts(total, occ, co)


def npmi_matrix(counts: WindowCounts) -> np.ndarray:
    """NPMI(w_i, w_j) = log((p_ij + eps) / (p_i p_j)) / -log(p_ij + eps); -1 when a word
    never occurs."""
    n = len(counts.occ)
    out = np.full((n, n), -1.0)
    if counts.n_windows == 0:
        return out
    p = counts.occ / counts.n_windows
    pij = counts.co / counts.n_windows
    for i in range(n):
        for j in range(n):
            if p[i] == 0 or p[j] == 0:
                continue
            if pij[i, j] >= 1.0:
                out[i, j] = 1.0  # both words in every window; the ratio is 0/0
                continue
            joint = pij[i, j] + EPS
            out[i, j] = math.log(joint / (p[i] * p[j])) / -math.log(joint)
    return out


def cv_from_counts(counts: WindowCounts) -> float:
    vecs = npmi_matrix(counts)
    total = vecs.sum(axis=0)
    tnorm = float(np.linalg.norm(total))
    sims = []
    for v in vecs:
        vnorm = float(np.linalg.norm(v))
        cos = float(v @ total) / (vnorm * tnorm) if vnorm > 0 and tnorm > 0 else 0.0
        sims.append(min(1.0, max(0.0, cos)))
    return sum(sims) / len(sims)


def cv_coherence(topics: Sequence[Sequence[str]], docs: Sequence[Sequence[str]],
                 window: int = DEFAULT_WINDOW, method: str = "fast") -> CoherenceReport:
    """C_V for each topic's top words against a tokenized reference corpus."""
    if any(len(t) < 2 for t in topics):
        raise ValueError("each topic needs at least two top words")
    vocab = sorted({w for t in topics for w in t})
    allc = count_windows(vocab, docs, window, method)
    pos = {w: i for i, w in enumerate(vocab)}
    scores = []
    for t in topics:
        idx = [pos[w] for w in t]
        sub = WindowCounts(allc.n_windows, allc.occ[idx], allc.co[np.ix_(idx, idx)])
        scores.append(cv_from_counts(sub))
    return CoherenceReport(scores)
