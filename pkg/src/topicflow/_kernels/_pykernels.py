"""Pure-Python reference versions of the compiled kernels (same signatures)."""
from __future__ import annotations

import numpy as np


def lcs_length(a, b) -> int:
    """Length of the longest common subsequence of two integer sequences."""
    a = [int(x) for x in a]
    b = [int(x) for x in b]
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] > prev[j] else prev[j]
        prev = cur
    return prev[-1]


def window_cooccurrence(doc, n_words: int, window: int):
    """Boolean sliding-window counts over one document.

    ``doc`` holds word indices in [0, n_words) or -1 for tokens outside the word set.
    A document no longer than ``window`` forms a single window. Returns
    ``(n_windows, occ[n_words], co[n_words, n_words])`` where ``co[i, j]`` counts the
    windows containing both words (``co[i, i] == occ[i]``).
    """
    doc = [int(x) for x in doc]
    occ = np.zeros(n_words, dtype=np.int64)
    co = np.zeros((n_words, n_words), dtype=np.int64)
    if window < 1:
        raise ValueError("window must be >= 1")
    length = len(doc)
    if length == 0:
        return 0, occ, co
    span = min(window, length)
    inside = [0] * n_words
    present: set[int] = set()
    for t in doc[:span]:
        if t >= 0:
            inside[t] += 1
            present.add(t)
    n_windows = length - span + 1
    for start in range(n_windows):
        if start:
            t = doc[start - 1]
            if t >= 0:
                inside[t] -= 1
                if inside[t] == 0:
                    present.discard(t)
            t = doc[start + span - 1]
            if t >= 0:
                inside[t] += 1
                present.add(t)
        for i in present:
            occ[i] += 1
            for j in present:
                co[i, j] += 1
    return n_windows, occ, co
