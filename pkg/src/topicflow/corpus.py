"""Document/summary ingestion, vocabularies, bag-of-words and padded batches."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .io import atomic_write_text, read_jsonl

PAD, UNK, CLS, BOS, EOS = 0, 1, 2, 3, 4
SPECIALS = ("<pad>", "<unk>", "<cls>", "<bos>", "<eos>")
VOCAB_HEADER = "#version=1"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and break punctuation into separate tokens."""
    return _TOKEN_RE.findall(text.lower())


def _is_punct(tok: str) -> bool:
    return re.match(r"\w", tok) is None


def default_stopwords() -> frozenset[str]:
    text = resources.files("topicflow.data").joinpath("stopwords_en.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def load_stopwords(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip())


@dataclass(frozen=True)
class DocumentRecord:
    id: str
    document: str
    summary: str = ""

    def __post_init__(self):
        if not self.document.strip():
            raise ValueError(f"record {self.id!r}: empty document")


def load_records(path) -> list[DocumentRecord]:
    out = []
    for i, row in enumerate(read_jsonl(path)):
        try:
            out.append(DocumentRecord(str(row["id"]), row["document"], row.get("summary", "")))
        except KeyError as exc:
            raise ValueError(f"{path}: line {i + 1} lacks field {exc}") from None
    return out


class Vocabulary:
    """Token <-> id bijection with frequency counts."""

    def __init__(self, tokens: Sequence[str], counts: Sequence[int] | None = None):
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")
        self.counts = list(counts) if counts is not None else [0] * len(self.itos)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def id(self, tok: str, default: int | None = None) -> int | None:
        return self.stoi.get(tok, default)

    def token(self, i: int) -> str:
        return self.itos[i]

    def save(self, path) -> None:
        lines = [VOCAB_HEADER] + [f"{t}\t{i}\t{c}" for i, (t, c) in enumerate(zip(self.itos, self.counts))]
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0].strip() != VOCAB_HEADER:
            raise ValueError(f"{path}: missing '{VOCAB_HEADER}' header")
        rows = [ln.split("\t") for ln in lines[1:] if ln]
        rows.sort(key=lambda r: int(r[1]))
        if [int(r[1]) for r in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: ids are not contiguous from 0")
        return cls([r[0] for r in rows], [int(r[2]) for r in rows])


class BowVocabulary(Vocabulary):
    def __init__(self, tokens, counts=None, stopwords: Iterable[str] = ()):
        super().__init__(tokens, counts)
        self.stopwords = frozenset(stopwords)
        bad = self.stopwords.intersection(self.itos)
        if bad:
            raise ValueError(f"stopwords in BoW vocabulary: {sorted(bad)[:5]}")

    @classmethod
    def load(cls, path, stopwords: Iterable[str] = ()) -> "BowVocabulary":
        v = Vocabulary.load(path)
        return cls(v.itos, v.counts, stopwords)


def build_vocabs(records: Sequence[DocumentRecord], min_count: int = 1,
                 stopwords: Iterable[str] | None = None, bow_max_size: int | None = None,
                 bow_keep_punct: bool = False) -> tuple[Vocabulary, BowVocabulary]:
    """Token vocab (specials first, then by descending count, ties lexicographic) and
    the BoW vocab derived from it by dropping stopwords (and punctuation unless kept)."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not records:
        raise ValueError("cannot build vocabularies from an empty corpus")
    stop = default_stopwords() if stopwords is None else frozenset(stopwords)
    counts: Counter[str] = Counter()
    for r in records:
        counts.update(tokenize(r.document))
        counts.update(tokenize(r.summary))
    ranked = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIALS),
                    key=lambda t: (-counts[t], t))
    vocab = Vocabulary(list(SPECIALS) + ranked, [0] * len(SPECIALS) + [counts[t] for t in ranked])
    bow = [t for t in ranked if t not in stop and (bow_keep_punct or not _is_punct(t))]
    if bow_max_size is not None:
        bow = bow[:bow_max_size]
    return vocab, BowVocabulary(bow, [counts[t] for t in bow], stop)


@dataclass
class EncodedExample:
    x_ids: np.ndarray
    y_ids: np.ndarray
    x_bow: np.ndarray


def bow_counts(tokens: Iterable[str], bow_vocab: Vocabulary) -> np.ndarray:
    x = np.zeros(len(bow_vocab), dtype=np.float64)
    for t in tokens:
        j = bow_vocab.stoi.get(t)
        if j is not None:
            x[j] += 1.0
    return x


def encode(record: DocumentRecord, vocab: Vocabulary, bow_vocab: Vocabulary,
           n_max: int = 256, m_max: int = 64) -> EncodedExample:
    """Source ids framed as [CLS, ...] (<= n_max), target ids as [BOS, ..., EOS] (<= m_max).

    BoW counts use the whole document, before truncation.
    """
    if n_max <= 1 or m_max <= 2:
        raise ValueError("need n_max > 1 and m_max > 2")
    doc = tokenize(record.document)
    x_ids = [CLS] + [vocab.stoi.get(t, UNK) for t in doc[: n_max - 1]]
    summ = tokenize(record.summary)
    y_ids = [BOS] + [vocab.stoi.get(t, UNK) for t in summ[: m_max - 2]] + [EOS]
    return EncodedExample(np.array(x_ids, dtype=np.int64), np.array(y_ids, dtype=np.int64),
                          bow_counts(doc, bow_vocab))


def decode_ids(ids: Iterable[int], vocab: Vocabulary, strip_special: bool = False) -> list[str]:
    out = []
    for i in ids:
        i = int(i)
        if strip_special and i in (PAD, CLS, BOS, EOS):
            continue
        out.append(vocab.itos[i])
    return out


@dataclass
class Batch:
    x_ids: np.ndarray       # (B, N) int
    x_mask: np.ndarray      # (B, N) bool
    y_ids: np.ndarray       # (B, M) int
    y_mask: np.ndarray      # (B, M) bool
    x_bow: np.ndarray       # (B, V_bow)

    def __len__(self):
        return self.x_ids.shape[0]


def _pad(seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def collate(examples: Sequence[EncodedExample]) -> Batch:
    if not examples:
        raise ValueError("cannot collate an empty list of examples")
    x_ids, x_mask = _pad([e.x_ids for e in examples])
    y_ids, y_mask = _pad([e.y_ids for e in examples])
    return Batch(x_ids, x_mask, y_ids, y_mask, np.stack([e.x_bow for e in examples]))


def batches(examples: Sequence[EncodedExample], size: int) -> list[Batch]:
    """Order-preserving padded batches of at most ``size`` examples."""
    if size < 1:
        raise ValueError("batch size must be >= 1")
    if not examples:
        raise ValueError("no examples to batch")
    return [collate(examples[i:i + size]) for i in range(0, len(examples), size)]


def corpus_stats(records: Sequence[DocumentRecord]) -> tuple[int, float, float]:
    """(count, mean document tokens, mean summary tokens)."""
    if not records:
        return 0, 0.0, 0.0
    n = len(records)
    doc = sum(len(tokenize(r.document)) for r in records) / n
    summ = sum(len(tokenize(r.summary)) for r in records) / n
    return n, doc, summ


def save_vocabs(out_dir, vocab: Vocabulary, bow: BowVocabulary) -> None:
    out_dir = Path(out_dir)
    vocab.save(out_dir / "vocab.tsv")
    bow.save(out_dir / "bow_vocab.tsv")


def load_vocabs(vocab_dir, stopwords=None) -> tuple[Vocabulary, BowVocabulary]:
    vocab_dir = Path(vocab_dir)
    return (Vocabulary.load(vocab_dir / "vocab.tsv"),
            BowVocabulary.load(vocab_dir / "bow_vocab.tsv", stopwords or ()))
