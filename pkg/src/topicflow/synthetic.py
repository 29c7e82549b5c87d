"""Synthetic corpora with known ground truth, for tests and desk-scale demos."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DocumentRecord


@dataclass
class TopicCorpus:
    records: list[DocumentRecord]
    vocab: list[str]           # word i is vocab[i]
    topics: np.ndarray         # (T, V) true topic-word distributions
    mixtures: np.ndarray       # (n_docs, T)
    counts: np.ndarray         # (n_docs, V) bag of words


def word_list(v: int) -> list[str]:
    return [f"w{i:03d}" for i in range(v)]


def topic_corpus(n_docs: int = 2000, n_topics: int = 5, v_bow: int = 100, doc_len: int = 50,
                 topic_concentration: float = 0.1, doc_concentration: float = 0.1,
                 seed: int = 0) -> TopicCorpus:
    """LDA-style documents: theta ~ Dir(doc_concentration), words ~ Cat(theta @ topics)."""
    rng = np.random.default_rng(seed)
    vocab = word_list(v_bow)
    topics = rng.dirichlet(np.full(v_bow, topic_concentration), size=n_topics)
    mixtures = rng.dirichlet(np.full(n_topics, doc_concentration), size=n_docs)
    records, counts = [], np.zeros((n_docs, v_bow))
    for d in range(n_docs):
        p = mixtures[d] @ topics
        words = rng.choice(v_bow, size=doc_len, p=p / p.sum())
        np.add.at(counts[d], words, 1.0)
        records.append(DocumentRecord(f"doc{d:05d}", " ".join(vocab[w] for w in words), ""))
    return TopicCorpus(records, vocab, topics, mixtures, counts)


def copy_pairs(n_pairs: int = 32, n_topics: int = 4, v_words: int = 40, doc_len: tuple = (12, 20),
               summary_len: int = 5, seed: int = 0) -> list[DocumentRecord]:
    """Topical documents whose summary is their first ``summary_len`` words."""
    rng = np.random.default_rng(seed)
    vocab = word_list(v_words)
    topics = rng.dirichlet(np.full(v_words, 0.2), size=n_topics)
    out = []
    for i in range(n_pairs):
        t = rng.integers(n_topics)
        n = int(rng.integers(doc_len[0], doc_len[1] + 1))
        words = [vocab[w] for w in rng.choice(v_words, size=n, p=topics[t])]
        out.append(DocumentRecord(f"pair{i:03d}", " ".join(words), " ".join(words[:summary_len])))
    return out


# English-like news pairs -----------------------------------------------------

_DOMAINS = {
    "sports": {
        "subjects": ["striker", "coach", "goalkeeper", "captain", "midfielder", "club", "referee", "manager"],
        "verbs": [("scored", "scores"), ("praised", "praises"), ("signed", "signs"), ("criticised", "criticises")],
        "objects": ["penalty", "contract", "league", "trophy", "fans", "derby", "final", "transfer"],
        "filler": ["stadium", "season", "match", "goal", "team", "cup", "supporters", "training", "injury", "victory"],
    },
    "markets": {
        "subjects": ["bank", "investor", "regulator", "startup", "retailer", "exporter", "broker", "insurer"],
        "verbs": [("raised", "raises"), ("cut", "cuts"), ("reported", "reports"), ("delayed", "delays")],
        "objects": ["rates", "profits", "dividend", "forecast", "shares", "bonds", "prices", "merger"],
        "filler": ["market", "quarter", "growth", "inflation", "economy", "percent", "trading", "earnings", "debt", "revenue"],
    },
    "weather": {
        "subjects": ["storm", "forecaster", "flood", "heatwave", "drought", "blizzard", "hurricane", "frost"],
        "verbs": [("hit", "hits"), ("threatened", "threatens"), ("damaged", "damages"), ("closed", "closes")],
        "objects": ["coast", "roads", "farms", "harbour", "schools", "crops", "bridges", "valley"],
        "filler": ["rain", "wind", "temperatures", "warning", "residents", "snow", "clouds", "evacuation", "rivers", "emergency"],
    },
    "technology": {
        "subjects": ["engineer", "developer", "chipmaker", "researcher", "platform", "hacker", "designer", "robot"],
        "verbs": [("launched", "launches"), ("tested", "tests"), ("patched", "patches"), ("unveiled", "unveils")],
        "objects": ["software", "processor", "app", "network", "satellite", "battery", "browser", "model"],
        "filler": ["device", "users", "data", "cloud", "update", "security", "code", "privacy", "internet", "servers"],
    },
    "health": {
        "subjects": ["doctor", "hospital", "nurse", "scientist", "clinic", "patient", "surgeon", "pharmacist"],
        "verbs": [("treated", "treats"), ("approved", "approves"), ("studied", "studies"), ("warned", "warns")],
        "objects": ["vaccine", "virus", "therapy", "diet", "trial", "outbreak", "drug", "symptoms"],
        "filler": ["disease", "care", "medicine", "research", "wellbeing", "infection", "treatment", "ward", "recovery", "cancer"],
    },
}
_DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
_CONNECT = ["officials said", "according to reports", "local media said", "sources confirmed"]


def news_pairs(n_pairs: int = 200, seed: int = 0) -> list[DocumentRecord]:
    """Short templated news stories; the summary restates the lead sentence."""
    rng = np.random.default_rng(seed)
    names = sorted(_DOMAINS)
    out = []
    for i in range(n_pairs):
        dom = _DOMAINS[names[rng.integers(len(names))]]
        subj = dom["subjects"][rng.integers(len(dom["subjects"]))]
        past, present = dom["verbs"][rng.integers(len(dom["verbs"]))]
        obj = dom["objects"][rng.integers(len(dom["objects"]))]
        day = _DAYS[rng.integers(len(_DAYS))]
        sents = [f"The {subj} {past} the {obj} on {day}, {_CONNECT[rng.integers(len(_CONNECT))]}."]
        for _ in range(int(rng.integers(3, 6))):
            words = rng.choice(dom["filler"], size=int(rng.integers(4, 8)))
            glue = rng.choice(["the", "a", "of", "and", "in", "with", "for"], size=len(words))
            body = " ".join(f"{g} {w}" for g, w in zip(glue, words))
            sents.append(body[0].upper() + body[1:] + ".")
        out.append(DocumentRecord(f"news{i:04d}", " ".join(sents), f"{subj} {present} {obj} on {day}"))
    return out
