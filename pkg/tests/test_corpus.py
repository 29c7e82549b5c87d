import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from topicflow import corpus as C

WORDS = st.lists(st.sampled_from(["cat", "dog", "the", "a", "mat", "sat", ",", "!", "zzz"]), max_size=30)


def rec(doc, summ="", i="x"):
    return C.DocumentRecord(i, doc, summ)


# tokenize ------------------------------------------------------------------------

@pytest.mark.parametrize("text, expected", [
    ("Hello, world!", ["hello", ",", "world", "!"]),
    ("", []),
    ("A  b", ["a", "b"]),
    ("don't\tstop\n", ["don", "'", "t", "stop"]),
    ("Ünïcode Wörds", ["ünïcode", "wörds"]),
])
def test_tokenize(text, expected):
    assert C.tokenize(text) == expected


@given(st.text(max_size=80))
def test_tokenize_is_idempotent_on_joined_tokens(text):
    toks = C.tokenize(text)
    assert C.tokenize(" ".join(toks)) == toks
    assert all(t == t.lower() and t.strip() == t and t for t in toks)


# stopwords ---------------------------------------------------------------------

def test_default_stopword_list_has_179_entries():
    stop = C.default_stopwords()
    assert len(stop) == 179
    assert {"the", "and", "of", "a"} <= stop


def test_stopwords_from_file(tmp_path):
    p = tmp_path / "stop.txt"
    p.write_text("foo\nBar\n\n", encoding="utf-8")
    assert C.load_stopwords(p) == {"foo", "bar"}


# vocabularies ------------------------------------------------------------------

def test_build_vocabs_drops_stopwords_from_bow():
    vocab, bow = C.build_vocabs([rec("the cat"), rec("the dog")], 1, {"the"})
    assert {"the", "cat", "dog"} <= set(vocab.itos)
    assert set(bow.itos) == {"cat", "dog"}


def test_min_count_threshold():
    vocab, _ = C.build_vocabs([rec("the cat", "the"), rec("the dog", "the")], 2, {"the"})
    assert not {"cat", "dog"} & set(vocab.itos)
    assert "the" in vocab


def test_ties_are_lexicographic():
    vocab, _ = C.build_vocabs([rec("b b a a", "")], 1, set())
    assert vocab.itos[len(C.SPECIALS):] == ["a", "b"]


def test_specials_take_the_first_ids():
    vocab, _ = C.build_vocabs([rec("x")], 1, set())
    assert vocab.itos[:5] == list(C.SPECIALS)
    assert (C.PAD, C.UNK, C.CLS, C.BOS, C.EOS) == (0, 1, 2, 3, 4)


def test_bow_excludes_punctuation_unless_kept():
    _, bow = C.build_vocabs([rec("cat , dog !")], 1, set())
    assert set(bow.itos) == {"cat", "dog"}
    _, bow = C.build_vocabs([rec("cat , dog !")], 1, set(), bow_keep_punct=True)
    assert set(bow.itos) == {"cat", "dog", ",", "!"}


def test_bow_max_size_keeps_most_frequent():
    _, bow = C.build_vocabs([rec("cat cat cat dog dog emu")], 1, set(), bow_max_size=2)
    assert bow.itos == ["cat", "dog"]


def test_bow_vocabulary_rejects_stopwords():
    with pytest.raises(ValueError):
        C.BowVocabulary(["the", "cat"], stopwords={"the"})


def test_build_vocabs_is_deterministic():
    records = [rec("z y x w v u " * i, "t s") for i in range(1, 6)]
    a, b = C.build_vocabs(records), C.build_vocabs(list(records))
    assert a[0].itos == b[0].itos and a[1].itos == b[1].itos


def test_vocab_round_trip(tmp_path):
    vocab, bow = C.build_vocabs([rec("the cat sat on the mat", "cat sat")])
    C.save_vocabs(tmp_path, vocab, bow)
    first = (tmp_path / "vocab.tsv").read_text("utf-8").splitlines()[0]
    assert first == "#version=1"
    v2, b2 = C.load_vocabs(tmp_path)
    assert v2.itos == vocab.itos and v2.counts == vocab.counts
    assert b2.itos == bow.itos


def test_vocab_file_without_header_is_rejected(tmp_path):
    p = tmp_path / "v.tsv"
    p.write_text("a\t0\t1\n", encoding="utf-8")
    with pytest.raises(ValueError):
        C.Vocabulary.load(p)


# encode ------------------------------------------------------------------------

def test_bow_counts():
    bow = C.Vocabulary(["cat", "dog"])
    vocab = C.Vocabulary(list(C.SPECIALS) + ["cat", "dog"])
    ex = C.encode(rec("cat cat dog"), vocab, bow)
    np.testing.assert_array_equal(ex.x_bow, [2.0, 1.0])


def test_truncation_keeps_cls_plus_first_tokens():
    vocab, bow = C.build_vocabs([rec(" ".join(f"t{i}" for i in range(10)))], 1, set())
    ex = C.encode(rec(" ".join(f"t{i}" for i in range(10))), vocab, bow, n_max=5)
    assert len(ex.x_ids) == 5
    assert ex.x_ids[0] == C.CLS
    assert C.decode_ids(ex.x_ids[1:], vocab) == ["t0", "t1", "t2", "t3"]
    assert ex.x_bow.sum() == 10  # counted before truncation


def test_oov_document():
    vocab, bow = C.build_vocabs([rec("cat")], 1, set())
    ex = C.encode(rec("zzz"), vocab, bow)
    assert list(ex.x_ids) == [C.CLS, C.UNK]
    assert not ex.x_bow.any()


def test_summary_framing_and_truncation():
    vocab, bow = C.build_vocabs([rec("a", "x y z w")], 1, set())
    ex = C.encode(rec("a", "x y z w"), vocab, bow, m_max=4)
    assert ex.y_ids[0] == C.BOS and ex.y_ids[-1] == C.EOS and len(ex.y_ids) == 4
    assert C.decode_ids(ex.y_ids, vocab, strip_special=True) == ["x", "y"]


@given(WORDS)
def test_encode_decode_round_trip(tokens):
    doc = " ".join(tokens) or "cat"
    vocab, bow = C.build_vocabs([rec("cat dog the mat")], 1, {"the"})
    ex = C.encode(rec(doc), vocab, bow, n_max=12)
    expected = [t if t in vocab else "<unk>" for t in C.tokenize(doc)][:11]
    assert C.decode_ids(ex.x_ids[1:], vocab) == expected


@given(WORDS, st.randoms(use_true_random=False))
def test_bow_is_order_invariant(tokens, rnd):
    vocab, bow = C.build_vocabs([rec("cat dog mat sat zzz")], 1, set())
    shuffled = list(tokens)
    rnd.shuffle(shuffled)
    a = C.encode(rec(" ".join(tokens) or "cat"), vocab, bow)
    b = C.encode(rec(" ".join(shuffled) or "cat"), vocab, bow)
    np.testing.assert_array_equal(a.x_bow, b.x_bow)


# batching ----------------------------------------------------------------------

def _example(n):
    return C.EncodedExample(np.arange(n, dtype=np.int64) + 5, np.array([C.BOS, 7, C.EOS]), np.zeros(3))


def test_padding_and_masks():
    b = C.collate([_example(3), _example(5)])
    assert b.x_ids.shape == (2, 5)
    np.testing.assert_array_equal(b.x_mask.astype(int), [[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]])
    assert (b.x_ids[0, 3:] == C.PAD).all()


def test_single_example_width():
    assert C.collate([_example(4)]).x_ids.shape == (1, 4)


def test_batches_preserve_order():
    exs = [_example(i + 1) for i in range(5)]
    bs = C.batches(exs, 2)
    assert [len(b) for b in bs] == [2, 2, 1]
    assert bs[2].x_ids.shape == (1, 5)


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        C.collate([])


# records and stats -------------------------------------------------------------

def test_corpus_stats():
    assert C.corpus_stats([]) == (0, 0.0, 0.0)
    n, doc, summ = C.corpus_stats([rec("a b c d", "x"), rec("a b c d e f", "x y z")])
    assert (n, doc, summ) == (2, 5.0, 2.0)


def test_load_records(tmp_path):
    p = tmp_path / "c.jsonl"
    rows = [{"id": "1", "document": "Héllo wörld", "summary": "hi"}, {"id": "2", "document": "x"}]
    p.write_text("\n".join(json.dumps(r, ensure_ascii=False) for r in rows) + "\n", encoding="utf-8")
    recs = C.load_records(p)
    assert [r.id for r in recs] == ["1", "2"]
    assert recs[0].document == "Héllo wörld" and recs[1].summary == ""


def test_empty_document_rejected():
    with pytest.raises(ValueError):
        C.DocumentRecord("1", "   ", "x")
