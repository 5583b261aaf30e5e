import logging
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gnnsl.corpus import (
    BOUNDARY, BOUNDARY_ID, UNK, UNK_ID, EmptyDatasetError, LabelSet, ParseError, Scheme, Vocab,
    generate_synthetic, labels_from_spans, parse_conll, serialize_conll, spans_from_labels,
)

from conftest import TOY_TEXT, bio_labels


def names(ls, ids):
    return [ls.names[i] for i in ids]


def test_two_sentences_two_labels():
    ds, ls = parse_conll("Obama B-PER\n\nParis B-LOC", Scheme.BIO)
    assert len(ds) == 2
    assert set(ls.names) == {"B-PER", "B-LOC"}
    assert [s.id for s in ds] == [0, 1]
    assert names(ls, ds[0].labels) == ["B-PER"]


def test_empty_input_rejected():
    with pytest.raises(EmptyDatasetError):
        parse_conll("", Scheme.BIO)
    with pytest.raises(EmptyDatasetError):
        parse_conll("\n\n  \n", Scheme.BIO)


def test_one_column_line_names_line_number():
    with pytest.raises(ParseError) as err:
        parse_conll("word", Scheme.BIO)
    assert err.value.line == 1
    with pytest.raises(ParseError) as err:
        parse_conll("a O\nb O\nc d e\n", Scheme.BIO)
    assert err.value.line == 3


def test_crlf_accepted():
    a, _ = parse_conll("x B-PER\r\ny O\r\n\r\nz O\r\n", Scheme.BIO)
    b, _ = parse_conll("x B-PER\ny O\n\nz O\n", Scheme.BIO)
    assert [s.tokens for s in a] == [s.tokens for s in b]
    assert [s.labels for s in a] == [s.labels for s in b]


def test_orphan_inside_tag_is_repaired_and_counted(caplog):
    with caplog.at_level(logging.WARNING):
        ds, ls = parse_conll("a O\nb I-PER\nc I-PER\nd O\ne I-LOC\n", Scheme.BIO)
    assert ds.repairs == 2
    assert names(ls, ds[0].labels) == ["O", "B-PER", "I-PER", "O", "B-LOC"]
    assert "orphan" in caplog.text


def test_bio_rejects_bmes_tag():
    with pytest.raises(ParseError):
        parse_conll("a S-PER\n", Scheme.BIO)


def test_label_set_canonical_order():
    ls = LabelSet.from_names(["I-PER", "O", "B-LOC", "B-PER", "I-LOC"], Scheme.BIO)
    assert ls.names == ("O", "B-LOC", "I-LOC", "B-PER", "I-PER")


def test_label_set_rejects_duplicates_and_bad_prefixes():
    with pytest.raises(ValueError):
        LabelSet(("O", "O"), Scheme.BIO)
    with pytest.raises(ValueError):
        LabelSet(("O", "M-PER"), Scheme.BIO)


def test_vocab_reserved_ids():
    v = Vocab(["a", "b", "a"])
    assert v.stoi[BOUNDARY] == BOUNDARY_ID == 0
    assert v.stoi[UNK] == UNK_ID == 1
    assert v.encode(["a", "zzz", "b"]) == [2, 1, 3]
    assert all(v.stoi[t] == i for i, t in enumerate(v.itos))


# ----------------------------------------------------------------- spans


def ids(ls, seq):
    return [ls.id(n) for n in seq]


@pytest.mark.parametrize(
    "seq, expected",
    [
        (["B-PER", "I-PER", "O"], [(0, 2, "PER")]),
        (["O", "O"], []),
        (["B-PER", "B-ORG"], [(0, 1, "PER"), (1, 2, "ORG")]),
        (["B-PER", "I-LOC"], [(0, 1, "PER"), (1, 2, "LOC")]),
    ],
)
def test_bio_spans(seq, expected):
    ls = bio_labels()
    assert spans_from_labels(ids(ls, seq), ls) == expected


def test_bmes_spans():
    ls = LabelSet.from_names(["B-W", "M-W", "E-W", "S-W"], Scheme.BMES)
    seq = ["B-W", "M-W", "E-W", "S-W", "B-W", "E-W"]
    assert spans_from_labels(ids(ls, seq), ls) == [(0, 3, "W"), (3, 4, "W"), (4, 6, "W")]


def test_plain_scheme_gives_one_span_per_token():
    ls = LabelSet.from_names(["NN", "VB"], Scheme.PLAIN)
    assert spans_from_labels([0, 1, 0], ls) == [(0, 1, "NN"), (1, 2, "VB"), (2, 3, "NN")]


@st.composite
def bio_sequences(draw):
    n = draw(st.integers(1, 15))
    types = ["PER", "LOC", "ORG"]
    seq = []
    for _ in range(n):
        kind = draw(st.sampled_from(["O", "B", "I"]))
        t = draw(st.sampled_from(types))
        if kind == "I" and (not seq or seq[-1] == "O" or seq[-1][2:] != t):
            kind = "B"  # keep the sequence well formed
        seq.append("O" if kind == "O" else f"{kind}-{t}")
    return seq


@given(bio_sequences())
def test_spans_disjoint_ordered_and_invertible(seq):
    ls = bio_labels()
    y = ids(ls, seq)
    spans = spans_from_labels(y, ls)
    for (s1, e1, _), (s2, e2, _) in zip(spans, spans[1:]):
        assert s1 < e1 <= s2 < e2
    assert labels_from_spans(spans, len(y), ls) == y


@st.composite
def bmes_sequences(draw):
    n_spans = draw(st.integers(1, 6))
    seq = []
    for _ in range(n_spans):
        t = draw(st.sampled_from(["W", "X"]))
        length = draw(st.integers(1, 4))
        if draw(st.booleans()):
            seq.append("O")
        if length == 1:
            seq.append(f"S-{t}")
        else:
            seq += [f"B-{t}"] + [f"M-{t}"] * (length - 2) + [f"E-{t}"]
    return seq


@given(bmes_sequences())
def test_bmes_round_trip(seq):
    ls = LabelSet.from_names(["O"] + [f"{p}-{t}" for p in "BMES" for t in "WX"], Scheme.BMES)
    y = ids(ls, seq)
    assert labels_from_spans(spans_from_labels(y, ls), len(y), ls) == y


word = st.text(alphabet="abcdefgh.,", min_size=1, max_size=5)


@given(st.lists(st.lists(st.tuples(word, st.sampled_from(["O", "B-PER", "B-LOC"])), min_size=1, max_size=6),
                min_size=1, max_size=5))
def test_parse_serialize_identity(sents):
    text = "\n".join("".join(f"{w} {lab}\n" for w, lab in s) for s in sents)
    ds, ls = parse_conll(text, Scheme.BIO)
    assert serialize_conll(ds, ls) == text
    again, _ = parse_conll(serialize_conll(ds, ls), Scheme.BIO, ls)
    assert [s.labels for s in again] == [s.labels for s in ds]


def test_toy_fixture_parses(toy):
    ds, ls = toy
    assert len(ds) == 4 and ds.num_tokens == 17
    assert serialize_conll(ds, ls) == TOY_TEXT


# ------------------------------------------------------------- synthetic


def test_synthetic_is_deterministic():
    a, la = generate_synthetic(1, 100, 0.2)
    b, lb = generate_synthetic(1, 100, 0.2)
    assert serialize_conll(a, la) == serialize_conll(b, lb)
    assert a.splits == b.splits
    c, lc = generate_synthetic(2, 100, 0.2)
    assert serialize_conll(c, lc) != serialize_conll(a, la)


@pytest.mark.parametrize("f", [0.6, -0.1])
def test_synthetic_rejects_bad_fraction(f):
    with pytest.raises(ValueError):
        generate_synthetic(1, 100, f)


def test_synthetic_has_enough_long_tail_test_tokens():
    ds, ls = generate_synthetic(1, 1000, 0.2)
    train, test = ds.split("train"), ds.split("test")
    counts = Counter()
    for s in train:
        for a, b, _ in spans_from_labels(s.labels, ls):
            counts[tuple(s.tokens[a:b])] += 1
    rare_tokens = 0
    for s in test:
        for a, b, _ in spans_from_labels(s.labels, ls):
            if counts[tuple(s.tokens[a:b])] <= 1:
                rare_tokens += b - a
    assert rare_tokens >= 150


def test_synthetic_long_tail_forms_seen_once_and_recur():
    ds, ls = generate_synthetic(3, 600, 0.2)
    train, test = ds.split("train"), ds.split("test")

    def forms(data):
        c = Counter()
        for s in data:
            for a, b, _ in spans_from_labels(s.labels, ls):
                c[tuple(s.tokens[a:b])] += 1
        return c

    tr, te = forms(train), forms(test)
    once = {f for f, n in tr.items() if n == 1}
    assert once
    assert once <= set(te)
    assert 0.15 <= len(once) / len(tr) <= 0.25


def test_split_renumbers_ids():
    ds, _ = generate_synthetic(1, 50, 0.2)
    test = ds.split("test")
    assert [s.id for s in test] == list(range(len(test)))
    assert len(ds.split("train")) + len(ds.split("dev")) + len(test) == 50
