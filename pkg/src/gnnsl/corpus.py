"""Labeled token sequences, label schemes, CoNLL I/O and a synthetic corpus."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

log = logging.getLogger(__name__)

BOUNDARY = "<s>"
UNK = "<unk>"
BOUNDARY_ID = 0
UNK_ID = 1


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyDatasetError(ValueError):
    pass


class Scheme(str, Enum):
    BIO = "BIO"
    BMES = "BMES"
    PLAIN = "PLAIN"


_PREFIX_ORDER = {"B": 0, "I": 1, "M": 1, "E": 2, "S": 3}


def _split_label(name):
    if name == "O":
        return "O", ""
    if len(name) >= 2 and name[1] == "-" and name[0] in _PREFIX_ORDER:
        return name[0], name[2:]
    if name in _PREFIX_ORDER:
        return name, ""
    return None, name


@dataclass(frozen=True)
class LabelSet:
    names: tuple
    scheme: Scheme = Scheme.BIO

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")
        for name in self.names:
            prefix, _ = _split_label(name)
            if self.scheme is Scheme.BIO and prefix not in ("O", "B", "I"):
                raise ValueError(f"label {name!r} is not valid under BIO")
            if self.scheme is Scheme.BMES and prefix not in ("O", "B", "M", "E", "S"):
                raise ValueError(f"label {name!r} is not valid under BMES")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    def __len__(self):
        return len(self.names)

    def id(self, name):
        return self._index[name]

    def __contains__(self, name):
        return name in self._index

    @classmethod
    def from_names(cls, names, scheme):
        """Canonical ordering: O first, then by entity type and prefix."""
        scheme = Scheme(scheme)
        uniq = set(names)
        if scheme is Scheme.BIO:
            # an orphan I-X implies its B-X after repair
            uniq |= {"B-" + n[2:] for n in uniq if n.startswith("I-")}
        if scheme is Scheme.PLAIN:
            ordered = sorted(uniq)
        else:
            rest = sorted(
                (n for n in uniq if n != "O"),
                key=lambda n: (_split_label(n)[1], _PREFIX_ORDER.get(_split_label(n)[0], 9)),
            )
            ordered = (["O"] if "O" in uniq else []) + rest
        return cls(tuple(ordered), scheme)


@dataclass
class TokenSequence:
    tokens: list
    labels: list
    id: int = 0

    def __post_init__(self):
        if len(self.tokens) != len(self.labels) or not self.tokens:
            raise ValueError("sentence needs >= 1 token and one label per token")

    def __len__(self):
        return len(self.tokens)


@dataclass
class Dataset:
    sentences: list
    splits: dict = field(default_factory=dict)
    repairs: int = 0

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, i):
        return self.sentences[i]

    @property
    def num_tokens(self):
        return sum(len(s) for s in self.sentences)

    def split(self, name):
        """Sentences of one partition, renumbered 0..n-1 as if parsed from their own file."""
        picked = [self.sentences[i] for i in self.splits[name]]
        return Dataset(
            [TokenSequence(list(s.tokens), list(s.labels), i) for i, s in enumerate(picked)]
        )

    def digest(self, labels):
        return hashlib.sha256(serialize_conll(self, labels).encode("utf-8")).hexdigest()


class Vocab:
    """Token ids; 0 is the sentence boundary marker and 1 is UNK."""

    def __init__(self, tokens=()):
        self.itos = [BOUNDARY, UNK]
        self.stoi = {BOUNDARY: BOUNDARY_ID, UNK: UNK_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, tok):
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens):
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    @classmethod
    def build(cls, dataset):
        return cls(t for s in dataset for t in s.tokens)


# ------------------------------------------------------------------- CoNLL I/O


def parse_conll(text, scheme=Scheme.BIO, labels=None):
    """Parse two-column CoNLL text into a dataset and its label set.

    When ``labels`` is given, label names are mapped into it and an unknown
    name is a parse error; otherwise the set is collected from the data.
    Orphan ``I-X`` tags under BIO are rewritten to ``B-X`` and counted.
    """
    scheme = Scheme(scheme)
    raw = []
    cur_toks, cur_labs = [], []
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            if cur_toks:
                raw.append((cur_toks, cur_labs))
                cur_toks, cur_labs = [], []
            continue
        cols = line.split()
        if len(cols) != 2:
            raise ParseError(f"expected 2 columns, found {len(cols)}", lineno)
        prefix, _ = _split_label(cols[1])
        if scheme is Scheme.BIO and prefix not in ("O", "B", "I"):
            raise ParseError(f"label {cols[1]!r} is not valid under BIO", lineno)
        if scheme is Scheme.BMES and prefix not in ("O", "B", "M", "E", "S"):
            raise ParseError(f"label {cols[1]!r} is not valid under BMES", lineno)
        cur_toks.append(cols[0])
        cur_labs.append((cols[1], lineno))
    if cur_toks:
        raw.append((cur_toks, cur_labs))
    if not raw:
        raise EmptyDatasetError("input contains no sentences")

    repairs = 0
    if scheme is Scheme.BIO:
        for _, labs in raw:
            prev_type = None
            for i, (name, lineno) in enumerate(labs):
                if name.startswith("I-"):
                    if prev_type != name[2:]:
                        log.warning("line %d: orphan %s repaired to B-%s", lineno, name, name[2:])
                        labs[i] = ("B-" + name[2:], lineno)
                        repairs += 1
                    prev_type = name[2:]
                elif name.startswith("B-"):
                    prev_type = name[2:]
                else:
                    prev_type = None

    if labels is None:
        labels = LabelSet.from_names((n for _, labs in raw for n, _ in labs), scheme)
    sentences = []
    for sid, (toks, labs) in enumerate(raw):
        ids = []
        for name, lineno in labs:
            if name not in labels:
                raise ParseError(f"label {name!r} not in label set", lineno)
            ids.append(labels.id(name))
        sentences.append(TokenSequence(toks, ids, sid))
    return Dataset(sentences, repairs=repairs), labels


def serialize_conll(dataset, labels):
    blocks = []
    for s in dataset:
        blocks.append("".join(f"{t} {labels.names[y]}\n" for t, y in zip(s.tokens, s.labels)))
    return "\n".join(blocks)


def read_conll(path, scheme=Scheme.BIO, labels=None):
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_conll(fh.read(), scheme, labels)


def write_conll(path, dataset, labels):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(serialize_conll(dataset, labels))


# ----------------------------------------------------------------------- spans


def spans_from_labels(labels, label_set):
    """Maximal well-formed spans as (start, end_exclusive, type) tuples."""
    names = label_set.names
    scheme = label_set.scheme
    if scheme is Scheme.PLAIN:
        return [(i, i + 1, names[y]) for i, y in enumerate(labels)]
    spans = []
    start, typ = None, None

    def close(end):
        nonlocal start, typ
        if start is not None:
            spans.append((start, end, typ))
        start, typ = None, None

    for i, y in enumerate(labels):
        prefix, t = _split_label(names[y])
        if scheme is Scheme.BIO:
            if prefix == "B" or (prefix == "I" and typ != t):
                close(i)
                start, typ = i, t
            elif prefix != "I":
                close(i)
        else:
            if prefix == "S":
                close(i)
                spans.append((i, i + 1, t))
            elif prefix == "B" or (prefix in ("M", "E") and typ != t):
                close(i)
                start, typ = i, t
                if prefix == "E":
                    close(i + 1)
            elif prefix == "E":
                close(i + 1)
            elif prefix != "M":
                close(i)
    close(len(labels))
    return spans


def labels_from_spans(spans, length, label_set):
    """Inverse of spans_from_labels for well-formed label sequences."""
    scheme = label_set.scheme
    if scheme is Scheme.PLAIN:
        out = [None] * length
        for s, _, t in spans:
            out[s] = label_set.id(t)
        return out
    o = label_set.id("O") if "O" in label_set else None
    out = [o] * length

    def name(prefix, t):
        return f"{prefix}-{t}" if t else prefix

    for s, e, t in spans:
        if scheme is Scheme.BIO:
            out[s] = label_set.id(name("B", t))
            for i in range(s + 1, e):
                out[i] = label_set.id(name("I", t))
        elif e - s == 1:
            out[s] = label_set.id(name("S", t))
        else:
            out[s] = label_set.id(name("B", t))
            for i in range(s + 1, e - 1):
                out[i] = label_set.id(name("M", t))
            out[e - 1] = label_set.id(name("E", t))
    return out


# ------------------------------------------------------------------- synthetic

ENTITY_TYPES = ("PER", "LOC", "ORG")

# Slots: a type name fixes the entity type from context; "ANY" leaves it to
# the entity's identity alone.
TEMPLATES = (
    "{PER} visited {LOC} last week .",
    "{ORG} hired {PER} as chief advisor .",
    "mr. {PER} said the plan would work .",
    "the offices of {ORG} are located in {LOC} .",
    "she flew to {LOC} on monday .",
    "shares of {ORG} fell sharply today .",
    "we heard about {ANY} on the radio .",
    "everyone was talking about {ANY} again .",
    "the report mentioned {ANY} twice .",
    "{ANY} was in the news yesterday .",
    "nobody expected {ANY} to appear .",
    "the letter from {ANY} arrived late .",
    "they compared {ANY} with {ANY} .",
    "a story about {ANY} spread quickly .",
    "{ANY} and {ANY} were discussed at length .",
    "it was a quiet day with little news .",
    "the weather stayed cold all week .",
)

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "kr", "tr")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")


def _make_name_factory(rng):
    seen = set()
    context = {w for tpl in TEMPLATES for w in tpl.split()}

    def make():
        while True:
            n_syl = int(rng.integers(2, 4))
            word = "".join(
                _ONSETS[int(rng.integers(len(_ONSETS)))] + _VOWELS[int(rng.integers(len(_VOWELS)))]
                for _ in range(n_syl)
            )
            if word not in seen and word not in context:
                seen.add(word)
                return word

    return make


def generate_synthetic(seed, n_sentences, long_tail_fraction):
    """Template corpus with a controlled share of once-seen entity forms.

    Returns a dataset whose ``splits`` maps train/dev/test to sentence ids
    (70/10/20). A ``long_tail_fraction`` share of the distinct entity
    surface forms occurs exactly once in train and again in dev/test; every
    other form occurs at least twice in train.
    """
    if not 0.0 <= long_tail_fraction <= 0.5:
        raise ValueError(f"long_tail_fraction must lie in [0, 0.5], got {long_tail_fraction}")
    if n_sentences < 10:
        raise ValueError(f"n_sentences must be >= 10, got {n_sentences}")
    rng = np.random.default_rng(seed)
    make_name = _make_name_factory(rng)

    n_train = int(0.7 * n_sentences)
    n_dev = int(0.1 * n_sentences)
    split_of = ["train"] * n_train + ["dev"] * n_dev + ["test"] * (n_sentences - n_train - n_dev)

    # 1. templates and slot types
    skeletons = []
    slots = {(sp, t): [] for sp in ("train", "dev", "test") for t in ENTITY_TYPES}
    for sid in range(n_sentences):
        tpl = TEMPLATES[int(rng.integers(len(TEMPLATES)))].split()
        for pos, tok in enumerate(tpl):
            if tok.startswith("{"):
                typ = tok[1:-1]
                if typ == "ANY":
                    typ = ENTITY_TYPES[int(rng.integers(len(ENTITY_TYPES)))]
                tpl[pos] = typ
                slots[(split_of[sid], typ)].append((sid, pos))
        skeletons.append(tpl)

    # 2. surface forms per type and slot filling
    fill = {}
    f = long_tail_fraction
    for typ in ENTITY_TYPES:
        train_slots = slots[("train", typ)]
        held_slots = slots[("dev", typ)] + slots[("test", typ)]
        test_slots = slots[("test", typ)]
        if f > 0:
            per_lt = 1 + 2 * (1 - f) / f
            n_lt = min(len(test_slots) // 2, int(len(train_slots) / per_lt))
            n_head = max(1, int(round(n_lt * (1 - f) / f)))
        else:
            n_lt = 0
            n_head = max(1, len(train_slots) // 3)
        n_head = max(1, min(n_head, (len(train_slots) - n_lt) // 2))

        def new_form():
            n_tok = 1 if rng.random() < 0.6 else 2
            return tuple(make_name() for _ in range(n_tok))

        lt_forms = [new_form() for _ in range(n_lt)]
        head_forms = [new_form() for _ in range(n_head)]

        order = rng.permutation(len(train_slots))
        train_slots = [train_slots[i] for i in order]
        cursor = 0
        for form in lt_forms:
            fill[train_slots[cursor]] = form
            cursor += 1
        for form in head_forms:
            for _ in range(2):
                if cursor < len(train_slots):
                    fill[train_slots[cursor]] = form
                    cursor += 1
        for slot in train_slots[cursor:]:
            fill[slot] = head_forms[int(rng.integers(len(head_forms)))]

        # every long-tail form recurs in test; half of held-out slots are long-tail
        order = rng.permutation(len(test_slots))
        test_first = [test_slots[i] for i in order[:n_lt]]
        for slot, form in zip(test_first, lt_forms):
            fill[slot] = form
        for slot in held_slots:
            if slot in fill:
                continue
            if lt_forms and rng.random() < 0.5:
                fill[slot] = lt_forms[int(rng.integers(len(lt_forms)))]
            else:
                fill[slot] = head_forms[int(rng.integers(len(head_forms)))]

    # 3. assemble sentences
    names = ["O"] + [f"{p}-{t}" for t in ENTITY_TYPES for p in ("B", "I")]
    label_set = LabelSet.from_names(names, Scheme.BIO)
    sentences = []
    for sid, tpl in enumerate(skeletons):
        toks, labs = [], []
        for pos, tok in enumerate(tpl):
            if tok in ENTITY_TYPES:
                form = fill[(sid, pos)]
                for j, w in enumerate(form):
                    toks.append(w)
                    labs.append(label_set.id(("B-" if j == 0 else "I-") + tok))
            else:
                toks.append(tok)
                labs.append(label_set.id("O"))
        sentences.append(TokenSequence(toks, labs, sid))
    splits = {
        "train": list(range(n_train)),
        "dev": list(range(n_train, n_train + n_dev)),
        "test": list(range(n_train + n_dev, n_sentences)),
    }
    return Dataset(sentences, splits), label_set
