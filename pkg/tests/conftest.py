import numpy as np
import pytest
from hypothesis import settings

from gnnsl.corpus import LabelSet, Scheme, TokenSequence, parse_conll

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

TOY_TEXT = """\
alice B-PER
went O
to O
paris B-LOC
. O

bob B-PER
smith I-PER
joined O
acme B-ORG
. O

paris B-LOC
is O
big O

carol B-PER
likes O
acme B-ORG
corp I-ORG
"""


@pytest.fixture
def toy():
    return parse_conll(TOY_TEXT, Scheme.BIO)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def bio_labels():
    return LabelSet.from_names(["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"], Scheme.BIO)


def sentence(tokens, labels, sid=0):
    return TokenSequence(list(tokens), list(labels), sid)


# criterion number -> verdict line, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
