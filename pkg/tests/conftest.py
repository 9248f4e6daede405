import pytest

from bioqa.ingest import BioASQQuestion, Snippet
from bioqa.tokenization import Vocab

_ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


@pytest.fixture
def toy_vocab():
    tokens = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "organ", "##oid", "##s", "what", "is", "an",
              "the", "gene", "p53", "xyz", "abc", "causes", ".", "?", ",", "(", ")", "-", "il",
              "6", "a", "b", "c", "##c", "##b", "x", "y", "z", "##y", "##z", "and"]
    return Vocab(tokens)


@pytest.fixture
def factoid_question():
    return BioASQQuestion(
        id="q1", body="What causes XYZ?", qtype="factoid",
        exact_answers=[["ABC"]],
        snippets=[Snippet("ABC causes XYZ.", "11"), Snippet("Here ABC and abc appear.", "11"),
                  Snippet("Nothing relevant.", "12")],
        document_pmids=["11", "12"],
    )
