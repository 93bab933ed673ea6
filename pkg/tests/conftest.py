import json

import pytest

from roleqa.backends import MockBackend
from roleqa.core import Document, GoldAnswers, PromptSet, Question
from roleqa.retrieval import Bm25Retriever, RetrievalConfig, build_index
from roleqa.roles import DEFAULT_PROMPTS, RoleBindings

TOY_CORPUS = [
    ("d1", "Little Polveir", "Little Polveir won the 1989 Grand National steeplechase at Aintree."),
    ("d2", "Grand National", "The Grand National is a handicap steeplechase. The Grand National is run at Aintree."),
    ("d3", "1989 Grand National", "On 8 April 1989 the race was won in a time of ten minutes."),
    ("d4", "Cyrus Cylinder", "Cyrus the Great issued the first declaration of human rights."),
    ("d5", "Epsom Derby", "The Derby is a flat race for three year old horses."),
]

TOY_QUESTIONS = [
    (Question("q1", "when did little polveir win the grand national"), GoldAnswers(("1989",))),
    (Question("q2", "who wrote the first declaration of human rights"), GoldAnswers(("Cyrus",))),
    (Question("q3", "what kind of race is the derby"), GoldAnswers(("flat race", "flat"))),
]


def doc(doc_id, text=None, score=0.0, rank=0, title=""):
    return Document(doc_id, title, text or f"passage {doc_id}", score, rank)


@pytest.fixture
def toy_index():
    return build_index(TOY_CORPUS)


@pytest.fixture
def toy_retriever(toy_index):
    return Bm25Retriever(toy_index, RetrievalConfig(n=5))


@pytest.fixture
def prompts():
    return PromptSet(**DEFAULT_PROMPTS)


@pytest.fixture
def mock_roles():
    answers = {"when did little polveir win the grand national": "1989"}
    return RoleBindings.uniform(MockBackend(answers))


@pytest.fixture
def toy_files(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text("".join(json.dumps({"id": i, "title": t, "text": x}) + "\n" for i, t, x in TOY_CORPUS))
    dataset = tmp_path / "dataset.jsonl"
    dataset.write_text("".join(
        json.dumps({"id": q.id, "question": q.text, "answers": list(g.answers)}) + "\n" for q, g in TOY_QUESTIONS))
    return {"corpus": corpus, "dataset": dataset, "dir": tmp_path}
