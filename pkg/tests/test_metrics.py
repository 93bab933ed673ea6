import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roleqa.core import GoldAnswers, Trace
from roleqa.metrics import EvalError, answer_hit, bootstrap_mean, evaluate, exact_match, normalize_answer

from conftest import doc


@pytest.mark.parametrize("raw, norm", [
    ("The Cyrus", "cyrus"),
    ("1989", "1989"),
    ("  Grand   National! ", "grand national"),
    ("an apple, a day", "apple day"),
])
def test_normalize(raw, norm):
    assert normalize_answer(raw) == norm


def test_exact_match_examples():
    assert exact_match("1989", GoldAnswers(("1989",))) == 1
    assert exact_match("1951", GoldAnswers(("1989",))) == 0
    assert exact_match("the cyrus", GoldAnswers(("Cyrus", "Kourosh"))) == 1
    assert exact_match("Cyrus the Great", GoldAnswers(("Cyrus",))) == 0


@given(st.text(max_size=30), st.text(max_size=30))
def test_exact_match_symmetric(x, y):
    assert exact_match(x, [y]) == exact_match(y, [x])


def test_answer_hit():
    assert answer_hit([doc("a", "He won the 1989 Grand National steeplechase")], ["1989"]) == 1
    assert answer_hit([], ["1989"]) == 0
    assert answer_hit([doc("a", "... Cyrus the Great ... the first human rights document")], ["Cyrus"]) == 1
    assert answer_hit([doc("a", "George Mason wrote it")], ["Cyrus"]) == 0


def _trace(qid, answer, texts):
    return Trace(qid, reranked=tuple(doc(f"{qid}-{i}", t, rank=i) for i, t in enumerate(texts)), answer=answer)


def test_evaluate_em_and_recall():
    data = {f"q{i}": GoldAnswers(("x",)) for i in range(4)}
    traces = [_trace("q0", "x", ["x", "y", "y", "y"]), _trace("q1", "no", ["y", "y", "x", "y"]),
              _trace("q2", "x", ["x"]), _trace("q3", "x", ["y", "y", "y", "x"])]
    rep = evaluate(traces, data, ks=(2, 4), bootstrap_rounds=10)
    assert rep.em == 0.75
    # hits at k=2: (1,0,1,0); at k=4: all 1
    assert rep.recall_at == {2: 0.5, 4: 1.0}


def test_evaluate_unknown_question():
    with pytest.raises(EvalError, match="q9"):
        evaluate([_trace("q9", "x", [])], {"q1": GoldAnswers(("x",))})


def test_bootstrap_constant_bits_exact():
    assert bootstrap_mean([1, 1, 1, 1], 10, seed=3) == 1.0
    assert bootstrap_mean([0, 0, 0], 10, seed=3) == 0.0


def test_bootstrap_reproducible():
    bits = [1, 0, 1, 1, 0, 0, 1]
    assert bootstrap_mean(bits, 10, seed=5) == bootstrap_mean(bits, 10, seed=5)


def test_evaluate_singleton():
    rep = evaluate([_trace("q", "x", ["x"])], {"q": GoldAnswers(("x",))})
    assert rep.em in (0.0, 1.0)


def test_include_expansion_flag():
    from roleqa.core import Expansion

    t = Trace("q", chosen_expansion=Expansion("The answer is 1989."), reranked=(doc("a", "nothing"),), answer="1989")
    assert evaluate([t], {"q": GoldAnswers(("1989",))}, ks=(1,)).recall_at[1] == 0.0
    assert evaluate([t], {"q": GoldAnswers(("1989",))}, ks=(1,), include_expansion=True).recall_at[1] == 1.0


@settings(max_examples=80, deadline=None)
@given(st.lists(st.lists(st.sampled_from(["x", "y", "z", "the x", "xy"]), max_size=10), min_size=1, max_size=10))
def test_recall_monotone_in_k(doc_lists):
    data = {f"q{i}": GoldAnswers(("x",)) for i in range(len(doc_lists))}
    traces = [_trace(f"q{i}", "x", texts) for i, texts in enumerate(doc_lists)]
    rep = evaluate(traces, data, ks=(1, 2, 4, 8))
    vals = [rep.recall_at[k] for k in (1, 2, 4, 8)]
    assert vals == sorted(vals)


def test_report_table_columns():
    rep = evaluate([_trace("q", "x", ["x"])], {"q": GoldAnswers(("x",))}, ks=(2, 4, 8))
    header = rep.table().splitlines()[0]
    assert "Recall@2" in header and "Recall@4" in header and "Recall@8" in header
