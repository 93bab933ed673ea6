import json

import pytest

from roleqa import io
from roleqa.cli import main

from cli_fixtures import adversarial, parse_compare_table, write_config, write_jsonl


@pytest.fixture
def built(toy_files):
    d = toy_files["dir"]
    assert main(["index", str(toy_files["corpus"]), str(d / "index.json")]) == 0
    assert main(["init-prompts", str(d / "prompts.json")]) == 0
    cfg = write_config(d / "config.json", {
        "pipeline": {"m_expansions": 2, "n_retrieve": 5, "window": {"w": 3, "l": 1}},
        "backends": {"default": {"type": "mock",
                                 "answers": {"when did little polveir win the grand national": "1989"}}},
    })
    return {**toy_files, "index": d / "index.json", "prompts": d / "prompts.json", "config": cfg}


def test_index_happy_path(toy_files, capsys):
    out = toy_files["dir"] / "i.json"
    assert main(["index", str(toy_files["corpus"]), str(out)]) == 0
    assert "5 documents indexed" in capsys.readouterr().out
    assert out.exists()


def test_index_malformed_line(tmp_path, capsys):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"id": "a", "text": "x"}\n{"id": "b", "text": "y"}\n{not json\n')
    assert main(["index", str(p), str(tmp_path / "i.json")]) != 0
    assert "line 3" in capsys.readouterr().err


def test_index_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert main(["index", str(p), str(tmp_path / "i.json")]) != 0


def test_run_writes_one_trace_per_question(built, capsys):
    out = built["dir"] / "traces.jsonl"
    code = main(["--config", str(built["config"]), "run", str(built["dataset"]), str(built["index"]),
                 str(built["prompts"]), str(out)])
    assert code == 0
    rows = io.read_jsonl(out)
    assert [r["question_id"] for r in rows] == ["q1", "q2", "q3"]
    assert "fallback rate" in capsys.readouterr().out


def test_run_missing_prompts(built):
    code = main(["run", str(built["dataset"]), str(built["index"]), str(built["dir"] / "nope.json"),
                 str(built["dir"] / "t.jsonl")])
    assert code != 0


def test_run_deterministic_compare(built):
    paths = []
    for name, workers in (("a.jsonl", "1"), ("b.jsonl", "3")):
        out = built["dir"] / name
        assert main(["--config", str(built["config"]), "--seed", "5", "--workers", workers,
                     "--deterministic-compare", "run", str(built["dataset"]), str(built["index"]),
                     str(built["prompts"]), str(out)]) == 0
        paths.append(out)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert io.read_jsonl(paths[0])[0]["timing"] == {}


def test_train_checkpoints_and_resume(built):
    d = built["dir"]
    two = write_jsonl(d / "two.jsonl", io.read_jsonl(built["dataset"])[:2])
    out = d / "train"
    args = ["--config", str(built["config"]), "train", str(two), str(built["index"]), str(built["prompts"]), str(out)]
    assert main(args) == 0
    assert len(list((out / "checkpoints").iterdir())) == 2
    final = io.read_prompt_store(out / "final_prompts.json")["prompts"]
    assert final.version == 2
    before = (out / "prompts.json").read_text()
    assert main(args + ["--resume"]) == 0
    assert (out / "prompts.json").read_text() == before


def test_train_rejects_zero_max_examples(built, capsys):
    cfg = json.loads(built["config"].read_text())
    cfg["train"] = {"max_examples": 0}
    bad = write_config(built["dir"] / "bad.json", cfg)
    code = main(["--config", str(bad), "train", str(built["dataset"]), str(built["index"]), str(built["prompts"]),
                 str(built["dir"] / "t")])
    assert code != 0
    assert "max_examples" in capsys.readouterr().err


def test_config_rejects_inline_secret(built):
    bad = write_config(built["dir"] / "secret.json", {"backends": {"default": {"type": "http", "endpoint": "x",
                                                                               "model": "m", "api_key": "k"}}})
    assert main(["--config", str(bad), "init-prompts", str(built["dir"] / "p.json")]) != 0


def test_eval_report(built, capsys):
    d = built["dir"]
    traces = d / "traces.jsonl"
    main(["--config", str(built["config"]), "run", str(built["dataset"]), str(built["index"]), str(built["prompts"]),
          str(traces)])
    capsys.readouterr()
    assert main(["eval", str(traces), str(built["dataset"]), "--ks", "2", "4", "8"]) == 0
    out = capsys.readouterr().out
    report = json.loads(out[: out.rindex("}") + 1])
    assert set(report["recall_at"]) == {"2", "4", "8"}
    # only q1 has a canned correct answer
    assert report["em"] == pytest.approx(1 / 3)
    assert "Recall@8" in out


def test_eval_unknown_qid(built, capsys):
    traces = write_jsonl(built["dir"] / "t.jsonl", [{"question_id": "zz", "answer": "x"}])
    assert main(["eval", str(traces), str(built["dataset"])]) != 0


def test_compare_rerank_separates_strategies(tmp_path, capsys):
    fx = adversarial(tmp_path)
    assert main(["index", str(fx["corpus"]), str(tmp_path / "adv.json")]) == 0
    capsys.readouterr()
    assert main(["--config", str(fx["config"]), "compare-rerank", str(fx["dataset"]), str(tmp_path / "adv.json"),
                 "--ks", "2"]) == 0
    rows = parse_compare_table(capsys.readouterr().out)
    sliding, by_score, rand = rows["LLM sliding"][1], rows["retrieval score"][1], rows["random"][1]
    assert sliding > by_score and sliding > rand
