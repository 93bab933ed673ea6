"""File fixtures shared by the CLI tests and the acceptance suite."""

import json


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def write_config(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def adversarial(tmp, n_questions=6, per_question=8):
    """Corpus where the only answer-bearing document of each question is the
    one BM25 ranks last: distractors repeat the topic word, the answer document
    mentions it once inside a longer passage."""
    corpus, dataset = [], []
    for i in range(n_questions):
        topic = f"topic{i}"
        for j in range(per_question - 1):
            corpus.append({"id": f"q{i}-x{j}", "title": "", "text": f"{topic} {topic} {topic} filler{j}"})
        corpus.append({"id": f"q{i}-ans", "title": "",
                       "text": f"{topic} carries answer{i} plus assorted padding alpha beta gamma delta epsilon"})
        dataset.append({"id": f"q{i}", "question": f"what is the code for {topic}", "answers": [f"answer{i}"]})
    config = {
        "seed": 3,
        "pipeline": {"m_expansions": 1, "n_retrieve": per_question, "window": {"w": 4, "l": 2}},
        "backends": {"default": {"type": "oracle"}, "expand": {"type": "mock"}},
    }
    return {
        "corpus": write_jsonl(tmp / "adv_corpus.jsonl", corpus),
        "dataset": write_jsonl(tmp / "adv_dataset.jsonl", dataset),
        "config": write_config(tmp / "adv_config.json", config),
    }


def parse_compare_table(text):
    """{strategy label: [EM, recall@k...]} from the compare-rerank table."""
    lines = [x for x in text.splitlines() if x.strip()]
    start = next(i for i, x in enumerate(lines) if x.startswith("strategy"))
    rows = {}
    for line in lines[start + 1:]:
        cells = line.split("  ")
        cells = [c.strip() for c in cells if c.strip()]
        rows[cells[0]] = [float(c) for c in cells[1:]]
    return rows
