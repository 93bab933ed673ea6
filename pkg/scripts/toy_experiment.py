"""End-to-end toy experiment with offline backends.

Builds a synthetic corpus in which BM25 ranks the answer-bearing passage last,
then (1) compares sliding-window reranking with retrieval order and random order
using the oracle backend, (2) trains prompts for a few steps with the mock
backend, and (3) runs and evaluates inference with the trained prompts.

    python scripts/toy_experiment.py --out runs/toy --questions 12
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from roleqa.cli import main as roleqa


def write_jsonl(path: Path, rows) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def build_fixture(out: Path, questions: int, distractors: int) -> dict[str, Path]:
    corpus, dataset = [], []
    for i in range(questions):
        topic = f"topic{i}"
        corpus += [{"id": f"q{i}-x{j}", "title": "", "text": f"{topic} {topic} {topic} filler{j}"}
                   for j in range(distractors)]
        corpus.append({"id": f"q{i}-ans", "title": "",
                       "text": f"{topic} carries answer{i} plus assorted padding alpha beta gamma delta"})
        dataset.append({"id": f"q{i}", "question": f"what is the code for {topic}", "answers": [f"answer{i}"]})
    pipeline = {"m_expansions": 2, "n_retrieve": distractors + 1, "window": {"w": 4, "l": 2}}
    oracle_cfg = {"pipeline": pipeline, "backends": {"default": {"type": "oracle"}, "expand": {"type": "mock"}}}
    mock_cfg = {"pipeline": pipeline, "train": {"max_examples": min(questions, 5)},
                "backends": {"default": {"type": "mock"}}}
    paths = {
        "corpus": write_jsonl(out / "corpus.jsonl", corpus),
        "dataset": write_jsonl(out / "dataset.jsonl", dataset),
        "oracle_cfg": out / "oracle.json",
        "mock_cfg": out / "mock.json",
    }
    paths["oracle_cfg"].write_text(json.dumps(oracle_cfg, indent=2), encoding="utf-8")
    paths["mock_cfg"].write_text(json.dumps(mock_cfg, indent=2), encoding="utf-8")
    return paths


def step(argv: list[str]) -> None:
    print("$ roleqa " + " ".join(argv))
    code = roleqa(argv)
    if code != 0:
        raise SystemExit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--questions", type=int, default=12)
    ap.add_argument("--distractors", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = build_fixture(out, args.questions, args.distractors)
    index, prompts, seed = str(out / "index.json"), str(out / "prompts.json"), str(args.seed)

    step(["index", str(p["corpus"]), index])
    step(["init-prompts", prompts])
    step(["--config", str(p["oracle_cfg"]), "--seed", seed, "compare-rerank", str(p["dataset"]), index,
          "--ks", "1", "2"])
    step(["--config", str(p["mock_cfg"]), "--seed", seed, "train", str(p["dataset"]), index, prompts,
          str(out / "train")])
    step(["--config", str(p["mock_cfg"]), "--seed", seed, "run", str(p["dataset"]), index,
          str(out / "train" / "final_prompts.json"), str(out / "traces.jsonl")])
    step(["eval", str(out / "traces.jsonl"), str(p["dataset"]), "--ks", "1", "2"])


if __name__ == "__main__":
    main()
