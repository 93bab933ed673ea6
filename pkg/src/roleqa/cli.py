"""Command line: ``roleqa {index,run,train,eval,compare-rerank,init-prompts}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from roleqa import io
from roleqa.config import ConfigError, RunConfig, load_config, make_roles
from roleqa.core import PromptSet, RoleQAError, StageError, Trace
from roleqa.metrics import evaluate
from roleqa.pipeline import STRATEGIES, run_pipeline
from roleqa.promptopt import train
from roleqa.retrieval import (Bm25Retriever, CorpusError, build_index, import_external_scores, load_index,
                              read_corpus, save_index)
from roleqa.roles import DEFAULT_PROMPTS

log = logging.getLogger("roleqa")

EXIT_OK, EXIT_FAIL, EXIT_SETUP = 0, 1, 2


def _retriever(cfg: RunConfig, index_path):
    index = load_index(index_path)
    if cfg.retrieval.external_scores_path:
        return import_external_scores(index, cfg.retrieval.external_scores_path)
    return Bm25Retriever(index, cfg.retrieval)


def _gold(dataset) -> dict[str, list[str]]:
    return {q.text: list(g.answers) for q, g in dataset}


def cmd_index(args, cfg: RunConfig) -> int:
    try:
        index = build_index(read_corpus(args.corpus), stopwords=cfg.retrieval.stopwords, stem=cfg.retrieval.stem)
    except (OSError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    save_index(index, args.out)
    print(f"{index.doc_count} documents indexed, {len(index.postings)} terms -> {args.out}")
    return EXIT_OK


def run_dataset(dataset, prompts: PromptSet, cfg: RunConfig, retriever, roles, *, timing: bool = True) -> list[Trace]:
    def one(example):
        q, _ = example
        try:
            return run_pipeline(q, prompts, cfg.pipeline, retriever, roles, record_timing=timing)
        except StageError as exc:
            log.warning("question %s failed: %s", q.id, exc)
            return exc.partial if exc.partial is not None else Trace(q.id, error=str(exc))

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(one, dataset))
    return [one(ex) for ex in dataset]


def _setup(args, cfg: RunConfig, need_prompts: bool = True):
    dataset = io.read_dataset(args.dataset)
    if not dataset:
        raise ConfigError("dataset is empty")
    prompts = io.read_prompt_store(args.prompts)["prompts"] if need_prompts else None
    retriever = _retriever(cfg, args.index)
    roles = make_roles(cfg, _gold(dataset))
    return dataset, prompts, retriever, roles


def cmd_run(args, cfg: RunConfig) -> int:
    dataset, prompts, retriever, roles = _setup(args, cfg)
    traces = run_dataset(dataset, prompts, cfg, retriever, roles, timing=not args.deterministic_compare)
    io.write_jsonl(args.out, [io.trace_to_dict(t, include_timing=not args.deterministic_compare) for t in traces])
    failed = sum(1 for t in traces if t.error)
    calls = sum(t.window_calls for t in traces)
    fallbacks = sum(t.fallback_windows for t in traces)
    rate = fallbacks / calls if calls else 0.0
    print(f"{len(traces)} traces written to {args.out} ({failed} failed); "
          f"ranking fallback rate {rate:.3f} over {calls} windows")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    dataset, prompts, retriever, roles = _setup(args, cfg)
    final, reports = train(dataset, prompts, cfg.train, cfg.pipeline, retriever, roles, out_dir=args.out_dir,
                           resume=args.resume)
    io.write_prompt_store(Path(args.out_dir) / "final_prompts.json", final,
                          io.read_prompt_store(Path(args.out_dir) / "prompts.json")["history"])
    skipped = sum(r.skipped for r in reports)
    print(f"{len(reports)} training steps ({skipped} skipped); final prompt version {final.version}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    traces = io.read_traces(args.traces)
    dataset = {q.id: g for q, g in io.read_dataset(args.dataset)}
    try:
        report = evaluate(traces, dataset, args.ks, args.bootstrap_rounds, seed=cfg.seed,
                          include_expansion=args.include_expansion)
    except RoleQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps(report.to_dict() if args.per_example else {**report.to_dict(), "per_example": []},
                     indent=2))
    print(report.table())
    return EXIT_OK


def cmd_compare_rerank(args, cfg: RunConfig) -> int:
    dataset, prompts, retriever, roles = _setup(args, cfg, need_prompts=bool(args.prompts))
    if prompts is None:
        prompts = PromptSet(**DEFAULT_PROMPTS)
    gold = {q.id: g for q, g in dataset}
    ks = args.ks
    labels = {"sliding": "LLM sliding", "retrieval": "retrieval score", "random": "random"}
    header = ["strategy", "EM"] + [f"Recall@{k}" for k in ks]
    rows = []
    for strategy in STRATEGIES:
        run_cfg = replace(cfg, pipeline=replace(cfg.pipeline, strategy=strategy))
        traces = run_dataset(dataset, prompts, run_cfg, retriever, roles, timing=False)
        rep = evaluate(traces, gold, ks, bootstrap_rounds=0, seed=cfg.seed)
        rows.append([labels[strategy], f"{100 * rep.em:.2f}"] + [f"{100 * rep.recall_at[k]:.2f}" for k in ks])
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return EXIT_OK


def cmd_init_prompts(args, cfg: RunConfig) -> int:
    io.write_prompt_store(args.out, PromptSet(**DEFAULT_PROMPTS))
    print(f"default prompts written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roleqa", description=__doc__)
    p.add_argument("--config", help="run configuration (JSON)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--deterministic-compare", action="store_true",
                   help="omit timing fields so repeated runs are byte-comparable")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("index", help="build a BM25 index from a JSON-lines corpus")
    s.add_argument("corpus")
    s.add_argument("out")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("run", help="run inference and write traces")
    s.add_argument("dataset")
    s.add_argument("index")
    s.add_argument("prompts")
    s.add_argument("out")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("train", help="optimise prompts over a training set")
    s.add_argument("dataset")
    s.add_argument("index")
    s.add_argument("prompts")
    s.add_argument("out_dir")
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="EM / recall@k report for a trace file")
    s.add_argument("traces")
    s.add_argument("dataset")
    s.add_argument("--ks", type=int, nargs="+", default=[2, 4, 8])
    s.add_argument("--bootstrap-rounds", type=int, default=10)
    s.add_argument("--include-expansion", action="store_true")
    s.add_argument("--per-example", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare-rerank", help="sliding window vs retrieval order vs random")
    s.add_argument("dataset")
    s.add_argument("index")
    s.add_argument("--prompts")
    s.add_argument("--ks", type=int, nargs="+", default=[2, 4, 8])
    s.set_defaults(func=cmd_compare_rerank)

    s = sub.add_parser("init-prompts", help="write a prompt store with the default prompts")
    s.add_argument("out")
    s.set_defaults(func=cmd_init_prompts)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, workers=args.workers)
        return args.func(args, cfg)
    except (ConfigError, io.FormatError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SETUP
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SETUP
    except RoleQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
