"""Variational prompt optimisation over the three role prompts.

Per training example ``(q, a)``:

1. forward priors: expansion e~, reranked docs d~ (length k), answer a~;
2. document posteriors d^_i: d~ with its last document swapped for the i-th
   document ranked after the top-k; weight v_d = S_r * S_a;
3. expansion posteriors e^_j: gold-conditioned rewrites of e~ given the best
   d^; weight v_e = S_e * S_r * S_a;
4. for each prompt (answer, rerank, expand, in that order) ask the update role
   for K rewrites and keep the one maximising the weighted log-score surrogate:

   answer:  sum_i sum_j v_e[j] v_d[i] log S_a(a | q, e^_j, d^_i; theta)
   rerank:  sum_i sum_j v_e[j] v_d[i] log S_r(d^_i | q, e^_j; theta)
   expand:  sum_j       v_e[j]        log S_e(e^_j | q; theta)

   Scores are floored at ``epsilon_log_floor`` before the log.

All three prompts are replaced together at the end of the step; every role call
inside the step uses the prompts the step started with, except the candidate
prompt under evaluation in step 4.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from roleqa import roles as R
from roleqa.core import Document, Expansion, GoldAnswers, PromptSet, Question, RoleQAError, Score, StageError, reindex
from roleqa.pipeline import PipelineConfig, Retriever, argmax_first, retrieval_query
from roleqa.rerank import sliding_window_order

log = logging.getLogger(__name__)

STEP_SCHEMA = "roleqa-step/1"
PROMPT_KINDS = ("answer", "rerank", "expand")


@dataclass(frozen=True)
class TrainConfig:
    n_doc_posteriors: int = 2
    m_exp_posteriors: int = 2
    K_prompt_candidates: int = 2
    epsilon_log_floor: float = 1e-6
    include_incumbent: bool = True
    max_examples: int | None = None

    def __post_init__(self):
        if min(self.n_doc_posteriors, self.m_exp_posteriors, self.K_prompt_candidates) < 1:
            raise ValueError("posterior and candidate counts must be >= 1")
        if not 0.0 < self.epsilon_log_floor < 1.0:
            raise ValueError("epsilon_log_floor must lie in (0, 1)")
        if self.max_examples is not None and self.max_examples < 1:
            raise ValueError("max_examples must be >= 1 when set")


@dataclass(frozen=True)
class PosteriorDocCandidate:
    docs: tuple[Document, ...]
    swapped_in_rank: int
    s_d: Score
    s_a: Score

    @property
    def v_d(self) -> float:
        return self.s_d.value * self.s_a.value


@dataclass(frozen=True)
class PosteriorExpansionCandidate:
    expansion: Expansion
    s_e: Score
    s_d: Score
    s_a: Score

    @property
    def v_e(self) -> float:
        return self.s_e.value * self.s_d.value * self.s_a.value


@dataclass(frozen=True)
class Priors:
    expansion: Expansion
    docs: tuple[Document, ...]
    answer: str
    ranked_pool: tuple[Document, ...]  # full reranked order of the retrieved set


def _kw(roles: R.RoleBindings, kind: str, seed: int) -> dict:
    return {"temperature": roles.temperature(kind), "seed": seed}


def forward_priors(q: Question, prompts: PromptSet, pcfg: PipelineConfig, retriever: Retriever,
                   roles: R.RoleBindings) -> Priors:
    """One unselected forward pass (a single expansion, a single rerank)."""
    from roleqa.pipeline import assemble_evidence, make_window_ranker

    seed = pcfg.random_seed
    exps = R.generate_expansions(q, prompts.theta_e, 1, roles.backend("expand"),
                                 prompt_version=prompts.version, **_kw(roles, "expand", seed))
    if not exps:
        raise StageError("expand", f"no prior expansion for question {q.id}")
    e = exps[0]
    try:
        retrieved = retriever(q, retrieval_query(q, e), pcfg.n_retrieve)
    except RoleQAError as exc:
        if "empty query" not in str(exc):
            raise StageError("retrieve", str(exc)) from exc
        retrieved = []
    if retrieved:
        order = sliding_window_order(retrieved, pcfg.window, make_window_ranker(q, e, prompts.theta_d, roles, seed))
    else:
        order = []
    docs = tuple(order[: pcfg.window.k])
    evidence = assemble_evidence(e, docs, pcfg.insertion_location, f"{seed}:{q.id}")
    answer = R.generate_answer(q, evidence, prompts.theta_a, roles.backend("answer"), **_kw(roles, "answer", seed))
    return Priors(e, docs, answer, tuple(order))


def sample_doc_posteriors(q: Question, gold: GoldAnswers, priors: Priors, prompts: PromptSet, tcfg: TrainConfig,
                          roles: R.RoleBindings, seed: int = 0) -> tuple[list[PosteriorDocCandidate], int]:
    """Candidates that keep the prior top k-1 and swap in the next-ranked documents."""
    prior = list(priors.docs)
    prior_ids = {d.doc_id for d in prior}
    surplus = [d for d in priors.ranked_pool if d.doc_id not in prior_ids]
    count = min(tcfg.n_doc_posteriors, len(surplus))
    if not prior or count == 0:
        variants = [(tuple(prior), prior[-1].rank if prior else 0)]
    else:
        variants = [(tuple(reindex(prior[:-1] + [d])), d.rank) for d in surplus[:count]]
    out = []
    for docs, src in variants:
        s_d = R.score_reranking(docs, q, priors.expansion, roles.backend("score_reranking"),
                                role_prompt=prompts.theta_d, **_kw(roles, "score_reranking", seed))
        s_a = R.score_answer(gold, q, priors.expansion, docs, roles.backend("score_answer"),
                             role_prompt=prompts.theta_a, **_kw(roles, "score_answer", seed))
        out.append(PosteriorDocCandidate(docs, src, s_d, s_a))
    return out, argmax_first([c.v_d for c in out])


def sample_expansion_posteriors(q: Question, gold: GoldAnswers, priors: Priors, best_docs: Sequence[Document],
                                prompts: PromptSet, tcfg: TrainConfig, roles: R.RoleBindings,
                                seed: int = 0) -> tuple[list[PosteriorExpansionCandidate], int]:
    posterior = {
        "prior_expansion": priors.expansion.text,
        "documents": R.render_documents(best_docs),
        "answer": gold.answers[0],
    }
    exps = R.generate_expansions(q, prompts.theta_e, tcfg.m_exp_posteriors, roles.backend("expand"),
                                 prompt_version=prompts.version, posterior=posterior,
                                 **_kw(roles, "expand", seed))
    if not exps:
        raise StageError("expand", f"no posterior expansion for question {q.id}")
    out = []
    for e in exps:
        s_e = R.score_expansion(e, q, roles.backend("score_expansion"), role_prompt=prompts.theta_e,
                                **_kw(roles, "score_expansion", seed))
        s_d = R.score_reranking(best_docs, q, e, roles.backend("score_reranking"), role_prompt=prompts.theta_d,
                                **_kw(roles, "score_reranking", seed))
        s_a = R.score_answer(gold, q, e, best_docs, roles.backend("score_answer"), role_prompt=prompts.theta_a,
                             **_kw(roles, "score_answer", seed))
        out.append(PosteriorExpansionCandidate(e, s_e, s_d, s_a))
    return out, argmax_first([c.v_e for c in out])


@dataclass(frozen=True)
class PosteriorGrid:
    doc_candidates: tuple[PosteriorDocCandidate, ...]
    exp_candidates: tuple[PosteriorExpansionCandidate, ...]

    @property
    def v_d(self) -> list[float]:
        return [c.v_d for c in self.doc_candidates]

    @property
    def v_e(self) -> list[float]:
        return [c.v_e for c in self.exp_candidates]


def _log_floor(score: Score, eps: float) -> float:
    return math.log(max(score.value, eps))


def prompt_objective(kind: str, theta: str, q: Question, gold: GoldAnswers, grid: PosteriorGrid,
                     tcfg: TrainConfig, roles: R.RoleBindings, seed: int = 0) -> tuple[float, list]:
    """Weighted log-score surrogate for one candidate prompt; also returns the raw cell scores."""
    eps = tcfg.epsilon_log_floor
    v_d, v_e = grid.v_d, grid.v_e
    total = 0.0
    cells = []
    if kind == "expand":
        for j, ec in enumerate(grid.exp_candidates):
            s = R.score_expansion(ec.expansion, q, roles.backend("score_expansion"), role_prompt=theta,
                                  **_kw(roles, "score_expansion", seed))
            cells.append(s.value)
            total += v_e[j] * _log_floor(s, eps)
        return total, cells
    for i, dc in enumerate(grid.doc_candidates):
        row = []
        for j, ec in enumerate(grid.exp_candidates):
            if kind == "answer":
                s = R.score_answer(gold, q, ec.expansion, dc.docs, roles.backend("score_answer"), role_prompt=theta,
                                   **_kw(roles, "score_answer", seed))
            elif kind == "rerank":
                s = R.score_reranking(dc.docs, q, ec.expansion, roles.backend("score_reranking"), role_prompt=theta,
                                      **_kw(roles, "score_reranking", seed))
            else:
                raise ValueError(f"unknown prompt kind {kind!r}")
            row.append(s.value)
            total += v_e[j] * v_d[i] * _log_floor(s, eps)
        cells.append(row)
    return total, cells


def select_prompt(kind: str, candidates: Sequence[str], q: Question, gold: GoldAnswers, grid: PosteriorGrid,
                  tcfg: TrainConfig, roles: R.RoleBindings, seed: int = 0) -> tuple[int, list[float], list]:
    """Index of the best candidate (ties -> lowest), the objectives and the per-cell scores."""
    results = [prompt_objective(kind, theta, q, gold, grid, tcfg, roles, seed) for theta in candidates]
    objectives = [r[0] for r in results]
    return argmax_first(objectives), objectives, [r[1] for r in results]


def _update_context(kind: str, q: Question, gold: GoldAnswers, priors: Priors, best_docs, best_exp) -> dict:
    base = {"question": q.text, "prior_expansion": priors.expansion.text}
    if kind == "answer":
        base.update(prior_documents=R.render_documents(priors.docs), prior_answer=priors.answer,
                    answer=gold.answers[0])
    elif kind == "rerank":
        base.update(prior_documents=R.render_documents(priors.docs),
                    posterior_documents=R.render_documents(best_docs))
    else:
        base.update(posterior_expansion=best_exp.text)
    return base


@dataclass
class StepReport:
    step: int
    question_id: str
    prompt_version_before: int
    prompt_version_after: int
    skipped: bool = False
    error: str | None = None
    prior: dict = field(default_factory=dict)
    doc_posteriors: list[dict] = field(default_factory=list)
    best_doc_index: int | None = None
    exp_posteriors: list[dict] = field(default_factory=list)
    best_exp_index: int | None = None
    prompt_selection: dict = field(default_factory=dict)
    schema: str = STEP_SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


def train_step(q: Question, gold: GoldAnswers, prompts: PromptSet, tcfg: TrainConfig, pcfg: PipelineConfig,
               retriever: Retriever, roles: R.RoleBindings, step: int = 0) -> tuple[PromptSet, StepReport]:
    """Run one full optimisation step; on failure return ``prompts`` unchanged and a skipped report."""
    report = StepReport(step, q.id, prompts.version, prompts.version)
    seed = pcfg.random_seed
    try:
        priors = forward_priors(q, prompts, pcfg, retriever, roles)
        report.prior = {"expansion": priors.expansion.text, "doc_ids": [d.doc_id for d in priors.docs],
                        "answer": priors.answer}

        doc_cands, best_d = sample_doc_posteriors(q, gold, priors, prompts, tcfg, roles, seed)
        report.doc_posteriors = [
            {"doc_ids": [d.doc_id for d in c.docs], "swapped_in_rank": c.swapped_in_rank,
             "s_d": c.s_d.value, "s_a": c.s_a.value, "v_d": c.v_d} for c in doc_cands]
        report.best_doc_index = best_d
        best_docs = doc_cands[best_d].docs

        exp_cands, best_e = sample_expansion_posteriors(q, gold, priors, best_docs, prompts, tcfg, roles, seed)
        report.exp_posteriors = [
            {"expansion": c.expansion.text, "s_e": c.s_e.value, "s_d": c.s_d.value, "s_a": c.s_a.value,
             "v_e": c.v_e} for c in exp_cands]
        report.best_exp_index = best_e
        grid = PosteriorGrid(tuple(doc_cands), tuple(exp_cands))

        chosen = {}
        for kind in PROMPT_KINDS:
            incumbent = prompts.get(kind)
            ctx = _update_context(kind, q, gold, priors, best_docs, exp_cands[best_e].expansion)
            cands = R.propose_prompts(kind, ctx, tcfg.K_prompt_candidates, roles.backend("propose_prompt"),
                                      current_prompt=incumbent, include_incumbent=tcfg.include_incumbent,
                                      **_kw(roles, "propose_prompt", seed))
            idx, objectives, cells = select_prompt(kind, cands, q, gold, grid, tcfg, roles, seed)
            chosen[kind] = cands[idx]
            report.prompt_selection[kind] = {
                "candidates": cands,
                "objectives": objectives,
                "cell_scores": cells,
                "selected_index": idx,
                "incumbent_index": len(cands) - 1 if cands[-1] == incumbent and tcfg.include_incumbent else None,
            }
    except (StageError, RoleQAError) as exc:
        log.warning("step %d (question %s) skipped: %s", step, q.id, exc)
        report.skipped = True
        report.error = str(exc)
        return prompts, report

    new = prompts.updated(chosen["expand"], chosen["rerank"], chosen["answer"])
    report.prompt_version_after = new.version
    return new, report


def train(dataset: Sequence[tuple[Question, GoldAnswers]], prompts: PromptSet, tcfg: TrainConfig,
          pcfg: PipelineConfig, retriever: Retriever, roles: R.RoleBindings, *, out_dir=None,
          resume: bool = False, checkpoints: bool = True) -> tuple[PromptSet, list[StepReport]]:
    """Sequential fold of ``train_step`` over ``dataset``.

    With ``out_dir`` the prompt store (``prompts.json``), a per-step checkpoint
    and ``train_log.jsonl`` are written after every step; ``resume`` continues
    from the stored position.
    """
    from roleqa import io

    if not dataset:
        raise ValueError("training dataset is empty")
    limit = len(dataset) if tcfg.max_examples is None else min(tcfg.max_examples, len(dataset))
    reports: list[StepReport] = []
    history: list[dict] = []
    start = 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        store_path = out / "prompts.json"
        log_path = out / "train_log.jsonl"
        if resume and store_path.exists():
            store = io.read_prompt_store(store_path)
            prompts, history, start = store["prompts"], store["history"], store["examples_done"]
            kept = log_path.read_text(encoding="utf-8").splitlines()[:start] if log_path.exists() else []
            io.atomic_write_text(log_path, "".join(line + "\n" for line in kept))
        else:
            log_path.write_text("", encoding="utf-8")
            io.write_prompt_store(store_path, prompts, history, 0)

    for step in range(start, limit):
        q, gold = dataset[step]
        prompts, report = train_step(q, gold, prompts, tcfg, pcfg, retriever, roles, step)
        reports.append(report)
        if out is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(report.to_json() + "\n")
            if not report.skipped:
                history.append({"version": prompts.version, "step_report_ref": f"train_log.jsonl:{step + 1}"})
            io.write_prompt_store(store_path, prompts, history, step + 1)
            if checkpoints:
                io.write_prompt_store(out / "checkpoints" / f"prompts_step_{step + 1:05d}.json", prompts, history,
                                      step + 1)
    return prompts, reports
