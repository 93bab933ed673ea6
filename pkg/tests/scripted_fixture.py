"""Fully tabled role fixture for the prompt optimiser, plus a brute-force oracle.

Every evaluator score is a fixed function of (role kind, role prompt,
expansion, document ids); the oracle recomputes a training step from those
tables without touching ``roleqa.promptopt``.
"""

import hashlib
import math
import re

from roleqa.backends import FunctionBackend
from roleqa.core import Document, GoldAnswers, Question
from roleqa.pipeline import PipelineConfig
from roleqa.rerank import WindowConfig
from roleqa.roles import RoleBindings

DOCS = [Document(f"x{i}", f"T{i}", f"passage x{i}", 10.0 - i, i) for i in range(6)]
PCFG = PipelineConfig(m_expansions=1, n_retrieve=6, window=WindowConfig(4, 2))  # k = 2


def fixed_retriever(q, query, n):
    return list(DOCS[:n])


def _h(*parts) -> int:
    return int(hashlib.sha256("|".join(map(str, parts)).encode()).hexdigest()[:12], 16)


def table_score(kind, prompt, expansion, doc_ids):
    """Score table: deterministic, in [0.001, 1], six decimals."""
    return round(0.001 + (_h(kind, prompt, expansion, ",".join(doc_ids)) % 1000) / 1000 * 0.999, 6)


def prior_expansion(q_text, theta_e):
    return f"prior {_h('prior', q_text, theta_e) % 10000}"


def posterior_expansions(q_text, theta_e, m):
    return [f"post {_h('post', q_text, theta_e, j) % 10000}" for j in range(m)]


def proposals(kind, current, K):
    return [f"{kind} prompt {_h('rewrite', kind, current, i) % 100000}" for i in range(K)]


def _ids(rendered):
    return re.findall(r"passage (x\d+)", rendered)


def scripted_roles(score=table_score):
    def fn(req):
        ctx = req.context
        kind = req.role_kind
        if kind == "expand":
            theta_e = req.prompt.split("\n\n")[0]
            if "answer" in ctx:
                return posterior_expansions(ctx["question"], theta_e, req.sample_count)
            return [prior_expansion(ctx["question"], theta_e)] * req.sample_count
        if kind == "rank_window":
            return " > ".join(f"[{i + 1}]" for i in range(len(_ids(ctx["documents"]))))
        if kind == "answer":
            return "reader answer"
        if kind == "propose_prompt":
            return proposals(ctx["target_role"], ctx["current_prompt"], req.sample_count)
        docs = _ids(ctx.get("documents", ""))
        return f"{score(kind, ctx.get('role_prompt'), ctx.get('expansion'), docs):.6f}"

    return RoleBindings.uniform(FunctionBackend(fn, "tabled"))


def dataset(count):
    return [(Question(f"t{i}", f"training question number {i}"), GoldAnswers((f"gold {i}",)))
            for i in range(count)]


def _argmax(values):
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def brute_force_step(q_text, theta, n_doc, m_exp, K, eps=1e-6, include_incumbent=True, k=2, score=table_score):
    """Independent recomputation of one step over the tables.

    ``theta`` maps "expand"/"rerank"/"answer" to the current prompts.
    """
    e0 = prior_expansion(q_text, theta["expand"])
    pool = [d.doc_id for d in DOCS]  # identity ranker keeps retrieval order
    prior = pool[:k]
    surplus = pool[k:][:n_doc]
    doc_sets = [prior[:-1] + [s] for s in surplus] or [prior]
    v_d = [score("score_reranking", theta["rerank"], e0, ids) * score("score_answer", theta["answer"], e0, ids)
           for ids in doc_sets]
    best_d = _argmax(v_d)
    best_ids = doc_sets[best_d]
    exps = posterior_expansions(q_text, theta["expand"], m_exp)
    v_e = [score("score_expansion", theta["expand"], e, []) * score("score_reranking", theta["rerank"], e, best_ids)
           * score("score_answer", theta["answer"], e, best_ids) for e in exps]
    best_e = _argmax(v_e)

    out = {"v_d": v_d, "v_e": v_e, "best_d": best_d, "best_e": best_e, "doc_sets": doc_sets, "kinds": {}}
    for kind, ev in (("answer", "score_answer"), ("rerank", "score_reranking"), ("expand", "score_expansion")):
        cands = proposals(kind, theta[kind], K) + ([theta[kind]] if include_incumbent else [])
        objs = []
        for c in cands:
            if kind == "expand":
                total = sum(v_e[j] * math.log(max(score(ev, c, e, []), eps)) for j, e in enumerate(exps))
            else:
                total = sum(v_e[j] * v_d[i] * math.log(max(score(ev, c, e, ids), eps))
                            for i, ids in enumerate(doc_sets) for j, e in enumerate(exps))
            objs.append(total)
        idx = _argmax(objs)
        out["kinds"][kind] = {"candidates": cands, "objectives": objs, "selected": idx, "prompt": cands[idx]}
    return out
