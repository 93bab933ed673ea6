"""Multi-role LLM pipeline for open-domain QA: query expansion, BM25 retrieval
with sliding-window listwise reranking, answer generation, evaluator-guided
prompt optimisation, and EM / answer-recall evaluation."""

from roleqa.core import (Document, Expansion, GoldAnswers, PromptSet, Question, RoleQAError, Score, StageError,
                         Trace, validate_trace)

__all__ = ["Document", "Expansion", "GoldAnswers", "PromptSet", "Question", "RoleQAError", "Score", "StageError",
           "Trace", "validate_trace"]
