"""Window-ranker call counts and top-k recovery for sliding-window reranking.

For each (w, l) and candidate count n, prints the number of ranker calls and
checks, over random permutations, that a consistent comparator recovers the
exact global top w-l.

    python scripts/window_cost.py --n 20 50 100 --trials 200
"""

from __future__ import annotations

import argparse

import numpy as np

from roleqa.core import Document
from roleqa.rerank import WindowConfig, expected_window_calls, sliding_window_rerank


def recovered(n: int, cfg: WindowConfig, trials: int, rng: np.random.Generator) -> int:
    pool = [Document(f"p{i}", "", "t", 0.0, i) for i in range(n)]
    ok = 0
    for _ in range(trials):
        rel = dict(zip((d.doc_id for d in pool), rng.permutation(n).tolist()))
        out = sliding_window_rerank(pool, cfg, lambda win: sorted(win, key=lambda d: rel[d.doc_id]))
        brute = sorted(pool, key=lambda d: rel[d.doc_id])[: cfg.k]
        ok += [d.doc_id for d in out] == [d.doc_id for d in brute]
    return ok


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[20, 50, 100])
    ap.add_argument("--windows", nargs="+", default=["3:1", "10:5", "20:10"], help="w:l pairs")
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'w':>3} {'l':>3} {'k':>3} {'n':>5} {'calls':>6} {'recovered':>10}")
    for spec in args.windows:
        w, l = map(int, spec.split(":"))
        cfg = WindowConfig(w, l)
        for n in args.n:
            ok = recovered(n, cfg, args.trials, rng)
            print(f"{w:>3} {l:>3} {cfg.k:>3} {n:>5} {expected_window_calls(n, cfg):>6} {ok:>5}/{args.trials}")


if __name__ == "__main__":
    main()
