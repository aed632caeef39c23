"""Retrieval metrics: MRR, Recall@k, mean rank, NDCG, plus ranking AUC."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np


@dataclass
class MetricsReport:
    mrr: float
    r_at_1: float
    r_at_5: float
    r_at_10: float
    mean_rank: float
    ndcg: float
    n_examples: int

    def to_dict(self) -> dict:
        return asdict(self)


def ndcg_of_ranking(relevance_in_rank_order: Sequence[float]) -> float:
    """DCG of the predicted ordering over the ideal ordering."""
    rel = np.asarray(relevance_in_rank_order, dtype=np.float64)
    discounts = 1.0 / np.log2(np.arange(2, rel.shape[0] + 2))
    dcg = float(np.sum(rel * discounts))
    ideal = float(np.sum(np.sort(rel)[::-1] * discounts))
    return dcg / ideal if ideal > 0 else 0.0


def compute_metrics(gt_ranks: Sequence[int],
                    relevance_in_rank_order: Optional[Sequence[Optional[Sequence[float]]]] = None
                    ) -> MetricsReport:
    """Aggregate over examples.

    ``gt_ranks`` holds the 1-based rank of the ground truth option per
    example.  ``relevance_in_rank_order``, when given, holds one graded
    relevance vector per example, ordered by the predicted ranking;
    absent entries fall back to the ground-truth indicator.
    """
    if len(gt_ranks) == 0:
        raise ValueError("compute_metrics needs at least one example")
    ranks = np.asarray(gt_ranks, dtype=np.float64)
    if np.any(ranks < 1):
        raise ValueError("ranks are 1-based")
    ndcgs = []
    for i, r in enumerate(ranks):
        rel = None
        if relevance_in_rank_order is not None:
            rel = relevance_in_rank_order[i]
        if rel is None:
            # indicator relevance: NDCG reduces to 1 / log2(rank + 1)
            ndcgs.append(1.0 / np.log2(r + 1.0))
        else:
            ndcgs.append(ndcg_of_ranking(rel))
    return MetricsReport(
        mrr=float(np.mean(1.0 / ranks)),
        r_at_1=float(np.mean(ranks <= 1)),
        r_at_5=float(np.mean(ranks <= 5)),
        r_at_10=float(np.mean(ranks <= 10)),
        mean_rank=float(np.mean(ranks)),
        ndcg=float(np.mean(ndcgs)),
        n_examples=int(len(gt_ranks)),
    )


def ranking_auc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """Mann-Whitney AUC of scores against binary labels; ties count half.
    Returns None when one class is missing."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    pos = s[y]
    neg = s[~y]
    wins = 0.0
    for p in pos:
        wins += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return float(wins / (n_pos * n_neg))
