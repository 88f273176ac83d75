"""Ranking metrics over score vectors.

The rank of the target is one plus the number of locations scoring
strictly higher, with ties resolved in favour of the smaller location
index. Recall@k counts ranks within k, MRR@k averages reciprocal ranks
within k, and NDCG@k (single relevant item) averages 1/log2(rank + 1)
within k.
"""

from __future__ import annotations

import csv
import math
import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

DEFAULT_KS = (1, 5, 10)


class UndefinedMetricError(ValueError):
    pass


def rank_of_target(logits, target):
    """Rank (1-based) of the target under higher-score-first ordering."""
    logits = np.asarray(logits)
    if logits.ndim == 1:
        t = int(target)
        score = logits[t]
        greater = int((logits > score).sum())
        tied_before = int((logits[:t] == score).sum())
        return 1 + greater + tied_before
    targets = np.asarray(target)
    rows = np.arange(logits.shape[0])
    scores = logits[rows, targets]
    greater = (logits > scores[:, None]).sum(axis=1)
    ties = logits == scores[:, None]
    tied_before = np.array([ties[i, : targets[i]].sum() for i in rows])
    return 1 + greater + tied_before


@dataclass(frozen=True)
class RankMetrics:
    recall: float
    mrr: float
    ndcg: float
    count: int


def metrics_at_k(ranks, k):
    """(recall, mrr, ndcg) at cutoff ``k`` for an array of ranks.

    Sums are exactly rounded (fsum), so results do not depend on the
    order the ranks arrive in.
    """
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise UndefinedMetricError("metrics over an empty rank list are undefined")
    n = ranks.size
    hit = ranks <= k
    recall = float(hit.sum()) / n
    mrr = math.fsum(np.where(hit, 1.0 / ranks, 0.0)) / n
    ndcg = math.fsum(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)) / n
    return RankMetrics(recall=recall, mrr=mrr, ndcg=ndcg, count=int(n))


@dataclass
class MetricsReport:
    ks: tuple
    overall: dict  # k -> RankMetrics
    by_stratum: dict  # stratum name -> {k -> RankMetrics}
    by_category: dict  # category name -> {k -> RankMetrics}

    def to_rows(self):
        rows = []
        for scope_type, scoped in (
            ("overall", {"overall": self.overall}),
            ("stratum", self.by_stratum),
            ("category", self.by_category),
        ):
            for scope, per_k in sorted(scoped.items()):
                for k in self.ks:
                    m = per_k[k]
                    rows.append(
                        {
                            "scope_type": scope_type,
                            "scope": scope,
                            "k": k,
                            "recall": m.recall,
                            "mrr": m.mrr,
                            "ndcg": m.ndcg,
                            "count": m.count,
                        }
                    )
        return rows

    def write_csv(self, path):
        rows = self.to_rows()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for row in rows:
                w.writerow({**row, "recall": f"{row['recall']:.6f}", "mrr": f"{row['mrr']:.6f}",
                            "ndcg": f"{row['ndcg']:.6f}"})

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_rows(), fh, indent=1)


def build_report(ranks, strata, categories, ks=DEFAULT_KS):
    """Aggregate ranks overall, per stratum and per category."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise UndefinedMetricError("no ranks to aggregate")
    overall = {k: metrics_at_k(ranks, k) for k in ks}
    groups = defaultdict(list)
    for r, s in zip(ranks, strata):
        groups[("s", s)].append(r)
    for r, c in zip(ranks, categories):
        if c is not None:
            groups[("c", c)].append(r)
    by_stratum = {}
    by_category = {}
    for (kind, name), rs in groups.items():
        target = by_stratum if kind == "s" else by_category
        target[name] = {k: metrics_at_k(np.array(rs), k) for k in ks}
    return MetricsReport(ks=tuple(ks), overall=overall, by_stratum=by_stratum, by_category=by_category)
