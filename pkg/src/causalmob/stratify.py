"""Anchor detection and sample stratification.

A location is one of a user's anchors when the user's training-split
visit count to it is strictly greater than the threshold. Each
destination-prediction sample is anchor-targeted or nonanchor-targeted
according to whether its target lies in the user's anchor set. Also hosts
the count-based analysis quantifying how much knowing the previous
location helps, per target category and hour.
"""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass


@dataclass
class AnchorIndex:
    threshold: int
    anchors: dict  # user index -> frozenset of location indices

    def is_anchor(self, user, loc):
        return loc in self.anchors.get(user, frozenset())


@dataclass
class PredictionSample:
    user: int
    inputs: list  # all records before the destination
    target_loc: int
    target_hour: int
    target_category: int | None
    anchor_target: bool
    split: str

    @property
    def length(self):
        return len(self.inputs)


def visit_counts(dataset, split="train"):
    counts = defaultdict(Counter)
    for traj in dataset.trajectories:
        if split and traj.split != split:
            continue
        for r in traj.records:
            counts[traj.user][r.loc] += 1
    return counts


def build_anchor_index(dataset, threshold, split="train"):
    """Anchors are locations visited strictly more than ``threshold`` times.

    Counting is restricted to the training split so evaluation data never
    leaks into the stratification. At threshold 0 every visited location
    qualifies, which empties the nonanchor stratum entirely.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    anchors = {}
    for user, counter in visit_counts(dataset, split).items():
        anchors[user] = frozenset(loc for loc, n in counter.items() if n > threshold)
    return AnchorIndex(threshold=threshold, anchors=anchors)


def make_samples(dataset, anchor_index):
    """One destination-prediction sample per trajectory.

    Inputs are every record but the last; the target is the final
    record's location.
    """
    samples = []
    for traj in dataset.trajectories:
        if len(traj.records) < 2:
            continue
        last = traj.records[-1]
        samples.append(
            PredictionSample(
                user=traj.user,
                inputs=traj.records[:-1],
                target_loc=last.loc,
                target_hour=last.hour,
                target_category=last.category,
                anchor_target=anchor_index.is_anchor(traj.user, last.loc),
                split=traj.split,
            )
        )
    return samples


def stratum_counts(samples, split=None):
    picked = [s for s in samples if split is None or s.split == split]
    anchor = sum(1 for s in picked if s.anchor_target)
    return {"anchor_targeted": anchor, "nonanchor_targeted": len(picked) - anchor}


# -- previous-location gain analysis --------------------------------------


@dataclass
class GainCell:
    category: int | None
    hour: int
    acc_without_prev: float
    acc_with_prev: float
    support: int
    reliable: bool

    @property
    def gain(self):
        return self.acc_with_prev - self.acc_without_prev


@dataclass
class GainReport:
    cells: list
    min_support: int

    def write_csv(self, path, categories=None):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["category", "hour", "acc_without_prev", "acc_with_prev", "support"])
            for c in self.cells:
                name = c.category if categories is None or c.category is None else categories.raw(c.category)
                w.writerow([name, c.hour, f"{c.acc_without_prev:.6f}", f"{c.acc_with_prev:.6f}", c.support])


def _consecutive_pairs(dataset, split):
    for traj in dataset.trajectories:
        if split and traj.split != split:
            continue
        yield from zip(traj.records, traj.records[1:])


def _top1(counter):
    # deterministic: highest count, smallest index breaks ties
    return min(counter, key=lambda k: (-counter[k], k))


def prev_location_gain(dataset, min_support=5, train_split="train", eval_split="test"):
    """Accuracy gain from conditioning on the previous location.

    Fits two count-based top-1 predictors on the training split - target
    given arrival hour, and target given (previous location, arrival
    hour) with hour-only backoff for unseen pairs - then scores both on
    the evaluation split, grouped by target category and hour.
    """
    by_hour = defaultdict(Counter)
    by_prev_hour = defaultdict(Counter)
    overall = Counter()
    for prev, cur in _consecutive_pairs(dataset, train_split):
        by_hour[cur.hour][cur.loc] += 1
        by_prev_hour[(prev.loc, cur.hour)][cur.loc] += 1
        overall[cur.loc] += 1
    if not overall:
        raise ValueError(f"no transitions in split {train_split!r}")
    global_mode = _top1(overall)
    hour_pred = {h: _top1(c) for h, c in by_hour.items()}
    pair_pred = {k: _top1(c) for k, c in by_prev_hour.items()}

    hits = defaultdict(lambda: [0, 0, 0])  # (category, hour) -> [without, with, support]
    for prev, cur in _consecutive_pairs(dataset, eval_split):
        guess_without = hour_pred.get(cur.hour, global_mode)
        guess_with = pair_pred.get((prev.loc, cur.hour), guess_without)
        cell = hits[(cur.category, cur.hour)]
        cell[0] += guess_without == cur.loc
        cell[1] += guess_with == cur.loc
        cell[2] += 1
    if not hits:
        raise ValueError(f"no transitions in split {eval_split!r}")

    cells = [
        GainCell(
            category=cat,
            hour=hour,
            acc_without_prev=w / n,
            acc_with_prev=p / n,
            support=n,
            reliable=n >= min_support,
        )
        for (cat, hour), (w, p, n) in sorted(hits.items(), key=lambda kv: (str(kv[0][0]), kv[0][1]))
    ]
    return GainReport(cells=cells, min_support=min_support)
