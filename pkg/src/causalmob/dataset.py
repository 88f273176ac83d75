"""Check-in corpus types and the trajectory-building pipeline.

Raw check-ins are grouped per user, segmented wherever the time gap
between consecutive records exceeds the window, filtered (short
trajectories, then sparse users, to a fixed point), indexed against
lexicographic vocabularies and finally split chronologically per user.
"""

from __future__ import annotations

from dataclasses import dataclass

SPLITS = ("train", "valid", "test")


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class CheckinRecord:
    user_raw: str
    venue_raw: str
    category: str
    lat: float
    lon: float
    timestamp: int  # epoch seconds, already shifted so hour-of-day is local


@dataclass(frozen=True)
class Record:
    user: int
    loc: int
    hour: int  # 0..23
    ts: int
    category: int | None = None


@dataclass
class Trajectory:
    user: int
    ordinal: int
    records: list
    split: str = ""


class Vocab:
    """Bidirectional raw-id <-> dense-index map, lexicographic by raw id."""

    def __init__(self, raw_ids):
        self.index_to_raw = sorted(set(raw_ids))
        self.raw_to_index = {raw: i for i, raw in enumerate(self.index_to_raw)}

    def __len__(self):
        return len(self.index_to_raw)

    def __getitem__(self, raw):
        return self.raw_to_index[raw]

    def raw(self, index):
        return self.index_to_raw[index]


@dataclass
class Dataset:
    trajectories: list
    users: Vocab
    locations: Vocab
    categories: Vocab

    def split_trajectories(self, split):
        return [t for t in self.trajectories if t.split == split]

    def counts(self):
        return {
            "users": len(self.users),
            "locations": len(self.locations),
            "categories": len(self.categories),
            "trajectories": len(self.trajectories),
            "records": sum(len(t.records) for t in self.trajectories),
        }


def segment_records(records, gap_hours):
    """Split one user's time-ordered records at gaps exceeding ``gap_hours``."""
    if gap_hours <= 0:
        raise ValueError(f"gap_hours must be positive, got {gap_hours}")
    gap = gap_hours * 3600.0
    pieces = []
    current = []
    prev_ts = None
    for r in records:
        if prev_ts is not None and r.timestamp - prev_ts > gap:
            pieces.append(current)
            current = []
        current.append(r)
        prev_ts = r.timestamp
    if current:
        pieces.append(current)
    return pieces


def segment_trajectories(checkins, gap_hours=72.0):
    """Group check-ins by user (chronologically) and segment each history.

    Returns ``{user_raw: [list of CheckinRecord chunks]}`` in sorted user
    order, each chunk time-ordered.
    """
    by_user = {}
    for rec in checkins:
        by_user.setdefault(rec.user_raw, []).append(rec)
    segmented = {}
    for user in sorted(by_user):
        records = sorted(by_user[user], key=lambda r: r.timestamp)
        segmented[user] = segment_records(records, gap_hours)
    return segmented


def filter_trajectories(segmented, min_records=5, min_trajs=5):
    """Drop short trajectories, then sparse users, until nothing changes."""
    kept = {u: [c for c in chunks] for u, chunks in segmented.items()}
    while True:
        changed = False
        for user in list(kept):
            chunks = [c for c in kept[user] if len(c) >= min_records]
            if len(chunks) != len(kept[user]):
                changed = True
            if len(chunks) < min_trajs:
                del kept[user]
                changed = True
            else:
                kept[user] = chunks
        if not changed:
            break
    if not kept:
        n_users = len(segmented)
        n_trajs = sum(len(c) for c in segmented.values())
        raise EmptyDatasetError(
            f"nothing left after filtering {n_trajs} trajectories from {n_users} users "
            f"(min {min_records} records, min {min_trajs} trajectories)"
        )
    return kept


def build_vocab(filtered):
    """Index a filtered per-user chunk map into a :class:`Dataset`."""
    users, venues, cats = set(), set(), set()
    for user, chunks in filtered.items():
        users.add(user)
        for chunk in chunks:
            for r in chunk:
                venues.add(r.venue_raw)
                if r.category:
                    cats.add(r.category)
    user_vocab = Vocab(users)
    loc_vocab = Vocab(venues)
    cat_vocab = Vocab(cats)
    trajectories = []
    for user in user_vocab.index_to_raw:
        u = user_vocab[user]
        for ordinal, chunk in enumerate(filtered[user]):
            recs = [
                Record(
                    user=u,
                    loc=loc_vocab[r.venue_raw],
                    hour=(r.timestamp // 3600) % 24,
                    ts=r.timestamp,
                    category=cat_vocab[r.category] if r.category else None,
                )
                for r in chunk
            ]
            trajectories.append(Trajectory(user=u, ordinal=ordinal, records=recs))
    return Dataset(trajectories, user_vocab, loc_vocab, cat_vocab)


def _allocate(n, ratios):
    """Largest-remainder seat allocation of ``n`` over ``ratios``.

    Splits with nonzero ratio are guaranteed at least one trajectory,
    taken from the largest bucket if rounding starved them.
    """
    quotas = [n * r for r in ratios]
    counts = [int(q) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    short = n - sum(counts)
    for i in sorted(range(len(ratios)), key=lambda i: -remainders[i])[:short]:
        counts[i] += 1
    for i, r in enumerate(ratios):
        if r > 0 and counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_dataset(dataset, ratios=(0.7, 0.1, 0.2)):
    """Tag each trajectory train/valid/test, chronologically per user.

    The earliest share of every user's trajectories becomes training data
    so that no model ever trains on a user's future.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three values summing to 1, got {ratios}")
    by_user = {}
    for t in dataset.trajectories:
        by_user.setdefault(t.user, []).append(t)
    for user, trajs in by_user.items():
        trajs.sort(key=lambda t: (t.records[0].ts, t.ordinal))
        counts = _allocate(len(trajs), ratios)
        bounds = [counts[0], counts[0] + counts[1]]
        for i, t in enumerate(trajs):
            t.split = SPLITS[0] if i < bounds[0] else SPLITS[1] if i < bounds[1] else SPLITS[2]
    return dataset


def build_dataset(checkins, gap_hours=72.0, min_records=5, min_trajs=5, ratios=(0.7, 0.1, 0.2)):
    """Full pipeline: segment, filter, index, split."""
    segmented = segment_trajectories(checkins, gap_hours)
    filtered = filter_trajectories(segmented, min_records, min_trajs)
    dataset = build_vocab(filtered)
    return split_dataset(dataset, ratios)
