"""On-disk layout for processed datasets.

A dataset directory holds:
    records.bin     packed little-endian records (u:u32, l:u32, t:u8, ts:i64, cat:u32)
    users.tsv       index <tab> raw id         (same for locations.tsv, categories.tsv)
    manifest.json   trajectory table (user, ordinal, offset, length, split) and counts
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset import Dataset, Record, Trajectory, Vocab

RECORD_DTYPE = np.dtype([("u", "<u4"), ("l", "<u4"), ("t", "u1"), ("ts", "<i8"), ("cat", "<u4")])
NO_CATEGORY = 0xFFFFFFFF


class StoreError(ValueError):
    pass


def _write_vocab(path, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for i, raw in enumerate(vocab.index_to_raw):
            fh.write(f"{i}\t{raw}\n")


def _read_vocab(path):
    raw_ids = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.rstrip("\n"):
                continue
            idx, raw = line.rstrip("\n").split("\t", 1)
            raw_ids.append((int(idx), raw))
    raw_ids.sort()
    vocab = Vocab.__new__(Vocab)
    vocab.index_to_raw = [raw for _, raw in raw_ids]
    vocab.raw_to_index = {raw: i for i, raw in enumerate(vocab.index_to_raw)}
    return vocab


def save_dataset(dataset, dirpath):
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    n = sum(len(t.records) for t in dataset.trajectories)
    arr = np.empty(n, dtype=RECORD_DTYPE)
    table = []
    offset = 0
    for t in dataset.trajectories:
        for k, r in enumerate(t.records):
            arr[offset + k] = (r.user, r.loc, r.hour, r.ts, NO_CATEGORY if r.category is None else r.category)
        table.append(
            {"user": t.user, "ordinal": t.ordinal, "offset": offset, "length": len(t.records), "split": t.split}
        )
        offset += len(t.records)
    arr.tofile(dirpath / "records.bin")
    _write_vocab(dirpath / "users.tsv", dataset.users)
    _write_vocab(dirpath / "locations.tsv", dataset.locations)
    _write_vocab(dirpath / "categories.tsv", dataset.categories)
    manifest = {"counts": dataset.counts(), "trajectories": table}
    (dirpath / "manifest.json").write_text(json.dumps(manifest), encoding="utf-8")


def load_dataset(dirpath):
    dirpath = Path(dirpath)
    manifest_path = dirpath / "manifest.json"
    if not manifest_path.exists():
        raise StoreError(f"{dirpath} is not a dataset directory (no manifest.json)")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    arr = np.fromfile(dirpath / "records.bin", dtype=RECORD_DTYPE)
    expected = manifest["counts"]["records"]
    if arr.size != expected:
        raise StoreError(f"records.bin holds {arr.size} records, manifest declares {expected}")
    trajectories = []
    for row in manifest["trajectories"]:
        recs = []
        for k in range(row["offset"], row["offset"] + row["length"]):
            u, l, t, ts, cat = (int(arr[k]["u"]), int(arr[k]["l"]), int(arr[k]["t"]), int(arr[k]["ts"]), int(arr[k]["cat"]))
            recs.append(Record(user=u, loc=l, hour=t, ts=ts, category=None if cat == NO_CATEGORY else cat))
        trajectories.append(Trajectory(user=row["user"], ordinal=row["ordinal"], records=recs, split=row["split"]))
    return Dataset(
        trajectories,
        _read_vocab(dirpath / "users.tsv"),
        _read_vocab(dirpath / "locations.tsv"),
        _read_vocab(dirpath / "categories.tsv"),
    )
