"""Parsing, segmentation, filtering, vocab and split behaviour."""

import gzip

import numpy as np
import pytest

from causalmob.dataset import (
    CheckinRecord,
    EmptyDatasetError,
    build_dataset,
    build_vocab,
    filter_trajectories,
    segment_records,
    segment_trajectories,
    split_dataset,
)
from causalmob.foursquare import DataFormatError, read_checkins
from causalmob.store import load_dataset, save_dataset
from causalmob.synth import SynthConfig, anchor_visit_fraction, generate_checkins, synth_generate

HOUR = 3600


def checkin(user="u1", venue="v1", hour_offset=0, category="cafe"):
    return CheckinRecord(
        user_raw=user, venue_raw=venue, category=category, lat=0.0, lon=0.0,
        timestamp=hour_offset * HOUR,
    )


def make_row(user="u1", venue="v1", lat="40.7", lon="-74.0", offset="540", when="Tue Apr 03 02:00:00 +0000 2012"):
    return "\t".join([user, venue, "cat9", "Ramen Shop", lat, lon, offset, when])


class TestParse:
    def test_timezone_shift_gives_local_hour(self, tmp_path):
        path = tmp_path / "rows.tsv"
        path.write_text(make_row(offset="540") + "\n", encoding="utf-8")
        records, stats = read_checkins(path)
        assert stats.parsed == 1
        assert (records[0].timestamp // HOUR) % 24 == 11  # 02:00 UTC + 9h

    def test_malformed_rows_skipped_and_counted(self, tmp_path):
        path = tmp_path / "rows.tsv"
        rows = [make_row() for _ in range(20)] + [make_row(lat="not-a-number")]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        records, stats = read_checkins(path)
        assert len(records) == 20
        assert stats.malformed == 1

    def test_too_many_malformed_rows_fail(self, tmp_path):
        path = tmp_path / "rows.tsv"
        rows = [make_row(), make_row(lat="91.0"), make_row(lon="999")]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        with pytest.raises(DataFormatError):
            read_checkins(path)

    def test_empty_file_is_empty_stream(self, tmp_path):
        path = tmp_path / "rows.tsv"
        path.write_text("", encoding="utf-8")
        records, stats = read_checkins(path)
        assert records == [] and stats.total_rows == 0

    def test_gzip_accepted(self, tmp_path):
        path = tmp_path / "rows.tsv.gz"
        with gzip.open(path, "wt", encoding="utf-8") as fh:
            fh.write(make_row() + "\n")
        records, _ = read_checkins(path)
        assert len(records) == 1

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(OSError):
            read_checkins(tmp_path / "missing.tsv")


class TestSegmentation:
    def test_gap_splits(self):
        recs = [checkin(hour_offset=h) for h in (0, 10, 100)]
        pieces = segment_records(recs, gap_hours=72)
        assert [len(p) for p in pieces] == [2, 1]

    def test_single_record(self):
        assert [len(p) for p in segment_records([checkin()], 72)] == [1]

    def test_no_gap_one_trajectory(self):
        recs = [checkin(hour_offset=h) for h in range(0, 50, 5)]
        assert len(segment_records(recs, 72)) == 1

    def test_exact_gap_does_not_split(self):
        recs = [checkin(hour_offset=0), checkin(hour_offset=72)]
        assert len(segment_records(recs, 72)) == 1

    def test_partition_property(self):
        rng = np.random.default_rng(0)
        hours = np.cumsum(rng.integers(1, 120, size=200))
        recs = [checkin(hour_offset=int(h)) for h in hours]
        pieces = segment_records(recs, gap_hours=72)
        flattened = [r for p in pieces for r in p]
        assert flattened == recs


class TestFiltering:
    def chunks(self, sizes):
        return [[checkin(hour_offset=i) for i in range(n)] for n in sizes]

    def test_user_with_five_good_trajectories_kept(self):
        kept = filter_trajectories({"u1": self.chunks([6] * 5)})
        assert [len(c) for c in kept["u1"]] == [6] * 5

    def test_short_trajectory_then_user_removed(self):
        seg = {
            "u1": self.chunks([6, 6, 6, 6, 3]),
            "u2": self.chunks([6] * 5),
        }
        kept = filter_trajectories(seg)
        assert "u1" not in kept and "u2" in kept

    def test_empty_result_raises_with_counts(self):
        with pytest.raises(EmptyDatasetError, match="5 trajectories"):
            filter_trajectories({"u1": self.chunks([2, 2])})

    def test_postconditions_exact(self):
        rng = np.random.default_rng(1)
        seg = {
            f"u{i}": self.chunks(rng.integers(2, 9, size=rng.integers(2, 9)))
            for i in range(30)
        }
        try:
            kept = filter_trajectories(seg, min_records=5, min_trajs=5)
        except EmptyDatasetError:
            return
        for chunks in kept.values():
            assert len(chunks) >= 5
            assert all(len(c) >= 5 for c in chunks)


class TestVocab:
    def test_lexicographic(self):
        seg = {"u1": [[checkin(venue=v, hour_offset=i) for i, v in enumerate("BAACB")]]}
        ds = build_vocab(seg)
        assert ds.locations.index_to_raw == ["A", "B", "C"]
        assert ds.locations["A"] == 0 and ds.locations["B"] == 1

    def test_deterministic(self):
        seg = {"u2": [[checkin(user="u2", venue="x")]], "u1": [[checkin(venue="y")]]}
        a = build_vocab(seg)
        b = build_vocab(seg)
        assert a.users.index_to_raw == b.users.index_to_raw
        assert a.locations.index_to_raw == b.locations.index_to_raw

    def test_roundtrip_identity(self):
        seg = {"u1": [[checkin(venue=f"v{i}", hour_offset=i) for i in range(6)]]}
        ds = build_vocab(seg)
        for i in range(len(ds.locations)):
            assert ds.locations[ds.locations.raw(i)] == i


class TestSplit:
    def dataset_with_trajs(self, n_trajs, n_users=1):
        seg = {
            f"u{u}": [
                [checkin(user=f"u{u}", venue="v", hour_offset=200 * j + i) for i in range(5)]
                for j in range(n_trajs)
            ]
            for u in range(n_users)
        }
        return build_vocab(seg)

    def test_ten_trajectories_split_7_1_2(self):
        ds = split_dataset(self.dataset_with_trajs(10))
        tags = [t.split for t in sorted(ds.trajectories, key=lambda t: t.records[0].ts)]
        assert tags == ["train"] * 7 + ["valid"] + ["test"] * 2

    def test_five_trajectories_split_3_1_1(self):
        ds = split_dataset(self.dataset_with_trajs(5))
        tags = [t.split for t in sorted(ds.trajectories, key=lambda t: t.records[0].ts)]
        assert tags == ["train", "train", "train", "valid", "test"]

    def test_all_train_ratio(self):
        ds = split_dataset(self.dataset_with_trajs(6), ratios=(1.0, 0.0, 0.0))
        assert all(t.split == "train" for t in ds.trajectories)

    def test_chronological_order(self):
        ds = split_dataset(self.dataset_with_trajs(8))
        trajs = sorted(ds.trajectories, key=lambda t: t.records[0].ts)
        seen_valid = seen_test = False
        for t in trajs:
            if t.split == "valid":
                seen_valid = True
            if t.split == "test":
                seen_test = True
            if t.split == "train":
                assert not (seen_valid or seen_test)

    def test_disjoint_and_exhaustive(self):
        ds = split_dataset(self.dataset_with_trajs(9, n_users=7))
        assert all(t.split in ("train", "valid", "test") for t in ds.trajectories)
        per_user = {}
        for t in ds.trajectories:
            per_user.setdefault(t.user, []).append(t.split)
        for tags in per_user.values():
            assert "valid" in tags and "test" in tags


class TestStoreRoundtrip:
    def test_save_load_identical(self, tmp_path):
        ds = synth_generate(SynthConfig(n_users=6, n_locations=30, records_per_user=60, seed=3))
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.counts() == ds.counts()
        assert back.locations.index_to_raw == ds.locations.index_to_raw
        for a, b in zip(ds.trajectories, back.trajectories):
            assert a.split == b.split and a.user == b.user
            assert a.records == b.records


class TestSynth:
    def test_deterministic(self):
        cfg = SynthConfig(n_users=4, n_locations=25, records_per_user=40, seed=11)
        a = generate_checkins(cfg)
        b = generate_checkins(cfg)
        assert a == b

    def test_anchor_fraction_tracks_probability(self):
        cfg = SynthConfig(n_users=120, n_locations=200, records_per_user=100,
                          anchor_return_prob=0.6, seed=5)
        checkins = generate_checkins(cfg)
        assert len(checkins) >= 10_000
        assert abs(anchor_visit_fraction(checkins, cfg) - 0.6) < 0.05

    def test_always_anchor_when_probability_one(self):
        cfg = SynthConfig(n_users=3, n_locations=30, records_per_user=30,
                          anchor_return_prob=1.0, seed=2)
        assert anchor_visit_fraction(generate_checkins(cfg), cfg) == 1.0

    def test_sharpness_limit_deterministic_transitions(self):
        cfg = SynthConfig(n_users=10, n_locations=40, records_per_user=80,
                          anchor_return_prob=0.3, transition_sharpness=1e6, seed=8)
        follow = {}
        for rec_prev, rec_next in self.iter_pairs(generate_checkins(cfg)):
            if rec_next.category in ("home", "workplace", "gym"):
                continue  # anchor branch, not kernel-driven
            follow.setdefault(rec_prev.venue_raw, set()).add(rec_next.venue_raw)
        assert follow and all(len(nexts) == 1 for nexts in follow.values())

    @staticmethod
    def iter_pairs(checkins):
        by_user = {}
        for rec in checkins:
            by_user.setdefault(rec.user_raw, []).append(rec)
        for recs in by_user.values():
            recs.sort(key=lambda r: r.timestamp)
            yield from zip(recs, recs[1:])

    def test_pipeline_produces_valid_dataset(self):
        ds = synth_generate(SynthConfig(n_users=8, n_locations=40, records_per_user=80, seed=1))
        for t in ds.trajectories:
            assert len(t.records) >= 5
            assert all(a.ts <= b.ts for a, b in zip(t.records, t.records[1:]))
        counts = ds.counts()
        assert counts["users"] == 8

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SynthConfig(n_locations=3, n_anchor_per_user=3).validate()
        with pytest.raises(ValueError):
            SynthConfig(anchor_return_prob=0.0).validate()
