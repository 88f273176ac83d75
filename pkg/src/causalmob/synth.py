"""Synthetic mobility corpus with planted anchor structure.

Locations are split into a small routine pool and a large irregular
remainder. Every user owns a few anchor locations drawn from the pool and
returns to them on a fixed time-of-day schedule, independent of where
they currently are. All other moves follow a corpus-wide transition
kernel conditioned on the previous location; its sharpness controls how
predictive the previous location is. Staying put produces no record, so
consecutive duplicates never appear. Long pauses between bursts make the
standard 72-hour segmentation recover multi-trajectory users.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import CheckinRecord, build_dataset

ROUTINE_CATEGORIES = ("home", "workplace", "gym")
IRREGULAR_CATEGORIES = ("cafe", "museum", "bar", "park", "theater")

BASE_TS = 1_600_000_000 - (1_600_000_000 % 3600)


@dataclass
class SynthConfig:
    n_users: int = 200
    n_locations: int = 500
    n_anchor_per_user: int = 3
    records_per_user: int = 100
    anchor_return_prob: float = 0.6
    transition_sharpness: float = 8.0
    seed: int = 0

    def validate(self):
        if self.n_anchor_per_user >= self.n_locations:
            raise ValueError("n_anchor_per_user must be smaller than n_locations")
        if not (0.0 < self.anchor_return_prob <= 1.0):
            raise ValueError(f"anchor_return_prob must be in (0, 1], got {self.anchor_return_prob}")
        if self.transition_sharpness <= 0:
            raise ValueError("transition_sharpness must be positive")
        if min(self.n_users, self.n_locations, self.records_per_user) <= 0:
            raise ValueError("sizes must be positive")


def _pool_size(cfg):
    size = max(cfg.n_anchor_per_user, cfg.n_locations // 10)
    return min(size, cfg.n_locations - 1)


def location_category(cfg, loc):
    """Category name of a synthetic location (routine pool vs irregular)."""
    pool = _pool_size(cfg)
    if loc < pool:
        return ROUTINE_CATEGORIES[loc % len(ROUTINE_CATEGORIES)]
    return IRREGULAR_CATEGORIES[loc % len(IRREGULAR_CATEGORIES)]


def generate_checkins(cfg):
    """Raw synthetic check-in stream, deterministic in ``cfg.seed``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    pool = _pool_size(cfg)
    irregular = np.arange(pool, cfg.n_locations)
    # corpus-wide kernel: each location has one designated irregular successor
    # that soaks up exp(sharpness) of the probability mass, the rest is
    # uniform; sharpness -> inf makes the transition deterministic
    successor = rng.integers(0, irregular.size, size=cfg.n_locations)
    peak = float(np.exp(min(cfg.transition_sharpness, 500.0)))
    p_succ = peak / (peak + irregular.size - 1)
    p_rest = (1.0 - p_succ) / max(irregular.size - 1, 1)

    width = len(str(cfg.n_locations - 1))
    loc_ids = [f"l{j:0{width}d}" for j in range(cfg.n_locations)]
    cats = [location_category(cfg, j) for j in range(cfg.n_locations)]

    checkins = []
    for u in range(cfg.n_users):
        # one independently drawn anchor per schedule slot, duplicates allowed
        anchors = rng.integers(0, pool, size=cfg.n_anchor_per_user)
        user_id = f"u{u:04d}"
        ts = BASE_TS + int(rng.integers(0, 24)) * 3600
        prev = None
        emitted = 0
        attempts = 0
        cap = cfg.records_per_user * 20
        while emitted < cfg.records_per_user and attempts < cap:
            burst_target = min(int(rng.integers(5, 13)), cfg.records_per_user - emitted)
            burst_emitted = 0
            while burst_emitted < burst_target and attempts < cap:
                attempts += 1
                hour = (ts // 3600) % 24
                if rng.random() < cfg.anchor_return_prob:
                    loc = int(anchors[hour % cfg.n_anchor_per_user])
                elif prev is None or rng.random() >= p_succ:
                    loc = int(rng.choice(irregular))
                else:
                    loc = int(irregular[successor[prev]])
                arrival = int(ts)
                ts += int(rng.integers(1, 9)) * 3600
                if loc == prev:
                    continue  # no move, no record
                checkins.append(
                    CheckinRecord(
                        user_raw=user_id,
                        venue_raw=loc_ids[loc],
                        category=cats[loc],
                        lat=0.0,
                        lon=0.0,
                        timestamp=arrival,
                    )
                )
                prev = loc
                emitted += 1
                burst_emitted += 1
            ts += int(rng.integers(80, 121)) * 3600  # pause long enough to cut here
    return checkins


def synth_generate(cfg, ratios=(0.7, 0.1, 0.2)):
    """Generate, segment, filter, index and split a synthetic corpus."""
    return build_dataset(generate_checkins(cfg), gap_hours=72.0, ratios=ratios)


def anchor_visit_fraction(checkins, cfg):
    """Fraction of records landing on the emitting user's anchors.

    Users only ever reach routine-pool venues through their own anchor
    schedule, so pool membership of the venue is an exact proxy.
    """
    width = len(str(cfg.n_locations - 1))
    pool_names = {f"l{j:0{width}d}" for j in range(_pool_size(cfg))}
    hits = sum(1 for rec in checkins if rec.venue_raw in pool_names)
    return hits / len(checkins)
