"""Checkpoint evaluation, the anchor-threshold sweep and the link ablation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import model as M
from .metrics import DEFAULT_KS, build_report, rank_of_target
from .stratify import build_anchor_index, make_samples
from .train import BUCKET_POOL_FACTOR, train

log = logging.getLogger(__name__)

ANCHOR_STRATUM = "anchor_targeted"
NONANCHOR_STRATUM = "nonanchor_targeted"
DEFAULT_THRESHOLD_GRID = (0, 5, 10, 15, 20, 25)


class CompatibilityError(ValueError):
    pass


def check_compatibility(config, dataset):
    if config.n_users != len(dataset.users) or config.n_locations != len(dataset.locations):
        raise CompatibilityError(
            f"checkpoint built for {config.n_users} users / {config.n_locations} locations, "
            f"dataset has {len(dataset.users)} / {len(dataset.locations)}"
        )


def evaluate(params, config, dataset, anchor_index, split="test", ks=DEFAULT_KS, batch_size=256):
    """Deterministic eval-mode pass over one split.

    The counterfactual branch never runs here; stratum and category
    breakdowns come from the sample metadata.
    """
    check_compatibility(config, dataset)
    samples = [s for s in make_samples(dataset, anchor_index) if s.split == split]
    if not samples:
        raise ValueError(f"no samples in split {split!r}")
    ranks = []
    strata = []
    categories = []
    for batch_samples in _eval_order(samples, batch_size):
        batch = M.batch_from_samples(batch_samples, dtype=config.np_dtype)
        out = M.forward(params, config, batch, mode="eval")
        ranks.extend(rank_of_target(out.logits.data, batch.target))
        for s in batch_samples:
            strata.append(ANCHOR_STRATUM if s.anchor_target else NONANCHOR_STRATUM)
            categories.append(s.target_category)
    named = [dataset.categories.raw(c) if c is not None else None for c in categories]
    return build_report(ranks, strata, named, ks=ks)


def _eval_order(samples, batch_size):
    """Deterministic length-bucketed batching for evaluation."""
    idx = np.arange(len(samples))
    span = batch_size * BUCKET_POOL_FACTOR
    for start in range(0, len(idx), span):
        pool = idx[start:start + span]
        pool = pool[np.argsort([samples[i].length for i in pool], kind="stable")]
        for b in range(0, len(pool), batch_size):
            yield [samples[i] for i in pool[b:b + batch_size]]


def evaluate_checkpoint(ckpt_dir, dataset, threshold=None, split="test", ks=DEFAULT_KS):
    params, config = M.load_model(ckpt_dir)
    check_compatibility(config, dataset)
    anchor_index = build_anchor_index(dataset, threshold if threshold is not None else 0)
    return evaluate(params, config, dataset, anchor_index, split=split, ks=ks)


@dataclass
class SweepResult:
    grid: tuple
    reports: dict  # threshold -> MetricsReport

    def rows(self, k=5):
        out = []
        for thr in self.grid:
            report = self.reports[thr]
            row = {"threshold": thr, "k": k}
            for name, metrics in (("overall", report.overall),
                                  (ANCHOR_STRATUM, report.by_stratum.get(ANCHOR_STRATUM)),
                                  (NONANCHOR_STRATUM, report.by_stratum.get(NONANCHOR_STRATUM))):
                if metrics is None:
                    row[f"recall_{name}"] = ""
                    continue
                row[f"recall_{name}"] = metrics[k].recall
            out.append(row)
        return out


def sweep_threshold(dataset, cfg, grid=DEFAULT_THRESHOLD_GRID, eval_threshold=None, ks=DEFAULT_KS):
    """Train and evaluate once per anchor threshold, sharing the seed.

    ``eval_threshold`` fixes the stratum definition used for reporting (so
    the same test subgroups are compared across cells); it defaults to
    each cell's own training threshold.
    """
    if not grid:
        raise ValueError("empty threshold grid")
    reports = {}
    for thr in grid:
        run_cfg = replace(cfg, anchor_threshold=thr)
        anchor_index = build_anchor_index(dataset, thr)
        result = train(dataset, anchor_index, run_cfg)
        eval_index = (
            anchor_index if eval_threshold is None else build_anchor_index(dataset, eval_threshold)
        )
        reports[thr] = evaluate(result.params, result.config, dataset, eval_index, ks=ks)
        log.info("threshold %s: test recall@5 %.4f", thr, reports[thr].overall[5].recall)
    return SweepResult(grid=tuple(grid), reports=reports)


ABLATION_VARIANTS = (
    ("full", True, True),
    ("no_link1", False, True),
    ("no_link2", True, False),
    ("no_links", False, False),
)


@dataclass
class AblationResult:
    reports: dict  # variant name -> MetricsReport

    def rows(self, ks=DEFAULT_KS):
        out = []
        for name, _, _ in ABLATION_VARIANTS:
            report = self.reports[name]
            for k in ks:
                m = report.overall[k]
                out.append({"variant": name, "k": k, "recall": m.recall, "mrr": m.mrr, "ndcg": m.ndcg})
        return out


def run_ablation(dataset, cfg, ks=DEFAULT_KS):
    """Four runs over the link-flag grid with a shared seed."""
    anchor_index = build_anchor_index(dataset, cfg.anchor_threshold)
    reports = {}
    for name, link1, link2 in ABLATION_VARIANTS:
        run_cfg = replace(cfg, link1=link1, link2=link2)
        result = train(dataset, anchor_index, run_cfg)
        reports[name] = evaluate(result.params, result.config, dataset, anchor_index, ks=ks)
        log.info("ablation %s: test recall@5 %.4f", name, reports[name].overall[5].recall)
    return AblationResult(reports=reports)
