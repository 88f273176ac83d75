"""Stratified multi-task training.

The batch loss sums plain cross-entropy over anchor-targeted samples and
cross-entropy of (factual - counterfactual) scores over nonanchor-targeted
samples. Batches are length-bucketed and reshuffled per epoch; the
counterfactual noise stream is seeded separately from the shuffling stream
so toggling the causal branch never perturbs batch order.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from .model import Batch, ModelConfig, batch_from_samples
from .nn import Parameters
from .optim import adam_init, adam_step, clip_by_global_norm
from .stratify import make_samples
from .tensor import Tensor

log = logging.getLogger(__name__)

BUCKET_POOL_FACTOR = 8


class ContractViolation(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    anchor_threshold: int = 5
    strategy: str = "I"
    link1: bool = True
    link2: bool = True
    patience: int = 5
    clip_norm: float = 5.0
    tie_space: str = "logit"
    causal_enabled: bool = True  # False emulates a build without the branch
    emb_dim: int = 128
    hidden_dim: int = 256

    def validate(self):
        if min(self.epochs, self.batch_size, self.patience) <= 0 or self.lr <= 0:
            raise ValueError("epochs, batch_size, patience and lr must be positive")
        if self.anchor_threshold < 0:
            raise ValueError("anchor_threshold must be >= 0")
        return self


@dataclass
class LossBreakdown:
    total: float
    ce_anchor: float
    ce_nonanchor: float
    n_anchor: int
    n_nonanchor: int

    def per_sample(self):
        n = self.n_anchor + self.n_nonanchor
        return self.total / n if n else 0.0


def _tie_scores(logits_rows, cf_logits, tie_space, eps=1e-12):
    """Nonanchor training scores: factual minus counterfactual.

    Both subtraction spaces are exposed; the probability-space variant
    clamps before the log since a difference of distributions need not be
    one.
    """
    if tie_space == "logit":
        return M.indirect_effect(logits_rows, cf_logits), "logits"
    probs = T.sub(T.softmax_last(logits_rows), T.softmax_last(cf_logits))
    return T.maximum_scalar(probs, eps), "probs"


def multi_task_loss(output, batch, tie_space="logit"):
    """Summed two-stratum objective; also returns the float breakdown."""
    rows1 = np.flatnonzero(batch.anchor_target)
    rows2 = np.flatnonzero(~batch.anchor_target)
    terms = []
    ce_anchor = 0.0
    ce_nonanchor = 0.0
    if rows1.size:
        loss1 = T.sum_all(T.softmax_cross_entropy(T.take_rows(output.logits, rows1), batch.target[rows1]))
        ce_anchor = float(loss1.data)
        terms.append(loss1)
    if rows2.size:
        if output.cf_logits is None:
            raise ContractViolation(
                f"{rows2.size} nonanchor-targeted samples in the batch but no counterfactual scores"
            )
        if output.cf_rows is None or not np.array_equal(output.cf_rows, rows2):
            raise ContractViolation("counterfactual rows do not line up with the nonanchor stratum")
        scores, kind = _tie_scores(T.take_rows(output.logits, rows2), output.cf_logits, tie_space)
        if kind == "logits":
            loss2 = T.sum_all(T.softmax_cross_entropy(scores, batch.target[rows2]))
        else:
            loss2 = T.neg(T.sum_all(T.log(T.gather_cols(scores, batch.target[rows2]))))
        ce_nonanchor = float(loss2.data)
        terms.append(loss2)
    if not terms:
        raise ValueError("empty batch")
    loss = terms[0] if len(terms) == 1 else T.add(terms[0], terms[1])
    breakdown = LossBreakdown(
        total=float(loss.data),
        ce_anchor=ce_anchor,
        ce_nonanchor=ce_nonanchor,
        n_anchor=int(rows1.size),
        n_nonanchor=int(rows2.size),
    )
    return loss, breakdown


def batcher(samples, batch_size, seed, epoch, dtype=np.float32, shuffle=True):
    """Yield padded batches, length-bucketed to limit padding waste.

    Shuffling is driven by a (seed, epoch)-derived stream: the same pair
    always reproduces the same batch sequence. Buckets only group by
    length, so strata stay mixed within batches.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = np.arange(len(samples))
    if shuffle:
        rng = np.random.default_rng([seed, epoch])
        idx = rng.permutation(idx)
    pool_span = batch_size * BUCKET_POOL_FACTOR
    batches = []
    for start in range(0, len(idx), pool_span):
        pool = idx[start:start + pool_span]
        pool = pool[np.argsort([samples[i].length for i in pool], kind="stable")]
        for b in range(0, len(pool), batch_size):
            batches.append(pool[b:b + batch_size])
    if shuffle:
        order = rng.permutation(len(batches))
        batches = [batches[i] for i in order]
    for rows in batches:
        yield batch_from_samples([samples[i] for i in rows], dtype=dtype)


def padding_fraction(samples, batch_size, seed, epoch, shuffle=True, bucketed=True):
    """Mean padded-step share per batch; diagnostic for the bucketing."""
    if bucketed:
        batches = list(batcher(samples, batch_size, seed, epoch, shuffle=shuffle))
    else:
        rng = np.random.default_rng([seed, epoch])
        idx = rng.permutation(len(samples)) if shuffle else np.arange(len(samples))
        batches = [
            batch_from_samples([samples[i] for i in idx[b:b + batch_size]])
            for b in range(0, len(idx), batch_size)
        ]
    fractions = [1.0 - batch.mask.sum() / batch.mask.size for batch in batches]
    return float(np.mean(fractions))


@dataclass
class TrainResult:
    params: Parameters
    config: ModelConfig
    history: list = field(default_factory=list)
    best_epoch: int = -1


def train(dataset, anchor_index, cfg, model_cfg=None, log_path=None):
    """Full training loop with early stopping on validation Recall@5.

    Returns the best-on-validation parameters plus the per-epoch history;
    optionally streams the history to a JSON-lines file as it grows.
    """
    from .evaluate import evaluate  # late import; evaluate also imports us

    cfg.validate()
    samples = make_samples(dataset, anchor_index)
    train_samples = [s for s in samples if s.split == "train"]
    if not train_samples:
        raise ValueError("no training samples")
    if model_cfg is None:
        model_cfg = ModelConfig(
            n_users=len(dataset.users),
            n_locations=len(dataset.locations),
            emb_dim=cfg.emb_dim,
            hidden_dim=cfg.hidden_dim,
            link1=cfg.link1,
            link2=cfg.link2,
            strategy=cfg.strategy,
            tie_space=cfg.tie_space,
        )
    model_cfg.validate()
    dt = model_cfg.np_dtype
    params = M.init_params(model_cfg, seed=cfg.seed)
    opt = adam_init(params, lr=cfg.lr)

    best_value = -np.inf
    best_params = params.values_copy()
    best_epoch = -1
    since_best = 0
    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            totals = np.zeros(3)  # loss sums: total, anchor, nonanchor
            counts = np.zeros(2, dtype=np.int64)
            for b, batch in enumerate(batcher(train_samples, cfg.batch_size, cfg.seed, epoch, dtype=dt)):
                has_nonanchor = bool((~batch.anchor_target).any())
                if cfg.causal_enabled and has_nonanchor:
                    out = M.forward(params, model_cfg, batch, mode="train",
                                    cf_seed=[cfg.seed, epoch, b])
                else:
                    eval_like = batch
                    if has_nonanchor:
                        # branch compiled out: train every sample as anchor-style CE
                        eval_like = Batch(batch.user, batch.loc, batch.hour, batch.mask,
                                          batch.target, np.ones_like(batch.anchor_target),
                                          batch.lengths)
                    out = M.forward(params, model_cfg, eval_like, mode="train")
                    batch = eval_like
                loss, breakdown = multi_task_loss(out, batch, tie_space=model_cfg.tie_space)
                if not np.isfinite(breakdown.total):
                    raise DivergenceError(
                        f"non-finite loss {breakdown.total} at epoch {epoch}, batch {b}"
                    )
                params.zero_grad()
                loss.backward()
                grads, _ = clip_by_global_norm(params.grads(), cfg.clip_norm)
                adam_step(params, grads, opt)
                totals += (breakdown.total, breakdown.ce_anchor, breakdown.ce_nonanchor)
                counts += (breakdown.n_anchor, breakdown.n_nonanchor)
            n_seen = int(counts.sum())
            report = evaluate(params, model_cfg, dataset, anchor_index, split="valid", ks=(5,))
            valid = report.overall[5]
            row = {
                "epoch": epoch,
                "train_loss": totals[0] / n_seen,
                "loss_anchor": totals[1] / n_seen,
                "loss_nonanchor": totals[2] / n_seen,
                "n_anchor": int(counts[0]),
                "n_nonanchor": int(counts[1]),
                "valid_recall@5": valid.recall,
                "valid_mrr@5": valid.mrr,
                "valid_ndcg@5": valid.ndcg,
                "seconds": round(time.perf_counter() - t0, 3),
            }
            history.append(row)
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
                log_fh.flush()
            log.info("epoch %d loss %.4f valid recall@5 %.4f", epoch, row["train_loss"], valid.recall)
            if valid.recall > best_value:
                best_value = valid.recall
                best_params = params.values_copy()
                best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    params.load_values(best_params)
    return TrainResult(params=params, config=model_cfg, history=history, best_epoch=best_epoch)
