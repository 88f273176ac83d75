"""The causality-aware predictor.

Two separated pathways produce the final scores. A location-independent
context state is fused from user and hour embeddings, step by step; a
recurrent state consumes (context ⊕ location embedding) per step. The
output head concatenates the final context state, the final recurrent
state and the last visited location's embedding, each of the two skip
connections removable for ablation.

During training, nonanchor-targeted samples additionally get a
counterfactual pass: the recurrent state is recomputed from synthetic
context/location inputs while the head keeps the factual skip inputs, so
subtracting the two score vectors isolates the contribution that flowed
through the recurrent pathway. Three constructions for the synthetic
location inputs are supported: uniform noise (I), zeros (II) and the
mean of the other location embeddings in the mini-batch (III).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, nn
from . import tensor as T
from .nn import Parameters
from .tensor import Tensor

log = logging.getLogger(__name__)

STRATEGIES = ("I", "II", "III")
TIE_SPACES = ("logit", "prob")
MODEL_CONFIG_NAME = "model_config.json"


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_users: int
    n_locations: int
    n_hours: int = 24
    emb_dim: int = 128
    hidden_dim: int = 256
    link1: bool = True  # direct context -> output connection
    link2: bool = True  # direct last-location -> output connection
    strategy: str = "I"
    tie_space: str = "logit"
    dtype: str = "float32"

    def validate(self):
        if min(self.n_users, self.n_locations, self.emb_dim, self.hidden_dim) <= 0:
            raise ConfigError("sizes and dimensions must be positive")
        if self.n_hours != 24:
            raise ConfigError(f"hour vocabulary is fixed at 24, got {self.n_hours}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.tie_space not in TIE_SPACES:
            raise ConfigError(f"tie_space must be one of {TIE_SPACES}, got {self.tie_space!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        return self

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def head_input_dim(self):
        return self.hidden_dim + self.emb_dim * (int(self.link1) + int(self.link2))


def empty_params(config):
    """Parameter structure with zero values (for loading checkpoints into)."""
    return init_params(config, seed=None)


def init_params(config, seed=0):
    """Build all model parameters; ``seed=None`` leaves them at zero.

    Embeddings start uniform in (-0.1, 0.1); every linear map uniform in
    +-1/sqrt(fan_in) with zero bias.
    """
    config.validate()
    dt = config.np_dtype
    d, h = config.emb_dim, config.hidden_dim

    class _Zeros:
        def uniform(self, lo, hi, size):
            return np.zeros(size)

    rng = np.random.default_rng(seed) if seed is not None else _Zeros()
    params = Parameters()
    nn.init_embedding(params, rng, "emb_user", config.n_users, d, dt)
    nn.init_embedding(params, rng, "emb_loc", config.n_locations, d, dt)
    nn.init_embedding(params, rng, "emb_hour", config.n_hours, d, dt)
    nn.init_linear(params, rng, "ctx", 2 * d, d, dt)
    nn.init_gru(params, rng, "rnn", 2 * d, h, dt)
    nn.init_linear(params, rng, "head1", config.head_input_dim(), h, dt)
    nn.init_linear(params, rng, "head2", h, config.n_locations, dt)
    return params


@dataclass
class Batch:
    """Left-padded index arrays for a batch of prediction samples."""

    user: np.ndarray  # [B]
    loc: np.ndarray  # [B, T]
    hour: np.ndarray  # [B, T]
    mask: np.ndarray  # [B, T], 1.0 on real steps
    target: np.ndarray  # [B]
    anchor_target: np.ndarray  # [B] bool
    lengths: np.ndarray  # [B]

    @property
    def size(self):
        return len(self.user)

    @property
    def steps(self):
        return self.loc.shape[1]


def batch_from_samples(samples, dtype=np.float32, pad_to=None):
    """Pad a list of samples on the left so final steps align."""
    n = len(samples)
    max_len = max(s.length for s in samples)
    width = max(max_len, pad_to or 0)
    user = np.zeros(n, dtype=np.int64)
    loc = np.zeros((n, width), dtype=np.int64)
    hour = np.zeros((n, width), dtype=np.int64)
    mask = np.zeros((n, width), dtype=dtype)
    target = np.zeros(n, dtype=np.int64)
    anchor = np.zeros(n, dtype=bool)
    lengths = np.zeros(n, dtype=np.int64)
    for i, s in enumerate(samples):
        pad = width - s.length
        user[i] = s.user
        loc[i, pad:] = [r.loc for r in s.inputs]
        hour[i, pad:] = [r.hour for r in s.inputs]
        mask[i, pad:] = 1.0
        target[i] = s.target_loc
        anchor[i] = s.anchor_target
        lengths[i] = s.length
    return Batch(user, loc, hour, mask, target, anchor, lengths)


@dataclass
class CounterfactualDraw:
    ctx_star: np.ndarray  # [B, T, d], always uniform [0, 1)
    loc_star: np.ndarray  # [B, T, d], per strategy
    strategy: str
    seed: tuple | None


def make_counterfactual(loc_values, mask, strategy, seed=None, rng=None):
    """Synthetic context/location inputs for the intervention pass.

    ``loc_values`` is the detached ``[B, T, d]`` stack of factual location
    embeddings; padded positions (mask 0) are never counted as
    observations. The context replacement is always a uniform draw; the
    location replacement follows the strategy: uniform (I), zeros (II), or
    the mean of all other real location vectors in the batch (III, which
    degrades to zeros with a warning when there is only one observation).
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown counterfactual strategy {strategy!r}")
    if rng is None:
        # default to a fixed stream: unseeded draws must still reproduce
        rng = np.random.default_rng(0 if seed is None else seed)
    dt = loc_values.dtype
    shape = loc_values.shape
    ctx_star = rng.random(shape, dtype=dt)
    if strategy == "I":
        loc_star = rng.random(shape, dtype=dt)
    elif strategy == "II":
        loc_star = np.zeros(shape, dtype=dt)
    else:
        real = mask > 0
        n_obs = int(real.sum())
        if n_obs <= 1:
            log.warning("strategy III needs at least two observations, falling back to zeros")
            loc_star = np.zeros(shape, dtype=dt)
        else:
            total = loc_values[real].sum(axis=0)
            loc_star = np.zeros(shape, dtype=dt)
            loc_star[real] = (total - loc_values[real]) / (n_obs - 1)
    return CounterfactualDraw(ctx_star=ctx_star, loc_star=loc_star, strategy=strategy,
                              seed=tuple(seed) if isinstance(seed, (list, tuple)) else seed)


@dataclass
class ForwardOutput:
    ctx_seq: list  # per-step location-independent states, [B, d] tensors
    ctx_last: Tensor
    rnn_last: Tensor
    loc_last: Tensor  # embedding of the final input location
    logits: Tensor  # [B, n_locations]
    cf_logits: Tensor | None  # counterfactual scores for cf_rows, train only
    cf_rows: np.ndarray | None
    draw: CounterfactualDraw | None


def context_states(params, config, batch):
    """Per-step fusion of user and hour embeddings; never sees locations."""
    u_vec = T.lookup(params["emb_user"], batch.user)
    states = []
    for t in range(batch.steps):
        h_vec = T.lookup(params["emb_hour"], batch.hour[:, t])
        states.append(T.tanh(nn.linear(T.concat([u_vec, h_vec]), params["ctx_w"], params["ctx_b"])))
    return states


def _masked_recurrence(params, config, inputs, mask, dtype):
    """Run the GRU over per-step [B, 2d] inputs, skipping padded steps."""
    w = nn.gru_weights(params, "rnn")
    n = config.hidden_dim
    b = mask.shape[0]
    state = Tensor(np.zeros((b, n), dtype=dtype))
    for t, x in enumerate(inputs):
        step_mask = np.repeat(mask[:, t:t + 1].astype(dtype), n, axis=1)
        m = Tensor(step_mask)
        inv = Tensor(1.0 - step_mask)
        new = nn.gru_cell(x, state, w)
        state = T.add(T.mul(m, new), T.mul(inv, state))
    return state


def head(params, config, ctx_last, rnn_last, loc_last):
    """Two linear layers with a tanh between; skip inputs gated by config."""
    parts = []
    if config.link1:
        parts.append(ctx_last)
    parts.append(rnn_last)
    if config.link2:
        parts.append(loc_last)
    fused = T.concat(parts)
    expected = params["head1_w"].shape[0]
    if fused.shape[-1] != expected:
        raise ConfigError(
            f"head input width {fused.shape[-1]} does not match built weights {expected}; "
            f"link flags differ from the ones the parameters were created with"
        )
    hidden = T.tanh(nn.linear(fused, params["head1_w"], params["head1_b"]))
    return nn.linear(hidden, params["head2_w"], params["head2_b"])


def forward(params, config, batch, mode="train", cf_seed=None, cf_draw=None):
    """Factual pass always; counterfactual pass only in train mode and only
    for the nonanchor-targeted rows of the batch."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    dt = config.np_dtype
    ctx_seq = context_states(params, config, batch)
    loc_vecs = [T.lookup(params["emb_loc"], batch.loc[:, t]) for t in range(batch.steps)]
    rnn_last = _masked_recurrence(
        params, config, [T.concat([c, l]) for c, l in zip(ctx_seq, loc_vecs)], batch.mask, dt
    )
    ctx_last = ctx_seq[-1]
    loc_last = loc_vecs[-1]
    logits = head(params, config, ctx_last, rnn_last, loc_last)

    cf_logits = None
    cf_rows = None
    draw = None
    if mode == "train":
        rows = np.flatnonzero(~batch.anchor_target)
        if rows.size:
            if cf_draw is None:
                loc_values = np.stack([v.data for v in loc_vecs], axis=1)
                cf_draw = make_counterfactual(loc_values, batch.mask, config.strategy, seed=cf_seed)
            draw = cf_draw
            cf_inputs = [
                T.concat([Tensor(draw.ctx_star[rows, t]), Tensor(draw.loc_star[rows, t])])
                for t in range(batch.steps)
            ]
            cf_rnn_last = _masked_recurrence(params, config, cf_inputs, batch.mask[rows], dt)
            cf_logits = head(
                params, config, T.take_rows(ctx_last, rows), cf_rnn_last, T.take_rows(loc_last, rows)
            )
            cf_rows = rows
    return ForwardOutput(ctx_seq, ctx_last, rnn_last, loc_last, logits, cf_logits, cf_rows, draw)


def indirect_effect(logits, cf_logits):
    """Scores attributable to the recurrent pathway: factual - intervened."""
    if logits.shape != cf_logits.shape:
        raise T.ShapeError(f"score shapes differ: {logits.shape} vs {cf_logits.shape}")
    return T.sub(logits, cf_logits)


def location_effect(params, config, batch, loc_i, loc_j):
    """Score change from swapping the final input location, states held fixed.

    With the direct location connection ablated this is structurally zero
    for every pair.
    """
    out = forward(params, config, batch, mode="eval")
    ctx_last = Tensor(out.ctx_last.data)
    rnn_last = Tensor(out.rnn_last.data)
    n = batch.size
    vec_i = T.lookup(params["emb_loc"], np.full(n, loc_i))
    vec_j = T.lookup(params["emb_loc"], np.full(n, loc_j))
    logits_i = head(params, config, ctx_last, rnn_last, Tensor(vec_i.data))
    logits_j = head(params, config, ctx_last, rnn_last, Tensor(vec_j.data))
    return logits_i.data - logits_j.data


@dataclass
class EffectReport:
    total: np.ndarray  # factual minus fully-counterfactual reference
    direct: np.ndarray  # intervened minus the same reference
    indirect: np.ndarray  # total - direct, computed exactly as written
    strategy: str


def effect_decomposition(params, config, batch, strategy=None, cf_seed=None):
    """Total, direct and indirect score effects under one shared draw.

    The same counterfactual sample feeds all three terms, so the indirect
    component equals ``total - direct`` bit for bit.
    """
    strategy = strategy or config.strategy
    dt = config.np_dtype
    out = forward(params, config, batch, mode="eval")
    loc_values = np.stack(
        [T.lookup(params["emb_loc"], batch.loc[:, t]).data for t in range(batch.steps)], axis=1
    )
    draw = make_counterfactual(loc_values, batch.mask, strategy, seed=cf_seed)
    rows = np.arange(batch.size)
    cf_inputs = [
        T.concat([Tensor(draw.ctx_star[:, t]), Tensor(draw.loc_star[:, t])])
        for t in range(batch.steps)
    ]
    cf_rnn_last = _masked_recurrence(params, config, cf_inputs, batch.mask, dt)
    intervened = head(params, config, out.ctx_last, cf_rnn_last, out.loc_last)
    reference = head(
        params, config,
        Tensor(draw.ctx_star[:, -1]), cf_rnn_last, Tensor(draw.loc_star[:, -1]),
    )
    total = out.logits.data - reference.data
    direct = intervened.data - reference.data
    return EffectReport(total=total, direct=direct, indirect=total - direct, strategy=strategy)


# -- persistence -----------------------------------------------------------


def save_model(dirpath, params, config):
    checkpoint.save_params(dirpath, params)
    cfg_path = Path(dirpath) / MODEL_CONFIG_NAME
    cfg_path.write_text(json.dumps(asdict(config), indent=1), encoding="utf-8")


def load_model(dirpath):
    cfg_path = Path(dirpath) / MODEL_CONFIG_NAME
    if not cfg_path.exists():
        raise checkpoint.CheckpointError(f"no {MODEL_CONFIG_NAME} in {dirpath}")
    config = ModelConfig(**json.loads(cfg_path.read_text(encoding="utf-8"))).validate()
    params = empty_params(config)
    params.load_values(checkpoint.load_params(dirpath))
    return params, config
