"""Predictor structure: pathways, interventions and effect arithmetic."""

import numpy as np
import pytest

from causalmob import model as M
from causalmob import tensor as T
from causalmob.dataset import Record
from causalmob.model import (
    Batch,
    ConfigError,
    ModelConfig,
    batch_from_samples,
    effect_decomposition,
    forward,
    head,
    indirect_effect,
    init_params,
    load_model,
    location_effect,
    make_counterfactual,
    save_model,
)
from causalmob.stratify import PredictionSample
from causalmob.tensor import Tensor

from helpers import REL_TOL, max_rel_error, numeric_grad


def tiny_config(**kw):
    defaults = dict(n_users=3, n_locations=5, emb_dim=4, hidden_dim=6, dtype="float64")
    defaults.update(kw)
    return ModelConfig(**defaults)


def sample(user=0, locs=(1, 2, 3), hours=(8, 12, 20), target=4, anchor=False):
    recs = [Record(user=user, loc=l, hour=h, ts=i * 3600) for i, (l, h) in enumerate(zip(locs, hours))]
    return PredictionSample(
        user=user, inputs=recs, target_loc=target, target_hour=23,
        target_category=None, anchor_target=anchor, split="train",
    )


def tiny_batch(anchor_flags=(False, True), dtype=np.float64):
    samples = [
        sample(user=0, locs=(1, 2, 3), hours=(3, 9, 15), target=4, anchor=anchor_flags[0]),
        sample(user=1, locs=(0, 2), hours=(5, 21), target=1, anchor=anchor_flags[1]),
    ]
    return batch_from_samples(samples, dtype=dtype)


class TestEmbeddingAndContext:
    def test_context_shape_per_step(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=1)
        batch = tiny_batch()
        ctx = M.context_states(params, cfg, batch)
        assert len(ctx) == batch.steps
        assert all(c.shape == (2, cfg.emb_dim) for c in ctx)

    def test_zero_weights_give_zero_context(self):
        cfg = tiny_config()
        params = M.empty_params(cfg)
        ctx = M.context_states(params, cfg, tiny_batch())
        for c in ctx:
            np.testing.assert_array_equal(c.data, 0.0)

    def test_context_ignores_locations(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=2)
        batch = tiny_batch()
        shuffled = Batch(batch.user, batch.loc[:, ::-1].copy(), batch.hour, batch.mask,
                         batch.target, batch.anchor_target, batch.lengths)
        a = M.context_states(params, cfg, batch)
        b = M.context_states(params, cfg, shuffled)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.data, y.data)


class TestHead:
    def test_zero_weights_uniform_scores(self):
        cfg = tiny_config()
        params = M.empty_params(cfg)
        out = forward(params, cfg, tiny_batch(), mode="eval")
        np.testing.assert_array_equal(out.logits.data, np.zeros((2, cfg.n_locations)))

    def test_flag_mismatch_rejected(self):
        cfg = tiny_config(link1=True, link2=True)
        params = init_params(cfg, seed=0)
        stripped = tiny_config(link1=False, link2=False)
        with pytest.raises(ConfigError, match="width"):
            forward(params, stripped, tiny_batch(), mode="eval")

    def test_both_links_off_uses_recurrent_state_only(self):
        cfg = tiny_config(link1=False, link2=False)
        params = init_params(cfg, seed=3)
        batch = tiny_batch()
        out = forward(params, cfg, batch, mode="eval")
        direct = head(params, cfg, Tensor(np.zeros_like(out.ctx_last.data)),
                      Tensor(out.rnn_last.data), Tensor(np.zeros_like(out.loc_last.data)))
        np.testing.assert_array_equal(out.logits.data, direct.data)

    def test_location_connection_is_live(self):
        # fixed states, swap the final location embedding: scores must move
        cfg = tiny_config(link2=True)
        params = init_params(cfg, seed=4)
        effect = location_effect(params, cfg, tiny_batch(), 0, 3)
        assert np.abs(effect).max() > 1e-6


class TestCounterfactualDraws:
    def loc_values(self, seed=0, shape=(2, 3, 4)):
        return np.random.default_rng(seed).normal(size=shape)

    def test_zeros_strategy(self):
        vals = self.loc_values()
        draw = make_counterfactual(vals, np.ones(vals.shape[:2]), "II", seed=1)
        np.testing.assert_array_equal(draw.loc_star, 0.0)

    def test_uniform_strategy_range_and_mean(self):
        vals = np.zeros((40, 10, 8))
        draw = make_counterfactual(vals, np.ones((40, 10)), "I", seed=2)
        assert draw.loc_star.min() >= 0.0 and draw.loc_star.max() < 1.0
        assert draw.ctx_star.min() >= 0.0 and draw.ctx_star.max() < 1.0
        assert abs(draw.loc_star.mean() - 0.5) < 0.01

    def test_mean_of_others(self):
        vals = np.array([[[1.0, 1.0]], [[2.0, 0.0]], [[4.0, 2.0]]])  # three observations
        draw = make_counterfactual(vals, np.ones((3, 1)), "III", seed=3)
        np.testing.assert_allclose(draw.loc_star[0, 0], [3.0, 1.0])
        np.testing.assert_allclose(draw.loc_star[1, 0], [2.5, 1.5])

    def test_mean_excludes_padded_positions(self):
        vals = np.array([[[9.0], [1.0]], [[9.0], [3.0]]])
        mask = np.array([[0.0, 1.0], [0.0, 1.0]])  # the 9s are padding
        draw = make_counterfactual(vals, mask, "III", seed=4)
        np.testing.assert_allclose(draw.loc_star[0, 1], [3.0])
        np.testing.assert_allclose(draw.loc_star[1, 1], [1.0])
        np.testing.assert_array_equal(draw.loc_star[:, 0], 0.0)

    def test_single_observation_falls_back_to_zeros(self, caplog):
        vals = np.ones((1, 1, 3))
        with caplog.at_level("WARNING"):
            draw = make_counterfactual(vals, np.ones((1, 1)), "III", seed=5)
        np.testing.assert_array_equal(draw.loc_star, 0.0)
        assert any("falling back" in m for m in caplog.messages)

    def test_seeded_draws_reproduce(self):
        vals = self.loc_values()
        a = make_counterfactual(vals, np.ones(vals.shape[:2]), "I", seed=[7, 1, 2])
        b = make_counterfactual(vals, np.ones(vals.shape[:2]), "I", seed=[7, 1, 2])
        np.testing.assert_array_equal(a.loc_star, b.loc_star)
        assert a.seed == (7, 1, 2)


class TestForward:
    def test_eval_mode_never_intervenes(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=5)
        out = forward(params, cfg, tiny_batch(anchor_flags=(False, False)), mode="eval")
        assert out.cf_logits is None and out.draw is None

    def test_anchor_only_batch_skips_the_branch(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=5)
        out = forward(params, cfg, tiny_batch(anchor_flags=(True, True)), mode="train")
        assert out.cf_logits is None

    def test_mixed_batch_intervenes_on_nonanchor_rows_only(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=5)
        out = forward(params, cfg, tiny_batch(anchor_flags=(False, True)), mode="train", cf_seed=[0, 0, 0])
        assert out.cf_logits.shape == (1, cfg.n_locations)
        np.testing.assert_array_equal(out.cf_rows, [0])

    def test_identity_intervention_gives_zero_indirect_effect(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=6)
        batch = tiny_batch(anchor_flags=(False, False))
        factual = forward(params, cfg, batch, mode="eval")
        ctx_vals = np.stack([c.data for c in factual.ctx_seq], axis=1)
        loc_vals = np.stack(
            [T.lookup(params["emb_loc"], batch.loc[:, t]).data for t in range(batch.steps)], axis=1
        )
        draw = M.CounterfactualDraw(ctx_star=ctx_vals, loc_star=loc_vals, strategy="I", seed=None)
        out = forward(params, cfg, batch, mode="train", cf_draw=draw)
        tie = indirect_effect(out.logits, out.cf_logits)
        np.testing.assert_array_equal(tie.data, 0.0)

    def test_intervention_keeps_factual_skip_inputs_live(self):
        # with the location connection on, perturbing the factual final
        # location changes the intervened scores too
        cfg = tiny_config(link2=True)
        params = init_params(cfg, seed=7)
        base = tiny_batch(anchor_flags=(False, False))
        seed = [1, 2, 3]
        out_a = forward(params, cfg, base, mode="train", cf_seed=seed)
        moved_loc = base.loc.copy()
        moved_loc[:, -1] = (moved_loc[:, -1] + 1) % cfg.n_locations
        moved = Batch(base.user, moved_loc, base.hour, base.mask, base.target,
                      base.anchor_target, base.lengths)
        out_b = forward(params, cfg, moved, mode="train", cf_seed=seed)
        assert np.abs(out_a.cf_logits.data - out_b.cf_logits.data).max() > 1e-8

    def test_eval_scores_unaffected_by_branch(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=8)
        batch = tiny_batch(anchor_flags=(False, False))
        eval_out = forward(params, cfg, batch, mode="eval")
        train_out = forward(params, cfg, batch, mode="train", cf_seed=[9, 9, 9])
        np.testing.assert_array_equal(eval_out.logits.data, train_out.logits.data)


class TestIndirectEffect:
    def test_elementwise_difference(self):
        a = Tensor(np.array([[2.0, 1.0, 0.0]]))
        b = Tensor(np.array([[1.0, 1.0, 1.0]]))
        np.testing.assert_array_equal(indirect_effect(a, b).data, [[1.0, 0.0, -1.0]])

    def test_identity_is_zero(self):
        a = Tensor(np.array([[0.3, -0.2]]))
        np.testing.assert_array_equal(indirect_effect(a, a).data, 0.0)

    def test_length_mismatch(self):
        with pytest.raises(T.ShapeError):
            indirect_effect(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))))

    def test_argmax_can_move(self):
        # brute-force a 3-location toy: subtracting the intervened scores
        # can change the winner
        a = Tensor(np.array([[2.0, 1.9, 0.0]]))
        b = Tensor(np.array([[1.5, 0.0, 0.0]]))
        tie = indirect_effect(a, b)
        assert int(np.argmax(a.data)) == 0
        assert int(np.argmax(tie.data)) == 1


class TestLocationEffect:
    def test_same_pair_zero(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=9)
        effect = location_effect(params, cfg, tiny_batch(), 2, 2)
        np.testing.assert_array_equal(effect, 0.0)

    def test_ablated_direct_path_gives_zero_for_all_pairs(self):
        cfg = tiny_config(link2=False)
        params = init_params(cfg, seed=10)
        for i in range(cfg.n_locations):
            for j in range(cfg.n_locations):
                effect = location_effect(params, cfg, tiny_batch(), i, j)
                np.testing.assert_array_equal(effect, 0.0)

    def test_out_of_range_location(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=11)
        with pytest.raises(IndexError):
            location_effect(params, cfg, tiny_batch(), 0, cfg.n_locations)

    def test_matches_independent_matrix_arithmetic(self):
        # toy parameterization evaluated with plain numpy linear algebra
        cfg = tiny_config(n_locations=3)
        params = init_params(cfg, seed=12)
        batch = batch_from_samples(
            [sample(user=0, locs=(1, 2, 0), hours=(3, 9, 15), target=1),
             sample(user=1, locs=(0, 2), hours=(5, 21), target=2)],
            dtype=np.float64,
        )
        out = forward(params, cfg, batch, mode="eval")
        w1, b1 = params["head1_w"].data, params["head1_b"].data
        w2, b2 = params["head2_w"].data, params["head2_b"].data
        emb = params["emb_loc"].data

        def head_np(loc_vec):
            fused = np.concatenate([out.ctx_last.data, out.rnn_last.data,
                                    np.tile(loc_vec, (batch.size, 1))], axis=1)
            return np.tanh(fused @ w1 + b1) @ w2 + b2

        expected = head_np(emb[1]) - head_np(emb[2])
        got = location_effect(params, cfg, batch, 1, 2)
        np.testing.assert_allclose(got, expected, atol=1e-6)


class TestEffectDecomposition:
    def test_indirect_equals_total_minus_direct_bitwise(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=13)
        for k in range(5):
            report = effect_decomposition(params, cfg, tiny_batch(), cf_seed=[k, 0])
            np.testing.assert_array_equal(report.indirect, report.total - report.direct)

    def test_zeros_strategy_reproducible(self):
        cfg = tiny_config(strategy="II")
        params = init_params(cfg, seed=14)
        a = effect_decomposition(params, cfg, tiny_batch())
        b = effect_decomposition(params, cfg, tiny_batch())
        np.testing.assert_array_equal(a.total, b.total)
        np.testing.assert_array_equal(a.indirect, b.indirect)

    def test_indirect_close_to_forward_difference(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=15)
        batch = tiny_batch(anchor_flags=(False, False))
        seed = [3, 1]
        report = effect_decomposition(params, cfg, batch, cf_seed=seed)
        out = forward(params, cfg, batch, mode="train", cf_seed=seed)
        tie = indirect_effect(out.logits, out.cf_logits)
        np.testing.assert_allclose(report.indirect, tie.data, atol=1e-9)


class TestFullModelGradient:
    @pytest.mark.parametrize("seed", range(3))
    def test_composed_graph_matches_finite_differences(self, seed):
        cfg = tiny_config()
        params = init_params(cfg, seed=seed)
        batch = tiny_batch(anchor_flags=(False, True))
        cf_seed = [seed, 0, 0]

        def loss_fn():
            out = forward(params, cfg, batch, mode="train", cf_seed=cf_seed)
            rows1 = np.flatnonzero(batch.anchor_target)
            rows2 = np.flatnonzero(~batch.anchor_target)
            l1 = T.sum_all(T.softmax_cross_entropy(T.take_rows(out.logits, rows1), batch.target[rows1]))
            tie = indirect_effect(T.take_rows(out.logits, rows2), out.cf_logits)
            l2 = T.sum_all(T.softmax_cross_entropy(tie, batch.target[rows2]))
            return T.add(l1, l2)

        loss = loss_fn()
        params.zero_grad()
        loss.backward()
        analytic = params.grads()

        values = params.values_copy()

        def f(vals):
            params.load_values(vals)
            return float(loss_fn().data)

        numeric = numeric_grad(f, values)
        params.load_values(values)
        assert max_rel_error(analytic, numeric) < REL_TOL


class TestPersistence:
    def test_roundtrip_preserves_eval_scores(self, tmp_path):
        cfg = tiny_config(dtype="float32")
        params = init_params(cfg, seed=16)
        batch = tiny_batch(dtype=np.float32)
        before = forward(params, cfg, batch, mode="eval").logits.data
        save_model(tmp_path / "ckpt", params, cfg)
        loaded_params, loaded_cfg = load_model(tmp_path / "ckpt")
        after = forward(loaded_params, loaded_cfg, batch, mode="eval").logits.data
        np.testing.assert_array_equal(before, after)

    def test_sidecar_restores_flags(self, tmp_path):
        cfg = tiny_config(link1=False, strategy="III", tie_space="prob", dtype="float32")
        params = init_params(cfg, seed=17)
        save_model(tmp_path / "c", params, cfg)
        _, loaded = load_model(tmp_path / "c")
        assert loaded == cfg
