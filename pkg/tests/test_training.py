"""Negative sampling, loss, optimizer and training-loop tests."""

import math

import numpy as np
import pytest

from hypergroup import model as hm
from hypergroup import training as ht
from hypergroup.data import InteractionDataset, SynthConfig, generate_synthetic
from hypergroup.errors import ConfigError, NumericError, SamplingError
from hypergroup.graph import build_hypergraph, build_social_graph
from hypergroup.numeric import Tape, Tensor


def toy_world(d=4, variant="FULL", dropout=0.1, seed=0, k_hrl=1):
    ds = InteractionDataset(
        num_users=5,
        num_items=6,
        num_groups=4,
        social_edges={(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)},
        user_item=[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4), (0, 5)],
        group_item=[(0, 0), (1, 2), (2, 4), (3, 5)],
        memberships=[[0, 1], [1, 2], [2, 3, 4], [0, 4]],
    )
    social = build_social_graph(ds)
    hyper = build_hypergraph(ds)
    cfg = hm.ModelConfig(d=d, k_ipm=1, s_ipm=2, k_hrl=k_hrl, s_hrl=2,
                         mlp_hidden=(d, max(1, d // 2)), dropout=dropout, variant=variant)
    params = hm.initialize_params(cfg, ds.num_users, ds.num_items, np.random.default_rng(seed))
    return ds, social, hyper, cfg, params


class TestSampleNegative:
    def test_single_candidate_repeats(self):
        out = ht.sample_negative({0, 1}, 3, 2, np.random.default_rng(0))
        assert out == [2, 2]

    def test_never_collides_with_positives(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n_items = int(rng.integers(3, 30))
            positives = set(
                rng.choice(n_items, size=int(rng.integers(1, n_items)), replace=False).tolist()
            )
            for v in ht.sample_negative(positives, n_items, 5, rng):
                assert v not in positives

    def test_uniform_over_all_items_when_unconstrained(self):
        # chi-square goodness of fit against uniform; the 99th percentile of
        # chi2 with 19 degrees of freedom is 36.19
        rng = np.random.default_rng(2)
        n_items = 20
        draws = ht.sample_negative(set(), n_items, 100_000, rng)
        counts = np.bincount(draws, minlength=n_items)
        expected = len(draws) / n_items
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < 36.19

    def test_saturated_positives_rejected(self):
        with pytest.raises(SamplingError):
            ht.sample_negative({0, 1, 2}, 3, 1, np.random.default_rng(0))


class TestBatchLosses:
    def zeroed_world(self, **kw):
        ds, social, hyper, cfg, params = toy_world(**kw)
        for tower in (params.group_mlp, params.user_mlp):
            tower.out.values[:] = 0.0
        return ds, social, hyper, cfg, params

    def test_zero_output_layer_gives_ln2(self):
        ds, social, hyper, cfg, params = self.zeroed_world()
        triples = [(g, v, (v + 1) % ds.num_items) for g, v in ds.group_item]
        loss = ht.group_batch_loss(triples, params, cfg, social, hyper, 0.0,
                                   np.random.default_rng(0))
        assert abs(float(loss.values) - math.log(2.0)) < 1e-12
        triples_u = [(u, v, (v + 1) % ds.num_items) for u, v in ds.user_item]
        loss_u = ht.user_batch_loss(triples_u, params, cfg, social, 0.0,
                                    np.random.default_rng(0))
        assert abs(float(loss_u.values) - math.log(2.0)) < 1e-12

    def test_regularization_term_matches_manual_sum(self):
        ds, social, hyper, cfg, params = self.zeroed_world()
        lam = 1e-3
        triples = [(0, 0, 1)]
        loss = ht.group_batch_loss(triples, params, cfg, social, hyper, lam,
                                   np.random.default_rng(0))
        manual = sum(
            float(np.sum(p.values ** 2))
            for _, p in ht.regularized_parameters(params, cfg, "group")
        )
        assert abs(float(loss.values) - (math.log(2.0) + lam * manual)) < 1e-10

    def test_swapping_equal_scores_keeps_loss(self):
        ds, social, hyper, cfg, params = self.zeroed_world()
        a = ht.user_batch_loss([(0, 0, 3)], params, cfg, social, 0.0, np.random.default_rng(5))
        b = ht.user_batch_loss([(0, 3, 0)], params, cfg, social, 0.0, np.random.default_rng(5))
        assert float(a.values) == float(b.values)

    def test_regularization_monotone_in_lambda(self):
        ds, social, hyper, cfg, params = toy_world(dropout=0.0)
        triples = [(g, v, (v + 2) % ds.num_items) for g, v in ds.group_item]
        values = [
            float(ht.group_batch_loss(triples, params, cfg, social, hyper, lam,
                                      np.random.default_rng(7)).values)
            for lam in (0.0, 1e-5, 1e-3, 1e-1)
        ]
        assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))

    def test_touched_parameters_match_declared_set(self):
        ds, social, hyper, cfg, params = toy_world(dropout=0.0)
        tape = Tape()
        ht.group_batch_loss([(2, 1, 3)], params, cfg, social, hyper, 1e-5,
                            np.random.default_rng(0), tape)
        touched = {id(t) for t in tape.touched_parameters()}
        declared = {id(t) for _, t in ht.regularized_parameters(params, cfg, "group")}
        assert touched == declared

    def test_user_loss_touches_no_group_tower(self):
        ds, social, hyper, cfg, params = toy_world(dropout=0.0)
        tape = Tape()
        ht.user_batch_loss([(1, 1, 4)], params, cfg, social, 1e-5,
                           np.random.default_rng(0), tape)
        touched = {id(t) for t in tape.touched_parameters()}
        group_tower = {id(t) for t in [params.group_mlp.out] +
                       [x for w, b in params.group_mlp.hidden for x in (w, b)]}
        hrl = {id(t) for t in params.hrl_layers}
        assert touched.isdisjoint(group_tower)
        assert touched.isdisjoint(hrl)

    def test_gradients_match_finite_differences_quick(self):
        # spot check over a few tensors; the acceptance suite sweeps them all
        ds, social, hyper, cfg, params = toy_world(d=4, dropout=0.1)
        triples = [(0, 0, 3), (2, 4, 1)]

        def loss_value() -> float:
            return float(
                ht.group_batch_loss(triples, params, cfg, social, hyper, 1e-3,
                                    np.random.default_rng(33)).values
            )

        tape = Tape()
        loss = ht.group_batch_loss(triples, params, cfg, social, hyper, 1e-3,
                                   np.random.default_rng(33), tape)
        tape.backward(loss)
        h = 1e-5
        for tensor in (params.user_latent, params.hrl_layers[0], params.group_mlp.out):
            analytic = tensor.grad.copy()
            flat = tensor.values.ravel()
            for i in range(0, flat.size, max(1, flat.size // 6)):
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_value()
                flat[i] = orig - h
                fm = loss_value()
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                ana = analytic.ravel()[i]
                assert abs(ana - num) / max(1e-6, abs(ana), abs(num)) < 1e-4
        for _, p in params.trainable_tensors():
            p.zero_grad()


class TestOptimizers:
    def test_sgd_hand_case(self):
        p = Tensor([0.0], name="p", trainable=True)
        p.grad = np.array([1.0])
        ht.SgdOptimizer(lr=0.1).step([p])
        np.testing.assert_allclose(p.values, [-0.1])

    def test_zero_gradient_leaves_params(self):
        for opt in (ht.SgdOptimizer(0.1), ht.AdamOptimizer(0.1)):
            p = Tensor([0.5, -0.5], name="p", trainable=True)
            p.grad = np.zeros(2)
            before = p.values.copy()
            opt.step([p])
            assert np.array_equal(p.values, before)

    def test_adam_single_step_hand_computed(self):
        p = Tensor([0.5], name="p", trainable=True)
        p.grad = np.array([0.2])
        opt = ht.AdamOptimizer(lr=0.01)
        opt.step([p])
        m = 0.1 * 0.2
        v = 0.001 * 0.04
        m_hat = m / 0.1
        v_hat = v / 0.001
        expected = 0.5 - 0.01 * m_hat / (math.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(p.values, [expected], atol=1e-15)

    def test_nan_gradient_aborts_with_name(self):
        p = Tensor([0.5], name="item_embeddings", trainable=True)
        p.grad = np.array([np.nan])
        with pytest.raises(NumericError, match="item_embeddings"):
            ht.AdamOptimizer(0.01).step([p])

    def test_frozen_tensors_untouched(self):
        p = Tensor([1.0], name="frozen", trainable=False)
        p.grad = np.array([5.0])
        ht.SgdOptimizer(1.0).step([p])
        np.testing.assert_array_equal(p.values, [1.0])


def synth_world(seed=0, variant="FULL", num_groups=10):
    ds = generate_synthetic(
        SynthConfig(num_users=20, num_items=15, num_groups=num_groups,
                    avg_group_size=3.0, num_latent_topics=2,
                    overlap_strength=0.6, interactions_per_user=4.0,
                    interactions_per_group=2.0, seed=seed)
    )
    social = build_social_graph(ds)
    hyper = build_hypergraph(ds)
    cfg = hm.ModelConfig(d=8, k_ipm=1, s_ipm=2, k_hrl=1, s_hrl=2,
                         dropout=0.0, variant=variant)
    params = hm.initialize_params(cfg, ds.num_users, ds.num_items, np.random.default_rng(seed))
    return ds, social, hyper, cfg, params


class TestTrainingLoops:
    def test_determinism_bit_exact(self):
        tcfg = ht.TrainConfig(learning_rate=1e-3, batch_size=32, epochs=3, seed=11)
        results = []
        for _ in range(2):
            ds, social, hyper, cfg, params = synth_world(seed=4)
            ht.train(ds, social, hyper, params, cfg, tcfg)
            results.append({n: t.values.copy() for n, t in params.named_tensors()})
        for name in results[0]:
            assert np.array_equal(results[0][name], results[1][name]), name

    def test_group_only_leaves_user_tower_untouched(self):
        ds, social, hyper, cfg, params = synth_world(seed=5)
        before = {
            n: t.values.copy()
            for n, t in params.named_tensors()
            if n.startswith("user_mlp")
        }
        tcfg = ht.TrainConfig(learning_rate=1e-3, batch_size=64, epochs=2,
                              strategy="GROUP_ONLY", seed=0)
        ht.train(ds, social, hyper, params, cfg, tcfg)
        for n, t in params.named_tensors():
            if n.startswith("user_mlp"):
                assert np.array_equal(before[n], t.values), n

    def test_no_user_task_variant_forces_group_only(self):
        ds, social, hyper, cfg, params = synth_world(seed=6, variant="NO_USER_TASK")
        tcfg = ht.TrainConfig(learning_rate=1e-3, batch_size=64, epochs=1,
                              strategy="JOINT", seed=0)
        report = ht.train(ds, social, hyper, params, cfg, tcfg)
        assert report.strategy == "GROUP_ONLY"
        assert all(e.loss_u is None for e in report.epochs)

    def test_losses_decrease_on_toy(self):
        for strategy in ("TWO_STAGE", "JOINT", "GROUP_ONLY", "USER_ONLY"):
            ds, social, hyper, cfg, params = synth_world(seed=7)
            tcfg = ht.TrainConfig(learning_rate=5e-3, batch_size=128, epochs=12,
                                  strategy=strategy, seed=1)
            report = ht.train(ds, social, hyper, params, cfg, tcfg)
            for task in ("group", "user"):
                series = [
                    (e.loss_g if task == "group" else e.loss_u) for e in report.epochs
                ]
                series = [s for s in series if s is not None]
                if len(series) >= 2:
                    assert series[-1] < series[0], (strategy, task)

    def test_two_stage_skips_empty_user_data(self, caplog):
        ds, social, hyper, cfg, params = synth_world(seed=8)
        ds.user_item = []
        tcfg = ht.TrainConfig(learning_rate=1e-3, batch_size=64, epochs=2, seed=2)
        with caplog.at_level("WARNING"):
            report = ht.train(ds, social, hyper, params, cfg, tcfg)
        assert "skipping the first stage" in caplog.text
        assert all(e.loss_u is None for e in report.epochs)

    def test_budget_mode_runs_once(self):
        ds, social, hyper, cfg, params = synth_world(seed=9)
        tcfg = ht.TrainConfig(learning_rate=1e-3, batch_size=16, epochs=50,
                              user_budget=32, group_budget=16, seed=3)
        report = ht.train(ds, social, hyper, params, cfg, tcfg)
        assert len(report.epochs) == 2  # one budgeted pass per stage

    def test_joint_records_both_streams(self):
        ds, social, hyper, cfg, params = synth_world(seed=10)
        tcfg = ht.TrainConfig(learning_rate=1e-3, batch_size=64, epochs=2,
                              strategy="JOINT", seed=4)
        report = ht.train(ds, social, hyper, params, cfg, tcfg)
        assert all(e.loss_g is not None and e.loss_u is not None for e in report.epochs)

    def test_report_writers(self, tmp_path):
        ds, social, hyper, cfg, params = synth_world(seed=11)
        tcfg = ht.TrainConfig(learning_rate=1e-3, batch_size=64, epochs=2, seed=5)
        report = ht.train(ds, social, hyper, params, cfg, tcfg)
        report.write_json(tmp_path / "report.json")
        report.write_loss_csv(tmp_path / "loss.csv")
        lines = (tmp_path / "loss.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,loss_g,loss_u,seconds"
        assert len(lines) == 1 + len(report.epochs)

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            ht.TrainConfig(learning_rate=0.0).validate()
        with pytest.raises(ConfigError):
            ht.TrainConfig(strategy="nope").validate()
