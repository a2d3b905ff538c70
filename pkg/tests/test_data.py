"""Dataset loading, splitting and synthesis tests."""

import numpy as np
import pytest

from hypergroup import data as hd
from hypergroup.errors import ConfigError, DataError, IntegrityError, ParseError


def write_dataset_dir(tmp_path, social="", user_item="", group_members="", group_item=""):
    (tmp_path / "social.tsv").write_text(social, encoding="utf-8")
    (tmp_path / "user_item.tsv").write_text(user_item, encoding="utf-8")
    (tmp_path / "group_members.tsv").write_text(group_members, encoding="utf-8")
    (tmp_path / "group_item.tsv").write_text(group_item, encoding="utf-8")
    return tmp_path


class TestLoadDataset:
    def test_symmetrization_collapses_to_one_pair(self, tmp_path):
        write_dataset_dir(
            tmp_path,
            social="alice\tbob\n",
            user_item="alice\ti1\nbob\ti1\n",
            group_members="g0\talice\n",
            group_item="g0\ti1\n",
        )
        ds = hd.load_dataset(tmp_path)
        assert ds.num_users == 2
        assert ds.social_edges == {(0, 1)}

    def test_reverse_orientation_also_collapses(self, tmp_path):
        write_dataset_dir(
            tmp_path,
            social="a\tb\nb\ta\n",
            user_item="a\tx\n",
            group_members="g\ta\n",
            group_item="g\tx\n",
        )
        ds = hd.load_dataset(tmp_path)
        assert ds.social_edges == {(0, 1)}

    def test_unknown_member_is_integrity_error(self, tmp_path):
        write_dataset_dir(
            tmp_path,
            social="a\tb\n",
            user_item="a\ti\n",
            group_members="g0\tu_missing\n",
            group_item="g0\ti\n",
        )
        with pytest.raises(IntegrityError, match="u_missing"):
            hd.load_dataset(tmp_path)

    def test_missing_file_named(self, tmp_path):
        write_dataset_dir(tmp_path, social="a\tb\n")
        (tmp_path / "group_item.tsv").unlink()
        with pytest.raises(DataError, match="group_item.tsv"):
            hd.load_dataset(tmp_path)

    def test_malformed_line_reports_number(self, tmp_path):
        write_dataset_dir(
            tmp_path,
            social="a\tb\n",
            user_item="a\ti\nnot-a-pair\n",
            group_members="g\ta\n",
            group_item="g\ti\n",
        )
        with pytest.raises(ParseError, match="user_item.tsv:2"):
            hd.load_dataset(tmp_path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        write_dataset_dir(
            tmp_path,
            social="# comment\n\na\tb\n",
            user_item="a\ti\n",
            group_members="g\tb\n",
            group_item="g\ti\n",
        )
        ds = hd.load_dataset(tmp_path)
        assert ds.num_users == 2 and ds.num_items == 1 and ds.num_groups == 1

    def test_duplicates_are_dropped(self, tmp_path, caplog):
        write_dataset_dir(
            tmp_path,
            social="a\tb\n",
            user_item="a\ti\na\ti\n",
            group_members="g\ta\n",
            group_item="g\ti\ng\ti\n",
        )
        with caplog.at_level("WARNING"):
            ds = hd.load_dataset(tmp_path)
        assert len(ds.user_item) == 1 and len(ds.group_item) == 1
        assert "duplicate" in caplog.text

    def test_round_trip(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        write_dataset_dir(
            src,
            social="carol\tdan\ndan\terin\n",
            user_item="carol\tpizza\ndan\tsushi\nerin\tpizza\n",
            group_members="lunch\tcarol\nlunch\tdan\ndinner\tdan\ndinner\terin\n",
            group_item="lunch\tpizza\ndinner\tsushi\n",
        )
        ds = hd.load_dataset(src)
        dst = tmp_path / "dst"
        hd.save_dataset(ds, dst)
        ds2 = hd.load_dataset(dst)
        assert ds2 == ds
        assert ds2.id_maps.users == ds.id_maps.users
        assert ds2.id_maps.items == ds.id_maps.items
        assert ds2.id_maps.groups == ds.id_maps.groups

    def test_idempotent_load(self, tmp_path):
        write_dataset_dir(
            tmp_path,
            social="a\tb\n",
            user_item="a\ti\nb\tj\n",
            group_members="g\ta\ng\tb\n",
            group_item="g\ti\n",
        )
        assert hd.load_dataset(tmp_path) == hd.load_dataset(tmp_path)

    def test_group_interaction_without_members_rejected(self, tmp_path):
        write_dataset_dir(
            tmp_path,
            social="a\tb\n",
            user_item="a\ti\n",
            group_members="g\ta\n",
            group_item="g\ti\nghost\ti\n",
        )
        with pytest.raises(IntegrityError, match="no members"):
            hd.load_dataset(tmp_path)

    def test_single_member_group_warns(self, tmp_path, caplog):
        write_dataset_dir(
            tmp_path,
            social="a\tb\n",
            user_item="a\ti\n",
            group_members="g\ta\n",
            group_item="g\ti\n",
        )
        with caplog.at_level("WARNING"):
            ds = hd.load_dataset(tmp_path)
        assert ds.memberships == [[0]]
        assert "single member" in caplog.text


class TestSplit:
    def make_ds(self, n_group_pairs=100, n_user_pairs=40):
        rng = np.random.default_rng(0)
        group_item = [(int(rng.integers(10)), i % 50) for i in range(n_group_pairs)]
        group_item = list(dict.fromkeys(group_item))
        user_item = [(int(rng.integers(20)), i % 50) for i in range(n_user_pairs)]
        user_item = list(dict.fromkeys(user_item))
        return hd.InteractionDataset(
            num_users=20,
            num_items=50,
            num_groups=10,
            social_edges={(0, 1)},
            user_item=user_item,
            group_item=group_item,
            memberships=[[g % 20, (g + 1) % 20] for g in range(10)],
        )

    def test_exact_ratios_at_100(self):
        ds = self.make_ds()
        n = len(ds.group_item)
        train, val, test = hd.split_interactions(ds, hd.SplitSpec(seed=3))
        assert len(val.group_item) == int(n * 0.1 + 1e-9)
        assert len(test.group_item) == int(n * 0.1 + 1e-9)
        assert len(train.group_item) == n - len(val.group_item) - len(test.group_item)

    def test_ten_rows_split_8_1_1(self):
        ds = self.make_ds()
        ds.group_item = ds.group_item[:10]
        train, val, test = hd.split_interactions(ds, hd.SplitSpec(seed=1))
        assert (len(train.group_item), len(val.group_item), len(test.group_item)) == (8, 1, 1)

    def test_deterministic(self):
        ds = self.make_ds()
        a = hd.split_interactions(ds, hd.SplitSpec(seed=42))
        b = hd.split_interactions(ds, hd.SplitSpec(seed=42))
        for x, y in zip(a, b):
            assert x.group_item == y.group_item
            assert x.user_item == y.user_item

    def test_partition_property(self):
        ds = self.make_ds()
        train, val, test = hd.split_interactions(ds, hd.SplitSpec(seed=9))
        combined = sorted(train.group_item + val.group_item + test.group_item)
        assert combined == sorted(ds.group_item)
        assert set(train.group_item).isdisjoint(val.group_item)
        assert set(train.group_item).isdisjoint(test.group_item)
        assert set(val.group_item).isdisjoint(test.group_item)

    def test_memberships_and_social_replicated(self):
        ds = self.make_ds()
        train, val, test = hd.split_interactions(ds, hd.SplitSpec(seed=5))
        for part in (train, val, test):
            assert part.memberships == ds.memberships
            assert part.social_edges == ds.social_edges

    def test_bad_ratios_rejected(self):
        with pytest.raises(ConfigError):
            hd.SplitSpec(train_ratio=0.7, val_ratio=0.1, test_ratio=0.1).validate()
        with pytest.raises(ConfigError):
            hd.SplitSpec(train_ratio=1.0, val_ratio=0.0, test_ratio=0.0).validate()

    def test_empty_split_warns(self, caplog):
        ds = self.make_ds()
        spec = hd.SplitSpec(train_ratio=0.98, val_ratio=0.0100000001, test_ratio=0.0099999999, seed=0)
        ds.group_item = ds.group_item[:12]
        with caplog.at_level("WARNING"):
            hd.split_interactions(ds, spec)
        assert "no group-item interactions" in caplog.text


class TestSynthetic:
    def test_determinism(self):
        cfg = hd.SynthConfig(num_users=40, num_items=30, num_groups=12, seed=11)
        assert hd.generate_synthetic(cfg) == hd.generate_synthetic(cfg)

    def test_invariants_hold_across_configs(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            cfg = hd.SynthConfig(
                num_users=int(rng.integers(6, 60)),
                num_items=int(rng.integers(6, 40)),
                num_groups=int(rng.integers(2, 20)),
                avg_group_size=float(rng.uniform(1.0, 5.0)),
                num_latent_topics=int(rng.integers(1, 5)),
                overlap_strength=float(rng.uniform(0, 1)),
                seed=int(rng.integers(1_000_000)),
            )
            ds = hd.generate_synthetic(cfg)
            ds.validate()
            assert ds.num_users == cfg.num_users

    def test_infeasible_config_rejected(self):
        with pytest.raises(ConfigError):
            hd.generate_synthetic(
                hd.SynthConfig(num_users=3, num_items=5, num_groups=2, avg_group_size=10)
            )

    def test_zero_overlap_means_tiny_intersections(self):
        cfg = hd.SynthConfig(
            num_users=3000,
            num_items=60,
            num_groups=1000,
            avg_group_size=3.0,
            num_latent_topics=3,
            overlap_strength=0.0,
            seed=5,
        )
        ds = hd.generate_synthetic(cfg)
        # Monte-Carlo estimate of mean pairwise intersection size via the
        # identity  sum_pairs |A . B| = sum_u C(deg_u, 2)
        deg = np.zeros(cfg.num_users)
        for members in ds.memberships:
            for u in members:
                deg[u] += 1
        mass = float(np.sum(deg * (deg - 1) / 2))
        pairs = cfg.num_groups * (cfg.num_groups - 1) / 2
        assert mass / pairs < 0.05

    def test_high_overlap_means_larger_intersections(self):
        lo = hd.generate_synthetic(
            hd.SynthConfig(num_users=300, num_items=30, num_groups=60,
                           overlap_strength=0.0, seed=7)
        )
        hi = hd.generate_synthetic(
            hd.SynthConfig(num_users=300, num_items=30, num_groups=60,
                           overlap_strength=0.9, seed=7)
        )

        def mean_intersection(ds):
            deg = np.zeros(ds.num_users)
            for members in ds.memberships:
                for u in members:
                    deg[u] += 1
            pairs = ds.num_groups * (ds.num_groups - 1) / 2
            return float(np.sum(deg * (deg - 1) / 2)) / pairs

        assert mean_intersection(hi) > 5 * mean_intersection(lo)

    def test_loadable_after_save(self, tmp_path):
        ds = hd.generate_synthetic(hd.SynthConfig(num_users=25, num_items=18, num_groups=8, seed=3))
        hd.save_dataset(ds, tmp_path)
        ds2 = hd.load_dataset(tmp_path)
        assert ds2 == ds

    def test_single_topic_model_ranks_like_chance(self):
        # permutation-test oracle: with one latent topic every item is equally
        # preferred, so a trained model's held-out NDCG@5 must fall inside the
        # 99% interval of the rank-uniform null distribution
        from hypergroup.evaluation import evaluate
        from hypergroup.graph import build_hypergraph, build_social_graph
        from hypergroup.model import ModelConfig, initialize_params
        from hypergroup.training import TrainConfig, train

        ds = hd.generate_synthetic(hd.SynthConfig(
            num_users=40, num_items=30, num_groups=50, avg_group_size=3.0,
            num_latent_topics=1, overlap_strength=0.4,
            interactions_per_user=8.0, interactions_per_group=4.0, seed=17))
        tr, _va, te = hd.split_interactions(ds, hd.SplitSpec(seed=3))
        social, hyper = build_social_graph(tr), build_hypergraph(tr)
        cfg = ModelConfig(d=8, k_ipm=1, s_ipm=2, k_hrl=1, s_hrl=2,
                          mlp_hidden=(8,), dropout=0.0)
        params = initialize_params(cfg, ds.num_users, ds.num_items, np.random.default_rng(1))
        train(tr, social, hyper, params, cfg,
              TrainConfig(learning_rate=3e-3, batch_size=64, epochs=30, seed=2))
        report = evaluate(params, cfg, social, hyper, te, cutoffs=(5,), eval_seed=0)
        observed = report.metrics[5].ndcg

        rng = np.random.default_rng(0)
        draws = rng.integers(1, ds.num_items + 1, size=(20000, report.num_test_cases))
        null_means = np.where(draws <= 5, 1.0 / np.log2(draws + 1.0), 0.0).mean(axis=1)
        lo, hi = np.quantile(null_means, [0.005, 0.995])
        assert lo <= observed <= hi
