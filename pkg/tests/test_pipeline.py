import numpy as np
import pytest

from aegrlof import data, pipeline
from aegrlof.autoencoder import TrainConfig

from conftest import make_embedded_blob, naive_lof_scores


class TestPrune:
    def test_keeps_rows_at_or_below_mean(self):
        latents = np.arange(8.0).reshape(4, 2)
        kept, mask = pipeline.prune(latents, np.array([1.0, 2.0, 3.0, 6.0]))
        np.testing.assert_array_equal(mask, [True, True, True, False])
        np.testing.assert_array_equal(kept, latents[:3])

    def test_equal_errors_keep_everything(self):
        latents = np.ones((5, 2))
        kept, mask = pipeline.prune(latents, np.full(5, 0.7))
        assert mask.all()
        assert kept.shape == (5, 2)

    def test_two_point_case(self):
        kept, mask = pipeline.prune(np.zeros((2, 3)), np.array([0.0, 10.0]))
        np.testing.assert_array_equal(mask, [True, False])
        assert kept.shape == (1, 3)

    def test_survivor_mean_never_exceeds_overall(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            res = rng.exponential(size=rng.integers(2, 50))
            latents = rng.normal(size=(res.size, 3))
            kept, mask = pipeline.prune(latents, res)
            assert kept.shape[0] >= 1
            assert res[mask].mean() <= res.mean() + 1e-12
            if not np.all(res == res[0]):
                assert kept.shape[0] < res.size

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pipeline.prune(np.zeros((3, 2)), np.zeros(4))


class TestAugment:
    def test_factor_one_is_identity(self):
        latents = np.random.default_rng(0).normal(size=(10, 3))
        out = pipeline.augment(latents, 1.0, 0.5, seed=0)
        np.testing.assert_array_equal(out, latents)

    def test_factor_two_doubles_rows(self):
        latents = np.random.default_rng(1).normal(size=(100, 4))
        out = pipeline.augment(latents, 2.0, 0.1, seed=0)
        assert out.shape == (200, 4)
        np.testing.assert_array_equal(out[:100], latents)

    def test_zero_sigma_duplicates_in_order(self):
        latents = np.arange(12.0).reshape(4, 3)
        out = pipeline.augment(latents, 2.5, 0.0, seed=0)
        assert out.shape == (10, 3)
        np.testing.assert_array_equal(out[4:8], latents)
        np.testing.assert_array_equal(out[8:], latents[:2])

    def test_deterministic_per_seed(self):
        latents = np.random.default_rng(2).normal(size=(20, 2))
        a = pipeline.augment(latents, 3.0, 0.2, seed=5)
        b = pipeline.augment(latents, 3.0, 0.2, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_bad_factor(self):
        with pytest.raises(ValueError, match="factor"):
            pipeline.augment(np.zeros((3, 2)), 0.5, 0.1, seed=0)


class TestVariantSpec:
    def test_modifier_restricted_to_latent_lof_detectors(self):
        pipeline.VariantSpec("ae_lof", "prune")
        pipeline.VariantSpec("aegr_lof", "prune_da")
        with pytest.raises(ValueError, match="modifier"):
            pipeline.VariantSpec("lof_raw", "prune")
        with pytest.raises(ValueError, match="modifier"):
            pipeline.VariantSpec("ae_re", "prune_da")

    def test_unknown_names(self):
        with pytest.raises(ValueError, match="detector"):
            pipeline.VariantSpec("isolation_forest")
        with pytest.raises(ValueError, match="modifier"):
            pipeline.VariantSpec("ae_lof", "trim")

    def test_key(self):
        assert pipeline.VariantSpec("aegr_lof", "prune").key == "aegr_lof/prune"


def _prepared_splits(seed=0, **blob_kwargs):
    ds = make_embedded_blob(seed, **blob_kwargs)
    train, val, test = data.split(ds, data.SplitSpec(seed=seed))
    norm = data.normalize_fit(train)
    return tuple(data.normalize_apply(norm, s) for s in (train, val, test))


_FAST_CFG = TrainConfig(max_epochs=12, batch_size=16, learning_rate=0.05,
                        gr_start_epoch=4, patience=6, seed=0)


class TestRunVariant:
    def test_disabled_reversal_reduces_to_plain_ae_lof(self):
        train, val, test = _prepared_splits(seed=1, n_normal=240, n_anom=12)
        cfg = TrainConfig(max_epochs=8, batch_size=16, learning_rate=0.05,
                          gr_start_epoch=8, patience=4, seed=0)
        run_plain = pipeline.run_variant(
            pipeline.VariantSpec("ae_lof", seed=3), train, val, test, cfg)
        run_gr_off = pipeline.run_variant(
            pipeline.VariantSpec("aegr_lof", seed=3), train, val, test, cfg)
        np.testing.assert_array_equal(run_plain.scores, run_gr_off.scores)

    def test_ae_re_scores_training_copy_below_outlier(self):
        train, val, test = _prepared_splits(seed=2, n_normal=240, n_anom=12)
        copied = train.features[0]
        far = np.full(train.n_features, 25.0)
        probe = data.Dataset(np.vstack([copied, far]), train.feature_names,
                             np.array([0, 1]))
        run = pipeline.run_variant(
            pipeline.VariantSpec("ae_re", seed=0), train, val, probe, _FAST_CFG)
        assert run.scores[0] < run.scores[1]

    def test_lof_raw_ranks_far_outliers_on_top(self):
        rng = np.random.default_rng(8)
        blob = rng.normal(size=(120, 2))
        outliers = rng.normal(size=(10, 2)) * 0.5 + 40.0
        train = data.Dataset(blob, ["x", "y"])
        test_feats = np.vstack([rng.normal(size=(40, 2)), outliers])
        test = data.Dataset(test_feats, ["x", "y"],
                            np.r_[np.zeros(40, int), np.ones(10, int)])
        run = pipeline.run_variant(
            pipeline.VariantSpec("lof_raw", seed=0), train, train, test,
            _FAST_CFG, min_pts=10)
        top10 = np.argsort(run.scores)[-10:]
        assert set(top10) == set(range(40, 50))
        oracle = naive_lof_scores(blob, 10, test_feats)
        np.testing.assert_allclose(run.scores, oracle, atol=1e-9)

    def test_deterministic_scored_runs(self):
        train, val, test = _prepared_splits(seed=3, n_normal=200, n_anom=10)
        spec = pipeline.VariantSpec("aegr_lof", "prune_da", seed=7)
        a = pipeline.run_variant(spec, train, val, test, _FAST_CFG)
        b = pipeline.run_variant(spec, train, val, test, _FAST_CFG)
        np.testing.assert_array_equal(a.scores, b.scores)
        assert a.metadata == b.metadata

    def test_prune_metadata_and_masks(self):
        train, val, test = _prepared_splits(seed=4, n_normal=200, n_anom=10)
        run = pipeline.run_variant(
            pipeline.VariantSpec("aegr_lof", "prune", seed=1),
            train, val, test, _FAST_CFG)
        assert run.metadata["rows_after_prune"] < train.n_rows
        assert run.pruned_mask.sum() == train.n_rows - run.metadata["rows_after_prune"]
        assert run.train_latents.shape == (train.n_rows,
                                           run.metadata["latent_dim"])

    def test_augment_grows_reference(self):
        train, val, test = _prepared_splits(seed=5, n_normal=200, n_anom=10)
        spec = pipeline.VariantSpec("aegr_lof", "prune_da",
                                    aug_factor=3.0, seed=1)
        run = pipeline.run_variant(spec, train, val, test, _FAST_CFG)
        assert run.metadata["rows_after_augment"] == 3 * run.metadata[
            "rows_after_prune"]

    def test_labels_carried_to_scores(self):
        train, val, test = _prepared_splits(seed=6, n_normal=200, n_anom=10)
        run = pipeline.run_variant(
            pipeline.VariantSpec("ae_re", seed=0), train, val, test, _FAST_CFG)
        np.testing.assert_array_equal(run.labels, test.labels)
        assert len(run.scores) == test.n_rows
