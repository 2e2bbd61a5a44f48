import numpy as np
import pytest

from metaretrain.data import subsample_and_split, to_model_input
from metaretrain.errors import ValidationError
from metaretrain.policy import (
    AugmentationPolicy,
    CycleDatasetSpec,
    adaptive_policy,
    base_policy,
    base_pools,
    build_cycle_stream,
    static_policy,
)
from metaretrain.relations import IDENTITY, catalog_by_id, catalog_default
from metaretrain.synthdigits import make_digits


def mnist_split(n=60, seed=0, ratios=(0.2, 0.6, 0.2)):
    return subsample_and_split(make_digits(n, seed=seed), 1.0, ratios, seed=seed)


def identity_policy(seed=0):
    return AugmentationPolicy(mode="base", weak_pool=(IDENTITY,), strong_pool=(IDENTITY,), seed=seed)


class TestAdaptivePolicy:
    def test_failed_set_becomes_strong_pool(self):
        mrs = catalog_by_id("mnist")
        weak, strong = base_pools(catalog_default("mnist"))
        pol = adaptive_policy([mrs["rot90"]], [], weak, strong)
        assert [m.id for m in pol.strong_pool] == ["rot90"]
        assert not pol.fallback_used

    def test_empty_failed_falls_back_and_flags(self):
        weak, strong = base_pools(catalog_default("mnist"))
        pol = adaptive_policy([], [], weak, strong)
        assert pol.fallback_used
        assert [m.id for m in pol.strong_pool] == [m.id for m in strong]

    def test_duplicates_deduplicated(self):
        mrs = catalog_by_id("mnist")
        weak, strong = base_pools(catalog_default("mnist"))
        pol = adaptive_policy([mrs["rot90"], mrs["rot90"]], [], weak, strong)
        assert len(pol.strong_pool) == 1


class TestStaticPolicy:
    def test_pair_enumeration(self):
        mrs = catalog_by_id("mnist")
        pol = static_policy([mrs["rot90"], mrs["rot180"]])
        assert {m.id for m in pol.strong_pool} == {"rot90+rot180", "rot180+rot90"}

    def test_uniform_ratios(self):
        catalog = catalog_default("mnist")[:4]
        pol = static_policy(catalog)
        assert all(abs(w - 0.25) < 1e-12 for w in pol.ratios.values())

    def test_seeded_draw_frequencies(self):
        mrs = catalog_by_id("mnist")
        pol = static_policy([mrs["rot90"], mrs["rot180"]], ratios=[0.5, 0.5], seed=3)
        rng = np.random.default_rng(42)
        draws = [pol.draw_weak(rng).id for _ in range(1000)]
        freq = draws.count("rot90") / 1000
        assert abs(freq - 0.5) <= 0.05

    def test_small_catalog_rejected(self):
        with pytest.raises(ValidationError):
            static_policy([IDENTITY])

    def test_bad_ratios_rejected(self):
        mrs = catalog_default("mnist")[:2]
        with pytest.raises(ValidationError, match="sum to 1"):
            static_policy(mrs, ratios=[0.6, 0.6])


class TestPolicyBasics:
    def test_empty_pool_rejected(self):
        with pytest.raises(ValidationError):
            AugmentationPolicy(mode="base", weak_pool=(), strong_pool=(IDENTITY,), seed=0)

    def test_log_dict_fields(self):
        pol = base_policy(catalog_default("mnist"), seed=5)
        d = pol.to_log_dict()
        assert d["mode"] == "base" and d["seed"] == 5
        assert "rot15" in d["weak_pool"]
        assert any("+" in s for s in d["strong_pool"])  # includes compositions

    def test_base_strong_pool_is_label_preserving(self):
        _, strong = base_pools(catalog_default("mnist"))
        assert all(m.kind == "label_preserving" for m in strong)


class TestCycleStream:
    def test_identity_policy_reproduces_raw_batches(self):
        split = mnist_split(30, ratios=(1.0, 0.0, 0.0))
        spec = CycleDatasetSpec(split=split, policy=identity_policy(), batch_size=30,
                                epochs=1, num_classes=10)
        stream = build_cycle_stream(spec)
        assert len(stream) == 1
        batch = stream.batches[0]
        by_source = {s.source_id: s for s in split.labeled}
        for x, y, sid in zip(batch.x_labeled, batch.y_labeled, batch.labeled_source_ids):
            assert np.array_equal(x, to_model_input(by_source[sid].pixels))
            assert y == by_source[sid].label

    def test_labeled_six_under_rot180_emits_nine(self):
        split = mnist_split(40, ratios=(1.0, 0.0, 0.0))
        mrs = catalog_by_id("mnist")
        pol = AugmentationPolicy(mode="adaptive", weak_pool=(mrs["rot180"],),
                                 strong_pool=(mrs["rot180"],), seed=1)
        spec = CycleDatasetSpec(split=split, policy=pol, batch_size=40, epochs=1, num_classes=10)
        stream = build_cycle_stream(spec)
        by_source = {s.source_id: s.label for s in split.labeled}
        sixes = [(y, sid) for b in stream for y, sid in zip(b.y_labeled, b.labeled_source_ids)
                 if by_source[sid] == 6]
        assert sixes, "fixture must contain sixes"
        assert all(y == 9 for y, _ in sixes)

    def test_emitted_labels_match_label_map(self):
        split = mnist_split(50, ratios=(0.4, 0.4, 0.2))
        pol = base_policy(catalog_default("mnist"), seed=2)
        spec = CycleDatasetSpec(split=split, policy=pol, batch_size=8, epochs=2, num_classes=10)
        stream = build_cycle_stream(spec)
        mrs = {m.id: m for m in list(pol.weak_pool) + list(pol.strong_pool)}
        by_source = {s.source_id: s.label for s in split.labeled}
        checked = 0
        for batch in stream:
            for y, mr_id, sid in zip(batch.y_labeled, batch.labeled_mr_ids, batch.labeled_source_ids):
                assert y == mrs[mr_id].label_map(by_source[sid])
                checked += 1
        assert checked > 0

    def test_same_seed_identical_batches(self):
        split = mnist_split(50)
        pol = base_policy(catalog_default("mnist"), seed=7)
        spec = CycleDatasetSpec(split=split, policy=pol, batch_size=8, epochs=2, num_classes=10)
        a, b = build_cycle_stream(spec), build_cycle_stream(spec)
        assert len(a) == len(b)
        for ba, bb in zip(a, b):
            assert np.array_equal(ba.x_labeled, bb.x_labeled)
            assert np.array_equal(ba.y_labeled, bb.y_labeled)
            assert np.array_equal(ba.x_unlabeled_weak, bb.x_unlabeled_weak)
            assert np.array_equal(ba.x_unlabeled_strong, bb.x_unlabeled_strong)
            assert ba.strong_mr_ids == bb.strong_mr_ids

    def test_steps_per_epoch_covers_larger_subset(self):
        split = mnist_split(60, ratios=(0.1, 0.7, 0.2))  # 6 labeled, 42 unlabeled
        pol = base_policy(catalog_default("mnist"), seed=3)
        spec = CycleDatasetSpec(split=split, policy=pol, batch_size=8, epochs=1, num_classes=10)
        stream = build_cycle_stream(spec)
        assert stream.steps_per_epoch == int(np.ceil(42 / 8))
        seen = set()
        for batch in stream:
            seen.update(batch.unlabeled_source_ids)
        assert seen == {s.source_id for s in split.unlabeled}

    def test_unlabeled_views_are_paired_per_sample(self):
        split = mnist_split(40, ratios=(0.25, 0.5, 0.25))
        pol = base_policy(catalog_default("mnist"), seed=4)
        spec = CycleDatasetSpec(split=split, policy=pol, batch_size=8, epochs=1,
                                num_classes=10, n_weak_views=2)
        stream = build_cycle_stream(spec)
        for batch in stream:
            assert batch.x_unlabeled_weak.shape[0] == 2
            assert batch.x_unlabeled_weak.shape[1] == batch.n_unlabeled
            assert batch.strong_label_maps.shape == (batch.n_unlabeled, 10)

    def test_frozen_realizations_repeat_epoch_zero(self):
        split = mnist_split(30)
        pol = base_policy(catalog_default("mnist"), seed=5)
        spec = CycleDatasetSpec(split=split, policy=pol, batch_size=8, epochs=2,
                                num_classes=10, frozen_realizations=True)
        stream = build_cycle_stream(spec)
        per_epoch = stream.steps_per_epoch
        for i in range(per_epoch):
            a, b = stream.batches[i], stream.batches[i + per_epoch]
            assert np.array_equal(a.x_labeled, b.x_labeled)
            assert np.array_equal(a.x_unlabeled_strong, b.x_unlabeled_strong)

    def test_fresh_draws_differ_between_epochs(self):
        split = mnist_split(30)
        pol = base_policy(catalog_default("mnist"), seed=5)
        spec = CycleDatasetSpec(split=split, policy=pol, batch_size=8, epochs=2, num_classes=10)
        stream = build_cycle_stream(spec)
        per_epoch = stream.steps_per_epoch
        same = all(
            np.array_equal(stream.batches[i].x_unlabeled_strong, stream.batches[i + per_epoch].x_unlabeled_strong)
            for i in range(per_epoch)
        )
        assert not same

    def test_weak_views_for_pseudo_labels_are_label_preserving(self):
        mrs = catalog_by_id("mnist")
        pol = AugmentationPolicy(mode="static", weak_pool=(mrs["rot180"],),
                                 strong_pool=(mrs["rot90"],), seed=6)
        split = mnist_split(30, ratios=(0.0, 0.8, 0.2))
        spec = CycleDatasetSpec(split=split, policy=pol, batch_size=8, epochs=1, num_classes=10)
        stream = build_cycle_stream(spec)
        # weak pool has no label-preserving member; pseudo-label views fall back
        # to identity, i.e. the raw unlabeled images
        by_source = {s.source_id: s for s in split.unlabeled}
        for batch in stream:
            for v, sid in zip(batch.x_unlabeled_weak[0], batch.unlabeled_source_ids):
                assert np.array_equal(v, to_model_input(by_source[sid].pixels))

    def test_degenerate_spec_rejected(self):
        split = mnist_split(20)
        with pytest.raises(ValidationError):
            CycleDatasetSpec(split=split, policy=identity_policy(), batch_size=0, epochs=1, num_classes=10)
        empty = subsample_and_split(make_digits(20, seed=0), 1.0, (0.0, 0.0, 1.0), seed=0)
        with pytest.raises(ValidationError):
            CycleDatasetSpec(split=empty, policy=identity_policy(), batch_size=4, epochs=1, num_classes=10)
