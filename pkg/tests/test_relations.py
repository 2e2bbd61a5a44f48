import numpy as np
import pytest

from metaretrain.data import ImageSample
from metaretrain.errors import ValidationError
from metaretrain.relations import (
    IDENTITY,
    LABEL_PRESERVING,
    NON_LABEL_PRESERVING,
    apply,
    catalog_by_id,
    catalog_default,
    compose,
    label_map_array,
    mnist_rot180_labelmap,
)


def sample(label=2, seed=0, size=28):
    rng = np.random.default_rng(seed)
    return ImageSample(rng.integers(0, 256, size=(1, size, size), dtype=np.uint8), label, seed)


class TestLabelMap:
    def test_paper_stated_swaps(self):
        assert mnist_rot180_labelmap(2) == 5
        assert mnist_rot180_labelmap(6) == 9

    def test_other_digits_fixed(self):
        for d in (0, 1, 3, 4, 7, 8):
            assert mnist_rot180_labelmap(d) == d

    def test_involution_on_all_digits(self):
        for d in range(10):
            assert mnist_rot180_labelmap(mnist_rot180_labelmap(d)) == d

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            mnist_rot180_labelmap(10)
        with pytest.raises(ValidationError):
            mnist_rot180_labelmap(-1)


class TestApply:
    def test_hflip_preserves_label(self):
        mrs = catalog_by_id("cifar10")
        rng = np.random.default_rng(1)
        s = ImageSample(rng.integers(0, 256, size=(3, 32, 32), dtype=np.uint8), 4, 1)
        image, label = apply(mrs["hflip"], s)
        assert label == 4
        assert np.array_equal(image, s.pixels[:, :, ::-1])

    def test_mnist_rot180_maps_2_to_5(self):
        mrs = catalog_by_id("mnist")
        _, label = apply(mrs["rot180"], sample(label=2))
        assert label == 5

    def test_mnist_rot180_maps_6_to_9(self):
        mrs = catalog_by_id("mnist")
        _, label = apply(mrs["rot180"], sample(label=6))
        assert label == 9

    def test_noise_is_seeded_per_sample(self):
        mrs = catalog_by_id("mnist")
        s1, s2 = sample(seed=1), sample(seed=2)
        a1, _ = apply(mrs["noise8"], s1, seed=7)
        a1_again, _ = apply(mrs["noise8"], s1, seed=7)
        b, _ = apply(mrs["noise8"], s2, seed=7)
        assert np.array_equal(a1, a1_again)
        assert not np.array_equal(a1, b)


class TestCompose:
    def test_double_rot180_is_identity_on_labels(self):
        mrs = catalog_by_id("mnist")
        double = compose([mrs["rot180"], mrs["rot180"]])
        for d in range(10):
            assert double.label_map(d) == d
        assert double.kind == NON_LABEL_PRESERVING  # components are non-preserving

    def test_double_flip_is_pixel_identity(self):
        mrs = catalog_by_id("cifar10")
        double = compose([mrs["hflip"], mrs["hflip"]])
        s = sample(size=32)
        img = ImageSample(np.repeat(s.pixels, 3, axis=0), s.label, s.source_id)
        out, _ = apply(double, img)
        assert np.array_equal(out, img.pixels)

    def test_rot90_twice_equals_rot180_pixels(self):
        mrs = catalog_by_id("mnist")
        twice = compose([mrs["rot90"], mrs["rot90"]])
        s = sample(seed=3)
        out_twice, _ = apply(twice, s)
        out_180, _ = apply(mrs["rot180"], s)
        assert np.array_equal(out_twice, out_180)

    def test_empty_list_rejected(self):
        with pytest.raises(ValidationError):
            compose([])

    def test_composite_id_and_flattening(self):
        mrs = catalog_by_id("mnist")
        c = compose([mrs["rot90"], compose([mrs["rot180"], mrs["noise8"]])])
        assert c.id == "rot90+rot180+noise8"
        assert len(c.components) == 3

    def test_label_map_composition_is_associative(self):
        mrs = catalog_by_id("mnist")
        a, b, c = mrs["rot180"], mrs["rot90"], mrs["rot180"]
        left = compose([compose([a, b]), c])
        right = compose([a, compose([b, c])])
        for digit in range(10):
            assert left.label_map(digit) == right.label_map(digit)


class TestCatalog:
    def test_mnist_rot180_is_non_label_preserving(self):
        mrs = catalog_by_id("mnist")
        assert mrs["rot180"].kind == NON_LABEL_PRESERVING

    def test_cifar_rot180_is_label_preserving(self):
        mrs = catalog_by_id("cifar10")
        assert mrs["rot180"].kind == LABEL_PRESERVING
        assert all(mrs["rot180"].label_map(c) == c for c in range(10))

    def test_mnist_catalog_excludes_hflip(self):
        assert "hflip" not in catalog_by_id("mnist")
        assert "hflip" in catalog_by_id("cifar100")

    def test_minimum_catalog_contents(self):
        ids = set(catalog_by_id("mnist"))
        required = {"rot15", "rot90", "rot180", "brightness_up", "brightness_down",
                    "contrast_up", "contrast_down", "noise8", "translate_p3", "translate_m3"}
        assert required <= ids

    @pytest.mark.parametrize("dataset,channels", [("mnist", 1), ("cifar10", 3)])
    def test_every_entry_keeps_shape_and_range(self, dataset, channels):
        size = 28 if dataset == "mnist" else 32
        rng = np.random.default_rng(11)
        s = ImageSample(rng.integers(0, 256, size=(channels, size, size), dtype=np.uint8), 3, 11)
        for mr in catalog_default(dataset):
            image, label = apply(mr, s, seed=5)
            assert image.shape == s.pixels.shape, mr.id
            assert image.dtype == np.uint8, mr.id
            assert 0 <= label < (10 if dataset != "cifar100" else 100), mr.id

    def test_kind_iff_identity_label_map(self):
        for dataset in ("mnist", "cifar10"):
            for mr in catalog_default(dataset):
                identity = all(mr.label_map(c) == c for c in range(10))
                assert identity == (mr.kind == LABEL_PRESERVING), mr.id

    def test_label_preserving_maps_are_identity(self):
        for mr in catalog_default("mnist"):
            if mr.kind == LABEL_PRESERVING:
                table = label_map_array(mr, 10)
                assert np.array_equal(table, np.arange(10))

    def test_identity_relation(self):
        s = sample()
        image, label = apply(IDENTITY, s)
        assert np.array_equal(image, s.pixels) and label == s.label

    def test_unknown_dataset_rejected(self):
        with pytest.raises(ValidationError):
            catalog_default("svhn")

    def test_rot15_shape_only_contract(self):
        # interpolated rotation: shape/range guaranteed, invertibility is not
        mrs = catalog_by_id("mnist")
        s = sample(seed=13)
        out, _ = apply(mrs["rot15"], s)
        assert out.shape == s.pixels.shape
        assert out.dtype == np.uint8
