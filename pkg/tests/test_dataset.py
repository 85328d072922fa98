"""Dataset container: disk round trip, height-restricted views, validation."""

import numpy as np
import pytest

from conftest import tiny_synth_config
from samhead.dataset import Dataset, ImageSample
from samhead.errors import DataError
from samhead.maps import FeatureMap, ImageRecord
from samhead.synth import generate_dataset


@pytest.fixture(scope="module")
def disk_set():
    return generate_dataset(tiny_synth_config(num_images=3), seed=14)


class TestRoundTrip:
    def test_save_load_is_exact(self, disk_set, tmp_path):
        root = tmp_path / "ds"
        disk_set.save(root)
        loaded = Dataset.load(root)
        assert loaded.image_ids == disk_set.image_ids
        assert loaded.meta["image_w"] == disk_set.samples[0].record.image_w
        for a, b in zip(disk_set.samples, loaded.samples):
            assert a.ground_truth == b.ground_truth
            assert a.proposals == b.proposals
            assert set(a.record.feature_maps) == set(b.record.feature_maps)
            for name, fm in a.record.feature_maps.items():
                other = b.record.feature_maps[name]
                assert fm.stride == other.stride
                np.testing.assert_array_equal(fm.data, other.data)
            np.testing.assert_array_equal(a.record.label_map.data,
                                          b.record.label_map.data)
            np.testing.assert_array_equal(a.record.edge_map.data,
                                          b.record.edge_map.data)

    def test_saving_twice_produces_identical_files(self, disk_set, tmp_path):
        one, two = tmp_path / "a", tmp_path / "b"
        disk_set.save(one)
        disk_set.save(two)
        for rel in sorted(p.relative_to(one) for p in one.rglob("*") if p.is_file()):
            assert (one / rel).read_bytes() == (two / rel).read_bytes()

    def test_load_requires_meta(self, tmp_path):
        with pytest.raises(DataError):
            Dataset.load(tmp_path)


class TestSubsetByHeight:
    def test_out_of_range_becomes_ignore(self, disk_set):
        cut = disk_set.subset_by_height(80.0, None)
        for orig, view in zip(disk_set.samples, cut.samples):
            assert view.proposals == orig.proposals
            for g_orig, g_view in zip(orig.ground_truth, view.ground_truth):
                if g_orig.box.h >= 80.0:
                    assert g_view == g_orig
                else:
                    assert g_view.ignore
                    assert g_view.box == g_orig.box
        # The source dataset is untouched.
        assert all(not g.ignore for s in disk_set.samples for g in s.ground_truth)

    def test_bounded_interval(self, disk_set):
        cut = disk_set.subset_by_height(50.0, 80.0)
        for s in cut.samples:
            for g in s.ground_truth:
                expected = 50.0 <= g.box.h < 80.0
                assert g.ignore == (not expected)


class TestLayerChannels:
    def test_uniform_counts_reported(self, disk_set):
        assert disk_set.layer_channels() == {"conv3": 64, "conv4a": 64, "conv5a": 64}

    def test_inconsistent_counts_rejected(self):
        def record(image_id, channels):
            fm = FeatureMap("conv3", 4, np.zeros((channels, 4, 4), dtype=np.float32))
            return ImageRecord(image_id=image_id, image_w=16, image_h=16,
                               feature_maps={"conv3": fm})

        ds = Dataset(samples=[
            ImageSample(record=record("a", 8)),
            ImageSample(record=record("b", 9)),
        ])
        with pytest.raises(DataError):
            ds.layer_channels()


class TestImageRecordValidation:
    def test_map_must_cover_image(self):
        fm = FeatureMap("conv3", 4, np.zeros((2, 3, 3), dtype=np.float32))
        with pytest.raises(DataError):
            ImageRecord(image_id="a", image_w=64, image_h=64,
                        feature_maps={"conv3": fm})

    def test_key_must_match_layer_name(self):
        fm = FeatureMap("conv3", 4, np.zeros((2, 4, 4), dtype=np.float32))
        with pytest.raises(DataError):
            ImageRecord(image_id="a", image_w=16, image_h=16,
                        feature_maps={"conv4a": fm})

    def test_missing_layer_lookup(self):
        fm = FeatureMap("conv3", 4, np.zeros((2, 4, 4), dtype=np.float32))
        rec = ImageRecord(image_id="a", image_w=16, image_h=16,
                          feature_maps={"conv3": fm})
        assert rec.layer("conv3") is fm
        with pytest.raises(DataError):
            rec.layer("conv9")
