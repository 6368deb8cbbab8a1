import json

import numpy as np
import pytest

from tailprompt.data_model import (
    Batch,
    ClassStats,
    MultiLabelDataset,
    Sample,
    class_counts,
    dataset_from_dict,
    dataset_to_dict,
    group_classes,
    load_dataset,
    save_dataset,
    signed_labels,
)
from tailprompt.errors import ConfigError
from tailprompt.seeding import unit_rows


def _tiny_dataset(n=6, c=3, d=8, seed=0):
    rng = np.random.default_rng(seed)
    images = unit_rows(rng, n, d)
    captions = unit_rows(rng, n, d)
    labels = np.zeros((n, c), dtype=np.int64)
    for k in range(n):
        labels[k, k % c] = 1
    labels[0, 1] = 1  # one multi-label sample
    names = [f"class_{i:02d}" for i in range(c)]
    return MultiLabelDataset(images, labels, captions, tuple(names))


class TestSample:
    def test_valid_sample(self):
        rng = np.random.default_rng(1)
        s = Sample(unit_rows(rng, 1, 5)[0], np.array([1, 0]), unit_rows(rng, 1, 5)[0])
        assert s.labels.tolist() == [1, 0]

    def test_rejects_non_unit_image(self):
        with pytest.raises(ConfigError):
            Sample(np.array([1.0, 1.0]), np.array([1]), np.array([1.0, 0.0]))

    def test_rejects_no_positive(self):
        with pytest.raises(ConfigError):
            Sample(np.array([1.0, 0.0]), np.array([0, 0]), np.array([0.0, 1.0]))

    def test_rejects_nonbinary_labels(self):
        with pytest.raises(ConfigError):
            Sample(np.array([1.0, 0.0]), np.array([2, 0]), np.array([0.0, 1.0]))

    def test_arrays_read_only(self):
        rng = np.random.default_rng(2)
        s = Sample(unit_rows(rng, 1, 4)[0], np.array([0, 1]), unit_rows(rng, 1, 4)[0])
        with pytest.raises(ValueError):
            s.image_embedding[0] = 0.0


class TestSignedLabels:
    def test_mapping(self):
        y = np.array([[0, 1], [1, 0]])
        assert signed_labels(y).tolist() == [[-1, 1], [1, -1]]

    def test_involution_on_binary(self):
        y = np.array([[1, 0, 1]])
        assert ((signed_labels(y) + 1) // 2 == y).all()


class TestDataset:
    def test_roundtrip_counts(self):
        ds = _tiny_dataset()
        counts = class_counts(ds)
        assert counts.tolist() == ds.labels.sum(axis=0).tolist()

    def test_every_class_needs_a_positive(self):
        ds = _tiny_dataset()
        labels = ds.labels.copy()
        labels[:, 2] = 0
        with pytest.raises(ConfigError):
            MultiLabelDataset(ds.images, labels, ds.captions, ds.class_names)

    def test_every_sample_needs_a_positive(self):
        ds = _tiny_dataset()
        labels = ds.labels.copy()
        labels[0, :] = 0
        with pytest.raises(ConfigError):
            MultiLabelDataset(ds.images, labels, ds.captions, ds.class_names)

    def test_shape_mismatch_rejected(self):
        ds = _tiny_dataset()
        with pytest.raises(ConfigError):
            MultiLabelDataset(ds.images, ds.labels[:, :2], ds.captions, ds.class_names)

    def test_batch_selection(self):
        ds = _tiny_dataset()
        batch = ds.batch([0, 2])
        assert batch.num_samples == 2
        assert np.array_equal(batch.images, ds.images[[0, 2]])

    def test_full_batch_covers_everything(self):
        ds = _tiny_dataset()
        full = ds.full_batch()
        assert full.num_samples == ds.num_samples
        assert np.array_equal(full.labels, ds.labels)

    def test_from_samples_roundtrip(self):
        ds = _tiny_dataset()
        rebuilt = MultiLabelDataset.from_samples(ds.samples, ds.class_names)
        assert np.array_equal(rebuilt.images, ds.images)
        assert np.array_equal(rebuilt.labels, ds.labels)


class TestGroups:
    def test_boundaries_are_medium(self):
        # the threshold values themselves belong to the middle group
        assert group_classes([100, 20], head_min=100, tail_max=20) == ("medium", "medium")

    def test_head_and_tail(self):
        assert group_classes([101, 50, 19], head_min=100, tail_max=20) == (
            "head",
            "medium",
            "tail",
        )

    def test_invalid_thresholds(self):
        with pytest.raises(ConfigError):
            group_classes([5], head_min=10, tail_max=20)

    def test_zero_count_rejected(self):
        with pytest.raises(ConfigError):
            group_classes([0, 5])

    def test_stats_from_dataset(self):
        ds = _tiny_dataset()
        stats = ClassStats.from_dataset(ds, head_min=3, tail_max=2)
        assert stats.num_samples == ds.num_samples
        assert stats.counts.tolist() == class_counts(ds).tolist()
        assert len(stats.group) == ds.num_classes


class TestSerialization:
    def test_dict_roundtrip(self):
        ds = _tiny_dataset()
        back = dataset_from_dict(dataset_to_dict(ds))
        assert np.array_equal(back.images, ds.images)
        assert np.array_equal(back.labels, ds.labels)
        assert np.array_equal(back.captions, ds.captions)
        assert back.class_names == ds.class_names

    def test_file_roundtrip_byte_identical(self, tmp_path):
        ds = _tiny_dataset()
        p1 = tmp_path / "a.json"
        p2 = tmp_path / "b.json"
        save_dataset(ds, p1)
        save_dataset(load_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_header_rejected(self, tmp_path):
        ds = _tiny_dataset()
        doc = dataset_to_dict(ds)
        doc["num_classes"] = 99
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError):
            load_dataset(path)
