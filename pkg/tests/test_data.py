import json

import numpy as np
import pytest

from mlcl.data import (Dataset, DatasetError, GeneratorConfig, batch_iterator, generate_longtail_dataset,
                       load_dataset, load_splits, save_dataset)


@pytest.fixture(scope="module")
def default_splits():
    return generate_longtail_dataset(GeneratorConfig())


def test_zipf_zero_is_uniform():
    cfg = GeneratorConfig(n_train=4000, n_val=0, n_test=0, num_labels=10, zipf_exponent=0.0,
                          mean_labels=1.0, seed=3)
    freq = generate_longtail_dataset(cfg)["train"].label_frequencies
    n, p = 4000, 0.1
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(freq - n * p) <= 3 * sigma)


def test_head_dominates_tail():
    cfg = GeneratorConfig(n_train=2000, n_val=0, n_test=0, mean_labels=1.0)
    freq = generate_longtail_dataset(cfg)["train"].label_frequencies
    expected_ratio = 20 ** 1.2
    assert expected_ratio > 30
    assert freq[0] > 10 * max(freq[-1], 1)


def test_mean_labels_target(default_splits):
    total = sum(ds.labels.sum() for ds in default_splits.values())
    n = sum(len(ds) for ds in default_splits.values())
    assert 2.1 <= total / n <= 2.7


def test_split_sizes_and_invariants(default_splits):
    assert [len(default_splits[k]) for k in ("train", "val", "test")] == [2000, 500, 500]
    for name, ds in default_splits.items():
        assert ds.split == name
        assert np.all(ds.labels.sum(axis=1) >= 1)
        np.testing.assert_array_equal(ds.label_frequencies, ds.labels.sum(axis=0))
        assert ds.num_features == 64 and ds.num_labels == 20


def test_generation_reproducible(default_splits):
    again = generate_longtail_dataset(GeneratorConfig())
    for k in default_splits:
        assert again[k].features.tobytes() == default_splits[k].features.tobytes()
        assert again[k].labels.tobytes() == default_splits[k].labels.tobytes()
    other = generate_longtail_dataset(GeneratorConfig(seed=1))
    assert not np.array_equal(other["train"].features, default_splits["train"].features)


def test_infeasible_config():
    with pytest.raises(ValueError, match="exceeds num_labels"):
        GeneratorConfig(num_labels=3, mean_labels=4.0)
    with pytest.raises(ValueError):
        GeneratorConfig(num_labels=1)


def test_round_trip_bitwise(tmp_path, default_splits):
    path = tmp_path / "ds.jsonl"
    save_dataset(default_splits, path)
    back = load_splits(path, 20)
    for k in default_splits:
        assert back[k].features.tobytes() == default_splits[k].features.tobytes()
        assert back[k].labels.tobytes() == default_splits[k].labels.tobytes()
    single = tmp_path / "one.jsonl"
    save_dataset(default_splits["val"], single)
    assert load_dataset(single, 20).labels.tobytes() == default_splits["val"].labels.tobytes()


def write_lines(path, records):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in records))
    return path


@pytest.mark.parametrize("bad, message", [
    ({"features": [1.0, 2.0], "labels": []}, "empty label set"),
    ({"features": [1.0, 2.0], "labels": [5]}, "out of range"),
    ({"features": [1.0], "labels": [0]}, "feature width"),
    ({"features": [1.0, 2.0], "labels": [1, 0]}, "strictly increasing"),
    ({"features": [1.0, "x"], "labels": [0]}, "array of numbers"),
    ({"features": [1.0, 2.0]}, "malformed"),
    ("{not json", "malformed"),
])
def test_malformed_records_name_the_line(tmp_path, bad, message):
    path = write_lines(tmp_path / "bad.jsonl", [{"features": [0.0, 1.0], "labels": [0]}, bad])
    with pytest.raises(DatasetError, match=message) as err:
        load_dataset(path, 3)
    assert ":2:" in str(err.value)


def test_split_field_optional(tmp_path):
    path = write_lines(tmp_path / "plain.jsonl", [{"features": [0.0, 1.0], "labels": [0, 2]}])
    ds = load_dataset(path)
    assert ds.split == "train" and ds.num_labels == 3
    with pytest.raises(DatasetError, match="no 'val' records"):
        load_dataset(path, split="val")


def test_dataset_rejects_unlabeled_rows():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 3)), np.array([[1, 0], [0, 0]]))


def toy(n):
    return Dataset(np.zeros((n, 2)), np.ones((n, 1)))


def test_batch_iterator_examples():
    batches = list(batch_iterator(toy(64), 32, seed=0, epoch=0))
    assert [len(b) for b in batches] == [32, 32]
    assert sorted(np.concatenate(batches).tolist()) == list(range(64))
    again = list(batch_iterator(toy(64), 32, seed=0, epoch=0))
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    nxt = list(batch_iterator(toy(64), 32, seed=0, epoch=1))
    assert not np.array_equal(np.concatenate(nxt), np.concatenate(batches))
    assert [len(b) for b in batch_iterator(toy(33), 32, 0, 0)] == [32]
    assert [len(b) for b in batch_iterator(toy(34), 32, 0, 0)] == [32, 2]
    with pytest.raises(ValueError):
        list(batch_iterator(toy(4), 1, 0, 0))
