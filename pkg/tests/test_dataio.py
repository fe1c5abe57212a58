import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adafcn.connectivity import pearson
from adafcn.dataio import (DataError, Dataset, RoiTimeSeries, load_dataset, split_kfold,
                           synth_band_dataset, write_dataset, zscore_rows)
from adafcn.tensorcore import conv1d


def _write_manifest(tmp_path, subjects, t_len, n_classes=1):
    entries = []
    for sid, mat, label in subjects:
        path = tmp_path / f"{sid}.csv"
        if isinstance(mat, str):
            path.write_text(mat)
        else:
            np.savetxt(path, mat, delimiter=",")
        entries.append({"id": sid, "path": path.name, "label": label})
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"n_classes": n_classes, "t_len": t_len, "subjects": entries}))
    return manifest


def test_load_arithmetic_sequence(tmp_path):
    mat = np.arange(30.0).reshape(3, 10)
    ds = load_dataset(_write_manifest(tmp_path, [("s0", mat, 0)], t_len=10))
    assert (len(ds), ds.atlas_size, ds.t_len) == (1, 3, 10)
    x = ds.subjects[0].x
    # each row is 0..9 shifted; z-score of an arithmetic sequence: (k - 4.5) / sqrt(8.25)
    expected = (np.arange(10) - 4.5) / np.sqrt(8.25)
    np.testing.assert_allclose(x, np.tile(expected, (3, 1)), atol=1e-12)
    np.testing.assert_allclose(x.mean(axis=1), 0, atol=1e-12)


def test_load_truncates_to_t_len(tmp_path):
    mat = np.random.default_rng(0).standard_normal((4, 20))
    ds = load_dataset(_write_manifest(tmp_path, [("s0", mat, 0)], t_len=12))
    np.testing.assert_allclose(ds.subjects[0].x, zscore_rows(mat[:, :12]), atol=1e-12)


def test_load_rejects_short_subject(tmp_path):
    with pytest.raises(DataError, match="'s0'.*shorter"):
        load_dataset(_write_manifest(tmp_path, [("s0", np.ones((3, 9)), 0)], t_len=10))


def test_empty_dataset(tmp_path):
    with pytest.raises(DataError, match="empty dataset"):
        load_dataset(_write_manifest(tmp_path, [], t_len=10))


@pytest.mark.parametrize("content, match", [
    ("1,2,3\n4,5\n", "ragged"),
    ("1,2,x\n4,5,6\n", "non-numeric"),
])
def test_bad_csv_names_subject(tmp_path, content, match):
    with pytest.raises(DataError, match=f"'bad'.*{match}"):
        load_dataset(_write_manifest(tmp_path, [("bad", content, 0)], t_len=3))


def test_inconsistent_roi_count(tmp_path):
    subs = [("a", np.ones((3, 10)), 0), ("b", np.ones((4, 10)), 0)]
    with pytest.raises(DataError, match="'b'"):
        load_dataset(_write_manifest(tmp_path, subs, t_len=10))


def test_missing_files(tmp_path):
    with pytest.raises(DataError, match="manifest not found"):
        load_dataset(tmp_path / "nope.json")
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({"n_classes": 1, "t_len": 8, "subjects": [{"id": "q", "path": "q.csv", "label": 0}]}))
    with pytest.raises(DataError, match="'q'.*missing"):
        load_dataset(manifest)


def test_constant_row_maps_to_zeros():
    x = np.vstack([np.full(10, 3.3), np.arange(10.0)])
    z = zscore_rows(x)
    assert np.all(z[0] == 0.0)
    np.testing.assert_allclose(z[1].std(), 1.0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 100), st.floats(-50, 50))
def test_zscore_idempotent_and_unit_variance(seed, scale, shift):
    x = np.random.default_rng(seed).standard_normal((5, 16)) * scale + shift
    once = zscore_rows(x)
    np.testing.assert_allclose(once.mean(axis=1), 0, atol=1e-9)
    np.testing.assert_allclose(once.std(axis=1), 1, atol=1e-9)
    np.testing.assert_allclose(zscore_rows(once), once, atol=1e-12)


def test_write_load_round_trip(tmp_path):
    ds, truth = synth_band_dataset(6, 5, 64, seed=2)
    manifest = write_dataset(ds, tmp_path, truth)
    again = load_dataset(manifest)
    assert [s.subject_id for s in again.subjects] == [s.subject_id for s in ds.subjects]
    for a, b in zip(ds.subjects, again.subjects):
        np.testing.assert_allclose(a.x, b.x, atol=1e-12)
        assert a.label == b.label
    assert json.loads((tmp_path / "ground_truth.json").read_text())["pairs"] == truth["pairs"]


def test_synth_deterministic():
    a, _ = synth_band_dataset(10, 8, 64, seed=5)
    b, _ = synth_band_dataset(10, 8, 64, seed=5)
    for sa, sb in zip(a.subjects, b.subjects):
        assert sa.x.tobytes() == sb.x.tobytes() and sa.label == sb.label


def test_synth_balanced_counts():
    ds, _ = synth_band_dataset(40, 8, 64, n_classes=2, seed=0)
    assert np.bincount(ds.labels).tolist() == [20, 20]


def test_synth_too_many_classes():
    with pytest.raises(ValueError, match="plantable"):
        synth_band_dataset(10, 8, 64, n_classes=3)


def test_synth_low_band_coupling_visible_in_low_subband():
    ds, truth = synth_band_dataset(20, 8, 256, seed=4, noise=0.0)
    i, j = truth["pairs"][0]
    sub = next(s for s in ds.subjects if s.label == 0)  # class 0 couples the low band
    # fixed-filter oracle: 5-tap moving average for low, residual for high
    low = conv1d(sub.x, np.full(5, 0.2)).data
    high = sub.x - low
    c_low = pearson(low).data[i, j]
    c_high = pearson(high).data[i, j]
    assert c_low > c_high
    assert c_low > 0.9


def test_synth_raw_correlation_does_not_reveal_class():
    ds, truth = synth_band_dataset(200, 8, 256, seed=1)
    i, j = truth["pairs"][0]
    raw = np.array([pearson(s.x).data[i, j] for s in ds.subjects])
    gap = abs(raw[ds.labels == 0].mean() - raw[ds.labels == 1].mean())
    assert gap < 0.05


def test_kfold_sizes_and_disjoint():
    labels = np.arange(100) % 2
    train, val, test = split_kfold(labels, 10, 3, seed=0)
    assert (len(train), len(val), len(test)) == (80, 10, 10)
    assert not (set(train) & set(val)) and not (set(train) & set(test)) and not (set(val) & set(test))
    assert set(train) | set(val) | set(test) == set(range(100))


def test_kfold_stratified_50_50():
    labels = np.array([0] * 50 + [1] * 50)
    for fold in range(10):
        _, _, test = split_kfold(labels, 10, fold, seed=7)
        assert np.bincount(labels[test]).tolist() == [5, 5]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 10), st.integers(20, 60))
def test_kfold_test_shards_partition(seed, k, n):
    labels = np.random.default_rng(seed).integers(0, 3, size=n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tests = [split_kfold(labels, k, f, seed=seed)[2] for f in range(k)]
        for f in range(k):
            tr, va, te = split_kfold(labels, k, f, seed=seed)
            assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(n))
    flat = np.concatenate(tests)
    assert sorted(flat.tolist()) == list(range(n))


def test_kfold_warns_on_small_class():
    labels = np.array([0] * 30 + [1] * 3)
    with pytest.warns(UserWarning, match="class 1"):
        split_kfold(labels, 10, 0)


def test_kfold_two_folds_keeps_train_nonempty():
    labels = np.arange(40) % 2
    train, val, test = split_kfold(labels, 2, 0)
    assert len(test) == 20 and len(val) > 0 and len(train) > 0


def test_dataset_validation():
    x = np.zeros((3, 10))
    with pytest.raises(DataError, match="no subjects"):
        Dataset([RoiTimeSeries("a", x, 0)], n_classes=2)
    with pytest.raises(DataError, match="labels"):
        Dataset([RoiTimeSeries("a", x, 2)], n_classes=2)
