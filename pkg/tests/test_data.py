import numpy as np
import pytest

import mosaicroute.data as data_mod
from mosaicroute.data import (
    SpikeDataset,
    bin_sample,
    bin_spikes,
    cached_bins,
    load_shd,
    pool_channels,
    save_shd,
    synthetic_task,
    template_distances,
)
from mosaicroute.errors import DomainError, FormatError


def ds_of(samples, n_channels=4, n_classes=2, labels=None):
    labels = [0] * len(samples) if labels is None else labels
    return SpikeDataset(samples, labels, n_channels, n_classes)


def test_dataset_invariants():
    with pytest.raises(FormatError):
        ds_of([([0.1], [4])])
    with pytest.raises(FormatError):
        ds_of([([0.1], [0])], labels=[2])
    with pytest.raises(FormatError):
        ds_of([([-0.1], [0])])
    with pytest.raises(FormatError):
        ds_of([([0.1, 0.2], [0])])


def test_binning_examples():
    assert not bin_sample([], [], 3, 5, 1.0).any()
    x = bin_sample([0.0], [2], 3, 5, 1.0)
    assert x[0, 2] == 1 and x.sum() == 1
    x = bin_sample([1.0], [1], 3, 5, 1.0)
    assert x[4, 1] == 1 and x.sum() == 1
    x = bin_sample([0.19999, 0.2], [0, 0], 1, 5, 1.0)
    assert x[:, 0].tolist() == [1, 1, 0, 0, 0]
    x = bin_sample([0.1, 0.1, 0.1], [0, 0, 0], 1, 5, 1.0)
    assert x[0, 0] == 1
    x = bin_sample([0.1, 0.1, 0.1], [0, 0, 0], 1, 5, 1.0, clip=False)
    assert x[0, 0] == 3


def test_bin_spikes_validates():
    ds = ds_of([([0.5], [0])])
    with pytest.raises(DomainError):
        bin_spikes(ds, 0)
    with pytest.raises(DomainError):
        bin_spikes(ds, 5, duration=0)
    assert bin_spikes(ds, 5).shape == (1, 5, 4)


def test_binning_conserves_counts_without_clip():
    rng = np.random.default_rng(0)
    samples = []
    for _ in range(50):
        k = int(rng.integers(0, 40))
        samples.append((rng.uniform(0, 1.3, k), rng.integers(0, 6, k)))
    ds = ds_of(samples, n_channels=6)
    x = bin_spikes(ds, 17, clip=False)
    for k, (t, u) in enumerate(samples):
        assert x[k].sum() == len(t)
        np.testing.assert_array_equal(x[k].sum(axis=0), np.bincount(u, minlength=6))


def test_shd_roundtrip(tmp_path):
    train, _ = synthetic_task(n_classes=3, n_channels=10, n_steps=20, seed=1, n_train=12, n_test=4)
    save_shd(train, tmp_path)
    back = load_shd(tmp_path, "train")
    assert len(back) == len(train) and back.n_channels == 10 and back.n_classes == 3
    np.testing.assert_array_equal(back.labels, train.labels)
    np.testing.assert_array_equal(bin_spikes(back, 20), bin_spikes(train, 20))
    # re-serialise what was loaded and load again
    second = tmp_path / "again"
    second.mkdir()
    save_shd(back, second)
    again = load_shd(second / "shd_train.h5", "train")
    np.testing.assert_array_equal(bin_spikes(again, 20), bin_spikes(back, 20))
    assert all(lbl < again.n_classes for lbl in again.labels)


def test_shd_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_shd("", "train")
    with pytest.raises(FileNotFoundError):
        load_shd(tmp_path, "train")
    with pytest.raises(FileNotFoundError):
        load_shd(tmp_path / "nope.h5", "train")
    with pytest.raises(DomainError):
        load_shd(tmp_path, "valid")
    bad = tmp_path / "shd_train.h5"
    bad.write_bytes(b"not hdf5")
    with pytest.raises(FileNotFoundError, match="shd_train.h5"):
        load_shd(tmp_path, "train")
    import h5py
    with h5py.File(bad, "w") as fh:
        fh.create_dataset("labels", data=np.zeros(3, np.int64))
    with pytest.raises(FormatError):
        load_shd(tmp_path, "train")


def test_shd_count_mismatch(tmp_path):
    train, _ = synthetic_task(n_classes=2, n_channels=4, n_steps=10, seed=0, n_train=4, n_test=2)
    path = save_shd(train, tmp_path)
    import h5py
    with h5py.File(path, "a") as fh:
        del fh["labels"]
        fh.create_dataset("labels", data=np.zeros(3, np.int64))
    with pytest.raises(FormatError):
        load_shd(path, "train")


def test_pool_channels():
    ds = ds_of([([0.1, 0.2, 0.3], [0, 4, 9])], n_channels=10)
    pooled = pool_channels(ds, 5)
    assert pooled.n_channels == 2
    assert pooled.samples[0][1].tolist() == [0, 0, 1]
    assert pool_channels(ds, 1) is ds
    with pytest.raises(DomainError):
        pool_channels(ds, 0)


def test_cached_bins(tmp_path):
    train, _ = synthetic_task(n_classes=2, n_channels=6, n_steps=10, seed=0, n_train=8, n_test=2)
    stem = tmp_path / "cache"
    a = cached_bins(train, 10, stem)
    assert (tmp_path / "cache.bin").exists() and (tmp_path / "cache.json").exists()
    b = cached_bins(train, 10, stem)
    np.testing.assert_array_equal(a, b)
    c = cached_bins(train, 5, stem)  # different binning invalidates the cache
    assert c.shape == (8, 5, 6)


def test_synthetic_determinism():
    a_tr, a_te = synthetic_task(seed=3, n_train=20, n_test=10)
    b_tr, b_te = synthetic_task(seed=3, n_train=20, n_test=10)
    np.testing.assert_array_equal(bin_spikes(a_tr, 40), bin_spikes(b_tr, 40))
    np.testing.assert_array_equal(a_te.labels, b_te.labels)
    c_tr, _ = synthetic_task(seed=4, n_train=20, n_test=10)
    assert not np.array_equal(bin_spikes(a_tr, 40), bin_spikes(c_tr, 40))


def test_synthetic_rejects_single_class():
    with pytest.raises(DomainError):
        synthetic_task(n_classes=1)


def _nearest_template_accuracy(ds, n_steps):
    raster = data_mod._template_raster(ds.meta["templates"], n_steps).astype(np.float32)
    x = bin_spikes(ds, n_steps)
    d = np.abs(x[:, None] - raster[None]).sum(axis=(2, 3))
    return np.mean(d.argmin(axis=1) == ds.labels)


def test_noise_free_task_is_separable_by_nearest_template():
    train, test = synthetic_task(n_classes=6, n_channels=16, n_steps=30, seed=0,
                                 jitter=0.0, dropout=0.0, n_train=60, n_test=30)
    assert _nearest_template_accuracy(train, 30) == 1.0
    assert _nearest_template_accuracy(test, 30) == 1.0


def test_identical_templates_are_redrawn(monkeypatch):
    real = data_mod._draw_templates
    calls = []

    def rigged(rng, n_classes, n_channels, n_steps, events, span=1.0):
        t = real(rng, n_classes, n_channels, n_steps, events, span)
        calls.append(1)
        if len(calls) == 1:
            t[1] = t[0]  # two classes share a template on the first draw
        return t

    monkeypatch.setattr(data_mod, "_draw_templates", rigged)
    train, _ = synthetic_task(n_classes=4, n_channels=8, n_steps=20, seed=0, n_train=8, n_test=4)
    assert len(calls) >= 2
    raster = data_mod._template_raster(train.meta["templates"], 20)
    dist = template_distances(raster)
    assert dist[~np.eye(4, dtype=bool)].min() >= 8 * 2 // 2


def test_impossible_template_distance():
    with pytest.raises(DomainError):
        synthetic_task(n_classes=3, n_channels=2, n_steps=3, min_distance=100, max_tries=5)


def test_span_keeps_template_events_early():
    train, _ = synthetic_task(n_classes=5, n_channels=12, n_steps=40, seed=2, span=0.5,
                              events_per_channel=1, n_train=10, n_test=5)
    assert train.meta["templates"].max() < 20
    with pytest.raises(DomainError):
        synthetic_task(span=0.0)
    with pytest.raises(DomainError):
        synthetic_task(span=1.5)
