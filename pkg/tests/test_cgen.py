import numpy as np
import pytest

from cgankd import cgen, rng
from cgankd.cgen import (CorruptedOracle, GanTrainConfig, make_oracle, sample,
                         sample_features, sample_labels, train_cgan)
from cgankd.synthdata import (BlobsConfig, RingConfig, blob_centers,
                              make_classification, make_regression)


BASE = BlobsConfig(3, 4.0, 0.5)


def test_oracle_clean_matches_base_family_moments():
    handle = make_oracle(BASE)
    labels = np.repeat(np.arange(3), 2000)
    ds = sample(handle, labels, seed=0)
    mu = blob_centers(BASE)
    for c in range(3):
        got = ds.features[ds.labels == c].mean(axis=0)
        assert np.linalg.norm(got - mu[c]) < 3 * BASE.noise_std / np.sqrt(2000) * 4
    # class-conditional spread matches noise_std
    spread = ds.features[ds.labels == 0].std(axis=0)
    assert np.max(np.abs(spread - BASE.noise_std)) < 0.05


def test_oracle_assigned_label_fidelity():
    handle = make_oracle(BASE, flip_prob=0.5, junk_prob=0.5, junk_spread=50.0)
    labels = np.array([0, 2, 1, 1])
    ds = sample(handle, labels, seed=1)
    assert np.array_equal(ds.labels, labels)
    assert set(ds.provenance) == {"fake_raw"}


def test_oracle_flip_rate_recoverable():
    # measured flip rate within a 99% binomial interval over 10,000 draws
    flip = 0.2
    handle = make_oracle(BASE, flip_prob=flip)
    n = 10_000
    labels = np.repeat(np.arange(3), n // 3 + 1)[:n]
    ds = sample(handle, labels, seed=2)
    mu = blob_centers(BASE)
    d = np.linalg.norm(ds.features[:, None] - mu[None], axis=2)
    true_class = d.argmin(axis=1)
    measured = np.mean(true_class != ds.labels)
    half_width = 2.576 * np.sqrt(flip * (1 - flip) / n)
    assert abs(measured - flip) <= half_width


def test_oracle_junk_everything_off_manifold():
    # Gaussian tail: with spread 25*separation, P(radius > 5*separation)
    # = exp(-(5*sep)^2 / (2*spread^2)) = exp(-0.02) = 0.98
    handle = make_oracle(BASE, junk_prob=1.0, junk_spread=25 * BASE.separation)
    labels = np.zeros(500, dtype=np.int64)
    ds = sample(handle, labels, seed=3)
    mu = blob_centers(BASE)
    d = np.linalg.norm(ds.features[:, None] - mu[None], axis=2).min(axis=1)
    assert np.mean(d > 5 * BASE.separation) > 0.95


def test_oracle_regression_label_noise():
    base = RingConfig(noise_std=0.0)
    handle = make_oracle(base, label_gauss_std=0.1)
    labels = np.full(5000, 0.5)
    ds = sample(handle, labels, seed=4)
    from cgankd.synthdata import ring_true_label
    y_true = ring_true_label(ds.features)
    err = y_true - 0.5
    assert abs(err.std() - 0.1) < 0.01
    assert abs(err.mean()) < 0.01


def test_sample_prefix_property():
    handle = make_oracle(BASE, flip_prob=0.3, junk_prob=0.2, junk_spread=30.0)
    labels = np.arange(100) % 3
    full = sample(handle, labels, seed=5)
    short = sample(handle, labels[:10], seed=5)
    assert np.array_equal(full.features[:10], short.features)


def test_sample_deterministic():
    handle = make_oracle(BASE, flip_prob=0.3)
    labels = np.arange(50) % 3
    a = sample(handle, labels, seed=6)
    b = sample(handle, labels, seed=6)
    assert np.array_equal(a.features, b.features)
    c = sample(handle, labels, seed=7)
    assert not np.array_equal(a.features, c.features)


def test_sample_labels_single_class():
    ds = make_classification(BlobsConfig(2, 4.0, 0.5, n=20, seed=0))
    ds = ds.subset(ds.labels == 1)
    out = sample_labels(ds, 50, seed=0)
    assert np.all(out == 1)


def test_sample_labels_balanced_counts():
    ds = make_classification(BlobsConfig(4, 4.0, 0.5, n=4000, seed=1))
    out = sample_labels(ds, 4000, seed=1)
    counts = np.bincount(out, minlength=4)
    sigma = np.sqrt(4000 * 0.25 * 0.75)
    assert np.max(np.abs(counts - 1000)) < 3 * sigma


def test_sample_labels_deterministic():
    ds = make_classification(BlobsConfig(3, 4.0, 0.5, n=300, seed=2))
    a = sample_labels(ds, 100, seed=3)
    b = sample_labels(ds, 100, seed=3)
    assert np.array_equal(a, b)


def test_cgan_zero_iterations_is_initialization():
    ds = make_classification(BlobsConfig(2, 4.0, 0.25, n=200, seed=0))
    cfg = GanTrainConfig(iterations=0, seed=1)
    handle = train_cgan(ds, cfg)
    from cgankd.nncore import init_params
    fresh = init_params(handle.generator.spec, rng.derive_key("cgan-g", 1))
    for a, b in zip(handle.generator.weights, fresh.weights):
        assert np.array_equal(a, b)


def test_cgan_deterministic():
    ds = make_classification(BlobsConfig(2, 4.0, 0.25, n=200, seed=0))
    cfg = GanTrainConfig(iterations=50, seed=2)
    a = train_cgan(ds, cfg)
    b = train_cgan(ds, cfg)
    for wa, wb in zip(a.generator.weights, b.generator.weights):
        assert np.array_equal(wa, wb)


def test_cgan_output_dim_matches_data():
    ds = make_regression(RingConfig(n=200, seed=0))
    handle = train_cgan(ds, GanTrainConfig(iterations=20, seed=0))
    out = sample(handle, np.full(7, 0.5), seed=0)
    assert out.features.shape == (7, 2)


def test_cgan_learns_blob_means():
    # moment-matching oracle: per-class generated mean close to the true one
    base = BlobsConfig(2, 4.0, 0.25, n=400, seed=3)
    ds = make_classification(base)
    handle = train_cgan(ds, GanTrainConfig(iterations=3000, seed=4))
    labels = np.repeat(np.arange(2), 1000)
    out = sample(handle, labels, seed=5)
    mu = blob_centers(base)
    for c in range(2):
        got = out.features[out.labels == c].mean(axis=0)
        assert np.linalg.norm(got - mu[c]) < 3 * base.noise_std


def test_generator_roundtrip_oracle(tmp_path):
    handle = make_oracle(BASE, flip_prob=0.1, junk_prob=0.2, junk_spread=30.0)
    path = tmp_path / "gen.txt"
    cgen.save_generator(handle, path)
    back = cgen.load_generator(path)
    labels = np.arange(20) % 3
    assert np.array_equal(sample(handle, labels, 0).features,
                          sample(back, labels, 0).features)


def test_generator_roundtrip_cgan(tmp_path):
    ds = make_classification(BlobsConfig(2, 4.0, 0.25, n=100, seed=0))
    handle = train_cgan(ds, GanTrainConfig(iterations=10, seed=0))
    path = tmp_path / "gen.txt"
    cgen.save_generator(handle, path)
    back = cgen.load_generator(path)
    labels = np.arange(10) % 2
    assert np.array_equal(sample(handle, labels, 0).features,
                          sample(back, labels, 0).features)
