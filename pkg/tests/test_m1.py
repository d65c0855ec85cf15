import numpy as np
import pytest

from cgankd import cgen, m1_subsample, nncore
from cgankd.m1_subsample import (CallableGenerator, DensityRatioModel,
                                 SubsampleConfig, constant_labels,
                                 empirical_labels, load_dr_model,
                                 model_ratio_fn, ratio, ratio_batch,
                                 rejection_sample, save_dr_model, train_dr)
from cgankd.nncore import NetParams, NetSpec, TrainConfig
from cgankd.synthdata import (BlobsConfig, ClassificationTask, Dataset,
                              make_classification)


def fixed_odds_model(logit_diff, prior_correction=1.0, task=None, in_dim=3):
    """DR model whose classifier emits a constant logit difference."""
    task = task or ClassificationTask(2)
    spec = NetSpec(in_dim + 2, (1,), "logits", 2)
    net = NetParams(spec,
                    [np.zeros((1, in_dim + 2)), np.zeros((2, 1))],
                    [np.zeros(1), np.array([0.0, logit_diff])])
    return DensityRatioModel(net, prior_correction, m_max=1.0, task=task)


def test_ratio_odds_identity_half():
    # discriminator output 0.5 with balanced priors -> ratio 1
    model = fixed_odds_model(0.0)
    assert ratio(model, (np.zeros(3), 0)) == pytest.approx(1.0)


def test_ratio_odds_identity_point8():
    # p_hat = 0.8 -> odds 4
    model = fixed_odds_model(np.log(4.0))
    assert ratio(model, (np.zeros(3), 1)) == pytest.approx(4.0)


def test_ratio_prior_correction():
    model = fixed_odds_model(0.0, prior_correction=2.5)
    assert ratio(model, (np.zeros(3), 0)) == pytest.approx(2.5)


def dr_config(n_target=100, seed=0, epochs=60):
    return SubsampleConfig(
        dr_train=TrainConfig(epochs, 64, 0.05, seed=seed),
        n_target=n_target, dr_hidden=(16,), seed=seed)


def make_blob_sets(seed, n=600, flip=0.0, junk=0.0):
    base = BlobsConfig(2, 4.0, 0.6, n=n, seed=seed)
    real = make_classification(base)
    oracle = cgen.make_oracle(BlobsConfig(2, 4.0, 0.6), flip_prob=flip,
                              junk_prob=junk, junk_spread=40.0)
    labels = np.arange(n) % 2
    fake = cgen.sample(oracle, labels, seed=seed + 1000)
    return real, fake, oracle


def test_train_dr_identical_distributions_median_near_one():
    real, fake, oracle = make_blob_sets(seed=0)
    model = train_dr(real, fake, dr_config(seed=0))
    held = cgen.sample(oracle, np.arange(500) % 2, seed=77)
    ratios = ratio_batch(model, held.features, held.labels)
    assert 0.5 <= np.median(ratios) <= 2.0


def test_train_dr_junk_gets_low_ratios():
    real, fake, oracle = make_blob_sets(seed=1, junk=0.3)
    model = train_dr(real, fake, dr_config(seed=1))
    held = cgen.sample(oracle, np.arange(1000) % 2, seed=88)
    ratios = ratio_batch(model, held.features, held.labels)
    from cgankd.synthdata import blob_centers
    mu = blob_centers(BlobsConfig(2, 4.0, 0.6))
    dist = np.linalg.norm(held.features[:, None] - mu[None], axis=2).min(axis=1)
    junk_mask = dist > 5 * 4.0
    assert junk_mask.any() and (~junk_mask).any()
    cutoff = np.percentile(ratios[~junk_mask], 10)
    assert np.mean(ratios[junk_mask] < cutoff) > 0.9


def test_train_dr_deterministic():
    real, fake, _ = make_blob_sets(seed=2)
    a = train_dr(real, fake, dr_config(seed=3))
    b = train_dr(real, fake, dr_config(seed=3))
    for wa, wb in zip(a.net.weights, b.net.weights):
        assert np.array_equal(wa, wb)
    assert a.m_max == b.m_max


def test_trained_ratio_matches_closed_form_on_two_point_space():
    # exact discrete ratio oracle: p_fake = {0.5, 0.5}, p_real = {0.9, 0.1}
    # on two feature points; true ratios are {1.8, 0.2}
    task = ClassificationTask(2)
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])

    def draws(key_seed, probs, n):
        from cgankd import rng
        u = rng.uniforms(rng.derive_key("twopoint", key_seed),
                         np.arange(n, dtype=np.uint64))
        which = (u > probs[0]).astype(int)
        return pts[which], which

    n = 8000
    real_x, _ = draws(0, [0.9, 0.1], n)
    fake_x, _ = draws(1, [0.5, 0.5], n)
    labels = np.zeros(n, dtype=np.int64)
    real = Dataset(task, real_x, labels, np.full(n, "real"))
    fake = Dataset(task, fake_x, labels, np.full(n, "fake_raw"))
    cfg = SubsampleConfig(
        dr_train=TrainConfig(300, 64, 0.02, lr_decay_epochs=(200,), seed=4),
        n_target=10, dr_hidden=(16,), seed=4)
    model = train_dr(real, fake, cfg)
    r0 = ratio(model, (pts[0], 0))
    r1 = ratio(model, (pts[1], 0))
    assert abs(r0 - 1.8) / 1.8 < 0.10
    assert abs(r1 - 0.2) / 0.2 < 0.10


def two_point_generator(task):
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])

    def fn(labels, indices):
        from cgankd import rng
        u = rng.uniforms(rng.derive_key("twopoint-gen"),
                         np.asarray(indices, dtype=np.uint64))
        return pts[(u > 0.5).astype(int)]
    return CallableGenerator(fn, task)


def test_rejection_constant_ratio_passes_through():
    task = ClassificationTask(2)
    gen = two_point_generator(task)
    out = rejection_sample(gen, lambda f, l: np.full(len(l), 2.0), m_max=2.0,
                           label_source=constant_labels(0), n_target=5000,
                           seed=0)
    # constant ratio: acceptance uniform, output matches generator (50/50)
    frac = np.mean(out.features[:, 0] == 1.0)
    assert abs(frac - 0.5) < 0.02
    assert out.n == 5000
    assert set(out.provenance) == {"fake_m1"}


def test_rejection_two_point_exact_ratios_recover_target():
    # brute-force arithmetic: ratios {1.8, 0.2}, M=1.8 -> acceptance {1, 1/9};
    # accepted distribution should be {0.9, 0.1} within TV 0.02
    task = ClassificationTask(2)
    gen = two_point_generator(task)

    def exact_ratio(feats, labels):
        return np.where(feats[:, 0] == 0.0, 1.8, 0.2)

    out = rejection_sample(gen, exact_ratio, m_max=1.8,
                           label_source=constant_labels(0), n_target=50_000,
                           seed=1)
    p0 = np.mean(out.features[:, 0] == 0.0)
    tv = abs(p0 - 0.9)  # two-point TV = half L1 = one-sided gap
    assert tv < 0.02


def test_rejection_acceptance_collapse_aborts():
    task = ClassificationTask(2)
    gen = two_point_generator(task)
    with pytest.raises(RuntimeError, match="acceptance rate collapsed"):
        rejection_sample(gen, lambda f, l: np.full(len(l), 1e-7), m_max=1.0,
                         label_source=constant_labels(0), n_target=10, seed=2)


def test_rejection_label_sources():
    task = ClassificationTask(4)
    gen = two_point_generator(task)
    out = rejection_sample(gen, lambda f, l: np.ones(len(l)), m_max=1.0,
                           label_source=constant_labels(3), n_target=100,
                           seed=3)
    assert np.all(out.labels == 3)

    train = make_classification(BlobsConfig(4, 4.0, 0.5, n=400, seed=0))
    src = empirical_labels(train, seed=4)
    labels = src(np.arange(4000))
    counts = np.bincount(labels, minlength=4)
    assert np.max(np.abs(counts - 1000)) < 150


def test_dr_model_roundtrip(tmp_path):
    real, fake, _ = make_blob_sets(seed=5, n=200)
    model = train_dr(real, fake, dr_config(seed=5, epochs=10))
    path = tmp_path / "dr.txt"
    save_dr_model(model, path)
    back = load_dr_model(path)
    assert back.m_max == model.m_max
    assert back.prior_correction == model.prior_correction
    probe = (np.array([0.3, -0.2]), 1)
    assert ratio(back, probe) == ratio(model, probe)
