import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seilab import features as F
from seilab import nn, sei
from seilab.sei import DECOY_ID, Outcome
from seilab.sigmodel import B210


def gaussian_classes(rng, means, n=200, sd=1.0):
    x = np.concatenate([rng.normal(m, sd, (n, len(m))) for m in means])
    return x, np.repeat(np.arange(len(means)), n)


def naive_log_density(z, mean, cov):
    d = len(mean)
    r = z - mean
    return -0.5 * r @ np.linalg.inv(cov) @ r - 0.5 * np.log(np.linalg.det(cov)) - 0.5 * d * np.log(2 * np.pi)


def test_projection_dimension_is_c_minus_one():
    rng = np.random.default_rng(0)
    x, y = gaussian_classes(rng, [rng.normal(0, 3, 12) for _ in range(8)], n=30)
    m = sei.mda_fit(x, y, 8)
    assert m.W.shape == (12, 7)
    assert m.class_means.shape == (8, 7) and m.class_covs.shape == (8, 7, 7)


def test_two_isotropic_classes_project_along_mean_difference():
    rng = np.random.default_rng(1)
    mu1, mu2 = np.array([0.0, 0.0]), np.array([3.0, 1.0])
    x, y = gaussian_classes(rng, [mu1, mu2], n=5000)
    m = sei.mda_fit(x, y, 2)
    raw_dir = m.W[:, 0] / m.scale  # direction in the unstandardized space
    cos = abs(raw_dir @ (mu2 - mu1)) / (np.linalg.norm(raw_dir) * np.linalg.norm(mu2 - mu1))
    assert cos >= 0.99


def test_well_separated_train_accuracy():
    rng = np.random.default_rng(2)
    x, y = gaussian_classes(rng, [rng.normal(0, 10, 6) for _ in range(5)], n=100)
    m = sei.mda_fit(x, y)
    assert np.mean(sei.mda_ml_classify(m, x)[0] == y) >= 0.99


def _fitted(seed=3):
    rng = np.random.default_rng(seed)
    x, y = gaussian_classes(rng, [rng.normal(0, 2, 10) for _ in range(4)], n=60)
    return sei.mda_fit(x, y), x, y


def test_class_mean_wins():
    m, x, y = _fitted()
    for c in range(m.C):
        raw = x[y == c].mean(axis=0)
        assert sei.mda_ml_classify(m, raw)[0] == c


def test_likelihoods_match_naive_density():
    m, x, _ = _fitted()
    ll = m.log_likelihoods(x[:20])
    z = m.project(x[:20])
    want = np.array([[naive_log_density(zi, m.class_means[c], m.class_covs[c]) for c in range(m.C)] for zi in z])
    assert np.allclose(ll, want, rtol=0, atol=1e-9)


def test_brute_force_bayes_agrees_on_random_points():
    m, _, _ = _fitted(4)
    rng = np.random.default_rng(5)
    z = rng.normal(0, 3, (1000, m.C - 1))
    # feed points already in the projected space through an identity-projection model
    ident = sei.MdaModel(np.eye(m.C - 1), m.class_means, m.class_covs, np.zeros(m.C - 1), np.ones(m.C - 1),
                         m.eigenvalues)
    got = sei.mda_ml_classify(ident, z)[0]
    want = [int(np.argmax([naive_log_density(zi, m.class_means[c], m.class_covs[c]) for c in range(m.C)]))
            for zi in z]
    assert np.array_equal(got, want)


def test_tie_goes_to_lowest_index():
    means = np.array([[1.0], [-1.0]])
    covs = np.array([[[1.0]], [[1.0]]])
    m = sei.MdaModel(np.eye(1), means, covs, np.zeros(1), np.ones(1), np.ones(1))
    assert sei.mda_ml_classify(m, np.array([0.0]))[0] == 0


@given(st.floats(0.01, 100), st.floats(-50, 50))
def test_argmax_invariant_to_common_affine_map(a, b):
    m, x, y = _fitted(6)
    m2 = sei.mda_fit(a * x + b, y)
    assert np.array_equal(sei.mda_ml_classify(m, x)[0], sei.mda_ml_classify(m2, a * x + b)[0])


def test_mda_rejects_degenerate_input():
    with pytest.raises(ValueError):
        sei.mda_fit(np.zeros((3, 4)), np.array([0, 1, 1]))


def test_mda_save_load(tmp_path):
    m, x, _ = _fitted()
    sei.save_mda(m, tmp_path / "m.mda", classes=["a", "b", "c", "d"])
    back = sei.load_mda(tmp_path / "m.mda")
    assert np.array_equal(back.log_likelihoods(x), m.log_likelihoods(x))


@pytest.mark.parametrize("rep", ["time", "frequency", "gabor_image"])
@pytest.mark.parametrize("decoy,cells", [(False, 8), (True, 9)])
def test_cnn_output_cells(rep, decoy, cells):
    net = sei.build_sei_cnn(sei.SeiCnnConfig(rep, decoy))
    assert net.output_shape == (cells,)
    assert net.output_activation == "softmax"


def test_time_cnn_shape_schedule():
    net = sei.build_cnn("time", 8)
    assert net.input_shape == (4, 320, 1)
    assert [s[-1] for s in net.shape_schedule() if len(s) == 3][1:][::3] == [40, 80, 160]


def test_cnn_config_validation():
    with pytest.raises(ValueError):
        sei.SeiCnnConfig("time", decoy=False, output_cells=9)
    with pytest.raises(ValueError):
        sei.SeiCnnConfig("spectrogram")


def test_extract_features_shapes(small_lab):
    pre = small_lab.bob_set("test", 30.0)[:3]
    assert sei.extract_features("mda_gabor", pre).shape == (3, 771)
    assert sei.extract_features("mda_freq", pre).shape == (3, 1280)
    assert sei.extract_features("cnn_time", pre).shape == (3, 4, 320, 1)
    assert sei.extract_features("cnn_freq", pre).shape == (3, 4, 320, 1)
    assert sei.extract_features("cnn_gabor", pre, image_scale=4).shape == (3, 80, 80, 3)
    assert sei.extract_features("mda_gabor", pre, residual=True).shape == (3, 771)


def test_mda_classifier_on_small_lab(small_lab):
    clf = small_lab.classifier("mda_gabor", 30.0, False, False)
    test = small_lab.bob_set("test", 30.0)
    acc = np.mean([a == p.emitter_id for a, p in zip(clf.predict_ids(test), test)])
    assert acc >= 0.9
    assert clf.classes == small_lab.authorized and not clf.decoy


def test_cnn_classifier_trains(small_lab):
    clf = small_lab.classifier("cnn_time", 30.0, True, False)
    assert clf.n_outputs == 9 and clf.decoy
    assert len(clf.curve.losses) == 2
    assert set(clf.predict_ids(small_lab.bob_set("test", 30.0)[:10])) <= set(clf.classes)


def test_fit_rejects_unlisted_emitter(small_lab):
    with pytest.raises(ValueError):
        sei.fit_classifier("mda_gabor", small_lab.bob_set("train", 30.0), ["E0"])


def test_dae_identity_sanity(small_lab):
    clean = small_lab.bob_set("train", 30.0)[::3]
    dae = sei.train_dae(clean, clean, 256, nn.TrainConfig(learning_rate=3e-3, epochs=800, minibatch=16,
                                                          loss="mse", l2=0.0))
    x = F.tensor_batch(clean)
    out = dae.denoise_batch(x)
    assert out.shape == x.shape
    assert np.mean((out - x) ** 2) <= 1e-4
    den = dae.denoise(clean[:2])
    assert all(p.samples.shape == (320,) and p.normalized for p in den)


def test_dae_rejects_unaligned_pairs(small_lab):
    pre = small_lab.bob_set("train", 30.0)
    with pytest.raises(ValueError):
        sei.train_dae(pre[:2], pre[-2:])


ids = ["E0", "E1", "E2", DECOY_ID]


@given(st.sampled_from(ids[:3]), st.sampled_from(ids), st.booleans())
def test_outcome_table(claim, pred, adversary):
    out = sei.decide(claim, pred, adversary)
    if not adversary:
        assert out == (Outcome.TRUE_ACCEPT if pred == claim else Outcome.FALSE_REJECT)
    elif pred == claim:
        assert out == Outcome.FALSE_ACCEPT
    elif pred == DECOY_ID:
        assert out == Outcome.TRUE_REJECT
    else:
        assert out == Outcome.OTHER_REJECT


def test_no_decoy_class_never_true_rejects():
    authorized = ["E0", "E1", "E2"]
    for claim, pred in itertools.product(authorized, authorized):
        assert sei.decide(claim, pred, True) != Outcome.TRUE_REJECT


def test_authenticate(small_lab):
    clf = small_lab.classifier("mda_gabor", 30.0, False, False)
    alice = small_lab.bob_set("test", 30.0)[0]
    d = sei.authenticate(alice.emitter_id, alice, clf)
    assert d.outcome == Outcome.TRUE_ACCEPT
    with pytest.raises(ValueError):
        sei.authenticate("nobody", alice, clf)
    with pytest.raises(ValueError):
        sei.authenticate(alice.emitter_id, alice, clf, defense="dae")
    eve = small_lab.eve_transmissions("none", B210, 30.0)
    decisions = sei.authenticate_many([c for c, _ in eve], [p for _, p in eve], clf)
    assert all(x.outcome != Outcome.TRUE_REJECT for x in decisions)
