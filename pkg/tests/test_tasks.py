"""Tests de la tarea sintética: señal limpia, mezcla SNR, clasificadores congelados, evaluación."""

import numpy as np
import pytest

from d4am.errors import ConfigError, DataError, TrainingFailure
from d4am.netcore import NetworkSpec
from d4am.tasks import (
    ClassifierSpec,
    TaskSpec,
    default_test_conditions,
    evaluate,
    gen_clean,
    gen_noise,
    load_dataset,
    make_noisy,
    mix_noise,
    save_dataset,
    subsample_labels,
    train_evaluators,
    train_proxy,
)


def _snr_db(clean, noisy):
    noise = noisy - clean
    return 10 * np.log10(np.mean(clean**2) / np.mean(noise**2))


def _clf(name, hidden, seed, d=4, k=3, act="tanh"):
    return ClassifierSpec(name, NetworkSpec.build([d, *hidden, k], act, "softmax"), seed)


def test_task_spec_validation():
    with pytest.raises(ConfigError):
        TaskSpec(snr_range_db=(6.0, -4.0))
    with pytest.raises(ConfigError):
        TaskSpec(train_size=0)
    with pytest.raises(ConfigError):
        TaskSpec(label_fraction=0.0)
    with pytest.raises(ConfigError):
        TaskSpec(noise_generator="pink")


def test_gen_clean_balanced_and_deterministic():
    spec = TaskSpec(num_classes=4)
    x, y = gen_clean(spec, 103, np.random.default_rng(1))
    counts = np.bincount(y, minlength=4)
    assert counts.max() - counts.min() <= 1
    x2, y2 = gen_clean(spec, 103, np.random.default_rng(1))
    np.testing.assert_array_equal(x, x2)
    np.testing.assert_array_equal(y, y2)
    _x, y_k = gen_clean(spec, 4, np.random.default_rng(2))
    assert sorted(y_k.tolist()) == [0, 1, 2, 3]


def test_sinusoid_bank_generator():
    spec = TaskSpec(clean_generator="sinusoid_bank", feature_dim=16, num_classes=3)
    x, y = gen_clean(spec, 30, np.random.default_rng(0))
    assert x.shape == (30, 16)
    assert set(y.tolist()) == {0, 1, 2}


@pytest.mark.parametrize("snr", [0.0, 10.0])
def test_mix_noise_definition(snr):
    rng = np.random.default_rng(4)
    clean, noise = rng.standard_normal(32), rng.standard_normal(32)
    noisy = mix_noise(clean, noise, snr)
    ratio = np.mean(clean**2) / np.mean((noisy - clean) ** 2)
    assert ratio == pytest.approx(10 ** (snr / 10), rel=1e-12)


def test_mix_noise_exact_on_random_vectors():
    rng = np.random.default_rng(5)
    for _ in range(500):
        d = int(rng.integers(2, 64))
        snr = float(rng.uniform(-10, 30))
        clean, noise = rng.standard_normal(d), rng.standard_normal(d)
        assert abs(_snr_db(clean, mix_noise(clean, noise, snr)) - snr) < 1e-9


def test_mix_noise_zero_power_is_data_error():
    with pytest.raises(DataError):
        mix_noise(np.zeros(4), np.ones(4), 0.0)
    with pytest.raises(DataError):
        mix_noise(np.ones(4), np.zeros(4), 0.0)


def test_mix_noise_matrix_matches_row_by_row():
    rng = np.random.default_rng(8)
    clean, noise = rng.standard_normal((50, 6)), rng.standard_normal((50, 6))
    snr = rng.uniform(-4, 6, size=50)
    mixed = mix_noise(clean, noise, snr)
    for i in range(50):
        np.testing.assert_allclose(mixed[i], mix_noise(clean[i], noise[i], snr[i]), rtol=1e-12, atol=0)
    np.testing.assert_allclose(mix_noise(clean, noise, 3.0), mix_noise(clean, noise, np.full(50, 3.0)))
    with pytest.raises(DataError):
        mix_noise(clean, noise, snr[:10])


def test_make_noisy_mixes_through_mix_noise(monkeypatch):
    from d4am import tasks

    calls = []
    real = tasks.mix_noise
    monkeypatch.setattr(tasks, "mix_noise", lambda c, n, s: calls.append(c.shape) or real(c, n, s))
    make_noisy(np.ones((5, 3)), "gaussian", (0.0, 1.0), np.random.default_rng(0))
    assert calls == [(5, 3)]


def test_make_noisy_mean_snr():
    """U(−4, 6) dB over 10⁵ mixes → mean SNR ≈ 1 dB."""
    rng = np.random.default_rng(6)
    clean = rng.standard_normal((100_000, 4))
    noisy, snr = make_noisy(clean, "gaussian", (-4.0, 6.0), rng)
    assert abs(snr.mean() - 1.0) < 0.05
    measured = 10 * np.log10(np.mean(clean**2, axis=1) / np.mean((noisy - clean) ** 2, axis=1))
    np.testing.assert_allclose(measured, snr, atol=1e-9)


@pytest.mark.parametrize("kind", ["gaussian", "impulsive", "structured"])
def test_noise_rows_have_power(kind):
    noise = gen_noise(kind, (500, 6), np.random.default_rng(7))
    assert np.all(np.mean(noise**2, axis=1) > 0)


def test_unknown_noise_generator():
    with pytest.raises(ConfigError):
        gen_noise("brown", (2, 2), np.random.default_rng(0))


def test_subsample_labels():
    idx = subsample_labels(200, 0.1, np.random.default_rng(0))
    assert len(idx) == 20 and len(set(idx.tolist())) == 20
    assert np.all(np.diff(idx) > 0)
    assert len(subsample_labels(5, 0.01, np.random.default_rng(0))) == 1


def test_default_test_conditions():
    conds = default_test_conditions(TaskSpec(noise_generator="impulsive"))
    assert [c.name for c in conds] == ["matched", "mismatched", "high_snr"]
    assert conds[1].noise_generator != "impulsive"
    assert conds[2].snr_range_db == (10.0, 20.0)


# ---------------------------------------------------------------------------
# Clasificadores congelados
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def clean_data():
    spec = TaskSpec(feature_dim=4, num_classes=3)
    return gen_clean(spec, 300, np.random.default_rng(10))


def test_linear_classifier_separates_clean_data(clean_data):
    model = train_proxy(_clf("lin", [], 1), clean_data, floor=0.99)
    x, y = clean_data
    assert np.mean(model.predict(x) == y) >= 0.99


def test_train_proxy_floor_zero_always_succeeds(clean_data):
    model = train_proxy(_clf("p", [4], 2), clean_data, floor=0.0, min_steps=10, max_steps=10)
    assert model.params.flags.writeable is False


def test_train_proxy_same_seed_identical(clean_data):
    a = train_proxy(_clf("p", [8], 3), clean_data, rng=np.random.default_rng(0))
    b = train_proxy(_clf("p", [8], 3), clean_data, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(a.params, b.params)


def test_train_proxy_unreachable_floor_fails_loudly():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 4))
    y = rng.integers(0, 3, size=200)
    with pytest.raises(TrainingFailure):
        train_proxy(_clf("p", [4], 0), (x, y), floor=0.99, min_steps=50, max_steps=100)


def test_train_evaluators_meet_floor(clean_data):
    specs = [_clf("e1", [16], 11), _clf("e2", [32, 16], 12), _clf("e3", [8], 13)]
    evs = train_evaluators(specs, clean_data, np.random.default_rng(1))
    assert evs.names == ["e1", "e2", "e3"]
    assert all(e.clean_error <= 0.05 for e in evs)
    assert len(train_evaluators([], clean_data)) == 0


def test_evaluator_identical_to_proxy_rejected(clean_data):
    proxy = train_proxy(_clf("proxy", [8], 3), clean_data)
    with pytest.raises(ConfigError):
        train_evaluators([_clf("twin", [8], 3)], clean_data, proxy=proxy)
    with pytest.raises(ConfigError):
        train_evaluators([_clf("a", [8], 4), _clf("a", [4], 5)], clean_data)


def test_evaluate_anchors(small_bundle):
    b = small_bundle
    split = b.tests["matched"]
    # exact clean features (perfect enhancer, or identity on clean inputs) give each stored clean error
    clean_err = evaluate(None, b.evaluators, (split.clean, split.labels))
    for e in b.evaluators:
        assert clean_err[e.name] == e.clean_error
    assert evaluate(None, b.recognizer_set(), (split.clean, split.labels))["proxy"] == b.proxy_clean_error

    # identity enhancer on inputs mixed at exactly -4 dB
    noise = gen_noise("gaussian", split.clean.shape, np.random.default_rng(21))
    at_minus_4 = mix_noise(split.clean, noise, -4.0)
    noisy_err = evaluate(None, b.evaluators, (at_minus_4, split.labels))
    for e in b.evaluators:
        assert noisy_err[e.name] > e.clean_error


def test_evaluator_clean_error_is_held_out(clean_data):
    x, y = clean_data
    heldout = gen_clean(TaskSpec(feature_dim=4, num_classes=3), 200, np.random.default_rng(77))
    evs = train_evaluators([_clf("e1", [8], 21), _clf("e2", [], 22)], (x, y), np.random.default_rng(2), heldout=heldout)
    for e in evs:
        assert e.clean_error == 1.0 - np.mean(e.model.predict(heldout[0]) == heldout[1])


def test_evaluator_clean_error_defaults_to_unseen_tail(clean_data):
    x, y = clean_data
    evs = train_evaluators([_clf("e1", [8], 31)], (x, y), np.random.default_rng(3), floor=0.0)
    e = evs.evaluators[0]
    assert e.clean_error == 1.0 - np.mean(e.model.predict(x[240:]) == y[240:])


def test_evaluate_permutation_invariance(small_bundle):
    from d4am.tasks import EvaluatorSet

    b = small_bundle
    split = b.tests["matched"]
    fwd = evaluate(None, b.evaluators, (split.noisy, split.labels))
    rev = evaluate(None, EvaluatorSet(list(reversed(b.evaluators.evaluators))), (split.noisy, split.labels))
    assert fwd == rev


def test_bundle_shapes_and_label_fraction(small_config):
    from dataclasses import replace

    from d4am.tasks import build_bundle

    task = replace(small_config.task, label_fraction=0.25)
    b = build_bundle(
        task, small_config.enhancer_spec, small_config.proxy_spec, list(small_config.evaluator_specs),
        floor=small_config.accuracy_floor,
    )
    assert b.reg_train.noisy.shape == (240, 4)
    assert b.cls_train.noisy.shape == (60, 4)
    assert set(b.tests) == {"matched", "mismatched", "high_snr"}
    assert [name for name, _m in b.recognizers()][0] == "proxy"


def test_dataset_save_load(tmp_path, small_bundle):
    meta_path = save_dataset(tmp_path, "val", small_bundle.val, small_bundle.task)
    split, meta = load_dataset(tmp_path, "val")
    assert meta_path.name == "val.json"
    assert meta["rows"] == small_bundle.task.val_size
    np.testing.assert_array_equal(split.noisy, small_bundle.val.noisy)
    np.testing.assert_array_equal(split.labels, small_bundle.val.labels)
    with pytest.raises(DataError):
        load_dataset(tmp_path, "missing")
