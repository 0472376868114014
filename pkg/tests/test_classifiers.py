import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chronicpredict.classifiers import (
    LogisticModel,
    MlpModel,
    MlpParams,
    SingleClassError,
    ThresholdRule,
    TrainConfig,
    TrainingDivergenceError,
    init_mlp,
    logistic_predict,
    mlp_forward,
    mlp_loss,
    mlp_predict,
    model_from_json,
    model_to_json,
    sigmoid,
    threshold_predict,
    train_logistic,
    train_mlp,
)
from chronicpredict.features import FEATURE_NAMES, FeatureVector, NormalizationParams

from oracles import logistic_gradcheck, mlp_gradcheck, ref_mlp_logits


def fv(sleep=0, age=40, **kw) -> FeatureVector:
    base = dict.fromkeys(FEATURE_NAMES, 0)
    base.update(kw, sleep=sleep, age=age)
    return FeatureVector(**base)


def live_normalizer(names):
    k = len(names)
    return NormalizationParams(tuple(names), np.zeros(k), np.ones(k), np.zeros(k, dtype=bool))


# -- threshold --------------------------------------------------------------


@pytest.mark.parametrize("sleep, expected", [(67, True), (66, False), (0, False), (90, True)])
def test_threshold_boundary(sleep, expected):
    assert threshold_predict(ThresholdRule(), fv(sleep)) is expected


@given(st.integers(0, 90), st.integers(0, 90))
def test_threshold_monotone(a, b):
    lo, hi = sorted((a, b))
    rule = ThresholdRule()
    assert threshold_predict(rule, fv(lo)) <= threshold_predict(rule, fv(hi))


def test_threshold_rule_invariants():
    with pytest.raises(ValueError):
        ThresholdRule(min_stays=91)
    with pytest.raises(ValueError):
        ThresholdRule(min_stays=-1)
    assert ThresholdRule(0).predict_array(np.array([0, 5])).all()


# -- logistic ---------------------------------------------------------------


def separable_toy():
    x = np.array([[-1.0]] * 50 + [[1.0]] * 50)
    y = np.array([0.0] * 50 + [1.0] * 50)
    return x, y


def test_logistic_separable_toy():
    x, y = separable_toy()
    m = train_logistic(x, y, TrainConfig(max_epochs=200), names=("x",))
    assert np.mean(m.predict(x) == y.astype(bool)) == 1.0


def test_logistic_single_class():
    with pytest.raises(SingleClassError):
        train_logistic(np.arange(10.0).reshape(5, 2), np.ones(5))


@pytest.mark.parametrize("seed", range(10))
def test_logistic_gradient_matches_finite_differences(seed):
    assert logistic_gradcheck(seed) < 1e-4


def noisy_pair(seed, n=400):
    rng = np.random.default_rng(seed)
    sleep = rng.integers(0, 91, n).astype(float)
    age = rng.integers(18, 80, n).astype(float)
    y = (rng.random(n) < sigmoid((sleep - 60) / 8 + (age - 45) / 30)).astype(float)
    return np.column_stack([sleep, age]), y


def test_logistic_loss_history_non_increasing():
    x, y = noisy_pair(0)
    m = train_logistic(x, y)
    h = np.array(m.loss_history)
    assert len(h) > 10
    assert np.all(np.diff(h) <= 0)
    assert h[-1] < h[0]


def test_logistic_zero_params_give_half():
    m = LogisticModel(np.zeros(2), 0.0, live_normalizer(("sleep", "age")))
    for s, a in [(0, 18), (90, 80), (45, 33)]:
        assert logistic_predict(m, fv(s, a)) == (0.5, True)


def test_logistic_large_bias_saturates():
    m = LogisticModel(np.zeros(2), 50.0, live_normalizer(("sleep", "age")))
    p, label = logistic_predict(m, fv(3, 20))
    assert p > 1 - 1e-12 and label


def test_logistic_scoring_matches_hand_sigmoid():
    rng = np.random.default_rng(4)
    for _ in range(10):
        w, b = rng.normal(size=2), float(rng.normal())
        mean, std = rng.uniform(10, 50, 2), rng.uniform(1, 20, 2)
        norm = NormalizationParams(("sleep", "age"), mean, std, np.zeros(2, dtype=bool))
        f = fv(int(rng.integers(0, 91)), int(rng.integers(18, 80)))
        z = w[0] * (f.sleep - mean[0]) / std[0] + w[1] * (f.age - mean[1]) / std[1] + b
        p, _ = logistic_predict(LogisticModel(w, b, norm), f)
        assert p == pytest.approx(1 / (1 + math.exp(-z)), rel=1e-12)


def test_logistic_boundary_is_a_half_plane():
    x, y = noisy_pair(1)
    m = train_logistic(x, y)
    rng = np.random.default_rng(2)
    for _ in range(200):
        a, c = rng.uniform([0, 18], [90, 80], size=(2, 2))
        t = np.linspace(0, 1, 41)[:, None]
        labels = m.predict(a + t * (c - a))
        assert np.count_nonzero(labels[1:] != labels[:-1]) <= 1
        mid = m.predict(((a + c) / 2)[None, :])[0]
        if m.predict(a[None, :])[0] and m.predict(c[None, :])[0]:
            assert mid


def test_logistic_deterministic():
    x, y = noisy_pair(3)
    a, b = train_logistic(x, y), train_logistic(x, y)
    assert model_to_json(a) == model_to_json(b)


def test_logistic_divergence_raises():
    x, y = noisy_pair(5)
    with pytest.raises(TrainingDivergenceError, match="lower learning rate"):
        train_logistic(x * 1e3, y, TrainConfig(learning_rate=1e308))


# -- mlp --------------------------------------------------------------------


def xor_clusters(seed=0, per=50):
    rng = np.random.default_rng(seed)
    centres = [((-2, -2), 0), ((2, 2), 0), ((-2, 2), 1), ((2, -2), 1)]
    xs, ys = [], []
    for (cx, cy), label in centres:
        r = rng.uniform(0, 0.8, per)
        t = rng.uniform(0, 2 * np.pi, per)
        xs.append(np.column_stack([cx + r * np.cos(t), cy + r * np.sin(t)]))
        ys.append(np.full(per, float(label)))
    return np.vstack(xs), np.concatenate(ys)


def test_mlp_fits_xor():
    x, y = xor_clusters()
    m = train_mlp(x, y, TrainConfig(seed=1), names=("a", "b"))
    assert np.mean(m.predict(x) == y.astype(bool)) >= 0.98


def test_mlp_zero_epochs_is_initialisation():
    x, y = xor_clusters()
    m = train_mlp(x, y, TrainConfig(max_epochs=0, seed=9), names=("a", "b"), hidden_units=7)
    init = init_mlp(2, 7, np.random.default_rng(9))
    assert np.array_equal(m.params.w_hidden, init.w_hidden)
    assert np.array_equal(m.params.w_out, init.w_out)
    assert np.all(m.params.b_hidden == 0) and m.params.b_out == 0.0
    lim = math.sqrt(6 / (2 + 7))
    assert np.all(np.abs(init.w_hidden) <= lim)


@pytest.mark.parametrize("seed", range(10))
def test_mlp_gradient_matches_finite_differences(seed):
    assert mlp_gradcheck(seed) < 1e-4


def test_mlp_forward_matches_recomputation():
    rng = np.random.default_rng(6)
    p = MlpParams(rng.normal(size=(10, 6)), rng.normal(size=6), rng.normal(size=6), float(rng.normal()))
    x = rng.normal(size=(8, 10))
    assert np.allclose(mlp_forward(p, x), ref_mlp_logits(p, x), rtol=1e-12, atol=1e-12)


def test_mlp_zero_weights_give_half():
    p = MlpParams(np.zeros((10, 100)), np.zeros(100), np.zeros(100), 0.0)
    m = MlpModel(p, live_normalizer(FEATURE_NAMES))
    assert mlp_predict(m, fv(80, 30, bar=4)) == (0.5, True)


def test_mlp_dead_relu_outputs_sigmoid_of_bias():
    rng = np.random.default_rng(7)
    p = MlpParams(rng.normal(size=(10, 100)) * 0.01, np.full(100, -10.0), rng.normal(size=100), -1.3)
    m = MlpModel(p, live_normalizer(FEATURE_NAMES))
    prob, label = mlp_predict(m, fv(5, 30, log=2))
    assert prob == pytest.approx(1 / (1 + math.exp(1.3)), rel=1e-12)
    assert not label


def test_mlp_regularization_bites():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(40, 10))
    y = (rng.random(40) < 0.5).astype(float)
    cfg = TrainConfig(learning_rate=0.05, max_epochs=300, seed=2)
    free = train_mlp(x, y, cfg, l2_penalty=0.0)
    tied = train_mlp(x, y, cfg, l2_penalty=0.05)
    assert free.loss_history[-1] < tied.loss_history[-1]


def test_mlp_deterministic_and_seed_sensitive():
    x, y = xor_clusters(3)
    cfg = TrainConfig(max_epochs=20, seed=4)
    a = train_mlp(x, y, cfg, names=("a", "b"), hidden_units=16)
    b = train_mlp(x, y, cfg, names=("a", "b"), hidden_units=16)
    c = train_mlp(x, y, TrainConfig(max_epochs=20, seed=5), names=("a", "b"), hidden_units=16)
    assert a.params.w_hidden.tobytes() == b.params.w_hidden.tobytes()
    assert a.loss_history == b.loss_history
    assert not np.array_equal(a.params.w_hidden, c.params.w_hidden)


def test_mlp_learning_rate_decays_and_stops():
    x, y = xor_clusters(4)
    m = train_mlp(x, y, TrainConfig(learning_rate=0.05, max_epochs=2000, seed=0), names=("a", "b"), hidden_units=8)
    assert m.final_learning_rate < 1e-6
    assert len(m.loss_history) < 2000


def test_shuffled_labels_score_near_base_rate():
    rng = np.random.default_rng(10)
    n_train, n_test = 2000, 1000
    x = np.column_stack([rng.integers(18, 80, n_train + n_test), rng.poisson(20, (n_train + n_test, 9))]).astype(float)
    y = (x[:, 2] > 25).astype(float)
    y = rng.permutation(y)
    base = max(y[n_train:].mean(), 1 - y[n_train:].mean())
    slack = 3 * math.sqrt(base * (1 - base) / n_test) + 0.01
    lg = train_logistic(x[:n_train, [2, 0]], y[:n_train])
    acc = np.mean(lg.predict(x[n_train:, [2, 0]]) == y[n_train:].astype(bool))
    assert abs(acc - base) < slack
    mlp = train_mlp(x[:n_train], y[:n_train], TrainConfig(max_epochs=15, seed=0))
    acc = np.mean(mlp.predict(x[n_train:]) == y[n_train:].astype(bool))
    assert abs(acc - base) < slack


def test_mlp_divergence_raises():
    x, y = xor_clusters(5)
    with pytest.raises(TrainingDivergenceError):
        train_mlp(x * 1e3, y, TrainConfig(learning_rate=1e300, max_epochs=5), names=("a", "b"))


def test_mlp_loss_includes_penalty():
    rng = np.random.default_rng(11)
    p = init_mlp(10, 5, rng)
    x, y = rng.normal(size=(4, 10)), np.array([0.0, 1, 1, 0])
    extra = 0.05 * (np.sum(p.w_hidden ** 2) + np.sum(p.w_out ** 2)) / (2 * 10)
    assert mlp_loss(p, x, y, 0.05, 10) - mlp_loss(p, x, y, 0.0, 10) == pytest.approx(extra, rel=1e-12)


# -- serialization ----------------------------------------------------------


def test_models_round_trip_through_json():
    x, y = xor_clusters(6)
    m = train_mlp(x, y, TrainConfig(max_epochs=3), names=("a", "b"), hidden_units=5)
    back = model_from_json(model_to_json(m))
    assert isinstance(back, MlpModel)
    assert np.array_equal(back.predict_proba(x), m.predict_proba(x))
    doc = json.loads(model_to_json(m))
    assert len(doc["w_hidden"]) == 10 and doc["architecture"]["hidden_units"] == 5
    assert doc["w_hidden"][:5] == m.params.w_hidden[0].tolist()  # row-major

    xl, yl = noisy_pair(7)
    lg = train_logistic(xl, yl)
    back = model_from_json(model_to_json(lg))
    assert isinstance(back, LogisticModel)
    assert np.array_equal(back.predict_proba(xl), lg.predict_proba(xl))
    with pytest.raises(ValueError):
        model_from_json('{"model": "svm"}')


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rat": 0.1})
