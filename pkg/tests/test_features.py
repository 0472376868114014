import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chronicpredict.features import (
    FEATURE_NAMES,
    FeatureVector,
    NoAnchorError,
    apply_normalizer,
    extract_features,
    feature_matrix,
    fit_normalizer,
    fit_normalizer_array,
)

from conftest import at, history, sleeps_on


def vec(**kw) -> FeatureVector:
    base = dict.fromkeys(FEATURE_NAMES, 0)
    base.update(kw)
    return FeatureVector(**base)


def test_single_sleep_only():
    f = extract_features(sleeps_on([0], age=52))
    assert f == vec(age=52, sleep=1)


def test_sleeping_every_day_saturates():
    assert extract_features(sleeps_on(range(120))).sleep == 90


def test_keyword_categories_count_once_per_record():
    h = history(events=[(at(0), "SLEEP"), (at(3), "LOG", (2, 0, 0, 1, 0))])
    assert extract_features(h) == vec(age=40, sleep=1, log=1, police=1, violence=1)


def test_duplicate_sleeps_on_one_day_count_once():
    h = history(events=[(at(0, 1), "SLEEP"), (at(0, 22), "SLEEP"), (at(1, 2), "SLEEP")])
    assert extract_features(h).sleep == 2


def test_window_is_inclusive_of_day_89_only():
    h = history(events=[(at(0), "SLEEP"), (at(89), "BAR"), (at(90), "BAR"), (at(-1), "COUNSELLOR")])
    f = extract_features(h)
    assert (f.bar, f.counsellor) == (1, 0)


def test_no_anchor():
    with pytest.raises(NoAnchorError):
        extract_features(history(events=[(at(0), "LOG")]))


KINDS = ["SLEEP", "BAR", "LOG", "COUNSELLOR"]


def random_events(rng: random.Random, lo: int, hi: int, n: int):
    out = []
    for _ in range(n):
        counts = tuple(rng.choice([0, 0, 0, 1, 3]) for _ in range(5))
        out.append((at(rng.randint(lo, hi), rng.randint(0, 23)), rng.choice(KINDS), counts))
    return out


def test_out_of_window_events_have_no_effect():
    rng = random.Random(1)
    for _ in range(30):
        inside = [(at(0, 5), "SLEEP")] + random_events(rng, 0, 89, rng.randint(0, 80))
        outside = random_events(rng, 90, 600, rng.randint(1, 80))
        before = [(at(-rng.randint(1, 50)), k, c) for _, k, c in random_events(rng, 0, 0, 5) if k != "SLEEP"]
        a = extract_features(history(events=inside))
        b = extract_features(history(events=inside + outside + before))
        assert a == b


def test_reordering_does_not_matter():
    rng = random.Random(2)
    events = [(at(0, 5), "SLEEP")] + random_events(rng, 0, 200, 120)
    base = extract_features(history(events=events))
    for _ in range(10):
        rng.shuffle(events)
        assert extract_features(history(events=events)) == base


def test_counts_match_hand_tally():
    rng = random.Random(4)
    for _ in range(20):
        events = [(at(3, 9), "SLEEP", (0,) * 5)] + random_events(rng, 3, 150, 150)
        f = extract_features(history(events=events))
        inside = [e for e in events if 3 <= (e[0].date() - at(0).date()).days <= 3 + 89]
        assert f.sleep == len({ts.date() for ts, k, _ in inside if k == "SLEEP"})
        assert f.bar == sum(k == "BAR" for _, k, _ in inside)
        assert f.log == sum(k == "LOG" for _, k, _ in inside)
        assert f.counsellor == sum(k == "COUNSELLOR" for _, k, _ in inside)
        for j, name in enumerate(FEATURE_NAMES[5:]):
            assert getattr(f, name) == sum(c[j] > 0 for _, _, c in inside)
        assert 0 <= f.sleep <= 90


# -- normalizer -------------------------------------------------------------


def test_two_vectors_mean_and_sd():
    p = fit_normalizer([vec(sleep=0), vec(sleep=90)], ("sleep",))
    assert p.mean.tolist() == [45.0] and p.std.tolist() == [45.0]
    assert not p.constant.any()


def test_identical_vectors_flag_every_feature():
    v = vec(age=30, sleep=4, bar=2)
    p = fit_normalizer([v, v, v])
    assert p.constant.all()
    assert np.all(p.std == 1.0)
    assert np.all(apply_normalizer(v, p) == 0.0)


def test_need_two_vectors():
    with pytest.raises(ValueError):
        fit_normalizer([vec()])


def random_matrix(seed: int, n: int = 1000) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.integers(18, 80, n), rng.poisson(3, (n, 9))]).astype(float)
    return x


def test_transformed_set_is_standard():
    x = random_matrix(0)
    p = fit_normalizer_array(x, FEATURE_NAMES)
    z = p.apply(x)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0) - 1.0) < 1e-9)


def test_mean_maps_to_zero_and_one_sd_to_one():
    x = random_matrix(1, 50)
    p = fit_normalizer_array(x, FEATURE_NAMES)
    assert np.allclose(p.apply(p.mean), 0.0, atol=1e-12)
    assert np.allclose(p.apply(p.mean + p.std), 1.0, atol=1e-12)


def test_round_trip_recovers_input():
    x = random_matrix(2)
    p = fit_normalizer_array(x, FEATURE_NAMES)
    assert np.max(np.abs(p.invert(p.apply(x)) - x)) < 1e-12


def test_params_serialize():
    p = fit_normalizer_array(random_matrix(3, 20), FEATURE_NAMES)
    q = type(p).from_dict(p.to_dict())
    assert q.names == p.names
    assert np.array_equal(q.mean, p.mean) and np.array_equal(q.std, p.std)


def test_refit_with_test_rows_is_detectably_different():
    x = random_matrix(5, 200)
    train, test = x[:180], x[180:]
    p_train = fit_normalizer_array(train, FEATURE_NAMES)
    p_all = fit_normalizer_array(x, FEATURE_NAMES)
    assert not np.array_equal(p_train.apply(test), p_all.apply(test))


def test_feature_matrix_selects_columns():
    vs = [vec(age=20, sleep=3), vec(age=50, sleep=7)]
    assert feature_matrix(vs, ("sleep", "age")).tolist() == [[3, 20], [7, 50]]
    assert feature_matrix([], ("sleep",)).shape == (0, 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 500), min_size=10, max_size=10), min_size=2, max_size=40))
def test_std_non_negative_and_apply_finite(rows):
    x = np.array(rows, dtype=float)
    p = fit_normalizer_array(x, FEATURE_NAMES)
    assert np.all(p.std > 0)
    assert np.all(np.isfinite(p.apply(x)))
    assert np.array_equal(p.constant, x.std(axis=0) == 0)

