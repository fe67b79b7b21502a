import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dsmlangevin import dist_zoo, transport as tr
from dsmlangevin.dist_zoo import gaussian


def brute_force_w2(a, b):
    n = a.shape[0]
    best = min(sum(float(np.sum((a[i] - b[p[i]]) ** 2)) for i in range(n))
               for p in itertools.permutations(range(n)))
    return math.sqrt(best / n)


def test_w2_exact_examples():
    a = np.random.default_rng(0).standard_normal((20, 3))
    assert tr.w2_exact(a, a).value == 0.0
    assert tr.w2_exact(np.array([0.0, 1.0]), np.array([1.0, 2.0])).value == 1.0
    assert tr.w2_exact(np.array([0.0, 10.0]), np.array([10.0, 0.0])).value == 0.0


def test_w2_exact_errors():
    with pytest.raises(ValueError, match="equal batch sizes"):
        tr.w2_exact(np.zeros((3, 1)), np.zeros((4, 1)))
    with pytest.raises(ValueError, match="dimension"):
        tr.w2_exact(np.zeros((3, 1)), np.zeros((3, 2)))
    with pytest.raises(tr.BatchTooLargeError, match="sliced"):
        tr.w2_exact(np.zeros((tr.EXACT_CAP + 1, 2)), np.zeros((tr.EXACT_CAP + 1, 2)))


def test_w2_exact_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(30):
        n, d = rng.integers(1, 7), rng.integers(1, 4)
        a, b = rng.standard_normal((n, d)), rng.standard_normal((n, d)) + 1
        assert tr.w2_exact(a, b).value == pytest.approx(brute_force_w2(a, b), rel=1e-12, abs=1e-15)


batches = st.integers(2, 12).flatmap(lambda n: st.tuples(
    *(arrays(np.float64, (n, 2), elements=st.floats(-10, 10)) for _ in range(3))))


@settings(max_examples=60)
@given(batches)
def test_metric_axioms(abc):
    a, b, c = abc
    ab, ba = tr.w2_exact(a, b).value, tr.w2_exact(b, a).value
    assert ab == pytest.approx(ba, rel=1e-12, abs=1e-12)
    assert tr.w2_exact(a, a).value == 0.0
    assert ab <= tr.w2_exact(a, c).value + tr.w2_exact(c, b).value + 1e-9


@given(batches)
def test_identity_matching_is_an_upper_bound(abc):
    a, b, _ = abc
    assert tr.w2_exact(a, b).value ** 2 <= float(np.mean(np.sum((a - b) ** 2, axis=1))) * (1 + 1e-12) + 1e-12


def test_w2_gaussian_examples():
    assert tr.w2_gaussian([0], [[1]], [0], [[4]]).value == pytest.approx(1.0)
    val = tr.w2_gaussian(np.zeros(4), np.eye(4), np.zeros(4), 2 * np.eye(4)).value
    assert val == pytest.approx(2 * (math.sqrt(2) - 1), rel=1e-12)
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert tr.w2_gaussian([1, 2], S, [1, 2], S).value == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(ValueError, match="positive semi-definite"):
        tr.w2_gaussian([0, 0], [[1, 2], [2, 1]], [0, 0], np.eye(2))


def test_w2_gaussian_against_commuting_oracle():
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    l1, l2 = np.array([1.0, 2.0, 0.5]), np.array([0.3, 4.0, 1.0])
    S1, S2 = Q @ np.diag(l1) @ Q.T, Q @ np.diag(l2) @ Q.T
    mu1, mu2 = rng.standard_normal(3), rng.standard_normal(3)
    expected = math.sqrt(float(np.sum((mu1 - mu2) ** 2) + np.sum((np.sqrt(l1) - np.sqrt(l2)) ** 2)))
    assert tr.w2_gaussian(mu1, S1, mu2, S2).value == pytest.approx(expected, rel=1e-10)


def test_w2_sliced_examples():
    a = np.random.default_rng(0).standard_normal((300, 3))
    assert tr.w2_sliced(a, a, 16, 0).value == 0.0
    x, y = np.random.default_rng(1).standard_normal((2, 500, 1))
    assert tr.w2_sliced(x, y, 8, 0).value == tr.w2_exact(x, y).value
    rng = np.random.default_rng(2)
    p = rng.standard_normal((10_000, 2))
    q = rng.standard_normal((10_000, 2)) + [3.0, 0.0]
    assert tr.w2_sliced(p, q, 256, 5).value == pytest.approx(3 / math.sqrt(2), rel=0.05)


def test_sliced_never_exceeds_exact():
    rng = np.random.default_rng(4)
    for _ in range(10):
        d = int(rng.integers(2, 5))
        a = rng.standard_normal((200, d))
        b = rng.standard_normal((200, d)) * rng.uniform(0.5, 2) + rng.standard_normal(d)
        s = tr.w2_sliced(a, b, 64, int(rng.integers(1000)))
        assert s.value <= tr.w2_exact(a, b).value + 3 * s.std_error


def test_plug_in_converges_to_closed_form_for_separated_gaussians():
    S1, S2 = np.array([[1.0, 0.3], [0.3, 0.5]]), np.array([[0.6, -0.2], [-0.2, 1.2]])
    mu1, mu2 = np.zeros(2), np.array([3.0, 2.0])
    true = tr.w2_gaussian(mu1, S1, mu2, S2).value
    errs = []
    for seed in range(5):
        a = dist_zoo.sample(gaussian(mu1, S1), 512, seed, "a").points
        b = dist_zoo.sample(gaussian(mu2, S2), 512, seed, "b").points
        errs.append(abs(tr.w2_exact(a, b).value - true) / true)
    assert float(np.median(errs)) <= 0.10


def test_smoothing_gap_examples():
    spec = dist_zoo.zoo()["trimodal_2d"]
    assert tr.smoothing_gap_check(spec, 0.0, 256, seed=0) == (0.0, 0.0)
    measured, bound = tr.smoothing_gap_check(gaussian([0.0], 1.0), 1.0, 2048, seed=1)
    assert bound == 1.0
    assert tr.w2_gaussian([0], [[1]], [0], [[2]]).value == pytest.approx(math.sqrt(2) - 1)
    assert measured <= bound
    measured, bound = tr.smoothing_gap_check(gaussian(np.zeros(4), 1.0), 0.25, 512, seed=2)
    assert bound == pytest.approx(1.0)
    assert tr.w2_gaussian(np.zeros(4), np.eye(4), np.zeros(4), 1.25 * np.eye(4)).value == pytest.approx(
        2 * (math.sqrt(1.25) - 1))
    assert measured <= bound
    with pytest.raises(ValueError):
        tr.smoothing_gap_check(spec, -1.0, 10, 0)


def test_bootstrap_se_positive_and_deterministic():
    a, b = tr.smoothing_gap_batches(dist_zoo.zoo()["bimodal_1d"], 0.5, 256, seed=3)
    se = tr.w2_bootstrap_se(a, b, 50, seed=1)
    assert se > 0 and se == tr.w2_bootstrap_se(a, b, 50, seed=1)


def test_quantile_batch():
    q = tr.gaussian_quantile_batch(1.0, 4.0, 1001)
    assert q[500, 0] == pytest.approx(1.0)
    assert q.mean() == pytest.approx(1.0)


def test_estimate_json():
    doc = tr.w2_exact(np.zeros((3, 1)), np.ones((3, 1))).to_dict()
    assert doc == {"value": 1.0, "method": "exact-assignment", "n": 3, "std_error": None}
