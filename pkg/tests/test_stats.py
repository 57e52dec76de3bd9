import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdrecog.stats import (EstimatorParams, SlidingEstimator, binary_entropy, min_entropy_per_bit, skr_cap,
                           window_means, window_size)


@pytest.mark.parametrize("p, h", [(0.5, 1.0), (0.0, 0.0), (1.0, 0.0)])
def test_binary_entropy_exact_points(p, h):
    assert binary_entropy(p) == h


def test_binary_entropy_one_third():
    # -(1/3)log2(1/3) - (2/3)log2(2/3) = log2(3) - 2/3
    assert binary_entropy(1 / 3) == pytest.approx(math.log2(3) - 2 / 3, abs=1e-15)
    assert binary_entropy(1 / 3) == pytest.approx(0.918296, abs=1e-6)


@pytest.mark.parametrize("fn", [binary_entropy, min_entropy_per_bit, skr_cap])
@pytest.mark.parametrize("p", [-0.01, 1.0001, float("nan")])
def test_domain_errors(fn, p):
    with pytest.raises(ValueError):
        fn(p)


@pytest.mark.parametrize("p, h", [(0.5, 1.0), (1.0, 0.0), (0.0, 0.0)])
def test_min_entropy_trivial(p, h):
    assert min_entropy_per_bit(p) == h


def test_min_entropy_one_third():
    assert min_entropy_per_bit(1 / 3) == pytest.approx(-math.log2(2 / 3), abs=1e-15)
    assert min_entropy_per_bit(1 / 3) == pytest.approx(0.584963, abs=1e-6)


@given(st.floats(0, 1))
def test_min_entropy_never_exceeds_shannon(p):
    assert min_entropy_per_bit(p) <= binary_entropy(p) + 1e-12


def test_skr_cap_values():
    assert skr_cap(0.5) == 1.0
    assert skr_cap(1 / 3) == pytest.approx(0.918296, abs=1e-6)
    assert skr_cap(2 / 3) == pytest.approx(0.918296, abs=1e-6)


def test_entropy_symmetry_grid():
    for p in np.linspace(0, 1, 1001):
        assert abs(binary_entropy(p) - binary_entropy(1 - p)) <= 1e-12


@pytest.mark.parametrize("delta, eps, n", [(0.05, 0.001, 1521), (0.1, 0.01, 265)])
def test_window_size_examples(delta, eps, n):
    assert window_size(delta, eps) == n


@pytest.mark.parametrize("delta, eps", [(0.0, 0.1), (-0.1, 0.1), (0.1, 0.0), (0.1, 1.5), (float("nan"), 0.1)])
def test_window_size_domain(delta, eps):
    with pytest.raises(ValueError):
        window_size(delta, eps)


@given(st.floats(1e-3, 0.5), st.floats(1e-9, 1.0))
def test_window_size_is_minimal(delta, eps):
    n = window_size(delta, eps)
    bound = math.log(2 / eps) / (2 * delta * delta)
    assert n >= bound
    assert n - 1 < bound or n == 1


@given(st.floats(1e-3, 0.5), st.floats(1e-9, 0.5))
def test_halving_delta_quadruples_bound(delta, eps):
    raw = lambda d: math.log(2 / eps) / (2 * d * d)
    assert raw(delta / 2) == 4 * raw(delta)
    assert window_size(delta / 2, eps) >= window_size(delta, eps)


@given(st.floats(1e-3, 0.5), st.floats(1e-6, 0.5), st.floats(1.0, 3.0))
def test_window_size_monotone(delta, eps, factor):
    assert window_size(delta, min(1.0, eps * factor)) <= window_size(delta, eps)
    assert window_size(min(1.0, delta * factor), eps) <= window_size(delta, eps)


def test_estimator_params():
    p = EstimatorParams.derive(0.05, 0.001)
    assert p.window_n == 1521
    assert EstimatorParams.derive(0.05, 0.001, 50_000).window_n == 50_000
    with pytest.raises(ValueError, match="below the Chernoff-Hoeffding"):
        EstimatorParams(0.05, 0.001, 1520)


def _push_all(est, bits):
    for b in bits:
        est.push(b)
    return est


def test_estimator_examples():
    assert _push_all(SlidingEstimator(4), [0, 1, 0, 1]).mean() == 0.5
    assert _push_all(SlidingEstimator(2), [1, 1, 0]).mean() == 0.5
    est = _push_all(SlidingEstimator(3), [1, 1])
    assert est.mean() is None and not est.ready
    assert _push_all(SlidingEstimator(5), [1] * 5).mean() == 1.0
    with pytest.raises(ValueError):
        SlidingEstimator(3).push(2)


def test_estimator_direct_division():
    bits = np.array([1] * 722 + [0] * (1521 - 722), dtype=np.uint8)
    np.random.default_rng(0).shuffle(bits)
    est = SlidingEstimator(1521).extend(bits)
    assert est.mean() == 722 / 1521
    assert est.mean() == pytest.approx(0.474688, abs=1e-6)


def test_estimator_over_two_distributions_matches_weighted_average():
    rng = np.random.default_rng(4)
    n = 1000
    bits = np.concatenate([(rng.random(3000) < 0.5), (rng.random(300) < 1 / 3)]).astype(np.uint8)
    est = SlidingEstimator(n).extend(bits)
    window = bits[-n:]
    n1 = 300
    n0 = n - n1
    mu0 = window[:n0].mean()
    mu1 = window[n0:].mean()
    assert est.mean() == pytest.approx((mu0 * n0 + mu1 * n1) / n, abs=1e-12)
    assert np.array_equal(est.contents(), window)


@given(st.integers(1, 20), st.lists(st.integers(0, 1), max_size=80), st.lists(st.integers(0, 80), max_size=3))
def test_running_sum_matches_recount(n, bits, cuts):
    arr = np.array(bits, dtype=np.uint8)
    one = SlidingEstimator(n)
    for b in bits:
        one.push(b)
        assert one.running_sum == int(one.contents().sum())
        assert 0 <= one.running_sum <= min(one.filled, n)
        m = one.mean()
        assert m is None or 0.0 <= m <= 1.0
    block = SlidingEstimator(n)
    for piece in np.split(arr, sorted(c for c in cuts if c <= arr.size)):
        block.extend(piece)
    assert block.running_sum == one.running_sum and block.filled == one.filled
    assert np.array_equal(block.contents(), one.contents())
    assert block.seen == one.seen == len(bits)


def test_window_means():
    bits = np.array([1, 0, 1, 1, 0, 0], dtype=np.uint8)
    m = window_means(bits, 3)
    assert np.isnan(m[:2]).all()
    assert m[2:].tolist() == pytest.approx([2 / 3, 2 / 3, 2 / 3, 1 / 3])
    assert np.isnan(window_means(bits[:2], 3)).all()


def test_empirical_confidence_of_window_size():
    n = window_size(0.05, 0.001)
    rng = np.random.default_rng(2024)
    means = (rng.random((10_000, n)) < 0.5).mean(axis=1)
    assert np.mean(np.abs(means - 0.5) > 0.05) <= 0.001
