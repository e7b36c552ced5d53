import numpy as np
import pytest

from koopmap.dataset import (
    TimeSeries,
    add_iid_noise,
    central_difference_field,
    delay_embed,
)
from koopmap.exceptions import DatasetTooSmallError, ParameterError


def make_ts(n=50, d=2, seed=0, dt=0.1):
    rng = np.random.default_rng(seed)
    return TimeSeries(rng.normal(size=(n, d)), dt)


def test_timeseries_validation():
    with pytest.raises(DatasetTooSmallError):
        TimeSeries(np.zeros((2, 3)), 0.1)
    with pytest.raises(ParameterError):
        TimeSeries(np.zeros((5, 3)), 0.0)


def test_delay_embed_identity_at_s1():
    ts = make_ts()
    emb = delay_embed(ts, 1)
    assert emb.samples.shape == ts.samples.shape
    np.testing.assert_array_equal(emb.samples, ts.samples)


def test_delay_embed_layout():
    # N=5, d=2, s=3: three rows of width six, row 0 = (x2, x1, x0)
    x = np.arange(10.0).reshape(5, 2)
    emb = delay_embed(TimeSeries(x, 1.0), 3)
    assert emb.samples.shape == (3, 6)
    np.testing.assert_array_equal(emb.samples[0], np.concatenate([x[2], x[1], x[0]]))
    np.testing.assert_array_equal(emb.samples[2], np.concatenate([x[4], x[3], x[2]]))


def test_delay_embed_row_count_invariant():
    ts = make_ts(n=40)
    for s in (1, 2, 7, 39):
        emb = delay_embed(ts, s)
        assert emb.n_samples + s - 1 == ts.n_samples


def test_delay_embed_ambient_width():
    ts = make_ts(n=1000, d=3)
    assert delay_embed(ts, 800).ambient_dim == 2400


def test_delay_embed_range_errors():
    ts = make_ts(n=10)
    for s in (0, 10, -1):
        with pytest.raises(ParameterError):
            delay_embed(ts, s)


def test_central_difference_exact_on_linear():
    t = 0.05 * np.arange(30)
    c = np.array([2.0, -1.5])
    ts = TimeSeries(t[:, None] * c[None, :] + 3.0, 0.05)
    est = central_difference_field(ts)
    np.testing.assert_allclose(est.vectors, np.tile(c, (28, 1)), atol=1e-12)
    np.testing.assert_allclose(est.speeds, np.linalg.norm(c), atol=1e-12)


def test_central_difference_second_order():
    # halving dt should quarter the max error against the analytic derivative
    omega = 2.3
    errs = []
    for dt in (0.02, 0.01):
        t = dt * np.arange(2000)
        ts = TimeSeries(np.sin(omega * t)[:, None], dt)
        est = central_difference_field(ts)
        truth = omega * np.cos(omega * t[1:-1])
        errs.append(np.max(np.abs(est.vectors[:, 0] - truth)))
    ratio = errs[0] / errs[1]
    assert 3.5 < ratio < 4.5


def test_central_difference_linearity():
    tsx = make_ts(seed=1)
    tsy = make_ts(seed=2)
    a, b = 0.7, -2.1
    combo = TimeSeries(a * tsx.samples + b * tsy.samples, tsx.dt)
    lhs = central_difference_field(combo).vectors
    rhs = a * central_difference_field(tsx).vectors + b * central_difference_field(tsy).vectors
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_noise_zero_std_is_identity():
    ts = make_ts()
    out = add_iid_noise(ts, 0.0, seed=42)
    np.testing.assert_array_equal(out.samples, ts.samples)


def test_noise_deterministic_given_seed():
    ts = make_ts()
    a = add_iid_noise(ts, 0.3, seed=7)
    b = add_iid_noise(ts, 0.3, seed=7)
    np.testing.assert_array_equal(a.samples, b.samples)
    c = add_iid_noise(ts, 0.3, seed=8)
    assert np.any(a.samples != c.samples)


def test_noise_negative_std_rejected():
    with pytest.raises(ParameterError):
        add_iid_noise(make_ts(), -0.1, seed=0)


def test_noise_empirical_variance():
    ts = TimeSeries(np.zeros((100000, 1)), 1.0)
    out = add_iid_noise(ts, 0.5, seed=3)
    assert abs(out.samples.var() - 0.25) / 0.25 < 0.03


def test_delay_noise_pair_distance_bias():
    # mean time-averaged squared distance between far-apart noisy delay
    # vectors approaches 2 * (d * std^2)
    d, std, s = 3, 0.1, 200
    ts = TimeSeries(np.zeros((3000, d)), 1.0)
    noisy = add_iid_noise(ts, std, seed=5)
    emb = delay_embed(noisy, s)
    x = emb.scaled_points()
    i = np.arange(0, 800, 40)
    j = i + 1500  # non-overlapping windows
    d2 = np.sum((x[i] - x[j]) ** 2, axis=1)
    target = 2 * d * std**2
    assert abs(d2.mean() - target) / target < 0.05
