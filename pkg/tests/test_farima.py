import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg, signal, stats

from leoforecast.farima import (
    FarimaModel,
    NotPositiveDefiniteError,
    ar_infinity_weights,
    arma_autocovariance,
    choose_integer_d,
    durbin_levinson,
    estimate_d_preliminary,
    fit_arima,
    fit_arma,
    fit_farima,
    forecast,
    fracdiff_apply,
    fracdiff_coeffs,
    fracdiff_invert,
    gaussian_loglik,
    select_order,
)
from leoforecast.selfsim_stats import fgn_oracle


def simulate_arma(phi, psi, n, seed, burn=1000):
    e = np.random.default_rng(seed).normal(size=n + burn)
    return signal.lfilter(np.r_[1.0, psi], np.r_[1.0, -np.asarray(phi, float)], e)[burn:]


def random_pd_autocov(rng, p):
    x = signal.lfilter([1.0], [1.0, -rng.uniform(-0.9, 0.9)], rng.normal(size=400))
    x -= x.mean()
    return np.array([np.dot(x[: x.size - k], x[k:]) / x.size for k in range(p + 1)])


# fractional differencing ---------------------------------------------------


def test_coeff_examples():
    np.testing.assert_array_equal(fracdiff_coeffs(0.0, 5).coeffs, [1, 0, 0, 0, 0])
    np.testing.assert_allclose(fracdiff_coeffs(0.5, 3).coeffs, [1, -0.5, -0.125], atol=1e-15)
    np.testing.assert_array_equal(fracdiff_coeffs(1.0, 4).coeffs, [1, -1, 0, 0])


@settings(max_examples=30)
@given(d=st.floats(-0.49, 0.49), L=st.integers(2, 300))
def test_coeff_recursion(d, L):
    a = fracdiff_coeffs(d, L).coeffs
    j = np.arange(1, L)
    assert a[0] == 1.0
    np.testing.assert_allclose(a[1:], a[:-1] * (j - 1 - d) / j, rtol=1e-12, atol=1e-15)


def test_apply_examples():
    x = np.array([1.0, 2.0, 4.0])
    np.testing.assert_array_equal(fracdiff_apply(x, 0.0), x)
    np.testing.assert_allclose(fracdiff_apply(x, 1.0, "naive"), [1, 1, 2])
    np.testing.assert_allclose(fracdiff_apply(x, 1.0, "fft"), [1, 1, 2], atol=1e-12)
    np.testing.assert_allclose(fracdiff_invert(x, 0.0), x, atol=1e-12)


@pytest.mark.parametrize("d", [-0.45, 0.1, 0.3, 0.45])
def test_fft_matches_naive(d):
    x = np.random.default_rng(0).normal(size=4096)
    assert np.max(np.abs(fracdiff_apply(x, d, "fft") - fracdiff_apply(x, d, "naive"))) < 1e-8


@settings(max_examples=25, deadline=None)
@given(d=st.floats(-0.45, 0.45), n=st.integers(1, 2048), seed=st.integers(0, 2**32 - 1))
def test_round_trip(d, n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    assert np.max(np.abs(fracdiff_invert(fracdiff_apply(x, d), d) - x)) < 1e-6


def test_invert_is_apply_negative():
    x = np.random.default_rng(1).normal(size=100)
    np.testing.assert_array_equal(fracdiff_invert(x, 0.3), fracdiff_apply(x, -0.3))


# d estimation ----------------------------------------------------------------


def test_d_white_noise():
    d, clamped = estimate_d_preliminary(np.random.default_rng(2).normal(size=10_000))
    assert abs(d) < 0.07 and not clamped


def test_d_farima_sample():
    x = fracdiff_invert(np.random.default_rng(3).normal(size=10_000), 0.3)
    assert abs(estimate_d_preliminary(x)[0] - 0.3) < 0.1


def test_d_fgn():
    assert abs(estimate_d_preliminary(fgn_oracle(2**14, 0.7, seed=4))[0] - 0.2) < 0.07


def test_d_clamped_on_ramp():
    d, clamped = estimate_d_preliminary(np.arange(500, dtype=float))
    assert clamped and d == 0.49


def test_d_short_window_and_errors():
    d, _ = estimate_d_preliminary(np.random.default_rng(5).normal(size=64))
    assert -0.49 <= d <= 0.49
    with pytest.raises(ValueError):
        estimate_d_preliminary(np.ones(200))
    with pytest.raises(ValueError):
        estimate_d_preliminary(np.arange(20.0))


# Durbin-Levinson and likelihood ------------------------------------------------


def test_dl_ar1_exact():
    g = 2.0 * 0.6 ** np.arange(4)
    phi, v = durbin_levinson(g[:2])
    assert phi[0] == pytest.approx(0.6, abs=1e-12)
    phi3, _ = durbin_levinson(g)
    np.testing.assert_allclose(phi3, [0.6, 0, 0], atol=1e-12)


def test_dl_white_noise():
    phi, v = durbin_levinson([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(phi, [0.0, 0.0])
    assert v == 1.0


def test_dl_matches_dense_solve():
    rng = np.random.default_rng(6)
    for _ in range(100):
        p = int(rng.integers(1, 21))
        g = random_pd_autocov(rng, p)
        phi, _ = durbin_levinson(g)
        dense = linalg.solve(linalg.toeplitz(g[:p]), g[1:], assume_a="pos")
        np.testing.assert_allclose(phi, dense, atol=1e-10, rtol=0)


def test_dl_variance_non_increasing():
    g = random_pd_autocov(np.random.default_rng(7), 15)
    v = [durbin_levinson(g, order=k)[1] for k in range(16)]
    assert all(b <= a + 1e-15 for a, b in zip(v, v[1:]))


def test_dl_rejects_non_pd():
    with pytest.raises(NotPositiveDefiniteError):
        durbin_levinson([1.0, 1.0, 0.0])
    with pytest.raises(NotPositiveDefiniteError):
        durbin_levinson([0.0, 0.0])


def test_gaussian_loglik_matches_dense_density():
    rng = np.random.default_rng(8)
    g = arma_autocovariance([0.5, -0.2], [0.3], 1.3, 49)
    x = rng.normal(size=50)
    dense = stats.multivariate_normal(np.zeros(50), linalg.toeplitz(g)).logpdf(x)
    assert gaussian_loglik(x, g) == pytest.approx(dense, rel=1e-10)


def test_arma_autocovariance_ar1():
    g = arma_autocovariance([0.6], [], 1.0, 5)
    np.testing.assert_allclose(g, 0.6 ** np.arange(6) / (1 - 0.36), rtol=1e-10)


# ARMA estimation -----------------------------------------------------------------


@pytest.mark.parametrize("method", ["css", "whittle"])
def test_ar2_recovery(method):
    x = simulate_arma([0.5, -0.3], [], 10_000, seed=9)
    m = fit_arma(x, 2, 0, method)
    np.testing.assert_allclose(m.phi, [0.5, -0.3], atol=0.05)
    assert m.is_stationary() and m.is_invertible()


def test_css_and_whittle_agree():
    x = simulate_arma([0.5, -0.3], [], 10_000, seed=10)
    np.testing.assert_allclose(fit_arma(x, 2, 0, "css").phi, fit_arma(x, 2, 0, "whittle").phi, atol=0.05)


def test_arma11_recovery():
    x = simulate_arma([0.6], [0.3], 10_000, seed=11)
    m = fit_arma(x, 1, 1, "css")
    assert abs(m.phi[0] - 0.6) < 0.05 and abs(m.psi[0] - 0.3) < 0.05


def test_mle_small_sample_close_to_css():
    x = simulate_arma([0.5], [], 400, seed=12)
    assert abs(fit_arma(x, 1, 0, "mle").phi[0] - fit_arma(x, 1, 0, "css").phi[0]) < 0.05
    with pytest.raises(ValueError):
        fit_arma(np.zeros(5000), 1, 0, "mle")


def test_white_noise_sigma2():
    x = np.random.default_rng(13).normal(3.0, 2.0, size=5_000)
    m = fit_arma(x, 0, 0)
    assert m.sigma2_eps == pytest.approx(x.var(), rel=0.02)
    assert m.mean == pytest.approx(x.mean())


def test_fit_arma_errors():
    with pytest.raises(ValueError):
        fit_arma(np.ones(20), 2, 0)
    with pytest.raises(ValueError):
        fit_arma(np.random.default_rng(0).normal(size=100), 1, 0, "bogus")


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(0, 2), q=st.integers(0, 2))
def test_fits_always_stationary_invertible(seed, p, q):
    x = np.cumsum(np.random.default_rng(seed).normal(size=200))  # unit root on purpose
    m = fit_arma(x, p, q)
    assert m.is_stationary() and m.is_invertible() and m.sigma2_eps > 0


def test_model_invariants():
    with pytest.raises(ValueError):
        FarimaModel(1, 0.0, 0, [], [], 1.0)
    with pytest.raises(ValueError):
        FarimaModel(0, 0.0, 0, [], [], 0.0)


def test_select_order_white_noise():
    picks = [select_order(np.random.default_rng(100 + s).normal(size=2000)) for s in range(20)]
    assert sum(p == (0, 0) for p in picks) >= 18


def test_select_order_ar2():
    for s in range(5):
        p, _ = select_order(simulate_arma([0.5, -0.3], [], 2000, seed=200 + s))
        assert p >= 2


def test_select_order_limits():
    with pytest.raises(ValueError):
        select_order(np.zeros(100), p_max=6)
    with pytest.raises(ValueError):
        select_order(np.random.default_rng(0).normal(size=100), criterion="hqic")


def test_fit_farima_recovers_d():
    x = fracdiff_invert(np.random.default_rng(14).normal(size=10_000), 0.3)
    m = fit_farima(x, 0, 0)
    assert abs(m.d - 0.3) < 0.1


def test_fit_farima_fixed_d_and_window():
    x = np.random.default_rng(15).normal(size=200)
    assert fit_farima(x, 1, 0, d=0.2).d == 0.2
    with pytest.raises(ValueError):
        fit_farima(x[:63], 2, 0)


def test_choose_integer_d():
    rng = np.random.default_rng(16)
    assert choose_integer_d(np.cumsum(rng.normal(size=1000))) == 1
    assert choose_integer_d(rng.normal(size=1000)) == 0
    walk = np.cumsum(rng.normal(size=1000)) + 50
    assert fit_arima(walk, 2, 0).d == 1.0
    assert fit_arima(walk, 1, 0, d=0).d == 0.0


# forecasting ---------------------------------------------------------------------


def test_white_noise_forecast_is_mean():
    x = np.random.default_rng(17).normal(size=50)
    m = FarimaModel(0, 0.0, 0, [], [], 1.0, mean=float(x.mean()))
    np.testing.assert_allclose(forecast(m, x, 7), np.full(7, x.mean()), atol=1e-12)


def test_ar1_geometric_forecast():
    m = FarimaModel(1, 0.0, 0, [0.5], [], 1.0, mean=10.0)
    window = np.array([10.3, 9.1, 11.0])  # last demeaned value is 1.0
    np.testing.assert_allclose(forecast(m, window, 3), [10.5, 10.25, 10.125], atol=1e-12)


def test_farima_one_step_matches_direct_convolution():
    x = np.random.default_rng(18).normal(size=300) + 5.0
    m = FarimaModel(0, 0.3, 0, [], [], 1.0, mean=float(x.mean()))
    z = x - m.mean
    a = fracdiff_coeffs(0.3, z.size).coeffs
    direct = -sum(a[j] * z[z.size - j] for j in range(1, z.size)) + m.mean
    assert forecast(m, x, 1)[0] == pytest.approx(direct, abs=1e-8)


def test_pi_weights_of_ar_model():
    m = FarimaModel(2, 0.0, 0, [0.5, -0.3], [], 1.0)
    np.testing.assert_allclose(ar_infinity_weights(m, 5), [1, -0.5, 0.3, 0, 0], atol=1e-15)


@pytest.mark.parametrize("phi, psi, d", [([0.7], [], 0.0), ([0.5, -0.3], [0.4], 0.0), ([0.2], [], 0.3)])
def test_forecast_converges_to_mean(phi, psi, d):
    rng = np.random.default_rng(19)
    window = rng.normal(size=256) + 3.0
    m = FarimaModel(len(phi), d, len(psi), phi, psi, 1.0, mean=3.0)
    f = forecast(m, window, 2000)
    dev = np.abs(f - 3.0)
    assert dev[-1] < 0.05 * max(dev[:5].max(), 1e-12) + 1e-3
    if d == 0:
        assert dev[-1] < 1e-10


def test_forecast_errors():
    m = FarimaModel(2, 0.0, 0, [0.1, 0.1], [], 1.0)
    with pytest.raises(ValueError):
        forecast(m, np.ones(10), 0)
    with pytest.raises(ValueError):
        forecast(m, np.ones(2), 1)
