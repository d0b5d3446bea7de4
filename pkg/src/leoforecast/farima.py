"""ARIMA / FARIMA fitting and multi-step forecasting.

Fitting follows the usual four steps: a rescaled-range estimate of d,
fractional differencing, ARMA order choice, then ARMA estimation. Models
are refit on every input window by the benchmark, so everything here is a
pure function of the window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, signal

from .selfsim_stats import DegenerateSeriesError, default_block_sizes, rescaled_range_hurst

__all__ = [
    "FarimaModel",
    "FracDiffCoeffs",
    "NotPositiveDefiniteError",
    "FitError",
    "fracdiff_coeffs",
    "fracdiff_apply",
    "fracdiff_invert",
    "estimate_d_preliminary",
    "durbin_levinson",
    "gaussian_loglik",
    "arma_autocovariance",
    "fit_arma",
    "select_order",
    "fit_farima",
    "fit_arima",
    "choose_integer_d",
    "ar_infinity_weights",
    "forecast",
]

log = logging.getLogger(__name__)

ROOT_MARGIN = 1e-6
D_LIMIT = 0.49


class NotPositiveDefiniteError(ValueError):
    """Autocovariance sequence is not positive definite."""


class FitError(RuntimeError):
    """Every candidate fit failed."""


@dataclass(frozen=True)
class FracDiffCoeffs:
    d: float
    coeffs: np.ndarray

    def __len__(self) -> int:
        return self.coeffs.size


@dataclass(frozen=True)
class FarimaModel:
    """phi(B) (1-B)^d (X_t - mean) = psi(B) eps_t with psi(B) = 1 + sum psi_j B^j."""

    p: int
    d: float
    q: int
    phi: np.ndarray
    psi: np.ndarray
    sigma2_eps: float
    mean: float = 0.0
    converged: bool = True
    reflected: bool = False
    d_clamped: bool = False
    method: str = "css"
    n_obs: int = 0
    loglik: float = float("nan")

    def __post_init__(self) -> None:
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=np.float64).reshape(-1))
        if self.phi.size != self.p or self.psi.size != self.q:
            raise ValueError("coefficient counts must match (p, q)")
        if not self.sigma2_eps > 0:
            raise ValueError("innovation variance must be positive")

    @property
    def ar_poly(self) -> np.ndarray:
        """[1, -phi_1, ..., -phi_p] in increasing powers of B."""
        return np.concatenate([[1.0], -self.phi])

    @property
    def ma_poly(self) -> np.ndarray:
        return np.concatenate([[1.0], self.psi])

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * (self.p + self.q + 1)

    def is_stationary(self) -> bool:
        return _roots_outside(self.ar_poly)

    def is_invertible(self) -> bool:
        return _roots_outside(self.ma_poly)


# --------------------------------------------------------------------------
# fractional differencing


def fracdiff_coeffs(d: float, L: int) -> FracDiffCoeffs:
    """First ``L`` coefficients of (1 - B)^d, via a_j = a_{j-1} (j - 1 - d) / j."""
    if L < 1:
        raise ValueError("L must be at least 1")
    j = np.arange(1, L, dtype=np.float64)
    a = np.empty(L)
    a[0] = 1.0
    a[1:] = np.cumprod((j - 1.0 - d) / j)
    return FracDiffCoeffs(float(d), a)


def _causal_conv_naive(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    n = x.size
    y = np.empty(n)
    for t in range(n):
        y[t] = np.dot(a[: t + 1], x[t::-1])
    return y


def _causal_conv_fft(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    n = x.size
    nfft = 1 << int(math.ceil(math.log2(2 * n - 1))) if n > 1 else 1
    return np.fft.irfft(np.fft.rfft(a, nfft) * np.fft.rfft(x, nfft), nfft)[:n]


def fracdiff_apply(series, d: float, mode: str = "fft") -> np.ndarray:
    """y_t = sum_{j=0}^{t} a_j x_{t-j}, treating values before the window as zero."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size < 1:
        raise ValueError("series must not be empty")
    a = fracdiff_coeffs(d, x.size).coeffs
    if mode == "naive":
        return _causal_conv_naive(a, x)
    if mode == "fft":
        return _causal_conv_fft(a, x)
    raise ValueError(f"unknown mode {mode!r}")


def fracdiff_invert(series, d: float, mode: str = "fft") -> np.ndarray:
    """Fractional integration: apply (1 - B)^(-d)."""
    return fracdiff_apply(series, -d, mode)


def estimate_d_preliminary(series) -> tuple[float, bool]:
    """d = H - 1/2 from the rescaled-range estimate, clamped to [-0.49, 0.49].

    Returns ``(d, clamped)``. Windows shorter than 160 points use blocks
    from 4 up to a quarter of the window so that at least three sizes fit.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size < 32:
        raise ValueError(f"need at least 32 values to estimate d, got {x.size}")
    if np.ptp(x) == 0:
        raise DegenerateSeriesError("cannot estimate d on a constant series")
    if x.size < 160:
        blocks = default_block_sizes(10 * (x.size // 4), smallest=4)
        est = rescaled_range_hurst(x, blocks, max_fraction=0.25)
    else:
        est = rescaled_range_hurst(x)
    d = est.slope - 0.5  # unclamped H, so the flag reflects the raw estimate
    if d < -D_LIMIT or d > D_LIMIT:
        return float(np.clip(d, -D_LIMIT, D_LIMIT)), True
    return float(d), False


# --------------------------------------------------------------------------
# Toeplitz / likelihood machinery


def durbin_levinson(autocov, order: int | None = None) -> tuple[np.ndarray, float]:
    """Yule-Walker AR coefficients and innovation variance from gamma(0..p).

    O(p^2) recursion over partial autocorrelations. Raises
    :class:`NotPositiveDefiniteError` if the prediction error variance
    stops being positive.
    """
    g = np.asarray(autocov, dtype=np.float64).ravel()
    p = g.size - 1 if order is None else int(order)
    if g.size < p + 1:
        raise ValueError("need gamma(0..p)")
    if not g[0] > 0:
        raise NotPositiveDefiniteError("gamma(0) must be positive")
    phi = np.zeros(p)
    v = g[0]
    for k in range(1, p + 1):
        acc = g[k] - np.dot(phi[: k - 1], g[k - 1 : 0 : -1])
        kappa = acc / v
        prev = phi[: k - 1].copy()
        phi[: k - 1] = prev - kappa * prev[::-1]
        phi[k - 1] = kappa
        v = v * (1.0 - kappa * kappa)
        if not v > 0:
            raise NotPositiveDefiniteError(f"prediction variance {v:.3g} at order {k}")
    return phi, float(v)


def _prediction_errors(x: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-step prediction errors and their variances, recursing on the order."""
    n = x.size
    if g.size < n:
        raise ValueError("autocovariance shorter than series")
    if not g[0] > 0:
        raise NotPositiveDefiniteError("gamma(0) must be positive")
    err = np.empty(n)
    var = np.empty(n)
    err[0], var[0] = x[0], g[0]
    phi = np.zeros(0)
    v = g[0]
    for t in range(1, n):
        kappa = (g[t] - np.dot(phi, g[t - 1 : 0 : -1])) / v
        phi = np.concatenate([phi - kappa * phi[::-1], [kappa]])
        v = v * (1.0 - kappa * kappa)
        if not v > 0:
            raise NotPositiveDefiniteError(f"prediction variance {v:.3g} at step {t}")
        err[t] = x[t] - np.dot(phi, x[t - 1 :: -1])
        var[t] = v
    return err, var


def gaussian_loglik(series, autocov) -> float:
    """Exact Gaussian log-likelihood of a zero-mean series (O(n^2) Durbin-Levinson)."""
    x = np.asarray(series, dtype=np.float64).ravel()
    err, var = _prediction_errors(x, np.asarray(autocov, dtype=np.float64))
    return float(-0.5 * np.sum(np.log(2 * np.pi * var) + err**2 / var))


def arma_autocovariance(phi, psi, sigma2: float, nlags: int, n_terms: int = 4000) -> np.ndarray:
    """gamma(0..nlags) of a causal ARMA from its truncated MA(inf) weights."""
    ar = np.concatenate([[1.0], -np.asarray(phi, float)])
    ma = np.concatenate([[1.0], np.asarray(psi, float)])
    impulse = np.zeros(n_terms + nlags + 1)
    impulse[0] = 1.0
    w = signal.lfilter(ma, ar, impulse)
    return sigma2 * np.array([np.dot(w[: w.size - k], w[k:]) for k in range(nlags + 1)])


# --------------------------------------------------------------------------
# ARMA estimation


def _roots_outside(poly: np.ndarray, margin: float = ROOT_MARGIN) -> bool:
    """All roots of sum poly[j] z^j strictly outside |z| = 1 + margin."""
    c = np.trim_zeros(np.asarray(poly, float), "b")
    if c.size <= 1:
        return True
    roots = np.roots(c[::-1])
    return bool(np.all(np.abs(roots) > 1.0 + margin))


def _reflect(coefs: np.ndarray, sign: float) -> tuple[np.ndarray, bool]:
    """Move roots of 1 + sign*sum c_j z^j from inside to outside the unit circle."""
    c = np.asarray(coefs, dtype=np.float64)
    if c.size == 0:
        return c, False
    poly = np.concatenate([[1.0], sign * c])
    trimmed = np.trim_zeros(poly, "b")
    if trimmed.size <= 1:
        return c, False
    roots = np.roots(trimmed[::-1])
    mod = np.abs(roots)
    bad = mod <= 1.0 + ROOT_MARGIN
    if not np.any(bad):
        return c, False
    fixed = roots.copy()
    fixed[bad] = 1.0 / np.conj(roots[bad])
    # roots on the circle map to themselves; nudge them out
    fixed = np.where(np.abs(fixed) <= 1.0 + 1e-3, fixed / np.abs(fixed) * (1.0 + 1e-3), fixed)
    # rebuild with constant term 1: prod (1 - z / r)
    new = np.array([1.0 + 0j])
    for r in fixed:
        new = np.convolve(new, [1.0, -1.0 / r])
    new = new.real
    out = np.zeros_like(c)
    out[: new.size - 1] = sign * new[1:]
    return out, True


def _css_residuals(y: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    p = phi.size
    ar = np.concatenate([[1.0], -phi])
    ma = np.concatenate([[1.0], psi])
    e = signal.lfilter(ar, ma, y)
    return e[p:]


def _split(theta: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    return theta[:p], theta[p:]


def _stationary(theta: np.ndarray, p: int) -> tuple[np.ndarray, bool]:
    phi, psi = _split(theta, p)
    phi, r1 = _reflect(phi, -1.0)
    psi, r2 = _reflect(psi, +1.0)
    return np.concatenate([phi, psi]), r1 or r2


def _periodogram(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = y.size
    f = np.fft.rfft(y)
    j = np.arange(1, (n - 1) // 2 + 1)
    lam = 2 * np.pi * j / n
    return lam, np.abs(f[j]) ** 2 / (2 * np.pi * n)


def _transfer_sq(coef_poly: np.ndarray, lam: np.ndarray) -> np.ndarray:
    z = np.exp(-1j * np.outer(lam, np.arange(coef_poly.size)))
    return np.abs(z @ coef_poly) ** 2


def _yule_walker_start(y: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.zeros(0)
    n = y.size
    g = np.array([np.dot(y[: n - k], y[k:]) / n for k in range(p + 1)])
    try:
        phi, _ = durbin_levinson(g)
    except NotPositiveDefiniteError:
        return np.zeros(p)
    return phi


def fit_arma(series, p: int, q: int, method: str = "css", max_iter: int = 2000) -> FarimaModel:
    """ARMA(p, q) fit of a series (demeaned internally).

    ``css`` minimizes the conditional sum of squared innovations by
    Nelder-Mead, starting from the Yule-Walker AR solution (MA terms at
    zero). ``whittle`` minimizes the profiled Whittle objective over the
    Fourier frequencies. ``mle`` maximizes the exact Gaussian likelihood
    and is only meant for short series. Parameters are kept stationary and
    invertible by reflecting offending roots inside the objective; the
    returned model is flagged if its optimum needed reflection.
    """
    y0 = np.asarray(series, dtype=np.float64).ravel()
    if p < 0 or q < 0:
        raise ValueError("orders must be non-negative")
    n = y0.size
    if n < 10 * (p + q + 1):
        raise ValueError(f"need at least {10 * (p + q + 1)} values for ARMA({p},{q}), got {n}")
    mean = float(y0.mean())
    y = y0 - mean
    k = p + q
    start = np.concatenate([_yule_walker_start(y, p), np.zeros(q)])

    if method == "css":
        n_eff = n - p

        def objective(theta: np.ndarray) -> float:
            th, _ = _stationary(theta, p)
            e = _css_residuals(y, *_split(th, p))
            return float(np.dot(e, e) / n_eff)

    elif method == "whittle":
        lam, pgram = _periodogram(y)

        def objective(theta: np.ndarray) -> float:
            th, _ = _stationary(theta, p)
            phi, psi = _split(th, p)
            g = _transfer_sq(np.concatenate([[1.0], psi]), lam) / _transfer_sq(
                np.concatenate([[1.0], -phi]), lam
            )
            return float(np.log(np.mean(pgram / g)) + np.mean(np.log(g)))

    elif method == "mle":
        if n > 4096:
            raise ValueError("exact likelihood is limited to n <= 4096")

        def objective(theta: np.ndarray) -> float:
            th, _ = _stationary(theta, p)
            phi, psi = _split(th, p)
            g = arma_autocovariance(phi, psi, 1.0, n - 1)
            try:
                err, var = _prediction_errors(y, g)
            except NotPositiveDefiniteError:
                return 1e300
            # sigma^2 profiled out of the likelihood
            return float(math.log(np.mean(err**2 / var)) + np.mean(np.log(var)))

    else:
        raise ValueError(f"unknown method {method!r}")

    converged = True
    theta = start
    if method == "css" and q == 0 and p > 0:
        # for pure AR the conditional least-squares optimum is the lagged regression
        lags = np.column_stack([y[p - j : n - j] for j in range(1, p + 1)])
        ols, *_ = np.linalg.lstsq(lags, y[p:], rcond=None)
        if _roots_outside(np.concatenate([[1.0], -ols])):
            theta = ols
            k = 0
    if k > 0:
        res = optimize.minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={"maxiter": max_iter * max(k, 1), "xatol": 1e-8, "fatol": 1e-12},
        )
        converged = bool(res.success)
        theta = res.x
    theta, reflected = _stationary(theta, p)
    phi, psi = _split(theta, p)
    e = _css_residuals(y, phi, psi)
    sigma2 = float(np.dot(e, e) / e.size) if e.size else float(y.var())
    if method == "whittle":
        lam, pgram = _periodogram(y)
        g = _transfer_sq(np.concatenate([[1.0], psi]), lam) / _transfer_sq(
            np.concatenate([[1.0], -phi]), lam
        )
        sigma2 = float(2 * np.pi * np.mean(pgram / g))
    if sigma2 <= 0:
        sigma2 = np.finfo(float).tiny
    ll = -0.5 * e.size * (math.log(2 * math.pi * sigma2) + 1.0)
    if not converged:
        log.debug("ARMA(%d,%d) %s fit did not converge", p, q, method)
    return FarimaModel(
        p, 0.0, q, phi, psi, sigma2, mean, converged, reflected,
        method=method, n_obs=n, loglik=ll,
    )


def select_order(
    series, p_max: int = 2, method: str = "css", criterion: str = "bic"
) -> tuple[int, int]:
    """Information-criterion order choice over p = q in 0..p_max plus pure AR(p).

    ``criterion`` is ``"bic"`` (default) or ``"aic"``. Conditional least
    squares happily fits ARMA(k, k) pairs with nearly cancelling roots, and
    AIC's light penalty lets those win on white noise about half the time.
    """
    if criterion not in ("aic", "bic"):
        raise ValueError(f"unknown criterion {criterion!r}")
    if p_max > 5:
        raise ValueError("p_max is limited to 5")
    y = np.asarray(series, dtype=np.float64).ravel()
    candidates = sorted({(k, k) for k in range(p_max + 1)} | {(k, 0) for k in range(p_max + 1)})
    best, best_score = None, math.inf
    # every candidate is scored on the same residual span so AICs are comparable
    for p, q in candidates:
        try:
            m = fit_arma(y, p, q, method)
        except (ValueError, FloatingPointError) as exc:
            log.debug("order (%d,%d) failed: %s", p, q, exc)
            continue
        e = _css_residuals(y - m.mean, m.phi, m.psi)[p_max - p :]
        s2 = float(np.dot(e, e) / e.size)
        penalty = 2.0 if criterion == "aic" else math.log(e.size)
        score = e.size * math.log(s2) + penalty * (p + q + 1)
        if score < best_score - 1e-12:
            best, best_score = (p, q), score
    if best is None:
        raise FitError("all candidate orders failed")
    return best


def fit_farima(
    window, p: int = 2, q: int = 0, method: str = "css", d: float | None = None
) -> FarimaModel:
    """FARIMA(p, d, q): estimate d, fractionally difference, fit the ARMA part.

    Pass ``d`` to skip the rescaled-range step and use a fixed value.
    """
    x = np.asarray(window, dtype=np.float64).ravel()
    if x.size < 64:
        raise ValueError(f"FARIMA needs a window of at least 64 values, got {x.size}")
    clamped = False
    if d is None:
        d, clamped = estimate_d_preliminary(x)
    mean = float(x.mean())
    y = fracdiff_apply(x - mean, d)
    arma = fit_arma(y, p, q, method)
    return replace(arma, d=float(d), mean=mean, d_clamped=clamped)


def choose_integer_d(series) -> int:
    """1 if first differencing lowers the sample variance, else 0."""
    x = np.asarray(series, dtype=np.float64).ravel()
    return int(np.var(np.diff(x), ddof=1) < np.var(x, ddof=1))


def fit_arima(window, p: int = 2, q: int = 0, d: int | None = None, method: str = "css") -> FarimaModel:
    """ARIMA(p, d, q) with integer d (chosen by variance comparison unless given)."""
    x = np.asarray(window, dtype=np.float64).ravel()
    if d is None:
        d = choose_integer_d(x)
    if d not in (0, 1, 2):
        raise ValueError(f"integer d must be 0, 1 or 2, got {d}")
    mean = float(x.mean())
    y = x - mean
    for _ in range(d):
        y = np.diff(y)
    arma = fit_arma(y, p, q, method)
    return replace(arma, d=float(d), mean=mean)


# --------------------------------------------------------------------------
# forecasting


def ar_infinity_weights(model: FarimaModel, L: int) -> np.ndarray:
    """pi_0..pi_{L-1} with pi(B) = phi(B) (1-B)^d / psi(B), pi_0 = 1."""
    a = fracdiff_coeffs(model.d, L).coeffs
    return signal.lfilter(model.ar_poly, model.ma_poly, a)


def forecast(model: FarimaModel, window, h: int) -> np.ndarray:
    """h-step forecasts from the truncated AR(inf) form, feeding predictions back.

    The expansion is truncated at the window length; the model mean is
    removed before and added back after.
    """
    if h < 1:
        raise ValueError("horizon must be at least 1")
    x = np.asarray(window, dtype=np.float64).ravel()
    n = x.size
    if n < max(model.p, model.q) + 1:
        raise ValueError("window shorter than model order")
    pi = ar_infinity_weights(model, n)
    hist = np.concatenate([x - model.mean, np.zeros(h)])
    coef = -pi[1:][::-1]  # aligned with hist[t-n+1 : t]
    for k in range(h):
        t = n + k
        hist[t] = np.dot(coef, hist[t - n + 1 : t])
    return hist[n:] + model.mean
