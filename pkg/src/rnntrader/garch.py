"""Unit-root testing and GARCH(1,1) volatility estimation.

The Dickey-Fuller regression is estimated by OLS in two variants: no
deterministic terms (statistic tau1) and constant-plus-trend (tau3, with the
joint F statistics phi2 and phi3 reported alongside).  Critical values are
the standard large-sample tables; only the tau statistic drives the
rejection decision.

The GARCH(1,1) model couples a one-lag linear mean equation
``y_t = phi * x_t + mu_t`` (x_t is the previous value) with the variance
recursion ``sigma2_t = alpha0 + alpha1 * mu_{t-1}^2 + beta1 * sigma2_{t-1}``.
All four parameters are fitted jointly by maximising the Gaussian conditional
log-likelihood over an unconstrained reparameterisation, from several fixed
starting points.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal
from scipy.special import expit

LOG_2PI = math.log(2.0 * math.pi)


class AdfVariant(enum.Enum):
    NONE = "none"    # no constant, no trend
    TREND = "trend"  # constant and linear trend


# Large-sample critical values, keyed by significance level.
CRITICAL_VALUES = {
    "tau1": {0.01: -2.58, 0.05: -1.95, 0.10: -1.62},
    "tau3": {0.01: -3.96, 0.05: -3.41, 0.10: -3.12},
    "phi2": {0.01: 6.09, 0.05: 4.68, 0.10: 6.25},
    "phi3": {0.01: 8.27, 0.05: 6.25, 0.10: 5.34},
}


class SeriesTooShortError(ValueError):
    pass


class ConstraintInfeasibleError(ValueError):
    """Parameters outside the stationarity/positivity region, or data that
    admits no interior optimum (e.g. a constant series)."""


class OptimizerDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdfResult:
    variant: AdfVariant
    statistic: float
    joint_stats: tuple[float, float] | None  # (phi2, phi3), trend variant only
    critical_values: dict[float, float]
    reject_at_1pct: bool


def _ols(X: np.ndarray, y: np.ndarray):
    """Coefficients, residual sum of squares, and coefficient std errors."""
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise ValueError("singular regressor matrix")
    resid = y - X @ beta
    rss = float(resid @ resid)
    dof = X.shape[0] - X.shape[1]
    s2 = rss / dof
    se = np.sqrt(s2 * np.diag(np.linalg.inv(X.T @ X)))
    return beta, rss, se


def adf_test(series: np.ndarray, variant: AdfVariant = AdfVariant.NONE,
             lags: int = 1) -> AdfResult:
    """Dickey-Fuller unit-root test with `lags` lagged difference terms.

    The null is a unit root; it is rejected at 1% when the tau statistic
    falls below the tabulated critical value (more negative = stationary).
    """
    y = np.asarray(series, dtype=np.float64)
    if lags < 0:
        raise ValueError("lags must be non-negative")
    if len(y) <= lags + 10:
        raise SeriesTooShortError(
            f"{len(y)} observations, need more than {lags + 10}"
        )
    dy = np.diff(y)
    # regression sample: dy[t] on y[t-1] and dy[t-1..t-lags]
    t0 = lags
    dep = dy[t0:]
    nobs = len(dep)
    level = y[t0:-1]
    lagged = [dy[t0 - i:len(dy) - i] for i in range(1, lags + 1)]

    if variant is AdfVariant.NONE:
        X = np.column_stack([level, *lagged]) if lags else level[:, None]
        beta, _, se = _ols(X, dep)
        tau = float(beta[0] / se[0])
        cv = CRITICAL_VALUES["tau1"]
        return AdfResult(variant, tau, None, dict(cv), tau < cv[0.01])

    const = np.ones(nobs)
    trend = np.arange(1.0, nobs + 1.0)
    X = np.column_stack([const, trend, level, *lagged])
    beta, rss_full, se = _ols(X, dep)
    tau = float(beta[2] / se[2])
    k = X.shape[1]
    s2 = rss_full / (nobs - k)
    # phi2: constant, trend and level coefficient all zero.
    if lags:
        _, rss_r2, _ = _ols(np.column_stack(lagged), dep)
    else:
        rss_r2 = float(dep @ dep)
    phi2 = float((rss_r2 - rss_full) / 3.0 / s2)
    # phi3: trend and level coefficient zero, constant retained.
    _, rss_r3, _ = _ols(np.column_stack([const, *lagged]) if lags else const[:, None], dep)
    phi3 = float((rss_r3 - rss_full) / 2.0 / s2)
    cv = CRITICAL_VALUES["tau3"]
    return AdfResult(variant, tau, (phi2, phi3), dict(cv), tau < cv[0.01])


@dataclass(frozen=True)
class GarchFit:
    """Fitted GARCH(1,1) with its one-lag mean equation.

    `mu` and `sigma2` are aligned with the input series; index 0 is NaN
    because the mean equation needs a lagged value.  Where defined, sigma2 is
    strictly positive.
    """

    phi: float
    alpha0: float
    alpha1: float
    beta1: float
    mu: np.ndarray
    sigma2: np.ndarray
    loglik: float

    def params(self) -> tuple[float, float, float, float]:
        return (self.phi, self.alpha0, self.alpha1, self.beta1)

    def to_json_dict(self) -> dict:
        return {
            "phi": self.phi,
            "alpha0": self.alpha0,
            "alpha1": self.alpha1,
            "beta1": self.beta1,
            "loglik": self.loglik,
        }


def variance_recursion(mu: np.ndarray, alpha0: float, alpha1: float,
                       beta1: float, *, init: float | None = None) -> np.ndarray:
    """Conditional variance path for residuals `mu`.

    sigma2[0] = `init` (defaults to the population variance of mu), then
    sigma2[t] = alpha0 + alpha1 * mu[t-1]^2 + beta1 * sigma2[t-1].
    Vectorised as a linear filter; the recurrence holds term by term.
    """
    mu = np.asarray(mu, dtype=np.float64)
    s0 = float(np.var(mu)) if init is None else float(init)
    if len(mu) == 0:
        return np.empty(0)
    drive = alpha0 + alpha1 * mu[:-1] ** 2
    out = np.empty(len(mu))
    out[0] = s0
    if len(mu) > 1:
        out[1:] = signal.lfilter([1.0], [1.0, -beta1], drive, zi=[beta1 * s0])[0]
    return out


def _negative_loglik(mu: np.ndarray, alpha0: float, alpha1: float,
                     beta1: float) -> float:
    sigma2 = variance_recursion(mu, alpha0, alpha1, beta1)
    if np.any(sigma2 <= 0.0) or not np.all(np.isfinite(sigma2)):
        return np.inf
    ll = -0.5 * np.sum(LOG_2PI + np.log(sigma2) + mu**2 / sigma2)
    return -ll if np.isfinite(ll) else np.inf


def garch_loglik(series: np.ndarray, phi: float, alpha0: float, alpha1: float,
                 beta1: float) -> float:
    """Gaussian conditional log-likelihood of the full model on `series`."""
    if alpha0 <= 0.0 or alpha1 < 0.0 or beta1 < 0.0 or alpha1 + beta1 >= 1.0:
        raise ConstraintInfeasibleError(
            f"alpha0={alpha0}, alpha1={alpha1}, beta1={beta1}"
        )
    series = np.asarray(series, dtype=np.float64)
    mu = series[1:] - phi * series[:-1]
    return -_negative_loglik(mu, alpha0, alpha1, beta1)


def _unpack(theta: np.ndarray) -> tuple[float, float, float, float]:
    """Map unconstrained optimiser coordinates into the feasible region.

    alpha0 = exp(a) > 0; alpha1 + beta1 = expit(b) < 1, split by expit(c).
    """
    phi, a, b, c = theta
    alpha0 = math.exp(a)
    total = expit(b)
    share = expit(c)
    return float(phi), alpha0, float(total * share), float(total * (1.0 - share))


def fit_garch11(series: np.ndarray) -> GarchFit:
    """Fit the joint mean + GARCH(1,1) model by maximum likelihood.

    `series` is whatever the mean equation should regress on its own lag:
    price levels by default, or a return series if the caller differenced
    first.  Stationarity of the input (checked with :func:`adf_test`) is
    recommended but not enforced here.
    """
    series = np.asarray(series, dtype=np.float64)
    if len(series) < 30:
        raise SeriesTooShortError(f"{len(series)} observations, need >= 30")
    y = series[1:]
    x = series[:-1]
    if np.var(y) == 0.0:
        raise ConstraintInfeasibleError("constant series has no volatility to fit")

    xx = float(x @ x)
    phi_ols = float(x @ y) / xx if xx > 0.0 else 0.0
    resid_var = float(np.var(y - phi_ols * x))
    if resid_var <= 0.0:
        raise ConstraintInfeasibleError("mean equation leaves zero residual variance")

    def objective(theta):
        phi, alpha0, alpha1, beta1 = _unpack(theta)
        return _negative_loglik(y - phi * x, alpha0, alpha1, beta1)

    def start(total, share):
        # alpha0 chosen so the implied unconditional variance matches the data
        alpha0 = resid_var * (1.0 - total)
        b = math.log(total / (1.0 - total))
        c = math.log(share / (1.0 - share))
        return np.array([phi_ols, math.log(alpha0), b, c])

    starts = [start(0.90, 0.25), start(0.50, 0.50), start(0.97, 0.08)]
    best = None
    for theta0 in starts:
        res = optimize.minimize(objective, theta0, method="L-BFGS-B")
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise OptimizerDivergedError("no start produced a finite likelihood")

    phi, alpha0, alpha1, beta1 = _unpack(best.x)
    mu_core = y - phi * x
    sigma2_core = variance_recursion(mu_core, alpha0, alpha1, beta1)
    n = len(series)
    mu = np.full(n, np.nan)
    sigma2 = np.full(n, np.nan)
    mu[1:] = mu_core
    sigma2[1:] = sigma2_core
    return GarchFit(phi, alpha0, alpha1, beta1, mu, sigma2, float(-best.fun))


def garch_attributes(fit: GarchFit) -> tuple[np.ndarray, np.ndarray]:
    """Recompute the (mu, sigma2) attribute series from the fitted parameters.

    The variance path is rebuilt from the stored residuals, so the recursion
    holds exactly for the returned arrays.
    """
    mu_core = fit.mu[1:]
    sigma2 = np.full_like(fit.sigma2, np.nan)
    sigma2[1:] = variance_recursion(mu_core, fit.alpha0, fit.alpha1, fit.beta1)
    return fit.mu.copy(), sigma2


def simulate_garch(params: tuple[float, float, float, float], n: int,
                   seed: int) -> np.ndarray:
    """Simulate n observations of the joint model, deterministically by seed.

    The variance starts at its unconditional level alpha0 / (1 - alpha1 -
    beta1); the first observation has no lag, so y_0 = mu_0.
    """
    phi, alpha0, alpha1, beta1 = params
    if alpha0 <= 0.0 or alpha1 < 0.0 or beta1 < 0.0 or alpha1 + beta1 >= 1.0:
        raise ConstraintInfeasibleError(
            f"alpha0={alpha0}, alpha1={alpha1}, beta1={beta1}"
        )
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    y = np.empty(n)
    sigma2 = alpha0 / (1.0 - alpha1 - beta1)
    mu_prev = math.sqrt(sigma2) * z[0]
    y[0] = mu_prev
    for t in range(1, n):
        sigma2 = alpha0 + alpha1 * mu_prev**2 + beta1 * sigma2
        mu_prev = math.sqrt(sigma2) * z[t]
        y[t] = phi * y[t - 1] + mu_prev
    return y
