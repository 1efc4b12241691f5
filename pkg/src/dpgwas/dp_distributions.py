"""Null distribution of a chi-square(2) statistic released with Laplace noise.

``X = T + Y`` with ``T ~ chi2(2)`` and ``Y ~ Laplace(0, 4/eps)``. The density
has a closed form with a removable singularity at ``eps = 2``, where the
``1/(eps - 2)`` terms are replaced by their limits.

The noise scale actually used for a balanced table of N individuals is
``4N / ((N + 2) eps)``; because the law depends on ``eps`` only through the
scale, that case is the same closed form at ``eps * (N + 2) / N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

# |eps - 2| below this uses the limit branch
EPS2_BAND = 1e-6


def _check_eps(eps):
    if not eps > 0 or not math.isfinite(eps):
        raise ValueError(f"epsilon must be positive and finite, got {eps}")


def perturbed_pdf(x, eps):
    """Density of chi2(2) + Laplace(0, 4/eps)."""
    _check_eps(eps)
    x = np.asarray(x, dtype=np.float64)
    q = eps / 4.0
    left = q / (eps + 2.0) * np.exp(q * np.minimum(x, 0.0))
    xp = np.maximum(x, 0.0)
    if abs(eps - 2.0) < EPS2_BAND:
        # (e^{-x/2} - e^{-eps x/4}) / (eps - 2) -> (x/4) e^{-x/2}
        right = q * (np.exp(-xp / 2.0) / (eps + 2.0) + xp / 4.0 * np.exp(-xp / 2.0))
    else:
        k = 1.0 / (eps - 2.0)
        right = q * ((k + 1.0 / (eps + 2.0)) * np.exp(-xp / 2.0) - k * np.exp(-q * xp))
    out = np.where(x <= 0, left, right)
    return out if out.ndim else float(out)


def perturbed_cdf(x, eps):
    """Distribution function of chi2(2) + Laplace(0, 4/eps); F(0) = 1/(eps + 2)."""
    _check_eps(eps)
    x = np.asarray(x, dtype=np.float64)
    q = eps / 4.0
    left = np.exp(q * np.minimum(x, 0.0)) / (eps + 2.0)
    xp = np.maximum(x, 0.0)
    if abs(eps - 2.0) < EPS2_BAND:
        # k (e^{-eps x/4} - e^{-x/2}) -> -(x/4) e^{-x/2} with k = 1/(eps - 2)
        right = 1.0 - np.exp(-xp / 2.0) * (eps / (2.0 * (eps + 2.0)) + 0.5 + xp / 4.0)
    else:
        k = 1.0 / (eps - 2.0)
        right = 1.0 - eps / 2.0 * (k + 1.0 / (eps + 2.0)) * np.exp(-xp / 2.0) \
            + k * np.exp(-q * xp)
    out = np.clip(np.where(x <= 0, left, right), 0.0, 1.0)
    return out if out.ndim else float(out)


def perturbed_sf(x, eps):
    """Upper tail 1 - F(x), computed without cancellation for large x."""
    _check_eps(eps)
    x = np.asarray(x, dtype=np.float64)
    q = eps / 4.0
    left = 1.0 - np.exp(q * np.minimum(x, 0.0)) / (eps + 2.0)
    xp = np.maximum(x, 0.0)
    if abs(eps - 2.0) < EPS2_BAND:
        right = np.exp(-xp / 2.0) * (eps / (2.0 * (eps + 2.0)) + 0.5 + xp / 4.0)
    else:
        k = 1.0 / (eps - 2.0)
        right = eps / 2.0 * (k + 1.0 / (eps + 2.0)) * np.exp(-xp / 2.0) - k * np.exp(-q * xp)
    out = np.clip(np.where(x <= 0, left, right), 0.0, 1.0)
    return out if out.ndim else float(out)


def perturbed_quantile(p, eps, tol: float = 1e-10) -> float:
    """Inverse of :func:`perturbed_cdf` by bisection on a geometrically grown bracket."""
    _check_eps(eps)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    lo, hi = -1.0, 1.0
    while perturbed_cdf(lo, eps) > p:
        lo *= 2.0
    while perturbed_cdf(hi, eps) < p:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if perturbed_cdf(mid, eps) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def pvalue_from_perturbed_stat(x, eps):
    """P(X >= x) under the null law of the released statistic."""
    return perturbed_sf(x, eps)


def effective_epsilon(eps: float, N: int) -> float:
    """Epsilon at which the closed form has noise scale 4N / ((N + 2) eps)."""
    _check_eps(eps)
    if N <= 0:
        raise ValueError("N must be positive")
    return eps * (N + 2) / N


def convolution_pdf_quad(x: float, scale: float) -> float:
    """Density of chi2(2) + Laplace(0, scale) by direct numerical integration.

    Independent of the closed form; used to cross-check it.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")

    def integrand(t):
        return 0.5 * math.exp(-t / 2.0) * math.exp(-abs(x - t) / scale) / (2.0 * scale)

    pieces = [0.0] + ([x] if x > 0 else []) + [math.inf]
    total = 0.0
    for a, b in zip(pieces[:-1], pieces[1:]):
        total += integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
    return total


@dataclass(frozen=True)
class PerturbedChiSqDist:
    """Released-statistic null law for a given epsilon.

    ``mode="asymptotic"`` uses noise scale 4/eps; ``mode="exact"`` uses the
    finite-sample sensitivity 4N/(N+2) and requires ``N``.
    """

    epsilon: float
    mode: str = "asymptotic"
    N: int | None = None

    def __post_init__(self):
        _check_eps(self.epsilon)
        if self.mode not in ("asymptotic", "exact"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "exact" and self.N is None:
            raise ValueError("exact mode needs N")

    @property
    def eps_eff(self) -> float:
        if self.mode == "exact":
            return effective_epsilon(self.epsilon, self.N)
        return self.epsilon

    @property
    def noise_scale(self) -> float:
        return 4.0 / self.eps_eff

    def pdf(self, x):
        return perturbed_pdf(x, self.eps_eff)

    def cdf(self, x):
        return perturbed_cdf(x, self.eps_eff)

    def sf(self, x):
        return perturbed_sf(x, self.eps_eff)

    def quantile(self, p):
        return perturbed_quantile(p, self.eps_eff)

    def pvalue(self, x):
        return perturbed_sf(x, self.eps_eff)

    def sample(self, size, rng: np.random.Generator):
        return rng.chisquare(2, size) + rng.laplace(0.0, self.noise_scale, size)
