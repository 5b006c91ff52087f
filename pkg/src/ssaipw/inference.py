"""Sandwich covariance estimates and Wald confidence intervals.

Sigma = Gamma^{-1} Lambda Gamma^{-1}, with Gamma the (negated) derivative of
the estimating equation in beta and Lambda the second moment of its rows.
Standard errors are sqrt(diag(Sigma) / N), or / n for the stratified form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import ConfigurationError
from .estimators import TauEvaluation, Variant, spd_solve
from .model import Dataset, Estimand, Link
from .nuisance import ORFit


def normal_quantile(p: float) -> float:
    """Standard normal quantile (AS241 rational approximation, ~1e-16)."""
    if not 0.0 < p < 1.0:
        raise ConfigurationError(f"quantile level must lie in (0, 1), got {p}")
    return NormalDist().inv_cdf(p)


def critical_value(eta: float) -> float:
    """z_{eta/2}: the upper eta/2 point, e.g. 1.959964 for eta = 0.05."""
    if not 0.0 < eta < 1.0:
        raise ConfigurationError(f"eta must lie in (0, 1), got {eta}")
    return normal_quantile(1.0 - eta / 2.0)


def _z(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z[:, None] if z.ndim == 1 else z


def gamma_hat(z, beta, link: Link | None = None, variant: Variant | str = Variant.POPULATION,
              pi_hat=None, literal: bool = False) -> np.ndarray:
    """mean[psi1(b'Z) Z Z'], times (1 - pi_hat) row-wise for the unlabeled target.

    ``literal=True`` drops the (1 - pi_hat) factor for the unlabeled target.
    """
    link = link or Link()
    z = _z(z)
    c = link.psi1(z @ np.asarray(beta, dtype=float))
    if Variant(variant) is Variant.UNLABELED and not literal:
        if pi_hat is None:
            raise ConfigurationError("unlabeled-target Gamma needs pi_hat")
        c = c * (1.0 - np.asarray(pi_hat, dtype=float))
    return (z * c[:, None]).T @ z / z.shape[0]


def lambda_hat(tau: TauEvaluation | np.ndarray) -> np.ndarray:
    """mean over rows of tau_i tau_i'."""
    t = tau.tau if isinstance(tau, TauEvaluation) else _z(tau)
    return t.T @ t / t.shape[0]


def _inverse(gamma: np.ndarray) -> np.ndarray:
    gamma = np.atleast_2d(gamma)
    return spd_solve(gamma, np.eye(gamma.shape[0]), "Gamma")


def sandwich_ci(gamma, lam, n_scale: int, eta: float = 0.05, beta=None):
    """(Sigma, se, (lower, upper)); the interval is None when ``beta`` is None."""
    if n_scale <= 0:
        raise ConfigurationError("n_scale must be positive")
    g_inv = _inverse(np.asarray(gamma, dtype=float))
    sigma = g_inv @ np.atleast_2d(lam) @ g_inv
    sigma = 0.5 * (sigma + sigma.T)
    se = np.sqrt(np.maximum(np.diag(sigma), 0.0) / n_scale)
    if beta is None:
        return sigma, se, None
    half = critical_value(eta) * se
    beta = np.asarray(beta, dtype=float)
    return sigma, se, (beta - half, beta + half)


def lambda_hat_stratified(dataset: Dataset, z, or_: ORFit, beta, link: Link | None = None) -> np.ndarray:
    """Lambda for the stratified form.

    First term: mean over labeled rows of {y - (N-n)/N phi - (n/N) psi(b'Z)}^2 Z Z'.
    Second term: n(N-n)/N^2 times the mean over unlabeled rows of
    (phi - psi(b'Z))^2 Z Z'. With this split Lambda_s / n equals Lambda / N
    exactly under pi = n/N on the same sample.
    """
    link = link or or_.link
    z = _z(z)
    N = dataset.n_total
    lab = dataset.labeled
    n = int(lab.sum())
    if n == 0:
        raise ConfigurationError("stratified variance needs labeled rows")
    fitted = link.psi(z @ np.asarray(beta, dtype=float))
    phi = or_.phi
    a = dataset.y_filled()[lab] - (N - n) / N * phi[lab] - (n / N) * fitted[lab]
    za = z[lab] * a[:, None]
    out = za.T @ za / n
    if n < N:
        b = (phi - fitted)[~lab]
        zb = z[~lab] * b[:, None]
        out = out + (n * (N - n) / N**2) * (zb.T @ zb / (N - n))
    return out


@dataclass(frozen=True)
class PriorVariance:
    """Pieces of the prior-work variance formulas, all on the 1/n scale.

    ``conditional`` is Gamma^{-1} Var_lab[(y - phi) Z] Gamma^{-1};
    ``additional`` is (n/N) Gamma^{-1} E[{B^2 + 2 A B} Z Z'] Gamma^{-1} with
    A = y - phi (labeled rows) and B = phi - psi(b'Z) (all rows);
    ``mean_outer`` is Gamma^{-1} m m' Gamma^{-1} for m = mean_lab[(y - phi) Z],
    which vanishes when the OR score condition covers Z. ``scalar`` is
    Var_lab(y - phi) + (n/N) Var_all(phi), defined for Z = 1.
    """

    conditional: np.ndarray
    additional: np.ndarray
    mean_outer: np.ndarray
    scalar: float | None = None


def prior_method_variance(dataset: Dataset, z, or_: ORFit, beta, link: Link | None = None) -> PriorVariance:
    link = link or or_.link
    z = _z(z)
    N = dataset.n_total
    lab = dataset.labeled
    n = int(lab.sum())
    beta = np.asarray(beta, dtype=float)
    g_inv = _inverse(gamma_hat(z, beta, link))
    phi = or_.phi
    a = dataset.y_filled()[lab] - phi[lab]
    za = z[lab] * a[:, None]
    m = za.mean(axis=0)
    cov = za.T @ za / n - np.outer(m, m)
    b = phi - link.psi(z @ beta)
    zb = z * b[:, None]
    extra = zb.T @ zb / N + 2.0 * (za.T @ (z[lab] * b[lab][:, None])) / n
    extra = 0.5 * (extra + extra.T)
    scalar = None
    if z.shape[1] == 1 and np.allclose(z, 1.0):
        scalar = float(np.var(a) + (n / N) * np.var(phi))
    return PriorVariance(
        conditional=g_inv @ cov @ g_inv,
        additional=(n / N) * g_inv @ extra @ g_inv,
        mean_outer=g_inv @ np.outer(m, m) @ g_inv,
        scalar=scalar,
    )


@dataclass(frozen=True)
class EstimateReport:
    beta_hat: np.ndarray
    sigma_hat: np.ndarray
    se: np.ndarray
    levels: tuple[float, ...]
    ci_lower: dict = field(default_factory=dict)  # level -> vector
    ci_upper: dict = field(default_factory=dict)
    method: str = ""
    estimand: str = Estimand.POPULATION.value
    n_scale: int = 0
    nuisance: dict = field(default_factory=dict)

    def covers(self, truth, level: float) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        return (self.ci_lower[level] <= truth) & (truth <= self.ci_upper[level])


def build_report(beta, gamma, lam, n_scale: int, levels=(0.90, 0.95), method: str = "",
                 estimand: Estimand | str = Estimand.POPULATION,
                 nuisance: dict | None = None) -> EstimateReport:
    beta = np.asarray(beta, dtype=float)
    sigma, se, _ = sandwich_ci(gamma, lam, n_scale)
    lower, upper = {}, {}
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ConfigurationError(f"confidence level must lie in (0, 1), got {level}")
        half = critical_value(1.0 - level) * se
        lower[level], upper[level] = beta - half, beta + half
    return EstimateReport(beta_hat=beta, sigma_hat=sigma, se=se, levels=tuple(levels),
                          ci_lower=lower, ci_upper=upper, method=method,
                          estimand=Estimand(estimand).value, n_scale=int(n_scale),
                          nuisance=dict(nuisance or {}))

