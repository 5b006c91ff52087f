"""Estimating-equation solvers for the regression coefficient beta.

Population target (AIPW):
    mean_i [ (r_i/pi_i)(y_i - phi_i) Z_i + (phi_i - psi(b'Z_i)) Z_i ] = 0
Unlabeled target:
    mean_i [ r_i w_i (y_i - phi_i) + (1 - r_i)(phi_i - psi(b'Z_i)) ] Z_i = 0
which is the augmented display rewritten with 1/pi = 1 + w. IPW, the
stratified (constant-PS) form, and a cross-fitted AIPW are also provided.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, EstimationError, RankError
from .model import Dataset, Link, LinkKind
from .nuisance import (
    ORFit,
    PSFit,
    fit_or_unweighted,
    fit_ps_rml,
    fold_assignment,
    labeled_folds_ok,
)
from .solver import SolverConfig

logger = logging.getLogger(__name__)

MAX_NEWTON = 200
MAX_HALVINGS = 30
COND_LIMIT = 1e12


class Variant(str, enum.Enum):
    POPULATION = "population"
    UNLABELED = "unlabeled"


@dataclass(frozen=True)
class TauEvaluation:
    tau: np.ndarray  # N x m
    variant: Variant

    @property
    def residual(self) -> np.ndarray:
        return self.tau.mean(axis=0)


def spd_solve(a: np.ndarray, b: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Solve a x = b for symmetric positive definite ``a``; loud on near-singularity."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    a = 0.5 * (a + a.T)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise RankError(f"{what} is not positive definite") from None
    d = np.diag(chol)
    cond = (d.max() / d.min()) ** 2
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RankError(f"{what} is ill-conditioned (condition number ~{cond:.3g})")
    return np.linalg.solve(chol.T, np.linalg.solve(chol, b))


def _as_z(z, n_rows: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] != n_rows:
        raise ConfigurationError(f"Z has {z.shape[0]} rows, data has {n_rows}")
    return z


def _weighted_gram(z: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (z * c[:, None]).T @ z / z.shape[0]


def damped_newton(residual: Callable[[np.ndarray], np.ndarray],
                  jacobian: Callable[[np.ndarray], np.ndarray],
                  beta0: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Newton on residual(b) = 0 where -jacobian(b) is SPD; halves steps until
    the residual norm decreases."""
    beta = np.array(beta0, dtype=float)
    u = residual(beta)
    norm = np.max(np.abs(u))
    for _ in range(MAX_NEWTON):
        if norm <= tol:
            return beta
        step = spd_solve(-jacobian(beta), u, "estimating-equation Jacobian")
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + t * step
            u_c = residual(cand)
            n_c = np.max(np.abs(u_c))
            if np.isfinite(n_c) and n_c < norm:
                break
            t *= 0.5
        else:
            if norm <= 1e3 * tol:
                return beta
            raise EstimationError(f"Newton step halving failed (residual {norm:.3g})")
        beta, u, norm = cand, u_c, n_c
    if norm <= 1e3 * tol:
        return beta
    raise EstimationError(f"Newton did not converge in {MAX_NEWTON} iterations "
                          f"(residual {norm:.3g})")


def plain_fit(z, y, link: Link) -> np.ndarray:
    """Solve mean (y - psi(b'Z)) Z = 0; used for starting values."""
    if link.kind is LinkKind.IDENTITY:
        return spd_solve(z.T @ z / len(y), z.T @ y / len(y), "Z'Z")
    return damped_newton(lambda b: z.T @ (y - link.psi(z @ b)) / len(y),
                         lambda b: -_weighted_gram(z, link.psi1(z @ b)),
                         np.zeros(z.shape[1]))


def _start(z, y, r, link: Link) -> np.ndarray:
    if link.kind is LinkKind.IDENTITY:
        return np.zeros(z.shape[1])
    lab = r > 0
    try:
        return plain_fit(z[lab], y[lab], link)
    except (RankError, EstimationError):
        return np.zeros(z.shape[1])


def evaluate_tau(dataset: Dataset, z, ps: PSFit, or_: ORFit, beta, link: Link | None = None,
                 variant: Variant | str = Variant.POPULATION) -> TauEvaluation:
    """Row-wise estimating function at ``beta``; column means are the residual."""
    link = link or or_.link
    variant = Variant(variant)
    N = dataset.n_total
    z = _as_z(z, N)
    if ps.pi_hat.shape != (N,) or or_.phi.shape != (N,):
        raise ConfigurationError("nuisance fits are not row-aligned with the data")
    r = dataset.r.astype(float)
    y = dataset.y_filled()
    phi = or_.phi
    fitted = link.psi(z @ np.asarray(beta, dtype=float))
    if variant is Variant.POPULATION:
        a = r / ps.pi_safe * (y - phi) + (phi - fitted)
    else:
        w = (1.0 - ps.pi_hat) / ps.pi_safe
        a = r * w * (y - phi) + (1.0 - r) * (phi - fitted)
    return TauEvaluation(tau=a[:, None] * z, variant=variant)


def _aipw_parts(dataset: Dataset, z, pi_safe, pi_hat, phi, variant: Variant):
    """(c, s): the equation reads mean[s Z] = mean[c psi(b'Z) Z]."""
    r = dataset.r.astype(float)
    y = dataset.y_filled()
    if variant is Variant.POPULATION:
        return np.ones_like(r), r / pi_safe * (y - phi) + phi
    w = (1.0 - pi_hat) / pi_safe
    return 1.0 - r, r * w * (y - phi) + (1.0 - r) * phi


def _solve_linear_form(z, c, s, link: Link, beta0) -> np.ndarray:
    """Solve mean[s Z] - mean[c psi(b'Z) Z] = 0."""
    N = z.shape[0]
    rhs = z.T @ s / N
    if link.kind is LinkKind.IDENTITY:
        return spd_solve(_weighted_gram(z, c), rhs, "estimating-equation Gram matrix")
    return damped_newton(lambda b: rhs - z.T @ (c * link.psi(z @ b)) / N,
                         lambda b: -_weighted_gram(z, c * link.psi1(z @ b)),
                         beta0)


def solve_beta_aipw(dataset: Dataset, z, ps: PSFit, or_: ORFit, link: Link | None = None,
                    variant: Variant | str = Variant.POPULATION) -> np.ndarray:
    """AIPW solution for the population or unlabeled target.

    Identity link uses the closed form; otherwise damped Newton with the exact
    Jacobian of the equation (for the unlabeled target this is
    -mean[(1 - r) psi1 Z Z'], whose expectation is -E[(1 - pi) psi1 Z Z']).
    """
    link = link or or_.link
    variant = Variant(variant)
    N = dataset.n_total
    z = _as_z(z, N)
    if variant is Variant.UNLABELED:
        dataset.require_both_groups()
    c, s = _aipw_parts(dataset, z, ps.pi_safe, ps.pi_hat, or_.phi, variant)
    beta0 = _start(z, dataset.y_filled(), dataset.r, link)
    return _solve_linear_form(z, c, s, link, beta0)


def solve_beta_ipw(dataset: Dataset, z, ps: PSFit, link: Link | None = None) -> np.ndarray:
    """Solve mean[(r/pi)(y - psi(b'Z)) Z] = 0."""
    link = link or Link()
    N = dataset.n_total
    z = _as_z(z, N)
    r = dataset.r.astype(float)
    v = r / ps.pi_safe
    s = v * dataset.y_filled()
    return _solve_linear_form(z, v, s, link, _start(z, dataset.y_filled(), r, link))


def solve_beta_stratified(dataset: Dataset, z, or_: ORFit, link: Link | None = None) -> np.ndarray:
    """Solve (1/n) sum_lab (y - phi) Z + (1/N) sum_all (phi - psi(b'Z)) Z = 0."""
    link = link or or_.link
    N = dataset.n_total
    z = _as_z(z, N)
    r = dataset.r.astype(float)
    n = r.sum()
    if n == 0:
        raise ConfigurationError("stratified estimator needs labeled rows")
    s = (N / n) * r * (dataset.y_filled() - or_.phi) + or_.phi
    return _solve_linear_form(z, np.ones(N), s, link, _start(z, dataset.y_filled(), r, link))


@dataclass(frozen=True)
class CrossFitResult:
    beta: np.ndarray
    ps: PSFit  # stitched: row i carries the fit from the folds not containing i
    or_: ORFit
    fold_of: np.ndarray
    fold_ps: tuple
    fold_or: tuple


def crossfit_aipw(dataset: Dataset, z, f: np.ndarray, g: np.ndarray | None = None,
                  link: Link | None = None, folds: int = 5, seed: int = 0,
                  cv_folds: int = 5, config: SolverConfig | None = None,
                  variant: Variant | str = Variant.POPULATION) -> CrossFitResult:
    """AIPW with nuisances (lasso logistic PS, unweighted lasso OR) fitted on
    the complement of each fold and evaluated on the fold."""
    if folds < 2:
        raise ConfigurationError("cross-fitting needs folds >= 2")
    link = link or Link()
    N = dataset.n_total
    z = _as_z(z, N)
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    r = dataset.r.astype(float)
    y = dataset.y_filled()
    fold_of = fold_assignment(N, folds, seed, labeled_folds_ok(r, True))
    eta_ps = np.empty(N)
    eta_or = np.empty(N)
    fold_ps, fold_or = [], []
    for k in range(folds):
        test = fold_of == k
        tr = ~test
        ps_k = fit_ps_rml(f[tr], r[tr], folds=cv_folds, config=config, seed=seed + 1 + k)
        or_k = fit_or_unweighted(g[tr], y[tr], r[tr], link, folds=cv_folds, config=config,
                                 seed=seed + 101 + k)
        eta_ps[test] = f[test] @ ps_k.gamma
        eta_or[test] = g[test] @ or_k.alpha
        fold_ps.append(ps_k)
        fold_or.append(or_k)
    pi = np.exp(-np.logaddexp(0.0, -eta_ps))
    ps = PSFit(gamma=np.full(1, np.nan), pi_hat=pi, w_hat=np.exp(-eta_ps),
               lambda_gamma=float(np.median([p.lambda_gamma for p in fold_ps])),
               method=fold_ps[0].method, active_set=np.array([], dtype=np.int64))
    or_ = ORFit(alpha=np.full(1, np.nan), eta=eta_or, phi=link.psi(eta_or),
                lambda_alpha=float(np.median([o.lambda_alpha for o in fold_or])),
                method=fold_or[0].method, link=link)
    beta = solve_beta_aipw(dataset, z, ps, or_, link, variant)
    return CrossFitResult(beta, ps, or_, fold_of, tuple(fold_ps), tuple(fold_or))
