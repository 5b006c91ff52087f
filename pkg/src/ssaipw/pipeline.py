"""End-to-end estimation: bases -> nuisance fits -> beta -> sandwich intervals."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, build_or_basis, build_ps_basis
from .errors import ConfigurationError, EstimandError
from .estimators import (
    Variant,
    crossfit_aipw,
    evaluate_tau,
    plain_fit,
    solve_beta_aipw,
    solve_beta_ipw,
    solve_beta_stratified,
)
from .inference import EstimateReport, build_report, gamma_hat, lambda_hat, lambda_hat_stratified
from .model import Dataset, Estimand, Link, TargetSpec, extract_z
from .nuisance import fit_or_rwl, fit_or_unweighted, fit_ps_rcal, fit_ps_rml
from .solver import SolverConfig


class Method(str, enum.Enum):
    AIPW_RCAL = "aipw-rcal"
    AIPW_RML = "aipw-rml"
    AIPW_CF = "aipw-cf"
    IPW = "ipw"
    PLAIN = "plain"  # labeled-only regression of y on Z, no nuisance models


@dataclass(frozen=True)
class FitOptions:
    basis: BasisSpec = field(default_factory=BasisSpec)
    folds: int = 5  # CV folds for penalty selection; 0 = last grid value
    crossfit_folds: int = 5
    levels: tuple[float, ...] = (0.90, 0.95)
    or_interactions: bool = True  # G = [F, Z x F] for AIPW_RCAL
    ps_grid: tuple[float, ...] | None = None
    or_grid: tuple[float, ...] | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.folds == 1 or self.folds < 0:
            raise ConfigurationError("folds must be 0 or >= 2")
        if self.crossfit_folds < 2:
            raise ConfigurationError("cross-fitting needs at least 2 folds")


def _seeds(seed: int, k: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(k, dtype=np.uint32)]


def estimate(dataset: Dataset, target: TargetSpec, method: Method | str,
             options: FitOptions | None = None, seed: int = 0) -> EstimateReport:
    """Fit one method for one target and return beta with sandwich intervals.

    For IPW the report carries beta only (sigma, se and intervals are NaN).
    The stratified estimand uses pi = n/N and an unweighted OR fit. The plain
    method ignores the unlabeled rows and accepts fully labeled data.
    """
    method = Method(method)
    options = options or FitOptions()
    link = target.link
    estimand = target.estimand
    z = extract_z(dataset, target)
    if method is Method.PLAIN:
        return _plain_report(dataset, z, link, options, estimand)
    dataset.require_both_groups()
    f = build_ps_basis(dataset, options.basis)
    r = dataset.r.astype(float)
    y = dataset.y_filled()
    s_ps, s_or, s_cf = _seeds(seed, 3)
    cfg = options.solver
    nuis: dict = {}

    if estimand is Estimand.STRATIFIED:
        if method is Method.IPW:
            raise ConfigurationError("the stratified estimand needs an outcome model")
        g = build_or_basis(f, z) if (method is Method.AIPW_RCAL and options.or_interactions) else f
        or_ = fit_or_unweighted(g, y, r, link, options.or_grid, options.folds, cfg, s_or)
        beta = solve_beta_stratified(dataset, z, or_, link)
        gam = gamma_hat(z, beta, link)
        lam = lambda_hat_stratified(dataset, z, or_, beta, link)
        nuis.update(lambda_alpha=or_.lambda_alpha, or_active=int(or_.active_set.size))
        return build_report(beta, gam, lam, dataset.n_labeled, options.levels,
                            method.value, estimand, nuis)

    variant = Variant.UNLABELED if estimand is Estimand.UNLABELED else Variant.POPULATION
    if method is Method.AIPW_CF:
        cf = crossfit_aipw(dataset, z, f, None, link, options.crossfit_folds, s_cf,
                           options.folds, cfg, variant)
        ps, or_, beta = cf.ps, cf.or_, cf.beta
        nuis.update(lambda_gamma=ps.lambda_gamma, lambda_alpha=or_.lambda_alpha)
    else:
        if method is Method.AIPW_RCAL:
            ps = fit_ps_rcal(f, r, options.ps_grid, options.folds, cfg, s_ps)
        else:
            ps = fit_ps_rml(f, r, options.ps_grid, options.folds, cfg, s_ps)
        nuis.update(lambda_gamma=ps.lambda_gamma, ps_active=int(ps.active_set.size))
        if method is Method.IPW:
            if variant is Variant.UNLABELED:
                raise ConfigurationError("IPW is implemented for the population estimand only")
            beta = solve_beta_ipw(dataset, z, ps, link)
            nuis["n_floored"] = ps.n_floored
            m = beta.size
            nan = np.full(m, np.nan)
            return EstimateReport(beta_hat=beta, sigma_hat=np.full((m, m), np.nan), se=nan,
                                  levels=tuple(options.levels),
                                  ci_lower={lv: nan for lv in options.levels},
                                  ci_upper={lv: nan for lv in options.levels},
                                  method=method.value, estimand=estimand.value,
                                  n_scale=dataset.n_total, nuisance=nuis)
        if method is Method.AIPW_RCAL:
            g = build_or_basis(f, z) if options.or_interactions else f
            or_ = fit_or_rwl(g, y, r, ps, link, options.or_grid, options.folds, cfg, s_or, f=f)
        else:
            or_ = fit_or_unweighted(f, y, r, link, options.or_grid, options.folds, cfg, s_or)
        nuis.update(lambda_alpha=or_.lambda_alpha, or_active=int(or_.active_set.size))
        beta = solve_beta_aipw(dataset, z, ps, or_, link, variant)
    nuis["n_floored"] = ps.n_floored
    tau = evaluate_tau(dataset, z, ps, or_, beta, link, variant)
    gam = gamma_hat(z, beta, link, variant, ps.pi_hat)
    return build_report(beta, gam, lambda_hat(tau), dataset.n_total, options.levels,
                        method.value, estimand, nuis)


def _plain_report(dataset: Dataset, z: np.ndarray, link: Link, options: FitOptions,
                  estimand: Estimand) -> EstimateReport:
    lab = dataset.labeled
    n = int(lab.sum())
    if n == 0:
        raise EstimandError("the plain fit needs labeled rows")
    zl, yl = z[lab], dataset.y[lab]
    beta = plain_fit(zl, yl, link)
    resid = yl - link.psi(zl @ beta)
    lam = lambda_hat(zl * resid[:, None])
    return build_report(beta, gamma_hat(zl, beta, link), lam, n, options.levels,
                        Method.PLAIN.value, estimand, {})
