"""Propensity-score and outcome-regression fits with cross-validated penalties.

PS models: regularized calibration (RCAL), lasso logistic likelihood (RML) and
the constant model pi = n/N. OR models: regularized weighted likelihood (RWL),
weighted by the fitted odds ``w = (1 - pi) / pi``, and the unweighted lasso used
by the RML-based baselines.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError, DegenerateFitError, EstimandError, EstimationError
from .model import Link, LinkKind
from .solver import FitResult, Loss, PenalizedProblem, SolverConfig, minimize_l1

logger = logging.getLogger(__name__)

PI_FLOOR = 1e-6
GRID_POINTS = 20
GRID_RATIO = 1e-3
CV_PATIENCE = 4  # grid points without improvement before the CV path stops
MAX_FOLD_ATTEMPTS = 10
CV_KKT_TOLERANCE = 1e-5  # looser KKT target for fits only scored on held-out rows


class PSMethod(str, enum.Enum):
    RCAL = "RCAL"
    RML = "RML"
    CONSTANT = "Constant"


class ORMethod(str, enum.Enum):
    RWL = "RWL"
    RLS_UNWEIGHTED = "RLS_unweighted"


@dataclass(frozen=True)
class PSFit:
    gamma: np.ndarray
    pi_hat: np.ndarray
    w_hat: np.ndarray
    lambda_gamma: float
    method: PSMethod
    active_set: np.ndarray
    cv_curve: np.ndarray | None = None
    converged: bool = True

    @property
    def n_floored(self) -> int:
        return int(np.sum(self.pi_hat < PI_FLOOR))

    @property
    def pi_safe(self) -> np.ndarray:
        """pi_hat floored at PI_FLOOR, for use as a divisor."""
        return np.maximum(self.pi_hat, PI_FLOOR)

    def predict_eta(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f, dtype=float) @ self.gamma


@dataclass(frozen=True)
class ORFit:
    alpha: np.ndarray
    eta: np.ndarray
    phi: np.ndarray
    lambda_alpha: float
    method: ORMethod
    link: Link
    cv_curve: np.ndarray | None = None
    converged: bool = True

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.alpha[1:]) + 1


def ps_from_eta(eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(pi, w) with pi = 1/(1+e^{-eta}) and w = e^{-eta}."""
    eta = np.asarray(eta, dtype=float)
    return K.sigmoid(eta), np.exp(-eta)


def _check_groups(r: np.ndarray) -> None:
    n, N = int(np.sum(r)), r.shape[0]
    if n == 0 or n == N:
        raise EstimandError(f"PS fit needs labeled and unlabeled rows (n={n}, N={N})")


def _check_grid(grid) -> np.ndarray:
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ConfigurationError("lambda grid is empty")
    if np.any(grid < 0) or np.any(~np.isfinite(grid)):
        raise ConfigurationError("lambda grid must be finite and nonnegative")
    if np.any(np.diff(grid) > 0):
        raise ConfigurationError("lambda grid must be sorted in descending order")
    return grid


def lambda_max(problem: PenalizedProblem, config: SolverConfig | None = None) -> float:
    """Smallest lambda at which every penalized coefficient is zero."""
    p = problem.design.shape[1]
    mask = problem.penalized_mask
    if not mask.any():
        return 0.0
    # intercept-only (more generally: unpenalized-only) fit
    big = problem.with_lambda(0.0)
    sub = PenalizedProblem(big.loss, problem.design[:, ~mask], big.r, big.y, big.w,
                           big.link, 0.0, np.zeros(int((~mask).sum()), dtype=bool),
                           big.denom)
    coef = np.zeros(p)
    coef[~mask] = minimize_l1(sub, config, working_set=False).coefficients
    _, g = problem.value_grad(coef)
    return float(np.max(np.abs(g[mask])))


def default_grid(lmax: float, n_points: int = GRID_POINTS, ratio: float = GRID_RATIO) -> np.ndarray:
    if lmax <= 0:
        return np.array([0.0])
    return lmax * np.geomspace(1.0, ratio, n_points)


def fold_assignment(n_rows: int, folds: int, seed: int,
                    valid: Callable[[np.ndarray], bool] | None = None) -> np.ndarray:
    """Fold index per row: seeded permutation cut into contiguous blocks.

    When ``valid`` rejects the assignment the permutation is redrawn with the
    next seed, up to MAX_FOLD_ATTEMPTS times.
    """
    if folds < 2:
        raise ConfigurationError("cross-validation needs folds >= 2")
    if folds > n_rows:
        raise ConfigurationError(f"{folds} folds for {n_rows} rows")
    for attempt in range(MAX_FOLD_ATTEMPTS):
        perm = np.random.default_rng(int(seed) + attempt).permutation(n_rows)
        fold_of = np.empty(n_rows, dtype=np.int64)
        for k, block in enumerate(np.array_split(perm, folds)):
            fold_of[block] = k
        if valid is None or valid(fold_of):
            return fold_of
    raise EstimationError(
        f"no valid {folds}-fold split after {MAX_FOLD_ATTEMPTS} seeds (too few labeled rows?)"
    )


def labeled_folds_ok(r: np.ndarray, need_unlabeled: bool) -> Callable[[np.ndarray], bool]:
    lab = np.asarray(r) > 0

    def ok(fold_of: np.ndarray) -> bool:
        for k in range(int(fold_of.max()) + 1):
            test = fold_of == k
            if not lab[test].any() or not lab[~test].any():
                return False
            if need_unlabeled and lab[~test].all():
                return False
        return True

    return ok


@dataclass
class ProblemFamily:
    """How to build a training problem on a row subset and score held-out rows.

    ``train(rows)`` returns a PenalizedProblem (lambda ignored) on those rows;
    ``heldout(rows, coef, train_rows)`` returns the *sum* over held-out rows of the
    unpenalized per-row loss.
    """

    train: Callable[[np.ndarray], PenalizedProblem]
    heldout: Callable[[np.ndarray, np.ndarray, np.ndarray], float]
    n_rows: int
    valid: Callable[[np.ndarray], bool] | None = None


def select_lambda_cv(family: ProblemFamily, lambda_grid, folds: int, seed: int,
                     config: SolverConfig | None = None) -> tuple[float, np.ndarray]:
    """K-fold CV over a descending grid; returns (lambda, pooled held-out loss curve).

    All folds walk the grid together with warm starts. The walk stops early
    when some fold's fit has no finite minimizer (smaller lambdas cannot have
    one either) or when the pooled loss has not improved for CV_PATIENCE
    consecutive grid points. Unvisited grid points get +inf.
    """
    grid = _check_grid(lambda_grid)
    curve = np.full(grid.size, np.inf)
    if grid.size == 1:
        curve[0] = np.nan
        return float(grid[0]), curve
    fold_of = fold_assignment(family.n_rows, folds, seed, family.valid)
    rows = np.arange(family.n_rows)
    splits = [(rows[fold_of != k], rows[fold_of == k]) for k in range(folds)]
    problems = [family.train(tr) for tr, _ in splits]
    starts: list = [None] * folds
    steps: list = [None] * folds
    best, since = np.inf, 0
    for i, lam in enumerate(grid):
        total = 0.0
        dead = False
        for k, (tr, te) in enumerate(splits):
            res = minimize_l1(problems[k].with_lambda(lam), config, starts[k], steps[k])
            if res.degenerate:
                dead = True
                break
            starts[k], steps[k] = res.coefficients, res.step
            total += family.heldout(te, res.coefficients, tr)
        if dead:
            break
        curve[i] = total / family.n_rows
        if curve[i] < best:
            best, since = curve[i], 0
        else:
            since += 1
            if since >= CV_PATIENCE:
                break
    if not np.isfinite(curve).any():
        raise EstimationError("cross-validation: no grid value gives a finite fit on every fold")
    return float(grid[int(np.argmin(curve))]), curve


def fit_path(problem: PenalizedProblem, grid: np.ndarray, target: float,
             config: SolverConfig | None = None) -> tuple[FitResult, float]:
    """Warm-started fits down ``grid`` to ``target``.

    If the fit at ``target`` has no finite minimizer the last grid value with
    a finite fit is used instead. Returns (fit, lambda actually used).
    """
    start, step, prev = None, None, None
    for lam in grid[grid >= target]:
        res = minimize_l1(problem.with_lambda(lam), config, start, step)
        if res.degenerate:
            if prev is None:
                raise DegenerateFitError(
                    f"{problem.loss.value} fit has no finite minimizer at lambda={lam:.4g}")
            logger.warning("%s fit degenerate at lambda=%.4g; using %.4g",
                           problem.loss.value, lam, prev[1])
            return prev
        prev = (res, float(lam))
        start, step = res.coefficients, res.step
    return prev


def _resolve_grid(problem: PenalizedProblem, lambda_grid, config) -> np.ndarray:
    if lambda_grid is None:
        return default_grid(lambda_max(problem, config))
    return _check_grid(lambda_grid)


def _select_and_fit(problem, family, lambda_grid, folds, seed, config):
    grid = _resolve_grid(problem, lambda_grid, config)
    if folds == 0 or grid.size == 1:
        target, curve = float(grid[-1]), None
    elif folds < 2:
        raise ConfigurationError("folds must be 0 (fixed lambda) or >= 2")
    else:
        target, curve = select_lambda_cv(family, grid, folds, seed, cv_config(config))
    res, lam = fit_path(problem, grid, target, config)
    if not res.converged:
        logger.warning("%s fit stopped with KKT residual %.3g", problem.loss.value,
                       res.kkt_residual)
    return res, lam, curve


def _ps_fit(loss: Loss, method: PSMethod, f, r, lambda_grid, folds, config, seed) -> PSFit:
    f = np.ascontiguousarray(f, dtype=float)
    r = np.asarray(r, dtype=float)
    if f.ndim != 2 or f.shape[0] != r.shape[0]:
        raise ConfigurationError("F must be an N x (p+1) matrix aligned with r")
    _check_groups(r)
    problem = PenalizedProblem(loss, f, r)

    def train(rows):
        return PenalizedProblem(loss, f[rows], r[rows])

    def heldout(rows, coef, _train):
        eta = f[rows] @ coef
        return float(K.loss_value(problem.code, eta, r[rows], np.zeros(rows.size),
                                  np.ones(rows.size), 1.0))

    family = ProblemFamily(train, heldout, f.shape[0], labeled_folds_ok(r, True))
    res, lam, curve = _select_and_fit(problem, family, lambda_grid, folds, seed, config)
    if loss is Loss.CALIBRATION:
        res = _calibrate_intercept(f, r, res)
    return _make_psfit(f, res, lam, method, curve)


def _calibrate_intercept(f, r, res: FitResult) -> FitResult:
    """Closed-form intercept so that sum over labeled rows of w equals N - n.

    This is the exact intercept minimizer given the slopes, so it can only
    lower the objective; it removes the rounding left by an early stop.
    """
    eta = f @ res.coefficients
    lab = r > 0
    if np.min(eta[lab]) < -K.EXP_CAP:
        return res
    a = np.sum(np.exp(-eta[lab]))
    gamma = res.coefficients.copy()
    gamma[0] += np.log(a) - np.log(r.size - np.sum(r))
    return replace(res, coefficients=gamma)


def _make_psfit(f, res: FitResult, lam, method, curve) -> PSFit:
    gamma = res.coefficients
    pi, w = ps_from_eta(f @ gamma)
    fit = PSFit(gamma=gamma, pi_hat=pi, w_hat=w, lambda_gamma=float(lam), method=method,
                active_set=np.flatnonzero(gamma[1:]) + 1, cv_curve=curve,
                converged=res.converged)
    if fit.n_floored:
        logger.warning("%d fitted propensities below %g", fit.n_floored, PI_FLOOR)
    return fit


def fit_ps_rcal(f, r, lambda_grid=None, folds: int = 5, config: SolverConfig | None = None,
                seed: int = 0) -> PSFit:
    """Regularized calibrated PS fit; ``folds=0`` fits at the last grid value."""
    return _ps_fit(Loss.CALIBRATION, PSMethod.RCAL, f, r, lambda_grid, folds, config, seed)


def fit_ps_rml(f, r, lambda_grid=None, folds: int = 5, config: SolverConfig | None = None,
               seed: int = 0) -> PSFit:
    """Lasso-penalized logistic PS fit."""
    return _ps_fit(Loss.LOGISTIC_ML, PSMethod.RML, f, r, lambda_grid, folds, config, seed)


def fit_ps_constant(r, n_rows: int | None = None) -> PSFit:
    """pi = n/N for every row."""
    r = np.asarray(r, dtype=float)
    _check_groups(r)
    N = r.shape[0] if n_rows is None else n_rows
    rho = float(np.sum(r)) / r.shape[0]
    gamma = np.array([np.log(rho) - np.log1p(-rho)])
    pi, w = ps_from_eta(np.full(N, gamma[0]))
    return PSFit(gamma=gamma, pi_hat=pi, w_hat=w, lambda_gamma=0.0,
                 method=PSMethod.CONSTANT, active_set=np.array([], dtype=np.int64))


def refit_ps(f, r, ps: PSFit, config: SolverConfig | None = None) -> PSFit:
    """Refit a PS model of the same kind at its selected lambda (no CV)."""
    if ps.method is PSMethod.CONSTANT:
        return fit_ps_constant(r)
    fn = fit_ps_rcal if ps.method is PSMethod.RCAL else fit_ps_rml
    f = np.asarray(f, dtype=float)
    lam = ps.lambda_gamma
    # walk a short path so a small lambda is reached from a warm start
    grid = np.unique(np.concatenate([default_grid(max(lam, 1e-12) * 8, 4, 1 / 8), [lam]]))[::-1]
    return fn(f, r, grid, folds=0, config=config)


def _or_inputs(g, y, r):
    g = np.ascontiguousarray(g, dtype=float)
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    if g.ndim != 2 or g.shape[0] != r.shape[0] or y.shape != r.shape:
        raise ConfigurationError("G, y and r must be row-aligned")
    lab = r > 0
    if not lab.any():
        raise EstimandError("OR fit needs labeled rows")
    if not np.all(np.isfinite(y[lab])):
        raise ConfigurationError("y must be finite on labeled rows")
    return g, y, r, lab


def _make_orfit(g, res, lam, method, link, curve) -> ORFit:
    alpha = res.coefficients
    eta = g @ alpha
    return ORFit(alpha=alpha, eta=eta, phi=link.psi(eta), lambda_alpha=float(lam),
                 method=method, link=link, cv_curve=curve, converged=res.converged)


def _check_link_outcome(y_lab, link: Link):
    if link.kind is LinkKind.LOGIT and np.any((y_lab < 0) | (y_lab > 1)):
        raise ConfigurationError("logit link needs outcomes in [0, 1]")


def fit_or_rwl(g, y, r, ps: PSFit, link: Link | None = None, lambda_grid=None,
               folds: int = 5, config: SolverConfig | None = None, seed: int = 0,
               f: np.ndarray | None = None) -> ORFit:
    """Regularized weighted likelihood OR fit with weights ``ps.w_hat``.

    The loss is averaged over all N rows; unlabeled rows contribute zero. When
    the PS basis ``f`` is given, cross-validation refits the PS model on each
    training fold and scores held-out rows with that fold's weights; otherwise
    the full-data weights are reused inside CV.
    """
    link = link or Link()
    g, y, r, lab = _or_inputs(g, y, r)
    _check_link_outcome(y[lab], link)
    N = g.shape[0]
    w = np.asarray(ps.w_hat, dtype=float)
    if w.shape != (N,):
        raise ConfigurationError("PS fit is not row-aligned with G")
    if not np.any(w[lab] > 0):
        raise DegenerateFitError("all labeled rows have zero weight")
    gl, yl, wl = g[lab], y[lab], w[lab]
    problem = PenalizedProblem(Loss.WEIGHTED_ML, gl, np.ones(gl.shape[0]), yl, wl, link,
                               denom=N)
    code = problem.code
    fold_ps: dict = {}

    def fold_weights(train_rows):
        key = (train_rows[0], train_rows.size, int(train_rows.sum()))
        if f is None:
            return w
        if key not in fold_ps:
            fp = refit_ps(f[train_rows], r[train_rows], ps, config)
            _, fold_ps[key] = ps_from_eta(np.asarray(f, dtype=float) @ fp.gamma)
        return fold_ps[key]

    def train(rows):
        wk = fold_weights(rows)
        keep = rows[lab[rows]]
        return PenalizedProblem(Loss.WEIGHTED_ML, g[keep], np.ones(keep.size), y[keep],
                                wk[keep], link, denom=rows.size)

    def heldout(rows, coef, train_rows):
        wk = fold_weights(train_rows)
        keep = rows[lab[rows]]
        return float(K.loss_value(code, g[keep] @ coef, np.ones(keep.size), y[keep],
                                  wk[keep], 1.0))

    family = ProblemFamily(train, heldout, N, labeled_folds_ok(r, f is not None))
    res, lam, curve = _select_and_fit(problem, family, lambda_grid, folds, seed, config)
    return _make_orfit(g, res, lam, ORMethod.RWL, link, curve)


def fit_or_unweighted(g, y, r, link: Link | None = None, lambda_grid=None, folds: int = 5,
                      config: SolverConfig | None = None, seed: int = 0) -> ORFit:
    """Lasso OR fit on labeled rows with unit weights.

    Identity link: mean over labeled rows of (y - a'G)^2. Logit link: mean
    negative Bernoulli log-likelihood over labeled rows.
    """
    link = link or Link()
    g, y, r, lab = _or_inputs(g, y, r)
    _check_link_outcome(y[lab], link)
    loss = Loss.WEIGHTED_LS if link.kind is LinkKind.IDENTITY else Loss.WEIGHTED_ML
    gl, yl = g[lab], y[lab]
    nl = gl.shape[0]
    problem = PenalizedProblem(loss, gl, np.ones(nl), yl, np.ones(nl), link)
    code = problem.code

    def train(rows):
        return PenalizedProblem(loss, gl[rows], np.ones(rows.size), yl[rows],
                                np.ones(rows.size), link)

    def heldout(rows, coef, _train):
        return float(K.loss_value(code, gl[rows] @ coef, np.ones(rows.size), yl[rows],
                                  np.ones(rows.size), 1.0))

    family = ProblemFamily(train, heldout, nl)
    res, lam, curve = _select_and_fit(problem, family, lambda_grid, folds, seed, config)
    return _make_orfit(g, res, lam, ORMethod.RLS_UNWEIGHTED, link, curve)


def cv_config(config: SolverConfig | None) -> SolverConfig:
    """Solver settings for fits that are only scored on held-out rows."""
    config = config or SolverConfig()
    return replace(config, kkt_tolerance=max(config.kkt_tolerance, CV_KKT_TOLERANCE))


def with_config(config: SolverConfig | None, **changes) -> SolverConfig:
    return replace(config or SolverConfig(), **changes)
