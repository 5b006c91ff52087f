"""L1-penalized convex minimization for the four nuisance losses.

All losses are averages over rows of a per-row function of the linear
predictor ``eta = D @ coef``; the solver only needs the per-row derivative
and a matrix-vector product, which keeps the compiled kernel generic.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError, SolverError
from .model import Link, LinkKind

logger = logging.getLogger(__name__)


class Loss(str, enum.Enum):
    CALIBRATION = "calibration"
    WEIGHTED_ML = "weighted_ml"
    LOGISTIC_ML = "logistic_ml"
    WEIGHTED_LS = "weighted_ls"


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 10000
    tolerance: float = 1e-9
    shrink: float = 0.5
    initial_step: float = 1.0
    kkt_tolerance: float = 1e-6
    exact_intercept: bool = True
    keep_trace: bool = False

    def __post_init__(self):
        if self.max_iterations < 1 or self.tolerance <= 0 or self.kkt_tolerance <= 0:
            raise ConfigurationError("solver limits must be positive")
        if not 0.0 < self.shrink < 1.0:
            raise ConfigurationError("shrink factor must lie in (0, 1)")
        if self.initial_step <= 0:
            raise ConfigurationError("initial step must be positive")


@dataclass
class PenalizedProblem:
    """Loss on ``design`` plus ``lam * sum(|coef_j|)`` over penalized columns.

    ``denom`` is the number of rows the loss is averaged over; it may exceed
    the number of stored rows when rows that contribute zero (unlabeled rows of
    the outcome losses) are dropped for speed.
    """

    loss: Loss
    design: np.ndarray
    r: np.ndarray
    y: np.ndarray | None = None
    w: np.ndarray | None = None
    link: Link = field(default_factory=Link)
    lam: float = 0.0
    penalized_mask: np.ndarray | None = None
    denom: float | None = None

    def __post_init__(self):
        self.loss = Loss(self.loss)
        D = np.ascontiguousarray(self.design, dtype=float)
        if D.ndim != 2:
            raise ConfigurationError("design must be 2-d")
        n = D.shape[0]
        self.design = D
        self.r = np.ascontiguousarray(self.r, dtype=float)
        self.y = np.zeros(n) if self.y is None else np.nan_to_num(
            np.ascontiguousarray(self.y, dtype=float), nan=0.0)
        self.w = np.ones(n) if self.w is None else np.ascontiguousarray(self.w, dtype=float)
        if not (self.r.shape == self.y.shape == self.w.shape == (n,)):
            raise ConfigurationError("r, y, w must match the design rows")
        if np.any(self.w < 0):
            raise ConfigurationError("weights must be nonnegative")
        if self.penalized_mask is None:
            mask = np.ones(D.shape[1], dtype=bool)
            mask[0] = False
            self.penalized_mask = mask
        self.penalized_mask = np.asarray(self.penalized_mask, dtype=bool)
        if self.penalized_mask.shape != (D.shape[1],):
            raise ConfigurationError("penalized_mask length must match the design columns")
        if self.penalized_mask[0]:
            raise ConfigurationError("the intercept (column 0) is never penalized")
        if self.lam < 0 or np.isnan(self.lam):
            raise ConfigurationError("lambda must be nonnegative")
        self.denom = float(n if self.denom is None else self.denom)

    @property
    def code(self) -> int:
        return loss_code(self.loss, self.link)

    @property
    def lam_vector(self) -> np.ndarray:
        return np.where(self.penalized_mask, self.lam, 0.0)

    def with_lambda(self, lam: float) -> "PenalizedProblem":
        return replace(self, lam=float(lam))

    def value_grad(self, coef: np.ndarray) -> tuple[float, np.ndarray]:
        eta = self.design @ coef
        v = K.loss_value(self.code, eta, self.r, self.y, self.w, self.denom)
        d = K.loss_derivative(self.code, eta, self.r, self.y, self.w, self.denom)
        return float(v), self.design.T @ d

    def objective(self, coef: np.ndarray) -> float:
        return self.value_grad(coef)[0] + float(np.sum(self.lam_vector * np.abs(coef)))

    def kkt(self, coef: np.ndarray) -> float:
        return float(K.kkt_residual(coef, self.value_grad(coef)[1], self.lam_vector))


def loss_code(loss: Loss, link: Link | None = None) -> int:
    loss = Loss(loss)
    if loss is Loss.CALIBRATION:
        return K.CAL
    if loss is Loss.LOGISTIC_ML:
        return K.LOGISTIC
    if loss is Loss.WEIGHTED_LS:
        return K.WLS
    link = link or Link()
    return K.WML_LOGIT if link.kind is LinkKind.LOGIT else K.WML_IDENTITY


@dataclass(frozen=True)
class FitResult:
    coefficients: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    step: float = 1.0
    n_clamped: int = 0
    degenerate: bool = False
    trace: np.ndarray | None = None


def soft_threshold(x, t):
    """sign(x) * max(|x| - t, 0)."""
    if np.any(np.asarray(t) < 0):
        raise ConfigurationError("threshold must be nonnegative")
    out = np.sign(x) * np.maximum(np.abs(x) - t, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def _run_kernel(problem: PenalizedProblem, design, lam, x0, step, config, max_iter):
    trace = np.empty(max_iter + 1)
    out = K.prox_grad(
        problem.code, design, problem.r, problem.y, problem.w, problem.denom,
        lam, x0, float(step), int(max_iter), float(config.tolerance),
        float(config.kkt_tolerance), float(config.shrink),
        bool(config.exact_intercept), trace)
    return out + (trace,)


def minimize_l1(problem: PenalizedProblem, config: SolverConfig | None = None,
                start: np.ndarray | None = None, step: float | None = None,
                working_set: bool = True) -> FitResult:
    """Minimize ``problem`` by accelerated proximal gradient.

    ``start`` and ``step`` warm-start the iterate and the step size (e.g. from
    the previous point of a lambda path).

    With ``working_set`` the kernel runs on the columns that are nonzero or
    whose gradient is close to the threshold, then the full gradient is
    checked and violating columns are added until the KKT conditions hold on
    every column. Each restricted solve starts from the previous solution, so
    the objective stays nonincreasing across rounds.
    """
    config = config or SolverConfig()
    D = problem.design
    p = D.shape[1]
    lam = problem.lam_vector
    x = np.zeros(p) if start is None else np.array(start, dtype=float)
    step = float(step or config.initial_step)
    if not working_set or p <= 32:
        x, obj, it, kkt, step, status, clamped, trace = _run_kernel(
            problem, D, lam, x, step, config, config.max_iterations)
        return _result(problem, config, x, obj, it, kkt, step, status, clamped,
                       trace[: it + 1])

    _, g = problem.value_grad(x)
    active = (x != 0) | ~problem.penalized_mask | (np.abs(g) >= 0.8 * lam)
    total_it = 0
    traces = []
    clamped_max = 0
    while True:
        cols = np.flatnonzero(active)
        sub = np.ascontiguousarray(D[:, cols])
        budget = max(config.max_iterations - total_it, 1)
        xs, obj, it, kkt_sub, step, status, clamped, trace = _run_kernel(
            problem, sub, lam[cols], x[cols], step, config, budget)
        x = np.zeros(p)
        x[cols] = xs
        traces.append(trace[: it + 1] if not traces else trace[1: it + 1])
        total_it += it
        clamped_max = max(clamped_max, int(clamped))
        if status in (K.STATUS_DIVERGED, K.STATUS_DEGENERATE):
            kkt = kkt_sub
            break
        _, g = problem.value_grad(x)
        kkt = float(K.kkt_residual(x, g, lam))
        viol = ~active & (np.abs(g) > lam + config.kkt_tolerance)
        if not viol.any() or total_it >= config.max_iterations:
            break
        # add the worst violators plus near-threshold columns
        active |= viol | (~active & (np.abs(g) >= 0.8 * lam))
    return _result(problem, config, x, obj, total_it, kkt, step, status, clamped_max,
                   np.concatenate(traces))


def _result(problem, config, x, obj, it, kkt, step, status, clamped, trace) -> FitResult:
    if status == K.STATUS_DIVERGED:
        raise SolverError(f"{problem.loss.value} loss diverged (objective {obj})")
    degenerate = status == K.STATUS_DEGENERATE
    if clamped:
        logger.warning("%s loss: %d linear predictors clamped at -%g inside exp",
                       problem.loss.value, clamped, K.EXP_CAP)
    return FitResult(
        coefficients=np.asarray(x),
        objective=float(obj),
        iterations=int(it),
        converged=bool(kkt <= config.kkt_tolerance) and not degenerate,
        kkt_residual=float(kkt),
        step=float(step),
        n_clamped=int(clamped),
        degenerate=degenerate,
        trace=trace.copy() if config.keep_trace else None,
    )


def _value_grad(code, coef, design, r, y, w):
    design = np.asarray(design, dtype=float)
    coef = np.asarray(coef, dtype=float)
    n = design.shape[0]
    y = np.zeros(n) if y is None else np.nan_to_num(np.asarray(y, dtype=float), nan=0.0)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    r = np.asarray(r, dtype=float)
    eta = design @ coef
    v = K.loss_value(code, eta, r, y, w, float(n))
    d = K.loss_derivative(code, eta, r, y, w, float(n))
    return float(v), design.T @ d


def loss_calibration(gamma, f, r):
    """Mean of r e^{-gamma'F} + (1 - r) gamma'F and its gradient."""
    return _value_grad(K.CAL, gamma, f, r, None, None)


def loss_logistic_ml(gamma, f, r):
    """Average negative Bernoulli log-likelihood of r under a logistic model."""
    return _value_grad(K.LOGISTIC, gamma, f, r, None, None)


def loss_weighted_ml(alpha, g, y, r, w, link: Link):
    """Mean of r w {-y alpha'G + Psi(alpha'G)}."""
    return _value_grad(loss_code(Loss.WEIGHTED_ML, link), alpha, g, r, y, w)


def loss_weighted_ls(alpha, g, y, r, w):
    """Mean of r w (y - alpha'G)^2."""
    return _value_grad(K.WLS, alpha, g, r, y, w)
