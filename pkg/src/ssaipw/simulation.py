"""Monte Carlo study: the five outcome designs, oracle truths and the replication driver.

Covariates: (X1, X2, X3) ~ N(0, S) with S_ij = 2^-|i-j|, each clamped to
[-3, 3]. Labels: R ~ Bernoulli(1 / (1 + exp(-g'F))) with g = (-1.5, -0.8,
-0.2, 0.3, 0, ...) on the hinge basis F. Every replication draws from its own
stream, keyed by (seed, replication index), so results do not depend on how
replications are scheduled.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from threadpoolctl import threadpool_limits

from .basis import BasisSpec, build_ps_basis
from .errors import ConfigurationError, EstimationError, SSAIPWError
from .model import Dataset, Link, TargetSpec
from .pipeline import FitOptions, Method, estimate

logger = logging.getLogger(__name__)

COV = np.array([[2.0 ** -abs(i - j) for j in range(3)] for i in range(3)])
PS_GAMMA = (-1.5, -0.8, -0.2, 0.3)
NOISE_SD = math.sqrt(0.1)  # epsilon ~ N(0, 0.1) read as variance 0.1
CLAMP = 3.0
ORACLE_N = 1_000_000
ORACLE_SEED = 20_231_017
MAX_FAILURE_RATE = 0.05


class Case(enum.IntEnum):
    CASE1 = 1
    CASE2 = 2
    CASE3 = 3
    CASE4 = 4
    CASE5 = 5

    @property
    def z_columns(self) -> tuple[int, ...]:
        return {1: (), 2: (), 3: (1,), 4: (1,), 5: (1, 2, 3)}[int(self)]


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Rows (1, X1, X2, X3)."""
    chol = np.linalg.cholesky(COV)
    e = rng.standard_normal((n, 3))
    # explicit sums keep the draw independent of BLAS blocking
    x = np.empty_like(e)
    for i in range(3):
        x[:, i] = sum(chol[i, k] * e[:, k] for k in range(i + 1))
    return np.column_stack([np.ones(n), np.clip(x, -CLAMP, CLAMP)])


def ps_coefficients(width: int) -> np.ndarray:
    if width < len(PS_GAMMA):
        raise ConfigurationError(f"PS basis has {width} columns, need at least {len(PS_GAMMA)}")
    gamma = np.zeros(width)
    gamma[: len(PS_GAMMA)] = PS_GAMMA
    return gamma


def gen_labels(f: np.ndarray, rng: np.random.Generator, gamma=None) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    gamma = ps_coefficients(f.shape[1]) if gamma is None else np.asarray(gamma, dtype=float)
    if gamma.shape != (f.shape[1],):
        raise ConfigurationError("gamma length must match the PS basis width")
    pi = 1.0 / (1.0 + np.exp(-(f @ gamma)))
    return (rng.random(f.shape[0]) < pi).astype(np.int8)


def outcome_mean(case: Case | int, x: np.ndarray) -> np.ndarray:
    """E[Y | X] for rows (1, X1, X2, X3)."""
    case = Case(case)
    x1, x2, x3 = x[:, 1], x[:, 2], x[:, 3]
    if case is Case.CASE1:
        def t(v):
            a = np.abs(v)
            return v * a**0.1 + v * a**0.3 + v * a**0.5
        return -0.2 + 0.1 * t(x1) + 0.4 * t(x2) + 0.7 * t(x3)
    if case is Case.CASE2:
        def t(v):
            a = np.abs(v)
            return a * np.exp(a**0.1 + a**0.3)
        return -0.2 + 0.1 * t(x1) + 0.4 * t(x2) + 0.7 * t(x3)
    if case is Case.CASE3:
        return 0.4 * (x1 + x1**2) + 0.2 * np.cos(np.pi / 9 * x1 * x3)
    if case is Case.CASE4:
        return 0.4 * np.where(x1 > 0, x1 * np.sqrt(np.abs(x1)), 0.0) + 0.2 * x1 * x2
    return -0.2 + 0.1 * x1 * x2 + 0.4 * x2 * x3 + 0.7 * x1 * x3


def gen_outcome(case: Case | int, x: np.ndarray, rng: np.random.Generator,
                noise_sd: float = NOISE_SD) -> np.ndarray:
    return outcome_mean(case, x) + noise_sd * rng.standard_normal(x.shape[0])


@lru_cache(maxsize=64)
def _true_beta(case: int, z_columns: tuple[int, ...], oracle_n: int, seed: int) -> tuple:
    rng = np.random.default_rng(seed)
    half = oracle_n // 2
    x = gen_covariates(half, rng)
    # antithetic pairs: -X has the same (symmetric, symmetrically clamped) law
    x = np.vstack([x, np.column_stack([x[:, :1], -x[:, 1:]])])
    mean = outcome_mean(case, x)
    z = np.column_stack([np.ones(x.shape[0])] + [x[:, c] for c in z_columns])
    beta = np.linalg.solve(z.T @ z, z.T @ mean)
    return tuple(float(b) for b in beta)


def true_beta(case: Case | int, z_columns: tuple[int, ...] | None = None,
              oracle_n: int = ORACLE_N, seed: int = ORACLE_SEED) -> np.ndarray:
    """Least-squares projection E(ZZ')^{-1} E(Z m(X)) on a large oracle sample.

    E(ZY) is replaced by E(Z m(X)) with m the conditional mean (same target,
    no noise), and the sample is made of antithetic pairs X, -X.
    """
    case = Case(case)
    cols = case.z_columns if z_columns is None else tuple(int(c) for c in z_columns)
    if oracle_n < 2:
        raise ConfigurationError("oracle_n must be at least 2")
    return np.array(_true_beta(int(case), cols, int(oracle_n), int(seed)))


def simulate_dataset(case: Case | int, n_total: int, rng: np.random.Generator,
                     basis: BasisSpec | None = None, noise_sd: float = NOISE_SD) -> Dataset:
    x = gen_covariates(n_total, rng)
    f = build_ps_basis(x, basis or BasisSpec())
    r = gen_labels(f, rng)
    y = gen_outcome(case, x, rng, noise_sd)
    return Dataset(x, np.where(r == 1, y, np.nan), r)


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(rep),)))


@dataclass(frozen=True)
class SimConfig:
    case: Case = Case.CASE1
    n_total: int = 2000
    replications: int = 500
    seed: int = 0
    methods: tuple[Method, ...] = (Method.AIPW_RCAL,)
    basis: BasisSpec = field(default_factory=BasisSpec)
    levels: tuple[float, ...] = (0.90, 0.95)
    noise_sd: float = NOISE_SD
    folds: int = 5
    or_interactions: bool = True
    oracle_n: int = ORACLE_N

    def __post_init__(self):
        object.__setattr__(self, "case", Case(self.case))
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        if self.n_total < 10:
            raise ConfigurationError("n_total must be at least 10")
        if not self.methods:
            raise ConfigurationError("at least one method is required")
        if self.noise_sd < 0:
            raise ConfigurationError("noise_sd must be nonnegative")

    @property
    def target(self) -> TargetSpec:
        return TargetSpec(self.case.z_columns, link=Link())

    def fit_options(self) -> FitOptions:
        return FitOptions(basis=self.basis, folds=self.folds, levels=self.levels,
                          or_interactions=self.or_interactions)

    def describe(self) -> dict:
        d = asdict(self)
        d["case"] = int(self.case)
        d["methods"] = [m.value for m in self.methods]
        d["basis"] = {"knots_per_covariate": self.basis.knots_per_covariate,
                      "placement": self.basis.placement.value,
                      "half_width": self.basis.half_width}
        d["levels"] = list(self.levels)
        return d


@dataclass
class RepResult:
    rep: int
    n_labeled: int
    beta: dict  # method -> vector or None on failure
    se: dict
    hits: dict  # method -> {level: bool vector}
    errors: dict  # method -> message


def run_one(config: SimConfig, rep: int) -> RepResult:
    rng = replication_rng(config.seed, rep)
    data = simulate_dataset(config.case, config.n_total, rng, config.basis, config.noise_sd)
    truth = true_beta(config.case, oracle_n=config.oracle_n)
    fit_seed = int(np.random.SeedSequence(int(config.seed), spawn_key=(int(rep), 1))
                   .generate_state(1)[0])
    out = RepResult(rep, data.n_labeled, {}, {}, {}, {})
    opts = config.fit_options()
    for method in config.methods:
        try:
            rep_ = estimate(data, config.target, method, opts, fit_seed)
        except SSAIPWError as exc:
            out.beta[method.value] = None
            out.errors[method.value] = f"{exc.kind}: {exc}"
            continue
        out.beta[method.value] = rep_.beta_hat
        out.se[method.value] = rep_.se
        out.hits[method.value] = {lv: rep_.covers(truth, lv) for lv in config.levels}
    return out


def _run_chunk(args) -> list[RepResult]:
    config, reps = args
    with threadpool_limits(limits=1):
        return [run_one(config, rep) for rep in reps]


def run_raw(config: SimConfig, jobs: int = 1) -> list[RepResult]:
    """All replications in index order; ``jobs`` worker processes."""
    reps = list(range(config.replications))
    if jobs <= 1:
        return _run_chunk((config, reps))
    chunks = [(config, reps[i::jobs]) for i in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_run_chunk, chunks))
    results = [r for part in parts for r in part]
    results.sort(key=lambda r: r.rep)
    return results


@dataclass(frozen=True)
class CoefficientMetrics:
    bias: float
    sqrt_var: float
    sqrt_evar: float | None
    cp90: float | None
    cp95: float | None


@dataclass(frozen=True)
class MetricsReport:
    config: dict
    true_beta: tuple[float, ...]
    replications: int
    methods: dict  # method -> {"n_ok", "n_failed", "coefficients": [CoefficientMetrics]}
    mean_labeled: float

    def metrics(self, method: Method | str, coef: int = 0) -> CoefficientMetrics:
        return self.methods[Method(method).value]["coefficients"][coef]


def aggregate(config: SimConfig, results: list[RepResult]) -> MetricsReport:
    truth = true_beta(config.case, oracle_n=config.oracle_n)
    m = truth.size
    per_method = {}
    for method in config.methods:
        key = method.value
        ok = [r for r in results if r.beta.get(key) is not None]
        failed = len(results) - len(ok)
        if failed > MAX_FAILURE_RATE * len(results):
            first = next(r.errors[key] for r in results if key in r.errors)
            raise EstimationError(f"{key}: {failed} of {len(results)} replications failed "
                                  f"(first: {first})")
        betas = np.array([r.beta[key] for r in ok]).reshape(len(ok), m)
        coefs = []
        for j in range(m):
            b = betas[:, j]
            bias = float(b.mean() - truth[j]) if len(ok) else math.nan
            sd = float(b.std(ddof=1)) if len(ok) > 1 else math.nan
            if method is Method.IPW or not ok:
                coefs.append(CoefficientMetrics(bias, sd, None, None, None))
                continue
            se = np.array([r.se[key][j] for r in ok])
            cps = {lv: float(np.mean([r.hits[key][lv][j] for r in ok])) for lv in config.levels}
            coefs.append(CoefficientMetrics(bias, sd, float(np.sqrt(np.mean(se**2))),
                                            cps.get(0.90), cps.get(0.95)))
        per_method[key] = {"n_ok": len(ok), "n_failed": failed, "coefficients": coefs}
    return MetricsReport(config=config.describe(), true_beta=tuple(float(t) for t in truth),
                         replications=len(results), methods=per_method,
                         mean_labeled=float(np.mean([r.n_labeled for r in results])))


def run_replications(config: SimConfig, jobs: int = 1) -> MetricsReport:
    return aggregate(config, run_raw(config, jobs))
