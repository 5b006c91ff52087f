"""The numbered acceptance checks, shared by the unit tests and the acceptance run.

Each check returns ``(passed, detail)`` so the acceptance module can print one
line per criterion; unit tests assert on the same functions.
"""

from __future__ import annotations

import functools
import json
import math
import tempfile
from pathlib import Path

import numpy as np
from scipy import optimize

from ssaipw import cli
from ssaipw.basis import BasisSpec, build_ps_basis
from ssaipw.estimators import Variant, evaluate_tau, solve_beta_aipw, solve_beta_stratified
from ssaipw.inference import gamma_hat, lambda_hat, lambda_hat_stratified, sandwich_ci
from ssaipw.model import Dataset, Link
from ssaipw.nuisance import (
    fit_or_unweighted,
    fit_ps_constant,
    fit_ps_rcal,
    lambda_max,
)
from ssaipw.pipeline import Method
from ssaipw.simulation import SimConfig, run_replications, simulate_dataset
from ssaipw.solver import Loss, PenalizedProblem, SolverConfig, minimize_l1
from tests import oracles

LOSS_KINDS = {
    (Loss.CALIBRATION, "identity"): "calibration",
    (Loss.LOGISTIC_ML, "identity"): "logistic",
    (Loss.WEIGHTED_ML, "identity"): "wml_identity",
    (Loss.WEIGHTED_ML, "logit"): "wml_logit",
    (Loss.WEIGHTED_LS, "identity"): "wls",
}


def random_problem(rng, loss: Loss, link: str = "identity", n_rows=None, p=None,
                   lam_frac=None) -> PenalizedProblem:
    """A random penalized problem with a finite minimizer."""
    n_rows = int(rng.integers(40, 300)) if n_rows is None else n_rows
    p = int(rng.integers(3, 60)) if p is None else p
    cols = rng.standard_normal((n_rows, p - 1))
    half = (p - 1) // 2
    cols[:, :half] = np.maximum(cols[:, :half] - rng.uniform(-1, 1, half), 0.0)  # hinge-like
    design = np.column_stack([np.ones(n_rows), cols])
    eta = 0.6 * cols[:, 0] - 0.3
    r = (rng.random(n_rows) < 1 / (1 + np.exp(-eta))).astype(float)
    r[:2] = (1.0, 0.0)
    if loss in (Loss.CALIBRATION, Loss.LOGISTIC_ML):
        y, w = None, None
    else:
        mu = cols[:, :3].sum(axis=1) * 0.5
        if link == "logit":
            y = (rng.random(n_rows) < 1 / (1 + np.exp(-mu))).astype(float)
        else:
            y = mu + rng.standard_normal(n_rows)
        w = np.exp(0.5 * rng.standard_normal(n_rows))
    lk = Link.logit() if link == "logit" else Link.identity()
    prob = PenalizedProblem(loss, design, r, y, w, lk)
    frac = rng.uniform(0.05, 0.8) if lam_frac is None else lam_frac
    prob = prob.with_lambda(frac * lambda_max(prob))
    if loss is Loss.CALIBRATION and not oracles.calibration_bounded(design, r, prob.lam):
        # no finite minimizer: draw again
        return random_problem(rng, loss, link, n_rows, p, lam_frac)
    return prob


def _kind(problem: PenalizedProblem) -> str:
    return LOSS_KINDS[(problem.loss, problem.link.kind.value)]


def _oracle_kkt(problem: PenalizedProblem, coef) -> float:
    _, g = oracles.loss(_kind(problem), coef, problem.design, problem.r, problem.y, problem.w)
    return oracles.kkt(coef, g, problem.lam, problem.penalized_mask)


# 4 -------------------------------------------------------------------------

def criterion_4(n_problems: int = 200, seed: int = 4) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    losses = [(Loss.CALIBRATION, "identity"), (Loss.WEIGHTED_ML, "identity"),
              (Loss.WEIGHTED_ML, "logit"), (Loss.LOGISTIC_ML, "identity"),
              (Loss.WEIGHTED_LS, "identity")]
    worst, violations, bad = 0.0, 0, 0
    config = SolverConfig(keep_trace=True)
    for i in range(n_problems):
        loss, link = losses[i % len(losses)]
        problem = random_problem(rng, loss, link)
        res = minimize_l1(problem, config)
        k = _oracle_kkt(problem, res.coefficients)
        worst = max(worst, k)
        bad += (k > 1e-6) or res.degenerate
        t = res.trace
        violations += int(np.sum(t[1:] > t[:-1]))
    ok = bad == 0 and violations == 0
    return ok, (f"{n_problems} problems: max KKT residual {worst:.2e}, "
                f"{bad} above 1e-6, {violations} objective increases")


# 5 -------------------------------------------------------------------------

def criterion_5(points: int = 50, seed: int = 5) -> tuple[bool, str]:
    from ssaipw.solver import (loss_calibration, loss_logistic_ml, loss_weighted_ls,
                               loss_weighted_ml)

    rng = np.random.default_rng(seed)
    n_rows, p = 40, 6
    worst = {}
    for name in ("calibration", "logistic", "wml_identity", "wml_logit", "wls"):
        err = 0.0
        for _ in range(points):
            design = np.column_stack([np.ones(n_rows), rng.standard_normal((n_rows, p - 1))])
            r = (rng.random(n_rows) < 0.5).astype(float)
            y = rng.random(n_rows) if name == "wml_logit" else rng.standard_normal(n_rows)
            w = np.exp(0.3 * rng.standard_normal(n_rows))
            coef = 0.4 * rng.standard_normal(p)
            fn = {
                "calibration": lambda c: loss_calibration(c, design, r),
                "logistic": lambda c: loss_logistic_ml(c, design, r),
                "wml_identity": lambda c: loss_weighted_ml(c, design, y, r, w, Link.identity()),
                "wml_logit": lambda c: loss_weighted_ml(c, design, y, r, w, Link.logit()),
                "wls": lambda c: loss_weighted_ls(c, design, y, r, w),
            }[name]
            g = fn(coef)[1]
            fd = oracles.central_gradient(lambda c: fn(c)[0], coef)
            err = max(err, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-8)))
        worst[name] = err
    ok = all(v <= 1e-6 for v in worst.values())
    return ok, "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


# 6 -------------------------------------------------------------------------

def rcal_corpus():
    """RCAL fits over simulated and random designs used for the calibration identity."""
    fits = []
    for case, n_rows, seed in ((1, 800, 0), (1, 2000, 1), (3, 1000, 2), (5, 600, 3), (2, 400, 4)):
        data = simulate_dataset(case, n_rows, np.random.default_rng(seed))
        f = build_ps_basis(data, BasisSpec())
        r = data.r.astype(float)
        fits.append((r, fit_ps_rcal(f, r, folds=5, seed=seed)))
        fits.append((r, fit_ps_rcal(f, r, folds=0)))
    rng = np.random.default_rng(6)
    for _ in range(10):
        problem = random_problem(rng, Loss.CALIBRATION, lam_frac=0.3)
        grid = [problem.lam * 4, problem.lam * 2, problem.lam]
        fits.append((problem.r, fit_ps_rcal(problem.design, problem.r, grid, folds=0)))
    return fits


def criterion_6() -> tuple[bool, str]:
    worst = 0.0
    fits = rcal_corpus()
    for r, ps in fits:
        N, n = r.size, r.sum()
        worst = max(worst, abs(ps.w_hat[r > 0].sum() - (N - n)) / N)
    return worst <= 1e-8, f"{len(fits)} RCAL fits: max |sum w - (N-n)|/N = {worst:.2e}"


# 7, 8 ----------------------------------------------------------------------

def constant_ps_instance(rng, link: Link):
    n_rows = int(rng.integers(30, 250))
    d = int(rng.integers(1, 4))
    cov = rng.standard_normal((n_rows, d))
    r = (rng.random(n_rows) < rng.uniform(0.2, 0.8)).astype(int)
    r[:2] = (1, 0)
    mu = cov[:, 0] + 0.5 * cov[:, 0] ** 2 - 0.3
    if link.kind.value == "logit":
        y = (rng.random(n_rows) < 1 / (1 + np.exp(-mu))).astype(float)
    else:
        y = mu + rng.standard_normal(n_rows)
    data = Dataset.from_covariates(cov, np.where(r == 1, y, np.nan), r)
    z = data.x[:, : int(rng.integers(1, d + 2))]
    g = np.column_stack([data.x, cov**2])
    or_ = fit_or_unweighted(g, data.y_filled(), data.r, link, [0.02], folds=0)
    return data, z, or_


def criterion_7(instances: int = 50, seed: int = 7) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        link = Link.identity() if i % 2 == 0 else Link.logit()
        data, z, or_ = constant_ps_instance(rng, link)
        ps = fit_ps_constant(data.r)
        beta = solve_beta_aipw(data, z, ps, or_, link)
        gam = gamma_hat(z, beta, link)
        lam = lambda_hat(evaluate_tau(data, z, ps, or_, beta, link))
        sigma, _, _ = sandwich_ci(gam, lam, data.n_total)
        sigma_s, _, _ = sandwich_ci(gam, lambda_hat_stratified(data, z, or_, beta, link),
                                    data.n_labeled)
        worst = max(worst, float(np.max(np.abs(sigma / data.n_total - sigma_s / data.n_labeled))))
    return worst <= 1e-10, f"{instances} instances: max |Sigma/N - Sigma_s/n| = {worst:.2e}"


def criterion_8(instances: int = 50, seed: int = 8) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = {"identity": 0.0, "logit": 0.0}
    for i in range(instances):
        link = Link.identity() if i % 2 == 0 else Link.logit()
        data, z, or_ = constant_ps_instance(rng, link)
        b_aipw = solve_beta_aipw(data, z, fit_ps_constant(data.r), or_, link)
        b_s = solve_beta_stratified(data, z, or_, link)
        key = link.kind.value
        worst[key] = max(worst[key], float(np.max(np.abs(b_aipw - b_s))))
    ok = max(worst.values()) <= 1e-10
    return ok, f"{instances} instances: max |beta_AIPW - beta_s| identity {worst['identity']:.1e}, logit {worst['logit']:.1e}"


# 9 -------------------------------------------------------------------------

def _tilt_solution(data: Dataset, z, w_s, phi, link: Link, beta0):
    """Solve the two-sample form with tilt weights, by a generic root finder."""
    lab = data.labeled
    n, N = int(lab.sum()), data.n_total
    y = data.y_filled()

    def eq(b):
        a = (w_s[lab] * (y[lab] - phi[lab]))[:, None] * z[lab]
        c = (phi[~lab] - link.psi(z[~lab] @ b))[:, None] * z[~lab]
        return a.sum(axis=0) / n + c.sum(axis=0) / (N - n)

    sol = optimize.root(eq, beta0, method="hybr", options={"xtol": 1e-15})
    return sol.x


def criterion_9(instances: int = 20, seed: int = 9) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    w_err = b_err = 0.0
    for i in range(instances):
        link = Link.identity() if i % 2 == 0 else Link.logit()
        data = simulate_dataset(1 + i % 5, 600, rng)
        if link.kind.value == "logit":
            prob = 1 / (1 + np.exp(-data.x[:, 1]))
            y = (rng.random(data.n_total) < prob).astype(float)
            data = Dataset(data.x, np.where(data.labeled, y, np.nan), data.r)
        f = build_ps_basis(data, BasisSpec(knots_per_covariate=9))
        r = data.r.astype(float)
        ps = fit_ps_rcal(f, r, folds=3, seed=i)
        N, n = data.n_total, data.n_labeled
        gamma_s = ps.gamma.copy()
        gamma_s[0] -= math.log(n / (N - n))
        w_s = np.exp(-(f @ gamma_s))
        w_err = max(w_err, float(np.max(np.abs((N - n) / n * w_s / ps.w_hat - 1.0))))
        z = data.x[:, :2]
        or_ = fit_or_unweighted(f, data.y_filled(), r, link, [0.01], folds=0)
        beta = solve_beta_aipw(data, z, ps, or_, link, Variant.UNLABELED)
        beta_s = _tilt_solution(data, z, w_s, or_.phi, link, beta + 0.05)
        b_err = max(b_err, float(np.max(np.abs(beta - beta_s))))
    ok = w_err <= 1e-12 and b_err <= 1e-10
    return ok, f"{instances} fits: max weight rel. diff {w_err:.1e}, max beta diff {b_err:.1e}"


# 10 ------------------------------------------------------------------------

def criterion_10(per_loss: int = 6, seed: int = 10) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = {}
    for loss, link in LOSS_KINDS:
        gap = 0.0
        for _ in range(per_loss):
            problem = random_problem(rng, loss, link, n_rows=20 if loss is Loss.LOGISTIC_ML else 30,
                                     p=3, lam_frac=rng.uniform(0.1, 0.7))
            res = minimize_l1(problem)
            x_o, f_o = oracles.l1_oracle(_kind(problem), problem.design, problem.r, problem.y,
                                         problem.w, problem.lam, problem.penalized_mask)
            f_s = oracles.l1_objective(_kind(problem), res.coefficients, problem.design,
                                       problem.r, problem.y, problem.w, problem.lam,
                                       problem.penalized_mask)
            # a dense local grid must not beat the solver either
            steps = np.linspace(-0.02, 0.02, 9)
            grid_min = min(
                oracles.l1_objective(_kind(problem), res.coefficients + np.array([a, b, c]),
                                     problem.design, problem.r, problem.y, problem.w,
                                     problem.lam, problem.penalized_mask)
                for a in steps for b in steps for c in steps)
            gap = max(gap, abs(f_s - f_o), max(f_s - grid_min, 0.0))
        worst[LOSS_KINDS[(loss, link)]] = gap
    ok = all(v <= 1e-8 for v in worst.values())
    return ok, "max objective gap " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


# 13 ------------------------------------------------------------------------

def criterion_13(seed: int = 13) -> tuple[bool, str]:
    from ssaipw.diagnostics import mmd_permutation_test, mmd_statistic

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((60, 4))
    self_mmd = mmd_statistic(x, x.copy())
    far0 = rng.standard_normal((20, 2))
    far1 = rng.standard_normal((20, 2)) + 6.0
    _, p = mmd_permutation_test(far0, far1, 999, np.random.default_rng(seed))
    ok = abs(self_mmd) <= 1e-12 and p == 1 / 1000
    return ok, f"self MMD {self_mmd:.1e}; separated groups p = {p} (bound {1 / 1000})"


# Monte Carlo -----------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def monte_carlo(case: int, reps: int, methods: tuple[str, ...], n_total: int = 2000,
                seed: int = 2024, or_interactions: bool = True):
    config = SimConfig(case=case, n_total=n_total, replications=reps, seed=seed,
                       methods=methods, or_interactions=or_interactions)
    return run_replications(config, jobs=1)


def criterion_1(reps: int = 500) -> tuple[bool, str]:
    m = monte_carlo(1, reps, (Method.AIPW_RCAL.value,)).metrics(Method.AIPW_RCAL)
    ratio = m.sqrt_evar / m.sqrt_var
    ok = (abs(m.bias) <= 0.012 and 0.87 <= m.cp90 <= 0.93 and 0.92 <= m.cp95 <= 0.975
          and 0.9 <= ratio <= 1.1)
    return ok, (f"bias {m.bias:+.4f}, CP90 {m.cp90:.3f}, CP95 {m.cp95:.3f}, "
                f"sqrtEVar/sqrtVar {m.sqrt_evar:.4f}/{m.sqrt_var:.4f} = {ratio:.3f}")


def criterion_2(reps: int = 500) -> tuple[bool, str]:
    rep = monte_carlo(3, reps, (Method.AIPW_RCAL.value, Method.AIPW_RML.value))
    rcal = rep.metrics(Method.AIPW_RCAL, 1)
    rml = rep.metrics(Method.AIPW_RML, 1)
    ok = rcal.cp95 >= 0.92 and rml.cp95 <= 0.92
    return ok, f"beta_1 CP95: RCAL {rcal.cp95:.3f}, RML {rml.cp95:.3f}"


def criterion_3(reps: int = 200) -> tuple[bool, str]:
    rep = monte_carlo(5, reps, (Method.AIPW_RCAL.value, Method.AIPW_RML.value))
    rcal = rep.metrics(Method.AIPW_RCAL, 3)
    rml = rep.metrics(Method.AIPW_RML, 3)
    ok = abs(rcal.bias) <= 0.03 and abs(rml.bias) >= 0.06
    return ok, f"beta_3 bias: RCAL {rcal.bias:+.4f}, RML {rml.bias:+.4f} ({reps} reps)"


def criterion_11(reps: int = 20) -> tuple[bool, str]:
    rep = monte_carlo(3, reps, (Method.AIPW_RCAL.value,), n_total=50_000, or_interactions=False)
    m = rep.metrics(Method.AIPW_RCAL, 1)
    return abs(m.bias) <= 0.02, f"N=50000, {reps} reps, interaction-free OR: mean beta_1 error {m.bias:+.4f}"


def criterion_12(reps: int = 8) -> tuple[bool, str]:
    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for jobs in (1, 8):
            path = Path(tmp) / f"sim{jobs}.json"
            code = cli.main(["simulate", "--case", "1", "--n", "300", "--reps", str(reps),
                             "--seed", "77", "--method", "aipw-rcal,aipw-rml",
                             "--jobs", str(jobs), "--out", str(path)])
            if code != 0:
                return False, f"simulate exited with {code}: {path.read_text()[:200]}"
            outs.append(path.read_bytes())
    same = outs[0] == outs[1]
    return same, f"1 vs 8 workers, {reps} reps: reports {'identical' if same else 'differ'} ({len(outs[0])} bytes)"


def report_json(path) -> dict:
    return json.loads(Path(path).read_text())
