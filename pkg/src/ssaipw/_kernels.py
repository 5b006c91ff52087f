"""Hot loops of the L1 solver.

Every function here is plain array numpy that numba can also compile; ``jit``
decides which at import time (see ``_jit``). Loss codes are small ints so the
compiled kernel can branch on them.
"""

import numpy as np

from ._jit import USE_NUMBA, jit

CAL = 0
LOGISTIC = 1
WML_IDENTITY = 2
WML_LOGIT = 3
WLS = 4

EXP_CAP = 30.0
SHIFT_NEWTON = 3

STATUS_OK = 0
STATUS_MAXITER = 1
STATUS_STALL = 2
STATUS_DIVERGED = 3
STATUS_DEGENERATE = 4  # linear predictor left [-EXP_CAP, EXP_CAP]: no finite minimizer


@jit
def softplus(u):
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


@jit
def sigmoid(u):
    return np.exp(u - softplus(u))


@jit
def capped_exp_neg(eta):
    """exp(-eta), continued linearly (value and slope matched) below -EXP_CAP."""
    m = np.maximum(eta, -EXP_CAP)
    e = np.exp(-m)
    return e * (1.0 + (m - eta))


@jit
def capped_exp_neg_slope(eta):
    """Derivative of capped_exp_neg with respect to eta."""
    return -np.exp(-np.maximum(eta, -EXP_CAP))


@jit
def capped_exp_neg_curv(eta):
    return np.where(eta < -EXP_CAP, 0.0, np.exp(-np.maximum(eta, -EXP_CAP)))


@jit
def n_clamped(code, eta, r):
    if code != CAL:
        return 0
    return int(np.sum((eta < -EXP_CAP) & (r > 0.0)))


@jit
def escaped(code, eta):
    if code == CAL or code == LOGISTIC or code == WML_LOGIT:
        return np.max(np.abs(eta)) > EXP_CAP
    return False


@jit
def loss_value(code, eta, r, y, w, denom):
    if code == CAL:
        return np.sum(r * capped_exp_neg(eta) + (1.0 - r) * eta) / denom
    if code == LOGISTIC:
        return np.sum(softplus(eta) - r * eta) / denom
    c = r * w
    if code == WML_IDENTITY:
        return np.sum(c * (0.5 * eta * eta - y * eta)) / denom
    if code == WML_LOGIT:
        return np.sum(c * (softplus(eta) - y * eta)) / denom
    res = y - eta
    return np.sum(c * res * res) / denom


@jit
def loss_derivative(code, eta, r, y, w, denom):
    """Per-row derivative of the averaged loss with respect to eta_i."""
    if code == CAL:
        return (r * capped_exp_neg_slope(eta) + (1.0 - r)) / denom
    if code == LOGISTIC:
        return (sigmoid(eta) - r) / denom
    c = r * w
    if code == WML_IDENTITY:
        return c * (eta - y) / denom
    if code == WML_LOGIT:
        return c * (sigmoid(eta) - y) / denom
    return -2.0 * c * (y - eta) / denom


@jit
def loss_curvature(code, eta, r, y, w, denom):
    """Per-row second derivative with respect to eta_i."""
    if code == CAL:
        return r * capped_exp_neg_curv(eta) / denom
    if code == LOGISTIC:
        s = sigmoid(eta)
        return s * (1.0 - s) / denom
    c = r * w
    if code == WML_IDENTITY:
        return c / denom
    if code == WML_LOGIT:
        s = sigmoid(eta)
        return c * s * (1.0 - s) / denom
    return 2.0 * c / denom


def _evaluate_arrays(code, eta, r, y, w, denom, deriv):
    deriv[:] = loss_derivative(code, eta, r, y, w, denom)
    return loss_value(code, eta, r, y, w, denom)


def _evaluate_loop(code, eta, r, y, w, denom, deriv):
    # one pass, one exp per row; same arithmetic as the array functions
    total = 0.0
    inv = 1.0 / denom
    for i in range(eta.shape[0]):
        e = eta[i]
        if code == CAL:
            if r[i] == 0.0:  # no exp needed off the labeled rows
                total += e
                deriv[i] = inv
                continue
            m = e if e > -EXP_CAP else -EXP_CAP
            ex = np.exp(-m)
            total += r[i] * ex * (1.0 + (m - e)) + (1.0 - r[i]) * e
            deriv[i] = (-r[i] * ex + (1.0 - r[i])) * inv
        elif code == LOGISTIC:
            a = np.exp(-abs(e))
            total += (e if e > 0.0 else 0.0) + np.log1p(a) - r[i] * e
            s = 1.0 / (1.0 + a) if e >= 0.0 else a / (1.0 + a)
            deriv[i] = (s - r[i]) * inv
        else:
            c = r[i] * w[i]
            if code == WML_IDENTITY:
                total += c * (0.5 * e * e - y[i] * e)
                deriv[i] = c * (e - y[i]) * inv
            elif code == WML_LOGIT:
                if c == 0.0:
                    deriv[i] = 0.0
                    continue
                a = np.exp(-abs(e))
                total += c * ((e if e > 0.0 else 0.0) + np.log1p(a) - y[i] * e)
                s = 1.0 / (1.0 + a) if e >= 0.0 else a / (1.0 + a)
                deriv[i] = c * (s - y[i]) * inv
            else:
                res = y[i] - e
                total += c * res * res
                deriv[i] = -2.0 * c * res * inv
    return total * inv


evaluate = jit(_evaluate_loop) if USE_NUMBA else _evaluate_arrays
evaluate.__doc__ = "Loss value at eta; the per-row derivative is written into ``deriv``."


@jit
def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


@jit
def kkt_residual(x, g, lam):
    worst = 0.0
    for j in range(x.shape[0]):
        gj = g[j]
        if lam[j] == 0.0:
            v = abs(gj)
        elif x[j] > 0.0:
            v = abs(gj + lam[j])
        elif x[j] < 0.0:
            v = abs(gj - lam[j])
        else:
            v = abs(gj) - lam[j]
        if v > worst:
            worst = v
    return worst


def _cal_shift_sums(eta, r):
    """(sum r e^{-eta}, sum (1 - r), min eta over rows with r > 0)."""
    a = 0.0
    b = 0.0
    lo = np.inf
    for i in range(eta.shape[0]):
        b += 1.0 - r[i]
        if r[i] != 0.0:
            a += r[i] * np.exp(-max(eta[i], -EXP_CAP))
            if eta[i] < lo:
                lo = eta[i]
    return a, b, lo


def _cal_shift_sums_arrays(eta, r):
    lab = r != 0.0
    a = np.sum(r[lab] * np.exp(-np.maximum(eta[lab], -EXP_CAP)))
    lo = np.min(eta[lab]) if np.any(lab) else np.inf
    return a, np.sum(1.0 - r), lo


cal_shift_sums = jit(_cal_shift_sums) if USE_NUMBA else _cal_shift_sums_arrays


@jit
def intercept_shift(code, eta, r, y, w):
    """Exact minimizer of the loss along a uniform shift of eta."""
    if code == CAL:
        a, b, lo = cal_shift_sums(eta, r)
        if b <= 0.0 or a <= 0.0:
            return 0.0
        if lo >= -EXP_CAP + 1.0:
            delta = np.log(a / b)
            if lo + delta >= -EXP_CAP:
                return delta
        # near the cap: safeguarded Newton on the shifted derivative
        delta = 0.0
        for _ in range(100):
            grad = np.sum(r * capped_exp_neg_slope(eta + delta)) + b
            hess = np.sum(r * capped_exp_neg_curv(eta + delta))
            if hess <= 1e-300:
                break
            step = grad / hess
            if step > 5.0:
                step = 5.0
            elif step < -5.0:
                step = -5.0
            delta -= step
            if abs(step) <= 1e-14 * (1.0 + abs(delta)):
                break
        return delta
    if code == WML_IDENTITY or code == WLS:
        c = r * w
        s = np.sum(c)
        if s <= 0.0:
            return 0.0
        return np.sum(c * (y - eta)) / s
    return logistic_shift(code == LOGISTIC, eta, r, y, w)


def _logistic_shift_loop(plain, eta, r, y, w):
    """A few Newton steps for the uniform shift of a (weighted) logistic likelihood.

    The caller only accepts the shift if it lowers the loss, so an inexact
    minimizer is fine; the gradient steps finish the job.
    """
    delta = 0.0
    for _ in range(SHIFT_NEWTON):
        grad = 0.0
        hess = 0.0
        for i in range(eta.shape[0]):
            c = 1.0 if plain else r[i] * w[i]
            if c == 0.0:
                continue
            e = eta[i] + delta
            a = np.exp(-abs(e))
            s = 1.0 / (1.0 + a) if e >= 0.0 else a / (1.0 + a)
            grad += c * (s - (r[i] if plain else y[i]))
            hess += c * s * (1.0 - s)
        if hess <= 1e-300:
            break
        step = min(max(grad / hess, -5.0), 5.0)
        delta -= step
        if abs(step) <= 1e-14 * (1.0 + abs(delta)):
            break
    return delta


def _logistic_shift_arrays(plain, eta, r, y, w):
    c = np.ones_like(r) if plain else r * w
    target = r if plain else y
    delta = 0.0
    for _ in range(SHIFT_NEWTON):
        s = sigmoid(eta + delta)
        grad = np.sum(c * (s - target))
        hess = np.sum(c * s * (1.0 - s))
        if hess <= 1e-300:
            break
        step = min(max(grad / hess, -5.0), 5.0)
        delta -= step
        if abs(step) <= 1e-14 * (1.0 + abs(delta)):
            break
    return delta


logistic_shift = jit(_logistic_shift_loop) if USE_NUMBA else _logistic_shift_arrays


@jit
def penalty(x, lam):
    return np.sum(lam * np.abs(x))


@jit
def prox_grad(code, D, r, y, w, denom, lam, x0, step0, max_iter, tol, kkt_tol,
              shrink, fix_intercept, trace):
    """Accelerated proximal gradient with backtracking and monotone restarts.

    Every accepted iterate has objective no larger than the previous one: a
    momentum step that would increase it is discarded and replaced by a plain
    proximal step from the current iterate. With ``fix_intercept`` the
    unpenalized column 0 (all ones) is re-minimized exactly after each step.

    Returns (x, objective, iterations, kkt, step, status, n_clamped).
    """
    Dt = D.T
    n = D.shape[0]
    d_z = np.empty(n)
    d_tmp = np.empty(n)
    d_y = np.empty(n)
    x = x0.copy()
    eta_x = np.dot(D, x)
    if fix_intercept:
        delta = intercept_shift(code, eta_x, r, y, w)
        x[0] += delta
        eta_x = eta_x + delta
    f_x = evaluate(code, eta_x, r, y, w, denom, d_z)
    g_x = np.dot(Dt, d_z)
    F_x = f_x + penalty(x, lam)
    trace[0] = F_x
    clamped = n_clamped(code, eta_x, r)
    if not np.isfinite(F_x):
        return x, F_x, 0, np.inf, step0, STATUS_DIVERGED, clamped

    yv = x.copy()
    eta_y = eta_x.copy()
    f_y = f_x
    g_y = g_x.copy()
    t = 1.0
    L = 1.0 / step0
    kkt = kkt_residual(x, g_x, lam)
    at_x = True  # momentum point coincides with x
    stall = 0
    it = 0
    status = STATUS_MAXITER
    while it < max_iter:
        if kkt <= kkt_tol:
            status = STATUS_OK
            break
        # backtracking on the quadratic upper bound at yv
        while True:
            z = soft_threshold(yv - g_y / L, lam / L)
            eta_z = np.dot(D, z)
            f_z = evaluate(code, eta_z, r, y, w, denom, d_z)
            diff = z - yv
            bound = f_y + np.dot(g_y, diff) + 0.5 * L * np.dot(diff, diff)
            if f_z <= bound + 1e-13 * abs(f_y):
                break
            L = L / shrink
            if L > 1e300 or not np.isfinite(f_y):
                return x, F_x, it, kkt, 1.0 / L, STATUS_DIVERGED, clamped
        if not np.isfinite(f_z):
            return x, F_x, it, kkt, 1.0 / L, STATUS_DIVERGED, clamped
        if fix_intercept:
            delta = intercept_shift(code, eta_z, r, y, w)
            if delta != 0.0:
                eta_z2 = eta_z + delta
                f_z2 = evaluate(code, eta_z2, r, y, w, denom, d_tmp)
                if f_z2 <= f_z:
                    z = z.copy()
                    z[0] += delta
                    eta_z = eta_z2
                    f_z = f_z2
                    d_z, d_tmp = d_tmp, d_z
        F_z = f_z + penalty(z, lam)
        if F_z <= F_x and escaped(code, eta_z):
            trace[it + 1] = F_z
            return z, F_z, it + 1, kkt, 1.0 / L, STATUS_DEGENERATE, clamped
        if not F_z <= F_x:
            if at_x:
                status = STATUS_STALL
                break
            yv = x.copy()
            eta_y = eta_x.copy()
            f_y = f_x
            g_y = g_x.copy()
            t = 1.0
            at_x = True
            continue
        g_z = np.dot(Dt, d_z)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_next
        yv = z + mom * (z - x)
        if mom == 0.0:
            eta_y = eta_z.copy()
            f_y = f_z
            g_y = g_z.copy()
            at_x = True
        else:
            eta_y = eta_z + mom * (eta_z - eta_x)
            f_y = evaluate(code, eta_y, r, y, w, denom, d_y)
            g_y = np.dot(Dt, d_y)
            at_x = False
        rel = (F_x - F_z) / max(1.0, abs(F_x))
        x = z
        eta_x = eta_z
        g_x = g_z
        f_x = f_z
        F_x = F_z
        t = t_next
        it += 1
        trace[it] = F_x
        kkt = kkt_residual(x, g_x, lam)
        c = n_clamped(code, eta_x, r)
        if c > clamped:
            clamped = c
        if rel <= tol:
            stall += 1
        else:
            stall = 0
        if stall >= 25 and kkt > kkt_tol:
            status = STATUS_STALL
            break
        L = L * 0.9
    if kkt <= kkt_tol:
        status = STATUS_OK
    return x, F_x, it, kkt, 1.0 / L, status, clamped
