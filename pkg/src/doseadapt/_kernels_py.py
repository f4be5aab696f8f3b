"""Pure-NumPy implementations of the hot kernels.

The compiled extension ``doseadapt._kernels`` mirrors this module function by
function; both backends must stay behaviour-matched (see tests/test_backends).
Shapes are passed as integer codes (models.SHAPE_CODE): 0 linear, 1 emax,
2 logistic, 3 scaled-beta.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, gammaln

BACKEND = "python"

_SINGULAR = 1e-13


def shape_grid_code(code: int, theta_nl: np.ndarray, doses: np.ndarray, scal: float) -> np.ndarray:
    """f0 on an (n_points, n_doses) grid for shape code `code`."""
    theta_nl = np.atleast_2d(np.asarray(theta_nl, dtype=float))
    d = np.asarray(doses, dtype=float)
    if code == 0:
        return np.broadcast_to(d, (theta_nl.shape[0], d.size)).copy()
    if code == 1:
        return d / (theta_nl[:, :1] + d)
    if code == 2:
        return expit((d - theta_nl[:, :1]) / theta_nl[:, 1:2])
    if code == 3:
        a = theta_nl[:, :1]
        b = theta_nl[:, 1:2]
        x = d / scal
        lnB = (a + b) * np.log(a + b) - a * np.log(a) - b * np.log(b)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp(lnB + a * np.log(x) + b * np.log1p(-x))
        return np.where((x <= 0.0) | (x >= 1.0), 0.0, out)
    raise ValueError(f"unknown shape code {code}")


def nig_log_marginal_grid(code, theta_nl, scal, doses, counts, means, yty,
                          mu, v_inv, a, nu, logdet_v):
    """log integrated likelihood log p(y | theta_nl) for each grid row.

    The linear parameters and the error variance are marginalized in closed
    form under the normal-inverse-gamma prior (mu, V, a, nu); data enter only
    through per-dose counts, means and the total sum of squares yty.
    """
    f = shape_grid_code(code, theta_nl, doses, scal)
    counts = np.asarray(counts, dtype=float)
    means = np.asarray(means, dtype=float)
    n_total = counts.sum()

    s0 = n_total
    s1 = f @ counts
    s2 = (f * f) @ counts
    cm = counts * means
    t0 = cm.sum()
    t1 = f @ cm

    v00 = v_inv[0, 0] + s0
    v01 = v_inv[0, 1] + s1
    v11 = v_inv[1, 1] + s2
    det = v00 * v11 - v01 * v01

    rhs0 = v_inv[0, 0] * mu[0] + v_inv[0, 1] * mu[1] + t0
    rhs1 = v_inv[1, 0] * mu[0] + v_inv[1, 1] * mu[1] + t1
    mu_n0 = (v11 * rhs0 - v01 * rhs1) / det
    mu_n1 = (-v01 * rhs0 + v00 * rhs1) / det

    mu_v_mu = mu @ v_inv @ mu
    a_n = a + yty + mu_v_mu - (mu_n0 * rhs0 + mu_n1 * rhs1)
    a_n = np.maximum(a_n, 1e-300)

    nu_n = nu + n_total
    const = (-0.5 * n_total * math.log(math.pi)
             + gammaln(0.5 * nu_n) - gammaln(0.5 * nu)
             + 0.5 * nu * math.log(a))
    with np.errstate(divide="ignore"):
        out = const - 0.5 * (np.log(det) + logdet_v) - 0.5 * nu_n * np.log(a_n)
    return np.where(det > 0.0, out, -np.inf)


def profiled_rss_grid(code, theta_nl, scal, doses, counts, means, yty):
    """Residual sum of squares with (theta0, theta1) profiled out, per grid row.

    Partials out the intercept first (Frisch-Waugh-Lovell); degenerate shape
    columns fall back to the intercept-only fit.
    """
    f = shape_grid_code(code, theta_nl, doses, scal)
    counts = np.asarray(counts, dtype=float)
    means = np.asarray(means, dtype=float)
    s0 = counts.sum()
    if s0 <= 0.0:
        return np.full(np.atleast_2d(theta_nl).shape[0], yty)
    cm = counts * means
    t0 = cm.sum()
    s1 = f @ counts
    s2 = (f * f) @ counts
    t1 = f @ cm

    rss0 = yty - t0 * t0 / s0
    resid = s2 - s1 * s1 / s0
    cov = t1 - s1 * t0 / s0
    scale = np.maximum(s2, s1 * s1 / s0)
    ok = resid > _SINGULAR * np.maximum(scale, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rss = rss0 - cov * cov / resid
    return np.maximum(np.where(ok, rss, rss0), 0.0)


# ---------------------------------------------------------------------------
# compound design criterion and simplex optimizer
# ---------------------------------------------------------------------------

def _criterion_full(grads, cvecs, qs, alphas, w):
    """sum_m alpha_m log(c_m' M_m(w)^{-1} c_m); +inf when singular/nonpositive."""
    total = 0.0
    for m in range(len(qs)):
        q = qs[m]
        g = grads[m][:, :q]
        c = cvecs[m][:q]
        mat = (g * w[:, None]).T @ g
        try:
            z = np.linalg.solve(mat, c)
        except np.linalg.LinAlgError:
            return math.inf
        quad = float(c @ z)
        if not quad > 0.0 or not math.isfinite(quad):
            return math.inf
        total += alphas[m] * math.log(quad)
    return total


def criterion_batch(grads, cvecs, qs, alphas, weights):
    """Criterion at each row of `weights` (n, k); +inf rows where singular."""
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    vals = np.zeros(n)
    for m in range(len(qs)):
        q = qs[m]
        g = grads[m][:, :q]
        c = cvecs[m][:q]
        gg = g[:, :, None] * g[:, None, :]            # (k, q, q)
        mats = np.tensordot(weights, gg, axes=(1, 0))  # (n, q, q)
        dets = np.linalg.det(mats)
        ok = dets > _SINGULAR * np.maximum(np.trace(mats, axis1=1, axis2=2) ** q, 1e-30)
        quad = np.full(n, np.inf)
        if np.any(ok):
            try:
                z = np.linalg.solve(mats[ok], np.broadcast_to(c, (int(ok.sum()), q)))
                quad[ok] = z @ c
            except np.linalg.LinAlgError:
                idx = np.nonzero(ok)[0]
                for i in idx:
                    try:
                        quad[i] = c @ np.linalg.solve(mats[i], c)
                    except np.linalg.LinAlgError:
                        quad[i] = np.inf
        bad = ~(quad > 0.0)
        quad[bad] = np.inf
        with np.errstate(divide="ignore"):
            vals += alphas[m] * np.log(quad)
    return vals


def _combined(w_active, active, k, n_old, n_next):
    w_full = np.zeros(k)
    w_full[active] = w_active
    n_total = n_old.sum() + n_next
    return (n_old + n_next * w_full) / n_total


def _nelder_mead(fn, x0, step, ftol, maxfev):
    """Lagarias et al. Nelder-Mead; returns (x_best, f_best, n_eval)."""
    n = x0.size
    if n == 0:
        return x0, fn(x0), 1
    pts = [x0.copy()]
    for i in range(n):
        p = x0.copy()
        p[i] += step
        pts.append(p)
    simplex = np.array(pts)
    fvals = np.array([fn(p) for p in simplex])
    n_eval = n + 1

    while n_eval < maxfev:
        order = np.argsort(fvals, kind="stable")
        simplex = simplex[order]
        fvals = fvals[order]
        if fvals[-1] - fvals[0] < ftol and math.isfinite(fvals[-1]):
            break
        centroid = simplex[:-1].mean(axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = fn(xr); n_eval += 1
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = fn(xe); n_eval += 1
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = fn(xc); n_eval += 1
                if fc <= fr:
                    simplex[-1], fvals[-1] = xc, fc
                else:
                    simplex, fvals, n_eval = _shrink(fn, simplex, fvals, n_eval)
            else:
                xc = centroid - 0.5 * (centroid - simplex[-1])
                fc = fn(xc); n_eval += 1
                if fc < fvals[-1]:
                    simplex[-1], fvals[-1] = xc, fc
                else:
                    simplex, fvals, n_eval = _shrink(fn, simplex, fvals, n_eval)
    best = int(np.argmin(fvals))
    return simplex[best], float(fvals[best]), n_eval


def _shrink(fn, simplex, fvals, n_eval):
    for i in range(1, simplex.shape[0]):
        simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
        fvals[i] = fn(simplex[i])
        n_eval += 1
    return simplex, fvals, n_eval


def optimize_weights(grads, cvecs, qs, alphas, n_old, n_next, starts, active,
                     maxfev=4000, ftol=1e-9):
    """Multistart Nelder-Mead for the next-cohort weights.

    Minimizes criterion((n_old + n_next*w)/(N_old + n_next)) over weight
    vectors supported on the dose indices `active` (active[0] carries the
    normalization coordinate of the simplex map). `starts` holds one start
    weight vector per row, each positive on active[0]. Returns
    (w_full, criterion, start_index); deterministic for fixed inputs.
    """
    k = n_old.shape[0]
    n_old = np.asarray(n_old, dtype=float)
    active = np.asarray(active, dtype=np.intp)

    def crit_of_x(x):
        denom = 1.0 + float(x @ x)
        w_active = np.concatenate(([1.0], x * x)) / denom
        return _criterion_full(grads, cvecs, qs, alphas,
                               _combined(w_active, active, k, n_old, n_next))

    best_x = None
    best_f = math.inf
    best_idx = -1
    for s in range(starts.shape[0]):
        w_act = np.asarray(starts[s], dtype=float)[active]
        w0 = max(w_act[0], 1e-12)
        x0 = np.sqrt(np.maximum(w_act[1:], 0.0) / w0)
        x, fval, _ = _nelder_mead(crit_of_x, x0, 0.25, ftol, maxfev)
        if fval < best_f:
            best_f, best_x, best_idx = fval, x, s

    if best_x is None or not math.isfinite(best_f):
        return None, math.inf, -1
    denom = 1.0 + float(best_x @ best_x)
    w_active = np.concatenate(([1.0], best_x * best_x)) / denom
    w_full = np.zeros(k)
    w_full[active] = w_active
    return w_full, best_f, best_idx
