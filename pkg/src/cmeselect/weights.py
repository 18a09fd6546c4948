"""Ridge pilot estimates and adaptive penalty weights.

Group weights are inverse l1-norms of the ridge pilot within each group,
individual weights inverse pilot magnitudes, both guarded by +1/n.  Because
raw individual weights can be as large as n, a global rescaling step shrinks
them (preserving ratios) until the largest weight satisfies the coordinate
convexity condition tau + 1/(gamma*w_max) <= 1/(8*w_max^2); the applied scale
is reported so callers can audit it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, DimensionError, StabilityError
from .families import get_family


@dataclass
class RidgePilot:
    """Ridge estimate used to build adaptive weights."""

    beta: np.ndarray
    intercept: float
    lambda_ridge: float


def _gaussian_ridge(X, y, lam):
    """Minimizer of (1/2n)||y - b0 - X b||^2 + (lam/2)||b||^2 for centered X."""
    n, p = X.shape
    b0 = float(np.mean(y))
    yc = y - b0
    if p <= n:
        A = (X.T @ X) / n + lam * np.eye(p)
        beta = np.linalg.solve(A, X.T @ yc / n)
    else:
        # Dual form: beta = X^T (X X^T + n*lam*I)^{-1} yc.
        K = X @ X.T + n * lam * np.eye(n)
        beta = X.T @ np.linalg.solve(K, yc)
    return beta, b0


def _binomial_ridge(X, y, lam, tol=1e-8, max_iter=200):
    """Damped Newton for the ridge-penalized logistic NLL (intercept free)."""
    n, p = X.shape
    family = get_family("binomial")
    b0 = family.null_intercept(y)
    beta = np.zeros(p)
    eta = np.full(n, b0)

    def objective(eta_vec, beta_vec):
        return family.nll(y, eta_vec) + 0.5 * lam * float(beta_vec @ beta_vec)

    obj = objective(eta, beta)
    for _ in range(max_iter):
        pi = expit(eta)
        g0 = -np.mean(y - pi)
        g = -X.T @ (y - pi) / n + lam * beta
        gnorm = math.sqrt(g0 * g0 + float(g @ g))
        if gnorm < tol:
            return beta, float(b0)
        w = np.clip(pi * (1.0 - pi), 1e-10, None)
        a = float(np.mean(w))
        b = X.T @ w / n
        if p <= n:
            C = (X.T * w) @ X / n + lam * np.eye(p)
            solve_C = lambda v: np.linalg.solve(C, v)
        else:
            # Woodbury: (lam I + X^T (W/n) X)^{-1} v
            #   = (v - X^T (n lam W^{-1} + X X^T)^{-1} X v) / lam.
            M = X @ X.T + np.diag(n * lam / w)
            M_inv = np.linalg.inv(M)
            solve_C = lambda v: (v - X.T @ (M_inv @ (X @ v))) / lam
        Cg = solve_C(g)
        Cb = solve_C(b)
        schur = a - float(b @ Cb)
        d0 = (g0 - float(b @ Cg)) / schur
        d = Cg - Cb * d0
        step = 1.0
        for _ in range(40):
            beta_new = beta - step * d
            b0_new = b0 - step * d0
            eta_new = b0_new + X @ beta_new
            obj_new = objective(eta_new, beta_new)
            if obj_new <= obj + 1e-14:
                break
            step *= 0.5
        else:
            raise ConvergenceError("ridge Newton line search failed")
        beta, b0, eta, obj = beta_new, b0_new, eta_new, obj_new
    raise ConvergenceError("ridge Newton did not reach gradient tolerance")


def ridge_fit(design, y, family, lambda_ridge):
    """Ridge pilot on the standardized design (excluded columns stay 0)."""
    family = get_family(family)
    y = np.asarray(y, dtype=float)
    if len(y) != design.n:
        raise DimensionError("response length does not match design")
    family.validate_response(y)
    cols = design.fitting_columns
    X = design.X[:, cols]
    if family.name == "gaussian":
        beta_sub, b0 = _gaussian_ridge(X, y, lambda_ridge)
    else:
        beta_sub, b0 = _binomial_ridge(X, y, lambda_ridge)
    beta = np.zeros(design.p_prime)
    beta[cols] = beta_sub
    return RidgePilot(beta=beta, intercept=float(b0), lambda_ridge=float(lambda_ridge))


def ridge_lambda_grid(design, n_points=20):
    """Default log grid [1e-4, 1e2] * (p'/n) for the pilot penalty."""
    scale = design.p_prime / design.n
    return np.geomspace(1e-4 * scale, 1e2 * scale, n_points)


def select_ridge_penalty(design, y, family, grid=None, n_folds=5, seed=0):
    """Pick lambda_ridge by K-fold CV on the pilot's predictive loss."""
    family = get_family(family)
    y = np.asarray(y, dtype=float)
    if grid is None:
        grid = ridge_lambda_grid(design)
    n = design.n
    n_folds = min(n_folds, n)
    rng = np.random.default_rng(seed)
    fold = np.repeat(np.arange(n_folds), -(-n // n_folds))[:n]
    rng.shuffle(fold)
    cols = design.fitting_columns
    X = design.X[:, cols]
    losses = np.zeros(len(grid))
    for f in range(n_folds):
        test = fold == f
        Xtr, ytr = X[~test], y[~test]
        Xte, yte = X[test], y[test]
        for i, lam in enumerate(grid):
            if family.name == "gaussian":
                beta, b0 = _gaussian_ridge(Xtr, ytr, lam)
            else:
                try:
                    beta, b0 = _binomial_ridge(Xtr, ytr, lam)
                except Exception:
                    losses[i] += np.inf
                    continue
            eta = b0 + Xte @ beta
            losses[i] += family.cv_loss(yte, eta)
    return float(grid[int(np.argmin(losses))])


def fit_ridge_pilot(design, y, family, lambda_ridge=None, seed=0):
    """Ridge pilot with CV-selected penalty when none is supplied."""
    if lambda_ridge is None:
        lambda_ridge = select_ridge_penalty(design, y, family, seed=seed)
    return ridge_fit(design, y, family, lambda_ridge)


def compute_weights(pilot, design, n):
    """Adaptive weights from a ridge pilot.

    Group weight: Omega_G(j) = 1/(||pilot_G(j)||_1 + 1/n) for G in {S, C};
    individual weight: omega_k = 1/(|pilot_k| + 1/n).
    """
    beta = np.asarray(pilot.beta, dtype=float)
    if beta.shape != (design.p_prime,):
        raise DimensionError("pilot length does not match design")
    guard = 1.0 / n
    absb = np.abs(beta)
    sib = np.array([1.0 / (absb[design.sibling_index[j]].sum() + guard)
                    for j in range(design.p)])
    cou = np.array([1.0 / (absb[design.cousin_index[j]].sum() + guard)
                    for j in range(design.p)])
    indiv = 1.0 / (absb + guard)
    return sib, cou, indiv


def weights_table(design, group_sib, group_cou, indiv):
    """Audit rows (column, omega, sibling group + weight, cousin group +
    weight) for CSV export."""
    rows = []
    for j, cid in enumerate(design.columns):
        sib = int(design.col_sib[j])
        cou = int(design.col_cou[j])
        rows.append({
            "column": cid.name,
            "omega": float(indiv[j]),
            "sibling_group": design.me_names[sib],
            "Omega_sibling": float(group_sib[sib]),
            "cousin_group": design.me_names[cou],
            "Omega_cousin": float(group_cou[cou]),
        })
    return rows


def stability_cap(gamma, tau):
    """Largest w_max satisfying tau + 1/(gamma*w) <= 1/(8*w^2).

    Root of 8*tau*u^2 + (8/gamma)*u - 1 = 0, written in a form stable as
    tau -> 0 (limit gamma/8).
    """
    disc = math.sqrt(64.0 / (gamma * gamma) + 32.0 * tau)
    return 2.0 / (8.0 / gamma + disc)


def stabilize_weights(indiv_weight, gamma, tau):
    """Rescale individual weights by a common constant to restore stability.

    If the weights already satisfy the coordinate convexity condition they
    are returned unchanged with scale 1; otherwise all weights shrink by
    cap/w_max, which preserves ratios exactly.  Raises StabilityError when
    no positive scale can satisfy the condition (e.g. tau = inf).
    """
    indiv_weight = np.asarray(indiv_weight, dtype=float)
    if np.any(indiv_weight <= 0) or not np.all(np.isfinite(indiv_weight)):
        raise StabilityError("individual weights must be positive and finite")
    cap = stability_cap(gamma, tau)
    if not (cap > 0.0 and np.isfinite(cap)):
        raise StabilityError(
            f"no positive weight scale is feasible for gamma={gamma}, tau={tau}")
    w_max = float(np.max(indiv_weight))
    if w_max <= cap:
        return indiv_weight, 1.0
    scale = cap / w_max
    if not (scale > 0.0 and np.isfinite(scale)):
        raise StabilityError(
            f"no positive weight scale is feasible for gamma={gamma}, tau={tau}")
    return indiv_weight * scale, scale
