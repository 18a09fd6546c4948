"""Two-stage cross-validated tuning with warm-started penalty paths.

Stage 1 scans the structure parameters (gamma, tau) with a short penalty
path at the symmetric split rho = 0.5; stage 2, conditional on the winning
pair, scans rho = lambda_s/(lambda_s+lambda_c) with a full descending path
per rho.  Paths start at the weighted lambda_max, the smallest total penalty
at which the all-zero solution is stationary.  Adaptive weights are
recomputed on each fold's training rows so held-out losses stay leakage-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .design import apply_standardization, standardize, subset_rows
from .errors import CmeError, StabilityError
from .families import get_family
from .penalty import PenaltyParams
from .solver import FitOptions, _fit
from .weights import compute_weights, fit_ridge_pilot, stabilize_weights


@dataclass
class TuningGrid:
    """Grids and controls for the two-stage search.

    The defaults keep a full search at desk scale within minutes; any field
    can be overridden.  `stage1_nlambda`/`stage1_lambda_min_ratio` control
    the short path used to rank (gamma, tau) cells.
    """

    gamma_grid: tuple = (2.0, 3.0, 5.0, 10.0, 30.0)
    tau_grid: tuple = tuple(float(t) for t in np.geomspace(1e-3, 1.0, 8))
    rho_grid: tuple = (0.2, 0.35, 0.5, 0.65, 0.8)
    nlambda: int = 25
    lambda_min_ratio: float = 0.01
    n_folds: int = 5
    seed: int = 0
    stage1_nlambda: int = 8
    stage1_lambda_min_ratio: float = 0.05
    n_jobs: int = 1
    fit_tol: float = 1e-4  # path-fit tolerance; the final refit runs tighter

    def __post_init__(self):
        if not (self.gamma_grid and self.tau_grid and self.rho_grid):
            raise ValueError("all tuning grids must be non-empty")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")
        for r in self.rho_grid:
            if not 0.0 < r < 1.0:
                raise ValueError("rho values must lie in (0, 1)")


@dataclass
class CvReport:
    """Cross-validation outcome: per-cell losses, the winning configuration
    and the full-data refit."""

    stage1: list
    surface: list
    selected: dict
    params: PenaltyParams
    fit: object
    fold_ids: np.ndarray
    weight_scale: float


def cv_loss(y_held, eta_held, family):
    """Held-out loss: MSE for Gaussian, mean deviance for Binomial."""
    family = get_family(family)
    y_held = np.asarray(y_held, dtype=float)
    eta_held = np.asarray(eta_held, dtype=float)
    if y_held.shape != eta_held.shape:
        raise ValueError("held-out response and predictor lengths differ")
    return family.cv_loss(y_held, eta_held)


def lambda_max_weighted(design, y, family, rho, weights):
    """Smallest total penalty making the all-zero solution stationary.

    max_j (|x_j' u|/n) / (omega_j * (rho*Omega_S(j) + (1-rho)*Omega_C(j)))
    with u the intercept-only score (centered y for Gaussian).  CME columns
    use the parent's sibling weight and the child's cousin weight.
    """
    family = get_family(family)
    y = np.asarray(y, dtype=float)
    if isinstance(weights, PenaltyParams):
        sib, cou, indiv = (weights.group_weight_sib, weights.group_weight_cou,
                           weights.indiv_weight)
    else:
        sib, cou, indiv = (np.asarray(w, dtype=float) for w in weights)
    u = family.null_score(y)
    cols = design.fitting_columns
    score = np.abs(design.X[:, cols].T @ u) / design.n
    denom = indiv[cols] * (rho * sib[design.col_sib[cols]]
                           + (1.0 - rho) * cou[design.col_cou[cols]])
    lam = float(np.max(score / denom))
    # Refitting at the returned value must keep every |z_j| inside the zero
    # region; the relative bump absorbs rounding between the two code paths.
    return lam * (1.0 + 1e-12)


def make_folds(n, n_folds, seed, y=None):
    """Deterministic fold assignment; stratified by class when y is given.

    K = n gives leave-one-out.
    """
    if n_folds < 2 or n_folds > n:
        raise ValueError("need 2 <= K <= n for K-fold CV")
    rng = np.random.default_rng(seed)
    fold = np.empty(n, dtype=int)
    if y is None:
        perm = rng.permutation(n)
        fold[perm] = np.arange(n) % n_folds
    else:
        y = np.asarray(y)
        offset = 0
        for cls in np.unique(y):
            idx = np.flatnonzero(y == cls)
            perm = rng.permutation(idx)
            fold[perm] = (np.arange(idx.size) + offset) % n_folds
            offset += idx.size
    return fold


def _raw_weights(design, y, family, weights, seed):
    """Unstabilized (sib, cou, indiv) triple for one training design."""
    if isinstance(weights, str) and weights == "adaptive":
        pilot = fit_ridge_pilot(design, y, family, seed=seed)
        return compute_weights(pilot, design, design.n)
    if isinstance(weights, str) and weights == "unit":
        return np.ones(design.p), np.ones(design.p), np.ones(design.p_prime)
    sib, cou, indiv = weights
    return (np.asarray(sib, dtype=float), np.asarray(cou, dtype=float),
            np.asarray(indiv, dtype=float))


def _lambda_path(lam_max, nlambda, min_ratio):
    lam_max = max(lam_max, 1e-12)
    if nlambda == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * min_ratio, nlambda)


def _path_losses(fold_design, y_tr, raw_te, y_te, family, base_params,
                 rho, lam_path, fit_kwargs):
    """Warm-started descending path on one fold; held-out loss per lambda."""
    X_te = apply_standardization(fold_design, raw_te)
    losses = np.full(len(lam_path), np.inf)
    beta0 = None
    b0 = None
    for i, lam in enumerate(lam_path):
        params = base_params.with_lambdas(rho * lam, (1.0 - rho) * lam)
        options = FitOptions(beta_init=beta0, intercept_init=b0, **fit_kwargs)
        try:
            fit = _fit(fold_design, y_tr, family, params, options)
        except CmeError:
            beta0, b0 = None, None
            continue
        losses[i] = family.cv_loss(y_te, fit.intercept + X_te @ fit.beta)
        beta0, b0 = fit.beta, fit.intercept
    return losses


class _FoldContext:
    """Per-fold training design, raw weights and held-out rows."""

    def __init__(self, design, y, family, weights, fold_ids, fold, seed):
        train = fold_ids != fold
        self.fold = fold
        self.design = standardize(subset_rows(design, np.flatnonzero(train)))
        self.y_train = np.asarray(y, dtype=float)[train]
        self.raw_test = design.raw[~train]
        self.y_test = np.asarray(y, dtype=float)[~train]
        self.raw_weights = _raw_weights(self.design, self.y_train, family,
                                        weights, seed=seed * 100003 + fold + 1)

    def params_for(self, gamma, tau):
        sib, cou, indiv = self.raw_weights
        indiv, _ = stabilize_weights(indiv, gamma, tau)
        return PenaltyParams(1.0, 1.0, gamma, tau, sib, cou, indiv)


def _stabilized_params(raw, gamma, tau):
    sib, cou, indiv = raw
    indiv, scale = stabilize_weights(indiv, gamma, tau)
    return PenaltyParams(1.0, 1.0, gamma, tau, sib, cou, indiv), scale


def cv_tune(design, y, family, grid=None, weights="adaptive", fit_kwargs=None):
    """Two-stage K-fold search over (gamma, tau) then (rho, lambda_total).

    `weights` is "adaptive" (ridge pilot per training set), "unit", or an
    explicit (sib, cou, indiv) triple used verbatim.  Returns a CvReport
    whose `fit` is the full-data refit at the winning cell.
    """
    grid = grid or TuningGrid()
    family = get_family(family)
    y = np.asarray(y, dtype=float)
    fit_kwargs = dict(fit_kwargs) if fit_kwargs else {}
    fit_kwargs.setdefault("tol", grid.fit_tol)
    stratify = y if family.name == "binomial" else None
    fold_ids = make_folds(design.n, grid.n_folds, grid.seed, stratify)

    full_raw = _raw_weights(design, y, family, weights, seed=grid.seed)
    contexts = [_FoldContext(design, y, family, weights, fold_ids, f, grid.seed)
                for f in range(grid.n_folds)]
    runner = Parallel(n_jobs=grid.n_jobs) if grid.n_jobs != 1 else None

    # ---- stage 1: rank (gamma, tau) cells at rho = 0.5 ----------------------
    cells = [(g, t) for g in grid.gamma_grid for t in grid.tau_grid]
    stage1 = []
    feasible_cells = []
    for gamma, tau in cells:
        try:
            full_params, scale = _stabilized_params(full_raw, gamma, tau)
        except StabilityError as exc:
            stage1.append({"gamma": gamma, "tau": tau, "feasible": False,
                           "reason": str(exc)})
            continue
        feasible_cells.append((gamma, tau, full_params, scale))
        stage1.append({"gamma": gamma, "tau": tau, "feasible": True,
                       "weight_scale": scale})
    if not feasible_cells:
        raise StabilityError(
            "every (gamma, tau) grid point failed the stability condition: "
            + "; ".join(r.get("reason", "") for r in stage1))

    if len(feasible_cells) > 1:
        def stage1_fold(ctx):
            out = []
            for gamma, tau, full_params, _ in feasible_cells:
                lam_max = lambda_max_weighted(design, y, family, 0.5, full_params)
                path = _lambda_path(lam_max, grid.stage1_nlambda,
                                    grid.stage1_lambda_min_ratio)
                params = ctx.params_for(gamma, tau)
                out.append(_path_losses(ctx.design, ctx.y_train, ctx.raw_test,
                                        ctx.y_test, family, params, 0.5, path,
                                        fit_kwargs))
            return out

        if runner is not None:
            per_fold = runner(delayed(stage1_fold)(ctx) for ctx in contexts)
        else:
            per_fold = [stage1_fold(ctx) for ctx in contexts]
        best_idx = None
        best_loss = np.inf
        for i, (gamma, tau, _, scale) in enumerate(feasible_cells):
            losses = np.stack([per_fold[f][i] for f in range(grid.n_folds)])
            mean = np.mean(losses, axis=0)
            k = int(np.argmin(mean))
            cell_loss = float(mean[k])
            rec = next(r for r in stage1
                       if r["gamma"] == gamma and r["tau"] == tau)
            rec["mean_loss"] = cell_loss
            rec["se_loss"] = float(np.std(losses[:, k], ddof=1)
                                   / np.sqrt(grid.n_folds))
            if np.isfinite(cell_loss) and cell_loss < best_loss:
                best_loss = cell_loss
                best_idx = i
        if best_idx is None:
            raise StabilityError("no (gamma, tau) cell produced a finite CV loss")
    else:
        best_idx = 0
    gamma_star, tau_star, full_params, weight_scale = feasible_cells[best_idx]

    # ---- stage 2: (rho, lambda) surface at the winning (gamma, tau) --------
    paths = {}
    for rho in grid.rho_grid:
        lam_max = lambda_max_weighted(design, y, family, rho, full_params)
        paths[rho] = _lambda_path(lam_max, grid.nlambda, grid.lambda_min_ratio)

    def stage2_fold(ctx):
        params = ctx.params_for(gamma_star, tau_star)
        return [
            _path_losses(ctx.design, ctx.y_train, ctx.raw_test, ctx.y_test,
                         family, params, rho, paths[rho], fit_kwargs)
            for rho in grid.rho_grid
        ]

    if runner is not None:
        per_fold = runner(delayed(stage2_fold)(ctx) for ctx in contexts)
    else:
        per_fold = [stage2_fold(ctx) for ctx in contexts]

    surface = []
    best = None
    for ri, rho in enumerate(grid.rho_grid):
        losses = np.stack([per_fold[f][ri] for f in range(grid.n_folds)])
        mean = np.mean(losses, axis=0)
        se = np.std(losses, axis=0, ddof=1) / np.sqrt(grid.n_folds)
        for li, lam in enumerate(paths[rho]):
            surface.append({
                "rho": float(rho),
                "lambda_total": float(lam),
                "lambda_s": float(rho * lam),
                "lambda_c": float((1.0 - rho) * lam),
                "mean_loss": float(mean[li]),
                "se_loss": float(se[li]),
            })
            if np.isfinite(mean[li]) and (best is None
                                          or mean[li] < best["mean_loss"]):
                best = {"rho": float(rho), "lambda_index": li,
                        "lambda_total": float(lam), "mean_loss": float(mean[li])}
    if best is None:
        raise StabilityError("no (rho, lambda) cell produced a finite CV loss")

    # ---- full-data refit, warm-started down the winning path ---------------
    rho_star = best["rho"]
    path = paths[rho_star][: best["lambda_index"] + 1]
    beta0 = None
    b0 = None
    fit = None
    for i, lam in enumerate(path):
        params = full_params.with_lambdas(rho_star * lam, (1.0 - rho_star) * lam)
        kw = dict(fit_kwargs)
        if i == len(path) - 1:  # the reported fit converges at full precision
            kw["tol"] = min(kw.get("tol", 1e-7), 1e-7)
        options = FitOptions(beta_init=beta0, intercept_init=b0, **kw)
        fit = _fit(design, y, family, params, options)
        beta0, b0 = fit.beta, fit.intercept
    final_params = full_params.with_lambdas(
        rho_star * best["lambda_total"], (1.0 - rho_star) * best["lambda_total"])

    selected = {
        "gamma": float(gamma_star),
        "tau": float(tau_star),
        "rho": rho_star,
        "lambda_total": best["lambda_total"],
        "lambda_s": float(final_params.lambda_s),
        "lambda_c": float(final_params.lambda_c),
        "mean_loss": best["mean_loss"],
    }
    return CvReport(stage1=stage1, surface=surface, selected=selected,
                    params=final_params, fit=fit, fold_ids=fold_ids,
                    weight_scale=weight_scale)
