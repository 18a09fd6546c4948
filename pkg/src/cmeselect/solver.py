"""Coordinate-descent fitting of the bi-level CME model.

Gaussian fits run plain cyclic coordinate descent; other families wrap the
same pass in an outer reweighted least-squares loop that refreshes the
working weights and residuals before every cycle.  Group slopes are
maintained multiplicatively as coordinates move (one exp per touched group)
and the exact penalized negative log-likelihood is monitored for descent
after every outer iteration.  Active-set cycling with a full verification
pass keeps large designs cheap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DesignError, DimensionError
from .families import get_family
from .penalty import (
    GroupSlopes,
    compute_slopes,
    mcp_scalar,
    norms_and_slopes,
    penalty_value,
    threshold,
)

DESCENT_SLACK = 1e-10


@dataclass
class FitOptions:
    """Solver controls.

    `columns` restricts fitting to a subset of design columns (intersected
    with the positive-variance columns); all other coefficients stay 0.
    """

    tol: float = 1e-7
    max_iter: int = 1000
    active_set: bool = True
    columns: np.ndarray | None = None
    beta_init: np.ndarray | None = None
    intercept_init: float | None = None
    weight_floor: float = 1e-5


@dataclass
class FitState:
    """Converged (or stopped) solver state."""

    beta: np.ndarray
    intercept: float
    eta: np.ndarray
    resid: np.ndarray
    delta: GroupSlopes
    active: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    converged: bool


@dataclass
class StabilityReport:
    """Convexity diagnostics for a (gamma, tau, weight) configuration."""

    family: str
    omega_max: float
    lhs: float
    coordinate_bound: float
    coordinate_ok: bool
    global_bound: float | None = None
    global_ok: bool | None = None


def objective(design, y, family, params, beta, intercept):
    """Exact penalized objective: average NLL plus the bi-level penalty."""
    family = get_family(family)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (design.p_prime,):
        raise DimensionError("beta length does not match design")
    eta = intercept + design.X @ beta
    return family.nll(np.asarray(y, dtype=float), eta) + penalty_value(design, params, beta)


class _Working:
    """Mutable solver context: coefficients, linear predictor, working
    residuals, and multiplicatively-maintained group slopes."""

    def __init__(self, design, y, family, params, options):
        if not design.standardized:
            raise DesignError("standardize the design before fitting")
        self.design = design
        self.family = family
        self.params = params
        self.options = options
        self.y = np.asarray(y, dtype=float)
        if len(self.y) != design.n:
            raise DimensionError("response length does not match design")
        family.validate_response(self.y)

        self.X = design.X
        self.n = design.n
        self.gaussian = family.name == "gaussian"
        if options.columns is None:
            self.fit_cols = design.fitting_columns
        else:
            requested = np.asarray(options.columns, dtype=np.intp)
            mask = np.zeros(design.p_prime, dtype=bool)
            mask[requested] = True
            self.fit_cols = np.flatnonzero(mask & design.fitting_mask)

        if options.beta_init is not None:
            self.beta = np.asarray(options.beta_init, dtype=float).copy()
            if self.beta.shape != (design.p_prime,):
                raise DimensionError("beta_init length does not match design")
        else:
            self.beta = np.zeros(design.p_prime)
        if options.intercept_init is not None:
            self.b0 = float(options.intercept_init)
        else:
            self.b0 = family.null_intercept(self.y)
        self.eta = self.b0 + self.X @ self.beta

        self.lam_sib = params.lambda_sib_eff
        self.lam_cou = params.lambda_cou_eff
        self.omega = params.indiv_weight
        self._recompute_norms()
        self.v_gauss = np.mean(self.X * self.X, axis=0)
        self._warned_separation = False
        self.refresh()

    def _recompute_norms(self):
        """Rebuild the maintained group norms and slopes from the current
        coefficients (fit start and after any backtrack)."""
        self.norm_sib, self.norm_cou, self.slopes = norms_and_slopes(
            self.design, self.params, self.beta)
        # fixed penalty-evaluation pieces: active groups and their lambdas
        tau = self.params.tau
        self._pen = []
        for lams in (self.params.lambda_sib_eff, self.params.lambda_cou_eff):
            pos = lams > 0.0
            self._pen.append((pos, lams[pos], lams[pos] * lams[pos] / tau))

    # -- working quantities -------------------------------------------------

    def refresh(self):
        """Recompute weights/residuals at the current eta (one outer step).

        GLM fits use the family's curvature bound (1/4 for logistic) as the
        working weight rather than the pointwise pi*(1-pi): the working
        quadratic then majorizes the exact negative log-likelihood (the bound
        behind the 1/(8*w_max^2) stability constant), which guarantees
        monotone descent and the existence of threshold fixed points;
        pointwise weights can cycle between basins of the nonconvex penalty.
        """
        if self.gaussian:
            self.w = None
            self.r = self.y - self.eta
            self.wr = self.r  # alias: all updates below are in place
            self.v = self.v_gauss
        else:
            pi = self.family.mean(self.eta)
            w_raw = self.family.working_weight(self.eta)
            floor = self.options.weight_floor
            if (not self._warned_separation and
                    np.any((w_raw < floor) & (np.abs(self.eta) > 30.0))):
                warnings.warn(
                    "separation detected: pointwise working weights "
                    f"underflow {floor:g}", RuntimeWarning)
                self._warned_separation = True
            wbar = self.family.curvature_bound()
            self.w = np.full(self.n, wbar)
            self.r = (self.y - pi) / wbar
            self.wr = self.y - pi
            self.v = wbar * self.v_gauss

    def exact_objective(self):
        # The maintained residual equals y - eta (reset every refresh), so the
        # Gaussian NLL avoids re-deriving it.
        if self.gaussian:
            nll = 0.5 * float(np.dot(self.r, self.r)) / self.n
        else:
            nll = self.family.nll(self.y, self.eta)
        tau = self.params.tau
        pen = 0.0
        for norms, (pos, lam, lam2_tau) in zip((self.norm_sib, self.norm_cou),
                                               self._pen):
            if lam.size:
                pen += float(np.dot(lam2_tau,
                                    -np.expm1(-tau * norms[pos] / lam)))
        val = nll + pen
        if not np.isfinite(val):
            raise ConvergenceError("objective became non-finite")
        return val

    # -- one outer iteration -------------------------------------------------

    def intercept_step(self):
        if self.gaussian:
            d0 = float(np.mean(self.r))
        else:
            d0 = float(np.sum(self.wr) / np.sum(self.w))
        if d0 != 0.0:
            self.b0 += d0
            self.eta += d0
            self.r -= d0
            if not self.gaussian:
                self.wr -= self.w * d0
        return abs(d0)

    def pass_columns(self, cols):
        """One cycle of coordinate updates over `cols` (Algorithm order).

        Group slopes update multiplicatively and the matching group norms
        additively, so the exact penalty stays available in O(p).
        """
        X = self.X
        n = self.n
        beta = self.beta
        wr = self.wr
        r = self.r
        w = self.w
        gamma = self.params.gamma
        tau = self.params.tau
        gaussian = self.gaussian
        dot = np.dot
        exp = math.exp

        # plain-float views of the small per-group state: scalar arithmetic
        # in the loop stays off the numpy boxing path
        v = self.v.tolist()
        omega = self.omega.tolist()
        betal = beta.tolist()
        lam_sib = self.lam_sib.tolist()
        lam_cou = self.lam_cou.tolist()
        d_sib = self.slopes.delta_sib.tolist()
        d_cou = self.slopes.delta_cou.tolist()
        norm_sib = self.norm_sib.tolist()
        norm_cou = self.norm_cou.tolist()
        col_sib = self.design.col_sib.tolist()
        col_cou = self.design.col_cou.tolist()

        max_change = 0.0
        for j in (cols.tolist() if isinstance(cols, np.ndarray) else cols):
            vj = v[j]
            if vj <= 0.0:
                continue
            sib = col_sib[j]
            cou = col_cou[j]
            l1 = lam_sib[sib]
            l2 = lam_cou[cou]
            b_old = betal[j]
            xj = X[:, j]
            zj = dot(xj, wr) / n + vj * b_old
            b_new = threshold(zj, vj, l1, l2, d_sib[sib], d_cou[cou], omega[j], gamma)
            if b_new == b_old:
                continue
            db = b_new - b_old
            betal[j] = b_new
            beta[j] = b_new
            step = xj * db
            self.eta += step
            r -= step
            if not gaussian:
                wr -= w * step
            wj = omega[j]
            if l1 > 0.0:
                dg = wj * (mcp_scalar(b_new, l1, gamma) - mcp_scalar(b_old, l1, gamma))
                norm_sib[sib] += dg
                d_sib[sib] *= exp(-(tau / l1) * dg)
            if l2 > 0.0:
                dg = wj * (mcp_scalar(b_new, l2, gamma) - mcp_scalar(b_old, l2, gamma))
                norm_cou[cou] += dg
                d_cou[cou] *= exp(-(tau / l2) * dg)
            change = db if db >= 0.0 else -db
            if change > max_change:
                max_change = change
        self.slopes.delta_sib[:] = d_sib
        self.slopes.delta_cou[:] = d_cou
        self.norm_sib[:] = norm_sib
        self.norm_cou[:] = norm_cou
        return max_change

    def outer_iteration(self, cols, obj_prev):
        """Refresh working data, update intercept and cycle `cols` once,
        enforcing exact-objective descent (with step halving for GLMs)."""
        if not self.gaussian:  # snapshot only needed for backtracking
            beta_snap = self.beta.copy()
            b0_snap = self.b0
        self.refresh()
        change = self.intercept_step()
        change = max(change, self.pass_columns(cols))
        obj_new = self.exact_objective()
        if obj_new <= obj_prev + DESCENT_SLACK:
            return change, obj_new
        if self.gaussian:
            # The surrogate majorizes the Gaussian objective exactly, so an
            # increase beyond rounding slack indicates a bug or infeasible
            # penalty configuration.
            raise ConvergenceError(
                f"objective increased by {obj_new - obj_prev:.3e} in a "
                "Gaussian coordinate cycle")
        # GLM quadratic is a local model, not a majorizer: backtrack toward
        # the previous iterate until the exact objective stops increasing.
        direction = self.beta - beta_snap
        d0 = self.b0 - b0_snap
        step = 1.0
        for _ in range(40):
            step *= 0.5
            cand = beta_snap + step * direction
            cand0 = b0_snap + step * d0
            eta = cand0 + self.X @ cand
            obj_cand = (self.family.nll(self.y, eta) +
                        penalty_value(self.design, self.params, cand))
            if obj_cand <= obj_prev + DESCENT_SLACK:
                self.beta = cand
                self.b0 = cand0
                self.eta = eta
                self._recompute_norms()
                self.refresh()
                mc = float(np.max(np.abs(step * direction))) if direction.size else 0.0
                return max(mc, abs(step * d0)), obj_cand
        # No descent at any step size: keep the previous iterate.
        self.beta = beta_snap
        self.b0 = b0_snap
        self.eta = b0_snap + self.X @ beta_snap
        self._recompute_norms()
        self.refresh()
        return 0.0, obj_prev

    def to_state(self, trace, iterations, converged):
        return FitState(
            beta=self.beta.copy(),
            intercept=float(self.b0),
            eta=self.eta.copy(),
            resid=self.r.copy(),
            delta=self.slopes.copy(),
            active=np.flatnonzero(self.beta),
            objective_trace=np.asarray(trace),
            iterations=iterations,
            converged=converged,
        )


def _fit(design, y, family, params, options):
    work = _Working(design, y, family, params, options)
    tol = options.tol
    trace = [work.exact_objective()]
    iterations = 0
    converged = False

    def iterate(cols):
        nonlocal iterations
        change, obj = work.outer_iteration(cols, trace[-1])
        trace.append(obj)
        iterations += 1
        return change

    if not options.active_set:
        while iterations < options.max_iter:
            if iterate(work.fit_cols) < tol:
                converged = True
                break
        return work.to_state(trace, iterations, converged)

    while iterations < options.max_iter:
        # Cycle the current nonzero set until it stabilizes.
        while iterations < options.max_iter:
            active = work.fit_cols[work.beta[work.fit_cols] != 0.0]
            if active.size == 0:
                break
            if iterate(active) < tol:
                break
        if iterations >= options.max_iter:
            break
        # Full verification pass; converged only if nothing moves.
        if iterate(work.fit_cols) < tol:
            converged = True
            break
    return work.to_state(trace, iterations, converged)


def fit_gaussian(design, y, params, options=None):
    """Penalized Gaussian fit via cyclic coordinate descent."""
    return _fit(design, y, get_family("gaussian"), params, options or FitOptions())


def fit_glm(design, y, family, params, options=None):
    """Penalized GLM fit: IRLS outer loop around the coordinate pass."""
    return _fit(design, y, get_family(family), params, options or FitOptions())


def coordinate_pass(state, design, y, family, params, columns):
    """One coordinate cycle over `columns` starting from `state`.

    Working weights and residuals are taken from the state's linear
    predictor; the intercept is left untouched.  Returns a new FitState.
    """
    family = get_family(family)
    options = FitOptions(beta_init=state.beta, intercept_init=state.intercept)
    work = _Working(design, y, family, params, options)
    work.slopes = state.delta.copy()
    cols = np.asarray(columns, dtype=np.intp)
    cols = cols[design.fitting_mask[cols]]
    work.pass_columns(cols)
    trace = np.append(state.objective_trace, work.exact_objective())
    return work.to_state(trace, state.iterations + 1, False)


def check_stability(params, family, design=None, eta=None):
    """Evaluate the coordinate-wise convexity condition and, when the
    design is small enough, the global eigenvalue bound.

    Coordinate-wise: tau + 1/(gamma*w_max) <= 1/(8*w_max^2) for binomial
    (working weights at most 1/4) and <= 1/(2*w_max^2) for Gaussian
    (v_j = 1 after standardization).
    """
    family = get_family(family)
    w_max = params.omega_max
    lhs = params.tau + 1.0 / (params.gamma * w_max)
    denom = 8.0 if family.name == "binomial" else 2.0
    bound = 1.0 / (denom * w_max * w_max)
    report = StabilityReport(
        family=family.name,
        omega_max=w_max,
        lhs=lhs,
        coordinate_bound=bound,
        coordinate_ok=lhs <= bound,
    )
    if design is not None and design.standardized:
        cols = design.fitting_columns
        if design.n >= cols.size:
            X = design.X[:, cols]
            if family.name == "binomial":
                w = family.working_weight(np.zeros(design.n) if eta is None else eta)
            else:
                w = np.ones(design.n)
            H = (X.T * w) @ X
            zeta_min = float(np.linalg.eigvalsh(H)[0])
            report.global_bound = zeta_min / (2.0 * design.n * w_max * w_max)
            report.global_ok = lhs < report.global_bound
    return report


def stationarity_gaps(fit, design, y, family, params):
    """|threshold(z_j) - beta_j| per fitted column at the fit's own working
    quantities; all entries are ~0 at a converged stationary point."""
    family = get_family(family)
    y = np.asarray(y, dtype=float)
    eta = fit.eta
    if family.name == "gaussian":
        w = np.ones(design.n)
        r = y - eta
    else:
        wbar = family.curvature_bound()
        w = np.full(design.n, wbar)
        r = (y - family.mean(eta)) / wbar
    wr = w * r
    slopes = compute_slopes(design, params, fit.beta)
    lam_sib = params.lambda_sib_eff
    lam_cou = params.lambda_cou_eff
    gaps = []
    for j in design.fitting_columns:
        xj = design.X[:, j]
        vj = float(w @ (xj * xj)) / design.n
        if vj <= 0:
            continue
        zj = float(xj @ wr) / design.n + vj * fit.beta[j]
        sib = design.col_sib[j]
        cou = design.col_cou[j]
        b = threshold(zj, vj, lam_sib[sib], lam_cou[cou],
                      slopes.delta_sib[sib], slopes.delta_cou[cou],
                      params.indiv_weight[j], params.gamma)
        gaps.append(abs(b - fit.beta[j]))
    return np.asarray(gaps)


def eta_gap(fit, design):
    """Max deviation of the maintained linear predictor from b0 + X @ beta."""
    return float(np.max(np.abs(fit.eta - (fit.intercept + design.X @ fit.beta))))


@dataclass
class Prediction:
    eta: np.ndarray
    mu: np.ndarray
    labels: np.ndarray | None = None


def predict(fit, design, family, me_new=None, X_new=None):
    """Predictions for new data aligned with the training design.

    Pass raw main effects (`me_new`) to rebuild CME columns with the
    training standardization, or a pre-standardized matrix (`X_new`).
    """
    from .design import transform_new

    family = get_family(family)
    if (me_new is None) == (X_new is None):
        raise ValueError("provide exactly one of me_new or X_new")
    if me_new is not None:
        X_new = transform_new(design, me_new)
    X_new = np.asarray(X_new, dtype=float)
    if X_new.shape[1] != design.p_prime:
        raise DimensionError("new design width does not match training design")
    eta = fit.intercept + X_new @ fit.beta
    mu = family.mean(eta)
    return Prediction(eta=eta, mu=mu, labels=family.labels(mu))


def fit_to_dict(fit, design, params, family):
    """JSON-ready summary: column ids, coefficients on both scales, penalty
    configuration and convergence metadata."""
    from .design import destandardize_coefficients

    family = get_family(family)
    beta_raw, b0_raw = destandardize_coefficients(design, fit.beta, fit.intercept)
    nonzero = [int(j) for j in np.flatnonzero(fit.beta)]
    return {
        "family": family.name,
        "columns": design.column_names(),
        "intercept_std": float(fit.intercept),
        "intercept_raw": float(b0_raw),
        "beta_std": [float(b) for b in fit.beta],
        "beta_raw": [float(b) for b in beta_raw],
        "nonzero": nonzero,
        "nonzero_names": [design.columns[j].name for j in nonzero],
        "params": {
            "lambda_s": float(params.lambda_s),
            "lambda_c": float(params.lambda_c),
            "gamma": float(params.gamma),
            "tau": float(params.tau),
            "group_weight_sib": [float(v) for v in params.group_weight_sib],
            "group_weight_cou": [float(v) for v in params.group_weight_cou],
            "indiv_weight": [float(v) for v in params.indiv_weight],
        },
        "iterations": int(fit.iterations),
        "converged": bool(fit.converged),
        "objective_trace": [float(v) for v in fit.objective_trace],
        "col_mean": [float(v) for v in design.col_mean],
        "col_scale": [float(v) for v in design.col_scale],
    }
