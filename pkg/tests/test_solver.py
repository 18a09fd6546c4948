import numpy as np
import pytest

from cmeselect import (
    DimensionError,
    FitOptions,
    PenaltyParams,
    check_stability,
    coordinate_pass,
    fit_gaussian,
    fit_glm,
    objective,
    predict,
)
from cmeselect.design import build_cme_matrix, standardize
from cmeselect.penalty import compute_slopes
from cmeselect.solver import FitState, eta_gap, fit_to_dict, stationarity_gaps
from conftest import random_design
from oracles import exact_objective, golden_coordinate_refine, newton_logistic

STABLE = dict(gamma=10.0, tau=0.02)  # unit weights satisfy both family bounds


def unit_params(design, lambda_s, lambda_c, **kw):
    cfg = dict(STABLE)
    cfg.update(kw)
    return PenaltyParams.unit(design.p, design.p_prime, lambda_s, lambda_c,
                              cfg["gamma"], cfg["tau"])


def gaussian_instance(n=50, p=4, seed=1, snr_coef=(3.0, 2.0)):
    rng = np.random.default_rng(seed)
    d = random_design(n, p, seed=seed)
    beta_true = np.zeros(d.p_prime)
    beta_true[0] = snr_coef[0]
    beta_true[d.cme_position(1, 2, 1)] = snr_coef[1]
    y = 1.5 + d.raw @ beta_true + rng.standard_normal(n)
    return d, y, beta_true


def full_rank_columns(design):
    """MEs plus one '+'-level CME per unordered pair.

    Complete CME designs are always rank deficient (x_{j|k+} + x_{j|k-} = x_j
    and x_{j|k+} - x_{k|j+} = (x_j - x_k)/2), so unpenalized comparisons use
    this subset, which spans {x_j} union {x_j * x_k} without dependencies.
    """
    cols = [j for j in range(design.p)]
    for j in range(design.p):
        for k in range(j + 1, design.p):
            cols.append(design.cme_position(j, k, +1))
    return np.asarray([j for j in cols if design.fitting_mask[j]])


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def test_objective_zero_beta_gaussian():
    d = random_design(30, 3, seed=2)
    rng = np.random.default_rng(2)
    y = rng.standard_normal(30)
    y -= y.mean()
    params = unit_params(d, 0.4, 0.3)
    val = objective(d, y, "gaussian", params, np.zeros(d.p_prime), 0.0)
    assert val == pytest.approx(0.5 * np.sum(y * y) / 30)


def test_objective_matches_term_by_term_oracle():
    rng = np.random.default_rng(3)
    d = random_design(25, 3, seed=3)
    y = rng.standard_normal(25)
    params = PenaltyParams(0.7, 0.4, 3.0, 0.25,
                           rng.uniform(0.5, 2, d.p), rng.uniform(0.5, 2, d.p),
                           rng.uniform(0.2, 1.0, d.p_prime))
    beta = rng.standard_normal(d.p_prime) * (rng.random(d.p_prime) < 0.3)
    for family in ("gaussian", "binomial"):
        yy = y if family == "gaussian" else (y > 0).astype(float)
        got = objective(d, yy, family, params, beta, 0.3)
        want = exact_objective(d, yy, family, params, beta, 0.3)
        assert got == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------------------------
# coordinate pass
# ---------------------------------------------------------------------------

def _fresh_state(d, y, params):
    beta = np.zeros(d.p_prime)
    b0 = float(np.mean(y))
    eta = np.full(d.n, b0)
    return FitState(beta=beta, intercept=b0, eta=eta, resid=y - eta,
                    delta=compute_slopes(d, params, beta),
                    active=np.array([], dtype=int),
                    objective_trace=np.array([]), iterations=0, converged=False)


def test_pass_below_threshold_keeps_zero_and_slopes():
    d, y, _ = gaussian_instance(seed=4)
    params = unit_params(d, 5.0, 5.0)  # way above lambda_max
    state = _fresh_state(d, y, params)
    out = coordinate_pass(state, d, y, "gaussian", params, np.arange(d.p_prime))
    assert np.all(out.beta == 0.0)
    assert np.array_equal(out.delta.delta_sib, state.delta.delta_sib)
    assert np.array_equal(out.delta.delta_cou, state.delta.delta_cou)


def test_pass_single_column_unpenalized_is_ols():
    d, y, _ = gaussian_instance(seed=5)
    params = unit_params(d, 0.0, 0.0)
    state = _fresh_state(d, y, params)
    out = coordinate_pass(state, d, y, "gaussian", params, [0])
    x = d.X[:, 0]
    slope_ols = float(x @ (y - y.mean())) / float(x @ x)
    assert out.beta[0] == pytest.approx(slope_ols, abs=1e-12)


def test_two_coordinate_fit_matches_grid_oracle():
    d, y, _ = gaussian_instance(seed=6)
    params = unit_params(d, 0.25, 0.2)
    cols = [0, 1]
    fit = fit_gaussian(d, y, params, FitOptions(tol=1e-10, columns=cols))

    def obj2(b01):
        beta = np.zeros(d.p_prime)
        beta[cols] = b01
        return objective(d, y, "gaussian", params, beta, fit.intercept)

    span = np.linspace(-4, 4, 121)
    grid_vals = np.array([[obj2((b1, b2)) for b2 in span] for b1 in span])
    i, j = np.unravel_index(np.argmin(grid_vals), grid_vals.shape)
    start = np.array([span[i], span[j]])
    refined = golden_coordinate_refine(obj2, start, span=0.1, sweeps=5)
    assert np.max(np.abs(fit.beta[cols] - refined)) < 1e-4


# ---------------------------------------------------------------------------
# gaussian fits
# ---------------------------------------------------------------------------

def test_fit_gaussian_zero_response():
    d = random_design(20, 3, seed=7)
    params = unit_params(d, 0.5, 0.5)
    fit = fit_gaussian(d, np.zeros(20), params)
    assert fit.converged
    assert np.all(fit.beta == 0.0)
    assert fit.intercept == 0.0


def test_fit_gaussian_descent_and_consistency():
    d, y, _ = gaussian_instance(seed=8)
    params = unit_params(d, 0.3, 0.2)
    fit = fit_gaussian(d, y, params, FitOptions(tol=1e-9))
    assert fit.converged
    assert np.all(np.diff(fit.objective_trace) <= 1e-10)
    assert eta_gap(fit, d) < 1e-8
    assert fit.objective_trace[-1] == pytest.approx(
        objective(d, y, "gaussian", params, fit.beta, fit.intercept))


def test_fit_gaussian_stationarity_oracle():
    # objective at the solution beats 10^4 random perturbations and
    # coordinate-wise golden refinement does not move the solution
    d, y, _ = gaussian_instance(n=30, p=4, seed=9)
    params = unit_params(d, 0.35, 0.25)
    fit = fit_gaussian(d, y, params, FitOptions(tol=1e-10))
    obj_star = objective(d, y, "gaussian", params, fit.beta, fit.intercept)
    rng = np.random.default_rng(9)
    for scale in (1e-3, 1e-2, 1e-1):
        for _ in range(3334):
            delta = rng.standard_normal(d.p_prime) * scale
            delta[~d.fitting_mask] = 0.0
            perturbed = objective(d, y, "gaussian", params,
                                  fit.beta + delta, fit.intercept)
            assert perturbed >= obj_star - 1e-12

    active = fit.active

    def obj_active(b):
        beta = fit.beta.copy()
        beta[active] = b
        return objective(d, y, "gaussian", params, beta, fit.intercept)

    refined = golden_coordinate_refine(obj_active, fit.beta[active].copy(),
                                       span=0.05, sweeps=4)
    assert np.max(np.abs(refined - fit.beta[active])) < 1e-5


def test_fit_gaussian_unpenalized_matches_least_squares():
    d, y, _ = gaussian_instance(n=60, p=4, seed=10)
    cols = full_rank_columns(d)
    X = d.X[:, cols]
    assert np.linalg.matrix_rank(X) == len(cols)
    params = unit_params(d, 0.0, 0.0)
    fit = fit_gaussian(d, y, params, FitOptions(tol=1e-12, max_iter=20000,
                                                columns=cols))
    A = np.column_stack([np.ones(d.n), X])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert fit.intercept == pytest.approx(coef[0], abs=1e-6)
    assert np.max(np.abs(fit.beta[cols] - coef[1:])) < 1e-6


def test_stationarity_fixed_point_all_columns():
    d, y, _ = gaussian_instance(seed=11)
    params = unit_params(d, 0.3, 0.15)
    fit = fit_gaussian(d, y, params, FitOptions(tol=1e-9))
    assert stationarity_gaps(fit, d, y, "gaussian", params).max() < 1e-7


def test_slope_consistency_after_fit():
    d, y, _ = gaussian_instance(seed=12)
    params = unit_params(d, 0.25, 0.3)
    fit = fit_gaussian(d, y, params, FitOptions(tol=1e-9))
    fresh = compute_slopes(d, params, fit.beta)
    assert np.max(np.abs(fresh.delta_sib - fit.delta.delta_sib)) < 1e-6
    assert np.max(np.abs(fresh.delta_cou - fit.delta.delta_cou)) < 1e-6


def test_warm_start_equivalence_on_strictly_convex_instance():
    rng = np.random.default_rng(13)
    d = random_design(80, 4, seed=13)
    cols = full_rank_columns(d)
    X = d.X[:, cols]
    zeta_min = np.linalg.eigvalsh(X.T @ X / d.n)[0]
    omega = np.full(d.p_prime, 0.2)
    params = PenaltyParams(0.2, 0.15, 10.0, 0.01, np.ones(d.p), np.ones(d.p), omega)
    # strict convexity on the restricted columns (Hessian bound)
    assert 2 * (params.tau * 0.04 + 0.2 / params.gamma) < zeta_min
    y = d.raw[:, 0] * 2.0 + rng.standard_normal(80)
    cold = fit_gaussian(d, y, params, FitOptions(tol=1e-10, columns=cols))
    neighbor = params.with_lambdas(0.3, 0.225)
    prev = fit_gaussian(d, y, neighbor, FitOptions(tol=1e-10, columns=cols))
    warm = fit_gaussian(d, y, params, FitOptions(
        tol=1e-10, columns=cols, beta_init=prev.beta,
        intercept_init=prev.intercept))
    obj_cold = objective(d, y, "gaussian", params, cold.beta, cold.intercept)
    obj_warm = objective(d, y, "gaussian", params, warm.beta, warm.intercept)
    assert abs(obj_cold - obj_warm) < 1e-8


def test_active_set_matches_plain_cycling():
    d, y, _ = gaussian_instance(seed=14)
    params = unit_params(d, 0.3, 0.2)
    a = fit_gaussian(d, y, params, FitOptions(tol=1e-10, active_set=True))
    b = fit_gaussian(d, y, params, FitOptions(tol=1e-10, active_set=False))
    assert np.max(np.abs(a.beta - b.beta)) < 1e-8
    assert a.intercept == pytest.approx(b.intercept, abs=1e-10)


# ---------------------------------------------------------------------------
# binomial fits
# ---------------------------------------------------------------------------

def binomial_instance(n=60, p=3, seed=20, signal=1.0):
    rng = np.random.default_rng(seed)
    d = random_design(n, p, seed=seed)
    beta_true = np.zeros(d.p_prime)
    beta_true[0] = signal
    beta_true[d.cme_position(0, 1, 1)] = signal
    eta = d.raw @ beta_true
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return d, y, beta_true


def test_fit_glm_large_penalty_gives_null_model():
    d, y, _ = binomial_instance(seed=21)
    params = unit_params(d, 3.0, 3.0)
    fit = fit_glm(d, y, "binomial", params, FitOptions(tol=1e-10))
    assert np.all(fit.beta == 0.0)
    ybar = y.mean()
    assert fit.intercept == pytest.approx(np.log(ybar / (1 - ybar)), abs=1e-8)


def test_fit_glm_unpenalized_matches_newton():
    d, y, _ = binomial_instance(n=80, p=3, seed=41, signal=0.5)
    cols = full_rank_columns(d)
    i0, b0 = newton_logistic(d.X[:, cols], y)
    assert np.abs(b0).max() < 2.0  # no quasi-separation in this instance
    params = unit_params(d, 1e-10, 1e-10)
    fit = fit_glm(d, y, "binomial", params,
                  FitOptions(tol=1e-12, max_iter=5000, columns=cols))
    assert abs(fit.intercept - i0) < 1e-5
    assert np.max(np.abs(fit.beta[cols] - b0)) < 1e-5


def test_fit_glm_balanced_noise_selects_nothing():
    rng = np.random.default_rng(23)
    d = random_design(40, 3, seed=23)
    y = np.tile([0.0, 1.0], 20)
    params = unit_params(d, 0.4, 0.4)
    fit = fit_glm(d, y, "binomial", params, FitOptions(tol=1e-9))
    assert np.all(fit.beta == 0.0)


def test_fit_glm_descent_and_stationarity():
    d, y, _ = binomial_instance(seed=24)
    params = unit_params(d, 0.04, 0.03)
    fit = fit_glm(d, y, "binomial", params, FitOptions(tol=1e-9))
    assert np.all(np.diff(fit.objective_trace) <= 1e-10)
    assert stationarity_gaps(fit, d, y, "binomial", params).max() < 1e-7
    fresh = compute_slopes(d, params, fit.beta)
    assert np.max(np.abs(fresh.delta_sib - fit.delta.delta_sib)) < 1e-6


def test_fit_glm_separation_warns_but_fits():
    # A perfectly separating column drives |eta| beyond 30 (here via a warm
    # start deep in the separated regime, where organic growth stalls); the
    # weight floor keeps everything finite and a warning is emitted.
    rng = np.random.default_rng(25)
    me = np.where(rng.random((40, 3)) < 0.5, -1.0, 1.0)
    d = standardize(build_cme_matrix(me))
    y = (me[:, 0] > 0).astype(float)
    params = unit_params(d, 1e-4, 1e-4)
    beta_init = np.zeros(d.p_prime)
    beta_init[0] = 35.0
    with pytest.warns(RuntimeWarning, match="separation"):
        fit = fit_glm(d, y, "binomial", params,
                      FitOptions(tol=1e-8, max_iter=60, columns=[0],
                                 beta_init=beta_init, intercept_init=0.0))
    assert np.isfinite(fit.objective_trace).all()
    assert np.all(np.diff(fit.objective_trace) <= 1e-10)


# ---------------------------------------------------------------------------
# stability report
# ---------------------------------------------------------------------------

def test_check_stability_binomial_fails_at_unit_weights():
    d = random_design(30, 3, seed=26)
    params = PenaltyParams.unit(d.p, d.p_prime, 1.0, 0.5, gamma=3.0, tau=0.01)
    report = check_stability(params, "binomial")
    assert report.lhs == pytest.approx(0.01 + 1.0 / 3.0)
    assert report.coordinate_bound == pytest.approx(1.0 / 8.0)
    assert not report.coordinate_ok


def test_check_stability_gaussian_passes():
    d = random_design(30, 3, seed=27)
    params = PenaltyParams.unit(d.p, d.p_prime, 1.0, 0.5, gamma=30.0, tau=0.01)
    report = check_stability(params, "gaussian")
    assert report.lhs == pytest.approx(0.01 + 1.0 / 30.0)
    assert report.coordinate_bound == pytest.approx(0.5)
    assert report.coordinate_ok


def test_check_stability_limit_always_passes():
    d = random_design(30, 3, seed=28)
    params = PenaltyParams.unit(d.p, d.p_prime, 1.0, 0.5, gamma=1e6, tau=1e-9)
    for family in ("gaussian", "binomial"):
        assert check_stability(params, family).coordinate_ok


def test_check_stability_global_bound_reported():
    d = random_design(200, 2, seed=29)  # n >= p' = 6
    params = PenaltyParams.unit(d.p, d.p_prime, 0.1, 0.1, gamma=30.0, tau=1e-3)
    report = check_stability(params, "gaussian", design=d)
    # complete CME designs are singular, so the eigenvalue bound is ~0 and the
    # global condition honestly fails while the coordinate-wise one holds
    assert report.global_bound is not None
    assert abs(report.global_bound) < 1e-10
    assert report.global_ok is False
    assert report.coordinate_ok


# ---------------------------------------------------------------------------
# prediction and serialization
# ---------------------------------------------------------------------------

def test_predict_constant_when_no_coefficients():
    d, y, _ = binomial_instance(seed=30)
    params = unit_params(d, 3.0, 3.0)
    fit = fit_glm(d, y, "binomial", params)
    me_new = random_design(15, 3, seed=31).raw[:, :3]
    pred = predict(fit, d, "binomial", me_new=me_new)
    mu0 = 1.0 / (1.0 + np.exp(-fit.intercept))
    assert np.allclose(pred.mu, mu0)
    assert set(pred.labels) <= {0, 1}


def test_predict_residual_orthogonality_saturated_fit():
    d, y, _ = gaussian_instance(n=60, p=4, seed=32)
    cols = full_rank_columns(d)
    params = unit_params(d, 0.0, 0.0)
    fit = fit_gaussian(d, y, params, FitOptions(tol=1e-12, max_iter=20000,
                                                columns=cols))
    resid = y - (fit.intercept + d.X @ fit.beta)
    corr = np.abs(d.X[:, cols].T @ resid) / d.n
    assert corr.max() < 1e-6


def test_predict_relabeled_input_identical():
    d, y, _ = gaussian_instance(seed=33)
    params = unit_params(d, 0.3, 0.2)
    fit = fit_gaussian(d, y, params)
    me_new = random_design(10, 4, seed=34).raw[:, :4]
    from cmeselect.design import relabel_binary

    me01 = (me_new + 1.0) / 2.0
    relabeled, flag = relabel_binary(me01)
    assert flag
    a = predict(fit, d, "gaussian", me_new=me_new)
    b = predict(fit, d, "gaussian", me_new=relabeled)
    assert np.array_equal(a.eta, b.eta)


def test_predict_dimension_mismatch():
    d, y, _ = gaussian_instance(seed=35)
    params = unit_params(d, 0.3, 0.2)
    fit = fit_gaussian(d, y, params)
    with pytest.raises(DimensionError):
        predict(fit, d, "gaussian", me_new=np.ones((5, 3)) * 1.0)


def test_fit_to_dict_raw_scale_predictions_agree():
    d, y, _ = gaussian_instance(seed=36)
    params = unit_params(d, 0.3, 0.2)
    fit = fit_gaussian(d, y, params)
    payload = fit_to_dict(fit, d, params, "gaussian")
    beta_raw = np.asarray(payload["beta_raw"])
    eta_raw = payload["intercept_raw"] + d.raw @ beta_raw
    eta_std = fit.intercept + d.X @ fit.beta
    assert np.max(np.abs(eta_raw - eta_std)) < 1e-10
    assert payload["nonzero_names"] == [d.columns[j].name for j in fit.active]
