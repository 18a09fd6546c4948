import numpy as np
import pytest

from cmeselect import (
    FitOptions,
    PenaltyParams,
    StabilityError,
    TuningGrid,
    cv_loss,
    cv_tune,
    fit_gaussian,
    fit_glm,
    lambda_max_weighted,
)
from cmeselect.design import apply_standardization, build_cme_matrix
from cmeselect.simulate import ScenarioSpec, build_scenario
from cmeselect.tuning import make_folds
from cmeselect.weights import compute_weights, fit_ridge_pilot, stabilize_weights
from conftest import random_design
from test_solver import full_rank_columns, unit_params


def signal_instance(n=50, p=5, seed=1, coefs=((0, 4.0),)):
    rng = np.random.default_rng(seed)
    d = random_design(n, p, seed=seed)
    beta = np.zeros(d.p_prime)
    for j, c in coefs:
        beta[j] = c
    y = d.raw @ beta + rng.standard_normal(n)
    return d, y, beta


# ---------------------------------------------------------------------------
# weighted start rule
# ---------------------------------------------------------------------------

def test_lambda_max_unit_weights_is_max_score():
    d, y, _ = signal_instance(seed=2)
    ones = (np.ones(d.p), np.ones(d.p), np.ones(d.p_prime))
    lam = lambda_max_weighted(d, y, "gaussian", 0.5, ones)
    u = y - y.mean()
    cols = d.fitting_columns
    want = np.max(np.abs(d.X[:, cols].T @ u)) / d.n
    assert lam == pytest.approx(want, rel=1e-9)


def test_lambda_max_orthogonal_response_is_zero():
    d = random_design(30, 3, seed=3)
    y = np.full(30, 2.5)  # constant: centered score vanishes exactly
    ones = (np.ones(d.p), np.ones(d.p), np.ones(d.p_prime))
    assert lambda_max_weighted(d, y, "gaussian", 0.4, ones) == 0.0


def test_lambda_max_kkt_fit_oracle():
    # fitting at lambda_max returns all zeros; at 0.95*lambda_max something
    # enters (random instances, adaptive weights, both families)
    for s in range(8):
        rng = np.random.default_rng(50 + s)
        d = random_design(40, 3, seed=50 + s)
        bt = np.zeros(d.p_prime)
        bt[int(rng.integers(0, d.p_prime))] = 2.0
        family = "gaussian" if s % 2 == 0 else "binomial"
        if family == "gaussian":
            y = d.raw @ bt + rng.standard_normal(40)
        else:
            y = (rng.random(40) < 1 / (1 + np.exp(-d.raw @ bt))).astype(float)
        pilot = fit_ridge_pilot(d, y, family, lambda_ridge=0.5)
        sib, cou, indiv = compute_weights(pilot, d, 40)
        indiv, _ = stabilize_weights(indiv, 10.0, 0.02)
        rho = 0.4
        lam = lambda_max_weighted(d, y, family, rho, (sib, cou, indiv))
        params = PenaltyParams(rho * lam, (1 - rho) * lam, 10.0, 0.02,
                               sib, cou, indiv)
        fit = fit_glm(d, y, family, params, FitOptions(tol=1e-9))
        assert np.all(fit.beta == 0.0)
        p95 = params.with_lambdas(0.95 * rho * lam, 0.95 * (1 - rho) * lam)
        fit95 = fit_glm(d, y, family, p95, FitOptions(tol=1e-9))
        assert len(fit95.active) >= 1


def test_path_first_entry_below_lambda_max():
    d, y, _ = signal_instance(seed=4)
    ones = (np.ones(d.p), np.ones(d.p), np.ones(d.p_prime))
    lam_max = lambda_max_weighted(d, y, "gaussian", 0.5, ones)
    path = np.geomspace(lam_max, 0.01 * lam_max, 15)
    entry = None
    for lam in path:
        params = unit_params(d, 0.5 * lam, 0.5 * lam)
        fit = fit_gaussian(d, y, params)
        if len(fit.active) > 0:
            entry = lam
            break
    assert entry is not None
    assert 0.0 < entry <= lam_max


# ---------------------------------------------------------------------------
# cv loss
# ---------------------------------------------------------------------------

def test_cv_loss_perfect_gaussian():
    y = np.array([1.0, -2.0, 0.5])
    assert cv_loss(y, y, "gaussian") == 0.0


def test_cv_loss_binomial_null():
    y = np.array([0.0, 1.0, 1.0, 0.0])
    assert cv_loss(y, np.zeros(4), "binomial") == pytest.approx(2 * np.log(2))


def test_cv_loss_matches_manual_sums():
    rng = np.random.default_rng(5)
    y = rng.standard_normal(20)
    eta = rng.standard_normal(20)
    assert cv_loss(y, eta, "gaussian") == pytest.approx(
        sum((a - b) ** 2 for a, b in zip(y, eta)) / 20)
    yb = (y > 0).astype(float)
    want = -2 * np.mean([yi * ei - np.log1p(np.exp(ei))
                         for yi, ei in zip(yb, eta)])
    assert cv_loss(yb, eta, "binomial") == pytest.approx(want)


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

def test_make_folds_deterministic_and_balanced():
    a = make_folds(23, 5, seed=7)
    b = make_folds(23, 5, seed=7)
    assert np.array_equal(a, b)
    sizes = np.bincount(a, minlength=5)
    assert sizes.max() - sizes.min() <= 1


def test_make_folds_stratified():
    y = np.array([0.0] * 12 + [1.0] * 8)
    fold = make_folds(20, 4, seed=8, y=y)
    for f in range(4):
        cls = y[fold == f]
        assert 2 <= cls.sum() <= 3  # 8 positives spread over 4 folds


def test_make_folds_rejects_bad_k():
    with pytest.raises(ValueError):
        make_folds(10, 11, seed=0)
    with pytest.raises(ValueError):
        make_folds(10, 1, seed=0)


# ---------------------------------------------------------------------------
# cv_tune
# ---------------------------------------------------------------------------

def small_grid(**kw):
    cfg = dict(gamma_grid=(10.0,), tau_grid=(0.02,), rho_grid=(0.5,),
               nlambda=10, lambda_min_ratio=0.05, n_folds=5, seed=0)
    cfg.update(kw)
    return TuningGrid(**cfg)


def test_cv_smoke_leave_one_out_toy():
    d, y, _ = signal_instance(n=12, p=2, seed=9)
    report = cv_tune(d, y, "gaussian", small_grid(n_folds=12, nlambda=5),
                     weights="unit")
    assert report.fit is not None
    assert np.isfinite(report.selected["mean_loss"])


def test_cv_deterministic_given_seed():
    d, y, _ = signal_instance(seed=10)
    g = small_grid(gamma_grid=(3.0, 10.0), tau_grid=(0.01, 0.1), seed=4)
    r1 = cv_tune(d, y, "gaussian", g, weights="adaptive")
    r2 = cv_tune(d, y, "gaussian", g, weights="adaptive")
    assert r1.selected == r2.selected
    assert np.array_equal(r1.fold_ids, r2.fold_ids)
    assert np.array_equal(r1.fit.beta, r2.fit.beta)
    assert r1.surface == r2.surface


def test_cv_selected_cell_attains_surface_minimum():
    d, y, _ = signal_instance(seed=11, coefs=((0, 4.0), (30, 2.0)))
    report = cv_tune(d, y, "gaussian", small_grid(rho_grid=(0.35, 0.5, 0.65)),
                     weights="adaptive")
    finite = [r["mean_loss"] for r in report.surface
              if np.isfinite(r["mean_loss"])]
    assert report.selected["mean_loss"] == pytest.approx(min(finite))


def test_cv_stage1_records_feasibility():
    d, y, _ = signal_instance(seed=12)
    g = small_grid(gamma_grid=(3.0, 10.0), tau_grid=(0.02, 0.2))
    report = cv_tune(d, y, "gaussian", g, weights="adaptive")
    assert len(report.stage1) == 4
    assert all(rec["feasible"] for rec in report.stage1)
    assert {(rec["gamma"], rec["tau"]) for rec in report.stage1} == {
        (3.0, 0.02), (3.0, 0.2), (10.0, 0.02), (10.0, 0.2)}


def test_cv_all_cells_infeasible_raises():
    d, y, _ = signal_instance(seed=13)
    g = small_grid(tau_grid=(float("inf"),))
    with pytest.raises(StabilityError):
        cv_tune(d, y, "gaussian", g, weights="adaptive")


def test_cv_scenario2_beats_null_model():
    spec = ScenarioSpec(n=50, p=20, rho=0.0, family="gaussian",
                        structure="main_plus_cousins", n_groups=4,
                        beta_me=5.0, beta_cme=1.0, noise_sd=1.0, seed=21)
    data = build_scenario(spec)
    report = cv_tune(data.design, data.y_train, "gaussian",
                     small_grid(nlambda=15, lambda_min_ratio=0.01),
                     weights="adaptive")
    raw_test = build_cme_matrix(data.me_test,
                                names=data.design.me_names).raw
    X_test = apply_standardization(data.design, raw_test)
    eta = report.fit.intercept + X_test @ report.fit.beta
    mspe = float(np.mean((data.y_test - eta) ** 2))
    null_mspe = float(np.mean((data.y_test - data.y_train.mean()) ** 2))
    assert mspe <= null_mspe


def test_cv_pure_noise_rarely_selects():
    # Monte Carlo under the null: the tuned model keeps at most one
    # coefficient in at least 90% of seeded runs.
    counts = []
    for s in range(20):
        rng = np.random.default_rng(3000 + s)
        d = random_design(100, 3, seed=3000 + s)
        y = rng.standard_normal(100)
        g = small_grid(nlambda=8, lambda_min_ratio=0.4, seed=s)
        report = cv_tune(d, y, "gaussian", g, weights="adaptive")
        counts.append(len(report.fit.active))
    assert np.mean([c <= 1 for c in counts]) >= 0.9


def test_cv_parallel_folds_match_sequential():
    d, y, _ = signal_instance(n=30, p=3, seed=15)
    g1 = small_grid(nlambda=6, n_folds=3, seed=2)
    g2 = small_grid(nlambda=6, n_folds=3, seed=2, n_jobs=2)
    r1 = cv_tune(d, y, "gaussian", g1, weights="unit")
    r2 = cv_tune(d, y, "gaussian", g2, weights="unit")
    assert r1.selected == r2.selected
    assert r1.surface == r2.surface
    assert np.array_equal(r1.fit.beta, r2.fit.beta)


def test_warm_vs_cold_path_agreement():
    rng = np.random.default_rng(14)
    d = random_design(80, 4, seed=14)
    cols = full_rank_columns(d)
    omega = np.full(d.p_prime, 0.2)
    y = d.raw[:, 0] * 2.0 + rng.standard_normal(80)
    lam_path = np.geomspace(0.5, 0.05, 6)
    beta0 = None
    b0 = None
    for lam in lam_path:
        params = PenaltyParams(0.5 * lam, 0.5 * lam, 10.0, 0.01,
                               np.ones(d.p), np.ones(d.p), omega)
        warm = fit_gaussian(d, y, params, FitOptions(
            tol=1e-10, columns=cols, beta_init=beta0, intercept_init=b0))
        cold = fit_gaussian(d, y, params, FitOptions(tol=1e-10, columns=cols))
        from cmeselect import objective

        gap = abs(objective(d, y, "gaussian", params, warm.beta, warm.intercept)
                  - objective(d, y, "gaussian", params, cold.beta, cold.intercept))
        assert gap < 1e-8
        beta0, b0 = warm.beta, warm.intercept
