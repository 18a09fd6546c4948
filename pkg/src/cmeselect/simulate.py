"""Synthetic-data generation and selection/prediction metrics.

Main effects come from an equicorrelated latent Gaussian: each latent row is
sqrt(rho)*g*1 + sqrt(1-rho)*eps (pairwise latent correlation rho), thresholded
at zero to +-1.  Scenario builders place active effects under the structure
constraints (pure main/sibling/cousin structures forbid any other group
relation among the actives; mixed structures do not), and the replicate
harness aggregates F1/precision/recall plus MSPE or misclassification rate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .design import apply_standardization, build_cme_matrix, standardize
from .errors import DegenerateError, ScenarioError
from .families import get_family
from .tuning import TuningGrid, cv_tune

STRUCTURES = ("pure_mains", "pure_siblings", "pure_cousins",
              "main_plus_siblings", "main_plus_cousins")

_REJECTION_CAP = 10_000


@dataclass
class ScenarioSpec:
    """One synthetic-data configuration.

    For the pure structures each group contributes `effects_per_group`
    active effects; the main_plus_* structures additionally activate the
    group's own main effect.  `n_test` defaults to n (fresh draw).
    """

    n: int
    p: int
    rho: float = 0.0
    family: str = "gaussian"
    structure: str = "pure_mains"
    n_groups: int = 4
    effects_per_group: int = 2
    beta_me: float = 5.0
    beta_cme: float = 1.0
    beta0: float = 0.0
    noise_sd: float = 1.0
    n_test: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ScenarioError(f"unknown structure {self.structure!r}")


@dataclass
class ScenarioData:
    """Built scenario: standardized training design, truth and test draw."""

    design: object
    beta_true: np.ndarray
    y_train: np.ndarray
    me_test: np.ndarray
    y_test: np.ndarray
    active: np.ndarray
    spec: ScenarioSpec


@dataclass
class MetricReport:
    """Selection confusion counts over all p' columns plus prediction error."""

    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    n_selected: int
    mspe: float | None = None
    mcr: float | None = None


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_equicorrelated_me(n, p, rho, seed):
    """+-1 main effects from the one-factor equicorrelated latent model."""
    if rho == 1:
        raise DegenerateError("rho = 1 makes all latent columns identical")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    rng = _rng(seed)
    g = rng.standard_normal((n, 1))
    eps = rng.standard_normal((n, p))
    z = np.sqrt(rho) * g + np.sqrt(1.0 - rho) * eps
    return np.where(z > 0, 1.0, -1.0)


def gen_response(design_raw, beta_true, beta0, family, noise_sd, seed):
    """Response draw on the raw (unstandardized) design scale."""
    rng = _rng(seed)
    family = get_family(family)
    eta = beta0 + np.asarray(design_raw) @ np.asarray(beta_true, dtype=float)
    if family.name == "gaussian":
        return eta + noise_sd * rng.standard_normal(len(eta))
    return rng.binomial(1, expit(eta)).astype(float)


def _sample_pure(rng, design, spec, sibling):
    """Active CMEs grouped by shared parent (sibling=True) or shared child,
    with no other group relation among the actives."""
    p, g, m = spec.p, spec.n_groups, spec.effects_per_group
    if g > p or g * m > p:
        raise ScenarioError(
            f"{spec.structure} needs n_groups <= p and n_groups*effects_per_group"
            f" <= p (got p={p}, n_groups={g}, effects={m})")
    for _ in range(_REJECTION_CAP):
        anchors = rng.choice(p, size=g, replace=False)        # one per group
        partners = rng.choice(p, size=g * m, replace=False)   # distinct overall
        levels = rng.choice((1, -1), size=g * m)
        ok = True
        positions = []
        for gi, anchor in enumerate(anchors):
            for ei in range(m):
                other = partners[gi * m + ei]
                if other == anchor:
                    ok = False
                    break
                parent, child = (anchor, other) if sibling else (other, anchor)
                positions.append(design.cme_position(parent, child,
                                                     levels[gi * m + ei]))
            if not ok:
                break
        if ok:
            return np.array(sorted(positions))
    raise ScenarioError("could not place active effects within the rejection cap")


def _sample_mixed(rng, design, spec, sibling):
    """Active MEs plus CMEs tied to them via parent (sibling) or child."""
    p, g, m = spec.p, spec.n_groups, spec.effects_per_group
    if g > p or m > p - 1:
        raise ScenarioError(
            f"{spec.structure} needs n_groups <= p and effects_per_group <= p-1")
    anchors = rng.choice(p, size=g, replace=False)
    positions = [int(a) for a in anchors]
    for anchor in anchors:
        others = rng.choice([k for k in range(p) if k != anchor],
                            size=m, replace=False)
        levels = rng.choice((1, -1), size=m)
        for other, lvl in zip(others, levels):
            parent, child = (anchor, other) if sibling else (other, anchor)
            positions.append(design.cme_position(parent, child, lvl))
    return np.array(sorted(positions))


def place_active_effects(rng, design, spec):
    """Column positions of the active effects for the given structure."""
    if spec.structure == "pure_mains":
        if spec.n_groups > spec.p:
            raise ScenarioError("more active main effects than MEs available")
        return np.sort(rng.choice(spec.p, size=spec.n_groups, replace=False))
    if spec.structure == "pure_siblings":
        return _sample_pure(rng, design, spec, sibling=True)
    if spec.structure == "pure_cousins":
        return _sample_pure(rng, design, spec, sibling=False)
    if spec.structure == "main_plus_siblings":
        return _sample_mixed(rng, design, spec, sibling=True)
    return _sample_mixed(rng, design, spec, sibling=False)


def build_scenario(spec):
    """Draw one train/test scenario: design, truth vector, responses."""
    rng = np.random.default_rng(spec.seed)
    me_train = gen_equicorrelated_me(spec.n, spec.p, spec.rho, rng)
    design = standardize(build_cme_matrix(me_train))
    active = place_active_effects(rng, design, spec)
    beta_true = np.zeros(design.p_prime)
    beta_true[active[active < spec.p]] = spec.beta_me
    beta_true[active[active >= spec.p]] = spec.beta_cme
    y_train = gen_response(design.raw, beta_true, spec.beta0, spec.family,
                           spec.noise_sd, rng)
    n_test = spec.n_test if spec.n_test is not None else spec.n
    me_test = gen_equicorrelated_me(n_test, spec.p, spec.rho, rng)
    raw_test = build_cme_matrix(me_test, names=design.me_names).raw
    y_test = gen_response(raw_test, beta_true, spec.beta0, spec.family,
                          spec.noise_sd, rng)
    return ScenarioData(design=design, beta_true=beta_true, y_train=y_train,
                        me_test=me_test, y_test=y_test, active=active, spec=spec)


def evaluate(selected, truth, predictions, y_test, family, p_prime):
    """Confusion metrics over all p' columns plus MSPE (Gaussian predictions
    on the mean scale) or MCR (Binomial, labels at probability 0.5)."""
    selected = set(int(j) for j in selected)
    truth = set(int(j) for j in truth)
    tp = len(selected & truth)
    fp = len(selected - truth)
    fn = len(truth - selected)
    tn = p_prime - tp - fp - fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    report = MetricReport(tp=tp, fp=fp, tn=tn, fn=fn, precision=precision,
                          recall=recall, f1=f1, n_selected=len(selected))
    if predictions is not None and y_test is not None:
        family = get_family(family)
        predictions = np.asarray(predictions, dtype=float)
        y_test = np.asarray(y_test, dtype=float)
        if family.name == "gaussian":
            report.mspe = float(np.mean((y_test - predictions) ** 2))
        else:
            labels = (predictions >= 0.5).astype(float)
            report.mcr = float(np.mean(labels != y_test))
    return report


def default_method_config(weights="adaptive"):
    """Desk-scale tuning configuration for the replicate harness."""
    return {
        "label": weights,
        "weights": weights,
        "gamma_grid": (10.0,),
        "tau_grid": (0.02,),
        "rho_grid": (0.35, 0.5, 0.65),
        "nlambda": 20,
        "lambda_min_ratio": 0.01,
        "n_folds": 5,
    }


def run_method(data, method_config):
    """Tune + refit one method on a built scenario; metrics on its test set."""
    cfg = dict(method_config)
    weights = cfg.pop("weights", "adaptive")
    label = cfg.pop("label", str(weights))
    grid = TuningGrid(seed=data.spec.seed, **cfg)
    report = cv_tune(data.design, data.y_train, data.spec.family, grid,
                     weights=weights)
    raw_test = build_cme_matrix(data.me_test, names=data.design.me_names).raw
    X_test = apply_standardization(data.design, raw_test)
    eta = report.fit.intercept + X_test @ report.fit.beta
    family = get_family(data.spec.family)
    predictions = family.mean(eta)
    metrics = evaluate(np.flatnonzero(report.fit.beta),
                       np.flatnonzero(data.beta_true),
                       predictions, data.y_test, family, data.design.p_prime)
    return label, metrics, report


def replicate_seed(base_seed, rep):
    """Independent per-replicate stream derived from (seed, rep)."""
    return int(np.random.SeedSequence((base_seed, rep)).generate_state(1)[0])


def run_replicates(spec, method_configs, n_reps, n_jobs=1):
    """Repeat build/tune/evaluate; returns per-replicate rows plus aggregates.

    Failures are recorded per replicate (row carries an 'error' field) and do
    not abort the run.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    if isinstance(method_configs, dict):
        method_configs = [method_configs]

    def one(rep):
        rep_spec = replace(spec, seed=replicate_seed(spec.seed, rep))
        rows = []
        for cfg in method_configs:
            row = {"rep": rep, "seed": rep_spec.seed,
                   "method": cfg.get("label", cfg.get("weights", "adaptive"))}
            try:
                data = build_scenario(rep_spec)
                label, metrics, _ = run_method(data, cfg)
                row["method"] = label
                row.update(vars(metrics))
            except Exception as exc:  # noqa: BLE001 - recorded, not fatal
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
        return rows

    if n_jobs != 1:
        nested = Parallel(n_jobs=n_jobs)(delayed(one)(r) for r in range(n_reps))
    else:
        nested = [one(r) for r in range(n_reps)]
    rows = [row for batch in nested for row in batch]
    return rows, aggregate_replicates(rows, spec)


_METRIC_FIELDS = ("f1", "precision", "recall", "mspe", "mcr", "n_selected")


def aggregate_replicates(rows, spec):
    """Mean/SE per (method, metric) in the long layout used for figures."""
    methods = sorted({r["method"] for r in rows})
    out = []
    for method in methods:
        ok = [r for r in rows if r["method"] == method and "error" not in r]
        n_failed = sum(1 for r in rows
                       if r["method"] == method and "error" in r)
        for metric in _METRIC_FIELDS:
            vals = np.array([r[metric] for r in ok
                             if r.get(metric) is not None], dtype=float)
            if vals.size == 0:
                continue
            se = float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            out.append({
                "scenario": spec.structure,
                "family": spec.family,
                "method": method,
                "metric": metric,
                "n_groups": spec.n_groups,
                "mean": float(np.mean(vals)),
                "se": se,
                "n_reps": int(vals.size),
                "n_failed": n_failed,
            })
    return out
