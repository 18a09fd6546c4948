"""Command-line interface.

Each subcommand takes a flat JSON config (--config) plus flag overrides;
flags win over the file, the file over defaults.  Unknown config keys are
rejected.  Exit codes: 0 success, 1 usage/validation, 2 I/O failure,
3 numerical infeasibility (stability condition).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .design import (
    build_cme_matrix,
    relabel_binary,
    standardize,
)
from .errors import CmeError, StabilityError
from .families import get_family
from .penalty import PenaltyParams, selection_threshold
from .simulate import ScenarioSpec, build_scenario, evaluate, run_replicates
from .solver import FitOptions, check_stability, fit_glm, fit_to_dict
from .tuning import TuningGrid, cv_tune
from .weights import (
    compute_weights,
    fit_ridge_pilot,
    stabilize_weights,
    weights_table,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x):
    """17-significant-digit float formatting for round-trip fidelity."""
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_matrix_csv(path):
    """Header + float matrix from an RFC-4180 CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return header, np.asarray(rows, dtype=float)


def read_vector_csv(path):
    _, mat = read_matrix_csv(path)
    return mat[:, 0]


def _load_design(x_path):
    names, values = read_matrix_csv(x_path)
    values, relabeled = relabel_binary(values)
    if relabeled:
        print(f"note: relabeled {{0,1}} entries in {x_path} to {{-1,+1}}",
              file=sys.stderr)
    return standardize(build_cme_matrix(values, names=names))


# ---------------------------------------------------------------------------
# Option plumbing: defaults < JSON config < command-line flags.
# ---------------------------------------------------------------------------

def _add_options(parser, spec):
    parser.add_argument("--config", type=str, default=None,
                        help="flat JSON config; flags override it")
    for key, (typ, default, help_text) in spec.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"),
                                default=None, help=help_text)
        else:
            parser.add_argument(flag, type=typ, default=None, help=help_text)


def _resolve(args, spec):
    cfg = {key: default for key, (_, default, _) in spec.items()}
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise IOError(f"cannot read config: {exc}") from exc
        unknown = set(file_cfg) - set(spec)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for key, value in file_cfg.items():
            typ = spec[key][0]
            cfg[key] = _coerce(value, typ, key)
    for key in spec:
        flag_val = getattr(args, key)
        if flag_val is not None:
            cfg[key] = flag_val
    missing = [k for k, v in cfg.items() if v is _REQUIRED]
    if missing:
        raise UsageError(f"missing required options: {missing}")
    return cfg


class _Required:
    def __repr__(self):
        return "<required>"


_REQUIRED = _Required()


def _floats(text):
    return tuple(float(v) for v in str(text).split(","))


def _coerce(value, typ, key):
    if typ is _floats and isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    if typ is bool and isinstance(value, bool):
        return value
    try:
        return typ(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value for {key!r}: {value!r}") from exc


def _outdir(cfg):
    out = Path(cfg["out_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOError(f"cannot create output directory: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

SIMULATE_SPEC = {
    "n": (int, _REQUIRED, "training sample size"),
    "p": (int, _REQUIRED, "number of main effects"),
    "rho": (float, 0.0, "latent equicorrelation in [0,1)"),
    "family": (str, "gaussian", "gaussian | binomial"),
    "structure": (str, "pure_mains", "active-effect structure"),
    "n_groups": (int, 4, "number of active groups"),
    "effects_per_group": (int, 2, "active effects per group"),
    "beta_me": (float, 5.0, "coefficient of active main effects"),
    "beta_cme": (float, 1.0, "coefficient of active CMEs"),
    "beta0": (float, 0.0, "intercept"),
    "noise_sd": (float, 1.0, "Gaussian noise standard deviation"),
    "n_test": (int, None, "test sample size (default: n)"),
    "seed": (int, 0, "RNG seed"),
    "out_dir": (str, _REQUIRED, "output directory"),
}


def cmd_simulate(cfg):
    spec_kwargs = {k: v for k, v in cfg.items() if k != "out_dir"}
    spec = ScenarioSpec(**spec_kwargs)
    data = build_scenario(spec)
    out = _outdir(cfg)
    names = data.design.me_names
    me_train = data.design.raw[:, :spec.p]
    write_csv(out / "X_train.csv", names,
              [[int(v) for v in row] for row in me_train])
    write_csv(out / "X_test.csv", names,
              [[int(v) for v in row] for row in data.me_test])
    write_csv(out / "y_train.csv", ["y"], [[float(v)] for v in data.y_train])
    write_csv(out / "y_test.csv", ["y"], [[float(v)] for v in data.y_test])
    active = [int(j) for j in data.active]
    write_json(out / "truth.json", {
        "active_indices": active,
        "active_columns": [data.design.columns[j].name for j in active],
        "beta": {data.design.columns[j].name: float(data.beta_true[j])
                 for j in active},
        "beta0": spec.beta0,
        "spec": {k: (v if not isinstance(v, float) else float(v))
                 for k, v in vars(spec).items()},
    })
    print(f"wrote 5 files to {out}")
    return 0


FIT_SPEC = {
    "x": (str, _REQUIRED, "training ME CSV (header row names columns)"),
    "y": (str, _REQUIRED, "training response CSV"),
    "family": (str, "gaussian", "gaussian | binomial"),
    "lambda_s": (float, _REQUIRED, "sibling-group penalty"),
    "lambda_c": (float, _REQUIRED, "cousin-group penalty"),
    "gamma": (float, 3.0, "MC+ nonconvexity parameter (> 1)"),
    "tau": (float, 0.25, "coupling parameter (> 0)"),
    "weights": (str, "adaptive", "adaptive | unit"),
    "lambda_ridge": (float, None, "pilot ridge penalty (default: internal CV)"),
    "tol": (float, 1e-7, "coefficient-change tolerance"),
    "max_iter": (int, 1000, "maximum outer iterations"),
    "seed": (int, 0, "RNG seed (pilot CV folds)"),
    "out_dir": (str, _REQUIRED, "output directory"),
}


def _build_params(design, y, family, cfg):
    if cfg["weights"] == "adaptive":
        pilot = fit_ridge_pilot(design, y, family,
                                lambda_ridge=cfg.get("lambda_ridge"),
                                seed=cfg["seed"])
        sib, cou, indiv = compute_weights(pilot, design, design.n)
        indiv, scale = stabilize_weights(indiv, cfg["gamma"], cfg["tau"])
        return PenaltyParams(cfg["lambda_s"], cfg["lambda_c"], cfg["gamma"],
                             cfg["tau"], sib, cou, indiv), scale
    if cfg["weights"] != "unit":
        raise UsageError("weights must be 'adaptive' or 'unit'")
    params = PenaltyParams.unit(design.p, design.p_prime, cfg["lambda_s"],
                                cfg["lambda_c"], cfg["gamma"], cfg["tau"])
    report = check_stability(params, family)
    if not report.coordinate_ok:
        raise StabilityError(
            f"unit weights violate the coordinate convexity condition: "
            f"tau + 1/(gamma*w_max) = {report.lhs:.6g} > "
            f"{report.coordinate_bound:.6g}")
    return params, 1.0


def cmd_fit(cfg):
    design = _load_design(cfg["x"])
    y = read_vector_csv(cfg["y"])
    family = get_family(cfg["family"])
    params, scale = _build_params(design, y, family, cfg)
    options = FitOptions(tol=cfg["tol"], max_iter=cfg["max_iter"])
    fit = fit_glm(design, y, family, params, options)
    out = _outdir(cfg)
    payload = fit_to_dict(fit, design, params, family)
    payload["weight_scale"] = float(scale)
    write_json(out / "fit.json", payload)
    wrows = weights_table(design, params.group_weight_sib,
                          params.group_weight_cou, params.indiv_weight)
    write_csv(out / "weights.csv", list(wrows[0].keys()),
              [list(r.values()) for r in wrows])
    rows = [(design.columns[j].name, int(j), float(fit.beta[j]),
             float(payload["beta_raw"][j]))
            for j in np.flatnonzero(fit.beta)]
    write_csv(out / "selected.csv",
              ["column", "index", "beta_std", "beta_raw"], rows)
    print(f"fit: {len(rows)} nonzero coefficients; wrote fit.json, selected.csv")
    return 0


CV_SPEC = {
    "x": (str, _REQUIRED, "training ME CSV"),
    "y": (str, _REQUIRED, "training response CSV"),
    "family": (str, "gaussian", "gaussian | binomial"),
    "weights": (str, "adaptive", "adaptive | unit"),
    "gamma_grid": (_floats, TuningGrid.gamma_grid, "comma-separated gammas"),
    "tau_grid": (_floats, TuningGrid.tau_grid, "comma-separated taus"),
    "rho_grid": (_floats, TuningGrid.rho_grid, "comma-separated rhos"),
    "nlambda": (int, TuningGrid.nlambda, "path length"),
    "lambda_min_ratio": (float, TuningGrid.lambda_min_ratio, "path depth"),
    "n_folds": (int, TuningGrid.n_folds, "fold count"),
    "threads": (int, 1, "worker parallelism for folds"),
    "seed": (int, 0, "RNG seed"),
    "out_dir": (str, _REQUIRED, "output directory"),
}


def cmd_cv(cfg):
    design = _load_design(cfg["x"])
    y = read_vector_csv(cfg["y"])
    family = get_family(cfg["family"])
    grid = TuningGrid(gamma_grid=cfg["gamma_grid"], tau_grid=cfg["tau_grid"],
                      rho_grid=cfg["rho_grid"], nlambda=cfg["nlambda"],
                      lambda_min_ratio=cfg["lambda_min_ratio"],
                      n_folds=cfg["n_folds"], seed=cfg["seed"],
                      n_jobs=cfg["threads"])
    report = cv_tune(design, y, family, grid, weights=cfg["weights"])
    out = _outdir(cfg)
    write_json(out / "cv_report.json", {
        "selected": report.selected,
        "stage1": report.stage1,
        "weight_scale": report.weight_scale,
        "fold_ids": [int(f) for f in report.fold_ids],
    })
    write_csv(out / "loss_surface.csv",
              ["rho", "lambda_total", "lambda_s", "lambda_c",
               "mean_loss", "se_loss"],
              [(r["rho"], r["lambda_total"], r["lambda_s"], r["lambda_c"],
                r["mean_loss"], r["se_loss"]) for r in report.surface])
    payload = fit_to_dict(report.fit, design, report.params, family)
    payload["selected_cell"] = report.selected
    write_json(out / "fit.json", payload)
    rows = [(design.columns[j].name, int(j), float(report.fit.beta[j]),
             float(payload["beta_raw"][j]))
            for j in np.flatnonzero(report.fit.beta)]
    write_csv(out / "selected.csv",
              ["column", "index", "beta_std", "beta_raw"], rows)
    sel = report.selected
    print(f"cv: selected gamma={sel['gamma']:g} tau={sel['tau']:g} "
          f"rho={sel['rho']:g} lambda_total={sel['lambda_total']:.6g}; "
          f"{len(rows)} nonzero coefficients")
    return 0


EVAL_SPEC = {
    "fit": (str, _REQUIRED, "fit.json from fit/cv"),
    "x_test": (str, _REQUIRED, "test ME CSV"),
    "y_test": (str, _REQUIRED, "test response CSV"),
    "truth": (str, None, "truth.json (optional; enables selection metrics)"),
    "out_dir": (str, _REQUIRED, "output directory"),
}


def cmd_eval(cfg):
    try:
        with open(cfg["fit"]) as fh:
            fit_payload = json.load(fh)
    except OSError as exc:
        raise IOError(f"cannot read fit file: {exc}") from exc
    names, me_test = read_matrix_csv(cfg["x_test"])
    me_test, relabeled = relabel_binary(me_test)
    if relabeled:
        print("note: relabeled {0,1} test entries to {-1,+1}", file=sys.stderr)
    y_test = read_vector_csv(cfg["y_test"])
    family = get_family(fit_payload["family"])
    raw_test = build_cme_matrix(me_test, names=names).raw
    beta_raw = np.asarray(fit_payload["beta_raw"], dtype=float)
    eta = fit_payload["intercept_raw"] + raw_test @ beta_raw
    mu = family.mean(eta)
    selected = fit_payload["nonzero"]
    metrics = {"n_selected": len(selected)}
    if family.name == "gaussian":
        metrics["mspe"] = float(np.mean((y_test - mu) ** 2))
    else:
        labels = (mu >= 0.5).astype(float)
        metrics["mcr"] = float(np.mean(labels != y_test))
    if cfg["truth"]:
        try:
            with open(cfg["truth"]) as fh:
                truth_payload = json.load(fh)
        except OSError as exc:
            raise IOError(f"cannot read truth file: {exc}") from exc
        truth = truth_payload["active_indices"]
        report = evaluate(selected, truth, mu, y_test, family,
                          p_prime=len(beta_raw))
        metrics.update({"tp": report.tp, "fp": report.fp, "tn": report.tn,
                        "fn": report.fn, "precision": report.precision,
                        "recall": report.recall, "f1": report.f1})
    out = _outdir(cfg)
    write_json(out / "metrics.json", metrics)
    print("eval: " + ", ".join(f"{k}={v:.4g}" if isinstance(v, float)
                               else f"{k}={v}" for k, v in metrics.items()))
    return 0


CURVE_SPEC = {
    "lambda_s": (float, 1.0, "sibling-group penalty"),
    "lambda_c": (float, 0.5, "cousin-group penalty"),
    "gamma": (float, 3.0, "MC+ nonconvexity parameter"),
    "tau": (float, 0.25, "coupling parameter"),
    "p": (int, 5, "number of MEs in the synthetic group structure"),
    "omega": (float, 1.0, "individual weight applied to every effect"),
    "omega_sib": (float, 1.0, "group weight applied to every sibling group"),
    "omega_cou": (float, 1.0, "group weight applied to every cousin group"),
    "included_beta": (float, 2.0, "coefficient of context effects"),
    "vary": (str, "sibling", "sibling: vary A|B+; cousin: vary B|A+"),
    "beta_max": (float, 4.0, "end of the varied-coefficient grid"),
    "n_points": (int, 81, "grid length"),
    "out": (str, _REQUIRED, "output CSV path"),
}


def _curve_design(p):
    # Group structure only; column values never matter for thresholds.
    letters = [chr(ord("A") + i) for i in range(p)]
    rows = 1 - 2 * ((np.arange(2 ** p)[:, None] >> np.arange(p)) & 1)
    return standardize(build_cme_matrix(rows.astype(float), names=letters))


def cmd_threshold_curve(cfg):
    p = cfg["p"]
    if p < 4:
        raise UsageError("threshold-curve needs p >= 4")
    design = _curve_design(p)
    params = PenaltyParams(
        cfg["lambda_s"], cfg["lambda_c"], cfg["gamma"], cfg["tau"],
        np.full(p, cfg["omega_sib"]), np.full(p, cfg["omega_cou"]),
        np.full(design.p_prime, cfg["omega"]))
    A, B, C, D = 0, 1, 2, 3
    if cfg["vary"] == "sibling":
        varied = design.cme_position(A, B, +1)   # A|B+
        varied_name = "A|B+"
    elif cfg["vary"] == "cousin":
        varied = design.cme_position(B, A, +1)   # B|A+
        varied_name = "B|A+"
    else:
        raise UsageError("vary must be 'sibling' or 'cousin'")
    targets = {"A|C+": design.cme_position(A, C, +1), "A": A}
    contexts = {
        "none": {},
        "sibling": {"A|C+": [design.cme_position(A, D, +1)],
                    "A": [design.cme_position(A, D, +1)]},
        "cousin": {"A|C+": [design.cme_position(D, C, +1)],
                   "A": [design.cme_position(D, A, +1)]},
    }
    contexts["both"] = {t: contexts["sibling"][t] + contexts["cousin"][t]
                        for t in targets}
    grid = np.linspace(0.0, cfg["beta_max"], cfg["n_points"])
    rows = []
    for context_name, per_target in contexts.items():
        for target_name, target_col in targets.items():
            beta = np.zeros(design.p_prime)
            for col in per_target.get(target_name, []):
                beta[col] = cfg["included_beta"]
            for b in grid:
                beta[varied] = b
                t = selection_threshold(design, beta, params, target_col)
                rows.append((varied_name, context_name, target_name,
                             float(b), float(t)))
    out = Path(cfg["out"])
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, ["varied", "context", "target", "beta", "threshold"], rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


BENCH_SPEC = {
    "n": (int, 50, "training sample size"),
    "p": (int, 20, "number of main effects"),
    "rho": (float, 0.0, "latent equicorrelation"),
    "family": (str, "gaussian", "gaussian | binomial"),
    "structure": (str, "main_plus_cousins", "active-effect structure"),
    "n_groups": (int, 4, "number of active groups"),
    "effects_per_group": (int, 2, "active effects per group"),
    "beta_me": (float, 5.0, "ME coefficient"),
    "beta_cme": (float, 1.0, "CME coefficient"),
    "beta0": (float, 0.0, "intercept"),
    "noise_sd": (float, 1.0, "Gaussian noise SD"),
    "seed": (int, 0, "base seed"),
    "n_reps": (int, 20, "replicates"),
    "methods": (str, "adaptive,unit", "comma-separated weight modes"),
    "gamma": (float, 10.0, "MC+ parameter for both methods"),
    "tau": (float, 0.02, "coupling parameter for both methods"),
    "rho_grid": (_floats, (0.35, 0.5, 0.65), "penalty-split grid"),
    "nlambda": (int, 20, "path length"),
    "n_folds": (int, 5, "CV folds"),
    "threads": (int, 1, "parallel replicates"),
    "out_dir": (str, _REQUIRED, "output directory"),
}


def cmd_bench(cfg):
    spec = ScenarioSpec(
        n=cfg["n"], p=cfg["p"], rho=cfg["rho"], family=cfg["family"],
        structure=cfg["structure"], n_groups=cfg["n_groups"],
        effects_per_group=cfg["effects_per_group"], beta_me=cfg["beta_me"],
        beta_cme=cfg["beta_cme"], beta0=cfg["beta0"],
        noise_sd=cfg["noise_sd"], seed=cfg["seed"])
    methods = []
    for mode in cfg["methods"].split(","):
        mode = mode.strip()
        if mode not in ("adaptive", "unit"):
            raise UsageError("methods must be drawn from {adaptive, unit}")
        methods.append({
            "label": mode, "weights": mode,
            "gamma_grid": (cfg["gamma"],), "tau_grid": (cfg["tau"],),
            "rho_grid": cfg["rho_grid"], "nlambda": cfg["nlambda"],
            "n_folds": cfg["n_folds"],
        })
    rows, aggregate = run_replicates(spec, methods, cfg["n_reps"],
                                     n_jobs=cfg["threads"])
    out = _outdir(cfg)
    rep_fields = ["rep", "seed", "method", "tp", "fp", "tn", "fn", "precision",
                  "recall", "f1", "n_selected", "mspe", "mcr", "error"]
    write_csv(out / "replicates.csv", rep_fields,
              [[("" if r.get(f) is None else r.get(f, "")) for f in rep_fields]
               for r in rows])
    agg_fields = ["scenario", "family", "method", "metric", "n_groups",
                  "mean", "se", "n_reps", "n_failed"]
    write_csv(out / "aggregate.csv", agg_fields,
              [[a[f] for f in agg_fields] for a in aggregate])
    for a in aggregate:
        if a["metric"] == "f1":
            print(f"{a['method']}: mean F1 = {a['mean']:.4f} (se {a['se']:.4f})")
    return 0


COMMANDS = {
    "simulate": (SIMULATE_SPEC, cmd_simulate, "generate train/test CSVs + truth"),
    "fit": (FIT_SPEC, cmd_fit, "fit at fixed penalties"),
    "cv": (CV_SPEC, cmd_cv, "two-stage cross-validated tuning"),
    "eval": (EVAL_SPEC, cmd_eval, "score a fit on held-out data"),
    "threshold-curve": (CURVE_SPEC, cmd_threshold_curve,
                        "emit selection-threshold curves as CSV"),
    "bench": (BENCH_SPEC, cmd_bench, "replicate harness with aggregation"),
}


def build_parser():
    parser = _Parser(prog="cmeselect",
                     description="Bi-level conditional-main-effect selection")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (spec, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _add_options(p, spec)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        spec, handler, _ = COMMANDS[args.command]
        cfg = _resolve(args, spec)
        return handler(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (IOError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except StabilityError as exc:
        print(f"infeasible configuration: {exc}", file=sys.stderr)
        return 3
    except CmeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
