"""Construction and bookkeeping of the conditional-main-effect model matrix.

Given an n x p matrix of binary (+-1) main effects, the full design holds the
p ME columns followed by all 4*C(p,2) CME columns x_{j|k+}, x_{j|k-}, where
x_{i,j|k+} = x_{i,j} if x_{i,k} = +1 and 0 otherwise (and symmetrically for
the minus level).  Columns are ordered: all MEs first, then CMEs
lexicographically by (parent, child, level) with '+' before '-'.

Every column belongs to exactly one sibling group (shared parent) and one
cousin group (shared child); the ME column j is a member of both its own
sibling group S(j) and its own cousin group C(j).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DesignError, DimensionError


@dataclass(frozen=True)
class ColumnId:
    """Identity of one design column.

    kind is "me" or "cme"; parent/child are 0-based ME indices (child is -1
    for ME columns); level is +1 or -1 for CME columns and 0 for MEs.
    """

    kind: str
    parent: int
    child: int = -1
    level: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind == "cme" and self.parent == self.child:
            raise DesignError("CME parent and child must differ")


@dataclass
class CmeDesign:
    """Full CME design with group indices and standardization statistics.

    `raw` always holds the unstandardized matrix.  After `standardize`,
    `X` holds the centered/scaled matrix (each fitted column has zero mean
    and (1/n)*sum(x^2) = 1), `col_mean`/`col_scale` record the applied
    transform, and `fitting_mask` flags columns with positive variance.
    Instances are treated as immutable once built.
    """

    raw: np.ndarray
    columns: list
    me_names: list
    n: int
    p: int
    p_prime: int
    sibling_index: list
    cousin_index: list
    col_sib: np.ndarray   # sibling group id (parent) per column
    col_cou: np.ndarray   # cousin group id (child) per column; ME j maps to j
    X: np.ndarray | None = None
    col_mean: np.ndarray | None = None
    col_scale: np.ndarray | None = None
    fitting_mask: np.ndarray | None = None

    @property
    def standardized(self):
        return self.X is not None

    @property
    def fitting_columns(self):
        if self.fitting_mask is None:
            raise DesignError("design not standardized yet")
        return np.flatnonzero(self.fitting_mask)

    def column_names(self):
        return [c.name for c in self.columns]

    def cme_position(self, parent, child, level):
        """Position of the CME column (parent|child level) in the design."""
        if parent == child:
            raise DesignError("CME parent and child must differ")
        child_slot = child - 1 if child > parent else child
        return self.p + parent * 2 * (self.p - 1) + 2 * child_slot + (0 if level > 0 else 1)


def _validate_main_effects(values):
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise DesignError("main-effect matrix must be 2-dimensional")
    n, p = values.shape
    if p < 2:
        raise DesignError("need at least two main effects to form CMEs")
    if not np.all(np.isin(values, (-1.0, 1.0))):
        raise DesignError("main-effect entries must be exactly -1 or +1")
    return values, n, p


def relabel_binary(values):
    """Map a {0,1}-coded matrix to {-1,+1}; leave +-1 matrices untouched.

    Returns (values, relabeled_flag).
    """
    values = np.asarray(values, dtype=float)
    if np.all(np.isin(values, (0.0, 1.0))):
        return 2.0 * values - 1.0, True
    return values, False


def build_cme_matrix(me_values, names=None):
    """Build the raw (unstandardized) CME design from a +-1 ME matrix.

    Columns: p MEs in input order, then for each parent j the CMEs
    (j|k+), (j|k-) for children k in increasing index order.
    """
    values, n, p = _validate_main_effects(me_values)
    if names is None:
        names = [f"X{j + 1}" for j in range(p)]
    else:
        names = [str(s) for s in names]
        if len(names) != p:
            raise DesignError("column name count does not match ME count")

    p_prime = p + 2 * p * (p - 1)
    full = np.zeros((n, p_prime))
    full[:, :p] = values

    columns = [ColumnId("me", j, name=names[j]) for j in range(p)]
    col_sib = np.empty(p_prime, dtype=np.intp)
    col_cou = np.empty(p_prime, dtype=np.intp)
    col_sib[:p] = np.arange(p)
    col_cou[:p] = np.arange(p)

    pos = p
    for j in range(p):
        xj = values[:, j]
        for k in range(p):
            if k == j:
                continue
            on_plus = values[:, k] > 0
            full[:, pos] = np.where(on_plus, xj, 0.0)
            full[:, pos + 1] = np.where(on_plus, 0.0, xj)
            base = f"{names[j]}|{names[k]}"
            columns.append(ColumnId("cme", j, k, +1, base + "+"))
            columns.append(ColumnId("cme", j, k, -1, base + "-"))
            col_sib[pos:pos + 2] = j
            col_cou[pos:pos + 2] = k
            pos += 2

    sibling_index = [np.flatnonzero(col_sib == j) for j in range(p)]
    cousin_index = [np.flatnonzero(col_cou == j) for j in range(p)]
    return CmeDesign(
        raw=full, columns=columns, me_names=names, n=n, p=p, p_prime=p_prime,
        sibling_index=sibling_index, cousin_index=cousin_index,
        col_sib=col_sib, col_cou=col_cou,
    )


def standardize(design):
    """Center and scale every column so that (1/n)*||x_j||^2 = 1.

    Zero-variance columns get scale 0 and are excluded from fitting (their
    coefficients stay 0); everything else is recorded for back-transformation.
    Returns a new design; the input is untouched.
    """
    raw = design.raw
    mean = raw.mean(axis=0)
    centered = raw - mean
    scale = np.sqrt(np.mean(centered ** 2, axis=0))
    mask = scale > 0
    X = np.zeros_like(centered)
    X[:, mask] = centered[:, mask] / scale[mask]
    return replace(
        design,
        X=np.asfortranarray(X),
        col_mean=mean,
        col_scale=scale,
        fitting_mask=mask,
    )


def destandardize_coefficients(design, beta_std, intercept_std):
    """Map standardized-scale coefficients back to the raw column scale.

    Predictions are identical on both scales: eta = b0_raw + raw @ beta_raw.
    """
    beta_std = np.asarray(beta_std, dtype=float)
    if beta_std.shape != (design.p_prime,):
        raise DimensionError(
            f"expected beta of length {design.p_prime}, got {beta_std.shape}")
    if not design.standardized:
        raise DesignError("design not standardized yet")
    scale = design.col_scale
    beta_raw = np.zeros_like(beta_std)
    nz = scale > 0
    beta_raw[nz] = beta_std[nz] / scale[nz]
    intercept_raw = float(intercept_std - design.col_mean @ beta_raw)
    return beta_raw, intercept_raw


def apply_standardization(design, raw_rows):
    """Standardize raw design rows with this design's training statistics.

    Columns excluded during training map to zero, so they contribute nothing
    to predictions regardless of the new data.
    """
    if not design.standardized:
        raise DesignError("design not standardized yet")
    raw_rows = np.asarray(raw_rows, dtype=float)
    if raw_rows.shape[1] != design.p_prime:
        raise DimensionError("row width does not match design")
    X = np.zeros_like(raw_rows)
    mask = design.fitting_mask
    X[:, mask] = (raw_rows[:, mask] - design.col_mean[mask]) / design.col_scale[mask]
    return X


def transform_new(design, me_new):
    """Standardized design matrix for new ME rows, using training statistics."""
    values, _, p = _validate_main_effects(me_new)
    if p != design.p:
        raise DimensionError(f"expected {design.p} main effects, got {p}")
    new = build_cme_matrix(values, names=design.me_names)
    return apply_standardization(design, new.raw)


def subset_rows(design, rows):
    """Unstandardized design restricted to the given row indices.

    Column metadata and group indices are shared with the parent; call
    `standardize` on the result to get fold-level statistics.
    """
    raw = design.raw[np.asarray(rows)]
    return replace(design, raw=raw, n=raw.shape[0], X=None,
                   col_mean=None, col_scale=None, fitting_mask=None)
