"""Composite-penalty primitives and the coordinate threshold operator.

The bi-level penalty applies a concave exponential outer function to a
weighted sum of MC+ inner penalties over each sibling and cousin group.
Linearizing the outer function at the current iterate yields, per group, a
slope `delta` that multiplies the inner penalty of the coordinate being
updated, and the resulting one-dimensional subproblem

    (v/2) b^2 - z b + d1*w*mcp(b; l1, gamma) + d2*w*mcp(b; l2, gamma)

has the closed-form piecewise-linear minimizer implemented in `threshold`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, StabilityError


def mcp(beta, lam, gamma):
    """MC+ inner penalty: integral_0^|b| (1 - x/(lam*gamma))_+ dx.

    Equals |b| - b^2/(2*lam*gamma) on |b| <= lam*gamma and saturates at
    lam*gamma/2 beyond.  Accepts scalars or arrays.  lam = 0 gives 0.
    """
    if not isinstance(beta, np.ndarray):
        return mcp_scalar(float(beta), lam, gamma)
    b = np.abs(beta)
    if lam == 0.0:
        return np.zeros_like(b)
    cap = lam * gamma
    return np.where(b <= cap, b - b * b / (2.0 * cap), 0.5 * cap)


def mcp_scalar(beta, lam, gamma):
    """Scalar MC+ penalty on the hot path (no array machinery)."""
    if lam == 0.0:
        return 0.0
    b = beta if beta >= 0.0 else -beta
    cap = lam * gamma
    if b >= cap:
        return 0.5 * cap
    return b - b * b / (2.0 * cap)


def mcp_derivative(beta, lam, gamma):
    """d/db of the MC+ penalty away from 0: sgn(b)*(1 - |b|/(lam*gamma))_+."""
    b = np.abs(beta)
    if lam == 0.0:
        return np.zeros_like(b) if isinstance(b, np.ndarray) else 0.0
    cap = lam * gamma
    out = np.sign(beta) * np.maximum(0.0, 1.0 - b / cap)
    return out if isinstance(b, np.ndarray) else float(out)


def exp_outer(theta, lam, tau):
    """Concave exponential outer penalty (lam^2/tau) * (1 - exp(-tau*theta/lam)).

    Saturates at lam^2/tau as theta grows; lam = 0 gives 0.
    """
    if lam == 0.0:
        t = np.asarray(theta, dtype=float)
        return np.zeros_like(t) if isinstance(theta, np.ndarray) else 0.0
    out = (lam * lam / tau) * (-np.expm1(-tau * np.asarray(theta, dtype=float) / lam))
    return out if isinstance(theta, np.ndarray) else float(out)


def slope(norm, lam, tau):
    """Outer-penalty derivative at the current group norm: lam*exp(-tau*norm/lam).

    This is the per-group shrinkage intensity; it equals lam at an empty
    group and decays toward 0 as the group fills up.
    """
    if lam == 0.0:
        return 0.0
    return float(lam * np.exp(-tau * norm / lam))


def weighted_group_norm(beta_group, omega_group, lam, gamma):
    """Weighted sum of MC+ penalties over one group: sum_l w_l * mcp(b_l)."""
    beta_group = np.asarray(beta_group, dtype=float)
    omega_group = np.asarray(omega_group, dtype=float)
    if beta_group.shape != omega_group.shape:
        raise DimensionError("group coefficient and weight vectors differ in length")
    return float(omega_group @ mcp(beta_group, lam, gamma))


def threshold(z, v, lambda1, lambda2, delta1, delta2, omega_j, gamma):
    """Closed-form minimizer of the one-dimensional coordinate surrogate.

    Four regions in |z| (lower-closed boundaries), with
    l(1) = max(lambda1, lambda2), l(2) = min(...) and d(1), d(2) the slopes
    matched to their lambda:

      |z| >= v*gamma*l(1)                    ->  z/v
      [v*l(2)*gamma + d(1)*w*(1-l(2)/l(1)),
       v*l(1)*gamma)                         ->  sgn(z)(|z|-d(1)w) / (v - d(1)w/(l(1)g))
      [d(1)w + d(2)w,  previous bound)       ->  sgn(z)(|z|-d(1)w-d(2)w)
                                                   / (v - d(1)w/(l(1)g) - d(2)w/(l(2)g))
      [0, d(1)w + d(2)w)                     ->  0

    A non-positive denominator in the region that applies means the
    coordinate subproblem is not strictly convex for this configuration and
    raises StabilityError.
    """
    if lambda2 > lambda1:
        lambda1, lambda2 = lambda2, lambda1
        delta1, delta2 = delta2, delta1
    az = abs(z)
    t_zero = (delta1 + delta2) * omega_j
    if az < t_zero:
        return 0.0
    if az >= v * gamma * lambda1:
        return z / v
    # lambda1 > 0 here: az >= t_zero >= 0 and az < v*gamma*lambda1 forces it.
    t_mid = v * lambda2 * gamma + delta1 * omega_j * (1.0 - lambda2 / lambda1)
    sgn = 1.0 if z >= 0 else -1.0
    if az >= t_mid:
        denom = v - delta1 * omega_j / (lambda1 * gamma)
        if denom <= 0.0:
            raise StabilityError(
                "non-positive denominator in threshold operator (single-penalty region)")
        return sgn * (az - delta1 * omega_j) / denom
    denom = v - delta1 * omega_j / (lambda1 * gamma) - delta2 * omega_j / (lambda2 * gamma)
    if denom <= 0.0:
        raise StabilityError(
            "non-positive denominator in threshold operator (two-penalty region)")
    return sgn * (az - t_zero) / denom


@dataclass
class PenaltyParams:
    """Penalty configuration: global (lambda_s, lambda_c, gamma, tau) plus
    adaptive group weights (per ME index) and individual weights (per column).

    The effective group-level parameter for sibling group j is
    lambda_s * group_weight_sib[j], and analogously for cousin groups.
    """

    lambda_s: float
    lambda_c: float
    gamma: float
    tau: float
    group_weight_sib: np.ndarray
    group_weight_cou: np.ndarray
    indiv_weight: np.ndarray

    def __post_init__(self):
        self.group_weight_sib = np.asarray(self.group_weight_sib, dtype=float)
        self.group_weight_cou = np.asarray(self.group_weight_cou, dtype=float)
        self.indiv_weight = np.asarray(self.indiv_weight, dtype=float)
        if self.lambda_s < 0 or self.lambda_c < 0:
            raise ValueError("lambda_s and lambda_c must be nonnegative")
        if self.gamma <= 1:
            raise ValueError("gamma must exceed 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        for w in (self.group_weight_sib, self.group_weight_cou, self.indiv_weight):
            if np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise ValueError("all penalty weights must be positive and finite")

    @classmethod
    def unit(cls, p, p_prime, lambda_s, lambda_c, gamma, tau):
        """Parameters with all group and individual weights equal to one."""
        return cls(lambda_s, lambda_c, gamma, tau,
                   np.ones(p), np.ones(p), np.ones(p_prime))

    def with_lambdas(self, lambda_s, lambda_c):
        return PenaltyParams(lambda_s, lambda_c, self.gamma, self.tau,
                             self.group_weight_sib, self.group_weight_cou,
                             self.indiv_weight)

    @property
    def lambda_sib_eff(self):
        """Effective sibling-group penalties lambda_s * Omega_S(j)."""
        return self.lambda_s * self.group_weight_sib

    @property
    def lambda_cou_eff(self):
        """Effective cousin-group penalties lambda_c * Omega_C(j)."""
        return self.lambda_c * self.group_weight_cou

    @property
    def omega_max(self):
        return float(np.max(self.indiv_weight))


@dataclass
class GroupSlopes:
    """Current outer-penalty slopes per sibling and cousin group."""

    delta_sib: np.ndarray
    delta_cou: np.ndarray

    def copy(self):
        return GroupSlopes(self.delta_sib.copy(), self.delta_cou.copy())


def group_norms(design, params, beta):
    """Weighted MC+ group norms for all sibling and cousin groups."""
    beta = np.asarray(beta, dtype=float)
    omega = params.indiv_weight
    lam_s = params.lambda_sib_eff
    lam_c = params.lambda_cou_eff
    norm_sib = np.empty(design.p)
    norm_cou = np.empty(design.p)
    for j in range(design.p):
        idx = design.sibling_index[j]
        norm_sib[j] = weighted_group_norm(beta[idx], omega[idx], lam_s[j], params.gamma)
        idx = design.cousin_index[j]
        norm_cou[j] = weighted_group_norm(beta[idx], omega[idx], lam_c[j], params.gamma)
    return norm_sib, norm_cou


def norms_and_slopes(design, params, beta):
    """Group norms and their slopes, recomputed from scratch."""
    norm_sib, norm_cou = group_norms(design, params, beta)
    lam_s = params.lambda_sib_eff
    lam_c = params.lambda_cou_eff
    delta_sib = np.array([slope(norm_sib[j], lam_s[j], params.tau)
                          for j in range(design.p)])
    delta_cou = np.array([slope(norm_cou[j], lam_c[j], params.tau)
                          for j in range(design.p)])
    return norm_sib, norm_cou, GroupSlopes(delta_sib, delta_cou)


def compute_slopes(design, params, beta):
    """Group slopes recomputed from scratch at the given coefficients."""
    return norms_and_slopes(design, params, beta)[2]


def penalty_from_norms(norm_sib, norm_cou, params):
    """Total bi-level penalty evaluated at known group norms."""
    tau = params.tau
    total = 0.0
    for norms, lams in ((norm_sib, params.lambda_sib_eff),
                        (norm_cou, params.lambda_cou_eff)):
        pos = lams > 0.0
        if np.any(pos):
            lam = lams[pos]
            total += float(np.sum((lam * lam / tau)
                                  * (-np.expm1(-tau * norms[pos] / lam))))
    return total


def penalty_value(design, params, beta):
    """Total bi-level penalty: sum over groups of the outer penalty applied
    to the weighted MC+ group norm."""
    norm_sib, norm_cou = group_norms(design, params, beta)
    return penalty_from_norms(norm_sib, norm_cou, params)


def selection_threshold(design, beta, params, column):
    """Minimum |z| at which the given column would enter the model.

    Computed from scratch as the sum of the sibling-group and cousin-group
    slopes at the current coefficients.  With all-zero coefficients and unit
    weights this reduces to lambda_s + lambda_c.
    """
    if not 0 <= column < design.p_prime:
        raise IndexError(f"column {column} out of range for p'={design.p_prime}")
    beta = np.asarray(beta, dtype=float)
    omega = params.indiv_weight
    j = int(design.col_sib[column])
    k = int(design.col_cou[column])
    lam_s = float(params.lambda_sib_eff[j])
    lam_c = float(params.lambda_cou_eff[k])
    idx = design.sibling_index[j]
    norm_s = weighted_group_norm(beta[idx], omega[idx], lam_s, params.gamma)
    idx = design.cousin_index[k]
    norm_c = weighted_group_norm(beta[idx], omega[idx], lam_c, params.gamma)
    return slope(norm_s, lam_s, params.tau) + slope(norm_c, lam_c, params.tau)
