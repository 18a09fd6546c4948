"""Response families for the penalized GLM solver.

Each family supplies the pieces the reweighted least-squares loop needs:
mean, working weights, working residuals, the (1/n-scaled) negative
log-likelihood used as the descent monitor, and the held-out loss used in
cross-validation.  Only the Gaussian (identity link) and Binomial (logit
link) families are provided.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import DegenerateError


class Gaussian:
    """Identity-link Gaussian family: unit working weights, y is its own
    working response."""

    name = "gaussian"

    def mean(self, eta):
        return np.asarray(eta, dtype=float)

    def variance(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))

    def working_weight(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))

    def curvature_bound(self):
        """Upper bound on the loss curvature in eta (exact for Gaussian)."""
        return 1.0

    def working_residual(self, y, eta):
        return y - eta

    def deviance(self, y, mu):
        return float(np.sum((y - mu) ** 2))

    def score_residual(self, y, eta):
        return y - eta

    def nll(self, y, eta):
        """Average negative log-likelihood: (1/2n)||y - eta||^2."""
        r = y - eta
        return 0.5 * float(r @ r) / len(y)

    def null_intercept(self, y):
        return float(np.mean(y))

    def null_score(self, y):
        """Score vector u of the intercept-only model, used by the start rule."""
        return y - np.mean(y)

    def cv_loss(self, y, eta):
        """Mean squared error."""
        r = y - eta
        return float(r @ r) / len(y)

    def validate_response(self, y):
        if not np.all(np.isfinite(y)):
            raise ValueError("response contains non-finite values")

    def labels(self, mu):
        return None


class Binomial:
    """Logit-link Bernoulli family."""

    name = "binomial"

    def mean(self, eta):
        return expit(eta)

    def variance(self, eta):
        p = expit(eta)
        return p * (1.0 - p)

    def working_weight(self, eta):
        p = expit(eta)
        return p * (1.0 - p)

    def curvature_bound(self):
        """sup of pi*(1-pi): the working quadratic at this weight majorizes
        the exact negative log-likelihood."""
        return 0.25

    def working_residual(self, y, eta, weight=None):
        p = expit(eta)
        w = self.working_weight(eta) if weight is None else weight
        return (y - p) / w

    def deviance(self, y, mu):
        # Clip keeps 0*log(0) terms finite; exact at interior mu.
        mu = np.clip(mu, 1e-12, 1.0 - 1e-12)
        return float(-2.0 * np.sum(y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu)))

    def score_residual(self, y, eta):
        return y - expit(eta)

    def nll(self, y, eta):
        """Average negative log-likelihood: -(1/n) sum[y*eta - log(1+exp(eta))]."""
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta))

    def null_intercept(self, y):
        ybar = float(np.mean(y))
        if ybar <= 0.0 or ybar >= 1.0:
            raise DegenerateError("single-class binary response")
        return float(np.log(ybar / (1.0 - ybar)))

    def null_score(self, y):
        # (y - mu)/Var * dmu/deta reduces to y - mu under the logit link.
        return y - np.mean(y)

    def cv_loss(self, y, eta):
        """Mean deviance: -2 * mean[y*eta - log(1+exp(eta))]."""
        return 2.0 * self.nll(y, eta)

    def validate_response(self, y):
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("binomial response must be coded 0/1")

    def labels(self, mu):
        return (np.asarray(mu) >= 0.5).astype(int)


GAUSSIAN = Gaussian()
BINOMIAL = Binomial()

_FAMILIES = {"gaussian": GAUSSIAN, "binomial": BINOMIAL}


def get_family(name):
    """Look up a family instance by name ('gaussian' or 'binomial')."""
    if hasattr(name, "name") and not isinstance(name, str):
        return name
    try:
        return _FAMILIES[str(name).lower()]
    except KeyError:
        raise ValueError(f"unknown family {name!r}; choose from {sorted(_FAMILIES)}")
