"""AIPW pseudo-outcome, whose conditional mean given X is the CATE."""

from __future__ import annotations

import numpy as np

from tevim.errors import NumericError


def aipw_pseudo_outcome(y, a, mu0, mu1, pi) -> np.ndarray:
    """Elementwise ``(y - mu(a,x)) (a - pi) / (pi (1 - pi)) + mu1 - mu0``."""
    y, a, mu0, mu1, pi = (np.asarray(v, dtype=np.float64) for v in (y, a, mu0, mu1, pi))
    mu_a = np.where(a == 1, mu1, mu0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        phi = (y - mu_a) * (a - pi) / (pi * (1.0 - pi)) + mu1 - mu0
    bad = np.flatnonzero(~np.isfinite(phi))
    if bad.size:
        raise NumericError(f"non-finite pseudo-outcome at row {int(bad[0])}")
    return phi


def compute_pseudo_outcomes(y, a, X, fits) -> np.ndarray:
    """Pseudo-outcomes for rows ``(y, a, X)`` under fitted nuisances.

    The propensity model clips its own predictions, so no clipping happens here.
    """
    return aipw_pseudo_outcome(y, a, fits.mu0.predict(X), fits.mu1.predict(X), fits.pi.predict(X))
