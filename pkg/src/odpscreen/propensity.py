"""Treatment-assignment probabilities and the weights they induce.

The per-subject weight divides out the assignment mechanism: with
propensity ``pi_i = P(T_i = +1 | x_i, z_i)`` the raw inverse weight is
``1 / d_i`` with ``d_i = T_i pi_i + (1 - T_i)/2`` (so ``d_i = pi_i`` on
the treated arm and ``1 - pi_i`` on the control arm), and the scaling
constant ``A = mean(1/d_i)`` normalizes the weights to sum to n.

Propensities come from one of three sources: a known constant
(randomized trials), a user-supplied column, or a lasso-penalized
logistic regression on all biomarkers and confounders with the penalty
chosen by K-fold cross-validation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "PROBABILITY_CLIP",
    "ConstantPropensity",
    "SuppliedPropensity",
    "LassoPropensity",
    "PropensitySpec",
    "WeightSet",
    "compute_weights",
    "resolve_propensity",
    "estimate_propensity_lasso",
    "lasso_logistic_path",
    "LassoFit",
]

logger = logging.getLogger(__name__)

# estimated probabilities are clipped here before weighting; weights
# themselves never clip
PROBABILITY_CLIP = (0.01, 0.99)

# fitted values inside the solver are kept this far from 0/1 so the
# working response stays bounded under (near-)separation
MU_CLAMP = 1e-5

# once a path fit explains this fraction of the null deviance the data
# are (numerically) separated and smaller penalties are not refit
SATURATION_RATIO = 0.999

# a path fit whose active set reaches this fraction of the sample size
# has exhausted the data; smaller penalties only chase noise
DF_RATIO = 0.8


@dataclass(frozen=True)
class ConstantPropensity:
    """Known constant assignment probability, e.g. 0.5 in a 1:1 trial."""

    value: float

    def __post_init__(self):
        if not 0.0 < self.value < 1.0:
            raise ValueError("constant propensity must lie strictly inside (0,1)")


@dataclass(frozen=True)
class SuppliedPropensity:
    """Per-subject probabilities provided by the caller."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if not ((p > 0.0) & (p < 1.0)).all():
            raise ValueError("supplied propensities must lie strictly inside (0,1)")
        object.__setattr__(self, "probabilities", p)


@dataclass(frozen=True)
class LassoPropensity:
    """Cross-validated lasso-logistic estimation settings."""

    folds: int = 10
    grid_size: int = 100

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("cross-validation needs at least 2 folds")
        if self.grid_size < 2:
            raise ValueError("penalty grid needs at least 2 values")


PropensitySpec = ConstantPropensity | SuppliedPropensity | LassoPropensity


@dataclass(frozen=True)
class WeightSet:
    """Propensities plus the normalized weights they generate.

    ``scale`` is the constant A = mean over subjects of the raw inverse
    weight 1/d_i; dividing by it makes the weights sum to n.
    """

    propensity: np.ndarray
    scale: float
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def compute_weights(treatment: np.ndarray, propensity: np.ndarray) -> WeightSet:
    """Turn propensities into normalized inverse-assignment weights.

    Guarantees sum(w) = n up to rounding and w_i > 0 for every subject.
    Probabilities outside (0,1) are an error here; clip upstream.
    """
    t = np.asarray(treatment, dtype=np.float64)
    pi = np.asarray(propensity, dtype=np.float64)
    if t.shape != pi.shape:
        raise ValueError("treatment and propensity lengths differ")
    if not ((pi > 0.0) & (pi < 1.0)).all():
        raise ValueError("propensities must lie strictly inside (0,1)")
    denom = t * pi + (1.0 - t) / 2.0
    raw = 1.0 / denom
    scale = float(raw.mean())
    return WeightSet(propensity=pi, scale=scale, weights=raw / scale)


# ---------------------------------------------------------------------------
# lasso-logistic propensity estimation
# ---------------------------------------------------------------------------


@dataclass
class LassoFit:
    """Solution of one penalized fit on standardized features."""

    intercept: float
    coef: np.ndarray
    penalty: float
    n_active: int = field(init=False)

    def __post_init__(self):
        self.n_active = int(np.count_nonzero(self.coef))


def _standardize(features: np.ndarray):
    center = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale == 0.0] = 1.0  # constant columns stay all-zero after centering
    return (features - center) / scale, center, scale


def _penalized_nll(eta, y, penalty, coef):
    """Mean binomial negative log-likelihood plus the L1 penalty."""
    nll = float(np.mean(np.logaddexp(0.0, eta) - y * eta))
    return nll + penalty * float(np.abs(coef).sum())


def _irls_coordinate_descent(xs, y, penalty, coef, intercept, *, tol=1e-10,
                             max_outer=500, max_sweeps=50):
    """Penalized logistic fit by damped IRLS with inner coordinate descent.

    Minimizes mean binomial deviance/2 plus ``penalty * ||coef||_1``
    over standardized features with an unpenalized intercept.  Uses an
    active-set strategy: coordinates enter only when their score
    violates the subgradient bound, so full passes over the feature
    matrix happen a handful of times per penalty value.  The quadratic
    subproblems are solved inexactly (at most ``max_sweeps`` passes);
    each step is backtracked until the exact penalized objective does
    not increase, which keeps the iteration a descent method even when
    fitted values saturate.  Termination is a subgradient optimality
    check on the exact score; an iterate whose objective has stalled
    without passing that check raises.
    """
    n, p = xs.shape
    active = np.flatnonzero(coef)
    eta = intercept + xs @ coef
    obj = _penalized_nll(eta, y, penalty, coef)
    stalls = 0
    for outer in range(max_outer):
        mu = np.clip(expit(eta), MU_CLAMP, 1.0 - MU_CLAMP)
        wq = np.maximum(mu * (1.0 - mu), 1e-6)
        resid = y - mu  # working residual numerator
        # KKT screen on the current smooth gradient
        score = xs.T @ resid / n
        violations = np.flatnonzero((np.abs(score) > penalty + 1e-12) & (coef == 0.0))
        active = np.union1d(active, violations)
        # quadratic approximation around eta: working response z
        z = eta + resid / wq
        int0, coef0 = intercept, coef.copy()
        r = z - eta
        col_norm = (wq[:, None] * xs[:, active] ** 2).sum(axis=0) / n if active.size else None
        for sweep in range(max_sweeps):
            delta = 0.0
            num = wq @ r / n
            den = wq.mean()
            new_int = intercept + num / den
            r = r - (new_int - intercept)
            delta = max(delta, abs(new_int - intercept))
            intercept = new_int
            scale = abs(intercept)
            for idx, j in enumerate(active):
                cj = coef[j]
                rho = (wq * xs[:, j]) @ r / n + col_norm[idx] * cj
                new = np.sign(rho) * max(abs(rho) - penalty, 0.0) / col_norm[idx]
                if new != cj:
                    r = r - xs[:, j] * (new - cj)
                    coef[j] = new
                    delta = max(delta, abs(new - cj))
                scale = max(scale, abs(coef[j]))
            if delta < tol * (1.0 + scale):
                break
        # eta of the inner solution, without a matvec: r tracks z - eta
        eta_inner = z - r
        cand_eta, cand_int, cand_coef = eta_inner, intercept, coef
        cand_obj = _penalized_nll(cand_eta, y, penalty, cand_coef)
        frac = 1.0
        while cand_obj > obj + 1e-12 * (1.0 + abs(obj)) and frac > 2.0 ** -30:
            frac *= 0.5
            cand_eta = eta + frac * (eta_inner - eta)
            cand_int = int0 + frac * (intercept - int0)
            cand_coef = coef0 + frac * (coef - coef0)
            cand_obj = _penalized_nll(cand_eta, y, penalty, cand_coef)
        intercept, coef = cand_int, cand_coef
        step = np.max(np.abs(cand_eta - eta))
        stalled = obj - cand_obj <= 1e-12 * (1.0 + abs(obj))
        stalls = stalls + 1 if stalled else 0
        eta, obj = cand_eta, cand_obj
        if stalled or step < tol * (1.0 + np.max(np.abs(eta))):
            # subgradient optimality on the exact score decides
            mu = np.clip(expit(eta), MU_CLAMP, 1.0 - MU_CLAMP)
            score = xs.T @ (y - mu) / n
            bad = np.flatnonzero((np.abs(score) > penalty * (1 + 1e-8) + 1e-7) & (coef == 0.0))
            if bad.size == 0:
                return intercept, coef
            if stalls >= 2:
                # objective progress has hit the double-precision floor
                # twice in a row yet optimality is still violated
                raise RuntimeError(
                    f"coordinate descent failed to converge at penalty {penalty:.6g}"
                )
            active = np.union1d(active, bad)
    raise RuntimeError(f"coordinate descent failed to converge at penalty {penalty:.6g}")


def lasso_logistic_path(features, y01, penalties, *, tol=1e-10):
    """Fit the penalized path from the largest penalty down, warm-started.

    Features are standardized internally; returned fits are on the
    standardized scale and should be consumed through
    :func:`_predict_prob`.  The descent stops early once a fit is
    saturated, either explaining more than ``SATURATION_RATIO`` of the
    null deviance (numerical separation) or activating more than
    ``DF_RATIO`` of one coefficient per subject; the remaining
    (smaller) penalties reuse that fit's coefficients instead of
    chasing a diverging solution, and one fit per penalty is still
    returned.
    """
    xs, _, _ = _standardize(np.asarray(features, dtype=np.float64))
    y = np.asarray(y01, dtype=np.float64)
    coef = np.zeros(xs.shape[1])
    base = float(y.mean())
    intercept = float(np.log(base / (1.0 - base))) if 0.0 < base < 1.0 else 0.0
    null_dev = _binomial_deviance(np.full(y.shape, base), y)
    fits = []
    penalties = np.asarray(penalties, dtype=np.float64)
    for i, lam in enumerate(penalties):
        intercept, coef = _irls_coordinate_descent(
            xs, y, lam, coef.copy(), intercept, tol=tol
        )
        fits.append(LassoFit(intercept=intercept, coef=coef.copy(), penalty=float(lam)))
        dev = _binomial_deviance(expit(intercept + xs @ coef), y)
        saturated = dev <= (1.0 - SATURATION_RATIO) * null_dev
        if saturated or (coef != 0.0).sum() >= DF_RATIO * len(y):
            logger.info("lasso path saturated at penalty %.6g; freezing "
                        "%d smaller penalties", lam, len(penalties) - i - 1)
            fits.extend(LassoFit(intercept=intercept, coef=coef.copy(),
                                 penalty=float(l)) for l in penalties[i + 1:])
            break
    return fits


def _predict_prob(fit: LassoFit, features, center, scale):
    xs = (features - center) / scale
    return expit(fit.intercept + xs @ fit.coef)


def penalty_grid(features, y01, grid_size=100):
    """Log-spaced grid from the all-zero penalty down to 0.001 of it.

    The top of the grid is the smallest penalty at which every
    coefficient is zero, computed from the score of the intercept-only
    model on standardized features.
    """
    xs, _, _ = _standardize(np.asarray(features, dtype=np.float64))
    y = np.asarray(y01, dtype=np.float64)
    lam_max = float(np.max(np.abs(xs.T @ (y - y.mean()))) / len(y))
    if lam_max <= 0.0:
        raise ValueError("degenerate design: null-model score is zero everywhere")
    return np.geomspace(lam_max, 1e-3 * lam_max, grid_size)


def _binomial_deviance(prob, y):
    eps = 1e-12
    p = np.clip(prob, eps, 1.0 - eps)
    return float(-2.0 * np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def estimate_propensity_lasso(dataset, spec: LassoPropensity, seed=0):
    """Estimate P(T=+1 | x, z) by cross-validated lasso-logistic regression.

    The design is an unpenalized intercept plus all biomarker columns
    and confounders, standardized inside the solver.  The penalty
    minimizing out-of-fold binomial deviance is chosen, ties broken
    toward the larger penalty (sparser model); the full-data fit at
    that penalty yields probabilities, clipped to [0.01, 0.99].

    Returns the clipped probability vector, aligned with the input rows.
    """
    n = dataset.n_subjects
    if n < 2 * spec.folds:
        raise ValueError(f"need n >= {2 * spec.folds} subjects for {spec.folds}-fold CV")
    features = np.hstack([dataset.x, dataset.z]) if dataset.n_confounders else dataset.x
    y = (dataset.treatment + 1.0) / 2.0
    grid = penalty_grid(features, y, spec.grid_size)

    rng = np.random.default_rng(seed)
    fold_of = np.repeat(np.arange(spec.folds), int(np.ceil(n / spec.folds)))[:n]
    rng.shuffle(fold_of)

    deviance = np.zeros(len(grid))
    for fold in range(spec.folds):
        holdout = fold_of == fold
        ftr, ytr = features[~holdout], y[~holdout]
        _, center, scale = _standardize(ftr)
        fits = lasso_logistic_path(ftr, ytr, grid)
        for g, fit in enumerate(fits):
            prob = _predict_prob(fit, features[holdout], center, scale)
            deviance[g] += _binomial_deviance(prob, y[holdout])
    # ties toward the larger penalty: the grid is descending, argmin takes
    # the first (largest) penalty among equals
    best = int(np.argmin(deviance))
    fits = lasso_logistic_path(features, y, grid[: best + 1])
    chosen = fits[best]
    if chosen.n_active == 0:
        logger.info(
            "cross-validation selected the intercept-only model (penalty %.6g)",
            chosen.penalty,
        )
    logger.info(
        "lasso propensity: penalty %.6g, %d active coefficients",
        chosen.penalty, chosen.n_active,
    )
    _, center, scale = _standardize(features)
    prob = _predict_prob(chosen, features, center, scale)
    return np.clip(prob, *PROBABILITY_CLIP)


def resolve_propensity(dataset, spec: PropensitySpec, seed=0) -> np.ndarray:
    """Produce the per-subject propensity vector for any spec variant."""
    n = dataset.n_subjects
    if isinstance(spec, ConstantPropensity):
        return np.full(n, spec.value)
    if isinstance(spec, SuppliedPropensity):
        if spec.probabilities.shape != (n,):
            raise ValueError("supplied propensity length does not match data")
        return spec.probabilities
    if isinstance(spec, LassoPropensity):
        return estimate_propensity_lasso(dataset, spec, seed=seed)
    raise TypeError(f"unknown propensity spec {spec!r}")
