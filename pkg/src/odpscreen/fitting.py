"""Per-biomarker maximization and profile-likelihood tables.

For each biomarker k the weighted objective is minimized by Newton's
method with step-halving, giving the point estimate beta_hat_k and its
variance s_k (the (beta, beta) entry of the inverse Hessian at the
mode).  The log profile likelihood of beta_k is then tabulated on a
knot grid by one of two routes:

* ``plugin`` -- hold alpha and omega at the joint mode and re-evaluate
  the objective along beta;
* ``normal`` -- replace the likelihood with the normal density
  ``phi(beta_hat; beta, s)``, which only needs the fit itself.

Biomarkers that are constant, fail to converge, or have a singular
Hessian are flagged rather than dropped, so downstream output stays
aligned with the input columns.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .loss import LossError, WeightedObjective
from .propensity import WeightSet

__all__ = [
    "BiomarkerFit",
    "ProfileTable",
    "NewtonResult",
    "newton_minimize",
    "fit_single",
    "fit_biomarkers",
    "profile_plugin",
    "profile_normal",
    "profile_all",
    "fit_all",
    "write_fit_sidecar",
]

GRAD_TOL = 1e-8
MAX_NEWTON_ITER = 100
MAX_HALVINGS = 30


@dataclass(frozen=True)
class BiomarkerFit:
    """Newton solution for one biomarker.

    ``s`` is the variance of beta_hat: the (beta, beta) entry of the
    full inverse Hessian of the negative log synthetic likelihood at
    the mode, so nuisance-parameter curvature is accounted for.  The
    sentinel ``s = +inf`` marks unidentified or failed fits.
    ``status`` is "ok" for converged fits; otherwise one of
    "unidentified", "singular", "no_descent", "max_iterations",
    "derivative_error".
    """

    k: int
    alpha_hat: float
    beta_hat: float
    omega_hat: np.ndarray
    s: float
    converged: bool
    iterations: int
    status: str = "ok"

    def __post_init__(self):
        omega = np.asarray(self.omega_hat, dtype=np.float64)
        omega.setflags(write=False)
        object.__setattr__(self, "omega_hat", omega)
        if self.converged and not (np.isfinite(self.s) and self.s > 0.0):
            raise ValueError("converged fit requires a positive finite variance")

    @property
    def se(self) -> float:
        return float(np.sqrt(self.s))


@dataclass(frozen=True)
class ProfileTable:
    """Log profile likelihood of one biomarker on the knot grid.

    ``log_pl_null`` is log PL_k(0); ``log_pl_knots[l]`` is
    log PL_k(a_l).  Values are logs of an unnormalized likelihood, so
    only differences within a row carry information.
    """

    k: int
    log_pl_null: float
    log_pl_knots: np.ndarray
    method: str

    def __post_init__(self):
        knots = np.asarray(self.log_pl_knots, dtype=np.float64)
        if self.method not in ("plugin", "normal"):
            raise ValueError(f"unknown profile method '{self.method}'")
        if not (np.isfinite(self.log_pl_null) and np.isfinite(knots).all()):
            raise ValueError(f"biomarker {self.k}: non-finite profile table entry")
        knots.setflags(write=False)
        object.__setattr__(self, "log_pl_knots", knots)


@dataclass(frozen=True)
class NewtonResult:
    theta: np.ndarray
    value: float
    gradient: np.ndarray | None
    hessian: np.ndarray | None
    iterations: int
    status: str


def _safe_value(obj: WeightedObjective, theta: np.ndarray) -> float:
    try:
        val = obj.value(theta)
    except (LossError, FloatingPointError):
        return np.inf
    return val if np.isfinite(val) else np.inf


def newton_minimize(obj: WeightedObjective, *, max_iter=MAX_NEWTON_ITER,
                    grad_tol=GRAD_TOL, max_halvings=MAX_HALVINGS) -> NewtonResult:
    """Minimize a weighted objective from theta = 0.

    Full Newton steps with up to ``max_halvings`` halvings per
    iteration; a step is accepted only if it does not increase the
    objective, so accepted iterates are non-increasing in value.
    Convergence is declared when the gradient max-norm drops below
    ``grad_tol * (1 + |value|)``.
    """
    theta = np.zeros(obj.dim)
    try:
        val, grad, hess = obj.value_grad_hess(theta)
    except LossError:
        return NewtonResult(theta, np.inf, None, None, 0, "derivative_error")
    iterations = 0
    status = "max_iterations"
    while True:
        if np.max(np.abs(grad)) < grad_tol * (1.0 + abs(val)):
            status = "ok"
            break
        if iterations >= max_iter:
            break
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            status = "singular"
            break
        if not np.isfinite(step).all():
            status = "singular"
            break
        scale = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            cand = theta + scale * step
            if _safe_value(obj, cand) <= val:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            status = "no_descent"
            break
        theta = cand
        iterations += 1
        try:
            val, grad, hess = obj.value_grad_hess(theta)
        except LossError:
            status = "derivative_error"
            break
    return NewtonResult(theta, val, grad, hess, iterations, status)


def _objective_for(dataset: Dataset, weights: WeightSet, kind: str, k: int):
    n = dataset.n_subjects
    if dataset.n_confounders:
        design = np.column_stack([np.ones(n), dataset.x[:, k], dataset.z])
    else:
        design = np.column_stack([np.ones(n), dataset.x[:, k]])
    return WeightedObjective(kind, dataset.outcome, dataset.treatment,
                             weights.weights, design)


def fit_single(dataset: Dataset, weights: WeightSet, kind: str, k: int) -> BiomarkerFit:
    """Fit biomarker k, or flag it when the problem is degenerate.

    Constant biomarker columns are unidentified before any iteration
    (the intercept absorbs them): beta_hat = 0 and s = +inf.  A fit
    that converges but has a singular or non-positive-curvature Hessian
    is flagged "singular" and likewise carries the sentinel variance.
    """
    x_k = dataset.x[:, k]
    q = dataset.n_confounders
    if np.ptp(x_k) == 0.0:
        return BiomarkerFit(k, 0.0, 0.0, np.zeros(q), np.inf, False, 0, "unidentified")
    obj = _objective_for(dataset, weights, kind, k)
    res = newton_minimize(obj)
    status = res.status
    s = np.inf
    if status == "ok":
        try:
            s_val = float(np.linalg.inv(res.hessian)[1, 1])
        except np.linalg.LinAlgError:
            s_val = np.nan
        if np.isfinite(s_val) and s_val > 0.0:
            s = s_val
        else:
            status = "singular"
    theta = res.theta
    return BiomarkerFit(k, float(theta[0]), float(theta[1]), theta[2:].copy(),
                        s, status == "ok", res.iterations, status)


def profile_plugin(fit: BiomarkerFit, dataset: Dataset, weights: WeightSet,
                   kind: str, knots: np.ndarray) -> ProfileTable:
    """Tabulate log PL_k with nuisance parameters fixed at the mode.

    One vectorized objective evaluation covers beta = 0 and all knots.
    """
    if not fit.converged:
        raise ValueError(f"biomarker {fit.k}: cannot profile a non-converged fit")
    obj = _objective_for(dataset, weights, kind, fit.k)
    betas = np.concatenate(([0.0], np.asarray(knots, dtype=np.float64)))
    log_pl = -obj.value_beta_slice(fit.alpha_hat, fit.omega_hat, betas)
    return ProfileTable(fit.k, float(log_pl[0]), log_pl[1:].copy(), "plugin")


def profile_normal(fit: BiomarkerFit, knots: np.ndarray) -> ProfileTable:
    """Tabulate the normal approximation log phi(beta_hat; beta, s)."""
    if not fit.converged:
        raise ValueError(f"biomarker {fit.k}: cannot profile a non-converged fit")
    if not (np.isfinite(fit.s) and fit.s > 0.0):
        raise ValueError(f"biomarker {fit.k}: normal profile needs finite variance")
    knots = np.asarray(knots, dtype=np.float64)
    const = -0.5 * np.log(2.0 * np.pi * fit.s)
    null = const - fit.beta_hat ** 2 / (2.0 * fit.s)
    at_knots = const - (fit.beta_hat - knots) ** 2 / (2.0 * fit.s)
    return ProfileTable(fit.k, float(null), at_knots, "normal")


# ---------------------------------------------------------------------------
# parallel driver
# ---------------------------------------------------------------------------

# Task shared with forked workers; index lists cross the pipe, the task
# itself (and the dataset it closes over) is inherited through fork.
_PARALLEL_TASK = None


def _invoke_task(index):
    return _PARALLEL_TASK(index)


def _parallel_map(task, count: int, workers: int) -> list:
    """Order-preserving map over range(count), optionally forked.

    Results are identical for any worker count: tasks are pure
    functions of the index and outputs are reassembled in index order.
    """
    if workers <= 1 or count <= 1:
        return [task(i) for i in range(count)]
    global _PARALLEL_TASK
    _PARALLEL_TASK = task
    try:
        ctx = multiprocessing.get_context("fork")
        chunk = max(1, count // (8 * workers))
        with ctx.Pool(processes=workers) as pool:
            return pool.map(_invoke_task, range(count), chunksize=chunk)
    finally:
        _PARALLEL_TASK = None


def fit_biomarkers(dataset: Dataset, weights: WeightSet, kind: str,
                   workers: int = 1) -> list[BiomarkerFit]:
    """First pass: fit every biomarker column, preserving order."""
    return _parallel_map(lambda k: fit_single(dataset, weights, kind, k),
                         dataset.n_biomarkers, workers)


def profile_all(dataset: Dataset, weights: WeightSet, kind: str,
                fits: list[BiomarkerFit], knots: np.ndarray, method: str,
                workers: int = 1) -> list[ProfileTable | None]:
    """Second pass: profile tables for converged fits, None for flagged."""
    knots = np.asarray(knots, dtype=np.float64)
    if method == "normal":
        return [profile_normal(f, knots) if f.converged else None for f in fits]
    if method != "plugin":
        raise ValueError(f"unknown profile method '{method}'")

    def task(k):
        f = fits[k]
        if not f.converged:
            return None
        return profile_plugin(f, dataset, weights, kind, knots)

    return _parallel_map(task, len(fits), workers)


def fit_all(dataset: Dataset, weights: WeightSet, kind: str, method: str,
            knots: np.ndarray, workers: int = 1):
    """Fit then profile every biomarker on an already-selected knot grid.

    Returns (tables, fits); tables hold None where the fit is flagged.
    """
    fits = fit_biomarkers(dataset, weights, kind, workers)
    tables = profile_all(dataset, weights, kind, fits, knots, method, workers)
    return tables, fits


def write_fit_sidecar(fits: list[BiomarkerFit], path: str) -> None:
    """Per-biomarker fit diagnostics as TSV: k, converged, iterations, beta_hat, se."""
    with open(path, "w") as fh:
        fh.write("k\tconverged\titerations\tbeta_hat\tse\n")
        for f in fits:
            fh.write(f"{f.k}\t{int(f.converged)}\t{f.iterations}"
                     f"\t{f.beta_hat:.12g}\t{f.se:.12g}\n")
