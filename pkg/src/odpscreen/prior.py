"""Knot grid and EM estimation of the two-groups mixture prior.

The effect-size distribution is modeled as a point mass at zero with
prior probability pi plus masses p_1..p_L on a fixed grid of knots
spanning the range of the per-biomarker point estimates.  The
hyperparameters maximize the synthetic marginal likelihood

    sum_k log[ pi PL_k(0) + (1 - pi) sum_l p_l PL_k(a_l) ]

via EM over latent null indicators and knot assignments.  All
arithmetic stays in the log domain with per-row max subtraction; full
scale profile tables differ by hundreds of log units and direct
exponentiation underflows.

Two M-step variants are provided.  The default ("weighted") update
p_l proportional to sum_k (1 - xi_k) eta_kl maximizes the EM minorant
and guarantees monotone ascent of the marginal log-likelihood.  The
"appendix" variant p_l = mean_k eta_kl drops the (1 - xi_k) weight;
it is kept selectable for comparison but carries no ascent guarantee.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .fitting import ProfileTable

__all__ = [
    "KnotGrid",
    "MixturePrior",
    "EMTrace",
    "select_knots",
    "default_prior",
    "marginal_loglik",
    "em_fit",
    "write_em_trace",
    "write_prior",
]

PI_FLOOR = 1e-12


@dataclass(frozen=True)
class KnotGrid:
    """Equally spaced support points a_1 < ... < a_L with recorded range."""

    a: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim != 1 or a.shape[0] < 1:
            raise ValueError("knot grid needs at least 1 point")
        if not np.isfinite(a).all():
            raise ValueError("knot grid entries must be finite")
        if not (np.diff(a) > 0).all():
            raise ValueError("knot grid must be strictly increasing")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def L(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class MixturePrior:
    """Null mass pi plus simplex weights p over the knot grid."""

    pi: float
    p: np.ndarray
    grid: KnotGrid

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (self.grid.L,):
            raise ValueError("prior mass vector length differs from grid")
        if (p < 0).any() or abs(float(p.sum()) - 1.0) > 1e-10:
            raise ValueError("prior masses must be a simplex vector")
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError("null mass must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class EMTrace:
    """Iteration history and final responsibilities of one EM run.

    ``loglik[0]`` and ``pi_path[0]`` describe the initializer; entry t
    describes the parameters after t updates.  ``xi`` and ``eta`` are
    the E-step responsibilities at the returned prior.
    """

    loglik: np.ndarray
    pi_path: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    iterations: int
    converged: bool


def select_knots(beta_hats: np.ndarray, L: int = 100) -> KnotGrid:
    """Equally spaced grid over the range of the point estimates.

    Non-finite entries (sentinels of flagged fits) are ignored; the
    caller is expected to pass estimates of converged fits only.
    """
    if L < 2:
        raise ValueError("knot count must be at least 2")
    beta = np.asarray(beta_hats, dtype=np.float64)
    beta = beta[np.isfinite(beta)]
    if beta.size < 2:
        raise ValueError("need at least two finite point estimates for knots")
    lo, hi = float(beta.min()), float(beta.max())
    if lo == hi:
        raise ValueError("degenerate knot range")
    a = lo + np.arange(L) * (hi - lo) / (L - 1)
    return KnotGrid(a, lo, hi)


def default_prior(grid: KnotGrid) -> MixturePrior:
    """Half null mass, uniform non-null mass: the standard EM start."""
    return MixturePrior(0.5, np.full(grid.L, 1.0 / grid.L), grid)


def _stack_tables(tables) -> tuple[np.ndarray, np.ndarray]:
    if len(tables) == 0:
        raise ValueError("no profile tables")
    if any(t is None for t in tables):
        raise ValueError("flagged biomarkers have no tables; filter before EM")
    L = tables[0].log_pl_knots.shape[0]
    log_null = np.array([t.log_pl_null for t in tables])
    log_knots = np.empty((len(tables), L))
    for i, t in enumerate(tables):
        if t.log_pl_knots.shape[0] != L:
            raise ValueError("profile tables disagree on knot count")
        log_knots[i] = t.log_pl_knots
    return log_null, log_knots


def _estep(log_null, log_knots, pi, p):
    """Responsibilities and per-biomarker log marginals at (pi, p).

    Row max subtraction happens on log(p_l) + log PL_k(a_l) jointly, so
    the scaled row always contains an exact 1 and the mixture sum can
    never underflow to zero.
    """
    with np.errstate(divide="ignore"):
        log_p = np.log(p)
        log_pi = np.log(pi)
        log_1mpi = np.log1p(-pi)
    log_pk = log_knots + log_p
    r = log_pk.max(axis=1)
    scaled = np.exp(log_pk - r[:, None])
    mix = scaled.sum(axis=1)
    log_mix = np.log(mix) + r
    log_num_null = log_pi + log_null
    log_num_alt = log_1mpi + log_mix
    xi = expit(log_num_null - log_num_alt)
    eta = scaled / mix[:, None]
    ll = math.fsum(np.logaddexp(log_num_null, log_num_alt))
    return xi, eta, log_mix, ll


def marginal_loglik(tables, prior: MixturePrior) -> float:
    """Synthetic marginal log-likelihood of a prior given the tables."""
    log_null, log_knots = _stack_tables(tables)
    return _estep(log_null, log_knots, prior.pi, prior.p)[3]


def _mstep(xi, eta, p_old, variant):
    pi_new = float(xi.mean())
    if variant == "weighted":
        mass = (1.0 - xi) @ eta
        total = float(mass.sum())
        p_new = mass / total if total > 0.0 else p_old.copy()
    else:
        p_new = eta.mean(axis=0)
        p_new = p_new / p_new.sum()
    return pi_new, p_new


def em_fit(tables, grid: KnotGrid, init: MixturePrior | None = None, *,
           tol: float = 1e-8, max_iter: int = 5000,
           mstep: str = "weighted") -> tuple[MixturePrior, EMTrace]:
    """Maximize the synthetic marginal likelihood over (pi, p).

    Stops when the absolute change of the marginal log-likelihood drops
    below ``tol * max(1, |loglik|)`` or after ``max_iter`` updates.
    During iteration pi is kept off the boundary (floor 1e-12) so
    round-off cannot absorb the null mass permanently, but the reported
    pi is the raw final M-step value.  A boundary initializer (pi of
    exactly 0 or 1) is an EM fixed point; it is preserved and a warning
    is issued.
    """
    if mstep not in ("weighted", "appendix"):
        raise ValueError(f"unknown M-step variant '{mstep}'")
    log_null, log_knots = _stack_tables(tables)
    if log_knots.shape[1] != grid.L:
        raise ValueError("profile tables disagree with grid knot count")
    if init is None:
        init = default_prior(grid)
    boundary_init = init.pi in (0.0, 1.0)
    if boundary_init:
        warnings.warn("EM initialized at a boundary null mass; "
                      "pi will not move", stacklevel=2)

    pi_raw = float(init.pi)
    p = np.asarray(init.p, dtype=np.float64).copy()

    def off_boundary(value):
        return value if boundary_init else float(np.clip(value, PI_FLOOR, 1.0 - PI_FLOOR))

    pi_iter = off_boundary(pi_raw)
    loglik_path = []
    pi_path = [pi_raw]
    converged = False
    iterations = 0
    ll_prev = None
    while True:
        xi, eta, _, ll = _estep(log_null, log_knots, pi_iter, p)
        loglik_path.append(ll)
        if not (np.isfinite(xi).all() and np.isfinite(eta).all()):
            raise ValueError("non-finite EM responsibilities")
        if ll_prev is not None and abs(ll - ll_prev) <= tol * max(1.0, abs(ll)):
            converged = True
            break
        if iterations >= max_iter:
            break
        ll_prev = ll
        pi_raw, p = _mstep(xi, eta, p, mstep)
        pi_iter = off_boundary(pi_raw)
        pi_path.append(pi_raw)
        iterations += 1

    prior = MixturePrior(pi_raw, p, grid)
    if pi_iter != pi_raw:
        # responsibilities above were formed at the floored pi; redo them
        # at the reported (unfloored) value
        xi, eta, _, _ = _estep(log_null, log_knots, pi_raw, p)
    trace = EMTrace(np.array(loglik_path), np.array(pi_path), xi, eta,
                    iterations, converged)
    return prior, trace


def write_em_trace(trace: EMTrace, path: str) -> None:
    """Iteration history as TSV: iter, loglik, pi."""
    with open(path, "w") as fh:
        fh.write("iter\tloglik\tpi\n")
        for i, (ll, pi) in enumerate(zip(trace.loglik, trace.pi_path)):
            fh.write(f"{i}\t{ll:.12g}\t{pi:.12g}\n")


def write_prior(prior: MixturePrior, path: str) -> None:
    """Knot masses as TSV with the null mass in a comment header."""
    with open(path, "w") as fh:
        fh.write(f"# null_mass = {prior.pi:.12g}\n")
        fh.write("knot\tmass\n")
        for a, mass in zip(prior.grid.a, prior.p):
            fh.write(f"{a:.12g}\t{mass:.12g}\n")
