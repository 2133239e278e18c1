"""Weighted loss kernels with analytic derivatives.

Three objectives over a per-biomarker linear predictor
``eta_i = T_i * (alpha + beta * x_ik + z_i' omega)``:

* ``squared``   -- weighted least squares, ``M(y, v) = (y - v)^2``;
* ``binomial``  -- weighted logistic negative log-likelihood,
  ``M(y, v) = log(1 + e^v) - y v``;
* ``cox``       -- inverse-probability-weighted Cox partial negative
  log-likelihood with Breslow handling of tied event times.  Each
  subject carries its weight both in its event term and in every risk
  set containing it.

For the separable kernels the objective is ``sum_i w_i M(y_i, eta_i)``.
The Cox objective is not subject-separable; it is the weighted partial
likelihood over the same predictor.  All three expose exact gradients
and Hessians in ``theta = (alpha, beta, omega_1..omega_q)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import BinaryOutcome, Dataset, SurvivalOutcome
from .propensity import WeightSet

__all__ = [
    "LOSS_KINDS",
    "LossError",
    "LinearPredictorSpec",
    "default_loss",
    "check_loss_compat",
    "WeightedObjective",
    "weighted_objective",
]

LOSS_KINDS = ("squared", "binomial", "cox")


class LossError(ValueError):
    """Raised for incompatible loss/outcome pairs or non-finite derivatives."""


@dataclass(frozen=True)
class LinearPredictorSpec:
    """Biomarker index plus the (q+2)-vector theta = (alpha, beta, omega)."""

    k: int
    theta: np.ndarray


def default_loss(outcome_kind: str) -> str:
    return {"binary": "binomial", "survival": "cox"}[outcome_kind]


def check_loss_compat(kind: str, outcome_kind: str) -> None:
    if kind not in LOSS_KINDS:
        raise LossError(f"unknown loss kind '{kind}'")
    if kind == "binomial" and outcome_kind != "binary":
        raise LossError("binomial loss requires binary outcomes")
    if kind == "cox" and outcome_kind != "survival":
        raise LossError("cox loss requires survival outcomes")
    if kind == "squared" and outcome_kind != "binary":
        raise LossError("squared loss requires real-valued outcomes (binary as 0/1)")


class WeightedObjective:
    """Negative log synthetic likelihood for one design, with derivatives.

    Parameters
    ----------
    kind : str
        One of ``squared``, ``binomial``, ``cox``.
    outcome : BinaryOutcome or SurvivalOutcome
        Outcome block; must be compatible with ``kind``.
    treatment : ndarray (n,)
        Arm indicator in {-1, +1}.  Pass all +1 for a plain (non
        treatment-interacted) regression on the design.
    weights : ndarray (n,)
        Per-subject weights; all ones gives the unweighted objective.
    design : ndarray (n, d)
        Covariate matrix multiplying theta inside the predictor.
    """

    def __init__(self, kind, outcome, treatment, weights, design):
        check_loss_compat(kind, outcome.kind)
        self.kind = kind
        self.t = np.asarray(treatment, dtype=np.float64)
        self.w = np.asarray(weights, dtype=np.float64)
        self.design = np.asarray(design, dtype=np.float64)
        self.n, self.dim = self.design.shape
        if kind == "cox":
            order = np.argsort(outcome.time, kind="stable")
            self._time_s = outcome.time[order]
            self._event_s = outcome.event[order] == 1.0
            self._td_s = (self.t[:, None] * self.design)[order]
            self._w_s = self.w[order]
            # first index of each tie block: risk set of a subject is the
            # suffix starting at its block, so tied events share one risk set
            self._block = np.searchsorted(self._time_s, self._time_s, side="left")
            self._ev_idx = np.flatnonzero(self._event_s)
            self._ev_block = self._block[self._ev_idx]
            self._ev_w = self._w_s[self._ev_idx]
        else:
            self.y = outcome.y
            self._td = self.t[:, None] * self.design

    # -- separable kernels ------------------------------------------------

    def _eta(self, theta):
        return self.t * (self.design @ theta)

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if self.kind == "cox":
            return self._cox_value(theta)
        eta = self._eta(theta)
        if self.kind == "squared":
            m = (self.y - eta) ** 2
        else:
            m = np.logaddexp(0.0, eta) - self.y * eta
        return float(self.w @ m)

    def value_grad_hess(self, theta):
        """Objective value with exact gradient and Hessian at ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        # overflow to inf is caught by the finiteness check below
        with np.errstate(over="ignore"):
            if self.kind == "cox":
                out = self._cox_value_grad_hess(theta)
            else:
                eta = self._eta(theta)
                if self.kind == "squared":
                    val = float(self.w @ (self.y - eta) ** 2)
                    d1 = 2.0 * (eta - self.y)
                    d2 = np.full(self.n, 2.0)
                else:
                    p = expit(eta)
                    val = float(self.w @ (np.logaddexp(0.0, eta) - self.y * eta))
                    d1 = p - self.y
                    d2 = p * (1.0 - p)
                grad = self._td.T @ (self.w * d1)
                hess = (self.design * (self.w * d2)[:, None]).T @ self.design
                out = val, grad, hess
        val, grad, hess = out
        if not (np.isfinite(val) and np.isfinite(grad).all() and np.isfinite(hess).all()):
            raise LossError("non-finite objective or derivative")
        return out

    def value_beta_slice(self, alpha, omega, betas) -> np.ndarray:
        """Objective at (alpha, beta_b, omega) for a whole vector of betas.

        Used to tabulate the profile likelihood on a knot grid in one
        vectorized pass; entry b of the result is the objective at
        ``betas[b]`` with the nuisance parameters held fixed.
        """
        betas = np.asarray(betas, dtype=np.float64)
        if self.kind == "cox":
            base = self._td_s[:, 0] * alpha
            if self.dim > 2:
                base = base + self._td_s[:, 2:] @ omega
            eta = base[:, None] + np.outer(self._td_s[:, 1], betas)
            return self._cox_value_multi(eta)
        base = self.design[:, 0] * alpha
        if self.dim > 2:
            base = base + self.design[:, 2:] @ omega
        eta = self.t[:, None] * (base[:, None] + np.outer(self.design[:, 1], betas))
        if self.kind == "squared":
            m = (self.y[:, None] - eta) ** 2
        else:
            m = np.logaddexp(0.0, eta) - self.y[:, None] * eta
        return self.w @ m

    # -- Cox partial likelihood -------------------------------------------

    def _cox_eta_sorted(self, theta):
        return self._td_s @ theta

    def _cox_value(self, theta) -> float:
        eta = self._cox_eta_sorted(theta)
        c = eta.max() if eta.size else 0.0
        e = self._w_s * np.exp(eta - c)
        s0 = np.cumsum(e[::-1])[::-1]
        log_risk = np.log(s0[self._ev_block])
        return float(-np.sum(self._ev_w * ((eta[self._ev_idx] - c) - log_risk)))

    def _cox_value_multi(self, eta_sorted) -> np.ndarray:
        c = eta_sorted.max(axis=0)
        e = self._w_s[:, None] * np.exp(eta_sorted - c)
        s0 = np.cumsum(e[::-1], axis=0)[::-1]
        log_risk = np.log(s0[self._ev_block])
        terms = (eta_sorted[self._ev_idx] - c) - log_risk
        return -(self._ev_w @ terms)

    def _cox_value_grad_hess(self, theta):
        eta = self._cox_eta_sorted(theta)
        c = eta.max()
        e = self._w_s * np.exp(eta - c)
        td = self._td_s
        s0 = np.cumsum(e[::-1])[::-1]
        s1 = np.cumsum((e[:, None] * td)[::-1], axis=0)[::-1]
        s2 = np.cumsum((e[:, None, None] * td[:, :, None] * td[:, None, :])[::-1], axis=0)[::-1]
        s0_e = s0[self._ev_block]
        mean_e = s1[self._ev_block] / s0_e[:, None]
        val = float(-np.sum(self._ev_w * ((eta[self._ev_idx] - c) - np.log(s0_e))))
        grad = -(self._ev_w[:, None] * (td[self._ev_idx] - mean_e)).sum(axis=0)
        cov = s2[self._ev_block] / s0_e[:, None, None] - mean_e[:, :, None] * mean_e[:, None, :]
        hess = (self._ev_w[:, None, None] * cov).sum(axis=0)
        return val, grad, hess


def weighted_objective(kind: str, dataset: Dataset, weights: WeightSet,
                       spec: LinearPredictorSpec):
    """Value, gradient, Hessian of the weighted objective at spec.theta.

    The design for biomarker ``k`` is (intercept, x_k, z); theta has
    dimension q+2.
    """
    k = spec.k
    design = np.column_stack(
        [np.ones(dataset.n_subjects), dataset.x[:, k], dataset.z]
    )
    obj = WeightedObjective(kind, dataset.outcome, dataset.treatment, weights.weights, design)
    return obj.value_grad_hess(spec.theta)
