"""End-to-end screening orchestration shared by the CLI and tests.

``run_screen`` chains the stages: propensity, weights, per-biomarker
fits, knot selection, profile tables, EM prior, posterior statistics,
competitors, and FDR selection sets.  ``run_qvalue`` is the reduced
path that computes only the conventional Wald statistics and their
q-values, leaving the model-based columns empty.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Diagnostic, validate_dataset
from .fitting import BiomarkerFit, fit_biomarkers, profile_all
from .loss import check_loss_compat, default_loss
from .prior import EMTrace, KnotGrid, MixturePrior, em_fit, select_knots
from .propensity import (ConstantPropensity, PropensitySpec, compute_weights,
                         resolve_propensity)
from .screening import (ScreeningResult, SelectionSet, competitor_stats,
                        qvalues, screen_tables, select_at_fdr)

__all__ = ["ScreenOptions", "ScreenRun", "run_screen", "run_qvalue"]

logger = logging.getLogger(__name__)

DEFAULT_FDR_LEVELS = (0.05, 0.10, 0.15, 0.20)


@dataclass(frozen=True)
class ScreenOptions:
    """Everything the screening pipeline needs besides the data."""

    loss: str | None = None
    method: str = "plugin"
    propensity: PropensitySpec = field(default_factory=lambda: ConstantPropensity(0.5))
    knots: int = 100
    fdr_levels: tuple[float, ...] = DEFAULT_FDR_LEVELS
    em_tol: float = 1e-8
    em_max_iter: int = 5000
    mstep: str = "weighted"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.method not in ("plugin", "normal"):
            raise ValueError("method must be plugin or normal")
        if not self.fdr_levels:
            raise ValueError("at least one FDR level required")
        if any(not 0.0 < lv < 1.0 for lv in self.fdr_levels):
            raise ValueError("FDR levels must lie in (0, 1)")


@dataclass(frozen=True)
class ScreenRun:
    """Everything a screening run produced, for reports and inspection."""

    result: ScreeningResult
    fits: list[BiomarkerFit]
    grid: KnotGrid | None
    prior: MixturePrior | None
    trace: EMTrace | None
    propensity: np.ndarray
    diagnostics: list[Diagnostic]
    kind: str


def _resolve_kind(dataset: Dataset, loss: str | None) -> str:
    kind = loss or default_loss(dataset.outcome.kind)
    check_loss_compat(kind, dataset.outcome.kind)
    return kind


def run_screen(dataset: Dataset, options: ScreenOptions = ScreenOptions()) -> ScreenRun:
    """Full model-based screen of every biomarker column.

    Biomarkers whose fit is flagged are reported with sentinel values
    (ods 1, post_null equal to the estimated null mass) and are never
    members of a selection set; all other rows stay aligned with the
    input columns.
    """
    diagnostics = validate_dataset(dataset)
    for d in diagnostics:
        logger.info("data note: %s", d)
    kind = _resolve_kind(dataset, options.loss)
    pi = resolve_propensity(dataset, options.propensity, seed=options.seed)
    weights = compute_weights(dataset.treatment, pi)
    fits = fit_biomarkers(dataset, weights, kind, options.workers)
    flagged = np.array([not f.converged for f in fits])
    n_flagged = int(flagged.sum())
    if n_flagged:
        logger.warning("%d of %d biomarkers flagged (%s)", n_flagged, len(fits),
                       ", ".join(sorted({f.status for f in fits if not f.converged})))

    beta_hat = np.array([f.beta_hat if f.converged else 0.0 for f in fits])
    se = np.array([f.se for f in fits])

    grid = select_knots(beta_hat[~flagged], options.knots)
    tables = profile_all(dataset, weights, kind, fits, grid.a,
                         options.method, options.workers)
    valid_ks = np.array([t.k for t in tables if t is not None], dtype=np.intp)
    valid_tables = [t for t in tables if t is not None]
    prior, trace = em_fit(valid_tables, grid, tol=options.em_tol,
                          max_iter=options.em_max_iter, mstep=options.mstep)
    if not trace.converged:
        logger.warning("EM stopped at the iteration cap (%d) without meeting "
                       "the tolerance", options.em_max_iter)
    logger.info("estimated null mass: %.4f (EM iterations: %d)",
                prior.pi, trace.iterations)

    p_total = dataset.n_biomarkers
    log_ods = np.zeros(p_total)
    post_null = np.full(p_total, prior.pi)
    valid_log_ods, valid_post_null = screen_tables(valid_tables, prior)
    log_ods[valid_ks] = valid_log_ods
    post_null[valid_ks] = valid_post_null

    t_stat, s_stat, s_ok = competitor_stats(dataset, fits)
    if not s_ok.all():
        logger.warning("%d arm-wise fits failed; their s_stat is 0",
                       int((~s_ok).sum()))
    p_value, q_value = qvalues(t_stat)

    selections = tuple(
        select_at_fdr(log_ods, post_null, lv, eligible=~flagged)
        for lv in options.fdr_levels
    )
    with np.errstate(over="ignore"):
        ods_vals = np.exp(log_ods)
    result = ScreeningResult(
        names=dataset.biomarker_names,
        beta_hat=beta_hat,
        se=se,
        log_ods=log_ods,
        ods=ods_vals,
        post_null=post_null,
        post_nonnull=1.0 - post_null,
        t_stat=t_stat,
        s_stat=s_stat,
        p_value=p_value,
        q_value=q_value,
        flagged=flagged,
        levels=tuple(options.fdr_levels),
        selections=selections,
    )
    return ScreenRun(result, fits, grid, prior, trace, pi, diagnostics, kind)


def run_qvalue(dataset: Dataset, options: ScreenOptions = ScreenOptions()) -> ScreenRun:
    """Competitor-only screen: Wald statistics, p-values, q-values.

    The model-based columns (ods, post_null) are NaN and the selection
    flags mark q_value <= level for the T statistic, mirroring how the
    q-value method is used on its own.
    """
    diagnostics = validate_dataset(dataset)
    kind = _resolve_kind(dataset, options.loss)
    pi = resolve_propensity(dataset, options.propensity, seed=options.seed)
    weights = compute_weights(dataset.treatment, pi)
    fits = fit_biomarkers(dataset, weights, kind, options.workers)
    flagged = np.array([not f.converged for f in fits])
    beta_hat = np.array([f.beta_hat if f.converged else 0.0 for f in fits])
    se = np.array([f.se for f in fits])
    t_stat, s_stat, _ = competitor_stats(dataset, fits)
    p_value, q_value = qvalues(t_stat)
    nan = np.full(dataset.n_biomarkers, np.nan)
    selections = tuple(
        SelectionSet(lv, np.nan, np.flatnonzero(q_value <= lv), np.nan)
        for lv in options.fdr_levels
    )
    result = ScreeningResult(
        names=dataset.biomarker_names,
        beta_hat=beta_hat,
        se=se,
        log_ods=nan,
        ods=nan,
        post_null=nan,
        post_nonnull=nan,
        t_stat=t_stat,
        s_stat=s_stat,
        p_value=p_value,
        q_value=q_value,
        flagged=flagged,
        levels=tuple(options.fdr_levels),
        selections=selections,
    )
    return ScreenRun(result, fits, None, None, None, pi, diagnostics, kind)
