"""Posterior screening statistics, FDR selection, and competitors.

Given profile tables and a fitted mixture prior, each biomarker gets a
posterior non-null probability and the model-based optimal-discovery
statistic

    ODS_k = sum_l p_l PL_k(a_l) / PL_k(0),

the likelihood ratio of the estimated non-null model to the null.
Ranking by ODS and admitting the longest prefix whose running mean of
posterior null probabilities stays at or below the target gives the
FDR-calibrated selection set.

Conventional per-biomarker Wald statistics (weighted-fit T_k, arm-wise
unweighted S_k) with Storey-Tibshirani q-values are computed alongside
for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, ndtr

from .data import BinaryOutcome, Dataset, SurvivalOutcome
from .fitting import BiomarkerFit, ProfileTable, newton_minimize
from .loss import WeightedObjective
from .prior import MixturePrior, _stack_tables

__all__ = [
    "SelectionSet",
    "ScreeningResult",
    "posterior_nonnull",
    "ods",
    "screen_tables",
    "select_at_fdr",
    "competitor_stats",
    "qvalues",
    "write_report",
    "selection_column",
]


@dataclass(frozen=True)
class SelectionSet:
    """Biomarkers selected at one FDR target.

    ``indices`` are original biomarker indices in rank order (best
    first).  ``threshold`` is the ODS of the last admitted biomarker,
    +inf when nothing is admitted.  ``fdr`` is the mean posterior null
    probability over the set (0 for the empty set).
    """

    level: float
    threshold: float
    indices: np.ndarray
    fdr: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)


@dataclass(frozen=True)
class ScreeningResult:
    """Aligned per-biomarker screening output.

    Arrays cover every input biomarker.  Flagged entries (no usable
    fit) carry the no-evidence sentinels ods = 1 and post_null equal to
    the prior null mass, never appear in selection sets, and are
    reported with selection flags of 0.  ``log_ods`` is kept alongside
    ``ods`` because strong signals overflow the exponentiated value.
    """

    names: tuple[str, ...]
    beta_hat: np.ndarray
    se: np.ndarray
    log_ods: np.ndarray
    ods: np.ndarray
    post_null: np.ndarray
    post_nonnull: np.ndarray
    t_stat: np.ndarray
    s_stat: np.ndarray
    p_value: np.ndarray
    q_value: np.ndarray
    flagged: np.ndarray
    levels: tuple[float, ...]
    selections: tuple[SelectionSet, ...]

    @property
    def n_biomarkers(self) -> int:
        return len(self.names)

    def selected_mask(self, level_index: int) -> np.ndarray:
        mask = np.zeros(self.n_biomarkers, dtype=bool)
        mask[self.selections[level_index].indices] = True
        return mask


def _log_mix(table: ProfileTable, prior: MixturePrior) -> float:
    with np.errstate(divide="ignore"):
        log_p = np.log(prior.p)
    return float(logsumexp(table.log_pl_knots + log_p))


def posterior_nonnull(table: ProfileTable, prior: MixturePrior) -> float:
    """P(beta_k != 0 | data) under the fitted two-groups prior."""
    with np.errstate(divide="ignore"):
        log_null = np.log(prior.pi) + table.log_pl_null
        log_alt = np.log1p(-prior.pi) + _log_mix(table, prior)
    return float(expit(log_alt - log_null))


def ods(table: ProfileTable, prior: MixturePrior) -> float:
    """Optimal-discovery statistic: non-null mixture likelihood over null."""
    return float(np.exp(_log_mix(table, prior) - table.log_pl_null))


def screen_tables(tables, prior: MixturePrior):
    """Vectorized (log_ods, post_null) for a list of profile tables."""
    log_null, log_knots = _stack_tables(tables)
    with np.errstate(divide="ignore"):
        log_p = np.log(prior.p)
        log_pi = np.log(prior.pi)
        log_1mpi = np.log1p(-prior.pi)
    log_mix = logsumexp(log_knots + log_p, axis=1)
    log_ods = log_mix - log_null
    post_null = expit((log_pi + log_null) - (log_1mpi + log_mix))
    return log_ods, post_null


def select_at_fdr(log_ods: np.ndarray, post_null: np.ndarray, level: float,
                  eligible: np.ndarray | None = None) -> SelectionSet:
    """Longest ODS-ranked prefix with mean posterior null <= level.

    Ranking is by ODS descending with deterministic tie-breaks (smaller
    post_null first, then smaller index).  ``eligible`` masks out
    flagged biomarkers; their sentinel values never enter a set.  The
    estimated FDR of a non-monotone post_null sequence need not be
    monotone in the prefix length, so the longest admissible prefix is
    taken.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("FDR level must lie in (0, 1)")
    log_ods = np.asarray(log_ods, dtype=np.float64)
    post_null = np.asarray(post_null, dtype=np.float64)
    idx_all = np.arange(log_ods.shape[0])
    if eligible is not None:
        idx_all = idx_all[np.asarray(eligible, dtype=bool)]
    order = idx_all[np.lexsort((idx_all, post_null[idx_all], -log_ods[idx_all]))]
    if order.size == 0:
        return SelectionSet(level, np.inf, np.empty(0, dtype=np.intp), 0.0)
    running = np.cumsum(post_null[order])
    counts = np.arange(1, order.size + 1, dtype=np.float64)
    admissible = np.flatnonzero(running <= level * counts)
    if admissible.size == 0:
        return SelectionSet(level, np.inf, np.empty(0, dtype=np.intp), 0.0)
    cut = int(admissible[-1]) + 1
    members = order[:cut]
    fdr = float(running[cut - 1] / cut)
    threshold = float(np.exp(log_ods[members[-1]]))
    return SelectionSet(level, threshold, members, fdr)


# ---------------------------------------------------------------------------
# competitor statistics
# ---------------------------------------------------------------------------


def _wald_from_fit(outcome, design, kind, entry):
    """Unweighted single-group fit; (estimate, variance, ok) for one entry."""
    n = design.shape[0]
    obj = WeightedObjective(kind, outcome, np.ones(n), np.ones(n), design)
    res = newton_minimize(obj)
    if res.status != "ok":
        return 0.0, np.inf, False
    try:
        var = float(np.linalg.inv(res.hessian)[entry, entry])
    except np.linalg.LinAlgError:
        return 0.0, np.inf, False
    if not (np.isfinite(var) and var > 0.0):
        return 0.0, np.inf, False
    return float(res.theta[entry]), var, True


def competitor_stats(dataset: Dataset, fits: list[BiomarkerFit]):
    """Conventional Wald statistics T_k and S_k for every biomarker.

    T_k = beta_hat_k / se_k from the weighted interaction fit (zero for
    flagged fits).  S_k contrasts arm-wise unweighted regressions: for
    binary outcomes a logistic model with intercept, the biomarker, and
    the confounders inside each arm; for survival outcomes a Cox model
    on the biomarker alone.  Arms whose fit fails contribute a zero
    statistic with a flag.
    """
    p = dataset.n_biomarkers
    q = dataset.n_confounders
    t_stat = np.zeros(p)
    for f in fits:
        if f.converged:
            t_stat[f.k] = f.beta_hat / f.se

    binary = dataset.outcome.kind == "binary"
    arms = []
    for arm_value in (1.0, -1.0):
        rows = dataset.treatment == arm_value
        if binary and rows.sum() < q + 2:
            raise ValueError("each arm needs at least q + 2 subjects for S_k")
        arms.append(rows)

    s_stat = np.zeros(p)
    s_ok = np.ones(p, dtype=bool)
    for k in range(p):
        est = np.zeros(2)
        var = np.zeros(2)
        ok = True
        for j, rows in enumerate(arms):
            x_k = dataset.x[rows, k]
            if binary:
                outcome = BinaryOutcome(dataset.outcome.y[rows])
                design = np.column_stack(
                    [np.ones(x_k.shape[0]), x_k, dataset.z[rows]]
                )
                est[j], var[j], good = _wald_from_fit(outcome, design, "binomial", 1)
            else:
                outcome = SurvivalOutcome(
                    dataset.outcome.time[rows], dataset.outcome.event[rows]
                )
                est[j], var[j], good = _wald_from_fit(
                    outcome, x_k[:, None], "cox", 0
                )
            ok = ok and good
        if ok:
            s_stat[k] = (est[0] - est[1]) / np.sqrt(var[0] + var[1])
        else:
            s_ok[k] = False
    return t_stat, s_stat, s_ok


def qvalues(stats: np.ndarray):
    """Two-sided normal p-values and Storey-Tibshirani q-values.

    pi0 is estimated as #{p > 0.5} / (0.5 m), clamped to [1/m, 1]; the
    step-up rule q_(i) = min_{j >= i} pi0 m p_(j) / j converts p-values
    to q-values.  Ties are handled by stable sorting, so relabeling the
    input permutes the output consistently.
    """
    stats = np.asarray(stats, dtype=np.float64)
    m = stats.shape[0]
    if m == 0:
        return np.empty(0), np.empty(0)
    p = 2.0 * (1.0 - ndtr(np.abs(stats)))
    pi0 = np.count_nonzero(p > 0.5) / (0.5 * m)
    pi0 = min(1.0, max(1.0 / m, pi0))
    order = np.argsort(p, kind="stable")
    ranked = pi0 * m * p[order] / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(ranked[::-1])[::-1]
    q = np.empty(m)
    q[order] = q_sorted
    return p, q


def selection_column(level: float) -> str:
    """Report column name for one FDR level: 0.05 -> sel_05."""
    return f"sel_{int(round(level * 100)):02d}"


def write_report(result: ScreeningResult, path: str) -> None:
    """Main per-biomarker report as TSV with one selection column per level."""
    sel_cols = [selection_column(lv) for lv in result.levels]
    masks = [result.selected_mask(i) for i in range(len(result.levels))]
    header = ["biomarker", "beta_hat", "se", "ods", "post_null",
              "t_stat", "s_stat", "p_value", "q_value", *sel_cols]
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for i, name in enumerate(result.names):
            row = [name,
                   f"{result.beta_hat[i]:.12g}",
                   f"{result.se[i]:.12g}",
                   f"{result.ods[i]:.12g}",
                   f"{result.post_null[i]:.12g}",
                   f"{result.t_stat[i]:.12g}",
                   f"{result.s_stat[i]:.12g}",
                   f"{result.p_value[i]:.12g}",
                   f"{result.q_value[i]:.12g}"]
            row.extend(str(int(mask[i])) for mask in masks)
            fh.write("\t".join(row) + "\n")
