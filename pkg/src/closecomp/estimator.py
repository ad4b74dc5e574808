"""ATT estimation and inference on top of a selection result.

The point estimate contrasts the treated group's period-t mean with the
kernel-weighted mean of the selected comparison groups.  Inference treats the
selected set as fixed and plugs it into the oracle variance

    V = Var(Y_t | G=1)/p_1 + Var(Y_t | G in G*)/p_{G*},

with the per-unit influence contribution

    psi(W) = 1{G=1}/p_1 (Y_t - Ybar_1) - 1{G in G*}/p_{G*} (Y_t - Ybar_{G*}),

which is sample-centered and hence sums to zero exactly.  Selection
consistency is what licenses the plug-in; the Monte Carlo harness checks the
resulting coverage empirically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .config import PipelineConfig
from .distance import compute_distances
from .errors import (
    EmptySelection,
    NoCandidatesForCell,
    NoCellsSurviveTrimming,
    NoCloseComparisonGroups,
    PeriodOutOfRange,
    TooFewGroups,
)
from .panel import PanelDataset, profile_groups
from .selection import SelectionResult, select_groups


@dataclass(frozen=True)
class AttEstimate:
    att_hat: float
    variance: float          # plug-in asymptotic variance V-hat
    std_error: float         # sqrt(V-hat / n)
    ci: tuple
    alpha: float
    n_1: int
    n_selected: int
    period: int
    estimand: str = "att"
    selection: SelectionResult | None = None
    influence_values: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "estimand": self.estimand,
            "att": self.att_hat,
            "se": self.std_error,
            "variance": self.variance,
            "ci": [self.ci[0], self.ci[1]],
            "alpha": self.alpha,
            "n1": self.n_1,
            "n_comparison": self.n_selected,
            "period": self.period,
        }
        if self.selection is not None:
            out["selected_groups"] = list(self.selection.selected)
            out["weights"] = {str(g): w for g, w in self.selection.weights.items()}
            out["bandwidth"] = self.selection.bandwidth
            out["metric"] = self.selection.metric
        out.update(self.diagnostics)
        return out


@dataclass(frozen=True)
class PlaceboReport:
    period: int
    group_means: dict
    wald_stat: float
    dof: int
    p_value: float

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "group_means": {str(g): m for g, m in self.group_means.items()},
            "wald_stat": self.wald_stat,
            "dof": self.dof,
            "p_value": self.p_value,
        }


# ---------------------------------------------------------------------------
# core contrast
# ---------------------------------------------------------------------------

def _contrast(data: PanelDataset, values: np.ndarray, treated_label,
              weights: dict, selected, alpha: float, period: int, estimand: str,
              selection: SelectionResult | None, keep_influence: bool) -> AttEstimate:
    """Weighted treated-vs-comparison contrast of per-unit ``values``."""
    if not selected:
        raise EmptySelection("selection contains no comparison groups")
    n = data.n_units
    rows_1 = data.group_rows(treated_label)
    y1 = values[rows_1]
    ybar_1 = float(y1.mean())

    comp_term = 0.0
    sel_rows = []
    for g in selected:
        rows_g = data.group_rows(g)
        comp_term += weights[g] * float(values[rows_g].mean())
        sel_rows.append(rows_g)
    sel_rows = np.concatenate(sel_rows)
    y_pool = values[sel_rows]
    ybar_pool = float(y_pool.mean())

    att = ybar_1 - comp_term

    p1 = rows_1.size / n
    p_sel = sel_rows.size / n
    var_1 = float(np.var(y1, ddof=1)) if rows_1.size > 1 else 0.0
    var_pool = float(np.var(y_pool, ddof=1)) if sel_rows.size > 1 else 0.0
    v_hat = var_1 / p1 + var_pool / p_sel
    se = float(np.sqrt(v_hat / n))
    z = stats.norm.ppf(1 - alpha / 2)
    ci = (float(att - z * se), float(att + z * se))

    influence = None
    if keep_influence:
        influence = np.zeros(n)
        influence[rows_1] = (y1 - ybar_1) / p1
        influence[sel_rows] -= (y_pool - ybar_pool) / p_sel

    return AttEstimate(
        att_hat=float(att), variance=float(v_hat), std_error=se, ci=ci,
        alpha=alpha, n_1=int(rows_1.size), n_selected=int(sel_rows.size),
        period=period, estimand=estimand, selection=selection,
        influence_values=influence,
    )


def att_estimate(data: PanelDataset, selection: SelectionResult,
                 t: int | None = None, alpha: float = 0.05,
                 treated_group=None, keep_influence: bool = True) -> AttEstimate:
    """Kernel-weighted ATT estimate at outcome period ``t`` (default t*)."""
    g1 = data.treated_group if treated_group is None else treated_group
    t_star = data.t_star_of(g1)
    if t is None:
        t = t_star
    if not t_star <= t <= data.T:
        raise PeriodOutOfRange(f"period {t} outside post-treatment range {t_star}..{data.T}")
    if not selection.selected:
        raise EmptySelection("selection contains no comparison groups")
    values = data.outcomes[:, t - 1]
    return _contrast(data, values, g1, selection.weights, selection.selected,
                     alpha, t, "att", selection, keep_influence)


def oracle_att(data: PanelDataset, true_gstar, t: int | None = None,
               alpha: float = 0.05, treated_group=None,
               keep_influence: bool = True) -> AttEstimate:
    """ATT estimate that knows the true close-comparison set.

    Weights are proportional to the empirical group shares, so the comparison
    term is simply the pooled mean over the true set.
    """
    g1 = data.treated_group if treated_group is None else treated_group
    true_gstar = tuple(true_gstar)
    if not true_gstar:
        raise EmptySelection("true close-comparison set is empty")
    bad = [g for g in true_gstar if data.t_star_of(g) is not None]
    if bad:
        raise EmptySelection(f"groups {bad} are treated and cannot be comparisons")
    t_star = data.t_star_of(g1)
    if t is None:
        t = t_star
    if not t_star <= t <= data.T:
        raise PeriodOutOfRange(f"period {t} outside post-treatment range {t_star}..{data.T}")
    sizes = np.array([data.group_size(g) for g in true_gstar], dtype=float)
    weights = {g: s / sizes.sum() for g, s in zip(true_gstar, sizes)}
    values = data.outcomes[:, t - 1]
    est = _contrast(data, values, g1, weights, true_gstar, alpha, t,
                    "oracle_att", None, keep_influence)
    return est


def multiply_robust_att(data: PanelDataset, selection: SelectionResult,
                        alpha: float = 0.05, treated_group=None,
                        keep_influence: bool = True) -> AttEstimate:
    """Close-group contrast at t* minus the same contrast at t*-1.

    Computed on per-unit differences Y_{t*} - Y_{t*-1}, which exploits the
    panel pairing: the influence function is the level one applied to the
    differenced outcome.  Valid if either the selected groups are truly close
    or outcomes are time homogeneous.
    """
    g1 = data.treated_group if treated_group is None else treated_group
    t_star = data.t_star_of(g1)
    if t_star < 2:
        raise PeriodOutOfRange("multiply-robust contrast needs t* >= 2")
    if not selection.selected:
        raise EmptySelection("selection contains no comparison groups")
    values = data.outcomes[:, t_star - 1] - data.outcomes[:, t_star - 2]
    est = _contrast(data, values, g1, selection.weights, selection.selected,
                    alpha, t_star, "tau_mr", selection, keep_influence)
    return est


def placebo_test(data: PanelDataset, selection: SelectionResult,
                 t: int | None = None, treated_group=None) -> PlaceboReport:
    """Wald test that all selected groups share one period-t mean.

    Heteroskedastic: each group contributes its own variance.  Rejection
    signals that at least one identification strategy's implication fails
    for the selected set.
    """
    g1 = data.treated_group if treated_group is None else treated_group
    t_star = data.t_star_of(g1)
    if t is None:
        t = t_star
    if t < t_star or t > data.T:
        raise PeriodOutOfRange(f"placebo period {t} outside {t_star}..{data.T}")
    groups = selection.selected
    if len(groups) < 2:
        raise TooFewGroups("placebo test needs at least two selected groups")
    means = {}
    variances = []
    for g in groups:
        y = data.outcome(g, t)
        means[g] = float(y.mean())
        variances.append(np.var(y, ddof=1) / y.size)
    m = np.array([means[g] for g in groups])
    v = np.array(variances)
    if np.any(v == 0):
        # degenerate outcomes: equal means pass, unequal means reject outright
        stat = np.inf if np.ptp(m) > 0 else 0.0
    else:
        wls = float((m / v).sum() / (1 / v).sum())
        stat = float((((m - wls) ** 2) / v).sum())
    dof = len(groups) - 1
    p = float(stats.chi2.sf(stat, dof)) if np.isfinite(stat) else 0.0
    return PlaceboReport(period=t, group_means=means, wald_stat=float(stat),
                         dof=dof, p_value=p)


# ---------------------------------------------------------------------------
# pipeline convenience
# ---------------------------------------------------------------------------

def run_selection(data: PanelDataset, config: PipelineConfig,
                  treated_group=None, t_star=None, candidates=None) -> SelectionResult:
    """profile -> distance -> select with the configured metric and kernel."""
    g1 = data.treated_group if treated_group is None else treated_group
    if t_star is None:
        t_star = data.t_star_of(g1)
    if candidates is None:
        candidates = list(data.comparison_groups)
    profiles = profile_groups(data, S=config.S, J=config.J, t_star=t_star,
                              groups=[g1, *candidates])
    distances = compute_distances(profiles, g1, metric=config.metric,
                                  groups=candidates, ridge=config.ridge)
    p_hats = {g: profiles[g].p_hat for g in candidates}
    n_min = min(profiles[g].n_g for g in [g1, *candidates])
    return select_groups(distances, p_hats, kernel=config.kernel,
                         h=config.bandwidth, bandwidth_scale=config.bandwidth_scale,
                         n_min=n_min)


# ---------------------------------------------------------------------------
# discrete-covariate conditioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionalAttResult:
    cells: dict                  # covariate value -> AttEstimate
    trimmed: dict                # covariate value -> reason
    cell_weights: dict           # untrimmed value -> treated-frequency weight
    att_hat: float
    std_error: float
    ci: tuple
    alpha: float

    def to_dict(self) -> dict:
        return {
            "estimand": "conditional_att",
            "att": self.att_hat,
            "se": self.std_error,
            "ci": [self.ci[0], self.ci[1]],
            "alpha": self.alpha,
            "cells": {str(x): est.to_dict() for x, est in self.cells.items()},
            "trimmed": {str(x): reason for x, reason in self.trimmed.items()},
            "cell_weights": {str(x): w for x, w in self.cell_weights.items()},
        }


def att_conditional(data: PanelDataset, config: PipelineConfig,
                    t: int | None = None) -> ConditionalAttResult:
    """Run the full pipeline within each discrete covariate cell.

    Cells whose treated subsample is smaller than ``config.min_cell`` or
    where no comparison group falls within bandwidth are trimmed and flagged;
    the aggregate reweights surviving cells by the treated group's covariate
    frequencies among those cells.
    """
    if data.covariates is None:
        raise NoCellsSurviveTrimming("dataset has no covariate column")
    g1 = data.treated_group
    values = sorted(set(data.covariates.tolist()))
    cells, trimmed, treated_counts = {}, {}, {}
    for x in values:
        mask = data.covariates == x
        n_treated_cell = int(np.sum(mask[data.group_rows(g1)]))
        if n_treated_cell < config.min_cell:
            trimmed[x] = f"treated cell has {n_treated_cell} < min_cell={config.min_cell} units"
            continue
        cell_data = data.subset_units(mask)
        # comparison groups need >= 2 units in the cell to be candidates
        candidates = [g for g in cell_data.comparison_groups if cell_data.group_size(g) >= 2]
        if not candidates:
            trimmed[x] = "no comparison group with >= 2 units in cell"
            continue
        try:
            sel = run_selection(cell_data, config, candidates=candidates)
            cells[x] = att_estimate(cell_data, sel, t=t, alpha=config.alpha,
                                    keep_influence=False)
        except NoCloseComparisonGroups as err:
            trimmed[x] = f"no close comparison groups in cell ({err.min_bandwidth:.3g} minimal h)"
            continue
        treated_counts[x] = n_treated_cell
    if not cells:
        raise NoCellsSurviveTrimming(f"all cells trimmed: {trimmed}")

    total = sum(treated_counts[x] for x in cells)
    cell_weights = {x: treated_counts[x] / total for x in cells}
    att = sum(cell_weights[x] * cells[x].att_hat for x in cells)
    var = sum(cell_weights[x] ** 2 * cells[x].std_error ** 2 for x in cells)
    se = float(np.sqrt(var))
    z = stats.norm.ppf(1 - config.alpha / 2)
    return ConditionalAttResult(
        cells=cells, trimmed=trimmed, cell_weights=cell_weights,
        att_hat=float(att), std_error=se, ci=(att - z * se, att + z * se),
        alpha=config.alpha,
    )


# ---------------------------------------------------------------------------
# staggered adoption
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupTimeResult:
    cells: dict                  # (group, period) -> AttEstimate
    skipped: list                # [(group, period, reason), ...]
    event_study: dict            # event time e -> (att, se)
    overall: tuple               # (att, se)

    def to_dict(self) -> dict:
        return {
            "estimand": "group_time_att",
            "cells": {f"{g},{t}": est.to_dict() for (g, t), est in self.cells.items()},
            "skipped": [[str(g), t, r] for g, t, r in self.skipped],
            "event_study": {str(e): {"att": a, "se": s} for e, (a, s) in self.event_study.items()},
            "overall": {"att": self.overall[0], "se": self.overall[1]},
        }


def att_group_time(data: PanelDataset, config: PipelineConfig) -> GroupTimeResult:
    """Group-time ATT(g, t) under staggered adoption.

    For each treated group g and post period t, candidates are the groups not
    yet treated at t; the single-group pipeline runs with g as treated.
    Event-study and overall aggregates weight by treated-cohort sizes;
    their standard errors treat cells as independent, which ignores shared
    comparison units across cells.
    """
    treated = data.treated_groups
    if not treated:
        raise NoCandidatesForCell([], "dataset has no treated group")
    cells, skipped = {}, []
    for g in treated:
        ts_g = data.t_star_of(g)
        for t in range(ts_g, data.T + 1):
            candidates = [
                c for c in data.group_labels
                if c != g and (data.t_star_of(c) is None or data.t_star_of(c) > t)
            ]
            if not candidates:
                skipped.append((g, t, "no not-yet-treated candidates"))
                continue
            try:
                sel = run_selection(data, config, treated_group=g, t_star=ts_g,
                                    candidates=candidates)
                cells[(g, t)] = att_estimate(data, sel, t=t, alpha=config.alpha,
                                             treated_group=g, keep_influence=False)
            except NoCloseComparisonGroups as err:
                skipped.append((g, t, f"no close groups (minimal h {err.min_bandwidth:.3g})"))
    if not cells:
        raise NoCandidatesForCell([(g, t) for g, t, _ in skipped])

    # event-study aggregation: weight cohorts by size at each event time
    sizes = {g: data.group_size(g) for g in treated}
    event_cells = {}
    for (g, t), est in cells.items():
        event_cells.setdefault(t - data.t_star_of(g), []).append((g, est))
    event_study = {}
    for e, entries in sorted(event_cells.items()):
        total = sum(sizes[g] for g, _ in entries)
        att = sum(sizes[g] / total * est.att_hat for g, est in entries)
        var = sum((sizes[g] / total) ** 2 * est.std_error ** 2 for g, est in entries)
        event_study[e] = (float(att), float(np.sqrt(var)))

    # overall: per-cohort average across its periods, then size-weighted
    by_group = {}
    for (g, t), est in cells.items():
        by_group.setdefault(g, []).append(est)
    total = sum(sizes[g] for g in by_group)
    att = 0.0
    var = 0.0
    for g, ests in by_group.items():
        w_g = sizes[g] / total
        att += w_g * float(np.mean([e.att_hat for e in ests]))
        var += sum((w_g / len(ests)) ** 2 * e.std_error ** 2 for e in ests)
    overall = (float(att), float(np.sqrt(var)))
    return GroupTimeResult(cells=cells, skipped=skipped,
                           event_study=event_study, overall=overall)
