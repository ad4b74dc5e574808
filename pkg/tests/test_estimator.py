import numpy as np
import pytest
from scipy import stats

from closecomp.config import PipelineConfig
from closecomp.dgp import DgpSpec, generate
from closecomp.errors import (
    EmptySelection,
    NoCellsSurviveTrimming,
    PeriodOutOfRange,
    TooFewGroups,
)
from closecomp.estimator import (
    att_conditional,
    att_estimate,
    att_group_time,
    multiply_robust_att,
    oracle_att,
    placebo_test,
    run_selection,
)
from closecomp.panel import PanelDataset
from closecomp.selection import SelectionResult

from conftest import build_panel


def two_group_panel(y_treated, y_comp, t_star=2):
    a = np.column_stack([np.zeros(len(y_treated)), np.asarray(y_treated, float)])
    b = np.column_stack([np.zeros(len(y_comp)), np.asarray(y_comp, float)])
    return build_panel({"A": a, "B": b}, "A", t_star)


def full_selection(data, metric="wasserstein"):
    cfg = PipelineConfig(metric=metric, bandwidth=1e6)
    return run_selection(data, cfg)


# ---------------------------------------------------------------------------
# point estimate and variance
# ---------------------------------------------------------------------------

def test_att_simple_contrast(rng):
    # treated mean 3, pooled comparison mean 1 -> att 2
    data = two_group_panel(3.0 + rng.normal(0, 0.0, 50), 1.0 + np.zeros(50))
    sel = full_selection(data)
    est = att_estimate(data, sel)
    assert est.att_hat == pytest.approx(2.0, abs=1e-12)
    assert est.n_1 == 50 and est.n_selected == 50


def test_att_weighted_two_groups(rng):
    # equal-size groups with means 0.5 and 1.5 -> pooled comparison mean 1.0
    a = np.column_stack([np.zeros(40), np.full(40, 3.0)])
    b = np.column_stack([np.zeros(40), np.full(40, 0.5)])
    c = np.column_stack([np.zeros(40), np.full(40, 1.5)])
    data = build_panel({"A": a, "B": b, "C": c}, "A", 2)
    est = att_estimate(data, full_selection(data))
    assert est.att_hat == pytest.approx(2.0, abs=1e-12)


def test_variance_formula_exact():
    # two units per group with sample variance exactly 1 and p = 1/2 each:
    # V = 1/0.5 + 1/0.5 = 4, se = sqrt(V/n) = 1
    h = np.sqrt(2) / 2
    data = two_group_panel([3 - h, 3 + h], [1 - h, 1 + h])
    est = oracle_att(data, ["B"])
    assert est.att_hat == pytest.approx(2.0, abs=1e-12)
    assert est.variance == pytest.approx(4.0, abs=1e-12)
    assert est.std_error == pytest.approx(1.0, abs=1e-12)


def test_ci_geometry(rng):
    data = two_group_panel(rng.normal(2, 1, 100), rng.normal(0, 1, 100))
    est = att_estimate(data, full_selection(data), alpha=0.05)
    z = stats.norm.ppf(0.975)
    assert est.ci[0] < est.att_hat < est.ci[1]
    assert est.ci[1] - est.ci[0] == pytest.approx(2 * z * est.std_error, rel=1e-12)


def test_influence_mean_zero(rng):
    data = two_group_panel(rng.normal(2, 1, 60), rng.normal(0, 1.5, 80))
    est = att_estimate(data, full_selection(data))
    assert abs(est.influence_values.mean()) < 1e-10
    # variance of the influence values matches the plug-in V up to dof scaling
    v_emp = np.mean(est.influence_values**2)
    assert v_emp == pytest.approx(est.variance, rel=0.05)


def test_period_out_of_range(rng):
    data = two_group_panel(rng.normal(size=30), rng.normal(size=30))
    sel = full_selection(data)
    with pytest.raises(PeriodOutOfRange):
        att_estimate(data, sel, t=1)
    with pytest.raises(PeriodOutOfRange):
        att_estimate(data, sel, t=3)


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def test_oracle_examples(rng):
    data = two_group_panel(np.full(30, 5.0), np.zeros(30))
    assert oracle_att(data, ["B"]).att_hat == pytest.approx(5.0)

    a = np.column_stack([np.zeros(25), np.full(25, 4.0)])
    b = np.column_stack([np.zeros(25), np.full(25, 1.0)])
    c = np.column_stack([np.zeros(25), np.full(25, 3.0)])
    data = build_panel({"A": a, "B": b, "C": c}, "A", 2)
    assert oracle_att(data, ["B", "C"]).att_hat == pytest.approx(2.0)


def test_oracle_equals_kernel_estimator_on_exact_selection(rng):
    a = np.column_stack([rng.normal(0, 1, 50), rng.normal(2, 1, 50)])
    b = np.column_stack([rng.normal(0, 1, 70), rng.normal(0, 1, 70)])
    c = np.column_stack([rng.normal(0, 1, 30), rng.normal(0.5, 1, 30)])
    data = build_panel({"A": a, "B": b, "C": c}, "A", 2)
    est = att_estimate(data, full_selection(data))
    orc = oracle_att(data, ["B", "C"])
    assert est.att_hat == pytest.approx(orc.att_hat, abs=1e-12)
    assert est.variance == pytest.approx(orc.variance, abs=1e-12)


def test_oracle_validation(rng):
    data = two_group_panel(rng.normal(size=20), rng.normal(size=20))
    with pytest.raises(EmptySelection):
        oracle_att(data, [])
    with pytest.raises(EmptySelection):
        oracle_att(data, ["A"])  # treated group is not a comparison


# ---------------------------------------------------------------------------
# multiply robust
# ---------------------------------------------------------------------------

def test_tau_mr_algebraic_collapse(rng):
    # comparison outcomes constant across periods -> tau_mr equals the
    # treated group's own before/after change
    y_comp = rng.normal(1, 1, 40)
    b = np.column_stack([y_comp, y_comp])
    a = np.column_stack([rng.normal(1, 1, 40), rng.normal(2.5, 1, 40)])
    data = build_panel({"A": a, "B": b}, "A", 2)
    est = multiply_robust_att(data, full_selection(data))
    expected = a[:, 1].mean() - a[:, 0].mean()
    assert est.att_hat == pytest.approx(expected, abs=1e-12)


def test_tau_mr_equals_differenced_contrast(rng):
    a = np.column_stack([rng.normal(0, 1, 30), rng.normal(2, 1, 30)])
    b = np.column_stack([rng.normal(0.5, 1, 30), rng.normal(0.7, 1, 30)])
    data = build_panel({"A": a, "B": b}, "A", 2)
    sel = full_selection(data)
    est = multiply_robust_att(data, sel)
    level_post = att_estimate(data, sel, t=2).att_hat
    level_pre = (a[:, 0].mean() - b[:, 0].mean())
    assert est.att_hat == pytest.approx(level_post - level_pre, abs=1e-12)
    assert abs(est.influence_values.mean()) < 1e-10


# ---------------------------------------------------------------------------
# placebo
# ---------------------------------------------------------------------------

def test_placebo_requires_two_groups(rng):
    data = two_group_panel(rng.normal(size=30), rng.normal(size=30))
    with pytest.raises(TooFewGroups):
        placebo_test(data, full_selection(data))


def test_placebo_power_after_large_shift(rng):
    n = 1000
    groups = {"A": np.column_stack([rng.normal(0, 1, n), rng.normal(0, 1, n)])}
    for g in ("B", "C", "D"):
        groups[g] = np.column_stack([rng.normal(0, 1, n), rng.normal(0, 1, n)])
    groups["D"][:, 1] += 5.0 / np.sqrt(n)  # five standard errors
    data = build_panel(groups, "A", 2)
    rep = placebo_test(data, full_selection(data))
    assert rep.dof == 2
    assert rep.p_value < 0.01


def test_placebo_size(rng):
    # under a shared DGP the rejection rate should be close to alpha
    reps, n, alpha = 2000, 1000, 0.05
    rejections = 0
    for rep in range(reps):
        r = np.random.default_rng(5000 + rep)
        groups = {g: np.column_stack([r.normal(0, 1, n), r.normal(0, 1, n)])
                  for g in ("A", "B", "C", "D")}
        data = build_panel(groups, "A", 2)
        p = placebo_test(data, full_selection(data)).p_value
        rejections += p < alpha
    rate = rejections / reps
    mc_se = np.sqrt(alpha * (1 - alpha) / reps)
    assert abs(rate - alpha) < 2 * mc_se + 0.01


# ---------------------------------------------------------------------------
# conditional on a discrete covariate
# ---------------------------------------------------------------------------

def covariate_panel(rng, effects=(1.0, 3.0), n=200):
    """Two covariate cells with different treatment effects."""
    blocks, covs = {}, {}
    for g, base in (("A", 0.0), ("B", 0.0), ("C", 5.0)):
        cells = []
        for x, eff in enumerate(effects):
            y1 = rng.normal(base, 1, n)
            y2 = rng.normal(base, 1, n)
            if g == "A":
                y2 = y2 + eff
            cells.append(np.column_stack([y1, y2]))
        blocks[g] = np.vstack(cells)
        covs[g] = np.repeat(np.arange(len(effects)), n)
    return build_panel(blocks, "A", 2, covariates=covs)


def test_conditional_single_cell_equals_unconditional(rng):
    data = covariate_panel(rng, effects=(2.0,))
    cfg = PipelineConfig(min_cell=5)
    res = att_conditional(data, cfg)
    sel = run_selection(data, cfg)
    overall = att_estimate(data, sel)
    assert res.att_hat == pytest.approx(overall.att_hat, abs=1e-12)
    assert res.trimmed == {}


def test_conditional_two_cells_aggregate(rng):
    data = covariate_panel(rng, effects=(1.0, 3.0), n=400)
    cfg = PipelineConfig(min_cell=5)
    res = att_conditional(data, cfg)
    assert set(res.cells) == {0, 1}
    assert res.cell_weights[0] == pytest.approx(0.5)
    agg = 0.5 * res.cells[0].att_hat + 0.5 * res.cells[1].att_hat
    assert res.att_hat == pytest.approx(agg, abs=1e-12)
    assert res.att_hat == pytest.approx(2.0, abs=0.3)


def test_conditional_trims_cell_without_close_groups(rng):
    data = covariate_panel(rng, effects=(1.0, 3.0), n=300)
    # push cell 1's comparison outcomes far away so nothing is close there
    mask = (data.covariates == 1) & (data.group_codes != 0)
    outcomes = data.outcomes.copy()
    outcomes[mask] += 50.0
    data = PanelDataset(units=data.units.copy(), group_codes=data.group_codes.copy(),
                        outcomes=outcomes, group_labels=data.group_labels,
                        treatment=data.treatment.copy(),
                        covariates=data.covariates.copy())
    res = att_conditional(data, PipelineConfig(min_cell=5))
    assert list(res.trimmed) == [1]
    assert set(res.cells) == {0}
    assert res.att_hat == pytest.approx(res.cells[0].att_hat)
    assert res.cell_weights[0] == pytest.approx(1.0)


def test_conditional_all_trimmed_raises(rng):
    data = covariate_panel(rng, effects=(1.0,), n=30)
    with pytest.raises(NoCellsSurviveTrimming):
        att_conditional(data, PipelineConfig(min_cell=10**6))


# ---------------------------------------------------------------------------
# staggered adoption
# ---------------------------------------------------------------------------

def staggered_panel(rng, n=300, delta=1.0):
    theta = np.array([0.0, 0.3, 0.6])
    blocks = {}
    for g in ("A", "B", "C", "D"):
        blocks[g] = theta[None, :] + rng.normal(0, 1, (n, 3))
    blocks["A"][:, 1:] += delta          # treated from t=2
    blocks["B"][:, 2:] += delta          # treated from t=3
    units = np.arange(4 * n)
    group_by_unit = np.repeat(list("ABCD"), n)
    treatment = {"A": [0, 1, 1], "B": [0, 0, 1],
                 "C": [0, 0, 0], "D": [0, 0, 0]}
    return PanelDataset.from_arrays(units, group_by_unit,
                                    np.vstack([blocks[g] for g in "ABCD"]),
                                    treatment)


def test_group_time_single_treated_reduces_to_plain(rng):
    spec_data = two_group_panel(rng.normal(1, 1, 80), rng.normal(0, 1, 80))
    cfg = PipelineConfig(bandwidth=1e6)
    res = att_group_time(spec_data, cfg)
    assert set(res.cells) == {("A", 2)}
    plain = att_estimate(spec_data, run_selection(spec_data, cfg))
    assert res.cells[("A", 2)].att_hat == pytest.approx(plain.att_hat, abs=1e-12)


def test_group_time_pools_and_effects(rng):
    data = staggered_panel(rng, n=400, delta=1.0)
    cfg = PipelineConfig()  # honest bandwidth; all groups share intercepts
    res = att_group_time(data, cfg)
    # cohort A: periods 2 and 3; cohort B: period 3 only
    assert set(res.cells) == {("A", 2), ("A", 3), ("B", 3)}
    # at t=2 cohort A may use B (not yet treated), C, D; at t=3 only C, D
    sel_a3 = res.cells[("A", 3)].selection
    assert "B" not in sel_a3.selected
    for est in res.cells.values():
        assert est.att_hat == pytest.approx(1.0, abs=4 * est.std_error)
    # event-study: e=0 pools A@2 and B@3; e=1 is A@3
    assert set(res.event_study) == {0, 1}
    att_e0, _ = res.event_study[0]
    assert att_e0 == pytest.approx(1.0, abs=0.2)
