import numpy as np
import pytest

from closecomp.errors import NoComparisonGroups, PeriodOutOfRange, RankDeficientPsi
from closecomp.timehomog import (
    default_transfer_basis,
    detect_time_homogeneity,
    lou_parametric_transfer_check,
    tau_th,
)

from conftest import build_panel


def panel_with_comparison_paths(rng, comp_paths, n=400, t_star=2, treated_shift=2.0):
    """Treated group flat at 0 plus effect; comparisons follow given mean paths."""
    T = len(next(iter(comp_paths.values())))
    blocks = {"A": rng.normal(0, 1, (n, T))}
    blocks["A"][:, t_star - 1:] += treated_shift
    for g, path in comp_paths.items():
        blocks[g] = np.asarray(path)[None, :] + rng.normal(0, 1, (n, T))
    return build_panel(blocks, "A", t_star)


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------

def test_constant_values_give_full_window():
    base_b = np.linspace(-1, 1, 20)
    base_c = np.linspace(0, 2, 20)
    blocks = {
        "A": np.column_stack([np.zeros(20)] * 4),
        "B": np.column_stack([base_b] * 4),   # constant per unit
        "C": np.column_stack([base_c] * 4),
    }
    data = build_panel(blocks, "A", 2)
    report = detect_time_homogeneity(data)
    assert report.t_th_mean == 4
    assert report.homogeneous_periods == (2, 3, 4)
    assert all(stat == 0.0 for stat, _ in report.per_period_tests.values())


def test_jump_after_first_post_period(rng):
    # stable at t=2, one comparison group jumps by 10 se at t=3
    n = 500
    jump = 10 / np.sqrt(n / 2)  # se of a mean difference is ~ sqrt(2/n)
    paths = {"B": [1.0, 1.0, 1.0 + jump, 1.0], "C": [0.0, 0.0, 0.0, 0.0]}
    data = panel_with_comparison_paths(rng, paths, n=n, t_star=2)
    report = detect_time_homogeneity(data)
    assert report.t_th_mean == 2
    assert report.homogeneous_periods == (2,)


def test_no_homogeneous_period(rng):
    paths = {"B": [0.0, 5.0, 5.0], "C": [1.0, 1.0, 1.0]}
    data = panel_with_comparison_paths(rng, paths, n=400, t_star=2)
    report = detect_time_homogeneity(data)
    assert report.t_th_mean == 0
    assert report.homogeneous_periods == ()


def test_contiguity_enforced(rng):
    # a failure at t=2 disqualifies later periods even if they sit at baseline
    paths = {"B": [0.0, 5.0, 0.0], "C": [0.0, 0.0, 0.0]}
    data = panel_with_comparison_paths(rng, paths, n=400, t_star=2)
    report = detect_time_homogeneity(data)
    assert report.t_th_mean == 0


def test_tolerance_mode(rng):
    paths = {"B": [1.0, 1.02, 1.4], "C": [0.0, 0.0, 0.0]}
    data = panel_with_comparison_paths(rng, paths, n=4000, t_star=2)
    report = detect_time_homogeneity(data, mode="tolerance", tol=0.1)
    assert report.mode == "tolerance"
    assert report.t_th_mean == 2  # 0.02 shift < 0.1 sd; 0.4 shift is not


def test_detection_needs_comparisons():
    blocks = {"A": np.zeros((10, 2))}
    blocks["A"][:, 1] = 1.0
    treatment = {"A": [0, 1]}
    from closecomp.panel import PanelDataset
    data = PanelDataset.from_arrays(np.arange(10), ["A"] * 10, blocks["A"], treatment)
    with pytest.raises(NoComparisonGroups):
        detect_time_homogeneity(data)


# ---------------------------------------------------------------------------
# before/after contrast
# ---------------------------------------------------------------------------

def test_tau_th_unchanged_outcomes(rng):
    vals = rng.normal(0, 1, 50)
    blocks = {"A": np.column_stack([vals, vals]),
              "B": rng.normal(0, 1, (50, 2))}
    data = build_panel(blocks, "A", 2)
    est = tau_th(data, t=2)
    assert est.att_hat == pytest.approx(0.0, abs=1e-12)
    assert est.std_error == pytest.approx(0.0, abs=1e-12)


def test_tau_th_estimates_shift(rng):
    n = 2000
    blocks = {"A": rng.normal(1, 1, (n, 2)), "B": rng.normal(0, 1, (n, 2))}
    blocks["A"][:, 1] += 1.5
    data = build_panel(blocks, "A", 2)
    est = tau_th(data, t=2)
    assert est.att_hat == pytest.approx(1.5, abs=4 * est.std_error)
    assert abs(est.influence_values.mean()) < 1e-10
    with pytest.raises(PeriodOutOfRange):
        tau_th(data, t=1)


# ---------------------------------------------------------------------------
# parametric transfer check
# ---------------------------------------------------------------------------

def test_default_basis_shapes():
    assert [name for _, name in default_transfer_basis(1)] == ["y"]
    assert [name for _, name in default_transfer_basis(2)] == ["y", "1"]
    assert [name for _, name in default_transfer_basis(3)] == ["y", "y^2", "1"]


def test_transfer_identity_basis_single_group(rng):
    n = 5000
    y1 = rng.normal(2, 1, n)
    blocks = {"A": rng.normal(1, 1, (n, 2)),
              "B": np.column_stack([y1, y1 + rng.normal(0, 0.05, n)])}
    blocks["A"][:, 1] += 1.0
    data = build_panel(blocks, "A", 2)
    res = lou_parametric_transfer_check(data)
    assert res.basis_names == ("y",)
    assert res.beta_hat[0] == pytest.approx(1.0, abs=1e-2)
    assert res.transfer_holds


def test_transfer_full_rank_three_groups(rng):
    n = 20000
    blocks = {"A": rng.normal(0.5, 1, (n, 2))}
    for g, mu in (("B", 0.0), ("C", 1.0), ("D", 2.0)):
        y1 = rng.normal(mu, 1, n)
        blocks[g] = np.column_stack([y1, y1 + rng.normal(0, 0.1, n)])
    blocks["A"][:, 1] += 1.0
    data = build_panel(blocks, "A", 2)
    res = lou_parametric_transfer_check(data)
    target = np.array([1.0, 0.0, 0.0])
    assert np.max(np.abs(res.beta_hat - target)) < 1e-2
    assert res.transfer_holds


def test_transfer_rank_deficient(rng):
    # comparison groups on the sphere mu^2 + var = 2: the y^2 column is
    # proportional to the constant column
    n = 20000
    blocks = {"A": rng.normal(0, 1, (n, 2))}
    for g, (mu, var) in (("B", (1.0, 1.0)), ("C", (0.5, 1.75)), ("D", (-0.5, 1.75))):
        y1 = rng.normal(mu, np.sqrt(var), n)
        blocks[g] = np.column_stack([y1, y1])
    blocks["A"][:, 1] += 1.0
    data = build_panel(blocks, "A", 2)
    with pytest.raises(RankDeficientPsi):
        lou_parametric_transfer_check(data)


def test_transfer_too_few_groups(rng):
    n = 100
    blocks = {"A": rng.normal(0, 1, (n, 2)), "B": rng.normal(0, 1, (n, 2))}
    blocks["A"][:, 1] += 1.0
    data = build_panel(blocks, "A", 2)
    basis = [(lambda y: y, "y"), (lambda y: y**2, "y^2"), (lambda y: np.ones_like(y), "1")]
    with pytest.raises(RankDeficientPsi):
        lou_parametric_transfer_check(data, basis=basis)
