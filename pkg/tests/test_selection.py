import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closecomp.distance import DistanceReport
from closecomp.errors import ConfigError, NoCloseComparisonGroups
from closecomp.selection import (
    KERNELS,
    default_bandwidth,
    kernel_eval,
    select_groups,
)


def reports(distances, metric="wasserstein"):
    return [DistanceReport(f"g{i+2}", metric, d) for i, d in enumerate(distances)]


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def test_kernel_values():
    assert kernel_eval("uniform", 0.5) == 1.0
    assert kernel_eval("uniform", 1.5) == 0.0
    assert kernel_eval("epanechnikov", 0.0) == 0.75
    assert kernel_eval("triangular", -0.25) == 0.75


def test_kernel_boundary_semantics():
    # uniform includes |u| = 1; kernels vanishing at 1 exclude it
    assert kernel_eval("uniform", 1.0) == 1.0
    assert kernel_eval("epanechnikov", 1.0) == 0.0
    assert kernel_eval("triangular", 1.0) == 0.0


@given(st.sampled_from(sorted(KERNELS)), st.floats(-5, 5))
@settings(max_examples=200, deadline=None)
def test_kernel_shape_properties(kind, u):
    val = kernel_eval(kind, u)
    assert val >= 0.0
    assert val == pytest.approx(kernel_eval(kind, -u), abs=1e-15)  # symmetric
    if abs(u) > 1:
        assert val == 0.0                                          # compact support
    assert kernel_eval(kind, 0.0) > 0.0
    assert val <= 1.0                                              # bounded


def test_unknown_kernel():
    with pytest.raises(ConfigError):
        kernel_eval("gaussian", 0.0)


# ---------------------------------------------------------------------------
# bandwidth
# ---------------------------------------------------------------------------

def test_default_bandwidth_examples():
    assert default_bandwidth(4096, c=0.5) == pytest.approx(0.125, abs=1e-15)
    assert default_bandwidth(1, c=0.5) == pytest.approx(0.5, abs=1e-15)
    assert default_bandwidth(4096) / default_bandwidth(2**18) == pytest.approx(2.0)


def test_default_bandwidth_validation():
    with pytest.raises(ConfigError):
        default_bandwidth(0)
    with pytest.raises(ConfigError):
        default_bandwidth(100, c=-1.0)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def test_select_groups_uniform_example():
    reps = reports([0.02, 0.03, 2.1])
    p = {"g2": 1 / 3, "g3": 1 / 3, "g4": 1 / 3}
    res = select_groups(reps, p, kernel="uniform", h=0.125)
    assert res.selected == ("g2", "g3")
    assert res.weights["g2"] == pytest.approx(0.5)
    assert res.weights["g3"] == pytest.approx(0.5)
    assert res.weights["g4"] == 0.0


def test_select_groups_single_group_weight_one():
    reps = reports([0.0, 5.0, 9.0])
    p = {"g2": 0.6, "g3": 0.2, "g4": 0.2}
    res = select_groups(reps, p, kernel="epanechnikov", h=0.2)
    assert res.selected == ("g2",)
    assert res.weights["g2"] == pytest.approx(1.0)


def test_select_groups_all_far():
    reps = reports([0.9, 0.4, 2.5])
    p = {"g2": 1 / 3, "g3": 1 / 3, "g4": 1 / 3}
    with pytest.raises(NoCloseComparisonGroups) as exc:
        select_groups(reps, p, kernel="uniform", h=0.3)
    err = exc.value
    assert [g for g, _ in err.nearest] == ["g3", "g2", "g4"]
    assert err.min_bandwidth == pytest.approx(0.4)


def test_select_groups_weight_proportional_to_p():
    reps = reports([0.0, 0.0])
    p = {"g2": 0.75, "g3": 0.25}
    res = select_groups(reps, p, kernel="uniform", h=0.1)
    assert res.weights["g2"] == pytest.approx(0.75)
    assert res.weights["g3"] == pytest.approx(0.25)


def test_select_groups_auto_bandwidth():
    reps = reports([0.05, 2.0])
    res = select_groups(reps, {"g2": 0.5, "g3": 0.5}, kernel="uniform",
                        n_min=4096, bandwidth_scale=0.5)
    assert res.bandwidth == pytest.approx(0.125)
    assert res.selected == ("g2",)
    with pytest.raises(ConfigError):
        select_groups(reps, {"g2": 0.5, "g3": 0.5})  # neither h nor n_min


@given(st.lists(st.floats(0, 3), min_size=1, max_size=8),
       st.floats(0.05, 2.0),
       st.sampled_from(sorted(KERNELS)))
@settings(max_examples=150, deadline=None)
def test_weights_normalize_and_match_selection(distances, h, kind):
    reps = reports(distances)
    p = {r.group: 1 / len(reps) for r in reps}
    try:
        res = select_groups(reps, p, kernel=kind, h=h)
    except NoCloseComparisonGroups:
        assert all(kernel_eval(kind, d / h) == 0.0 for d in distances)
        return
    assert sum(res.weights.values()) == pytest.approx(1.0)
    for rep in reps:
        positive = res.weights[rep.group] > 0
        assert positive == (rep.group in res.selected)
    assert set(res.selected) <= {r.group for r in reps}


@given(st.lists(st.floats(0, 3), min_size=1, max_size=8),
       st.floats(0.05, 2.0), st.floats(1.0, 4.0))
@settings(max_examples=100, deadline=None)
def test_uniform_selection_monotone_in_bandwidth(distances, h, factor):
    reps = reports(distances)
    p = {r.group: 1 / len(reps) for r in reps}
    def selected(bw):
        try:
            return set(select_groups(reps, p, kernel="uniform", h=bw).selected)
        except NoCloseComparisonGroups:
            return set()
    assert selected(h) <= selected(h * factor)


def test_true_distance_selection_recovers_gstar_exactly():
    # with population distances, any h < d_min selects exactly G*
    d_min = 0.8
    reps = reports([0.0, 0.0, d_min, 1.7])
    p = {r.group: 0.25 for r in reps}
    for h in (0.05, 0.3, 0.79):
        res = select_groups(reps, p, kernel="uniform", h=h)
        assert set(res.selected) == {"g2", "g3"}
