"""Mean time-homogeneity detection and the before/after contrast.

A post period t is homogeneous when no comparison group's mean outcome has
moved from its level in the last pre-treatment period, jointly over all
periods up to t.  The window is a contiguous prefix of post periods by
construction; its right endpoint is 0 when even the first post period fails.
Within the window, the treated group's own before/after change identifies
the ATT under strategies that transfer comparison-group stability to the
treated group.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import NoComparisonGroups, PeriodOutOfRange, RankDeficientPsi
from .estimator import AttEstimate
from .panel import PanelDataset


@dataclass(frozen=True)
class TimeHomogReport:
    t_th_mean: int               # 0 when no period qualifies
    homogeneous_periods: tuple
    per_period_tests: dict       # t -> (statistic, p_value or standardized max change)
    mode: str                    # "test" | "tolerance"

    def to_dict(self) -> dict:
        return {
            "t_th_mean": self.t_th_mean,
            "homogeneous_periods": list(self.homogeneous_periods),
            "per_period_tests": {str(t): list(v) for t, v in self.per_period_tests.items()},
            "mode": self.mode,
        }


def _joint_wald(data: PanelDataset, comparison_groups, t_star: int, t: int):
    """Wald statistic for E[Y_s | G=g] = E[Y_{t*-1} | G=g], all g, s <= t.

    Uses per-unit difference vectors within each group; groups are
    independent so their quadratic forms add.  All-zero differences give a
    zero statistic (the exactly-constant case).
    """
    m = t - t_star + 1
    stat = 0.0
    dof = 0
    for g in comparison_groups:
        base = data.outcome(g, t_star - 1)
        block = data.outcome_block(g, range(t_star, t + 1))
        diffs = block - base[:, None]          # (n_g, m)
        n_g = diffs.shape[0]
        dbar = diffs.mean(axis=0)
        if np.allclose(diffs, 0.0):
            dof += m
            continue
        cov = np.atleast_2d(np.cov(diffs, rowvar=False, ddof=1)) / n_g
        try:
            contrib = float(dbar @ np.linalg.solve(cov, dbar))
        except np.linalg.LinAlgError:
            contrib = float(dbar @ np.linalg.pinv(cov) @ dbar)
        stat += contrib
        dof += m
    return stat, dof


def detect_time_homogeneity(data: PanelDataset, mode: str = "test",
                            alpha: float = 0.05, tol: float = 0.05,
                            t_star: int | None = None) -> TimeHomogReport:
    """Largest contiguous post window with stable comparison-group means.

    In test mode, period t qualifies when the joint Wald test over all
    comparison groups and all periods up to t fails to reject at ``alpha``.
    In tolerance mode it qualifies when every mean change, standardized by
    the group's pre-period standard deviation, stays below ``tol``.
    """
    if t_star is None:
        t_star = data.t_star
    comparisons = data.comparison_groups
    if not comparisons:
        raise NoComparisonGroups("time-homogeneity detection needs comparison groups")

    per_period = {}
    t_th = 0
    stopped = False
    for t in range(t_star, data.T + 1):
        if mode == "test":
            stat, dof = _joint_wald(data, comparisons, t_star, t)
            p = float(stats.chi2.sf(stat, dof))
            per_period[t] = (float(stat), p)
            ok = p >= alpha
        else:
            worst = 0.0
            for g in comparisons:
                base = data.outcome(g, t_star - 1)
                sd = float(np.std(base, ddof=1))
                block = data.outcome_block(g, range(t_star, t + 1))
                change = np.abs(block.mean(axis=0) - base.mean())
                worst = max(worst, float(np.max(change / sd if sd > 0 else change)))
            per_period[t] = (worst, float(worst < tol))
            ok = worst < tol
        if ok and not stopped:
            t_th = t
        else:
            stopped = True  # contiguity: an isolated later pass does not count
    homogeneous = tuple(t for t in range(t_star, data.T + 1) if t <= t_th)
    return TimeHomogReport(t_th_mean=t_th, homogeneous_periods=homogeneous,
                           per_period_tests=per_period, mode=mode)


def tau_th(data: PanelDataset, t: int, alpha: float = 0.05,
           treated_group=None, keep_influence: bool = True) -> AttEstimate:
    """Before/after contrast for the treated group: mean of Y_t - Y_{t*-1}.

    The caller is responsible for t lying in a certified homogeneity window
    (or for overriding deliberately).  The variance uses the panel pairing:
    Var(Y_t - Y_{t*-1} | G=1) / n_1.
    """
    g1 = data.treated_group if treated_group is None else treated_group
    t_star = data.t_star_of(g1)
    if not t_star <= t <= data.T:
        raise PeriodOutOfRange(f"period {t} outside post-treatment range {t_star}..{data.T}")
    rows = data.group_rows(g1)
    diffs = data.outcomes[rows, t - 1] - data.outcomes[rows, t_star - 2]
    est = float(diffs.mean())
    n = data.n_units
    p1 = rows.size / n
    v_hat = float(np.var(diffs, ddof=1)) / p1
    se = float(np.sqrt(v_hat / n))
    z = stats.norm.ppf(1 - alpha / 2)
    influence = None
    if keep_influence:
        influence = np.zeros(n)
        influence[rows] = (diffs - est) / p1
    return AttEstimate(
        att_hat=est, variance=v_hat, std_error=se,
        ci=(est - z * se, est + z * se), alpha=alpha, n_1=int(rows.size),
        n_selected=0, period=t, estimand="tau_th", selection=None,
        influence_values=influence,
        diagnostics={"baseline_period": t_star - 1},
    )


# ---------------------------------------------------------------------------
# parametric transfer check for lagged-outcome designs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferCheck:
    beta_hat: np.ndarray
    transfer_holds: bool
    singular_values: np.ndarray    # of the column-normalized moment matrix
    basis_names: tuple
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat.tolist(),
            "transfer_holds": self.transfer_holds,
            "singular_values": self.singular_values.tolist(),
            "basis": list(self.basis_names),
            "tolerance": self.tolerance,
        }


def default_transfer_basis(n_comparison_groups: int):
    """Raw polynomial basis with the identity first and the constant last.

    One function per comparison group: y, y^2, ..., y^(k-1), 1.
    """
    k = n_comparison_groups
    funcs = [(lambda y: y, "y")]
    for power in range(2, k):
        funcs.append((lambda y, p=power: y**p, f"y^{power}"))
    if k >= 2:
        funcs.append((lambda y: np.ones_like(y), "1"))
    return funcs


def lou_parametric_transfer_check(data: PanelDataset, basis=None,
                                  rank_tol: float = 0.05,
                                  beta_tol: float = 1e-2,
                                  t: int | None = None) -> TransferCheck:
    """Check that comparison-group mean stability pins an identity transition.

    Builds the group-by-basis moment matrix of the last pre-period outcomes
    and solves it against the comparison groups' period-t means.  With full
    column rank and stable means, the unique solution puts weight one on the
    identity basis function, so mean stability transfers to the treated group
    under the parametric lagged-outcome model.  The basis must include the
    identity (the default puts it first).

    Rank deficiency is judged on the column-normalized moment matrix: the
    smallest singular value below ``rank_tol`` raises RankDeficientPsi.
    """
    t_star = data.t_star
    if t is None:
        t = t_star
    comparisons = data.comparison_groups
    if not comparisons:
        raise NoComparisonGroups("transfer check needs comparison groups")
    if basis is None:
        basis = default_transfer_basis(len(comparisons))
    funcs = [b[0] if isinstance(b, tuple) else b for b in basis]
    names = tuple(b[1] if isinstance(b, tuple) else getattr(b, "__name__", "f")
                  for b in basis)
    j_b = len(funcs)
    if len(comparisons) < j_b:
        raise RankDeficientPsi(
            f"{len(comparisons)} comparison groups cannot identify {j_b} basis coefficients"
        )

    psi = np.empty((len(comparisons), j_b))
    rhs = np.empty(len(comparisons))
    for i, g in enumerate(comparisons):
        y_pre = data.outcome(g, t_star - 1)
        psi[i] = [float(np.mean(f(y_pre))) for f in funcs]
        rhs[i] = float(np.mean(data.outcome(g, t)))

    norms = np.linalg.norm(psi, axis=0)
    if np.any(norms == 0):
        raise RankDeficientPsi("a basis column is identically zero across groups")
    svals = np.linalg.svd(psi / norms, compute_uv=False)
    if svals[-1] < rank_tol:
        raise RankDeficientPsi(
            f"moment matrix is numerically rank deficient "
            f"(smallest normalized singular value {svals[-1]:.3g} < {rank_tol})"
        )
    beta, *_ = np.linalg.lstsq(psi, rhs, rcond=None)
    target = np.zeros(j_b)
    target[0] = 1.0
    holds = bool(np.max(np.abs(beta - target)) <= beta_tol)
    return TransferCheck(beta_hat=beta, transfer_holds=holds,
                         singular_values=svals, basis_names=names,
                         tolerance=beta_tol)
