"""Standardized distances between the treated group and candidate comparisons.

Two plug-in metrics:

* ``wasserstein_distance`` — grid average of squared quantile differences in
  the last pre-treatment period, divided by sqrt of the average variance.
  Note the numerator is a *squared* distance while the denominator is a
  standard-deviation scale; that asymmetry is deliberate and kept as is.
* ``mean_distance`` — Mahalanobis-type distance between S-period mean
  vectors with the pooled covariance (the standardized difference when S=1).

``jackknife_distance_se`` provides a delete-one-unit standard error for
diagnostics only; it never feeds selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    GridMismatch,
    SingularPooledCovariance,
    TooFewUnits,
    ZeroScale,
)
from .panel import GroupProfile, PanelDataset, profile_groups

RCOND_THRESHOLD = 1e-10
RIDGE_FACTOR = 1e-8


@dataclass(frozen=True)
class DistanceReport:
    group: object
    metric: str            # "wasserstein" | "mean"
    d_hat: float
    components: dict = field(default_factory=dict)
    se_proxy: float | None = None

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "metric": self.metric,
            "d_hat": self.d_hat,
            "components": {k: float(v) for k, v in self.components.items()},
            "se_proxy": self.se_proxy,
        }


def wasserstein_distance(profile_1: GroupProfile, profile_g: GroupProfile) -> DistanceReport:
    """Standardized squared-Wasserstein plug-in distance on the quantile grid."""
    if profile_1.grid.shape != profile_g.grid.shape or not np.array_equal(
        profile_1.grid, profile_g.grid
    ):
        raise GridMismatch("profiles were built on different quantile grids")
    diff = profile_1.quantiles - profile_g.quantiles
    numerator = float(np.mean(diff**2))
    scale = float(np.sqrt((profile_1.var_last + profile_g.var_last) / 2.0))
    if scale == 0.0:
        if numerator == 0.0:
            return DistanceReport(profile_g.group, "wasserstein", 0.0,
                                  {"numerator": 0.0, "scale": 0.0})
        raise ZeroScale("both group variances are zero but quantiles differ")
    return DistanceReport(profile_g.group, "wasserstein", numerator / scale,
                          {"numerator": numerator, "scale": scale})


def mean_distance(profile_1: GroupProfile, profile_g: GroupProfile,
                  ridge: bool = False) -> DistanceReport:
    """Mahalanobis distance between pre-period mean vectors.

    ``ridge`` adds ``1e-8 * trace/S`` to the pooled covariance diagonal for
    near-singular cases; by default near-singularity raises.
    """
    if profile_1.means.shape != profile_g.means.shape:
        raise DimensionMismatch("profiles use different numbers of pre-periods")
    delta = profile_g.means - profile_1.means
    pooled = (profile_1.cov + profile_g.cov) / 2.0
    S = pooled.shape[0]
    if ridge:
        pooled = pooled + np.eye(S) * (RIDGE_FACTOR * np.trace(pooled) / S)
    if np.allclose(delta, 0.0):
        return DistanceReport(profile_g.group, "mean", 0.0,
                              {"numerator": 0.0, "scale": float(np.trace(pooled) / S)})
    eigvals = np.linalg.eigvalsh(pooled)
    if eigvals[0] <= 0 or eigvals[0] / eigvals[-1] < RCOND_THRESHOLD:
        raise SingularPooledCovariance(
            f"pooled covariance is numerically singular (rcond ~ "
            f"{max(eigvals[0], 0.0) / eigvals[-1] if eigvals[-1] > 0 else 0.0:.2e}); "
            "consider ridge=True"
        )
    qf = float(delta @ np.linalg.solve(pooled, delta))
    return DistanceReport(profile_g.group, "mean", float(np.sqrt(max(qf, 0.0))),
                          {"numerator": qf, "scale": float(np.trace(pooled) / S)})


def compute_distances(profiles: dict, treated_group, metric: str = "wasserstein",
                      groups=None, ridge: bool = False) -> list:
    """DistanceReports from the treated profile to every candidate group."""
    p1 = profiles[treated_group]
    if groups is None:
        groups = [g for g in profiles if g != treated_group]
    fn = {"wasserstein": wasserstein_distance,
          "mean": lambda a, b: mean_distance(a, b, ridge=ridge)}[metric]
    return [fn(p1, profiles[g]) for g in groups]


# ---------------------------------------------------------------------------
# jackknife standard error (diagnostic only)
# ---------------------------------------------------------------------------

def _loo_quantile_matrix(sorted_vals: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """(n, J) matrix of leave-one-out quantiles from one sorted sample.

    Removing the value at sorted rank r shifts every order statistic at or
    above r up by one; the left-continuous quantile of the remaining n-1
    points at u is the order statistic ceil((n-1)u).
    """
    n = sorted_vals.shape[0]
    idx = np.ceil((n - 1) * grid).astype(int) - 1  # 0-based into the n-1 sample
    ranks = np.arange(n)[:, None]
    take = idx[None, :] + (idx[None, :] >= ranks)
    return sorted_vals[take]


def _loo_mean_var(values: np.ndarray):
    """Leave-one-out means and ddof-1 variances of a 1-d sample."""
    n = values.shape[0]
    total = values.sum()
    sq = (values**2).sum()
    means = (total - values) / (n - 1)
    variances = (sq - values**2 - (n - 1) * means**2) / (n - 2)
    return means, np.maximum(variances, 0.0)


def _wasserstein_loo(values_own: np.ndarray, other_q: np.ndarray, other_var: float,
                     grid: np.ndarray) -> np.ndarray:
    order = np.argsort(values_own, kind="stable")
    sorted_vals = values_own[order]
    loo_q = _loo_quantile_matrix(sorted_vals, grid)
    _, loo_var = _loo_mean_var(sorted_vals)
    numer = np.mean((loo_q - other_q[None, :]) ** 2, axis=1)
    scale = np.sqrt((loo_var + other_var) / 2.0)
    d = np.full(values_own.shape[0], np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_sorted = np.where(scale > 0, numer / scale, np.where(numer == 0, 0.0, np.nan))
    d[order] = d_sorted
    return d


def _mean_metric_loo(block_own: np.ndarray, other_mean: np.ndarray,
                     other_cov: np.ndarray, ridge: bool) -> np.ndarray:
    n, S = block_own.shape
    col_sum = block_own.sum(axis=0)
    cross = block_own.T @ block_own
    out = np.empty(n)
    for i in range(n):
        x = block_own[i]
        mean_i = (col_sum - x) / (n - 1)
        delta = mean_i - other_mean
        if np.allclose(delta, 0.0):
            out[i] = 0.0
            continue
        cov_i = (cross - np.outer(x, x) - (n - 1) * np.outer(mean_i, mean_i)) / (n - 2)
        pooled = (cov_i + other_cov) / 2.0
        if ridge:
            pooled = pooled + np.eye(S) * (RIDGE_FACTOR * np.trace(pooled) / S)
        try:
            out[i] = np.sqrt(max(float(delta @ np.linalg.solve(pooled, delta)), 0.0))
        except np.linalg.LinAlgError:
            raise SingularPooledCovariance(
                "leave-one-out pooled covariance is singular; consider ridge=True")
    return out


def jackknife_distance_se(data: PanelDataset, group, metric: str = "wasserstein",
                          S: int = 1, J: int = 99, t_star: int | None = None,
                          treated_group=None, ridge: bool = False,
                          min_units: int = 10) -> float:
    """Delete-one-unit jackknife SE of the distance between group 1 and ``group``.

    Units are left out one at a time within each of the two groups (the other
    group's summaries stay fixed), and the two per-group jackknife variances
    add.  Diagnostic only.
    """
    g1 = data.treated_group if treated_group is None else treated_group
    if t_star is None:
        t_star = data.t_star_of(g1)
    n1, ng = data.group_size(g1), data.group_size(group)
    if min(n1, ng) < min_units:
        raise TooFewUnits(f"need at least {min_units} units per group, "
                          f"got n_1={n1}, n_g={ng}")

    profiles = profile_groups(data, S=S, J=J, t_star=t_star, groups=[g1, group])
    p1, pg = profiles[g1], profiles[group]
    grid = p1.grid

    var_total = 0.0
    for own, other in ((g1, pg), (group, p1)):
        block = data.outcome_block(own, range(t_star - S, t_star))
        if metric == "wasserstein":
            d_loo = _wasserstein_loo(block[:, -1], other.quantiles, other.var_last, grid)
        elif metric == "mean":
            d_loo = _mean_metric_loo(block, other.means, other.cov, ridge)
        else:
            raise ValueError(f"unknown metric {metric!r}")
        if np.any(np.isnan(d_loo)):
            raise ZeroScale("leave-one-out scale collapsed to zero with differing quantiles")
        m = d_loo.shape[0]
        var_total += (m - 1) / m * float(((d_loo - d_loo.mean()) ** 2).sum())
    return float(np.sqrt(var_total))
