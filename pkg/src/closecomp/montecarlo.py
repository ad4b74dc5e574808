"""Monte Carlo harness: per-replication pipeline runs and the robustness tables.

Each replication draws a fresh dataset from a per-rep seed mixed out of the
master seed, runs the configured pipeline, and contributes one estimate.
Results are stored by replication index, so aggregation is identical under
any execution order or thread count.  A cell of a robustness table is one
(preset, metric, estimand) Monte Carlo run judged by the 3 * mc_se
unbiasedness convention.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import PipelineConfig
from .dgp import DgpSpec, Preset, compute_truth, counterexample_presets, generate
from .errors import EstimationError, MissingPresetForCell
from .estimator import (
    att_estimate,
    multiply_robust_att,
    oracle_att,
    placebo_test,
    run_selection,
)
from .rng import mix
from .timehomog import tau_th

ESTIMANDS = ("att", "tau_mr", "tau_th", "placebo", "oracle_gap")


@dataclass(frozen=True)
class McSummary:
    spec: DgpSpec
    config: PipelineConfig
    reps: int
    estimand: str
    mean_estimate: float
    bias: float                  # mean_estimate - att_true
    mc_se: float                 # sd(estimates) / sqrt(reps)
    rmse: float                  # about att_true
    coverage: float              # CI coverage of att_true (nan if no CI)
    selection_exact_rate: float  # fraction of reps with exact set recovery
    expected_value: float | None  # population limit of the estimator
    expected_bias: float | None
    n_failures: int
    failures: tuple
    per_rep: np.ndarray | None = None

    @property
    def target_gap(self) -> float:
        """Distance between the MC mean and the predicted population limit."""
        if self.expected_value is None:
            return float("nan")
        return self.mean_estimate - self.expected_value

    def to_dict(self) -> dict:
        return {
            "preset": self.spec.counterexample,
            "strategy": self.spec.strategy,
            "estimand": self.estimand,
            "reps": self.reps,
            "n_per_group": self.spec.n_per_group,
            "mean_estimate": self.mean_estimate,
            "bias": self.bias,
            "mc_se": self.mc_se,
            "rmse": self.rmse,
            "coverage": self.coverage,
            "selection_exact_rate": self.selection_exact_rate,
            "expected_value": self.expected_value,
            "expected_bias": self.expected_bias,
            "n_failures": self.n_failures,
        }


def expected_estimand_key(estimand: str, config: PipelineConfig, spec: DgpSpec) -> str:
    """known_bias key matching what the configured pipeline estimates."""
    if estimand == "att":
        if spec.params.get("selection_set"):
            return "att_selected"
        if config.metric == "mean":
            return f"tau_mean_{config.S}"
        return "tau_dist_1"
    if estimand in ("tau_mr", "tau_th"):
        return estimand
    return ""


def _true_selection_set(truth, config: PipelineConfig):
    if config.metric == "mean":
        return set(truth.gstar_mean.get(config.S, ()))
    return set(truth.gstar_dist.get(1, ()))


def _one_rep(spec: DgpSpec, config: PipelineConfig, estimand: str, rep: int,
             master_seed: int):
    rep_spec = replace(spec, seed=mix(master_seed, rep))
    data, truth = generate(rep_spec)
    exact = np.nan
    lo = hi = np.nan
    if estimand == "tau_th":
        est = tau_th(data, t=data.t_star, alpha=config.alpha, keep_influence=False)
        value, lo, hi = est.att_hat, est.ci[0], est.ci[1]
    else:
        selection = run_selection(data, config)
        exact = float(set(selection.selected) == _true_selection_set(truth, config))
        if estimand == "att":
            est = att_estimate(data, selection, alpha=config.alpha, keep_influence=False)
            value, lo, hi = est.att_hat, est.ci[0], est.ci[1]
        elif estimand == "tau_mr":
            est = multiply_robust_att(data, selection, alpha=config.alpha,
                                      keep_influence=False)
            value, lo, hi = est.att_hat, est.ci[0], est.ci[1]
        elif estimand == "placebo":
            value = placebo_test(data, selection).p_value
        elif estimand == "oracle_gap":
            est = att_estimate(data, selection, alpha=config.alpha, keep_influence=False)
            oracle = oracle_att(data, truth.gstar_true, alpha=config.alpha,
                                keep_influence=False)
            value = np.sqrt(data.n_units) * abs(est.att_hat - oracle.att_hat)
        else:
            raise ValueError(f"unknown estimand {estimand!r}")
    return value, lo, hi, exact


def run_mc(spec: DgpSpec, config: PipelineConfig, reps: int, master_seed: int = 0,
           estimand: str = "att", n_jobs: int = 1, max_failures: int = 0,
           keep_per_rep: bool = False) -> McSummary:
    """Monte Carlo distribution of one estimand under one DGP.

    Per-rep seeds are mixed from (master_seed, rep); rep r's dataset does not
    depend on how many workers run.  Failed reps are recorded with their
    index; exceeding ``max_failures`` aborts.
    """
    if reps < 2:
        raise EstimationError("need at least 2 replications")
    spec.validate()
    config.validate()

    values = np.full(reps, np.nan)
    lows = np.full(reps, np.nan)
    highs = np.full(reps, np.nan)
    exacts = np.full(reps, np.nan)
    failures = []

    def work(rep):
        try:
            return rep, _one_rep(spec, config, estimand, rep, master_seed), None
        except Exception as err:  # noqa: BLE001 - budget decides below
            return rep, None, err

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, range(reps)))
    else:
        results = [work(rep) for rep in range(reps)]

    for rep, payload, err in results:
        if err is not None:
            failures.append((rep, f"{type(err).__name__}: {err}"))
            continue
        values[rep], lows[rep], highs[rep], exacts[rep] = payload
    if len(failures) > max_failures:
        raise EstimationError(
            f"{len(failures)} replication(s) failed, budget {max_failures}; "
            f"first: rep {failures[0][0]}: {failures[0][1]}"
        )

    ok = ~np.isnan(values)
    vals = values[ok]
    n_ok = int(ok.sum())
    mean_est = float(vals.mean())
    mc_se = float(vals.std(ddof=1) / np.sqrt(n_ok))
    att = spec.att_true
    rmse = float(np.sqrt(np.mean((vals - att) ** 2)))
    cis = ~np.isnan(lows[ok])
    coverage = (
        float(np.mean((lows[ok][cis] <= att) & (att <= highs[ok][cis])))
        if cis.any() else float("nan")
    )
    ex = exacts[ok]
    sel_rate = float(np.nanmean(ex)) if np.any(~np.isnan(ex)) else float("nan")

    truth = compute_truth(spec)
    key = expected_estimand_key(estimand, config, spec)
    expected_value = truth.estimands.get(key) if key else None
    expected_bias = truth.known_bias.get(key) if key else None

    return McSummary(
        spec=spec, config=config, reps=reps, estimand=estimand,
        mean_estimate=mean_est, bias=mean_est - att, mc_se=mc_se, rmse=rmse,
        coverage=coverage, selection_exact_rate=sel_rate,
        expected_value=expected_value, expected_bias=expected_bias,
        n_failures=len(failures), failures=tuple(failures),
        per_rep=values if keep_per_rep else None,
    )


def run_preset_mc(preset: Preset, reps: int, master_seed: int = 0,
                  estimand: str | None = None, n_per_group: int | None = None,
                  config_overrides: dict | None = None, **kwargs) -> McSummary:
    """run_mc with a preset's recommended pipeline configuration."""
    spec = preset.spec
    if n_per_group is not None:
        spec = replace(spec, n_per_group=n_per_group)
    overrides = {**preset.pipeline, **(config_overrides or {})}
    config = PipelineConfig(**overrides).validate()
    target = estimand or preset.target_estimand
    mc_estimand = {"tau_th": "tau_th", "tau_mr": "tau_mr"}.get(target, "att")
    return run_mc(spec, config, reps, master_seed, estimand=mc_estimand, **kwargs)


# ---------------------------------------------------------------------------
# robustness tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellResult:
    row: str
    col: str
    preset: str
    estimand: str
    bias: float
    mc_se: float
    expected_bias: float | None
    mark: str            # computed: check / cross
    expected_mark: str
    consistent: bool     # bias within 3 mc_se of the analytic bias

    @property
    def agrees(self) -> bool:
        return self.mark == self.expected_mark and self.consistent


@dataclass(frozen=True)
class RobustnessTable:
    name: str
    rows: tuple
    cols: tuple
    cells: dict          # (row, col) -> CellResult
    reps: int

    @property
    def pattern_matches(self) -> bool:
        return all(cell.agrees for cell in self.cells.values())

    def render_markdown(self) -> str:
        check, cross = "✓", "✗"
        lines = [f"### {self.name}: empirical bias by cell "
                 f"({self.reps} replications; {check} means |bias| < 3 mc_se)",
                 "", "| strategy | " + " | ".join(self.cols) + " |",
                 "|" + "---|" * (len(self.cols) + 1)]
        for row in self.rows:
            rendered = []
            for col in self.cols:
                cell = self.cells[(row, col)]
                if cell.mark == "check":
                    rendered.append(f"{check} ({cell.bias:+.4f})")
                else:
                    rendered.append(f"{cross} ({cell.bias:+.4f})")
            lines.append(f"| {row} | " + " | ".join(rendered) + " |")
        lines.append("")
        ok = "matches" if self.pattern_matches else "DOES NOT match"
        lines.append(f"Pattern {ok} the published table.")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "table": self.name,
            "reps": self.reps,
            "pattern_matches": self.pattern_matches,
            "cells": {
                f"{row}/{col}": {
                    "preset": c.preset, "estimand": c.estimand, "bias": c.bias,
                    "mc_se": c.mc_se, "expected_bias": c.expected_bias,
                    "mark": c.mark, "expected_mark": c.expected_mark,
                    "consistent": c.consistent,
                }
                for (row, col), c in self.cells.items()
            },
        }


# cell -> (preset, pipeline overrides, estimand key, expected mark)
_TABLES = {
    "prop1": {
        "rows": ("did", "cic", "lou", "ife", "latent"),
        "cols": ("mean(1)", "mean(S)", "dist(S)"),
        "cells": {
            ("did", "mean(1)"): ("did_matched", {"metric": "mean", "S": 1}, "tau_mean_1", "check"),
            ("did", "mean(S)"): ("did_matched", {"metric": "mean", "S": 2}, "tau_mean_2", "check"),
            ("did", "dist(S)"): ("did_matched", {"metric": "wasserstein", "S": 1}, "tau_dist_1", "check"),
            ("cic", "mean(1)"): ("cic_prop1ii", {"metric": "mean", "S": 1}, "tau_mean_1", "cross"),
            ("cic", "mean(S)"): ("cic_prop1ii", {"metric": "mean", "S": 2}, "tau_mean_2", "cross"),
            ("cic", "dist(S)"): ("cic_dist_matched", {"metric": "wasserstein", "S": 1}, "tau_dist_1", "check"),
            ("lou", "mean(1)"): ("lou_prop1iii", {"metric": "mean", "S": 1}, "tau_mean_1", "cross"),
            ("lou", "mean(S)"): ("lou_prop1iii", {"metric": "mean", "S": 2}, "tau_mean_2", "cross"),
            ("lou", "dist(S)"): ("lou_dist_matched", {"metric": "wasserstein", "S": 1}, "tau_dist_1", "check"),
            ("ife", "mean(1)"): ("ife_thm1iv", {"metric": "mean", "S": 1}, "tau_mean_1", "cross"),
            ("ife", "mean(S)"): ("ife_mean2", {"metric": "mean", "S": 2}, "tau_mean_2", "check"),
            ("ife", "dist(S)"): ("ife_dist", {"metric": "wasserstein", "S": 1}, "tau_dist_1", "check"),
            ("latent", "mean(1)"): ("latent_thm1v", {"metric": "mean", "S": 1}, "tau_mean_1", "cross"),
            ("latent", "mean(S)"): ("latent_meanS", {"metric": "mean", "S": 2}, "tau_mean_2", "cross"),
            ("latent", "dist(S)"): ("latent_dist", {"metric": "wasserstein", "S": 1}, "tau_dist_1", "check"),
        },
    },
    "prop2": {
        "rows": ("linear_trend", "dynamic_panel"),
        "cols": ("mean(1)", "dist(1)", "mean(S)", "dist(S)"),
        "cells": {
            ("linear_trend", "mean(1)"): ("lintrend_thm1iv", {"metric": "mean", "S": 1}, "tau_mean_1", "cross"),
            ("linear_trend", "dist(1)"): ("lintrend_thm1iv", {"metric": "wasserstein", "S": 1}, "tau_dist_1", "cross"),
            ("linear_trend", "mean(S)"): ("lintrend_S2", {"metric": "mean", "S": 2}, "tau_mean_2", "check"),
            ("linear_trend", "dist(S)"): ("lintrend_S2", {"metric": "wasserstein", "S": 1}, "tau_dist_1", "check"),
            ("dynamic_panel", "mean(1)"): ("dynpanel_prop2", {"metric": "mean", "S": 1}, "tau_mean_1", "cross"),
            ("dynamic_panel", "dist(1)"): ("dynpanel_prop2", {"metric": "wasserstein", "S": 1}, "tau_dist_1", "cross"),
            ("dynamic_panel", "mean(S)"): ("dynpanel_S2", {"metric": "mean", "S": 2}, "tau_mean_2", "check"),
            ("dynamic_panel", "dist(S)"): ("dynpanel_S2", {"metric": "wasserstein", "S": 1}, "tau_dist_1", "check"),
        },
    },
    "prop3": {
        "rows": ("did", "cic", "lou", "ife", "latent"),
        "cols": ("tau_th",),
        "cells": {
            ("did", "tau_th"): ("did_prop3", {}, "tau_th", "check"),
            ("cic", "tau_th"): ("cic_prop3ii", {}, "tau_th", "cross"),
            ("lou", "tau_th"): ("lou_prop3iii", {}, "tau_th", "cross"),
            ("ife", "tau_th"): ("ife_prop3", {}, "tau_th", "check"),
            ("latent", "tau_th"): ("latent_prop3v", {}, "tau_th", "cross"),
        },
    },
}


def robustness_table(name: str, reps: int = 2000, master_seed: int = 0,
                     n_per_group: int = 1000, n_jobs: int = 1) -> RobustnessTable:
    """Reproduce one of the three published robustness tables empirically.

    Each cell runs ``reps`` replications of its preset with the column's
    metric and reports the bias of the relevant estimand; a cell passes when
    its check/cross status and (for crosses) the analytic bias both agree
    with the published values at the 3 * mc_se level.
    """
    if name not in _TABLES:
        raise MissingPresetForCell(f"unknown table {name!r}; choose from {sorted(_TABLES)}")
    layout = _TABLES[name]
    presets = counterexample_presets(n_per_group=n_per_group)
    cells = {}
    for (row, col), (preset_name, overrides, estimand_key, expected_mark) in layout["cells"].items():
        if preset_name not in presets:
            raise MissingPresetForCell(f"no preset for cell ({row}, {col})")
        pre = presets[preset_name]
        cell_seed = mix(master_seed, hash_cell(name, row, col))
        summary = run_preset_mc(pre, reps=reps, master_seed=cell_seed,
                                estimand=estimand_key,
                                config_overrides=overrides, n_jobs=n_jobs)
        expected_bias = summary.expected_bias
        mark = "check" if abs(summary.bias) < 3 * summary.mc_se else "cross"
        if expected_mark == "cross" and expected_bias is not None:
            consistent = abs(summary.bias - expected_bias) < 3 * summary.mc_se
        else:
            consistent = True
        cells[(row, col)] = CellResult(
            row=row, col=col, preset=preset_name, estimand=estimand_key,
            bias=summary.bias, mc_se=summary.mc_se, expected_bias=expected_bias,
            mark=mark, expected_mark=expected_mark, consistent=consistent,
        )
    return RobustnessTable(name=name, rows=layout["rows"], cols=layout["cols"],
                           cells=cells, reps=reps)


def hash_cell(table: str, row: str, col: str) -> int:
    """Stable per-cell seed component (not Python's salted hash)."""
    out = 0
    for ch in f"{table}:{row}:{col}":
        out = (out * 131 + ord(ch)) % (1 << 61)
    return out
