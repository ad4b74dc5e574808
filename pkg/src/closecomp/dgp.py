"""Reference data-generating processes with analytically known truths.

Each strategy family generates i.i.d. units within groups, applies the
treatment effect additively in post periods, and exposes three things the
Monte Carlo harness needs: population untreated means per (group, period),
the true close-comparison sets under every matching definition, and the
population value of each estimand (hence its bias).  Counterexample presets
reconstruct the specific parameterizations used to break each identification
strategy, with their known biases attached.

Group g's draws come from a counter-based stream keyed by (seed, g), with
units laid out by row, so datasets are bit-identical under any generation
order or parallel schedule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .errors import InvalidSpec
from .panel import PanelDataset
from .rng import stream

STRATEGIES = ("did", "cic", "lou", "ife", "latent", "linear_trend", "dynamic_panel")

_ROUND = 9  # decimals when comparing population quantities for set membership


@dataclass
class DgpSpec:
    strategy: str
    n_per_group: int
    groups: int
    T: int
    t_star: int
    att_true: float
    params: dict = field(default_factory=dict)
    seed: int = 0
    counterexample: str | None = None

    def validate(self) -> "DgpSpec":
        if self.strategy not in STRATEGIES:
            raise InvalidSpec(f"unknown strategy {self.strategy!r}")
        if self.n_per_group < 2:
            raise InvalidSpec("n_per_group must be >= 2")
        if self.groups < 2:
            raise InvalidSpec("need at least two groups")
        if not (2 <= self.t_star <= self.T):
            raise InvalidSpec(f"t_star must lie in 2..T={self.T}")
        _sampler_for(self.strategy)  # raises on unknown
        _validate_params(self)
        return self

    def group_labels(self) -> tuple:
        return tuple(f"g{i + 1}" for i in range(self.groups))

    def treatment_starts(self) -> list:
        """First treated period per group index; None for never treated."""
        override = self.params.get("t_stars_by_group")
        if override is not None:
            out = [int(v) if v else None for v in override]
            if len(out) != self.groups:
                raise InvalidSpec("t_stars_by_group must list every group")
            if all(v is None for v in out):
                raise InvalidSpec("at least one group must be treated")
            return out
        return [self.t_star] + [None] * (self.groups - 1)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy, "n_per_group": self.n_per_group,
            "groups": self.groups, "T": self.T, "t_star": self.t_star,
            "att_true": self.att_true, "params": self.params,
            "seed": self.seed, "counterexample": self.counterexample,
        }

    @staticmethod
    def from_dict(values: dict) -> "DgpSpec":
        return DgpSpec(**values).validate()


@dataclass(frozen=True)
class DgpTruth:
    att_true: float
    gstar_true: tuple            # dist-matched at t*-1 (the headline set)
    gstar_mean: dict             # S -> tuple of labels
    gstar_dist: dict             # S -> tuple of labels
    known_bias: dict             # estimand key -> bias (value - ATT); None if undefined
    estimands: dict              # estimand key -> population value
    population_means: np.ndarray  # (groups, T) untreated means
    notes: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# distribution and transition helpers
# ---------------------------------------------------------------------------

def _dist_draw(dist: dict, rng: np.random.Generator, size) -> np.ndarray:
    kind = dist["kind"]
    if kind == "normal":
        return rng.normal(dist["mean"], dist["sd"], size)
    if kind == "uniform":
        return rng.uniform(dist["low"], dist["high"], size)
    if kind == "triangular":
        return rng.triangular(dist["left"], dist["mode"], dist["right"], size)
    if kind == "chi2":
        return rng.chisquare(dist["df"], size)
    raise InvalidSpec(f"unknown distribution kind {kind!r}")


def _dist_mean(dist: dict) -> float:
    kind = dist["kind"]
    if kind == "normal":
        return dist["mean"]
    if kind == "uniform":
        return (dist["low"] + dist["high"]) / 2.0
    if kind == "triangular":
        return (dist["left"] + dist["mode"] + dist["right"]) / 3.0
    if kind == "chi2":
        return float(dist["df"])
    raise InvalidSpec(f"unknown distribution kind {kind!r}")


def _dist_var(dist: dict) -> float:
    kind = dist["kind"]
    if kind == "normal":
        return dist["sd"] ** 2
    if kind == "uniform":
        return (dist["high"] - dist["low"]) ** 2 / 12.0
    if kind == "triangular":
        a, m, b = dist["left"], dist["mode"], dist["right"]
        return (a**2 + m**2 + b**2 - a * m - a * b - m * b) / 18.0
    if kind == "chi2":
        return 2.0 * dist["df"]
    raise InvalidSpec(f"unknown distribution kind {kind!r}")


def _dist_pdf(dist: dict):
    kind = dist["kind"]
    if kind == "normal":
        return stats.norm(dist["mean"], dist["sd"]).pdf
    if kind == "uniform":
        return stats.uniform(dist["low"], dist["high"] - dist["low"]).pdf
    if kind == "triangular":
        a, m, b = dist["left"], dist["mode"], dist["right"]
        return stats.triang((m - a) / (b - a), loc=a, scale=b - a).pdf
    if kind == "chi2":
        return stats.chi2(dist["df"]).pdf
    raise InvalidSpec(f"unknown distribution kind {kind!r}")


def _dist_support(dist: dict):
    kind = dist["kind"]
    if kind == "normal":
        m, s = dist["mean"], dist["sd"]
        return (m - 12 * s, m + 12 * s)
    if kind == "uniform":
        return (dist["low"], dist["high"])
    if kind == "triangular":
        return (dist["left"], dist["right"])
    if kind == "chi2":
        return (0.0, stats.chi2(dist["df"]).ppf(1 - 1e-12))
    raise InvalidSpec(f"unknown distribution kind {kind!r}")


def _dist_key(dist: dict) -> tuple:
    return tuple(sorted((k, round(v, _ROUND) if isinstance(v, float) else v)
                        for k, v in dist.items()))


# -- CiC period maps ---------------------------------------------------------

def cic_map_fn(map_spec: dict):
    """The shared strictly increasing map carrying period t-1 to period t."""
    kind = map_spec["kind"]
    if kind == "identity":
        return lambda y: y
    if kind == "affine":
        a, b = map_spec["scale"], map_spec["shift"]
        if a <= 0:
            raise InvalidSpec("affine cic map must have positive scale")
        return lambda y: a * y + b
    if kind == "chi2_from_unit":
        df = map_spec.get("df", 1)
        eps = 1e-12
        return lambda y: stats.chi2.ppf(np.clip(y, eps, 1 - eps), df)
    if kind == "gauss_bump":
        epsv = map_spec["eps"]
        centers = np.asarray(map_spec["centers"], dtype=float)
        weights = np.asarray(map_spec["weights"], dtype=float)
        def fn(y):
            y = np.asarray(y, dtype=float)
            bump = np.zeros_like(y)
            for c, w in zip(centers, weights):
                bump += w * stats.norm.pdf(y - c)
            return y + epsv * bump
        return fn
    if kind == "redraw":
        # marginals stay fixed period over period; the implied Q o F map is
        # the identity even though realized values are redrawn
        return lambda y: y
    raise InvalidSpec(f"unknown cic map kind {kind!r}")


def cic_map_pushforward_mean(map_spec: dict, lag: dict) -> float:
    """E[m(Y)] for Y ~ lag, analytically where possible, else by quadrature."""
    kind = map_spec["kind"]
    if kind in ("identity", "redraw"):
        return _dist_mean(lag)
    if kind == "affine":
        return map_spec["scale"] * _dist_mean(lag) + map_spec["shift"]
    if kind == "gauss_bump" and lag["kind"] == "normal":
        mu, sd = lag["mean"], lag["sd"]
        total = _dist_mean(lag)
        for c, w in zip(map_spec["centers"], map_spec["weights"]):
            v = 1.0 + sd**2
            total += map_spec["eps"] * w * math.exp(-((mu - c) ** 2) / (2 * v)) / math.sqrt(2 * math.pi * v)
        return total
    fn = cic_map_fn(map_spec)
    pdf = _dist_pdf(lag)
    lo, hi = _dist_support(lag)
    val, _ = integrate.quad(lambda y: float(fn(y)) * pdf(y), lo, hi, limit=400)
    return float(val)


def cic_iterated_mean(map_spec: dict, lag: dict, k: int) -> float:
    """E[m^(k)(Y)] for the k-fold composition of the period map."""
    if k == 1:
        return cic_map_pushforward_mean(map_spec, lag)
    kind = map_spec["kind"]
    if kind in ("identity", "redraw"):
        return _dist_mean(lag)
    if kind == "affine":
        value = _dist_mean(lag)
        for _ in range(k):
            value = map_spec["scale"] * value + map_spec["shift"]
        return value
    if kind == "chi2_from_unit":
        raise InvalidSpec("chi2_from_unit map supports a single post period")
    fn = cic_map_fn(map_spec)
    pdf = _dist_pdf(lag)
    lo, hi = _dist_support(lag)

    def composed(y):
        for _ in range(k):
            y = fn(y)
        return float(y)

    val, _ = integrate.quad(lambda y: composed(y) * pdf(y), lo, hi, limit=400)
    return float(val)


# -- lagged-outcome transitions ---------------------------------------------

def lou_transition_fn(trans: dict):
    kind = trans["kind"]
    if kind == "identity":
        return lambda y: y
    if kind == "square":
        return lambda y: y**2
    if kind == "quadratic_centered":
        g, k = trans["gamma"], trans["k"]
        return lambda y: y + g * (y**2 - k)
    if kind == "linear":
        rho, b = trans["rho"], trans.get("shift", 0.0)
        return lambda y: rho * y + b
    raise InvalidSpec(f"unknown lou transition kind {kind!r}")


def lou_transition_mean(trans: dict, mean: float, var: float) -> float:
    """E[transition(Y)] from the first two moments of Y."""
    kind = trans["kind"]
    second = mean**2 + var
    if kind == "identity":
        return mean
    if kind == "square":
        return second
    if kind == "quadratic_centered":
        return mean + trans["gamma"] * (second - trans["k"])
    if kind == "linear":
        return trans["rho"] * mean + trans.get("shift", 0.0)
    raise InvalidSpec(f"unknown lou transition kind {kind!r}")


# ---------------------------------------------------------------------------
# per-strategy samplers, population means, and pre-window laws
# ---------------------------------------------------------------------------

def _validate_params(spec: DgpSpec) -> None:
    p, G, T = spec.params, spec.groups, spec.T
    need_len = {
        "did": [("group_means", G), ("time_effects", T)],
        "cic": [("lag_dists", G)],
        "lou": [("lag_dists", G)],
        "ife": [("eta_means", G), ("lambda_means", G), ("time_effects", T)],
        "latent": [("xi_means", G), ("time_effects", T)],
        "linear_trend": [("eta_means", G), ("lambda_means", G), ("time_effects", T)],
        "dynamic_panel": [("eta_means", G), ("init_means", G), ("time_effects", T)],
    }[spec.strategy]
    for key, length in need_len:
        if key not in p:
            raise InvalidSpec(f"strategy {spec.strategy!r} requires params[{key!r}]")
        if len(p[key]) != length:
            raise InvalidSpec(f"params[{key!r}] must have length {length}")
    if spec.strategy == "cic":
        if "map" not in p:
            raise InvalidSpec("cic requires params['map']")
        if p["map"]["kind"] == "chi2_from_unit" and spec.T > spec.t_star:
            raise InvalidSpec("chi2_from_unit map supports a single post period")
    if spec.strategy == "lou":
        if "transition" not in p:
            raise InvalidSpec("lou requires params['transition']")
        if p["transition"]["kind"] in ("square", "quadratic_centered") and spec.T > spec.t_star:
            raise InvalidSpec("nonlinear lou transitions support a single post period")
    if spec.strategy == "ife":
        F = np.asarray(p["factors"], dtype=float)
        if F.shape[0] != T:
            raise InvalidSpec("params['factors'] must have one row per period")
    if spec.strategy == "latent":
        if np.asarray(p["a"], dtype=float).shape[0] != T:
            raise InvalidSpec("params['a'] must have one row per period")


def _sample_did(spec, gi, rng):
    p = spec.params
    n, T = spec.n_per_group, spec.T
    theta = np.asarray(p["time_effects"], dtype=float)
    out = p["group_means"][gi] + theta[None, :] + rng.normal(0.0, p.get("sigma", 1.0), (n, T))
    sigma_unit = p.get("sigma_unit", 0.0)
    if sigma_unit > 0:
        out += rng.normal(0.0, sigma_unit, n)[:, None]
    return out


def _sample_cic(spec, gi, rng):
    p = spec.params
    n, T, ts = spec.n_per_group, spec.T, spec.t_star
    lag = p["lag_dists"][gi]
    out = np.empty((n, T))
    out[:, : ts - 1] = _dist_draw(lag, rng, (n, ts - 1))
    redraw = p["map"]["kind"] == "redraw"
    fn = cic_map_fn(p["map"])
    cur = out[:, ts - 2]
    for t in range(ts, T + 1):
        cur = _dist_draw(lag, rng, n) if redraw else fn(cur)
        out[:, t - 1] = cur
    return out


def _sample_lou(spec, gi, rng):
    p = spec.params
    n, T, ts = spec.n_per_group, spec.T, spec.t_star
    lag = p["lag_dists"][gi]
    sigma = p.get("sigma_trans", 1.0)
    fn = lou_transition_fn(p["transition"])
    out = np.empty((n, T))
    out[:, : ts - 1] = _dist_draw(lag, rng, (n, ts - 1))
    cur = out[:, ts - 2]
    for t in range(ts, T + 1):
        cur = fn(cur) + rng.normal(0.0, sigma, n)
        out[:, t - 1] = cur
    return out


def _ife_terms(spec):
    p = spec.params
    F = np.atleast_2d(np.asarray(p["factors"], dtype=float))  # (T, R)
    theta = np.asarray(p["time_effects"], dtype=float)
    return F, theta


def _sample_ife(spec, gi, rng):
    p = spec.params
    n, T = spec.n_per_group, spec.T
    F, theta = _ife_terms(spec)
    R = F.shape[1]
    eta_sd = p["eta_sds"][gi] if "eta_sds" in p else p.get("eta_sd", 0.0)
    lam_sd = p.get("lambda_sd", 0.0)
    eta = p["eta_means"][gi] + rng.normal(0.0, eta_sd, n)
    lam = np.asarray(p["lambda_means"][gi], dtype=float) + rng.normal(0.0, lam_sd, (n, R))
    return theta[None, :] + eta[:, None] + lam @ F.T + rng.normal(0.0, p.get("sigma", 1.0), (n, T))


def _sample_latent(spec, gi, rng):
    p = spec.params
    n, T = spec.n_per_group, spec.T
    a = np.asarray(p["a"], dtype=float)            # (T, L)
    b = np.asarray(p.get("b", np.zeros(T)), dtype=float)
    theta = np.asarray(p["time_effects"], dtype=float)
    L = a.shape[1]
    xi_sd = p["xi_sds"][gi] if "xi_sds" in p else p.get("xi_sd", 1.0)
    xi = np.asarray(p["xi_means"][gi], dtype=float) + rng.normal(0.0, xi_sd, (n, L))
    return (theta[None, :] + xi @ a.T + np.outer(xi[:, 0] ** 2, b)
            + rng.normal(0.0, p.get("sigma", 1.0), (n, T)))


def _sample_linear_trend(spec, gi, rng):
    p = spec.params
    n, T = spec.n_per_group, spec.T
    theta = np.asarray(p["time_effects"], dtype=float)
    periods = np.arange(1, T + 1, dtype=float)
    eta_sd = p["eta_sds"][gi] if "eta_sds" in p else p.get("eta_sd", 0.0)
    eta = p["eta_means"][gi] + rng.normal(0.0, eta_sd, n)
    lam = p["lambda_means"][gi] + rng.normal(0.0, p.get("lambda_sd", 0.0), n)
    return (theta[None, :] + eta[:, None] + np.outer(lam, periods)
            + rng.normal(0.0, p.get("sigma", 1.0), (n, T)))


def _sample_dynamic_panel(spec, gi, rng):
    p = spec.params
    n, T = spec.n_per_group, spec.T
    theta = np.asarray(p["time_effects"], dtype=float)
    rho = p["rho"]
    init_sd = p["init_sds"][gi] if "init_sds" in p else p.get("init_sd", 1.0)
    eta = p["eta_means"][gi] + rng.normal(0.0, p.get("eta_sd", 0.0), n)
    out = np.empty((n, T))
    out[:, 0] = p["init_means"][gi] + rng.normal(0.0, init_sd, n)
    for t in range(2, T + 1):
        out[:, t - 1] = theta[t - 1] + eta + rho * out[:, t - 2] + rng.normal(
            0.0, p.get("sigma", 1.0), n)
    return out


def _sampler_for(strategy):
    try:
        return {
            "did": _sample_did, "cic": _sample_cic, "lou": _sample_lou,
            "ife": _sample_ife, "latent": _sample_latent,
            "linear_trend": _sample_linear_trend,
            "dynamic_panel": _sample_dynamic_panel,
        }[strategy]
    except KeyError:
        raise InvalidSpec(f"unknown strategy {strategy!r}")


# -- population untreated means (groups x T) ---------------------------------

def population_means(spec: DgpSpec) -> np.ndarray:
    p, G, T, ts = spec.params, spec.groups, spec.T, spec.t_star
    out = np.empty((G, T))
    if spec.strategy == "did":
        theta = np.asarray(p["time_effects"], dtype=float)
        for gi in range(G):
            out[gi] = p["group_means"][gi] + theta
    elif spec.strategy == "cic":
        for gi in range(G):
            lag = p["lag_dists"][gi]
            out[gi, : ts - 1] = _dist_mean(lag)
            for t in range(ts, T + 1):
                out[gi, t - 1] = cic_iterated_mean(p["map"], lag, t - ts + 1)
    elif spec.strategy == "lou":
        trans = p["transition"]
        for gi in range(G):
            lag = p["lag_dists"][gi]
            out[gi, : ts - 1] = _dist_mean(lag)
            mean, var = _dist_mean(lag), _dist_var(lag)
            for t in range(ts, T + 1):
                mean_next = lou_transition_mean(trans, mean, var)
                out[gi, t - 1] = mean_next
                if trans["kind"] == "identity":
                    var = var + p.get("sigma_trans", 1.0) ** 2
                elif trans["kind"] == "linear":
                    var = trans["rho"] ** 2 * var + p.get("sigma_trans", 1.0) ** 2
                mean = mean_next
    elif spec.strategy == "ife":
        F, theta = _ife_terms(spec)
        for gi in range(G):
            lam = np.asarray(p["lambda_means"][gi], dtype=float)
            out[gi] = theta + p["eta_means"][gi] + F @ lam
    elif spec.strategy == "latent":
        a = np.asarray(p["a"], dtype=float)
        b = np.asarray(p.get("b", np.zeros(T)), dtype=float)
        theta = np.asarray(p["time_effects"], dtype=float)
        for gi in range(G):
            m = np.asarray(p["xi_means"][gi], dtype=float)
            xi_sd = p["xi_sds"][gi] if "xi_sds" in p else p.get("xi_sd", 1.0)
            out[gi] = theta + a @ m + b * (m[0] ** 2 + xi_sd**2)
    elif spec.strategy == "linear_trend":
        theta = np.asarray(p["time_effects"], dtype=float)
        periods = np.arange(1, T + 1, dtype=float)
        for gi in range(G):
            out[gi] = theta + p["eta_means"][gi] + p["lambda_means"][gi] * periods
    elif spec.strategy == "dynamic_panel":
        theta = np.asarray(p["time_effects"], dtype=float)
        for gi in range(G):
            out[gi, 0] = p["init_means"][gi]
            for t in range(2, T + 1):
                out[gi, t - 1] = theta[t - 1] + p["eta_means"][gi] + p["rho"] * out[gi, t - 2]
    return out


def _pre_window_law(spec: DgpSpec, gi: int, S: int, means: np.ndarray):
    """Canonical description of the joint law of the S pre-periods for group gi.

    Equality of descriptions is equality of laws within a strategy family;
    set membership below compares them exactly (after rounding).
    """
    p, ts = spec.params, spec.t_star
    window_means = tuple(round(float(m), _ROUND) for m in means[gi, ts - 1 - S: ts - 1])
    if spec.strategy == "did":
        return ("gauss-iid", window_means,
                round(p.get("sigma_unit", 0.0), _ROUND), round(p.get("sigma", 1.0), _ROUND))
    if spec.strategy in ("cic", "lou"):
        return ("iid", _dist_key(p["lag_dists"][gi]))
    if spec.strategy in ("ife", "linear_trend"):
        eta_sd = p["eta_sds"][gi] if "eta_sds" in p else p.get("eta_sd", 0.0)
        return ("gauss-factor", window_means, round(eta_sd, _ROUND),
                round(p.get("lambda_sd", 0.0), _ROUND), round(p.get("sigma", 1.0), _ROUND))
    if spec.strategy == "latent":
        xi_sd = p["xi_sds"][gi] if "xi_sds" in p else p.get("xi_sd", 1.0)
        b = np.asarray(p.get("b", np.zeros(spec.T)), dtype=float)
        if np.all(b[ts - 1 - S: ts - 1] == 0):
            # window outcomes are jointly Gaussian with a covariance shared
            # across groups (given xi_sd), so the mean vector pins the law
            return ("gauss-latent", window_means, round(xi_sd, _ROUND),
                    round(p.get("sigma", 1.0), _ROUND))
        m = tuple(round(float(v), _ROUND) for v in np.atleast_1d(p["xi_means"][gi]))
        return ("latent", m, round(xi_sd, _ROUND), round(p.get("sigma", 1.0), _ROUND))
    if spec.strategy == "dynamic_panel":
        mean_vec, cov = _dynpanel_window_moments(spec, gi, S)
        return ("gauss-joint",
                tuple(round(float(v), _ROUND) for v in mean_vec),
                tuple(round(float(v), _ROUND) for v in cov.ravel()))
    raise InvalidSpec(spec.strategy)


def _dynpanel_window_moments(spec: DgpSpec, gi: int, S: int):
    """Exact Gaussian (mean, cov) of (Y_{t*-S}, ..., Y_{t*-1}) for group gi."""
    p, ts = spec.params, spec.t_star
    theta = np.asarray(p["time_effects"], dtype=float)
    rho = p["rho"]
    eta_sd = p.get("eta_sd", 0.0)
    init_sd = p["init_sds"][gi] if "init_sds" in p else p.get("init_sd", 1.0)
    sigma = p.get("sigma", 1.0)
    T = ts - 1
    mu = np.empty(T)
    A = np.empty(T)   # coefficient on (eta - eta_bar)
    B = np.empty(T)   # coefficient on the initial shock
    E = np.zeros((T, T))  # E[t, k] = coefficient on e_{k+2} in Y_{t+1}
    mu[0], A[0], B[0] = p["init_means"][gi], 0.0, init_sd
    for t in range(1, T):
        mu[t] = theta[t] + p["eta_means"][gi] + rho * mu[t - 1]
        A[t] = 1.0 + rho * A[t - 1]
        B[t] = rho * B[t - 1]
        E[t] = rho * E[t - 1]
        E[t, t - 1] = sigma
    cov = np.outer(A, A) * eta_sd**2 + np.outer(B, B) + E @ E.T
    idx = np.arange(T - S, T)
    return mu[idx], cov[np.ix_(idx, idx)]


# ---------------------------------------------------------------------------
# truth assembly
# ---------------------------------------------------------------------------

def _matched_sets(spec: DgpSpec, means: np.ndarray):
    """Close-comparison sets under mean(S) and dist(S) for S = 1..t*-1."""
    labels = spec.group_labels()
    starts = spec.treatment_starts()
    ts = spec.t_star
    comparisons = [i for i in range(spec.groups) if starts[i] is None]
    gstar_mean, gstar_dist = {}, {}
    for S in range(1, ts):
        window = slice(ts - 1 - S, ts - 1)
        m1 = np.round(means[0, window], _ROUND)
        mean_set = [labels[i] for i in comparisons
                    if np.array_equal(np.round(means[i, window], _ROUND), m1)]
        law1 = _pre_window_law(spec, 0, S, means)
        dist_set = [labels[i] for i in comparisons
                    if _pre_window_law(spec, i, S, means) == law1]
        gstar_mean[S] = tuple(mean_set)
        gstar_dist[S] = tuple(dist_set)
    return gstar_mean, gstar_dist


def population_estimands(spec: DgpSpec) -> dict:
    """Population values of tau under each matching definition, tau_th, tau_mr.

    Values are exact where the family admits closed forms; the CiC map means
    fall back to quadrature.  Keys with an empty matched set map to None.
    """
    spec.validate()
    means = population_means(spec)
    labels = spec.group_labels()
    gstar_mean, gstar_dist = _matched_sets(spec, means)
    ts = spec.t_star
    post1 = means[0, ts - 1]
    pre1 = means[0, ts - 2]
    att = spec.att_true

    def contrast(group_set, col):
        if not group_set:
            return None
        idx = [labels.index(g) for g in group_set]
        return float(means[0, col] - np.mean(means[idx, col]))  # equal group sizes

    out = {}
    for S, gset in gstar_mean.items():
        value = contrast(gset, ts - 1)
        out[f"tau_mean_{S}"] = None if value is None else att + value
    for S, gset in gstar_dist.items():
        value = contrast(gset, ts - 1)
        out[f"tau_dist_{S}"] = None if value is None else att + value
    out["tau"] = out.get("tau_dist_1")

    for t in range(ts, spec.T + 1):
        out[f"tau_th_{t}"] = att + float(means[0, t - 1] - pre1)
    out["tau_th"] = out[f"tau_th_{ts}"]

    mr_set = spec.params.get("selection_set") or list(gstar_dist[1])
    if mr_set:
        idx = [labels.index(g) for g in mr_set]
        post_gap = float(post1 - np.mean(means[idx, ts - 1]))
        pre_gap = float(pre1 - np.mean(means[idx, ts - 2]))
        out["tau_mr"] = att + post_gap - pre_gap
        out["att_selected"] = att + post_gap
    else:
        out["tau_mr"] = None
        out["att_selected"] = None
    return out


def _ife_rank_notes(spec: DgpSpec) -> dict:
    F, _ = _ife_terms(spec)
    ones = np.ones((spec.T, 1))
    full = np.hstack([ones, F])
    pre = full[: spec.t_star - 1]
    r_full = int(np.linalg.matrix_rank(full))
    r_pre = int(np.linalg.matrix_rank(pre))
    return {"ife_rank": r_full, "ife_pre_rank": r_pre,
            "rank_deficient": r_pre < r_full}


_TRUTH_CACHE: dict = {}


def compute_truth(spec: DgpSpec) -> DgpTruth:
    """Truth block for a spec; cached since it is seed-invariant."""
    key = json.dumps({k: v for k, v in spec.to_dict().items() if k != "seed"},
                     sort_keys=True, default=str)
    hit = _TRUTH_CACHE.get(key)
    if hit is None:
        hit = _compute_truth_impl(spec)
        _TRUTH_CACHE[key] = hit
    return hit


def _compute_truth_impl(spec: DgpSpec) -> DgpTruth:
    means = population_means(spec)
    gstar_mean, gstar_dist = _matched_sets(spec, means)
    estimands = population_estimands(spec)
    known_bias = {k: (None if v is None else v - spec.att_true)
                  for k, v in estimands.items()}
    notes = {}
    if spec.strategy == "ife":
        notes.update(_ife_rank_notes(spec))
    if spec.counterexample:
        notes["counterexample"] = spec.counterexample
    return DgpTruth(
        att_true=spec.att_true,
        gstar_true=gstar_dist[1],
        gstar_mean=gstar_mean,
        gstar_dist=gstar_dist,
        known_bias=known_bias,
        estimands=estimands,
        population_means=means,
        notes=notes,
    )


def generate(spec: DgpSpec):
    """Draw a dataset from the spec; returns (PanelDataset, DgpTruth).

    Identical (spec, seed) pairs produce bit-identical datasets.  Treatment
    adds att_true (or unit-level normal effects around it) from each treated
    group's start period onward.
    """
    spec.validate()
    sampler = _sampler_for(spec.strategy)
    labels = spec.group_labels()
    starts = spec.treatment_starts()
    n, G, T = spec.n_per_group, spec.groups, spec.T

    blocks = []
    for gi in range(G):
        y0 = sampler(spec, gi, stream(spec.seed, gi, 0))
        ts_g = starts[gi]
        if ts_g is not None:
            effect_sd = spec.params.get("effect_sd", 0.0)
            if effect_sd > 0:
                effects = stream(spec.seed, gi, 1).normal(spec.att_true, effect_sd, n)
            else:
                effects = np.full(n, spec.att_true)
            y0[:, ts_g - 1:] += effects[:, None]
        blocks.append(y0)

    outcomes = np.vstack(blocks)
    units = np.arange(n * G)
    group_by_unit = np.repeat(np.asarray(labels, dtype=object), n)
    periods = np.arange(1, T + 1)
    treatment_by_group = {
        g: (periods >= starts[i]).astype(np.int8) if starts[i] is not None
        else np.zeros(T, dtype=np.int8)
        for i, g in enumerate(labels)
    }
    data = PanelDataset.from_arrays(units, group_by_unit, outcomes,
                                    treatment_by_group, labels)
    return data, compute_truth(spec)


# ---------------------------------------------------------------------------
# counterexample and supporting presets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Preset:
    name: str
    spec: DgpSpec
    pipeline: dict               # PipelineConfig overrides for this preset
    target_estimand: str         # estimand key the preset demonstrates
    description: str


def _prop3ii_exact_weights():
    """Solve the 2x2 overlap system for the Gaussian-bump perturbation."""
    a, b = math.exp(-0.25), math.exp(-1.0)
    A = np.array([[1.0, a], [a, 1.0]])
    c = np.linalg.solve(A, -np.array([a, b]))
    return float(c[0]), float(c[1])


def counterexample_presets(n_per_group: int = 1000, seed: int = 0) -> dict:
    """Named DGP presets reconstructing each published failure mode,
    plus the matched designs that make the positive table cells testable.
    """
    def spec(strategy, groups, T, t_star, att, params, name):
        return DgpSpec(strategy=strategy, n_per_group=n_per_group, groups=groups,
                       T=T, t_star=t_star, att_true=att, params=params,
                       seed=seed, counterexample=name).validate()

    presets = {}

    def add(name, sp, pipeline, target, description):
        presets[name] = Preset(name, sp, pipeline, target, description)

    # --- close-comparison-group failures -----------------------------------

    add(
        "ife_thm1iv",
        spec("ife", 2, 2, 2, 1.0, {
            "factors": [[1.0], [2.0]],
            "time_effects": [0.0, 0.0],
            "eta_means": [1.0, 0.0],
            "lambda_means": [[0.0], [1.0]],
            "eta_sd": 0.0, "lambda_sd": 0.0, "sigma": 1.0,
        }, "ife_thm1iv"),
        {"metric": "wasserstein", "S": 1},
        "tau_dist_1",
        "Interactive fixed effects with a factor that moves post-treatment: "
        "both groups are N(1,1) in the pre-period yet untreated post means "
        "are 1 vs 2, so the close-group contrast is off by -1.",
    )

    add(
        "cic_prop1ii",
        spec("cic", 2, 3, 3, 1.0, {
            "lag_dists": [
                {"kind": "triangular", "left": 0.0, "mode": 0.5, "right": 1.0},
                {"kind": "uniform", "low": 0.0, "high": 1.0},
            ],
            "map": {"kind": "chi2_from_unit", "df": 1},
        }, "cic_prop1ii"),
        {"metric": "mean", "S": 1},
        "tau_mean_1",
        "Quantile-map evolution into a chi-square: equal pre-period means "
        "(uniform vs triangular) but different shapes, so the mean-matched "
        "contrast is biased by the pushforward gap.",
    )

    add(
        "lou_prop1iii",
        spec("lou", 2, 3, 3, 1.0, {
            "lag_dists": [
                {"kind": "normal", "mean": 0.0, "sd": 1.0},
                {"kind": "normal", "mean": 0.0, "sd": math.sqrt(2.0)},
            ],
            "transition": {"kind": "square"},
            "sigma_trans": 1.0,
        }, "lou_prop1iii"),
        {"metric": "mean", "S": 1},
        "tau_mean_1",
        "Lagged-outcome transition E[Y_t | Y_{t-1}] = Y_{t-1}^2 with equal "
        "lag means but different variances: bias = var_g - var_1 = +1.",
    )

    add(
        "dynpanel_prop2",
        spec("dynamic_panel", 2, 3, 3, 1.0, {
            "rho": 0.5,
            "time_effects": [0.0, 0.0, 0.0],
            "eta_means": [1.0, 0.0],
            "eta_sd": 1.0,
            "init_means": [0.0, 2.0],
            "init_sd": 1.0,
            "sigma": 1.0,
        }, "dynpanel_prop2"),
        {"metric": "wasserstein", "S": 1},
        "tau_dist_1",
        "AR(1) panel where both groups are N(1, 2.25) one period before "
        "treatment but carry different fixed effects: bias = +1 even under "
        "exact one-period distribution matching.",
    )

    # --- time-homogeneity failures ------------------------------------------

    c2_paper, c3_paper = -0.93, -0.15
    c2_exact, c3_exact = _prop3ii_exact_weights()
    for suffix, (c2, c3) in (("", (c2_paper, c3_paper)),
                             ("_exact", (c2_exact, c3_exact))):
        add(
            f"cic_prop3ii{suffix}",
            spec("cic", 3, 2, 2, 1.0, {
                "lag_dists": [
                    {"kind": "normal", "mean": 1.0, "sd": 1.0},
                    {"kind": "normal", "mean": 2.0, "sd": 1.0},
                    {"kind": "normal", "mean": 3.0, "sd": 1.0},
                ],
                "map": {"kind": "gauss_bump", "eps": 1.0,
                        "centers": [1.0, 2.0, 3.0],
                        "weights": [1.0, c2, c3]},
            }, f"cic_prop3ii{suffix}"),
            {"metric": "wasserstein", "S": 1},
            "tau_th",
            "Gaussian-bump quantile maps tuned so comparison-group means stay "
            "(approximately) put while the treated group's untreated mean "
            "drifts; the before/after contrast inherits the drift.",
        )

    add(
        "lou_prop3iii",
        spec("lou", 4, 2, 2, 1.0, {
            "lag_dists": [
                {"kind": "normal", "mean": 0.0, "sd": 1.0},
                {"kind": "normal", "mean": 1.0, "sd": 1.0},
                {"kind": "normal", "mean": 0.5, "sd": math.sqrt(1.75)},
                {"kind": "normal", "mean": -0.5, "sd": math.sqrt(1.75)},
            ],
            "transition": {"kind": "quadratic_centered", "gamma": 0.5, "k": 2.0},
            "sigma_trans": 1.0,
        }, "lou_prop3iii"),
        {"metric": "wasserstein", "S": 1},
        "tau_th",
        "Quadratic transition with comparison groups placed on the sphere "
        "mu^2 + var = k: their means are stable, the treated group's is not; "
        "bias = gamma (mu_1^2 + var_1 - k) = -0.5.  Also the rank-deficient "
        "case for the parametric transfer check.",
    )

    add(
        "latent_prop3v",
        spec("latent", 3, 2, 2, 1.0, {
            "a": [[1.0, 0.0], [2.0, -1.0]],
            "b": [0.0, 0.0],
            "time_effects": [0.0, 0.0],
            "xi_means": [[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]],
            "xi_sd": 0.5, "sigma": 1.0,
        }, "latent_prop3v"),
        {"metric": "wasserstein", "S": 1},
        "tau_th",
        "Two latent factors, two comparison groups: the post-period map moves "
        "in the null space of the comparison loadings, so their means are "
        "stable while the treated group's drifts by +1.",
    )

    # --- multiply-robust cases ----------------------------------------------

    add(
        "mr_case1",
        spec("did", 3, 2, 2, 1.0, {
            "group_means": [0.0, 0.0, 3.0],
            "time_effects": [0.0, 1.0],
            "sigma": 1.0,
        }, "mr_case1"),
        {"metric": "wasserstein", "S": 1},
        "tau_mr",
        "Close groups valid, time homogeneity fails: a common +1 time effect "
        "biases the before/after contrast but not the close-group or "
        "multiply-robust contrasts.",
    )

    add(
        "mr_case2",
        spec("did", 3, 2, 2, 1.0, {
            "group_means": [1.0, 0.0, 0.0],
            "time_effects": [0.0, 0.0],
            "sigma": 1.0,
            "selection_set": ["g2", "g3"],
        }, "mr_case2"),
        {"metric": "wasserstein", "S": 1, "bandwidth": 50.0},
        "tau_mr",
        "Time homogeneity holds, close groups fail: every comparison group "
        "sits one unit below the treated group, so the level contrast is "
        "biased by +1 while before/after and multiply-robust are clean. "
        "Run with a wide bandwidth so the far groups are actually used.",
    )

    # --- matched designs for the positive cells ------------------------------

    add(
        "did_matched",
        spec("did", 4, 3, 3, 2.0, {
            "group_means": [0.0, 0.0, 0.0, 1.5],
            "time_effects": [0.0, 0.35, 0.7],
            "sigma": 1.0,
        }, None),
        {"metric": "wasserstein", "S": 1},
        "tau_dist_1",
        "Parallel trends with two exactly matched comparison groups and one "
        "far decoy; unbiased under every matching definition.",
    )

    add(
        "cic_dist_matched",
        spec("cic", 3, 2, 2, 1.0, {
            "lag_dists": [
                {"kind": "triangular", "left": 0.0, "mode": 0.5, "right": 1.0},
                {"kind": "triangular", "left": 0.0, "mode": 0.5, "right": 1.0},
                {"kind": "uniform", "low": 0.0, "high": 0.2},
            ],
            "map": {"kind": "chi2_from_unit", "df": 1},
        }, None),
        {"metric": "wasserstein", "S": 1},
        "tau_dist_1",
        "Shared quantile map with an identically distributed comparison "
        "group (plus a squeezed decoy); distribution matching makes the "
        "level contrast unbiased despite the nonlinear evolution.",
    )

    add(
        "lou_dist_matched",
        spec("lou", 3, 2, 2, 1.0, {
            "lag_dists": [
                {"kind": "normal", "mean": 0.0, "sd": 1.0},
                {"kind": "normal", "mean": 0.0, "sd": 1.0},
                {"kind": "normal", "mean": 3.0, "sd": 1.0},
            ],
            "transition": {"kind": "square"},
            "sigma_trans": 1.0,
        }, None),
        {"metric": "wasserstein", "S": 1},
        "tau_dist_1",
        "Squared transition with an identically distributed comparison group "
        "and a far decoy; distribution matching restores unbiasedness.",
    )

    add(
        "ife_mean2",
        spec("ife", 4, 3, 3, 1.0, {
            "factors": [[1.0], [2.0], [3.0]],
            "time_effects": [0.0, 0.0, 0.0],
            "eta_means": [1.0, 1.0, 1.0, 2.0],
            "lambda_means": [[0.5], [0.5], [0.5], [1.0]],
            "eta_sds": [1.0, 1.0, 1.4, 1.0],
            "lambda_sd": 0.0, "sigma": 1.0,
        }, None),
        {"metric": "mean", "S": 2},
        "tau_mean_2",
        "One factor, varying pre-treatment: matching means over two "
        "pre-periods pins the loadings, so the contrast is unbiased "
        "(one matched group differs in spread, testing mean-only matching).",
    )

    add(
        "ife_dist",
        spec("ife", 3, 3, 3, 1.0, {
            "factors": [[1.0], [2.0], [3.0]],
            "time_effects": [0.0, 0.0, 0.0],
            "eta_means": [1.0, 1.0, 2.0],
            "lambda_means": [[0.5], [0.5], [1.0]],
            "eta_sd": 1.0, "lambda_sd": 0.0, "sigma": 1.0,
        }, None),
        {"metric": "wasserstein", "S": 1},
        "tau_dist_1",
        "Factor model with an identically distributed comparison group and a "
        "loading decoy.",
    )

    add(
        "ife_prop3",
        spec("ife", 3, 2, 2, 1.5, {
            "factors": [[1.0], [1.0]],
            "time_effects": [0.0, 0.0],
            "eta_means": [1.0, 0.0, 0.0],
            "lambda_means": [[0.5], [1.0], [2.0]],
            "eta_sd": 0.5, "lambda_sd": 0.5, "sigma": 1.0,
        }, None),
        {"metric": "wasserstein", "S": 1},
        "tau_th",
        "Constant factors with two loading-distinct comparison groups "
        "(full-rank loadings): comparison stability forces treated "
        "stability, so the before/after contrast is unbiased.",
    )

    add(
        "did_prop3",
        spec("did", 3, 2, 2, 1.5, {
            "group_means": [0.5, 0.0, 1.0],
            "time_effects": [0.0, 0.0],
            "sigma": 1.0,
        }, None),
        {"metric": "wasserstein", "S": 1},
        "tau_th",
        "No time effects anywhere: the treated group's own before/after "
        "change recovers the effect without any comparison group.",
    )

    add(
        "latent_thm1v",
        spec("latent", 2, 2, 2, 1.0, {
            "a": [[1.0, 1.0], [1.0, 2.0]],
            "b": [0.0, 0.0],
            "time_effects": [0.0, 0.0],
            "xi_means": [[1.0, 0.0], [0.0, 1.0]],
            "xi_sd": 0.0, "sigma": 1.0,
        }, "latent_thm1v"),
        {"metric": "wasserstein", "S": 1},
        "tau_dist_1",
        "The interactive-fixed-effects failure expressed through the latent "
        "model: identical pre-period distributions, post means 1 vs 2.",
    )

    add(
        "latent_meanS",
        spec("latent", 2, 3, 3, 1.0, {
            "a": [[1.0], [1.0], [1.0]],
            "b": [0.0, 0.0, 1.0],
            "time_effects": [0.0, 0.0, 0.0],
            "xi_means": [[0.0], [0.0]],
            "xi_sds": [1.0, math.sqrt(2.0)],
            "sigma": 1.0,
        }, "latent_meanS"),
        {"metric": "mean", "S": 2},
        "tau_mean_2",
        "A quadratic term switches on post-treatment: pre-period means match "
        "for any S but the latent spreads differ, biasing the contrast by "
        "the variance gap (-1).",
    )

    add(
        "latent_dist",
        spec("latent", 3, 3, 3, 1.0, {
            "a": [[1.0, 0.5], [0.8, 1.2], [1.1, 0.7]],
            "b": [0.0, 0.0, 0.9],
            "time_effects": [0.0, 0.0, 0.0],
            "xi_means": [[0.0, 0.0], [0.0, 0.0], [2.0, 1.0]],
            "xi_sd": 1.0, "sigma": 1.0,
        }, None),
        {"metric": "wasserstein", "S": 2},
        "tau_dist_2",
        "Nonlinear post-period map of a two-dimensional latent vector with an "
        "injective linear pre-period stack; matching the joint pre "
        "distribution matches the latent distribution.",
    )

    add(
        "lintrend_thm1iv",
        spec("linear_trend", 2, 2, 2, 1.0, {
            "time_effects": [0.0, 0.0],
            "eta_means": [1.0, 0.0],
            "lambda_means": [0.0, 1.0],
            "eta_sd": 0.0, "lambda_sd": 0.0, "sigma": 1.0,
        }, "lintrend_thm1iv"),
        {"metric": "wasserstein", "S": 1},
        "tau_dist_1",
        "Unit trends as a one-factor model with F_t = t: identical "
        "pre-period distributions, post means 1 vs 2.",
    )

    add(
        "lintrend_S2",
        spec("linear_trend", 4, 3, 3, 1.0, {
            "time_effects": [0.0, 0.0, 0.0],
            "eta_means": [1.0, 1.0, 1.0, 3.0],
            "lambda_means": [0.5, 0.5, 0.5, 1.0],
            "eta_sds": [1.0, 1.0, 1.5, 1.0],
            "lambda_sd": 0.0, "sigma": 1.0,
        }, None),
        {"metric": "mean", "S": 2},
        "tau_mean_2",
        "Two pre-periods of matched means pin (intercept, trend); one "
        "matched group differs only in spread.",
    )

    add(
        "dynpanel_S2",
        spec("dynamic_panel", 4, 3, 3, 1.0, {
            "rho": 0.5,
            "time_effects": [0.0, 0.0, 0.0],
            "eta_means": [1.0, 1.0, 1.0, 0.0],
            "eta_sd": 1.0,
            "init_means": [0.0, 0.0, 0.0, 4.0],
            "init_sds": [1.0, 1.0, 1.6, 1.0],
            "sigma": 1.0,
        }, None),
        {"metric": "mean", "S": 2},
        "tau_mean_2",
        "AR(1) with two matched pre-period means (one group differing in "
        "initial spread) and the published decoy.",
    )

    add(
        "separated",
        spec("did", 5, 2, 2, 1.0, {
            "group_means": [0.0, 0.0, 0.0, 1.5, 2.0],
            "time_effects": [0.0, 0.4],
            "sigma": 1.0,
        }, None),
        {"metric": "wasserstein", "S": 1},
        "tau_dist_1",
        "Two exact matches and two decoys at standardized distance >= 1; the "
        "workhorse for selection-consistency and oracle-equivalence checks.",
    )

    add(
        "cic_prop5",
        spec("cic", 3, 3, 2, 1.0, {
            "lag_dists": [
                {"kind": "triangular", "left": 0.2, "mode": 0.5, "right": 0.8},
                {"kind": "uniform", "low": 0.0, "high": 1.0},
                {"kind": "uniform", "low": 0.0, "high": 1.0},
            ],
            "map": {"kind": "redraw"},
        }, None),
        {"metric": "wasserstein", "S": 1},
        "tau_th",
        "Period-constant outcome distributions (fresh draws each period): "
        "distributional time homogeneity, under which the before/after "
        "contrast is unbiased for the quantile-map strategy.",
    )

    add(
        "lou_prop6",
        spec("lou", 4, 2, 2, 1.0, {
            "lag_dists": [
                {"kind": "normal", "mean": 0.5, "sd": 1.0},
                {"kind": "normal", "mean": 0.0, "sd": 1.0},
                {"kind": "normal", "mean": 1.0, "sd": 1.0},
                {"kind": "normal", "mean": 2.0, "sd": 1.0},
            ],
            "transition": {"kind": "identity"},
            "sigma_trans": 0.1,
        }, None),
        {"metric": "wasserstein", "S": 1},
        "tau_th",
        "Identity transition with three comparison groups whose first and "
        "second moments vary: the basis moment matrix has full rank, so the "
        "parametric transfer check certifies the identity transition.",
    )

    add(
        "staggered_did",
        spec("did", 4, 3, 2, 1.0, {
            "group_means": [0.0, 0.0, 0.0, 0.0],
            "time_effects": [0.0, 0.3, 0.6],
            "sigma": 1.0,
            "t_stars_by_group": [2, 3, None, None],
        }, None),
        {"metric": "wasserstein", "S": 1},
        "tau_dist_1",
        "Two adoption cohorts plus two never-treated groups, identical "
        "intercepts and a homogeneous effect: every group-time cell should "
        "recover the same effect.",
    )

    return presets


def preset_spec(name: str, seed: int = 0, n_per_group: int = 1000) -> DgpSpec:
    """A fresh DgpSpec for a named preset with the given seed and group size."""
    presets = counterexample_presets(n_per_group=n_per_group, seed=seed)
    if name not in presets:
        raise InvalidSpec(f"unknown preset {name!r}; available: {sorted(presets)}")
    return presets[name].spec


def preset(name: str, seed: int = 0, n_per_group: int = 1000) -> Preset:
    presets = counterexample_presets(n_per_group=n_per_group, seed=seed)
    if name not in presets:
        raise InvalidSpec(f"unknown preset {name!r}; available: {sorted(presets)}")
    return presets[name]
