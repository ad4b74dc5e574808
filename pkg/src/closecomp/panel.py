"""Panel data model, ingestion, and validation.

Data are held in wide form internally: one row per unit, one column per
period.  Balance is therefore structural once a dataset is constructed;
``from_long``/``load_panel`` do the validation work on the way in.

Treatment is stored as one regime vector per group (all units in a group
share it).  ``t_star_of`` gives the first treated period of a group, and the
single-treated-group accessors (``treated_group``, ``t_star``) raise in
staggered mode.  The no-anticipation assumption is not testable from data and
is not validated here.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    ConfigError,
    DataError,
    DegenerateGroup,
    DuplicateObservation,
    GroupTreatmentMismatch,
    InsufficientPrePeriods,
    InvalidPeriods,
    MissingColumn,
    TreatedInFirstPeriod,
    UnbalancedPanel,
)

DEFAULT_SCHEMA = {
    "unit": "unit",
    "group": "group",
    "time": "time",
    "outcome": "outcome",
    "treated": "treated",
    "covariate": "covariate",
}


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced panel microdata with group-level treatment regimes.

    Attributes
    ----------
    units : (n,) array of unit identifiers (opaque).
    group_codes : (n,) int array indexing into ``group_labels``.
    outcomes : (n, T) float array; column ``t-1`` holds period ``t``.
    group_labels : ordered tuple of group labels (order of first appearance).
    treatment : (n_groups, T) 0/1 array; row g is group g's regime d(g).
    covariates : optional (n,) array of a discrete unit-level covariate.
    """

    units: np.ndarray
    group_codes: np.ndarray
    outcomes: np.ndarray
    group_labels: tuple
    treatment: np.ndarray
    covariates: np.ndarray | None = None
    _group_rows: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for arr in (self.units, self.group_codes, self.outcomes, self.treatment):
            arr.flags.writeable = False
        if self.covariates is not None:
            self.covariates.flags.writeable = False
        rows = {}
        for code, label in enumerate(self.group_labels):
            rows[label] = np.flatnonzero(self.group_codes == code)
        object.__setattr__(self, "_group_rows", rows)

    # -- basic shape -------------------------------------------------------

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def T(self) -> int:
        return self.outcomes.shape[1]

    @property
    def groups(self) -> tuple:
        return self.group_labels

    def group_rows(self, label) -> np.ndarray:
        return self._group_rows[label]

    def group_size(self, label) -> int:
        return self._group_rows[label].size

    def p_hat(self, label) -> float:
        return self.group_size(label) / self.n_units

    # -- treatment structure -----------------------------------------------

    def t_star_of(self, label) -> int | None:
        """First treated period of the group, or None if never treated."""
        regime = self.treatment[self.group_labels.index(label)]
        hits = np.flatnonzero(regime == 1)
        return int(hits[0]) + 1 if hits.size else None

    @property
    def treated_groups(self) -> tuple:
        return tuple(g for g in self.group_labels if self.t_star_of(g) is not None)

    @property
    def comparison_groups(self) -> tuple:
        return tuple(g for g in self.group_labels if self.t_star_of(g) is None)

    @property
    def is_staggered(self) -> bool:
        return len(self.treated_groups) > 1

    @property
    def treated_group(self):
        treated = self.treated_groups
        if len(treated) != 1:
            raise DataError(
                f"expected exactly one treated group, found {len(treated)}; "
                "use the group-time estimator for staggered adoption"
            )
        return treated[0]

    @property
    def t_star(self) -> int:
        return self.t_star_of(self.treated_group)

    # -- views ---------------------------------------------------------------

    def outcome(self, label, period: int) -> np.ndarray:
        """Outcomes of one group in one period (1-based)."""
        return self.outcomes[self._group_rows[label], period - 1]

    def outcome_block(self, label, periods) -> np.ndarray:
        """(n_g, len(periods)) outcome matrix for 1-based ``periods``."""
        cols = np.asarray(list(periods)) - 1
        return self.outcomes[np.ix_(self._group_rows[label], cols)]

    def subset_units(self, mask: np.ndarray) -> "PanelDataset":
        """Restrict to units where ``mask`` is True, dropping emptied groups."""
        mask = np.asarray(mask, dtype=bool)
        codes = self.group_codes[mask]
        kept = [g for c, g in enumerate(self.group_labels) if np.any(codes == c)]
        relabel = {self.group_labels.index(g): i for i, g in enumerate(kept)}
        new_codes = np.array([relabel[c] for c in codes], dtype=np.int64)
        treatment = self.treatment[[self.group_labels.index(g) for g in kept]]
        cov = self.covariates[mask].copy() if self.covariates is not None else None
        return PanelDataset(
            units=self.units[mask].copy(),
            group_codes=new_codes,
            outcomes=self.outcomes[mask].copy(),
            group_labels=tuple(kept),
            treatment=treatment.copy(),
            covariates=cov,
        )

    # -- construction --------------------------------------------------------

    @staticmethod
    def from_arrays(units, group_by_unit, outcomes, treatment_by_group,
                    group_labels=None, covariates=None) -> "PanelDataset":
        """Build and validate a dataset from wide-form arrays.

        ``treatment_by_group`` maps group label -> length-T 0/1 regime.
        """
        units = np.asarray(units)
        group_by_unit = np.asarray(group_by_unit)
        outcomes = np.asarray(outcomes, dtype=np.float64)
        if outcomes.ndim != 2 or outcomes.shape[0] != units.shape[0]:
            raise DataError("outcomes must be (n_units, T)")
        if group_labels is None:
            seen = []
            for g in group_by_unit:
                if g not in seen:
                    seen.append(g)
            group_labels = tuple(seen)
        else:
            group_labels = tuple(group_labels)
        label_to_code = {g: i for i, g in enumerate(group_labels)}
        codes = np.array([label_to_code[g] for g in group_by_unit], dtype=np.int64)

        T = outcomes.shape[1]
        treatment = np.zeros((len(group_labels), T), dtype=np.int8)
        for g, regime in treatment_by_group.items():
            regime = np.asarray(regime, dtype=np.int8)
            if regime.shape != (T,):
                raise DataError(f"treatment regime for group {g!r} must have length T={T}")
            treatment[label_to_code[g]] = regime
        if np.any(treatment[:, 0] == 1):
            bad = [group_labels[i] for i in np.flatnonzero(treatment[:, 0] == 1)]
            raise TreatedInFirstPeriod(f"groups treated in period 1: {bad}")
        if not np.any(treatment == 1):
            raise DataError("no treated group in dataset")
        if covariates is not None:
            covariates = np.asarray(covariates)
            if covariates.shape[0] != units.shape[0]:
                raise DataError("covariates must have one value per unit")
        return PanelDataset(units=units.copy(), group_codes=codes,
                            outcomes=outcomes.copy(), group_labels=group_labels,
                            treatment=treatment, covariates=covariates)

    @staticmethod
    def from_long(frame: pd.DataFrame, schema=None, metadata=None) -> "PanelDataset":
        """Validate and reshape a long-form frame (one row per unit-period).

        ``metadata`` supplies ``{"treated_group": ..., "t_star": ...}`` when
        the treated column is absent (an absorbing regime is then assumed).
        """
        schema = {**DEFAULT_SCHEMA, **(schema or {})}
        required = ["unit", "group", "time", "outcome"]
        for key in required:
            if schema[key] not in frame.columns:
                raise MissingColumn(f"missing required column {schema[key]!r}")
        has_treated = schema["treated"] in frame.columns
        has_cov = schema["covariate"] in frame.columns

        unit_col = frame[schema["unit"]].to_numpy()
        time_raw = frame[schema["time"]].to_numpy()
        times = np.asarray(time_raw)
        if not np.issubdtype(times.dtype, np.integer):
            as_float = times.astype(np.float64)
            if not np.all(as_float == np.round(as_float)):
                raise InvalidPeriods("time values must be integers")
            times = as_float.astype(np.int64)
        if times.min() < 1:
            raise InvalidPeriods("time values must be positive integers")
        T = int(times.max())
        period_set = np.unique(times)
        if period_set.size != T or period_set[0] != 1:
            raise InvalidPeriods(f"periods must be contiguous 1..T; saw {period_set.tolist()[:10]}")

        if frame.duplicated(subset=[schema["unit"], schema["time"]]).any():
            dups = frame[frame.duplicated(subset=[schema["unit"], schema["time"]], keep=False)]
            raise DuplicateObservation(
                f"duplicate (unit, time) pairs, e.g. {dups.iloc[0][schema['unit']]!r}"
            )

        counts = pd.Series(unit_col).value_counts()
        bad = counts[counts != T]
        if len(bad):
            raise UnbalancedPanel(bad.index.tolist())

        work = frame.sort_values([schema["unit"], schema["time"]], kind="stable")
        units_sorted = work[schema["unit"]].to_numpy()
        unit_ids = units_sorted[::T]
        n = unit_ids.shape[0]
        outcomes = work[schema["outcome"]].to_numpy(dtype=np.float64).reshape(n, T)

        groups_all = work[schema["group"]].to_numpy().reshape(n, T)
        if not all((row == row[0]).all() for row in groups_all):
            raise DataError("unit changes group across periods")
        group_by_unit = groups_all[:, 0]

        covariates = None
        if has_cov:
            cov_all = work[schema["covariate"]].to_numpy().reshape(n, T)
            if not all((row == row[0]).all() for row in cov_all):
                raise DataError("covariate must be constant within unit")
            covariates = cov_all[:, 0]

        seen = []
        for g in group_by_unit:
            if g not in seen:
                seen.append(g)
        group_labels = tuple(seen)

        if has_treated:
            treated = work[schema["treated"]].to_numpy().reshape(n, T).astype(np.int8)
            treatment_by_group = {}
            for g in group_labels:
                rows = treated[group_by_unit == g]
                if not (rows == rows[0]).all():
                    raise GroupTreatmentMismatch(
                        f"units in group {g!r} disagree on the treatment vector"
                    )
                treatment_by_group[g] = rows[0]
        else:
            if not metadata or "treated_group" not in metadata or "t_star" not in metadata:
                raise ConfigError(
                    "treated column absent: metadata with 'treated_group' and 't_star' required"
                )
            tg, ts = metadata["treated_group"], int(metadata["t_star"])
            if tg not in group_labels:
                raise ConfigError(f"treated_group {tg!r} not present in data")
            if not (2 <= ts <= T):
                raise ConfigError(f"t_star must lie in 2..T={T}")
            treatment_by_group = {
                g: np.where(np.arange(1, T + 1) >= ts, 1, 0) if g == tg else np.zeros(T, dtype=np.int8)
                for g in group_labels
            }

        return PanelDataset.from_arrays(unit_ids, group_by_unit, outcomes,
                                        treatment_by_group, group_labels, covariates)

    # -- serialization ---------------------------------------------------------

    def to_long_frame(self) -> pd.DataFrame:
        n, T = self.outcomes.shape
        treated = self.treatment[self.group_codes]  # (n, T)
        data = {
            "unit": np.repeat(self.units, T),
            "group": np.repeat(np.asarray([self.group_labels[c] for c in self.group_codes],
                                          dtype=object), T),
            "time": np.tile(np.arange(1, T + 1), n),
            "outcome": self.outcomes.ravel(),
            "treated": treated.ravel(),
        }
        if self.covariates is not None:
            data["covariate"] = np.repeat(self.covariates, T)
        return pd.DataFrame(data)

    def save_csv(self, path) -> None:
        self.to_long_frame().to_csv(path, index=False)


def load_panel(source, schema=None, metadata=None) -> PanelDataset:
    """Load a long-format CSV (path, file object, or text) into a PanelDataset.

    ``metadata`` may be a dict or a path to a JSON sidecar with keys
    ``treated_group`` and ``t_star``; it is required when the treated column
    is absent.
    """
    if isinstance(source, (str, Path)):
        frame = pd.read_csv(source)
    elif isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        frame = pd.read_csv(source)
    else:
        raise ConfigError(f"unsupported source type {type(source)!r}")
    if isinstance(metadata, (str, Path)):
        with open(metadata) as fh:
            metadata = json.load(fh)
    return PanelDataset.from_long(frame, schema=schema, metadata=metadata)


# ---------------------------------------------------------------------------
# group profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupProfile:
    """Pre-treatment summaries used by the distance metrics.

    ``quantiles`` are left-continuous empirical quantiles of the last
    pre-treatment period's outcomes on the grid ``u_j = j/(J+1)``; ``means``
    and ``cov`` summarize the S periods before treatment in ascending time
    order, treating each unit's S-vector as one draw.
    """

    group: object
    n_g: int
    grid: np.ndarray
    quantiles: np.ndarray
    means: np.ndarray
    cov: np.ndarray
    var_last: float
    p_hat: float

    def __post_init__(self):
        for arr in (self.grid, self.quantiles, self.means, self.cov):
            arr.flags.writeable = False


def empirical_quantiles(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Left-continuous inverse empirical CDF: Q(u) = inf{y : F(y) >= u}."""
    return np.quantile(np.asarray(values, dtype=np.float64), grid, method="inverted_cdf")


def quantile_grid(J: int) -> np.ndarray:
    return np.arange(1, J + 1) / (J + 1)


def profile_groups(data: PanelDataset, S: int = 1, J: int = 99,
                   t_star: int | None = None, groups=None) -> dict:
    """Build one GroupProfile per group over periods t*-S .. t*-1.

    ``t_star`` defaults to the single treated group's first treated period;
    pass it explicitly (with ``groups``) when running staggered cells.
    """
    if t_star is None:
        t_star = data.t_star
    if J < 2:
        raise ConfigError("quantile grid size J must be >= 2")
    if S < 1 or S > t_star - 1:
        raise InsufficientPrePeriods(
            f"need 1 <= S <= t_star-1 = {t_star - 1}, got S={S}"
        )
    if groups is None:
        groups = data.group_labels
    grid = quantile_grid(J)
    periods = range(t_star - S, t_star)
    out = {}
    for g in groups:
        block = data.outcome_block(g, periods)  # (n_g, S) ascending time
        n_g = block.shape[0]
        if n_g < 2:
            raise DegenerateGroup(f"group {g!r} has {n_g} unit(s); need >= 2")
        cov = np.atleast_2d(np.cov(block, rowvar=False, ddof=1))
        out[g] = GroupProfile(
            group=g,
            n_g=n_g,
            grid=grid,
            quantiles=empirical_quantiles(block[:, -1], grid),
            means=block.mean(axis=0),
            cov=cov,
            var_last=float(cov[-1, -1]),
            p_hat=n_g / data.n_units,
        )
    return out
