"""Exception types shared across the package.

Every error raised by the public API derives from ClosecompError so callers
(and the CLI) can distinguish data violations, configuration problems, and
estimation failures by catching one of the three intermediate bases.
"""


class ClosecompError(Exception):
    """Base class for all package errors."""


class DataError(ClosecompError):
    """Input data violates a validated invariant (CLI exit code 1)."""


class ConfigError(ClosecompError):
    """Missing/inconsistent configuration or metadata (CLI exit code 2)."""


class EstimationError(ClosecompError):
    """A well-formed request that cannot be estimated (CLI exit code 3)."""


# ---------------------------------------------------------------------------
# panel
# ---------------------------------------------------------------------------

class MissingColumn(DataError):
    pass


class UnbalancedPanel(DataError):
    def __init__(self, units, message=None):
        self.units = list(units)
        super().__init__(message or f"unbalanced panel; offending units: {self.units[:10]}")


class DuplicateObservation(DataError):
    pass


class GroupTreatmentMismatch(DataError):
    pass


class TreatedInFirstPeriod(DataError):
    pass


class InvalidPeriods(DataError):
    pass


class InsufficientPrePeriods(DataError):
    pass


class DegenerateGroup(DataError):
    pass


# ---------------------------------------------------------------------------
# distance
# ---------------------------------------------------------------------------

class GridMismatch(DataError):
    pass


class ZeroScale(EstimationError):
    pass


class SingularPooledCovariance(EstimationError):
    pass


class DimensionMismatch(DataError):
    pass


class TooFewUnits(DataError):
    pass


# ---------------------------------------------------------------------------
# selection / estimation
# ---------------------------------------------------------------------------

class NoCloseComparisonGroups(EstimationError):
    """All kernel values are zero at the given bandwidth.

    Carries the three smallest distances and the minimal bandwidth that would
    admit at least one group (exact for the uniform kernel, which includes
    the boundary; kernels vanishing at 1 need any strictly larger bandwidth).
    """

    def __init__(self, nearest, min_bandwidth, message=None):
        self.nearest = list(nearest)            # [(group, d_hat), ...] ascending
        self.min_bandwidth = float(min_bandwidth)
        super().__init__(
            message
            or "no comparison group within bandwidth; nearest: "
            + ", ".join(f"{g}={d:.4g}" for g, d in self.nearest)
            + f"; minimal admitting bandwidth: {self.min_bandwidth:.4g}"
        )


class EmptySelection(EstimationError):
    pass


class PeriodOutOfRange(EstimationError):
    pass


class TooFewGroups(EstimationError):
    pass


class NoCellsSurviveTrimming(EstimationError):
    pass


class NoCandidatesForCell(EstimationError):
    def __init__(self, cells, message=None):
        self.cells = list(cells)
        super().__init__(message or f"no candidate comparison groups for cells: {self.cells}")


class RankDeficientPsi(EstimationError):
    pass


class NoComparisonGroups(DataError):
    pass


# ---------------------------------------------------------------------------
# dgp / montecarlo
# ---------------------------------------------------------------------------

class InvalidSpec(ConfigError):
    pass


class MissingPresetForCell(ConfigError):
    pass
