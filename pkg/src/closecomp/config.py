"""Pipeline configuration shared by the estimator, CLI, and Monte Carlo runs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigError

VALID_METRICS = ("wasserstein", "mean")
VALID_KERNELS = ("uniform", "epanechnikov", "triangular")
VALID_ESTIMANDS = ("att", "tau_mr", "tau_th", "placebo", "conditional", "group_time")


@dataclass
class PipelineConfig:
    """Everything the profile -> distance -> select -> estimate chain needs.

    ``bandwidth=None`` means the rate-based default c * n_min^(-1/6) with
    c = ``bandwidth_scale``.
    """

    metric: str = "wasserstein"
    kernel: str = "uniform"
    bandwidth: float | None = None
    bandwidth_scale: float = 0.5
    S: int = 1
    J: int = 99
    alpha: float = 0.05
    ridge: bool = False
    min_cell: int = 20
    th_mode: str = "test"       # "test" | "tolerance"
    th_alpha: float = 0.05
    th_tol: float = 0.05
    keep_influence: bool = True

    def validate(self) -> "PipelineConfig":
        if self.metric not in VALID_METRICS:
            raise ConfigError(f"metric must be one of {VALID_METRICS}, got {self.metric!r}")
        if self.kernel not in VALID_KERNELS:
            raise ConfigError(f"kernel must be one of {VALID_KERNELS}, got {self.kernel!r}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")
        if self.bandwidth_scale <= 0:
            raise ConfigError("bandwidth_scale must be positive")
        if self.S < 1:
            raise ConfigError("S must be >= 1")
        if self.J < 2:
            raise ConfigError("J must be >= 2")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.th_mode not in ("test", "tolerance"):
            raise ConfigError("th_mode must be 'test' or 'tolerance'")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Stable hash of the resolved configuration, carried in reports."""
        payload = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @staticmethod
    def from_dict(values: dict) -> "PipelineConfig":
        known = {f for f in PipelineConfig.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return PipelineConfig(**values).validate()
