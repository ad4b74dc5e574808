"""Kernel weighting of distances into an estimated close-comparison set.

Groups within bandwidth of the treated group (in the chosen standardized
metric) receive kernel weights proportional to K(d_g/h) * p_g; the selected
set is every group with a strictly positive kernel value.  Only compactly
supported kernels are admitted, so selection is genuine: far groups get
exactly zero weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NoCloseComparisonGroups


@dataclass(frozen=True)
class KernelSpec:
    """A symmetric, bounded kernel with support in [-1, 1] and K(0) > 0."""

    kind: str
    fn: Callable[[np.ndarray], np.ndarray]
    positive_at_boundary: bool  # K(1) > 0, true only for the uniform kernel


def _uniform(u):
    return (np.abs(u) <= 1.0).astype(np.float64)


def _epanechnikov(u):
    u = np.asarray(u, dtype=np.float64)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u**2), 0.0)


def _triangular(u):
    u = np.asarray(u, dtype=np.float64)
    return np.where(np.abs(u) <= 1.0, 1.0 - np.abs(u), 0.0)


KERNELS = {
    "uniform": KernelSpec("uniform", _uniform, positive_at_boundary=True),
    "epanechnikov": KernelSpec("epanechnikov", _epanechnikov, positive_at_boundary=False),
    "triangular": KernelSpec("triangular", _triangular, positive_at_boundary=False),
}


def get_kernel(kernel) -> KernelSpec:
    if isinstance(kernel, KernelSpec):
        return kernel
    try:
        return KERNELS[kernel]
    except KeyError:
        raise ConfigError(f"unknown kernel {kernel!r}; choose from {sorted(KERNELS)}")


def kernel_eval(kernel, u):
    """Evaluate a kernel (by spec or name) at scalar or array ``u``."""
    spec = get_kernel(kernel)
    out = spec.fn(np.asarray(u, dtype=np.float64))
    return float(out) if np.isscalar(u) or np.ndim(u) == 0 else out


def default_bandwidth(n_min: int, c: float = 0.5) -> float:
    """h = c * n_min^(-1/6): shrinks, but slowly enough that
    sqrt(n_min) * h^2 still diverges (the undersmoothing rate)."""
    if n_min < 1:
        raise ConfigError("n_min must be a positive integer")
    if c <= 0:
        raise ConfigError("bandwidth scale c must be positive")
    return c * float(n_min) ** (-1.0 / 6.0)


@dataclass(frozen=True)
class SelectionResult:
    """Estimated close-comparison set with its kernel weights.

    ``weights`` covers every candidate group (zero when unselected);
    weights are positive exactly on ``selected`` and sum to one.
    """

    bandwidth: float
    kernel: str
    metric: str
    distances: tuple
    weights: dict
    selected: tuple
    treated_excluded: bool = True

    def weight(self, group) -> float:
        return self.weights.get(group, 0.0)

    def to_dict(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "kernel": self.kernel,
            "metric": self.metric,
            "selected": list(self.selected),
            "weights": {str(g): w for g, w in self.weights.items()},
            "distances": [d.to_dict() for d in self.distances],
            "treated_excluded": self.treated_excluded,
        }


def select_groups(distances, p_hats, kernel="uniform", h: float | None = None,
                  bandwidth_scale: float = 0.5, n_min: int | None = None) -> SelectionResult:
    """Turn distance reports into weights w_g = K(d_g/h) p_g / sum(...).

    ``distances`` must cover every candidate comparison group (never the
    treated group itself).  If ``h`` is None it defaults to
    ``default_bandwidth(n_min, bandwidth_scale)``.
    """
    spec = get_kernel(kernel)
    if h is None:
        if n_min is None:
            raise ConfigError("either an explicit bandwidth h or n_min is required")
        h = default_bandwidth(n_min, bandwidth_scale)
    if h <= 0:
        raise ConfigError("bandwidth must be positive")
    if not distances:
        raise ConfigError("no candidate distances supplied")

    groups = [d.group for d in distances]
    d_hat = np.array([d.d_hat for d in distances], dtype=np.float64)
    p = np.array([p_hats[g] for g in groups], dtype=np.float64)
    k_vals = spec.fn(d_hat / h)
    raw = k_vals * p
    total = raw.sum()
    if total <= 0.0:
        order = np.argsort(d_hat, kind="stable")
        nearest = [(groups[i], float(d_hat[i])) for i in order[:3]]
        min_h = float(d_hat[order[0]])
        raise NoCloseComparisonGroups(nearest, min_h)

    weights = {g: float(w / total) for g, w in zip(groups, raw)}
    selected = tuple(g for g, k in zip(groups, k_vals) if k > 0.0)
    return SelectionResult(
        bandwidth=float(h),
        kernel=spec.kind,
        metric=distances[0].metric,
        distances=tuple(distances),
        weights=weights,
        selected=selected,
    )
