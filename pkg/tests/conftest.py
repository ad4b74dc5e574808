import numpy as np
import pytest

from closecomp.panel import PanelDataset


def build_panel(group_outcomes, treated_group, t_star, covariates=None):
    """Assemble a PanelDataset from {label: (n_g, T) outcome array}."""
    labels = list(group_outcomes)
    blocks = [np.asarray(group_outcomes[g], dtype=float) for g in labels]
    T = blocks[0].shape[1]
    outcomes = np.vstack(blocks)
    units = np.arange(outcomes.shape[0])
    group_by_unit = np.repeat(np.asarray(labels, dtype=object),
                              [b.shape[0] for b in blocks])
    periods = np.arange(1, T + 1)
    treatment = {
        g: (periods >= t_star).astype(np.int8) if g == treated_group
        else np.zeros(T, dtype=np.int8)
        for g in labels
    }
    cov = None
    if covariates is not None:
        cov = np.concatenate([np.asarray(covariates[g]) for g in labels])
    return PanelDataset.from_arrays(units, group_by_unit, outcomes, treatment,
                                    labels, covariates=cov)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
