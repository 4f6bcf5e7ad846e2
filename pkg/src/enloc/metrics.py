"""Evaluation metrics: data mismatch, variance retention, update footprint.

The taper-dependent aggregates (effective updated-parameter count, taper
histogram) consume a block provider, a callable RowBlock -> (width x Nd)
taper array, so they stream over parameter rows without ever holding the
full taper matrix.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ensemble import Ensemble, PredictedEnsemble, RowBlock, iter_blocks

__all__ = [
    "MetricReport",
    "objective_function",
    "normalized_variance",
    "mean_offset",
    "n_eff",
    "chi",
    "taper_histogram",
    "HISTOGRAM_BINS",
]

TaperProvider = Callable[[RowBlock], np.ndarray]

HISTOGRAM_BINS = 20
OBJ_BAND = (0.5, 1.0)  # practical data-match range for a posterior ensemble


@dataclass
class MetricReport:
    """Per-run summary of data match, variance retention, and taper footprint."""

    obj_mean: float
    nv: float
    mean_offset: float
    n_eff: float
    chi: float
    taper_histogram: np.ndarray
    nv_dummy: float | None = None

    @property
    def obj_in_band(self) -> bool:
        """True when the mean objective falls in the practical [0.5, 1] band."""
        return OBJ_BAND[0] <= self.obj_mean <= OBJ_BAND[1]


def objective_function(pred: PredictedEnsemble, obs) -> float:
    """Average normalized data-mismatch objective.

    (1/Ne) sum_k (1/(2 Nd)) sum_j ((d_obs_j - g_j(m_k)) / sigma_e_j)^2.
    Approximately 1/2 for a posterior ensemble in the linear-Gaussian case.
    """
    resid = (obs.d_obs[:, None] - pred.values) / obs.sigma_e[:, None]
    return float(np.mean(np.sum(resid * resid, axis=0) / (2.0 * pred.n_data)))


def normalized_variance(
    prior: Ensemble, posterior: Ensemble, subset: Sequence[int] | None = None
) -> float:
    """Mean posterior/prior variance ratio over a parameter subset.

    1 means no uncertainty reduction; 0 means ensemble collapse. Raises if
    any prior variance in the subset is zero.
    """
    if prior.values.shape[0] != posterior.values.shape[0]:
        raise ValueError("prior and posterior must have the same parameter count")
    idx = np.arange(prior.n_params) if subset is None else np.asarray(subset, dtype=int)
    var_prior = np.var(prior.values[idx], axis=1, ddof=1)
    var_post = np.var(posterior.values[idx], axis=1, ddof=1)
    if np.any(var_prior <= 0.0):
        raise ValueError("zero prior variance in the requested subset")
    return float(np.mean(var_post / var_prior))


def mean_offset(prior: Ensemble, posterior: Ensemble) -> float:
    """Average |posterior mean - prior mean| in units of the prior std.

    Zero-spread prior rows carry no scale and are excluded with a warning.
    """
    if prior.values.shape[0] != posterior.values.shape[0]:
        raise ValueError("prior and posterior must have the same parameter count")
    std_prior = np.std(prior.values, axis=1, ddof=1)
    ok = std_prior > 0.0
    if not np.all(ok):
        warnings.warn(
            f"excluding {int(np.sum(~ok))} zero-spread prior rows from mean offset",
            stacklevel=2,
        )
    shift = np.abs(
        posterior.values[ok].mean(axis=1) - prior.values[ok].mean(axis=1)
    )
    return float(np.mean(shift / std_prior[ok]))


def n_eff(
    taper_provider: TaperProvider,
    n_params: int,
    n_data: int,
    block_width: int = 1024,
) -> float:
    """Effective number of parameters updated per observation.

    (1/Nd) sum_j sum_i r_ij, streamed blockwise; block partial sums are
    combined with compensated summation so the result does not depend on
    the block schedule.
    """
    partials = [float(np.sum(taper_provider(blk))) for blk in iter_blocks(n_params, block_width)]
    return math.fsum(partials) / n_data


def chi(n_eff_value: float, n_params: int) -> float:
    """Average fraction of model parameters updated per observation."""
    if n_params <= 0:
        raise ValueError("n_params must be positive")
    return n_eff_value / n_params


def taper_histogram(
    taper_provider: TaperProvider,
    n_params: int,
    n_data: int,
    bins: int = HISTOGRAM_BINS,
    block_width: int = 1024,
) -> np.ndarray:
    """Counts of taper values over equal-width bins on [0, 1].

    Bins are right-open except the last, which includes 1.0; counts sum to
    n_params * n_data.
    """
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    for blk in iter_blocks(n_params, block_width):
        counts += np.histogram(taper_provider(blk), bins=edges)[0]
    total = int(counts.sum())
    if total != n_params * n_data:
        raise ValueError(
            f"taper values outside [0, 1]: binned {total} of {n_params * n_data}"
        )
    return counts
