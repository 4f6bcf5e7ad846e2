"""Ensemble smoother with multiple data assimilation and gain localization.

Each assimilation step applies

    m_k <- m_k + (R o K)(d_obs + sqrt(alpha) e_k - g(m_k)),
    K = C_md (C_dd + alpha C_e)^-1,

where R holds per-pair taper coefficients in [0, 1] and o is the
elementwise product. The Nd x Nd solve is factored once per step; gain and
taper entries are produced in parameter-row blocks so neither K nor R is
ever materialized in full. Taper coefficients are computed from the prior
ensemble and kept frozen across steps by default, which is the supported
production mode; per-step recomputation exists for experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import metrics, significance
from .ensemble import (
    DEFAULT_BLOCK_WIDTH,
    Ensemble,
    PredictedEnsemble,
    RowBlock,
    correlation_block,
    iter_blocks,
    row_anomalies,
)
from .errors import WrongTaperKindError
from .models import ForwardModel, evaluate_members
from .tapers import (
    CorrelationStats,
    DistanceGC,
    Logistic,
    PowerLaw,
    TaperSpec,
    evaluate_taper,
    sampling_std,
    standardize,
    taper_distance,
    taper_logistic,
    taper_power,
)

__all__ = [
    "MdaSchedule",
    "ObservationSet",
    "LocalizationPolicy",
    "RunSeed",
    "TaperField",
    "OnesTaper",
    "make_taper_field",
    "perturb_observations",
    "DdFactorization",
    "dd_factorization",
    "kalman_gain_block",
    "localized_update_step",
    "StepDiagnostics",
    "EsmdaResult",
    "run_esmda",
]


@dataclass(frozen=True)
class MdaSchedule:
    """Inflation factors alpha_l, one per assimilation step.

    The inverses must sum to one (the standard multiple-data-assimilation
    consistency condition); alpha_l = N_a for every step satisfies it.
    """

    alphas: tuple[float, ...]

    def __post_init__(self):
        if not self.alphas:
            raise ValueError("schedule needs at least one step")
        if any(a <= 0.0 for a in self.alphas):
            raise ValueError("inflation factors must be positive")
        total = math.fsum(1.0 / a for a in self.alphas)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(
                f"sum of 1/alpha must be 1 (got {total!r}); "
                "use MdaSchedule.uniform(n) for the standard choice"
            )

    @classmethod
    def uniform(cls, n_steps: int) -> "MdaSchedule":
        """alpha_l = n_steps for each of n_steps assimilation steps."""
        if n_steps < 1:
            raise ValueError("need at least one step")
        return cls(alphas=tuple(float(n_steps) for _ in range(n_steps)))

    @property
    def n_steps(self) -> int:
        return len(self.alphas)


@dataclass
class ObservationSet:
    """Observed data with per-datum error standard deviations (diagonal C_e)."""

    d_obs: np.ndarray
    sigma_e: np.ndarray

    def __post_init__(self):
        self.d_obs = np.asarray(self.d_obs, dtype=float).ravel()
        self.sigma_e = np.asarray(self.sigma_e, dtype=float).ravel()
        if self.sigma_e.shape != self.d_obs.shape:
            raise ValueError("sigma_e must match d_obs in length")
        if not (np.all(np.isfinite(self.d_obs)) and np.all(np.isfinite(self.sigma_e))):
            raise ValueError("observations must be finite")
        if np.any(self.sigma_e <= 0.0):
            raise ValueError("error std-devs must be strictly positive")

    @property
    def n_data(self) -> int:
        return self.d_obs.size


@dataclass(frozen=True)
class LocalizationPolicy:
    """Which taper to apply and how its threshold is chosen.

    spec=None disables localization (taper identically one). freeze=True
    (the supported production mode) computes tapers from the prior
    ensemble only and reuses them at every step.
    """

    spec: TaperSpec | None
    t0_strategy: significance.T0Strategy | None = None
    freeze: bool = True


@dataclass(frozen=True)
class RunSeed:
    """Root seed with derived substreams per (assimilation step, member).

    Substreams are numpy PCG64 generators created from SeedSequence spawn
    keys, so an identical seed reproduces a run bit-for-bit on one build.
    """

    seed: int

    def generator(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


class OnesTaper:
    """Taper identically one (no localization)."""

    def __init__(self, n_data: int):
        self.n_data = n_data

    def block(self, blk: RowBlock) -> np.ndarray:
        return np.ones((blk.width, self.n_data))


class TaperField:
    """Blockwise per-pair taper coefficients for one ensemble snapshot.

    Correlation-based families compute the block of model-data correlations
    on demand and map them through the taper; undefined correlations
    (zero-variance rows) map to taper zero. The distance family uses
    parameter coordinates and datum well positions instead.
    """

    def __init__(
        self,
        spec: TaperSpec,
        ens: Ensemble,
        pred: PredictedEnsemble,
        t0_strategy: significance.T0Strategy | None = None,
        block_width: int = DEFAULT_BLOCK_WIDTH,
    ):
        self.spec = spec
        self.n_data = pred.n_data
        self._ens = ens
        self._pred = pred
        self._n_e = ens.n_members

        if isinstance(spec, DistanceGC):
            if ens.coords is None:
                raise WrongTaperKindError(
                    "distance taper requires parameter grid coordinates"
                )
            if not pred.meta or any(m.well_xy is None for m in pred.meta):
                raise WrongTaperKindError(
                    "distance taper requires datum well positions"
                )
            self._well_x = np.array([m.well_xy[0] for m in pred.meta], dtype=float)
            self._well_y = np.array([m.well_xy[1] for m in pred.meta], dtype=float)
            self._pred_anoms = None
            self._t0 = None
            return

        self._pred_anoms = row_anomalies(pred.values)
        self._t0 = self._resolve_t0(spec, t0_strategy, block_width)

    def _resolve_t0(
        self,
        spec: TaperSpec,
        strategy: significance.T0Strategy | None,
        block_width: int,
    ) -> float | np.ndarray | None:
        """Threshold for power-law/logistic tapers: scalar or per-datum vector."""
        if not isinstance(spec, (PowerLaw, Logistic)):
            return None
        if strategy is None:
            if spec.t0 is None:
                raise ValueError("taper needs a t0 value or a threshold strategy")
            return spec.t0
        if isinstance(strategy, significance.FixedT0):
            return strategy.value
        if isinstance(strategy, significance.StudentT0):
            return significance.critical_t0(self._n_e, strategy.phi)
        return self._percentile_t0(strategy.p, block_width)

    def _percentile_t0(self, p: float, block_width: int) -> np.ndarray:
        """Per-datum thresholds: the p-quantile of t values per data source."""
        sources = [m.source for m in self._pred.meta] if self._pred.meta else [
            str(j) for j in range(self.n_data)
        ]
        groups: dict[str, list[int]] = {}
        for j, s in enumerate(sources):
            groups.setdefault(s, []).append(j)
        samples: dict[str, list[np.ndarray]] = {s: [] for s in groups}
        for blk in iter_blocks(self._ens.n_params, block_width):
            corr = correlation_block(self._ens, self._pred, blk, self._pred_anoms)
            t = standardize(corr, sampling_std(corr, self._n_e))
            for s, cols in groups.items():
                vals = t[:, cols].ravel()
                samples[s].append(vals[np.isfinite(vals)])
        t0_vec = np.empty(self.n_data)
        for s, cols in groups.items():
            pooled = np.concatenate(samples[s])
            t0_vec[cols] = significance.adaptive_t0(pooled, p)
        return t0_vec

    def block(self, blk: RowBlock) -> np.ndarray:
        if isinstance(self.spec, DistanceGC):
            coords = self._ens.coords[blk.slice()]
            dx = coords[:, 0][:, None] - self._well_x[None, :]
            dy = coords[:, 1][:, None] - self._well_y[None, :]
            return taper_distance(
                dx, dy, self.spec.len_major, self.spec.len_minor, self.spec.angle_deg
            )
        corr = correlation_block(self._ens, self._pred, blk, self._pred_anoms)
        undefined = np.isnan(corr)
        rho = np.where(undefined, 0.0, corr)
        sigma = sampling_std(rho, self._n_e)
        t = standardize(rho, sigma)
        if isinstance(self.spec, PowerLaw):
            r = taper_power(t, self.spec.beta, self._t0)
        elif isinstance(self.spec, Logistic):
            r = taper_logistic(t, self.spec.gamma, self._t0, self.spec.epsilon)
        else:
            stats = CorrelationStats(rho_hat=rho, sigma=sigma, t=t, n_e=self._n_e)
            r = evaluate_taper(self.spec, stats)
        r = np.asarray(r, dtype=float)
        r[undefined] = 0.0
        return r


def make_taper_field(
    policy: LocalizationPolicy,
    ens: Ensemble,
    pred: PredictedEnsemble,
    block_width: int = DEFAULT_BLOCK_WIDTH,
):
    """Build the taper provider for one ensemble snapshot (ones when disabled)."""
    if policy.spec is None:
        return OnesTaper(pred.n_data)
    return TaperField(policy.spec, ens, pred, policy.t0_strategy, block_width)


def perturb_observations(
    obs: ObservationSet,
    alpha: float,
    run_seed: RunSeed,
    step: int,
    n_members: int,
) -> np.ndarray:
    """Perturbed-data matrix: column k is d_obs + sqrt(alpha) e_k.

    e_k ~ N(0, C_e) is drawn from the (step, member) substream of the run
    seed, so columns are reproducible independently of evaluation order.
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    out = np.empty((obs.n_data, n_members))
    root = math.sqrt(alpha)
    for k in range(n_members):
        e = run_seed.generator(step, k).standard_normal(obs.n_data)
        out[:, k] = obs.d_obs + root * (obs.sigma_e * e)
    return out


@dataclass
class DdFactorization:
    """Cholesky factorization of (C_dd + alpha C_e) with the data anomalies."""

    cho: tuple
    delta_d: np.ndarray
    n_members: int


def dd_factorization(
    pred: PredictedEnsemble, obs: ObservationSet, alpha: float
) -> DdFactorization:
    """Factor the Nd x Nd solve once per assimilation step."""
    if not np.all(np.isfinite(pred.values)):
        raise ValueError("predicted data must be finite")
    delta_d = pred.values - pred.values.mean(axis=1, keepdims=True)
    c_dd = (delta_d @ delta_d.T) / (pred.n_members - 1)
    a = c_dd + np.diag(alpha * obs.sigma_e**2)
    return DdFactorization(
        cho=cho_factor(a, lower=True), delta_d=delta_d, n_members=pred.n_members
    )


def kalman_gain_block(
    ens: Ensemble,
    pred: PredictedEnsemble,
    obs: ObservationSet,
    alpha: float,
    block: RowBlock,
    factorization: DdFactorization | None = None,
) -> np.ndarray:
    """One block of rows of the Kalman gain C_md (C_dd + alpha C_e)^-1.

    Pass the factorization from dd_factorization() to share the Nd x Nd
    factor across blocks within a step.
    """
    if factorization is None:
        factorization = dd_factorization(pred, obs, alpha)
    rows = ens.values[block.slice()]
    if not np.all(np.isfinite(rows)):
        raise ValueError("ensemble rows must be finite")
    dm = rows - rows.mean(axis=1, keepdims=True)
    c_md = (dm @ factorization.delta_d.T) / (factorization.n_members - 1)
    return cho_solve(factorization.cho, c_md.T).T


def localized_update_step(
    ens: Ensemble,
    pred: PredictedEnsemble,
    obs: ObservationSet,
    alpha: float,
    taper_rows: Callable[[RowBlock], np.ndarray],
    perturbed: np.ndarray,
    block_width: int = DEFAULT_BLOCK_WIDTH,
) -> Ensemble:
    """One localized update pass over all parameter rows.

    The tapered gain (R o K) is formed entrywise per block and applied to
    the innovation columns; the caller supplies the perturbed-data matrix
    from perturb_observations().
    """
    if perturbed.shape != (obs.n_data, ens.n_members):
        raise ValueError("perturbed-data matrix has wrong shape")
    resid = perturbed - pred.values
    fact = dd_factorization(pred, obs, alpha)
    new_values = ens.values.copy()
    for blk in iter_blocks(ens.n_params, block_width):
        gain = kalman_gain_block(ens, pred, obs, alpha, blk, fact)
        r = taper_rows(blk)
        if r.shape != gain.shape:
            raise ValueError("taper block shape does not match gain block")
        if np.any(r < 0.0) or np.any(r > 1.0):
            raise ValueError("taper values must lie in [0, 1]")
        new_values[blk.slice()] += (r * gain) @ resid
    return Ensemble(
        values=new_values,
        names=None if ens.names is None else list(ens.names),
        coords=None if ens.coords is None else ens.coords.copy(),
    )


@dataclass
class StepDiagnostics:
    """Forecast-time metrics for one assimilation step.

    step counts from 1; the entry with step = n_steps + 1 and alpha = None
    describes the final posterior (forecast after the last update).
    """

    step: int
    alpha: float | None
    objective: float
    nv: float
    n_eff: float
    chi: float
    taper_histogram: np.ndarray

    def rows(self) -> list[tuple[int, str, float]]:
        """Long-form (step, metric, value) rows for the diagnostics stream."""
        out = [
            (self.step, "objective", self.objective),
            (self.step, "nv", self.nv),
            (self.step, "n_eff", self.n_eff),
            (self.step, "chi", self.chi),
        ]
        for b, count in enumerate(self.taper_histogram):
            out.append((self.step, f"taper_hist_{b}", float(count)))
        return out


@dataclass
class EsmdaResult:
    posterior: Ensemble
    diagnostics: list[StepDiagnostics] = field(default_factory=list)
    taper_field: TaperField | OnesTaper | None = None


def run_esmda(
    prior: Ensemble,
    model: ForwardModel,
    obs: ObservationSet,
    schedule: MdaSchedule,
    policy: LocalizationPolicy,
    seed: RunSeed,
    block_width: int = DEFAULT_BLOCK_WIDTH,
) -> EsmdaResult:
    """Run the full multi-step assimilation.

    Per step: forward-evaluate all members, (re)build the taper field
    (first step only when frozen), record diagnostics, perturb the
    observations, update blockwise. A final forward evaluation after the
    last update provides the posterior diagnostics entry.
    """
    if obs.n_data != model.n_data:
        raise ValueError("observation set size does not match the model")
    ens = prior.copy()
    taper_field = None
    diagnostics: list[StepDiagnostics] = []
    frozen_footprint: tuple[float, float, np.ndarray] | None = None

    def footprint(provider) -> tuple[float, float, np.ndarray]:
        ne = metrics.n_eff(provider.block, ens.n_params, obs.n_data, block_width)
        return (
            ne,
            metrics.chi(ne, ens.n_params),
            metrics.taper_histogram(
                provider.block, ens.n_params, obs.n_data, block_width=block_width
            ),
        )

    for step, alpha in enumerate(schedule.alphas, start=1):
        pred = PredictedEnsemble(
            values=evaluate_members(model, ens.values), meta=model.datum_meta
        )
        if taper_field is None or not policy.freeze:
            taper_field = make_taper_field(policy, ens.copy(), pred, block_width)
            frozen_footprint = None
        if frozen_footprint is None:
            frozen_footprint = footprint(taper_field)
        ne_val, chi_val, hist = frozen_footprint
        diagnostics.append(
            StepDiagnostics(
                step=step,
                alpha=alpha,
                objective=metrics.objective_function(pred, obs),
                nv=metrics.normalized_variance(prior, ens),
                n_eff=ne_val,
                chi=chi_val,
                taper_histogram=hist.copy(),
            )
        )
        perturbed = perturb_observations(obs, alpha, seed, step, ens.n_members)
        ens = localized_update_step(
            ens, pred, obs, alpha, taper_field.block, perturbed, block_width
        )

    pred = PredictedEnsemble(
        values=evaluate_members(model, ens.values), meta=model.datum_meta
    )
    ne_val, chi_val, hist = frozen_footprint
    diagnostics.append(
        StepDiagnostics(
            step=schedule.n_steps + 1,
            alpha=None,
            objective=metrics.objective_function(pred, obs),
            nv=metrics.normalized_variance(prior, ens),
            n_eff=ne_val,
            chi=chi_val,
            taper_histogram=hist.copy(),
        )
    )
    return EsmdaResult(posterior=ens, diagnostics=diagnostics, taper_field=taper_field)
