"""Desk-scale synthetic forward models and prior-ensemble generators.

Three model families cover the experiment designs:

* LinearModel: d = G m, the oracle model for linear-Gaussian checks.
* ScalarToyModel: a smooth random-feature map of a block of active scalar
  parameters, plus a block of dummy parameters that provably do not enter
  the response. Any posterior variance reduction of the dummies is pure
  sampling error.
* GridFlowProxy: a 2-D/3-D gridded waterflood proxy with five-spot wells.
  Each well's response depends only on the cells along straight-line
  corridors between producer-injector pairs, so the true sensitivity mask
  of every datum is known exactly by construction.

Priors are standard Gaussian for scalar parameters and anisotropic
Gaussian random fields (dense Cholesky factorization of the correlation
matrix) for grid properties.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .ensemble import DatumMeta, Ensemble
from .errors import FieldGenerationError, ForwardModelError

__all__ = [
    "ForwardModel",
    "LinearModel",
    "ScalarToyModel",
    "GridFlowProxy",
    "GrfPrior",
    "grf_correlation",
    "sample_grf",
    "sample_grid_prior",
    "evaluate_members",
]

MAX_DENSE_CELLS = 20_000  # dense-Cholesky ceiling for random-field sampling


class ForwardModel(ABC):
    """Deterministic map from a parameter vector to a data vector."""

    datum_meta: list[DatumMeta]

    @property
    @abstractmethod
    def n_params(self) -> int: ...

    @property
    @abstractmethod
    def n_data(self) -> int: ...

    @abstractmethod
    def evaluate(self, m: np.ndarray) -> np.ndarray:
        """Evaluate one parameter vector; pure and repeatable."""

    def evaluate_ensemble(self, values: np.ndarray) -> np.ndarray:
        """Evaluate all columns of an (Nm x Ne) matrix into (Nd x Ne)."""
        out = np.empty((self.n_data, values.shape[1]))
        for k in range(values.shape[1]):
            out[:, k] = self.evaluate(values[:, k])
        return out


def evaluate_members(model: ForwardModel, values: np.ndarray) -> np.ndarray:
    """Evaluate an ensemble, aborting with the member id on any failure."""
    try:
        pred = model.evaluate_ensemble(values)
    except Exception as exc:  # noqa: BLE001 - simulator failures are opaque
        raise ForwardModelError(f"forward model failed: {exc}") from exc
    bad = ~np.all(np.isfinite(pred), axis=0)
    if np.any(bad):
        member = int(np.argmax(bad))
        raise ForwardModelError(
            f"forward model produced non-finite output for member {member}",
            member=member,
        )
    return pred


class LinearModel(ForwardModel):
    """d = G m."""

    def __init__(self, G: np.ndarray):
        self.G = np.asarray(G, dtype=float)
        if self.G.ndim != 2 or not np.all(np.isfinite(self.G)):
            raise ValueError("G must be a finite 2-D matrix")
        self.datum_meta = [DatumMeta(source=f"d{j}") for j in range(self.G.shape[0])]

    @property
    def n_params(self) -> int:
        return self.G.shape[1]

    @property
    def n_data(self) -> int:
        return self.G.shape[0]

    def evaluate(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if m.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {m.shape}")
        return self.G @ m

    def evaluate_ensemble(self, values: np.ndarray) -> np.ndarray:
        return self.G @ values


class ScalarToyModel(ForwardModel):
    """Smooth nonlinear response of scalar parameters with an inert dummy block.

    The response is a fixed, seeded random-feature map of the first
    n_active parameters only:

        d = V tanh(W m_active + b)

    so the final n_dummy parameters have exactly zero influence. Data are
    organized as n_series sources ("wells") with n_times points each.
    """

    def __init__(
        self,
        n_active: int = 15,
        n_dummy: int = 5,
        n_series: int = 6,
        n_times: int = 50,
        structure_seed: int = 0,
        n_features: int = 48,
        input_scale: float = 0.5,
        output_scale: float = 2.0,
    ):
        if n_active < 1 or n_dummy < 0:
            raise ValueError("need n_active >= 1 and n_dummy >= 0")
        self.n_active = n_active
        self.n_dummy = n_dummy
        self.n_series = n_series
        self.n_times = n_times
        rng = np.random.default_rng(structure_seed)
        nd = n_series * n_times
        self._W = rng.standard_normal((n_features, n_active)) * (
            input_scale / math.sqrt(n_active)
        )
        self._b = rng.standard_normal(n_features) * input_scale
        self._V = rng.standard_normal((nd, n_features)) * (
            output_scale / math.sqrt(n_features)
        )
        self.datum_meta = [
            DatumMeta(source=f"w{s + 1}", kind="resp", time=t)
            for s in range(n_series)
            for t in range(n_times)
        ]

    @property
    def n_params(self) -> int:
        return self.n_active + self.n_dummy

    @property
    def n_data(self) -> int:
        return self._V.shape[0]

    @property
    def dummy_indices(self) -> np.ndarray:
        return np.arange(self.n_active, self.n_params)

    @property
    def param_names(self) -> list[str]:
        return [f"act_{i + 1}" for i in range(self.n_active)] + [
            f"dummy_{i + 1}" for i in range(self.n_dummy)
        ]

    def evaluate(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if m.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {m.shape}")
        return self._V @ np.tanh(self._W @ m[: self.n_active] + self._b)

    def evaluate_ensemble(self, values: np.ndarray) -> np.ndarray:
        return self._V @ np.tanh(self._W @ values[: self.n_active, :] + self._b[:, None])

    def sample_prior(self, count: int, seed: int) -> Ensemble:
        """Standard Gaussian prior over all parameters, dummies included."""
        rng = np.random.default_rng(seed)
        return Ensemble(
            values=rng.standard_normal((self.n_params, count)),
            names=self.param_names,
        )


def _bresenham(i0: int, j0: int, i1: int, j1: int) -> list[tuple[int, int]]:
    """Cells on the rasterized segment between two gridblocks, inclusive."""
    cells = []
    di, dj = abs(i1 - i0), abs(j1 - j0)
    si = 1 if i0 < i1 else -1
    sj = 1 if j0 < j1 else -1
    err = di - dj
    i, j = i0, j0
    while True:
        cells.append((i, j))
        if i == i1 and j == j1:
            break
        e2 = 2 * err
        if e2 > -dj:
            err -= dj
            i += si
        if e2 < di:
            err += di
            j += sj
    return cells


class GridFlowProxy(ForwardModel):
    """Waterflood proxy on an nx x ny x n_layers grid with five-spot wells.

    Parameters are two property fields, porosity then log-permeability,
    each ordered layer-major then row-major (index = (k ny + j) nx + i).

    Producers sit on a prod_grid x prod_grid lattice; injectors sit at the
    centers of the producer squares. For every injector-producer pair and
    every layer, a corridor is the set of cells on the straight line
    between the wells. With corridor length L (cell count):

        T      = L / sum(exp(-logk))          harmonic-mean transmissibility
        phibar = mean(porosity)               over corridor cells
        t_bt   = t_ref * L * phibar / T       breakthrough time (months)

    Producer water cut at report time t averages a logistic ramp
    1/(1 + exp(-(t - t_bt)/ramp_width)) over its corridors and layers.
    Injector water rate is q_nom * sum of corridor T, scaled by the fixed
    ramp (1 + 0.2 t / t_end). Responses therefore touch corridor cells
    only, which defines the exact per-datum sensitivity masks.
    """

    def __init__(
        self,
        nx: int = 60,
        ny: int = 60,
        n_layers: int = 1,
        prod_grid: int = 3,
        n_times: int = 24,
        t_ref: float = 4.0,
        ramp_width: float = 2.0,
        q_nom: float = 1.0,
    ):
        if nx < 8 or ny < 8 or n_layers < 1 or prod_grid < 2:
            raise ValueError("grid too small for a five-spot layout")
        self.nx, self.ny, self.n_layers = nx, ny, n_layers
        self.n_times = n_times
        self.t_ref = t_ref
        self.ramp_width = ramp_width
        self.q_nom = q_nom
        self.times = np.arange(1, n_times + 1, dtype=float)
        self.t_end = float(n_times)

        sx, sy = nx / prod_grid, ny / prod_grid
        self.producers = [
            (int((r + 0.5) * sx), int((c + 0.5) * sy))
            for r in range(prod_grid)
            for c in range(prod_grid)
        ]
        self.injectors = [
            (int((r + 1.0) * sx), int((c + 1.0) * sy))
            for r in range(prod_grid - 1)
            for c in range(prod_grid - 1)
        ]

        # injector -> 4 surrounding producers in the five-spot pattern
        self._pairs: list[tuple[int, int, list[tuple[int, int]]]] = []
        for ii, (xi, yi) in enumerate(self.injectors):
            dist = [
                (math.hypot(xp - xi, yp - yi), ip)
                for ip, (xp, yp) in enumerate(self.producers)
            ]
            for _, ip in sorted(dist)[:4]:
                xp, yp = self.producers[ip]
                self._pairs.append((ii, ip, _bresenham(xp, yp, xi, yi)))

        self._cells_per_layer = nx * ny
        self._field_size = self._cells_per_layer * n_layers
        self._prod_masks, self._inj_masks = self._build_masks()
        self.datum_meta = []
        for ip, (xp, yp) in enumerate(self.producers):
            for t in range(n_times):
                self.datum_meta.append(
                    DatumMeta(source=f"P{ip + 1}", kind="wct", time=t, well_xy=(xp, yp))
                )
        for ii, (xi, yi) in enumerate(self.injectors):
            for t in range(n_times):
                self.datum_meta.append(
                    DatumMeta(source=f"I{ii + 1}", kind="wir", time=t, well_xy=(xi, yi))
                )

    @property
    def n_params(self) -> int:
        return 2 * self._field_size

    @property
    def n_data(self) -> int:
        return (len(self.producers) + len(self.injectors)) * self.n_times

    def cell_index(self, i: int, j: int, k: int) -> int:
        return (k * self.ny + j) * self.nx + i

    @property
    def coords(self) -> np.ndarray:
        """(Nm, 3) gridblock coordinates, repeated for the two fields."""
        ij = np.array(
            [
                (i, j, k)
                for k in range(self.n_layers)
                for j in range(self.ny)
                for i in range(self.nx)
            ],
            dtype=int,
        )
        return np.vstack([ij, ij])

    @property
    def param_names(self) -> list[str]:
        names = []
        for field in ("poro", "logk"):
            for k in range(self.n_layers):
                for j in range(self.ny):
                    for i in range(self.nx):
                        names.append(f"{field}_{i}_{j}_{k}")
        return names

    def _corridor_indices(self, cells: list[tuple[int, int]]) -> np.ndarray:
        """Flat cell indices of a corridor across all layers, one row per layer."""
        base = np.array([j * self.nx + i for i, j in cells], dtype=int)
        return np.stack(
            [base + k * self._cells_per_layer for k in range(self.n_layers)]
        )

    def _build_masks(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        prod_cells = [set() for _ in self.producers]
        inj_cells = [set() for _ in self.injectors]
        for ii, ip, cells in self._pairs:
            idx = self._corridor_indices(cells).ravel()
            prod_cells[ip].update(idx.tolist())
            inj_cells[ii].update(idx.tolist())
        nm = 2 * self._field_size
        prod_masks = []
        for cs in prod_cells:
            mask = np.zeros(nm, dtype=bool)
            idx = np.fromiter(cs, dtype=int)
            mask[idx] = True  # porosity block
            mask[idx + self._field_size] = True  # log-permeability block
            prod_masks.append(mask)
        inj_masks = []
        for cs in inj_cells:
            mask = np.zeros(nm, dtype=bool)
            idx = np.fromiter(cs, dtype=int)
            mask[idx + self._field_size] = True  # rate senses log-permeability only
            inj_masks.append(mask)
        return prod_masks, inj_masks

    def sensitivity_mask(self, datum: int) -> np.ndarray:
        """Exact parameter-sensitivity mask of one datum (True where it can respond)."""
        meta = self.datum_meta[datum]
        if meta.kind == "wct":
            return self._prod_masks[int(meta.source[1:]) - 1]
        return self._inj_masks[int(meta.source[1:]) - 1]

    def evaluate(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if m.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {m.shape}")
        return self.evaluate_ensemble(m[:, None])[:, 0]

    def evaluate_ensemble(self, values: np.ndarray) -> np.ndarray:
        poro = values[: self._field_size, :]
        inv_perm = np.exp(-values[self._field_size :, :])
        n_e = values.shape[1]
        n_prod, n_inj = len(self.producers), len(self.injectors)

        wct = np.zeros((n_prod, self.n_times, n_e))
        rate = np.zeros((n_inj, self.n_times, n_e))
        corridors_per_prod = np.zeros(n_prod)
        t = self.times[None, :, None]  # broadcast over (layer, time, member)

        for ii, ip, cells in self._pairs:
            idx = self._corridor_indices(cells)  # (n_layers, L)
            length = idx.shape[1]
            trans = length / inv_perm[idx, :].sum(axis=1)  # (n_layers, n_e)
            phibar = poro[idx, :].mean(axis=1)
            t_bt = self.t_ref * length * phibar / trans
            ramp = 1.0 / (1.0 + np.exp(-(t - t_bt[:, None, :]) / self.ramp_width))
            wct[ip] += ramp.sum(axis=0) / self.n_layers
            corridors_per_prod[ip] += 1
            rate[ii] += self.q_nom * trans.sum(axis=0)[None, :] * (
                1.0 + 0.2 * self.times[:, None] / self.t_end
            )

        wct /= np.maximum(corridors_per_prod, 1)[:, None, None]
        out = np.concatenate(
            [wct.reshape(-1, n_e), rate.reshape(-1, n_e)], axis=0
        )
        return out


@dataclass(frozen=True)
class GrfPrior:
    """Anisotropic Gaussian-random-field prior for one 2-D grid property.

    The correlation between two cells uses the normalized anisotropic
    distance h (offset rotated by angle_deg, scaled by the ranges):
    exp(-3 h) for the exponential variogram and exp(-3 h^2) for the
    Gaussian one, so correlation drops to ~0.05 at the stated ranges.
    """

    nx: int
    ny: int
    kind: str = "exponential"
    range_major: float = 20.0
    range_minor: float = 10.0
    angle_deg: float = 0.0
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exponential", "gaussian"):
            raise ValueError(f"unknown variogram kind {self.kind!r}")
        if not self.range_major >= self.range_minor > 0.0:
            raise ValueError("require range_major >= range_minor > 0")
        if self.std <= 0.0:
            raise ValueError("std must be > 0")
        if self.nx * self.ny > MAX_DENSE_CELLS:
            raise ValueError(
                f"grid has {self.nx * self.ny} cells; dense sampling supports "
                f"at most {MAX_DENSE_CELLS}"
            )


_chol_cache: dict[tuple, np.ndarray] = {}


def grf_correlation(prior: GrfPrior) -> np.ndarray:
    """Cell-to-cell prior correlation matrix (row-major cell order)."""
    x = np.tile(np.arange(prior.nx, dtype=float), prior.ny)  # i inner
    y = np.repeat(np.arange(prior.ny, dtype=float), prior.nx)  # j outer
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    a = math.radians(prior.angle_deg)
    xr = dx * math.cos(a) + dy * math.sin(a)
    yr = -dx * math.sin(a) + dy * math.cos(a)
    h = np.sqrt((xr / prior.range_major) ** 2 + (yr / prior.range_minor) ** 2)
    return np.exp(-3.0 * h) if prior.kind == "exponential" else np.exp(-3.0 * h * h)


def _correlation_factor(prior: GrfPrior) -> np.ndarray:
    """Cholesky factor of the cell-correlation matrix, cached per geometry."""
    key = (
        prior.nx,
        prior.ny,
        prior.kind,
        prior.range_major,
        prior.range_minor,
        prior.angle_deg,
    )
    factor = _chol_cache.get(key)
    if factor is not None:
        return factor

    corr = grf_correlation(prior)
    n = corr.shape[0]
    for jitter in (1e-10, 1e-8, 1e-6):
        try:
            factor = np.linalg.cholesky(corr + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            factor = None
    if factor is None:
        raise FieldGenerationError(
            "correlation matrix not positive definite after jitter"
        )
    _chol_cache[key] = factor
    return factor


def sample_grf(prior: GrfPrior, count: int, seed: int) -> Ensemble:
    """Draw `count` independent field realizations as an Ensemble.

    Rows are cells in row-major order (j outer, i inner); coords carry the
    (i, j, 0) gridblock indices.
    """
    if count < 2:
        raise ValueError("need at least 2 realizations")
    factor = _correlation_factor(prior)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((factor.shape[0], count))
    values = prior.mean + prior.std * (factor @ z)
    coords = np.array(
        [(i, j, 0) for j in range(prior.ny) for i in range(prior.nx)], dtype=int
    )
    names = [f"c_{i}_{j}" for j in range(prior.ny) for i in range(prior.nx)]
    return Ensemble(values=values, names=names, coords=coords)


def sample_grid_prior(
    model: GridFlowProxy,
    poro_prior: GrfPrior,
    logk_prior: GrfPrior,
    count: int,
    seed: int,
) -> Ensemble:
    """Sample the full grid-model prior: both fields, all layers.

    Layers are independent draws from the same 2-D prior; the porosity
    block precedes the log-permeability block, matching the model's
    parameter ordering.
    """
    for prior, label in ((poro_prior, "porosity"), (logk_prior, "log-permeability")):
        if (prior.nx, prior.ny) != (model.nx, model.ny):
            raise ValueError(f"{label} prior grid does not match the model grid")
    seedseq = np.random.SeedSequence(seed)
    layer_seeds = seedseq.generate_state(2 * model.n_layers)
    blocks = []
    for f, prior in enumerate((poro_prior, logk_prior)):
        for k in range(model.n_layers):
            blocks.append(
                sample_grf(prior, count, int(layer_seeds[f * model.n_layers + k])).values
            )
    return Ensemble(
        values=np.vstack(blocks),
        names=model.param_names,
        coords=model.coords,
    )
