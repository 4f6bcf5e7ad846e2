"""Forward models: linearity, dummy inertness, proxy locality, field sampling."""

import math

import numpy as np
import pytest

from enloc import models as md
from enloc.errors import ForwardModelError


class _ExplodingModel(md.LinearModel):
    def evaluate_ensemble(self, values):
        out = super().evaluate_ensemble(values)
        out[:, 3] = np.nan
        return out


def test_linear_model():
    G = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]])
    model = md.LinearModel(G)
    assert np.array_equal(model.evaluate(np.zeros(2)), np.zeros(3))
    eye = md.LinearModel(np.eye(4))
    m = np.arange(4.0)
    assert np.array_equal(eye.evaluate(m), m)
    # hand multiply: G @ [2, 5]
    assert np.allclose(model.evaluate(np.array([2.0, 5.0])), [12.0, -5.0, 8.5])


def test_member_failure_reported_with_id():
    model = _ExplodingModel(np.eye(2))
    with pytest.raises(ForwardModelError) as err:
        md.evaluate_members(model, np.ones((2, 6)))
    assert err.value.member == 3


def test_scalar_toy_dummy_block_is_inert():
    toy = md.ScalarToyModel(n_active=15, n_dummy=5, structure_seed=3)
    rng = np.random.default_rng(0)
    base = rng.standard_normal(20)
    poked = base.copy()
    poked[15:] = rng.standard_normal(5) * 50.0
    assert np.array_equal(toy.evaluate(base), toy.evaluate(poked))


def test_scalar_toy_baseline_deterministic():
    a = md.ScalarToyModel(structure_seed=42)
    b = md.ScalarToyModel(structure_seed=42)
    zero = np.zeros(a.n_params)
    assert np.array_equal(a.evaluate(zero), b.evaluate(zero))
    # different structure seeds give different feature maps
    c = md.ScalarToyModel(structure_seed=43)
    assert not np.array_equal(a.evaluate(zero), c.evaluate(zero))


def test_scalar_toy_dummy_jacobian_zero():
    """Central finite differences of every dummy column vanish exactly."""
    toy = md.ScalarToyModel(structure_seed=1)
    rng = np.random.default_rng(10)
    base = rng.standard_normal(toy.n_params)
    h = 1e-5
    for idx in toy.dummy_indices:
        e = np.zeros(toy.n_params)
        e[idx] = h
        fd = (toy.evaluate(base + e) - toy.evaluate(base - e)) / (2.0 * h)
        assert np.max(np.abs(fd)) <= 1e-8


def test_scalar_toy_batch_matches_loop():
    toy = md.ScalarToyModel(structure_seed=5)
    vals = np.random.default_rng(2).standard_normal((toy.n_params, 9))
    batch = toy.evaluate_ensemble(vals)
    for k in range(9):
        assert np.allclose(batch[:, k], toy.evaluate(vals[:, k]), atol=1e-14)


@pytest.fixture(scope="module")
def proxy():
    return md.GridFlowProxy(nx=30, ny=30, n_layers=2, prod_grid=3, n_times=12)


@pytest.fixture(scope="module")
def proxy_fields(proxy):
    rng = np.random.default_rng(4)
    half = proxy.n_params // 2
    return np.vstack(
        [
            0.2 + 0.05 * rng.standard_normal((half, 6)),
            0.6 * rng.standard_normal((half, 6)),
        ]
    )


def test_proxy_shapes_and_purity(proxy, proxy_fields):
    pred = proxy.evaluate_ensemble(proxy_fields)
    assert pred.shape == (proxy.n_data, 6)
    assert np.all(np.isfinite(pred))
    again = proxy.evaluate_ensemble(proxy_fields)
    assert np.array_equal(pred, again)
    assert np.allclose(proxy.evaluate(proxy_fields[:, 1]), pred[:, 1], atol=0)


def test_proxy_water_cut_bounded(proxy, proxy_fields):
    pred = proxy.evaluate_ensemble(proxy_fields)
    n_wct = len(proxy.producers) * proxy.n_times
    wct = pred[:n_wct]
    assert np.all((wct >= 0.0) & (wct <= 1.0))


def test_proxy_perm_doubling_advances_breakthrough(proxy, proxy_fields):
    pred = proxy.evaluate_ensemble(proxy_fields)
    half = proxy.n_params // 2
    doubled = proxy_fields.copy()
    doubled[half:] += math.log(2.0)
    pred2 = proxy.evaluate_ensemble(doubled)
    n_wct = len(proxy.producers) * proxy.n_times
    # faster corridors: water cut can only come earlier (never decrease)
    assert np.all(pred2[:n_wct] >= pred[:n_wct] - 1e-12)
    assert np.mean(pred2[:n_wct] > pred[:n_wct] + 1e-9) > 0.5


def test_proxy_locality_masks(proxy, proxy_fields):
    pred = proxy.evaluate_ensemble(proxy_fields)
    for datum in (0, proxy.n_times * 2 + 3, proxy.n_data - 1):
        mask = proxy.sensitivity_mask(datum)
        outside = np.where(~mask)[0]
        poked = proxy_fields.copy()
        poked[outside[::997], :] += 4.0
        pred2 = proxy.evaluate_ensemble(poked)
        assert np.array_equal(pred2[datum], pred[datum])


def test_proxy_fd_sensitivity_inside_mask_only(proxy):
    rng = np.random.default_rng(6)
    m = np.concatenate(
        [
            0.2 + 0.02 * rng.standard_normal(proxy.n_params // 2),
            0.4 * rng.standard_normal(proxy.n_params // 2),
        ]
    )
    base = proxy.evaluate(m)
    datum = 5  # producer P1, time 5
    mask = proxy.sensitivity_mask(datum)
    h = 1e-6
    inside = np.where(mask)[0][::37]
    touched = 0
    for idx in inside:
        e = np.zeros(proxy.n_params)
        e[idx] = h
        fd = (proxy.evaluate(m + e)[datum] - proxy.evaluate(m - e)[datum]) / (2 * h)
        touched += abs(fd) > 0.0
    assert touched > 0
    for idx in np.where(~mask)[0][::1501]:
        e = np.zeros(proxy.n_params)
        e[idx] = h
        assert proxy.evaluate(m + e)[datum] == proxy.evaluate(m - e)[datum]


def test_proxy_uniform_fields_closed_form():
    """Hand evaluation of the documented breakthrough formula."""
    proxy = md.GridFlowProxy(nx=20, ny=20, n_layers=1, prod_grid=2, n_times=6)
    half = proxy.n_params // 2
    m = np.concatenate([np.full(half, 0.2), np.zeros(half)])
    pred = proxy.evaluate(m)
    # with unit permeability the harmonic mean is 1, so t_bt = t_ref * L * 0.2
    lengths = {}
    for _, ip, cells in proxy._pairs:
        lengths.setdefault(ip, []).append(len(cells))
    for ip, lens in lengths.items():
        expected = np.mean(
            [
                1.0 / (1.0 + math.exp(-(1.0 - proxy.t_ref * L * 0.2) / proxy.ramp_width))
                for L in lens
            ]
        )
        datum = [
            j
            for j, mt in enumerate(proxy.datum_meta)
            if mt.source == f"P{ip + 1}" and mt.time == 0
        ][0]
        assert pred[datum] == pytest.approx(expected, rel=1e-12)


def test_grf_determinism_and_moments():
    prior = md.GrfPrior(nx=16, ny=16, range_major=6, range_minor=3, angle_deg=30,
                        mean=0.2, std=0.05)
    a = md.sample_grf(prior, 400, 77)
    b = md.sample_grf(prior, 400, 77)
    assert np.array_equal(a.values, b.values)
    assert a.values.shape == (256, 400)
    assert a.coords.shape == (256, 3)
    assert abs(a.values.mean() - 0.2) < 0.01
    assert abs(a.values.std() - 0.05) < 0.01


def test_grf_neighbor_correlation_limits():
    ne = 10_000
    tiny = md.GrfPrior(nx=10, ny=10, range_major=1e-4, range_minor=1e-4)
    e = md.sample_grf(tiny, ne, 5)
    rho = np.corrcoef(e.values[0], e.values[1])[0, 1]
    assert abs(rho) < 3.0 / math.sqrt(ne)

    wide = md.GrfPrior(nx=10, ny=10, kind="gaussian", range_major=60, range_minor=60)
    e = md.sample_grf(wide, ne, 5)
    rho = np.corrcoef(e.values[0], e.values[1])[0, 1]
    assert rho >= 0.9


def test_grf_anisotropy_direction():
    """Correlation decays slower along the major axis."""
    prior = md.GrfPrior(nx=24, ny=24, range_major=12, range_minor=3, angle_deg=0)
    e = md.sample_grf(prior, 6000, 9)
    center = 12 * 24 + 12
    along = np.corrcoef(e.values[center], e.values[center + 6])[0, 1]  # +6 in i
    across = np.corrcoef(e.values[center], e.values[center + 6 * 24])[0, 1]  # +6 in j
    assert along > across + 0.2


def test_grf_correlation_matrix_consistency():
    prior = md.GrfPrior(nx=8, ny=8, range_major=4, range_minor=2, angle_deg=45)
    corr = md.grf_correlation(prior)
    assert corr.shape == (64, 64)
    assert np.allclose(np.diag(corr), 1.0)
    assert np.allclose(corr, corr.T)
    e = md.sample_grf(prior, 40_000, 123)
    emp = np.corrcoef(e.values)
    assert np.max(np.abs(emp - corr)) < 0.05


def test_grid_prior_composition():
    proxy = md.GridFlowProxy(nx=20, ny=20, n_layers=3, prod_grid=2, n_times=4)
    poro = md.GrfPrior(nx=20, ny=20, mean=0.2, std=0.05)
    logk = md.GrfPrior(nx=20, ny=20, mean=0.0, std=0.5)
    ens = md.sample_grid_prior(proxy, poro, logk, 12, 31)
    assert ens.values.shape == (proxy.n_params, 12)
    assert ens.coords.shape == (proxy.n_params, 3)
    half = proxy.n_params // 2
    assert abs(ens.values[:half].mean() - 0.2) < 0.02
    assert abs(ens.values[half:].mean()) < 0.2
    # independent layers: correlation across layers is weak
    c = np.corrcoef(ens.values[0], ens.values[400])
    assert abs(c[0, 1]) < 0.9
    again = md.sample_grid_prior(proxy, poro, logk, 12, 31)
    assert np.array_equal(ens.values, again.values)


def test_grf_rejects_oversized_grid():
    with pytest.raises(ValueError):
        md.GrfPrior(nx=200, ny=200)
