"""Experiment harness: config handling, artifacts, determinism, CLI."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

import enloc.harness as hn
from enloc import cli
from enloc.errors import ConfigError
from enloc.models import LinearModel
from enloc.significance import FixedT0, PercentileT0, StudentT0

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def tiny_config(out_dir, **overrides):
    raw = {
        "model": {
            "kind": "scalar_toy",
            "n_active": 5,
            "n_dummy": 2,
            "n_series": 3,
            "n_times": 10,
            "structure_seed": 7,
        },
        "observation": {"truth_seed": 11, "noise_seed": 22, "rel_std": 0.1, "floor": 0.02},
        "ensemble_size": 40,
        "schedule": {"n_steps": 2},
        "localization": [
            {"taper": "none"},
            {"taper": "logistic:gamma=1.5,t0=2,eps=0.01"},
        ],
        "runs": {"count": 2, "base_seed": 500},
        "reference": {"ensemble_size": 300, "seed": 77},
        "output_dir": str(out_dir),
    }
    raw.update(overrides)
    return raw


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_shipped_configs_parse():
    for name in ("scalar_toy.json", "grid_proxy.json", "linear_smoke.json"):
        cfg = hn.load_config(CONFIG_DIR / name)
        assert cfg.run_count >= 1
        assert cfg.localization


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        hn.config_from_dict({"model": {"kind": "nope"}})
    base = tiny_config(tmp_path)

    bad = json.loads(json.dumps(base))
    del bad["observation"]["truth_seed"]
    with pytest.raises(ConfigError):
        hn.config_from_dict(bad)

    bad = json.loads(json.dumps(base))
    bad["localization"] = []
    with pytest.raises(ConfigError):
        hn.config_from_dict(bad)

    bad = json.loads(json.dumps(base))
    bad["localization"] = [{"taper": "frobnicate"}]
    with pytest.raises(ConfigError):
        hn.config_from_dict(bad)

    bad = json.loads(json.dumps(base))
    bad["localization"] = [{"name": "missing-taper-key"}]
    with pytest.raises(ConfigError):
        hn.config_from_dict(bad)

    bad = json.loads(json.dumps(base))
    bad["localization"] = [{"taper": "mse"}, {"taper": "mse"}]
    with pytest.raises(ConfigError):
        hn.config_from_dict(bad)

    bad = json.loads(json.dumps(base))
    bad["schedule"] = {"alphas": [2, 3]}
    with pytest.raises(ConfigError):
        hn.config_from_dict(bad)

    bad = json.loads(json.dumps(base))
    bad["ensemble_size"] = 2
    with pytest.raises(ConfigError):
        hn.config_from_dict(bad)

    bad = json.loads(json.dumps(base))
    bad["localization"] = [{"taper": "none", "name": "reference"}]
    with pytest.raises(ConfigError):
        hn.config_from_dict(bad)

    with pytest.raises(ConfigError):
        hn.load_config(tmp_path / "missing.json")


def test_localization_parsing():
    entry = hn._parse_localization({"taper": "power:beta=3", "t0": "p90"})
    assert entry.name == "power_p90"
    assert entry.t0_strategy == PercentileT0(0.9)
    entry = hn._parse_localization({"taper": "logistic:gamma=1.5,t0=2"})
    assert entry.name == "logistic" and entry.t0_strategy is None
    entry = hn._parse_localization({"taper": "mse", "t0": "student:phi=0.05"})
    assert entry.t0_strategy == StudentT0(0.05)
    entry = hn._parse_localization({"taper": "none"})
    assert entry.spec is None and entry.name == "none"
    entry = hn._parse_localization({"taper": "power:beta=3", "t0": "fixed:2", "name": "pw"})
    assert entry.name == "pw" and entry.t0_strategy == FixedT0(2.0)
    assert hn._parse_localization("mpo").name == "mpo"


def test_run_experiment_artifacts(tmp_path):
    cfg = hn.config_from_dict(tiny_config(tmp_path / "out", save_posterior=True))
    report = hn.run_experiment(cfg)
    assert all(r.status == "ok" for r in report.runs)
    assert report.reference is not None and report.reference.status == "ok"
    # the reference run is unlocalized: full update footprint
    assert report.reference.report.chi == 1.0

    out = tmp_path / "out"
    for name in ("report.csv", "metrics.csv", "histogram.csv", "aggregate.csv"):
        assert (out / name).is_file()

    rows = read_csv(out / "report.csv")
    assert len(rows) == 2 * 2 + 1  # tapers x runs + reference
    # aggregates recompute exactly from per-run rows
    agg = {
        (r["taper"], r["metric"]): (float(r["mean"]), int(r["n_runs"]))
        for r in read_csv(out / "aggregate.csv")
    }
    for taper in ("none", "logistic"):
        vals = [float(r["obj_mean"]) for r in rows if r["taper"] == taper]
        mean, n = agg[(taper, "obj_mean")]
        assert n == len(vals)
        assert mean == pytest.approx(np.mean(vals), rel=1e-15)

    # per-run artifacts: long-form diagnostics and readable posterior
    run_dir = out / "runs" / "logistic" / "run0"
    diag = read_csv(run_dir / "diagnostics.csv")
    steps = {int(r["step"]) for r in diag}
    assert steps == {1, 2, 3}  # 2 assimilation steps + final state
    metrics_seen = {r["metric"] for r in diag}
    assert {"objective", "nv", "n_eff", "chi"} <= metrics_seen
    assert any(m.startswith("taper_hist_") for m in metrics_seen)

    from enloc.ensemble import read_ensemble_csv

    post = read_ensemble_csv(run_dir / "posterior.csv")
    assert post.values.shape == (7, 40)

    # histogram counts account for every model-data pair
    hist = read_csv(out / "histogram.csv")
    for taper in ("none", "logistic"):
        total = sum(int(r["count"]) for r in hist if r["taper"] == taper and r["run"] == "0")
        assert total == 7 * 30


def test_single_run_linear_smoke(tmp_path):
    raw = {
        "model": {"kind": "linear", "n_params": 4, "n_data": 6, "structure_seed": 1},
        "observation": {"truth_seed": 2, "noise_seed": 3, "rel_std": 0.1, "floor": 0.05},
        "ensemble_size": 30,
        "schedule": {"n_steps": 2},
        "localization": [{"taper": "mse"}],
        "runs": {"count": 1, "base_seed": 7},
        "output_dir": str(tmp_path / "one"),
    }
    report = hn.run_experiment(hn.config_from_dict(raw))
    assert len(report.runs) == 1
    assert report.runs[0].status == "ok"
    assert np.isfinite(report.runs[0].report.obj_mean)


def test_run_experiment_deterministic(tmp_path):
    raw = tiny_config(tmp_path / "a")
    hn.run_experiment(hn.config_from_dict(raw))
    raw2 = tiny_config(tmp_path / "b")
    hn.run_experiment(hn.config_from_dict(raw2))
    for name in ("report.csv", "metrics.csv", "histogram.csv", "aggregate.csv"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, name


def test_run_failure_recorded(tmp_path):
    cfg = hn.config_from_dict(tiny_config(tmp_path / "out"))
    model = hn.build_model(cfg)
    sampler = hn.build_prior_sampler(cfg, model)
    obs, _ = hn.build_observations(cfg, model, sampler)

    class Exploding(LinearModel):
        def evaluate_ensemble(self, values):
            raise RuntimeError("simulator crashed")

    bad_model = Exploding(np.eye(model.n_params))
    bad_obs_values = np.zeros(model.n_params)
    from enloc.smoother import ObservationSet

    bad_obs = ObservationSet(
        d_obs=bad_obs_values, sigma_e=np.ones(model.n_params)
    )
    res = hn._run_one(cfg, bad_model, sampler, bad_obs, cfg.localization[0], 0, 10, 1)
    assert res.status.startswith("failed:")
    assert res.report is None


def test_sweep_ensemble_size(tmp_path):
    raw = tiny_config(tmp_path / "sweep", **{"reference": None})
    cfg = hn.config_from_dict(raw)
    reports = hn.sweep_ensemble_size(cfg, [20, 40])
    assert set(reports) == {20, 40}
    trend = read_csv(tmp_path / "sweep" / "ne_trend.csv")
    assert {r["ensemble_size"] for r in trend} == {"20", "40"}
    # a single size reduces to run_experiment with identical artifacts
    solo_dir = tmp_path / "solo"
    solo = hn.config_from_dict(tiny_config(solo_dir, **{"reference": None, "ensemble_size": 40}))
    hn.run_experiment(solo)
    a = (tmp_path / "sweep" / "ne_40" / "report.csv").read_bytes()
    b = (solo_dir / "report.csv").read_bytes()
    assert a == b


GRID30 = {
    "model": {"kind": "grid_proxy", "nx": 30, "ny": 30, "n_layers": 1,
               "prod_grid": 3, "n_times": 12},
    "prior": {
        "porosity": {"mean": 0.2, "std": 0.05, "range_major": 15, "range_minor": 8,
                      "angle_deg": 45},
        "log_perm": {"mean": 0.0, "std": 0.7, "range_major": 15, "range_minor": 8,
                      "angle_deg": 45},
    },
    "observation": {"truth_seed": 5, "noise_seed": 6, "rel_std": 0.10, "floor": 0.02},
    "ensemble_size": 50,
    "schedule": {"n_steps": 4},
    "runs": {"count": 2, "base_seed": 400},
    "emit_nv_field": False,
}


def test_sweep_ensemble_size_trends(tmp_path):
    """Qualitative sweep behavior on the grid proxy.

    Distance localization buys a better data match than the logistic taper
    at every ensemble size, and both tapers retain more posterior variance
    as the ensemble grows.
    """
    raw = dict(
        GRID30,
        localization=[
            {"taper": "logistic:gamma=1.5,t0=2,eps=0.01"},
            {"taper": "distance:major=15,minor=8,angle=45"},
        ],
        output_dir=str(tmp_path / "sweep"),
    )
    reports = hn.sweep_ensemble_size(hn.config_from_dict(raw), [30, 60])
    agg = {
        size: {(t, m): v for t, m, v, _, _ in rep.aggregates()}
        for size, rep in reports.items()
    }
    for size in (30, 60):
        assert agg[size][("distance", "obj_mean")] < agg[size][("logistic", "obj_mean")]
    for taper in ("logistic", "distance"):
        assert agg[60][(taper, "nv")] > agg[30][(taper, "nv")]
    trend = read_csv(tmp_path / "sweep" / "ne_trend.csv")
    assert {(r["ensemble_size"], r["taper"], r["metric"]) for r in trend} == {
        (str(s), t, m)
        for s in (30, 60)
        for t in ("logistic", "distance")
        for m in ("obj_mean", "nv")
    }


def test_sweep_sizes_linear_objective_band(tmp_path):
    """Unlocalized linear-Gaussian runs stay near the theoretical obj of 1/2."""
    raw = {
        "model": {"kind": "linear", "n_params": 6, "n_data": 10, "structure_seed": 3},
        "observation": {"truth_seed": 1, "noise_seed": 2, "rel_std": 0.10, "floor": 0.05},
        "schedule": {"n_steps": 4},
        "localization": [{"taper": "none"}, {"taper": "mse"}],
        "runs": {"count": 3, "base_seed": 100},
        "output_dir": str(tmp_path / "lin"),
    }
    reports = hn.sweep_ensemble_size(hn.config_from_dict(raw), [50, 100])
    for size, report in reports.items():
        for run in report.by_taper("none"):
            assert 0.3 <= run.report.obj_mean <= 0.8, (size, run.report.obj_mean)
        for run in report.by_taper("mse"):
            assert run.report.obj_mean <= 1.6, (size, run.report.obj_mean)


def test_sweep_layers_percentile_chi_stable(tmp_path):
    """The adaptive-threshold footprint stays roughly flat as layers grow."""
    raw = dict(
        GRID30,
        localization=[
            {"taper": "none"},
            {"taper": "logistic:gamma=1.5,eps=0.01", "t0": "p90", "name": "logistic_p90"},
        ],
        output_dir=str(tmp_path / "layers"),
    )
    raw["runs"] = {"count": 2, "base_seed": 300}
    reports = hn.sweep_layers(hn.config_from_dict(raw), [1, 4])
    chi = {
        layers: {(t, m): v for t, m, v, _, _ in rep.aggregates()}[("logistic_p90", "chi")]
        for layers, rep in reports.items()
    }
    assert 0.5 <= chi[4] / chi[1] <= 1.15
    for rep in reports.values():
        assert all(r.report.chi == 1.0 for r in rep.by_taper("none"))


def test_sweep_layers_chi_exact(tmp_path):
    raw = {
        "model": {"kind": "grid_proxy", "nx": 20, "ny": 20, "n_layers": 1,
                   "prod_grid": 2, "n_times": 6},
        "prior": {
            "porosity": {"mean": 0.2, "std": 0.05, "range_major": 8, "range_minor": 4},
            "log_perm": {"mean": 0.0, "std": 0.5, "range_major": 8, "range_minor": 4},
        },
        "observation": {"truth_seed": 3, "noise_seed": 4, "rel_std": 0.1, "floor": 0.02},
        "ensemble_size": 20,
        "schedule": {"n_steps": 2},
        "localization": [{"taper": "none"}, {"taper": "logistic:gamma=1.5,t0=2"}],
        "runs": {"count": 1, "base_seed": 50},
        "output_dir": str(tmp_path / "layers"),
        "emit_nv_field": False,
    }
    cfg = hn.config_from_dict(raw)
    reports = hn.sweep_layers(cfg, [1, 2])
    for layers, report in reports.items():
        none_runs = report.by_taper("none")
        assert all(r.report.chi == 1.0 for r in none_runs), layers
        model_nm = 2 * 20 * 20 * layers
        assert all(r.report.n_eff == model_nm for r in none_runs)
    table = read_csv(tmp_path / "layers" / "neff_table.csv")
    none_rows = [r for r in table if r["taper"] == "none"]
    assert {r["layers"] for r in none_rows} == {"1", "2"}
    assert all(float(r["chi"]) == 1.0 for r in none_rows)
    with pytest.raises(ConfigError):
        hn.sweep_layers(hn.config_from_dict(tiny_config(tmp_path / "x")), [1])


def test_nv_field_emitted_for_grid(tmp_path):
    raw = {
        "model": {"kind": "grid_proxy", "nx": 16, "ny": 16, "n_layers": 1,
                   "prod_grid": 2, "n_times": 4},
        "prior": {
            "porosity": {"mean": 0.2, "std": 0.05, "range_major": 6, "range_minor": 3},
            "log_perm": {"mean": 0.0, "std": 0.5, "range_major": 6, "range_minor": 3},
        },
        "observation": {"truth_seed": 3, "noise_seed": 4, "rel_std": 0.1, "floor": 0.02},
        "ensemble_size": 15,
        "schedule": {"n_steps": 1},
        "localization": [{"taper": "mse"}],
        "runs": {"count": 1, "base_seed": 10},
        "output_dir": str(tmp_path / "grid"),
    }
    hn.run_experiment(hn.config_from_dict(raw))
    rows = read_csv(tmp_path / "grid" / "nv_field.csv")
    assert len(rows) == 2 * 16 * 16  # both fields, every cell
    assert {r["field"] for r in rows} == {"poro", "logk"}


def test_t0_table(tmp_path):
    rows = hn.t0_table_rows([50, 100, 200, 1000], [0.10, 0.05, 0.01])
    assert len(rows) == 12
    lookup = {(ne, phi): (t0, rho0) for ne, phi, t0, rho0 in rows}
    assert lookup[(1000, 0.05)][0] == pytest.approx(1.962, abs=1e-3)
    assert lookup[(50, 0.01)][1] == pytest.approx(0.361, abs=1e-3)
    path = tmp_path / "t0.csv"
    hn.emit_t0_table([50, 100], [0.05], path)
    got = read_csv(path)
    assert len(got) == 2
    assert float(got[0]["t0"]) == pytest.approx(2.011, abs=1e-3)


def test_cli_run_and_exit_codes(tmp_path, monkeypatch):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(tiny_config(tmp_path / "cli_out", **{"reference": None})))
    assert cli.main(["run", str(cfg_path)]) == 0
    assert (tmp_path / "cli_out" / "report.csv").is_file()

    # --out / --seed overrides
    assert cli.main(["run", str(cfg_path), "--out", str(tmp_path / "o2"), "--seed", "9"]) == 0
    assert (tmp_path / "o2" / "report.csv").is_file()

    # config error -> 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad)]) == 2
    missing = tmp_path / "nope.json"
    assert cli.main(["run", str(missing)]) == 2

    # t0 table command
    assert cli.main(["t0-table", "--ne", "50,100", "--phi", "0.05",
                     "--out", str(tmp_path / "t0.csv")]) == 0
    assert cli.main(["t0-table", "--ne", "50", "--phi", "",
                     "--out", str(tmp_path / "t0_empty.csv")]) == 0
    assert (tmp_path / "t0_empty.csv").read_text().strip() == "ne,phi,t0,rho0"

    # forward-model failure -> 3
    def exploding_build(cfg):
        class Boom(LinearModel):
            def evaluate_ensemble(self, values):
                out = super().evaluate_ensemble(values)
                out[:, 0] = np.nan
                return out

        return Boom(np.ones((4, 7)))

    monkeypatch.setattr(hn, "build_model", exploding_build)
    assert cli.main(["run", str(cfg_path), "--out", str(tmp_path / "o3")]) == 3


def test_cli_threads_env_override(tmp_path, monkeypatch):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(tiny_config(tmp_path / "thr", **{"reference": None})))
    monkeypatch.setenv("ENLOC_THREADS", "2")
    assert cli.main(["run", str(cfg_path), "--threads", "1"]) == 0
    # threaded and serial execution produce identical artifacts
    monkeypatch.delenv("ENLOC_THREADS")
    assert cli.main(["run", str(cfg_path), "--out", str(tmp_path / "thr_serial")]) == 0
    a = (tmp_path / "thr" / "report.csv").read_bytes()
    b = (tmp_path / "thr_serial" / "report.csv").read_bytes()
    assert a == b
