import json
import os
from pathlib import Path

import numpy as np
import pytest
import yaml

from nvdeer.cli import main
from nvdeer.config import ConfigError, load_preset, parse_config
from nvdeer.constants import TWO_PI
from nvdeer.reports import read_dataset, read_spectrum, read_table

MHZ = TWO_PI * 1e6


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def fast_config(tmp_path):
    cfg = {
        "labels": [
            {"isotope": "N14", "theta_deg": 30.0, "phi_deg": -91.67,
             "position_nm": [-2.10, 2.17, 6.24]},
            {"isotope": "N14", "theta_deg": 91.7, "phi_deg": 154.70,
             "position_nm": [0.4, 0.3, 7.3]},
        ],
        "model": {"mode": "reduced"},
        "grid": {"start_mhz": 840.2, "stop_mhz": 842.4, "count": 23},
    }
    path = tmp_path / "fast.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_preset_configs_load():
    for name in ("fig2b", "fig3a", "fig3b", "fig3c", "figS4"):
        cfg = load_preset(name)
        assert cfg.sequence.total_duration == pytest.approx(4.6e-6)
    assert load_preset("fig3a").noise is not None
    assert load_preset("fig2b").noise is None
    assert load_preset("figS4").measurement.n_m == 20000


def test_unknown_keys_fail_closed():
    base = {
        "labels": [
            {"isotope": "N14", "theta_deg": 10.0, "phi_deg": 0.0,
             "position_nm": [1, 1, 5]},
            {"isotope": "N15", "theta_deg": 20.0, "phi_deg": 0.0,
             "position_nm": [0, 1, 6]},
        ],
    }
    bad_top = dict(base, extra_section={})
    with pytest.raises(ConfigError, match="extra_section"):
        parse_config(bad_top)
    bad_label = {"labels": [dict(base["labels"][0], typo_key=1), base["labels"][1]]}
    with pytest.raises(ConfigError, match="typo_key"):
        parse_config(bad_label)
    bad_seq = dict(base, sequence={"tau_us": 1.0})
    with pytest.raises(ConfigError, match="tau_us"):
        parse_config(bad_seq)


def test_config_hash_stable():
    a = load_preset("fig3a").config_hash()
    b = load_preset("fig3a").config_hash()
    c = load_preset("fig3b").config_hash()
    assert a == b and a != c and len(a) == 12


def test_cli_branches(tmp_path):
    out = tmp_path / "run"
    code = run_cli("branches", "--out", str(out), "--theta", "0:90:19",
                   "--fields", "30", "--no-plot")
    assert code == 0
    cols, meta = read_table(out / "branches.csv")
    assert set(cols) == {"theta_deg", "Bz_mT", "branch_label", "energy_MHz"}
    sel = (cols["branch_label"] == "N14:0") & (np.abs(cols["theta_deg"] - 30.0) < 0.01)
    e0 = cols["energy_MHz"][sel][0]
    assert 839.0 < e0 < 843.0
    assert (out / "branches-manifest.json").exists()
    manifest = json.loads((out / "branches-manifest.json").read_text())
    assert str(out / "branches.csv") in manifest["outputs"]


def test_cli_branches_single_isotope(tmp_path):
    out = tmp_path / "n15"
    assert run_cli("branches", "--out", str(out), "--isotope", "N15",
                   "--theta", "0:90:7", "--method", "analytic", "--no-plot") == 0
    cols, _ = read_table(out / "branches.csv")
    assert set(np.unique(cols["branch_label"])) == {"N15:1/2", "N15:-1/2"}


def test_cli_spectrum_deterministic_and_plottable(fast_config, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("spectrum", "--config", str(fast_config), "--out", str(out1)) == 0
    assert run_cli("spectrum", "--config", str(fast_config), "--out", str(out2),
                   "--no-plot") == 0
    spec1 = read_spectrum(out1 / "spectrum.csv")
    spec2 = read_spectrum(out2 / "spectrum.csv")
    assert np.array_equal(spec1.sx, spec2.sx)
    assert (out1 / "spectrum.png").exists()
    assert not (out2 / "spectrum.png").exists()
    assert spec1.sx.min() < 0.85   # the double dip is in the window


def test_cli_spectrum_grid_and_mode_flags(fast_config, tmp_path):
    out = tmp_path / "full"
    assert run_cli("spectrum", "--config", str(fast_config), "--out", str(out),
                   "--mode", "full", "--grid", "840.8:841.2:5", "--no-plot") == 0
    spec = read_spectrum(out / "spectrum.csv")
    assert spec.omega_rf.size == 5
    assert spec.metadata["mode"] == "full"


def test_cli_bad_inputs_exit_2(fast_config, tmp_path, capsys):
    assert run_cli("spectrum", "--out", str(tmp_path)) == 2      # no config
    err = capsys.readouterr().err
    assert "nvdeer-error kind=config" in err
    bad = tmp_path / "bad.yaml"
    bad.write_text("labels: [1, 2, 3]\n")
    assert run_cli("spectrum", "--config", str(bad), "--out", str(tmp_path)) == 2
    cfg = yaml.safe_load(fast_config.read_text())
    cfg["sequence"] = {"bogus_key": 1}
    bad2 = tmp_path / "bad2.yaml"
    bad2.write_text(yaml.safe_dump(cfg))
    assert run_cli("spectrum", "--config", str(bad2), "--out", str(tmp_path)) == 2
    err = capsys.readouterr().err
    assert "bogus_key" in err


def test_cli_simulate_and_infer_round_trip(fast_config, tmp_path):
    out = tmp_path / "pipeline"
    assert run_cli("spectrum", "--config", str(fast_config), "--out", str(out),
                   "--no-plot") == 0
    assert run_cli("simulate-data", "--config", str(fast_config), "--out", str(out),
                   "--spectrum", str(out / "spectrum.csv"), "--shots", "20000",
                   "--seed", "3", "--no-plot") == 0
    ds = read_dataset(out / "dataset.csv")
    assert ds.m == 23 and ds.measurement.n_m == 20000

    # identical seeds give identical records
    out2 = tmp_path / "pipeline2"
    assert run_cli("simulate-data", "--config", str(fast_config), "--out", str(out2),
                   "--spectrum", str(out / "spectrum.csv"), "--shots", "20000",
                   "--seed", "3", "--no-plot") == 0
    assert (out / "dataset.csv").read_text() == (out2 / "dataset.csv").read_text()

    assert run_cli("infer", "--config", str(fast_config), "--out", str(out),
                   "--data", str(out / "dataset.csv"), "--steps", "4000",
                   "--burn-in", "1200", "--seed", "8", "--no-plot") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert {"acceptance_rate", "proposal_scales", "marginals",
            "d12_nm", "abs_g12_MHz"} <= set(summary)
    assert 2.0 <= summary["d12_nm"]["mean"] <= 6.0
    cols, meta = read_table(out / "chain.csv")
    assert len(cols["d12"]) == 4000
    assert set(cols) >= {"c_plus", "c_minus", "d12", "log_posterior", "accepted"}


def test_cli_photon_mode_freezes_its_variance_rule(fast_config, tmp_path):
    out = tmp_path / "photon"
    assert run_cli("spectrum", "--config", str(fast_config), "--out", str(out),
                   "--no-plot") == 0
    assert run_cli("simulate-data", "--config", str(fast_config), "--out", str(out),
                   "--spectrum", str(out / "spectrum.csv"), "--shots", "500000",
                   "--mode", "photon", "--seed", "4", "--no-plot") == 0
    ds = read_dataset(out / "dataset.csv")
    expected = (1.0 + ds.s0) / (2.0 * ds.measurement.p * ds.measurement.n_m)
    assert ds.sigma_m_sq == pytest.approx(expected, rel=1e-9)


def test_cli_infer_rejects_steps_below_burn_in(fast_config, tmp_path, capsys):
    out = tmp_path / "r"
    (out).mkdir()
    data = out / "nonexistent.csv"
    code = run_cli("infer", "--config", str(fast_config), "--out", str(out),
                   "--data", str(data), "--steps", "100", "--burn-in", "200")
    assert code == 2


def test_cli_threads_env_override(fast_config, tmp_path, monkeypatch):
    out = tmp_path / "mt"
    monkeypatch.setenv("NVDEER_THREADS", "2")
    assert run_cli("spectrum", "--config", str(fast_config), "--out", str(out),
                   "--no-plot") == 0
    spec_mt = read_spectrum(out / "spectrum.csv")
    # the flag wins over the environment variable
    out_flag = tmp_path / "flag"
    assert run_cli("spectrum", "--config", str(fast_config), "--out", str(out_flag),
                   "--threads", "1", "--no-plot") == 0
    monkeypatch.delenv("NVDEER_THREADS")
    out_st = tmp_path / "st"
    assert run_cli("spectrum", "--config", str(fast_config), "--out", str(out_st),
                   "--threads", "1", "--no-plot") == 0
    spec_st = read_spectrum(out_st / "spectrum.csv")
    assert np.array_equal(spec_mt.sx, spec_st.sx)
    assert (out_flag / "spectrum.csv").read_text() == (out_st / "spectrum.csv").read_text()
