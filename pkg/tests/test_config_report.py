import json

import numpy as np
import pytest
import yaml

from spsqkd.config import RunConfig, bundled_text, config_hash, load_config
from spsqkd.errors import ConfigError
from spsqkd.report import (HISTOGRAM_HEADER, SATURATION_HEADER, STABILITY_HEADER,
                           envelope, format_csv, read_columns, read_histogram,
                           read_saturation, read_stability, verify_report_hash,
                           write_csv, write_report)


def test_bundled_profile_matches_reference_setup():
    cfg = load_config("fig4_default")
    p = cfg.protocol
    assert (p.n, p.m, p.f_ec, p.e, p.eps_total) == (1e6, 5e5, 1.1, 0.02, 1e-10)
    assert cfg.source.p_m == 0.07
    assert cfg.channel.alpha_db_per_km == 3.5
    assert load_config(None) == cfg


def test_defaults_equal_bundled():
    assert RunConfig() == load_config()


def test_unknown_keys_named():
    with pytest.raises(ConfigError, match="channel.alpha"):
        RunConfig.from_dict({"channel": {"alpha": 3.5}})
    with pytest.raises(ConfigError, match="'detector'"):
        RunConfig.from_dict({"detector": {}})


@pytest.mark.parametrize("section, values", [
    ("protocol", {"e": 0.6}),
    ("protocol", {"f_ec": 0.5}),
    ("protocol", {"eps_weights": [0.5, 0.5, 0.5, 0.5]}),
    ("source", {"p1": 0.99}),
    ("channel", {"eta_det": 0.0}),
    ("sweep", {"d_step_km": 0.0}),
    ("sweep", {"r_s_values": []}),
    ("simulation", {"num_pulses": 10}),
    ("simulation", {"seed": -3}),
    ("estimators", {"g2_baseline": "spline"}),
    ("protocol", {"n": "lots"}),
    ("flags", {"ec_leak_scaled_by_q": "yes"}),
])
def test_component_invariants_checked_on_load(section, values):
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(**{section: values})


def test_numeric_strings_accepted():
    # PyYAML reads 1e-10 (no dot) as a string
    cfg = RunConfig.from_dict(yaml.safe_load("protocol:\n  eps_total: 1e-10\n"))
    assert cfg.protocol.eps_total == 1e-10


def test_hash_round_trip_yaml(tmp_path):
    cfg = RunConfig().with_overrides(simulation={"seed": 42}, flags={"ec_leak_scaled_by_q": True})
    path = tmp_path / "c.yaml"
    path.write_text(cfg.to_yaml())
    assert load_config(path).config_hash() == cfg.config_hash()


def test_report_round_trip(tmp_path):
    cfg = RunConfig().with_overrides(simulation={"seed": 7})
    rep = envelope("sweep", cfg, {"x": np.float64(1.5), "bad": float("inf")}, seed=7)
    path = write_report(tmp_path / "r.json", rep)
    loaded = json.loads(path.read_text())
    assert loaded["schema_version"] == "1.0"
    assert loaded["decisions"]["ec_leak_scaled_by_q"] is False
    assert verify_report_hash(loaded)
    assert load_config(path).config_hash() == loaded["config_hash"]
    assert config_hash(loaded["config"]) == cfg.config_hash()
    assert loaded["results"]["bad"] == "inf"


def test_csv_format_is_plain():
    text = format_csv(("a", "b"), [(0.1, 2), (1e-10, 3)])
    assert text == "a,b\n0.1,2\n1e-10,3\n"


def test_write_csv_atomic(tmp_path):
    path = write_csv(tmp_path / "sub" / "t.csv", ("a",), [(1.0,)])
    assert path.read_text() == "a\n1.0\n"
    assert [p.name for p in path.parent.iterdir()] == ["t.csv"]


def test_read_columns_schema_errors(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("delay,counts\n0,1\n")
    with pytest.raises(ConfigError, match="header"):
        read_columns(p, HISTOGRAM_HEADER)
    p.write_text("delay_ns,counts\n0,1\n1,abc\n")
    with pytest.raises(ConfigError, match="row 3, column 'counts'"):
        read_columns(p, HISTOGRAM_HEADER)
    p.write_text("delay_ns,counts\n0,1,2\n")
    with pytest.raises(ConfigError, match="row 2"):
        read_columns(p, HISTOGRAM_HEADER)
    with pytest.raises(OSError):
        read_columns(tmp_path / "missing.csv", HISTOGRAM_HEADER)


def test_dataset_readers(tmp_path):
    h = tmp_path / "h.csv"
    write_csv(h, HISTOGRAM_HEADER, [(t * 0.5, 1) for t in range(-200, 201)])
    assert read_histogram(h, 25.0).bin_width == pytest.approx(0.5)
    s = tmp_path / "s.csv"
    write_csv(s, SATURATION_HEADER, [(p, 100 * p) for p in (1.0, 2.0, 4.0, 8.0)])
    assert read_saturation(s).powers.tolist() == [1.0, 2.0, 4.0, 8.0]
    t = tmp_path / "t.csv"
    write_csv(t, STABILITY_HEADER, [(float(i), 10.0) for i in range(50)])
    assert read_stability(t).duration == pytest.approx(50.0)
    write_csv(s, SATURATION_HEADER, [(p, 1.0) for p in (1.0, 2.0, 2.0, 8.0)])
    with pytest.raises(ConfigError):
        read_saturation(s)


def test_bundled_text_parses():
    assert yaml.safe_load(bundled_text())["source"]["p_m"] == 0.07


def test_csv_numpy_scalars_round_trip():
    text = format_csv(("a", "b"), [(np.float64(0.1), np.int64(3))])
    assert text == "a,b\n0.1,3\n"


def test_hash_ignores_output_section():
    cfg = RunConfig()
    assert cfg.with_overrides(output={"dir": "elsewhere", "plots": True}).config_hash() \
        == cfg.config_hash()
    assert cfg.with_overrides(protocol={"e": 0.03}).config_hash() != cfg.config_hash()


def test_large_seed_exact():
    seed = 2 ** 63 - 1
    assert RunConfig().with_overrides(simulation={"seed": seed}).simulation.seed == seed
    assert RunConfig().with_overrides(simulation={"seed": str(seed)}).simulation.seed == seed
