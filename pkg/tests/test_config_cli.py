"""Config round-trips, validation, and CLI subcommand behavior."""

import dataclasses
import json

import numpy as np
import pytest

from mcchannel import ConfigurationError
from mcchannel.cli import main
from mcchannel.config import (
    DEFAULT_CONFIG,
    config_hash,
    config_to_dict,
    dump_config,
    load_config,
    parse_config,
)


def tiny_config(**estimation_kw):
    cfg = DEFAULT_CONFIG
    cfg = dataclasses.replace(
        cfg,
        geometry=dataclasses.replace(cfg.geometry, n_tx=256),
        simulation=dataclasses.replace(cfg.simulation, dt=5e-4, t_end=0.05),
    )
    if estimation_kw:
        cfg = dataclasses.replace(cfg, estimation=dataclasses.replace(cfg.estimation, **estimation_kw))
    return cfg


def test_defaults_round_trip_through_dict():
    raw = config_to_dict(DEFAULT_CONFIG)
    again = parse_config(raw)
    assert again == DEFAULT_CONFIG
    assert config_hash(again) == config_hash(DEFAULT_CONFIG)


def test_file_round_trip(tmp_path):
    p = tmp_path / "exp.yaml"
    cfg = tiny_config()
    dump_config(cfg, p)
    assert load_config(p) == cfg


def test_unknown_keys_fail_fast(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("geometry:\n  n_tx: 100\n  warp_factor: 9\n")
    with pytest.raises(ConfigurationError):
        load_config(p)
    p.write_text("unknown_section:\n  a: 1\n")
    with pytest.raises(ConfigurationError):
        load_config(p)


def test_partial_override_keeps_other_defaults(tmp_path):
    p = tmp_path / "partial.yaml"
    p.write_text("master_seed: 7\ngeometry:\n  n_tx: 512\n")
    cfg = load_config(p)
    assert cfg.master_seed == 7
    assert cfg.geometry.n_tx == 512
    assert cfg.simulation == DEFAULT_CONFIG.simulation
    assert config_hash(cfg) != config_hash(DEFAULT_CONFIG)


def test_invalid_values_rejected(tmp_path):
    p = tmp_path / "neg.yaml"
    p.write_text("estimation:\n  trials: 0\n")
    with pytest.raises(ConfigurationError):
        load_config(p)


def test_cli_crlb_runs_and_writes(tmp_path):
    out = tmp_path / "res"
    code = main(["crlb", "--out", str(out)])
    assert code == 0
    assert (out / "crlb.csv").exists()
    manifest = json.loads((out / "manifest_crlb.json").read_text())
    assert manifest["subcommand"] == "crlb"
    assert manifest["failures"] == []
    assert "crlb.csv" in manifest["artifacts"]


def test_cli_crlb_reruns_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["crlb", "--out", str(a)]) == 0
    assert main(["crlb", "--out", str(b)]) == 0
    assert (a / "crlb.csv").read_bytes() == (b / "crlb.csv").read_bytes()
    assert (a / "manifest_crlb.json").read_bytes() == (b / "manifest_crlb.json").read_bytes()


def test_cli_m_override_restricts_rows(tmp_path):
    out = tmp_path / "res"
    assert main(["crlb", "--out", str(out), "--M", "7"]) == 0
    rows = (out / "crlb.csv").read_text().strip().splitlines()
    assert all(line.split(",")[0] == "7" for line in rows[1:])


def test_cli_simulate_with_config(tmp_path):
    p = tmp_path / "exp.yaml"
    dump_config(tiny_config(), p)
    out = tmp_path / "res"
    code = main(["--config", str(p), "simulate", "--out", str(out), "--d", "4.0"])
    assert code == 0
    curve = (out / "simulated_curve.csv").read_text().splitlines()
    assert curve[0] == "t_seconds,cumulative_fraction"
    assert len(curve) == 101  # 100 steps + header


def test_cli_estimate_small_run(tmp_path):
    p = tmp_path / "exp.yaml"
    dump_config(tiny_config(trials=25, M_values=(5,)), p)
    out = tmp_path / "res"
    code = main(["--config", str(p), "estimate", "--out", str(out)])
    assert code == 0
    text = (out / "estimation_report.csv").read_text()
    header = text.splitlines()[0].split(",")
    assert header[:3] == ["M", "case", "trial_count"]
    # four estimator tracks per M value
    assert len(text.strip().splitlines()) == 1 + 4


def test_cli_rejects_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("geometry:\n  bogus: 1\n")
    code = main(["--config", str(p), "crlb", "--out", str(tmp_path / "r")])
    assert code == 1
    assert "configuration error" in capsys.readouterr().err


def test_cli_prints_artifacts(tmp_path, capsys):
    out = tmp_path / "res"
    main(["crlb", "--out", str(out)])
    printed = capsys.readouterr().out
    assert "crlb.csv" in printed
