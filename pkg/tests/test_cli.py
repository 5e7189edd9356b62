import json
import os

import numpy as np
import pytest

from conftest import tiny_config
from eshopsim import cli
from eshopsim.config import ConfigError, ExperimentConfig, config_hash, load_config, save_config
from eshopsim.dataset import DataError


def test_default_config_round_trip(tmp_path):
    cfg = ExperimentConfig()
    path = tmp_path / "cfg.json"
    save_config(path, cfg)
    loaded = load_config(path)
    assert loaded.to_dict() == cfg.to_dict()
    assert config_hash(loaded) == config_hash(cfg)


def test_config_hash_ignores_output_dir():
    a = ExperimentConfig(output_dir="runs/a")
    b = ExperimentConfig(output_dir="runs/b")
    assert config_hash(a) == config_hash(b)
    c = ExperimentConfig(master_seed=2)
    assert config_hash(c) != config_hash(a)


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"scenario": {"num_ues": 3, "bogus": 1}}))
    with pytest.raises(ConfigError, match="unknown keys"):
        load_config(path)
    path.write_text(json.dumps({"not_a_block": {}}))
    with pytest.raises(ConfigError, match="top-level"):
        load_config(path)
    path.write_text("{ not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(path)


def test_main_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": {"num_ues": 0}}))
    assert cli.main(["simulate", "--config", str(bad)]) == 2
    # build-dataset before simulate: missing logs -> data error
    out = tmp_path / "run"
    cfgfile = tmp_path / "cfg.json"
    save_config(cfgfile, tiny_config(out))
    assert cli.main(["build-dataset", "--config", str(cfgfile)]) == 3
    assert cli.main(["report", str(tmp_path / "nowhere")]) == 3


def _run_pipeline(out_dir, cfg=None):
    cfg = cfg or tiny_config(out_dir)
    assert cli.cmd_simulate(cfg)["a3_count"] > 0
    cli.cmd_build_dataset(cfg, quiet=True)
    cli.cmd_train(cfg)
    cli.cmd_eval(cfg)
    cli.cmd_eshop(cfg, oracle=True)
    return cfg


def test_full_pipeline_artifacts(tmp_path):
    out = tmp_path / "run"
    cfg = _run_pipeline(out)
    paths = cli._paths(str(out))
    for key in ("reports", "events", "model", "history", "metrics", "predictions", "comparison", "cdf", "summary"):
        assert os.path.exists(paths[key]), key
    with open(paths["summary"]) as fh:
        summary = json.load(fh)
    assert summary["schema_version"] == cli.SUMMARY_SCHEMA
    assert summary["config_hash"] == config_hash(cfg)
    assert summary["simulate"]["a3_count"] >= summary["simulate"]["cmd_count"]
    assert summary["eval"]["test"]["n"] > 0
    assert summary["eshop"]["n_compared"] > 0
    # oracle-fed countdown never wastes a preparation
    assert summary["eshop"]["wasted_rate"] == 0.0
    with open(paths["metrics"]) as fh:
        metrics = json.load(fh)
    assert metrics["metrics"]["rmse_s"] >= 0.0


def test_eval_matches_library_evaluate(tmp_path):
    from eshopsim.dataset import WindowBank, read_dataset
    from eshopsim import tcn

    out = tmp_path / "run"
    cfg = _run_pipeline(out)
    paths = cli._paths(str(out))
    params, _ = tcn.load_model(paths["model"])
    bundle = read_dataset(paths["dataset"])
    bank = WindowBank(bundle.splits["test"], bundle.meta.window_len, dtype=np.float32)
    rep = tcn.evaluate(params, bank)
    with open(paths["metrics"]) as fh:
        stored = json.load(fh)["metrics"]
    assert stored["rmse_s"] == rep.rmse_s
    assert stored["r2"] == rep.r2


def test_cdf_file_is_monotone(tmp_path):
    out = tmp_path / "run"
    _run_pipeline(out)
    rows = []
    with open(cli._paths(str(out))["cdf"]) as fh:
        fh.readline()
        fh.readline()
        for line in fh:
            x, p = line.strip().split(",")
            rows.append((float(x), float(p)))
    xs = [r[0] for r in rows]
    ps = [r[1] for r in rows]
    assert xs == sorted(xs)
    assert ps == sorted(ps)
    assert ps[-1] == 1.0


def test_simulate_outputs_are_deterministic(tmp_path):
    cfg_a = tiny_config(tmp_path / "a")
    cfg_b = tiny_config(tmp_path / "b")
    cli.cmd_simulate(cfg_a)
    cli.cmd_simulate(cfg_b)
    for name in ("reports.csv", "events.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_los_flag_changes_channel(tmp_path):
    cfg = tiny_config(tmp_path / "los")
    cli.cmd_simulate(cfg)
    cfg_n = tiny_config(tmp_path / "nlos")
    cfg_n.channel.los_mode = "nlos"
    cli.cmd_simulate(cfg_n)
    a = (tmp_path / "los" / "reports.csv").read_text().splitlines()[2]
    b = (tmp_path / "nlos" / "reports.csv").read_text().splitlines()[2]
    assert a != b


def test_report_merges_runs(tmp_path):
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    _run_pipeline(out1)
    # identical config, second run dir
    cfg2 = tiny_config(out2)
    _run_pipeline(out2, cfg2)
    report = tmp_path / "report.csv"
    result = cli.cmd_report([str(out1), str(out2)], str(report))
    assert result["groups"] == ["los"]
    lines = report.read_text().splitlines()
    assert lines[0].startswith("# schema=consolidated-report/1")
    header = lines[1].split(",")
    assert header == ["metric", "los_mean", "los_std"]
    for line in lines[2:]:
        name, mean, std = line.split(",")
        if std:
            assert float(std) == 0.0  # identical runs -> zero spread


def test_report_rejects_schema_mismatch(tmp_path):
    out = tmp_path / "run"
    _run_pipeline(out)
    summary = json.loads((out / "summary.json").read_text())
    summary["schema_version"] = "run-summary/999"
    (out / "summary.json").write_text(json.dumps(summary))
    with pytest.raises(DataError, match="schema"):
        cli.cmd_report([str(out)], str(tmp_path / "r.csv"))


def test_summary_refuses_mixed_configs(tmp_path):
    out = tmp_path / "run"
    cfg = tiny_config(out)
    cli.cmd_simulate(cfg)
    other = tiny_config(out, master_seed=99)
    with pytest.raises(DataError, match="different configuration"):
        cli.cmd_simulate(other)
