import json
import os
from dataclasses import replace

import numpy as np
import pytest

from cqed_stirap import runner
from cqed_stirap.cli import EXIT_ASSERTION, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from cqed_stirap.exceptions import ValidationError
from cqed_stirap.io import (KINDS, MANIFEST_NAME, SUMMARY_NAME, ExperimentConfig, RunManifest, Table, load_config,
                            read_table, save_config, sha256, write_table)
from cqed_stirap.model import ChainParams, PulseProtocol, reference_three_cavity
from cqed_stirap.presets import PRESETS, figure_preset


def branch_config(out_dir, **kw):
    params, protocol = reference_three_cavity(0.2, 0.0202)
    return ExperimentConfig("branch", params, protocol, {"spacing": 0.02}, out_dir=str(out_dir), **kw)


def test_config_round_trip(tmp_path):
    config = figure_preset("fig2-restart")
    save_config(config, tmp_path / "c.json")
    again = load_config(tmp_path / "c.json")
    assert again.to_dict() == config.to_dict()
    assert again.params == config.params and again.protocol == config.protocol


@pytest.mark.parametrize("data, fragment", [
    ({"kind": "branch", "colour": 1}, "unknown config keys"),
    ({"params": {}}, "kind"),
    ({"kind": "branch", "params": {"Q": 1.0}}, "bad params"),
])
def test_config_parse_errors(data, fragment):
    with pytest.raises(ValidationError, match=fragment):
        ExperimentConfig.from_dict(data)


def test_unreadable_config(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "missing.json")


@pytest.mark.parametrize("change, fragment", [
    (dict(kind="plot"), "kind must be one of"),
    (dict(kind="sweep"), "missing ['rates']"),
    (dict(format="xlsx"), "format"),
    (dict(seed=-1), "seed"),
    (dict(seed=2**64), "seed"),
    (dict(workers=0), "workers"),
    (dict(params=ChainParams.chain(3, 0.2, 0.5, N=-1.0)), "N > 0"),
    (dict(protocol=PulseProtocol(tau=50.0, centers=(2.4242, 3.697))), "counter-intuitive"),
])
def test_config_problems(tmp_path, change, fragment):
    config = replace(branch_config(tmp_path), **change)
    assert any(fragment in p for p in config.problems())
    with pytest.raises(ValidationError):
        config.check()


def test_every_preset_validates():
    assert set(PRESETS) == {"fig2-fast", "fig2-slow", "fig2-restart", "fig3", "fig4", "fig5", "fig6-linear",
                            "fig6-nonlinear", "figS1", "figS2", "figS3", "figS4"}
    for name in PRESETS:
        config = figure_preset(name)
        assert config.problems() == [], name
        assert config.kind in KINDS


def test_preset_values():
    slow = figure_preset("fig2-slow")
    assert slow.settings["rates"] == [1.2121e-4] and slow.params.g_terminal == 0.2
    s2 = figure_preset("figS2")
    assert s2.params.kappa == s2.params.gamma == 1e-4
    assert sorted(s2.settings["rates"]) == [0.0012, 0.0202]
    six = figure_preset("fig6-nonlinear")
    assert six.params.n_cavities == 4 and six.params.g_terminal == 0.2 and six.settings["rates"] == [0.0101]
    with pytest.raises(ValidationError):
        figure_preset("fig7")


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_table_round_trip_is_exact(tmp_path, fmt, rng):
    data = rng.standard_normal((7, 3)) * 10.0 ** rng.integers(-300, 300, (7, 3))
    data[0, 0], data[1, 1] = np.nan, np.inf
    path = write_table(Table("t", ["a", "b", "c"], data), tmp_path, fmt)
    back = read_table(path)
    assert back.header == ["a", "b", "c"]
    np.testing.assert_array_equal(back.data, data)


def test_table_shape_checked():
    with pytest.raises(ValidationError):
        Table("t", ["a", "b"], np.zeros((2, 3)))


def test_branch_run_writes_outputs_and_manifest(tmp_path):
    result = runner.run(branch_config(tmp_path))
    files = sorted(os.listdir(tmp_path))
    assert files == sorted(["branch.csv", SUMMARY_NAME, MANIFEST_NAME])
    manifest = RunManifest.read(tmp_path / MANIFEST_NAME)
    assert manifest.status == "ok" and manifest.version
    assert set(manifest.outputs) == {"branch.csv", SUMMARY_NAME}
    for name, digest in manifest.outputs.items():
        assert sha256(tmp_path / name) == digest
    table = read_table(str(tmp_path / "branch.csv"))
    n = table.data[:, 1:4]
    np.testing.assert_allclose(n[0], [20.0, 0.0, 0.0], atol=1e-6)
    assert n[-1, 0] < 1e-6 and n[-1, 2] > 0.99 * 19.5
    assert result.summary["branch"]["ssp_ok"] is True
    assert result.passed is None


def test_manifest_config_reruns_bit_identically(tmp_path):
    runner.run(branch_config(tmp_path / "a", format="json"))
    snap = RunManifest.read(tmp_path / "a" / MANIFEST_NAME).config
    snap["out_dir"] = str(tmp_path / "b")
    runner.run(ExperimentConfig.from_dict(snap))
    first = RunManifest.read(tmp_path / "a" / MANIFEST_NAME).outputs
    second = RunManifest.read(tmp_path / "b" / MANIFEST_NAME).outputs
    assert first == second


def test_uncoupled_window_run_is_empty(tmp_path):
    params, protocol = reference_three_cavity(0.2, 0.0202)
    config = ExperimentConfig("window", params, protocol,
                              {"g_values": [0.0], "window_spacing": 0.5, "lyapunov": {"m_max": 1200}},
                              out_dir=str(tmp_path))
    result = runner.run(config)
    record = result.summary["windows"][0]
    assert record["exists"] is False and record["ttilde_left"] is None
    assert (tmp_path / "window_g0.csv").exists()


def test_validation_happens_before_computation(tmp_path, monkeypatch):
    called = []
    monkeypatch.setitem(runner.RUNNERS, "sweep", lambda c: called.append(c))
    config = branch_config(tmp_path)
    config.kind = "sweep"
    with pytest.raises(ValidationError):
        runner.run(config)
    assert not called
    assert not os.listdir(tmp_path)


def test_failure_removes_partial_outputs(tmp_path, monkeypatch):
    def fail_after_tables(path, *a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(runner, "write_json", fail_after_tables)
    with pytest.raises(OSError):
        runner.run(branch_config(tmp_path))
    assert os.listdir(tmp_path) == []


def test_cli_runs_a_config(tmp_path, capsys):
    path = tmp_path / "branch.json"
    save_config(branch_config(tmp_path / "unused"), path)
    code = main(["branch", "--config", str(path), "--out", str(tmp_path / "out"), "--format", "json"])
    assert code == EXIT_OK
    assert (tmp_path / "out" / "branch.json").exists()
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["out_dir"] == str(tmp_path / "out")


def test_cli_validation_exit_codes(tmp_path):
    bad = branch_config(tmp_path)
    bad.params = ChainParams.chain(3, 0.2, 0.5, N=-3.0)
    save_config(bad, tmp_path / "bad.json")
    assert main(["branch", "--config", str(tmp_path / "bad.json")]) == EXIT_VALIDATION
    assert main(["sweep", "--config", str(tmp_path / "bad.json")]) == EXIT_VALIDATION
    assert main(["branch", "--preset", "fig7"]) == EXIT_VALIDATION
    assert main(["branch"]) == EXIT_VALIDATION
    assert main(["sweep", "--preset", "fig2-fast", "--seed", "-4"]) == EXIT_VALIDATION
    assert main(["sweep", "--preset", "fig2-fast", "--workers", "0"]) == EXIT_VALIDATION


def test_cli_runtime_failure_exit_code(tmp_path, monkeypatch):
    def boom(config):
        raise RuntimeError("solver exploded")

    monkeypatch.setitem(runner.RUNNERS, "branch", boom)
    save_config(branch_config(tmp_path), tmp_path / "c.json")
    assert main(["branch", "--config", str(tmp_path / "c.json")]) == EXIT_RUNTIME
    assert not (tmp_path / MANIFEST_NAME).exists()


def test_cli_assertion_exit_code(tmp_path, monkeypatch):
    table = Table("scan_g0.2", ["inv_tau", "T"], np.array([[0.01, 0.99]]))
    monkeypatch.setitem(runner.RUNNERS, "bound-check",
                        lambda config: ([table], {"lines": ["FAIL g=0.2: synthetic"]}, False))
    config = branch_config(tmp_path)
    config.kind, config.settings = "bound-check", {"g_values": [0.2]}
    save_config(config, tmp_path / "c.json")
    code = main(["bound-check", "--config", str(tmp_path / "c.json")])
    assert code == EXIT_ASSERTION
    assert RunManifest.read(tmp_path / MANIFEST_NAME).status == "assertion_failed"


def test_preset_output_default(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    seen = {}

    def record(config):
        seen["c"] = config
        return [], {}, None

    monkeypatch.setitem(runner.RUNNERS, "sweep", record)
    assert main(["sweep", "--preset", "fig2-fast", "--seed", "7"]) == EXIT_OK
    assert seen["c"].out_dir == "results/fig2-fast" and seen["c"].seed == 7
    assert (tmp_path / "results" / "fig2-fast" / MANIFEST_NAME).exists()


def test_presets_listing(capsys):
    assert main(["presets"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == len(PRESETS)
    assert "fig4\twindow" in lines
