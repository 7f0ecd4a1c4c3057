import json

import pytest
import yaml

from afu_numerics.cli import SCHEMA_VERSION, load_config, main


def _config(tmp_path, **over):
    cfg = {"grid": 256, "ledger": {"N": 256}}
    cfg.update(over)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def _run(tmp_path, command, config, name="out", extra=()):
    out = tmp_path / name
    code = main([command, "--config", config, "--out", str(out), *extra])
    return code, json.loads((out / f"{command}.json").read_text()), out


def test_density_command(tmp_path, capsys):
    code, rep, out = _run(tmp_path, "density", _config(tmp_path))
    assert code == 0 and rep["passed"]
    assert rep["schema_version"] == SCHEMA_VERSION and rep["ledger"] is None
    assert (out / "density.csv").exists()
    assert "PASS density" in capsys.readouterr().out


def test_ledger_and_uni_commands(tmp_path):
    cfg = _config(tmp_path)
    code, rep, _ = _run(tmp_path, "ledger", cfg)
    assert code == 0 and rep["ledger"]["k"] == 1 and rep["ledger"]["n0"] is not None
    code, rep, _ = _run(tmp_path, "uni", cfg)
    assert code == 0 and rep["D"] > 0 and rep["ledger"]["D"] == rep["D"]


def test_constant_roof_scan_fails_with_uni_note(tmp_path, capsys):
    cfg = _config(tmp_path, roof={"kind": "const", "params": {"c": 1.0}}, scan={"N": 256, "b": [20]})
    code, rep, _ = _run(tmp_path, "scan", cfg)
    captured = capsys.readouterr()
    assert code != 0 and not rep["passed"]
    assert "UNI failed" in captured.out
    assert rep["scan"]["uni_failed"]


def test_output_is_deterministic(tmp_path):
    cfg = _config(tmp_path)
    _, _, a = _run(tmp_path, "ledger", cfg, "a", ("--seed", "7"))
    _, _, b = _run(tmp_path, "ledger", cfg, "b", ("--seed", "7"))
    assert (a / "ledger.json").read_bytes() == (b / "ledger.json").read_bytes()


def test_seed_must_be_u64(tmp_path, capsys):
    assert main(["density", "--out", str(tmp_path), "--seed", "-1"]) == 2
    assert main(["density", "--out", str(tmp_path), "--seed", str(2**64)]) == 2
    assert "unsigned 64-bit" in capsys.readouterr().err


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["nonsense"])


def test_load_config_merges_defaults(tmp_path):
    cfg = load_config(_config(tmp_path, scan={"N": 512}), seed=3, grid=128)
    assert cfg["scan"]["N"] == 512 and cfg["scan"]["b"] == [20, 40, 80]
    assert cfg["seed"] == 3 and cfg["grid"] == 128
    assert load_config(None)["map"]["family"] == "doubling"


def test_failure_is_reported(tmp_path, capsys):
    cfg = _config(tmp_path, map={"family": "shifted_beta", "params": {"beta": 0.5}})
    code, rep, _ = _run(tmp_path, "density", cfg)
    assert code == 1 and "error" in rep
    assert "FAIL density" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "afu_numerics.cli", "density", "--config", _config(tmp_path),
                           "--out", str(tmp_path / "sub")], capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert "PASS density" in proc.stdout
