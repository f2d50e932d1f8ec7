import json
import subprocess
import sys

import pytest

from krwlab.cli import ConfigError, SCHEMAS, build_parser, load_document, main, resolve


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_every_experiment_has_a_subcommand():
    parser = build_parser()
    for name in SCHEMAS:
        parser.parse_args([name])


def test_solve_gamblers_ruin(tmp_path, capsys):
    code, out, _ = _run(["solve", "--d", "1", "--killing", "indicator:0:0.5", "--segment", "2,1",
                         "--R", "200", "--out", str(tmp_path)], capsys)
    assert code == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert abs(man["summary"]["first_step_right"] - 7 / 12) < 5e-3
    assert man["outputs"] == ["solve.csv"]
    assert (tmp_path / "solve.csv").read_text().startswith("y1,probability")


def test_potential_kernel_table(tmp_path, capsys):
    code, _, _ = _run(["potential-kernel", "--max", "2", "--out", str(tmp_path)], capsys)
    assert code == 0
    text = (tmp_path / "potential_kernel.csv").read_text()
    assert len(text.splitlines()) > 2


def test_bad_value_reports_field_and_exits_2(tmp_path, capsys):
    code, _, err = _run(["solve", "--R", "-3", "--segment", "1,1", "--out", str(tmp_path)], capsys)
    assert code == 2
    assert "field 'R'" in err and "command line" in err
    assert not (tmp_path / "manifest.json").exists()


def test_yaml_errors_carry_line_numbers(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("d: 1\nsegment: [2, 1]\nradius: 5\nR: 10\n")
    code, _, err = _run(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    assert f"{cfg}:3: field 'radius': unknown" in err


def test_document_for_another_experiment_rejected():
    with pytest.raises(ConfigError):
        resolve("solve", {"experiment": "ratio"})


def test_cross_field_checks():
    with pytest.raises(ConfigError, match="coordinates"):
        resolve("ratio", {"d": 3, "x": [1, 0]})
    with pytest.raises(ConfigError, match="alpha"):
        resolve("counterexample", {"alpha": 2.5})
    with pytest.raises(ConfigError, match="mutually exclusive"):
        resolve("solve", {"segment": [1, 1], "exhaustion": "ball"})


def test_rerun_from_manifest_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    code, _, _ = _run(["ratio", "--R", "8,16", "--seed", "3", "--out", str(a)], capsys)
    assert code == 0
    doc, _ = load_document(a / "manifest.json")
    assert doc["R"] == [8, 16] and doc["seed"] == 3
    code, _, _ = _run(["ratio", "--config", str(a / "manifest.json"), "--out", str(b)], capsys)
    assert code == 0
    assert (a / "ratio.csv").read_bytes() == (b / "ratio.csv").read_bytes()
    assert (b / "ratio.svg").exists()


def test_cache_hit_recorded(tmp_path, capsys):
    argv = ["solve", "--d", "2", "--killing", "power:1.6", "--exhaustion", "ball", "--R", "10",
            "--x", "2,1", "--cache", str(tmp_path / "cache"), "--out", str(tmp_path / "o")]
    _run(argv, capsys)
    first = json.loads((tmp_path / "o" / "manifest.json").read_text())["summary"]["cache_hit"]
    _run(argv, capsys)
    second = json.loads((tmp_path / "o" / "manifest.json").read_text())["summary"]["cache_hit"]
    assert first is False and second is True


def test_module_error_exits_1(tmp_path, capsys):
    code, _, err = _run(["counterexample", "--alpha", "0", "--r", "4", "--R", "8",
                         "--out", str(tmp_path)], capsys)
    assert code == 1 and "DegenerateExperiment" in err


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "krwlab.cli", "trapping", "--killing", "power:3",
                          "--d", "3", "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "wrote" in res.stdout


@pytest.mark.parametrize("argv,outputs", [
    (["counterexample", "--r", "4", "--R", "8,16", "--truncation", "4"],
     ["counterexample.csv", "counterexample.svg"]),
    (["hitting", "--pairs", "2", "--samples", "2000"], ["hitting.csv"]),
    (["green", "--points", "1,0,0", "--box", "12"], ["green.csv"]),
    (["snake-k", "--points", "2,0,0,0", "--samples", "2000", "--node-cap", "1000"],
     ["snake_k.csv", "snake_k.svg"]),
    (["kbm-annulus", "--radii", "4,8", "--samples", "2000"], ["kbm_annulus.csv", "kbm_annulus.svg"]),
])
def test_subcommands_write_their_outputs(argv, outputs, tmp_path, capsys):
    code, _, err = _run(argv + ["--out", str(tmp_path)], capsys)
    assert code == 0, err
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["outputs"] == outputs and man["experiment"] == argv[0]
    for f in outputs:
        assert (tmp_path / f).stat().st_size > 0
