import json
import math
import subprocess
import sys

import pytest

from latwalk.cli import main
from latwalk.kernels import FieldSlice


def run_json(capsys, argv):
    assert main(argv) == 0
    return json.loads(capsys.readouterr().out)


def test_potential(capsys):
    out = run_json(capsys, ["potential", "--x", "1,1"])
    assert out["a"] == pytest.approx(4 / math.pi, abs=1e-10)
    assert out["a_dagger"] == out["a"]
    out = run_json(capsys, ["potential", "--x", "0,0", "--series", "200"])
    assert out["a"] == 0.0 and out["a_dagger"] == 1.0
    assert out["series"] == 0.0


def test_potential_writes_out(tmp_path, capsys):
    target = tmp_path / "a.json"
    assert main(["potential", "--law", "kings", "--x", "2,0", "--out", str(target)]) == 0
    assert capsys.readouterr().out == ""
    assert json.loads(target.read_text())["law"] == "kings"


def test_u_for_pair(capsys):
    out = run_json(capsys, ["u", "--set", "0,0;1,0", "--x", "0,1", "--R-t", "64"])
    assert out["hitting"]["0,0"] == pytest.approx(2 / math.pi, abs=1e-6)
    assert sum(out["mu"].values()) == pytest.approx(1.0, abs=1e-12)
    assert out["tolerances"]["uA"] > 0


def test_killed_binary(tmp_path, capsys):
    target = tmp_path / "slice.bin"
    assert main(["killed", "--set", "0,0", "--start", "1,0", "--n", "2", "--out", str(target), "--binary"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["killed_mass"] == 0.25
    sl = FieldSlice.from_binary(target)
    assert sl.n == 2 and sl[(1, 0)] == 3 / 16


def test_escape(tmp_path, capsys):
    target = tmp_path / "esc.json"
    assert main(["escape", "--set", "0,0", "--R", "2", "--out", str(target)]) == 0
    out = json.loads(target.read_text())
    assert out["values"]["1,1"] == pytest.approx(5 / 6, abs=1e-14)
    assert out["on_A"]["0,0"] == pytest.approx(2 / 3, abs=1e-14)
    assert out["residual"] <= 1e-12


def test_mc_json(capsys):
    argv = ["mc", "escape", "--x", "1,1", "--R", "2", "--replicas", "20000", "--seed", "4", "--json"]
    first = run_json(capsys, argv)
    assert abs(first["mean"] - 5 / 6) <= 4 * first["std_error"]
    assert run_json(capsys, argv) == first
    assert main(["mc", "confine", "--R", "5", "--N", "0", "--replicas", "10"]) == 0
    assert capsys.readouterr().out.startswith("1 +- 0")


def test_verify_shipped_config_and_report(tmp_path, capsys):
    out = tmp_path / "prop1"
    code = main(["verify", "--law-id", "PROP1_ESCAPE", "--config", "prop1-srw-origin.json", "--out", str(out)])
    text = capsys.readouterr().out
    assert code == 0
    assert text.splitlines()[0].startswith("law_id,")
    assert "status: ok" in text and "check monotone: pass" in text
    assert main(["report", "--dir", str(out)]) == 0
    assert capsys.readouterr().out == text


def test_verify_law_id_mismatch(capsys):
    assert main(["verify", "--law-id", "THM1", "--config", "prop1-srw-origin.json"]) == 2
    assert "does not match" in capsys.readouterr().err


def test_errors_exit_two(tmp_path, capsys):
    assert main(["escape", "--set", "0,0;3,0", "--R", "3"]) == 2
    assert "RadiusTooSmall" in capsys.readouterr().err
    assert main(["report", "--dir", str(tmp_path)]) == 2
    bad = tmp_path / "law.json"
    bad.write_text(json.dumps({"support": [[1, 0, 1, 2], [0, 1, 1, 4], [0, -1, 1, 4]]}))
    assert main(["potential", "--law", str(bad), "--x", "1,0"]) == 2
    assert "NonZeroMean" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "latwalk.cli", "potential", "--x", "1,0"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert json.loads(proc.stdout)["a"] == pytest.approx(1.0, abs=1e-10)
