import csv
import io
import json
import os
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from channel_lab.cli import MAX_SVG_POINTS, csv_text, main, render_svg_scatter, write_csv
from channel_lab.errors import ConfigError

SVG = "{http://www.w3.org/2000/svg}"


def run_cli(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def read_json(path):
    return json.loads(path.read_text())


def test_equilibria_at_zero(tmp_path):
    assert run_cli(tmp_path, "rsp-equilibria", "--eps-x", "0", "--eps-y", "0") == 0
    eq = {e["face"]: e["point"] for e in read_json(tmp_path / "rsp-equilibria" / "equilibria.json")}
    assert np.allclose(eq["a"], [0, 2 / 3, 1 / 3, 2 / 3], atol=1e-15)
    man = read_json(tmp_path / "rsp-equilibria" / "manifest.json")
    assert man["subcommand"] == "rsp-equilibria" and man["seed"] == 0
    assert man["params"] == {"eps_x": 0.0, "eps_y": 0.0}


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"eps_x": 0.1, "bogus": 1}))
    out = tmp_path / "out"
    assert main(["rsp-equilibria", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_status"] == 2 and err["error"] == "ConfigError"


def test_bad_flag_value_is_config_error(tmp_path):
    assert run_cli(tmp_path, "rsp-equilibria", "--eps-x", "nope") == 2
    assert run_cli(tmp_path, "rsp-equilibria", "--eps-x", "1.5") == 2
    assert run_cli(tmp_path, "no-such-command") == 2
    assert not (tmp_path / "rsp-equilibria").exists()


def test_numeric_failure_exit_three(tmp_path, capsys):
    # constant b0 makes det A vanish, so the foliation hypothesis fails
    coeffs = {"Omega": 0.3, "Gamma": 2, "b0": 0.5, "c": {"kind": "series2d", "coeffs": [[0, 1, 1, 0.1]]},
              "z_mod_one": True}
    assert run_cli(tmp_path, "foliation", "--coeffs", json.dumps(coeffs)) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_status"] == 3 and err["error"] == "HypothesisViolation"
    assert not (tmp_path / "foliation").exists()


def test_shadow_reruns_byte_identical(tmp_path):
    args = ["shadow", "--grid-min", "0.8", "--grid-max", "0.8", "--n", "4", "--kmax", "5",
            "--max-time", "2000", "--seed", "9"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([*args, "--out", str(a)]) == 0
    assert main([*args, "--out", str(b), "--threads", "2"]) == 0
    ta = (a / "shadow" / "shadow.csv").read_bytes()
    assert ta == (b / "shadow" / "shadow.csv").read_bytes()
    rows = list(csv.reader(io.StringIO(ta.decode())))
    # one cell gives kmax + 1 rows after the header
    assert rows[0] == ["eps_x", "eps_y", "k", "fraction"]
    assert len(rows) == 1 + 6
    assert [int(r[2]) for r in rows[1:]] == list(range(6))


def test_manifest_rerun_reproduces(tmp_path):
    a = tmp_path / "a"
    assert main(["return-map", "--n", "20", "--seed", "3", "--out", str(a),
                 "--coeffs", json.dumps({"Omega": 0.1, "Gamma": 2, "b0": 0.5, "c": 0.0})]) == 0
    man = a / "return-map" / "manifest.json"
    b = tmp_path / "b"
    assert main(["return-map", "--config", str(man), "--out", str(b)]) == 0
    for name in ("orbit.csv", "summary.json"):
        assert (a / "return-map" / name).read_bytes() == (b / "return-map" / name).read_bytes()
    assert read_json(b / "return-map" / "manifest.json")["seed"] == 3


def test_subcommand_outputs_namespaced(tmp_path):
    assert run_cli(tmp_path, "rsp-equilibria") == 0
    assert run_cli(tmp_path, "henon-check") == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["henon-check", "rsp-equilibria"]
    rep = read_json(tmp_path / "henon-check" / "henon.json")
    assert rep["lorenz_value"] > 0


def test_cone_check_command(tmp_path):
    coeffs = {"Omega": {"kind": "series2d", "coeffs": [[1, 0, 0, 0.01]]}, "Gamma": 5, "b0": 0.5,
              "c": {"kind": "series2d", "coeffs": [[0, 1, 1, 0.005]]}}
    assert run_cli(tmp_path, "cone-check", "--coeffs", json.dumps(coeffs), "--samples", "10000") == 0
    rep = read_json(tmp_path / "cone-check" / "cone.json")
    assert rep["feasible"] and rep["holds"] and rep["violations"] == 0


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "channel_lab.cli", "rsp-equilibria", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_empty_csv_is_header_only():
    assert csv_text([], ("a", "b")) == "a,b\r\n"


def test_csv_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    vals = np.concatenate([rng.normal(size=50) * 10.0 ** rng.integers(-300, 300, 50), [0.1, 1 / 3, -0.0]])
    path = tmp_path / "x.csv"
    write_csv(path, [(i, v) for i, v in enumerate(vals)], ("i", "v"))
    back = list(csv.reader(io.StringIO(path.read_text())))[1:]
    assert all(float(r[1]) == v for r, v in zip(back, vals))
    with pytest.raises(ConfigError):
        csv_text([(1, 2, 3)], ("a", "b"))


def test_svg_empty_is_wellformed():
    root = ET.fromstring(render_svg_scatter([]))
    assert root.tag == SVG + "svg"
    assert root.findall(SVG + "circle") == []
    assert len(root.findall(SVG + "line")) == 2


def test_svg_known_points():
    axes = {"xmin": 0, "xmax": 1, "ymin": 0, "ymax": 1}
    root = ET.fromstring(render_svg_scatter([(0, 0), (1, 1), (0.5, 0.25)], axes))
    circles = [(float(c.get("cx")), float(c.get("cy"))) for c in root.findall(SVG + "circle")]
    # width 400, height 300, margin 40
    assert circles == [(40.0, 260.0), (360.0, 40.0), (200.0, 205.0)]


def test_svg_deterministic_and_limited():
    pts = np.random.default_rng(1).uniform(size=(100, 2))
    assert render_svg_scatter(pts) == render_svg_scatter(pts)
    with pytest.raises(ConfigError):
        render_svg_scatter(np.zeros((MAX_SVG_POINTS + 1, 2)))
    with pytest.raises(ConfigError):
        render_svg_scatter([(0.0, float("nan"))])


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("CHANNEL_LAB_THREADS", "0")
    assert run_cli(tmp_path, "rsp-equilibria") == 2
    monkeypatch.setenv("CHANNEL_LAB_THREADS", "1")
    assert run_cli(tmp_path, "rsp-equilibria") == 0
    assert os.path.exists(tmp_path / "rsp-equilibria" / "manifest.json")
