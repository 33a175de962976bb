import json

import pytest
import yaml

from weakhyp.cli import main
from weakhyp.pipeline import EXIT_CODES, run_pipeline
from weakhyp.scenarios import (STAGES, ScenarioError, builtin, builtin_names, load_scenario,
                               scenario_from_dict)

SMALL = {
    "name": "small_wave",
    "system": {"m": 2, "n": 1, "T": 1.0, "alpha": 1.0,
               "A": [[["0"], ["1"]], [["t^2"], ["0"]]]},
    "grid": {"N_t": 1025, "K": 6, "eps_log2": [3, 4, 5, 6, 7], "scan_radius_log2": 6,
             "consistency_max_log2": 4},
    "s_values": [1.8],
}


@pytest.fixture
def small_file(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


@pytest.mark.parametrize("name", [n for n in builtin_names() if "<" not in n])
def test_builtins_load(name):
    scn = builtin(name)
    assert scn.name == name and scn.system.m >= 2
    assert load_scenario(name).config_hash() == scn.config_hash()


def test_holder_builtin_skips_singular_stages():
    scn = builtin("holder_abs(0.5)")
    assert scn.system.alpha == 0.5
    assert scn.stages == ("reduce", "eigen", "energy-scan")
    with pytest.raises(ScenarioError):
        builtin("holder_abs(1.5)")
    with pytest.raises(ScenarioError, match="unknown scenario"):
        builtin("nope")


def test_json_and_yaml_files_agree(tmp_path, small_file):
    y = tmp_path / "small.yaml"
    y.write_text(yaml.safe_dump(SMALL))
    a, b = load_scenario(small_file), load_scenario(y)
    assert a.config_hash() == b.config_hash()
    assert scenario_from_dict(a.to_dict()).config_hash() == a.config_hash()


@pytest.mark.parametrize("patch,where", [
    ({"grid": {"N_t": "many"}}, "grid.N_t"),
    ({"grid": {"eps_log2": [3, 4, 5, 6, 12]}}, "grid.eps_log2"),
    ({"s_values": [0.5]}, "s_values[0]"),
    ({"data": {"delta0": -1}}, "data.delta0"),
    ({"stages": ["reduce", "bake"]}, "stages[1]"),
    ({"system": {"m": 2, "n": 1, "T": 1.0, "alpha": 1.0,
                 "A": [[["0"], ["1"]], [["t^2 +"], ["0"]]]}}, "system.A[1][0][0]"),
    ({"colour": 3}, "scenario"),
])
def test_config_errors_name_the_field(patch, where):
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict({**SMALL, **patch})
    assert where in str(info.value)


def test_cli_thresholds(capsys, tmp_path):
    code = main(["--out", str(tmp_path), "thresholds", "--alphas", "0.5", "1", "--ms", "2", "3"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert code == 0 and lines[0] == "alpha,m,s_star,s_yuzawa,improvement"
    assert len(lines) == 5
    a, m, s, y, imp = map(float, lines[1].split(","))
    assert (a, m, s, y) == (0.5, 2.0, 1.5, 1.25) and imp == 0.25


def test_cli_scenario_catalog(capsys):
    assert main(["scenario", "list"]) == 0
    assert "wave_t2" in capsys.readouterr().out
    assert main(["scenario", "show", "wave_t2"]) == 0
    assert json.loads(capsys.readouterr().out)["name"] == "wave_t2"
    assert main(["scenario", "show", "missing"]) == EXIT_CODES["config"]


def test_cli_reduce_writes_only_its_outputs(tmp_path, small_file):
    assert main(["reduce", str(small_file), "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "small_wave" / "manifest.json").read_text())
    assert man["stages"] == ["reduce"] and man["status"] == {"reduce": "pass"}
    assert sorted(f["path"] for f in man["files"]) == ["charpoly.csv", "reduction.json"]
    for f in man["files"]:
        assert (tmp_path / "small_wave" / f["path"]).stat().st_size == f["bytes"]


def test_cli_inadmissible_s_exits_with_energy_code(tmp_path, small_file, capsys):
    code = main(["--out", str(tmp_path), "solve", str(small_file), "--s", "2.5"])
    assert code == EXIT_CODES["energy-scan"] == 4
    assert "inadmissible s" in capsys.readouterr().out


def test_cli_bad_config_exits_1(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({**SMALL, "rtol": 1.0}))
    assert main(["eigen", str(p), "--out", str(tmp_path)]) == 1
    assert "rtol" in capsys.readouterr().err
    assert main(["eigen", str(tmp_path / "gone.json")]) == 1


def test_cli_json_format_and_env_root(tmp_path, small_file, monkeypatch):
    monkeypatch.setenv("WEAKHYP_OUT", str(tmp_path / "env"))
    assert main(["--format", "json", "reduce", str(small_file)]) == 0
    d = tmp_path / "env" / "small_wave"
    rows = json.loads((d / "charpoly.json").read_text())
    assert rows and isinstance(rows, (list, dict))


def test_small_pipeline_end_to_end(tmp_path, small_file):
    res = run_pipeline(load_scenario(small_file), ["solve"], out=tmp_path)
    assert res.stages == ["reduce", "eigen", "energy-scan", "solve"]
    assert res.exit_code == 0, res.errors
    chk = json.loads((res.out_dir / "energy_check_s1p8.json").read_text())
    assert chk["passed"] and chk["consistency_ok"]


@pytest.mark.slow
def test_constant_strict_full_pipeline(tmp_path):
    res = run_pipeline(builtin("constant_strict"), out=tmp_path)
    assert res.exit_code == 0, (res.status, res.errors)
    red = json.loads((res.out_dir / "reduction.json").read_text())
    assert red["lower_order_zero"]
    fit = json.loads((res.out_dir / "gevrey_fit.json").read_text())
    assert fit["passed"]
