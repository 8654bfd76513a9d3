from __future__ import annotations

import json

import jsonschema
import pytest

from profinite_lab import cli
from profinite_lab.retraction import retraction_corpus
from profinite_lab.serialize import morphism_to_json, point_to_json

QUICK = ["not-jointly-epic", "invariant-failure", "eq-coprod-oracle"]


def run_json(capsys, *args):
    code = cli.main(["run", "--format", "json", *args])
    out = capsys.readouterr().out
    return code, out


def test_list(capsys):
    assert cli.main(["list"]) == 0
    assert capsys.readouterr().out.split() == sorted(cli.SCENARIOS)


def test_unknown_scenario(capsys):
    assert cli.main(["run", "--scenario", "nope"]) == 2
    assert "unknown scenario" in capsys.readouterr().err


@pytest.mark.parametrize("depth", [0, 65])
def test_depth_out_of_range(capsys, depth):
    assert cli.main(["run", "--scenario", "eq-coprod-oracle", "--depth", str(depth)]) == 2


def test_bound_out_of_range(capsys):
    assert cli.main(["run", "--scenario", "eq-coprod-oracle", "--bound", "0"]) == 2


def test_quick_scenarios_pass_and_match_schema(capsys):
    args = ["--depth", "8", "--terms", "3"]
    for name in QUICK:
        args += ["--scenario", name]
    code, out = run_json(capsys, *args)
    report = json.loads(out)
    assert code == 0 and report["ok"]
    jsonschema.validate(report, cli.REPORT_SCHEMA)
    assert [s["name"] for s in report["scenarios"]] == sorted(QUICK)
    by_name = {s["name"]: s for s in report["scenarios"]}
    sample = by_name["not-jointly-epic"]["details"]["sample"]
    assert sample["omitted"] == 3


def test_text_and_json_agree(capsys):
    args = ["--scenario", "not-jointly-epic", "--depth", "6"]
    _, out = run_json(capsys, *args)
    report = json.loads(out)
    cli.main(["run", "--format", "text", *args])
    text = capsys.readouterr().out
    for sc in report["scenarios"]:
        for check, status in sc["observed"].items():
            assert f"{check}: {status}" in text


def test_deterministic(capsys):
    args = ["--scenario", "invariant-failure", "--scenario", "eq-coprod-oracle", "--depth", "7", "--terms", "2", "--seed", "4"]
    _, first = run_json(capsys, *args)
    _, second = run_json(capsys, *args)
    assert first == second
    assert "time" not in first


def test_depth_cap(monkeypatch, capsys):
    monkeypatch.setenv("PROFINITE_LAB_MAX_DEPTH", "5")
    _, out = run_json(capsys, "--scenario", "eq-coprod-oracle", "--terms", "1", "--depth", "30")
    assert json.loads(out)["params"]["depth"] == 5
    monkeypatch.setenv("PROFINITE_LAB_MAX_DEPTH", "many")
    assert cli.main(["run", "--scenario", "eq-coprod-oracle"]) == 2


def test_expectation_mismatch_sets_exit_code(monkeypatch, capsys):
    def broken(params):
        return cli.ScenarioResult("eq-coprod-oracle", {"agrees_with_brute_force": cli.FAILS})

    monkeypatch.setitem(cli.SCENARIOS, "eq-coprod-oracle", broken)
    code, out = run_json(capsys, "--scenario", "eq-coprod-oracle")
    assert code == 1 and not json.loads(out)["ok"]


def test_output_file(tmp_path, capsys):
    target = tmp_path / "report.json"
    assert cli.main(["run", "--scenario", "eq-coprod-oracle", "--terms", "1", "--format", "json", "--output", str(target)]) == 0
    assert json.loads(target.read_text())["ok"]


def test_retract(tmp_path, capsys):
    case = retraction_corpus(11, 1)[0]
    emb, pt = tmp_path / "emb.json", tmp_path / "pt.json"
    emb.write_text(json.dumps(morphism_to_json(case.iota, case.depth, with_towers=True)))
    pt.write_text(json.dumps(point_to_json(case.point, case.depth)))
    code = cli.main(["retract", "--embedding", str(emb), "--point", str(pt), "--depth", str(case.depth)])
    out = json.loads(capsys.readouterr().out)
    assert code == 0 and out["ok"]
    assert out["verdict"]["status"] == "holds-to-depth"
    assert len(out["retraction"]["level_maps"]) == case.depth + 1


def test_retract_missing_file(tmp_path, capsys):
    assert cli.main(["retract", "--embedding", str(tmp_path / "no.json"), "--point", str(tmp_path / "no.json")]) == 2
