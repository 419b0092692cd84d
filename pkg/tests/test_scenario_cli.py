import copy
import json
import subprocess
import sys

import pytest

from hybridits import cli, scenario as S
from hybridits.errors import ScenarioError
from hybridits.geodesy import GeoPosition, tile_for
from hybridits.runner import Runner

BASE = {
    "name": "small", "duration_s": 5, "seed": 1, "tile_level": 14,
    "mecs": [{"id": 1, "bbox": [47.9, 10.9, 48.1, 11.1]}],
    "vehicles": [{"id": 1, "route": [[0, 48.0, 11.0], [5, 48.0, 11.001]]},
                 {"id": 2, "route": [[0, 48.0003, 11.0]]}],
}
EMPTY = {"name": "empty", "duration_s": 10, "seed": 1, "mecs": []}


def doc(**changes):
    d = copy.deepcopy(BASE)
    d.update(changes)
    return d


def write(tmp_path, d, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


# -- validation ------------------------------------------------------------------

def test_base_is_valid():
    assert S.diagnose(doc()) == []


@pytest.mark.parametrize("name", S.BUNDLED)
def test_bundled_valid(name):
    assert S.diagnose(S.load_document(name)) == []


def test_two_brokers_one_tile_names_tile():
    t = tile_for(GeoPosition(48.0, 11.0), 14)
    d = doc(mecs=[{"id": 1, "tiles": [[t.x, t.y]]}, {"id": 2, "tiles": [[t.x, t.y], [t.x + 1, t.y]]}])
    diags = S.diagnose(d)
    assert any(f"({t.level}, {t.x}, {t.y})" in msg and "MEC 1" in msg for _, msg in diags)
    assert any(path == "$.mecs[1]" for path, _ in diags)


def test_loss_out_of_range():
    diags = S.diagnose(doc(link={"g5_loss": 1.5}))
    assert [p for p, _ in diags] == ["$.link.g5_loss"]


def test_route_leaves_region():
    d = doc()
    d["vehicles"][0]["route"][1] = [5, 49.0, 11.0]
    diags = S.diagnose(d)
    assert ("$.vehicles[0].route[1]", "position (49.0, 11.0) outside every MEC area") in diags


def test_reports_every_problem():
    d = doc(link={"g5_loss": 1.5, "slices": {"LOW_LATENCY": {"loss": -0.1}}}, duration_s=0)
    paths = {p for p, _ in S.diagnose(d)}
    assert {"$.link.g5_loss", "$.link.slices.LOW_LATENCY.loss", "$.duration_s"} <= paths


def test_semantic_checks():
    d = doc()
    d["vehicles"][1]["id"] = 1
    d["vehicles"][0]["route"] = [[0, 48.0, 11.0], [0, 48.0, 11.001]]
    msgs = " ".join(m for _, m in S.diagnose(d))
    assert "already used" in msgs and "increasing" in msgs


def test_bad_channel_label():
    d = doc()
    d["vehicles"][0]["channels"] = ["CELLULAR/FAST/MEC"]
    assert S.diagnose(d)


def test_parse_channel():
    assert S.parse_channel("ITS_G5").label == "ITS_G5"
    assert S.parse_channel("CELLULAR/LOW_LATENCY/CLOUD").label == "CELLULAR/LOW_LATENCY/CLOUD"
    with pytest.raises(ValueError):
        S.parse_channel("WIFI")


def test_load_invalid_raises(tmp_path):
    with pytest.raises(ScenarioError) as exc:
        S.load(write(tmp_path, doc(link={"g5_loss": 1.5})))
    assert exc.value.diagnostics


def test_load_overrides():
    sc = S.load("lane-merge", seed=99, duration_s=2)
    assert sc.seed == 99 and sc.duration_us == 2_000_000


# -- runs ------------------------------------------------------------------------

def test_empty_scenario_all_zero(tmp_path, capsys):
    assert cli.main(["run", write(tmp_path, EMPTY), "--format", "json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    c = summary["counts"]
    assert set(c["generated"].values()) == {0}
    assert all(c[k] == 0 for k in ("app_delivered", "duplicates_suppressed", "no_channel", "undeliverable", "events"))
    assert c["forward_errors"] == {} and c["verify_failures"] == {}
    assert summary["violations"] == 0 and summary["alerts"] == []


def test_same_seed_byte_identical(tmp_path, capsys):
    path = write(tmp_path, doc())
    outs = []
    for _ in range(2):
        assert cli.main(["run", path, "--format", "json"]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    assert cli.main(["run", path, "--format", "json", "--seed", "2"]) == 0
    assert capsys.readouterr().out != outs[0]


def test_out_dir_and_trace(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", write(tmp_path, doc()), "--out", str(out), "--trace"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("scenario small")
    summary = json.loads((out / "summary.json").read_text())
    lines = (out / "events.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["type"] == "start" and json.loads(lines[-1])["type"] == "end"
    assert summary["counts"]["generated"]["CAM"] > 0
    assert summary["log_hash"]


def test_no_trace_no_event_file(tmp_path, capsys):
    out = tmp_path / "o"
    cli.main(["run", write(tmp_path, doc()), "--out", str(out)])
    assert (out / "summary.json").exists() and not (out / "events.jsonl").exists()


def test_hash_independent_of_trace():
    a = Runner(S.build(doc()), trace=True).run()
    b = Runner(S.build(doc()), trace=False).run()
    assert a == b


def test_validate_exit_codes(tmp_path, capsys):
    assert cli.main(["validate", "intersection"]) == 0
    assert capsys.readouterr().out.strip() == "ok"
    assert cli.main(["validate", write(tmp_path, doc(link={"g5_loss": 1.5}))]) == 1
    assert "$.link.g5_loss" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "missing.json")]) == 1
    assert cli.main(["run", write(tmp_path, doc(duration_s=-1))]) == 1


def test_violation_exit_code(monkeypatch, tmp_path, capsys):
    original = Runner._summarize

    def tampered(self):
        s = original(self)
        s["violations"] = 1
        return s

    monkeypatch.setattr(Runner, "_summarize", tampered)
    assert cli.main(["run", write(tmp_path, doc())]) == 2


def test_schema_command(capsys):
    assert cli.main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema["type"] == "object" and "mecs" in schema["required"]


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hybridits.cli", "run", write(tmp_path, EMPTY), "--format", "json"],
                       capture_output=True, text=True, timeout=60)
    assert r.returncode == 0
    assert json.loads(r.stdout)["scenario"] == "empty"


def test_route_too_fast():
    d = doc()
    d["vehicles"][0]["route"] = [[0, 48.0, 11.0], [1, 48.0, 11.01]]
    diags = S.diagnose(d)
    assert diags and diags[0][0] == "$.vehicles[0].route[1]" and "m/s" in diags[0][1]
