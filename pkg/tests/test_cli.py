import json
import subprocess
import sys

import pytest

from bgsim.cli import EXIT_FAIL, EXIT_INPUT, EXIT_OK, main, scene_seed


def synth(tmp_path, name="s", *extra):
    out = tmp_path / name
    assert main(["synth", "--output", str(out), "--scenes", "2", "--seed", "5", *extra]) == EXIT_OK
    return out


def test_synth_deterministic(tmp_path):
    a, b = synth(tmp_path, "a"), synth(tmp_path, "b")
    names = sorted(p.name for p in a.iterdir())
    assert names == ["ground_truth.json", "manifest.json", "scene_0000.cmf", "scene_0000.gt.json",
                     "scene_0001.cmf", "scene_0001.gt.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_scene_seeds_distinct():
    assert len({scene_seed(5, k) for k in range(100)}) == 100
    assert scene_seed(5, 0) != scene_seed(6, 0)


def test_infer_eval_round_trip(tmp_path, capsys):
    d = synth(tmp_path)
    pred = tmp_path / "pred.json"
    overlay = tmp_path / "o.ppm"
    cmfs = [str(d / "scene_0000.cmf"), str(d / "scene_0001.cmf")]
    assert main(["infer", "--input", *cmfs, "--output", str(pred)]) == EXIT_OK
    data = json.loads(pred.read_text())
    assert [im["id"] for im in data["images"]] == ["scene_0000", "scene_0001"]
    person = data["images"][0]["persons"][0]
    assert len(person["keypoints"]) == 15 and len(person["keypoints"][0]) == 4
    assert main(["infer", "--input", cmfs[0], "--output", str(tmp_path / "p1.json"),
                 "--overlay", str(overlay)]) == EXIT_OK
    assert overlay.read_bytes().startswith(b"P6\n")
    capsys.readouterr()
    assert main(["eval", "--gt", str(d / "ground_truth.json"), "--input", str(pred),
                 "--json"]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["mean_ap"] >= 0.9 and result["pckh"]["total"] >= 90.0


def test_infer_deterministic(tmp_path):
    d = synth(tmp_path)
    for name in ("p1.json", "p2.json"):
        assert main(["infer", "--input", str(d / "scene_0000.cmf"),
                     "--output", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "p1.json").read_bytes() == (tmp_path / "p2.json").read_bytes()


def test_infer_stdout(tmp_path, capsys):
    d = synth(tmp_path)
    capsys.readouterr()
    assert main(["infer", "--input", str(d / "scene_0000.cmf")]) == EXIT_OK
    assert "images" in json.loads(capsys.readouterr().out)


@pytest.mark.parametrize("argv", [
    ["infer", "--input", "/nonexistent.cmf"],
    ["infer"],
    ["bogus"],
    ["synth", "--output", "/tmp/x", "--grid", "16", "16", "--n-persons", "50"],
    ["oracle", "--max-grid", "9"],
])
def test_input_errors(argv, tmp_path):
    if argv[0] == "synth":
        argv = argv[:2] + [str(tmp_path / "x")] + argv[3:]
    assert main(argv) == EXIT_INPUT


def test_truncated_cmf(tmp_path, capsys):
    d = synth(tmp_path)
    bad = tmp_path / "bad.cmf"
    bad.write_bytes((d / "scene_0000.cmf").read_bytes()[:100])
    assert main(["infer", "--input", str(bad)]) == EXIT_INPUT
    assert "byte offset" in capsys.readouterr().err


def test_bad_sigma(tmp_path):
    d = synth(tmp_path)
    assert main(["infer", "--input", str(d / "scene_0000.cmf"), "--sigma", "0"]) == EXIT_INPUT


def test_eval_schema_error(tmp_path):
    d = synth(tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"images": [{"persons": [{"keypoints": [[0, 0]]}]}]}))
    assert main(["eval", "--gt", str(d / "ground_truth.json"), "--input", str(bad)]) == EXIT_INPUT


def test_eval_undefined_metric(tmp_path):
    gt = tmp_path / "gt.json"
    gt.write_text(json.dumps({"images": [{"id": "a", "persons": []}]}))
    pred = tmp_path / "p.json"
    pred.write_text(json.dumps({"images": [{"id": "a", "persons": []}]}))
    assert main(["eval", "--gt", str(gt), "--input", str(pred)]) == EXIT_FAIL


def test_oracle_small():
    assert main(["oracle", "--instances", "3", "--seed", "1"]) == EXIT_OK


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "bgsim", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "infer" in r.stdout
