import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
from conftest import DATA

from layoutprior.cli import build_parser, run

SUBCOMMANDS = ["postprocess", "prior", "validate", "mask", "guard", "eval", "attn", "mmd", "mock", "overhead", "synth"]


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return json.loads(err[0])


@pytest.fixture
def corpus(tmp_path):
    assert run(["synth", "--pages", "14", "--seed", "5", "--out", str(tmp_path / "fx")]) == 0
    return tmp_path


def test_prior_golden(tmp_path, c3_prompt):
    out = tmp_path / "prompts.jsonl"
    assert run(["prior", "--detections", str(DATA / "c3_detections.json"), "--out", str(out)]) == 0
    (row,) = [json.loads(line) for line in out.read_text().splitlines()]
    assert row["prompt"] == c3_prompt
    assert row["prior"] == c3_prompt.split("\n", 1)[1]
    assert row["token_overhead"] == 62 and row["perturb_config"] is None and row["page_id"] == "c3"


def test_prior_dims_from_manifest(tmp_path):
    det = tmp_path / "d.json"
    det.write_text(json.dumps({"page_id": "a", "width": 500, "height": 500, "detections": [
        {"class": 9, "score": 0.9, "bbox": [100, 100, 200, 200]}]}))
    man = tmp_path / "m.jsonl"
    man.write_text(json.dumps({"page_id": "a", "width": 1000, "height": 1000}) + "\n")
    out = tmp_path / "p.jsonl"
    assert run(["prior", "--detections", str(det), "--width-height-from", str(man), "--out", str(out)]) == 0
    assert "<loc_50><loc_50><loc_100><loc_100>" in json.loads(out.read_text())["prior"]


def test_perturb_needs_seed(tmp_path, capsys):
    code = run(["prior", "--detections", str(DATA / "c3_detections.json"), "--out", str(tmp_path / "p"), "--perturb", "ys-1.0-0.3"])
    assert code == 3 and error_line(capsys)["error"] == "usage"
    assert not (tmp_path / "p").exists()


def test_bad_perturb_string_is_format_error(tmp_path, capsys):
    code = run(["prior", "--detections", str(DATA / "c3_detections.json"), "--out", str(tmp_path / "p"), "--perturb", "zz", "--seed", "1"])
    assert code == 2
    error_line(capsys)


def test_pipeline_is_deterministic(corpus):
    fx = corpus / "fx"

    def pipeline(tag):
        d = corpus / tag
        d.mkdir()
        assert run(["prior", "--detections", str(fx / "detections.jsonl"), "--perturb", "ys-0.8-0.3", "--seed", "9", "--out", str(d / "p.jsonl")]) == 0
        assert run(["mock", "--fixtures", str(fx), "--prompts", str(d / "p.jsonl"), "--degrade", "miss=0.7,loop=0.2", "--seed", "3", "--out", str(d / "gen")]) == 0
        assert run(["guard", "--generations", str(d / "gen" / "generations.jsonl"), "--out", str(d / "g.json")]) == 0
        assert run(["eval", "--pred", str(d / "gen"), "--ref", str(fx), "--out", str(d / "e.json"), "--per-page", str(d / "e.csv")]) == 0
        assert run(["overhead", "--prompts", str(d / "p.jsonl"), "--out", str(d / "o.json")]) == 0
        return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}

    assert pipeline("one") == pipeline("two")


def test_eval_identity(corpus):
    fx = corpus / "fx"
    out = corpus / "e.json"
    assert run(["eval", "--pred", str(fx), "--ref", str(fx), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["f1"] == 1.0 and rep["edit_dist"] == 0.0 and rep["n_pages"] == 14


def test_eval_manifest_input(tmp_path):
    man = tmp_path / "m.jsonl"
    man.write_text(json.dumps({"page_id": "a", "doctags": "<text>x y</text>"}) + "\n")
    out = tmp_path / "e.json"
    assert run(["eval", "--pred", str(man), "--ref", str(man), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["bleu"] == 1.0


def test_guard_all_eos(tmp_path):
    gen = tmp_path / "g.jsonl"
    gen.write_text("".join(json.dumps({"page_id": str(k), "domain": "hr", "token_count": 9000, "ended_with_eos": True}) + "\n" for k in range(5)))
    out = tmp_path / "r.json"
    assert run(["guard", "--generations", str(gen), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["overall_rate"] == 0.0 and rep["per_domain"]["hr"]["rate"] == 0.0


def test_mask(tmp_path):
    src = tmp_path / "t.jsonl"
    src.write_text(json.dumps({"tokens": ["a", "<loc_5>", "b"], "logprobs": [-1.0, -100.0, -2.0]}) + "\n"
                   + json.dumps({"tokens": "<text><loc_1><loc_2><loc_3><loc_4></text>"}) + "\n")
    out = tmp_path / "m.jsonl"
    assert run(["mask", "--tokens", str(src), "--out", str(out)]) == 0
    a, b = [json.loads(line) for line in out.read_text().splitlines()]
    assert a["masked_nll"] == 3.0 and b["mask"] == [1, 0, 0, 0, 0, 1]


def test_attn(tmp_path):
    seg = ["image_patches"] * 8 + ["instruction"] * 2 + ["layout_prior"] * 4 + ["generated"] * 2
    v = np.full((1, 1, 16, 16), 1 / 16)
    src = tmp_path / "a.json"
    src.write_text(json.dumps({"layers": 1, "heads": 1, "seq": 16, "segments": seg, "token_kinds": ["loc", "content"], "values": v.ravel().tolist()}))
    out = tmp_path / "p.json"
    assert run(["attn", "--tensor", str(src), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["mass_struct_to_prior"] == 0.25


def test_mmd(tmp_path):
    rng = np.random.default_rng(0)
    x, y = tmp_path / "x.csv", tmp_path / "y.csv"
    np.savetxt(x, rng.normal(size=(20, 3)), delimiter=",")
    np.savetxt(y, rng.normal(size=(25, 3)), delimiter=",")
    out = tmp_path / "m.json"
    assert run(["mmd", "--x", str(x), "--y", str(y), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["gamma"] * 2 * rep["sigma"] ** 2 == pytest.approx(1.0)
    assert run(["mmd", "--x", str(x), "--y", str(y), "--gamma", "0.5", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["gamma"] == 0.5
    assert run(["mmd", "--x", str(x), "--y", str(y), "--gamma", "fast", "--out", str(out)]) == 3


def test_overhead_fixture(tmp_path):
    src = tmp_path / "p.jsonl"
    src.write_text("".join(json.dumps({"page_id": str(k), "token_overhead": v}) + "\n" for k, v in enumerate([62, 0, 74, 20, 8])))
    out = tmp_path / "o.json"
    assert run(["overhead", "--prompts", str(src), "--out", str(out)]) == 0
    assert json.loads(out.read_text()) == {"min": 0, "max": 74, "median": 20, "mean": 32.8, "n_prompts": 5}


def test_validate(tmp_path, capsys):
    d = tmp_path / "docs"
    d.mkdir()
    (d / "good.doctags").write_text("<text>a</text>")
    assert run(["validate", "--doctags", str(d)]) == 0
    assert json.loads(capsys.readouterr().out)["failed"] == 0
    (d / "bad.doctags").write_text("<text>a</text>\n\n<text>b</text>")
    out = tmp_path / "v.json"
    assert run(["validate", "--doctags", str(d), "--out", str(out)]) == 2
    report = json.loads(out.read_text())
    assert report["failed"] == 1 and report["results"][0]["error"] == "NonCanonical"


def test_exit_codes(tmp_path, capsys):
    assert run(["guard", "--generations", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "r")]) == 1
    assert error_line(capsys)["exit_code"] == 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run(["postprocess", "--detections", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert error_line(capsys)["exit_code"] == 2
    assert run(["postprocess", "--detections", str(bad)]) == 3
    assert run(["guard", "--generations", str(bad), "--out", "x", "--t-max", "0"]) == 3
    assert run(["nosuch"]) == 3
    assert run(["mock", "--fixtures", str(tmp_path), "--out", str(tmp_path / "g"), "--seed", "1", "--degrade", "miss=9"]) == 3


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"postprocess": {"tau": 0.995}}))
    out = tmp_path / "o.jsonl"
    assert run(["--config", str(cfg), "postprocess", "--detections", str(DATA / "c3_detections.json"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["detections"] == []
    # an explicit flag still wins over the config
    assert run(["--config", str(cfg), "postprocess", "--detections", str(DATA / "c3_detections.json"), "--out", str(out), "--tau", "0.6"]) == 0
    assert len(json.loads(out.read_text())["detections"]) == 10
    for bad in ("[1, 2]", "{", json.dumps({"warp": 1}), json.dumps({"postprocess": {"tau": "high"}})):
        cfg.write_text(bad)
        assert run(["--config", str(cfg), "postprocess", "--detections", "x", "--out", "y"]) == 3
        assert error_line(capsys)["exit_code"] == 3


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help(sub, capsys):
    with pytest.raises(SystemExit) as ei:
        run([sub, "--help"])
    assert ei.value.code == 0
    text = capsys.readouterr().out
    assert "usage:" in text
    if sub in ("postprocess", "prior"):
        assert "0.6" in text and "0.5" in text
    if sub in ("guard", "eval"):
        assert "5000" in text


def test_parser_lists_all_subcommands():
    text = build_parser().format_help()
    assert all(s in text for s in SUBCOMMANDS)


def test_console_script(tmp_path):
    exe = shutil.which("layoutprior")
    cmd = [exe] if exe else [sys.executable, "-m", "layoutprior.cli"]
    out = subprocess.run(cmd + ["prior", "--detections", str(DATA / "c3_detections.json"), "--out", str(tmp_path / "p.jsonl")], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    bad = subprocess.run(cmd + ["prior"], capture_output=True, text=True)
    assert bad.returncode == 3 and json.loads(bad.stderr)["error"] == "usage"
