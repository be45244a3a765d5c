from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

import cemrm
from cemrm.cli import main
from cemrm.config import load_config, save_config
from cemrm.design_space import uniform_baseline
from cemrm.orchestrator import read_log_csv

ROOT = Path(__file__).resolve().parents[1]
SPHERE = ROOT / "configs" / "sphere.json"
SURROGATE = ROOT / "configs" / "surrogate.json"
RETARGET = Path(cemrm.__file__).parent / "data" / "retarget"


def _small_sphere(tmp_path) -> Path:
    cfg = load_config(SPHERE).with_overrides(J=8)
    path = tmp_path / "sphere_small.json"
    save_config(cfg, path)
    return path


def _files(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_optimize_twice_is_identical(tmp_path, capsys):
    cfg = _small_sphere(tmp_path)
    assert main(["optimize", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    first = capsys.readouterr().out
    assert main(["optimize", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "b")]) == 0
    assert capsys.readouterr().out == first
    assert "final elite mean" in first and "env_interactions" in first
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    assert set(_files(tmp_path / "a")) == {"config.json", "checkpoint.json", "log.csv", "final_design.json"}
    header = (tmp_path / "a" / "log.csv").read_text().splitlines()[0]
    assert header == "iter,env_interactions,elite_mean,elite_max,rm_loss,rho,sigma,wall_s"


def test_optimize_resume_matches(tmp_path):
    cfg = _small_sphere(tmp_path)
    main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "full")])
    main(["optimize", "--config", str(cfg), "--iterations", "4", "--out", str(tmp_path / "half")])
    assert main(["optimize", "--resume", str(tmp_path / "half" / "checkpoint.json"), "--iterations", "8",
                 "--out", str(tmp_path / "rest")]) == 0
    assert (tmp_path / "rest" / "log.csv").read_bytes() == (tmp_path / "full" / "log.csv").read_bytes()
    full = json.loads((tmp_path / "full" / "final_design.json").read_text())
    rest = json.loads((tmp_path / "rest" / "final_design.json").read_text())
    assert full == rest


def test_surrogate_pure_cem_has_zero_rho(tmp_path):
    out = tmp_path / "s"
    assert main(["optimize", "--config", str(SURROGATE), "--mode", "pure-cem", "--iterations", "1",
                 "--out", str(out)]) == 0
    rows = read_log_csv(out / "log.csv")
    assert rows and all(float(r["rho"]) == 0.0 for r in rows)
    assert int(rows[-1]["env_interactions"]) == 20 * 8


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["optimize", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 2
    assert "config" in capsys.readouterr().err


def test_bad_field_is_named(tmp_path, capsys):
    data = json.loads(SPHERE.read_text())
    data["K"] = 3
    (tmp_path / "bad.json").write_text(json.dumps(data))
    assert main(["optimize", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 2
    assert "K:" in capsys.readouterr().err


def test_missing_checkpoint_fails_cleanly(tmp_path):
    assert main(["optimize", "--resume", str(tmp_path / "no.json"), "--out", str(tmp_path / "o")]) == 1


def test_compare_writes_table(tmp_path, capsys):
    cfg = _small_sphere(tmp_path)
    args = ["compare", "--config", str(cfg), "--seeds", "0", "1", "2", "--iterations", "4"]
    assert main(args + ["--out", str(tmp_path / "c1")]) == 0
    text = capsys.readouterr().out
    for mode in ("pure-cem", "hybrid", "rho1", "random"):
        assert mode in text
    assert main(args + ["--out", str(tmp_path / "c2")]) == 0
    assert _files(tmp_path / "c1") == _files(tmp_path / "c2")
    lines = (tmp_path / "c1" / "compare.csv").read_text().splitlines()
    assert len(lines) == 1 + 4 * 3


def test_compare_needs_three_seeds(tmp_path):
    assert main(["compare", "--config", str(SPHERE), "--seeds", "0", "1"]) == 2


def _two_object_bundle(tmp_path) -> Path:
    src = Path(cemrm.__file__).parent / "data" / "bundle"
    dst = tmp_path / "bundle"
    shutil.copytree(src, dst)
    manifest = json.loads((dst / "manifest.json").read_text())
    # one light and one heavy object
    manifest["objects"] = [manifest["objects"][0], manifest["objects"][4]]
    (dst / "manifest.json").write_text(json.dumps(manifest))
    return dst


def test_evaluate_report(tmp_path, capsys):
    design = tmp_path / "d.json"
    design.write_text(json.dumps(uniform_baseline().to_dict()))
    bundle = _two_object_bundle(tmp_path)
    args = ["evaluate", "--design", str(design), "--bundle", str(bundle), "--trials", "2"]
    assert main(args + ["--out", str(tmp_path / "r1.json")]) == 0
    text = capsys.readouterr().out
    assert "[light]" in text and "[heavy]" in text
    assert main(args + ["--out", str(tmp_path / "r2.json")]) == 0
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
    report = json.loads((tmp_path / "r1.json").read_text())
    assert len(report["objects"]) == 2


def test_evaluate_zero_actuation(tmp_path, capsys):
    design = tmp_path / "d.json"
    design.write_text(json.dumps(uniform_baseline().to_dict()))
    assert main(["evaluate", "--design", str(design), "--bundle", str(_two_object_bundle(tmp_path)),
                 "--trials", "1", "--zero-actuation", "--out", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert all(c["success_rate"] == 0.0 for c in report["classes"])


def test_evaluate_invalid_design_file(tmp_path, capsys):
    (tmp_path / "d.json").write_text('{"thumb": 1}')
    assert main(["evaluate", "--design", str(tmp_path / "d.json")]) == 1
    assert "not a hand design" in capsys.readouterr().err


def test_retarget_matches_golden(tmp_path):
    out = tmp_path / "r"
    assert main(["retarget", "--stream", str(RETARGET / "sample_stream.jsonl"),
                 "--calibration", str(RETARGET / "calibration.json"), "--out", str(out)]) == 0
    records = sorted((out / "records").iterdir())
    assert len(records) == 1
    assert json.loads(records[0].read_text()) == json.loads((RETARGET / "golden_record.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["objects"][0]["records"] == [f"records/{records[0].name}"]
    from cemrm.surrogate.bundle import load_bundle
    assert len(load_bundle(out).objects) == 1


def test_retarget_without_marker_warns(tmp_path, capsys):
    lines = [json.loads(l) for l in (RETARGET / "sample_stream.jsonl").read_text().splitlines()]
    for l in lines:
        l.pop("grasp", None)
    (tmp_path / "s.jsonl").write_text("".join(json.dumps(l) + "\n" for l in lines))
    assert main(["retarget", "--stream", str(tmp_path / "s.jsonl"),
                 "--calibration", str(RETARGET / "calibration.json"), "--out", str(tmp_path / "r")]) == 0
    assert "warning" in capsys.readouterr().err
    assert not (tmp_path / "r").exists()


def test_retarget_malformed_line(tmp_path, capsys):
    lines = (RETARGET / "sample_stream.jsonl").read_text().splitlines()
    lines[16] = "{oops"
    (tmp_path / "s.jsonl").write_text("\n".join(lines) + "\n")
    assert main(["retarget", "--stream", str(tmp_path / "s.jsonl"),
                 "--calibration", str(RETARGET / "calibration.json"), "--out", str(tmp_path / "r")]) == 1
    assert "line 17" in capsys.readouterr().err


def test_bench_list(capsys):
    assert main(["bench-list", "--dim", "5"]) == 0
    out = capsys.readouterr().out
    assert "sphere" in out and "rosenbrock" in out and "plateau-invalid" in out
