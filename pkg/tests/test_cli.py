import json

import pytest

from dpgait.cli import main
from dpgait.skeleton_io import CLIP_COLUMNS, DatasetManifest


def run(*args):
    return main([str(a) for a in args])


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    for cmd in ("synth", "encode", "split", "train", "eval", "predict", "gradcheck"):
        assert run(cmd, "--help") == 0
    assert "(default: 0.001)" in capsys.readouterr().out


def test_synth_is_deterministic(tmp_path):
    assert run("synth", "--n-videos", 3, "--seed", 4, "--out-dir", tmp_path / "a") == 0
    assert run("synth", "--n-videos", 3, "--seed", 4, "--out-dir", tmp_path / "b") == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert len(files) == 3 * 3 + 1  # 310 frames -> three windows per video
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    inv = json.loads((tmp_path / "a" / "invocation.json").read_text())
    assert inv["command"] == "synth"


def test_short_clip_exits_2(tmp_path, capsys):
    path = tmp_path / "c.csv"
    path.write_text(",".join(CLIP_COLUMNS) + "\n" + "\n".join([",".join(["1"] * 58)] * 123) + "\n")
    assert run("encode", "--input", path, "--out-dir", tmp_path / "o") == 2
    assert "124" in capsys.readouterr().err


def test_missing_manifest_exits_1(tmp_path, capsys):
    assert run("train", "--manifest", tmp_path / "nope.csv", "--target", "GDI", "--side", "L") == 1
    assert "usage:" in capsys.readouterr().err


def test_missing_required_flag_exits_1():
    assert run("train", "--target", "GDI") == 1


def test_full_pipeline(tmp_path, capsys):
    data = tmp_path / "data"
    assert run("synth", "--n-videos", 6, "--seed", 2, "--out-dir", data) == 0
    assert run("split", "--manifest", data / "manifest.csv", "--ratios", "4,1,1") == 0
    m = DatasetManifest.read_csv(data / "manifest.csv")
    assert {e.split for e in m} == {"train", "val", "test"}
    assert run("encode", "--input", data / "manifest.csv", "--out-dir", tmp_path / "img",
               "--side", "L") == 0
    assert len(list((tmp_path / "img" / "images").glob("*_coord.png"))) == len(m)
    assert run("train", "--manifest", data / "manifest.csv", "--target", "Cadence", "--side", "L",
               "--epochs", 2, "--batch", 4, "--conv-channels", "2,2,2", "--fc-widths", "4,4,4,4",
               "--run-dir", tmp_path / "runs") == 0
    run_dir = tmp_path / "runs" / "Cadence_L"
    assert {"best.dpgc", "last.dpgc", "log.csv", "config.json"} <= {p.name for p in run_dir.iterdir()}
    assert run("eval", "--checkpoint", run_dir / "best.dpgc", "--manifest", data / "manifest.csv") == 0
    report = json.loads((run_dir / "report.json").read_text())
    assert json.loads((run_dir / "invocation.train.json").read_text())["flags"]["epochs"] == 2
    assert json.loads((run_dir / "invocation.json").read_text())["command"] == "eval"
    assert report["target"] == "Cadence" and report["clip_count"] == 3
    clip = data / m.partition("test")[0].clip_path
    capsys.readouterr()
    assert run("predict", "--checkpoint", run_dir / "best.dpgc", "--clip", clip) == 0
    assert str(clip) in capsys.readouterr().out
    assert run("predict", "--checkpoint", run_dir / "best.dpgc", "--clip", clip, "--side", "R") == 1


def test_encode_pose_json(tmp_path):
    data = tmp_path / "data"
    assert run("synth", "--n-videos", 1, "--frames-per-video", 130, "--pose-json", "--out-dir", data) == 0
    assert run("encode", "--input", data / "pose" / "vid0000", "--out-dir", tmp_path / "img",
               "--format", "raw") == 0
    raws = sorted((tmp_path / "img" / "images").glob("*.raw"))
    assert [p.name for p in raws] == ["vid0000_0_L_coord.raw", "vid0000_0_L_traj.raw",
                                      "vid0000_0_R_coord.raw", "vid0000_0_R_traj.raw"]
