import json
import shutil
import struct
import subprocess
import sys

import numpy as np
import pytest

from egoalign.cli import main
from egoalign.episode import ACTIONS_FILE, read_episode
from egoalign.synthetic import (
    Segment,
    make_human_recording,
    make_robot_recording,
    primitive_tour,
    synthetic_depth,
    synthetic_intrinsics,
    synthetic_rgb,
    walk_grasp_squat,
)
from egoalign.view import read_mask, read_rgb, write_depth, write_png


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, [json.loads(line) for line in out.splitlines() if line.strip()]


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def recordings(tmp_path_factory):
    root = tmp_path_factory.mktemp("recs")
    make_human_recording(root / "human_a", walk_grasp_squat(0), seed=0)
    make_human_recording(root / "human_b", walk_grasp_squat(1), seed=1)
    make_robot_recording(root / "robot_a", primitive_tour(0), seed=2)
    return root


@pytest.fixture(scope="module")
def aligned(recordings, tmp_path_factory):
    out = tmp_path_factory.mktemp("eps")
    assert main(["align", "--input", str(recordings), "--output", str(out), "--seed", "4"]) == 0
    return out


# -- align ----------------------------------------------------------------------------------

def test_align_writes_every_episode(aligned):
    assert sorted(p.name for p in aligned.iterdir()) == ["human_a", "human_b", "robot_a"]
    for d in aligned.iterdir():
        e = read_episode(d)
        assert len(e.actions) == len(e.frames) - 1


def test_align_is_independent_of_jobs(recordings, aligned, tmp_path, capsys):
    code, report = run(capsys, "align", "--input", recordings, "--output", tmp_path / "j2", "--seed", 4, "--jobs", 2)
    assert code == 0 and all(r["status"] == "ok" for r in report)
    assert tree_bytes(aligned) == tree_bytes(tmp_path / "j2")


def test_align_reports_broken_recording(tmp_path, capsys):
    make_robot_recording(tmp_path / "in" / "good", [Segment("forward", 3.0)], seed=0)
    make_robot_recording(tmp_path / "in" / "bad", [Segment("forward", 3.0)], seed=1)
    meta = json.loads((tmp_path / "in" / "bad" / "recording.json").read_text())
    del meta["source"]
    (tmp_path / "in" / "bad" / "recording.json").write_text(json.dumps(meta))
    code, report = run(capsys, "align", "--input", tmp_path / "in", "--output", tmp_path / "out",
                       "--report", tmp_path / "report.jsonl")
    assert code == 1
    status = {r["episode"]: r["status"] for r in report}
    assert status == {"bad": "error", "good": "ok"}
    assert [p.name for p in (tmp_path / "out").iterdir()] == ["good"]
    assert len((tmp_path / "report.jsonl").read_text().splitlines()) == 2


def test_align_usage_errors(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["align", "--input", str(tmp_path / "empty"), "--output", str(tmp_path / "o")]) == 2
    assert main(["align", "--input", str(tmp_path / "nope"), "--output", str(tmp_path / "o")]) == 2
    (tmp_path / "cfg.json").write_text('{"gripper": {"close_threshold": 5, "open_threshold": 10}}')
    assert main(["align", "--input", str(tmp_path), "--output", str(tmp_path / "o"),
                 "--config", str(tmp_path / "cfg.json")]) == 2
    (tmp_path / "cfg.json").write_text("{not json")
    assert main(["align", "--input", str(tmp_path), "--output", str(tmp_path / "o"),
                 "--config", str(tmp_path / "cfg.json")]) == 2
    with pytest.raises(SystemExit) as err:
        main(["align"])
    assert err.value.code == 2


# -- reproject ------------------------------------------------------------------------------

@pytest.fixture
def frames_dir(tmp_path):
    root = tmp_path / "frames"
    (root / "rgb").mkdir(parents=True)
    (root / "depth").mkdir()
    (root / "intrinsics.json").write_text(json.dumps(synthetic_intrinsics().to_dict()))
    for i in range(3):
        write_png(root / "rgb" / f"{i:06d}.png", synthetic_rgb(i))
        write_depth(root / "depth" / f"{i:06d}.egdp", synthetic_depth())
    return root


def test_reproject_identity(frames_dir, tmp_path, capsys):
    code, report = run(capsys, "reproject", "--input", frames_dir, "--output", tmp_path / "o",
                       "--drop", 0, "--perturb", 0)
    assert code == 0 and len(report) == 3
    for i in range(3):
        warped = read_rgb(tmp_path / "o" / "warped" / f"{i:06d}.png")
        holes = read_mask(tmp_path / "o" / "mask" / f"{i:06d}.png")
        valid = synthetic_depth().valid
        np.testing.assert_array_equal(holes, ~valid)
        np.testing.assert_array_equal(warped[valid], synthetic_rgb(i)[valid])
    assert not (tmp_path / "o" / "filled").exists()


def test_reproject_default_masks_every_frame(frames_dir, tmp_path, capsys):
    code, report = run(capsys, "reproject", "--input", frames_dir, "--output", tmp_path / "o", "--fill", "nearest")
    assert code == 0
    for sub in ("warped", "mask", "filled"):
        assert len(list((tmp_path / "o" / sub).glob("*.png"))) == 3
    assert all(r["holes"] > 0 for r in report)
    assert all(0.2 <= r["drop"] <= 0.3 and abs(r["offset"]) <= 0.05 for r in report)


def test_reproject_missing_depth(frames_dir, tmp_path, capsys):
    (frames_dir / "depth" / "000001.egdp").unlink()
    code, report = run(capsys, "reproject", "--input", frames_dir, "--output", tmp_path / "o")
    assert code == 1
    assert [r["status"] for r in report] == ["ok", "error", "ok"]
    assert report[1]["error"]["type"] == "DanglingReference"


def test_reproject_external_fill(frames_dir, tmp_path, capsys):
    script = "import shutil,sys; shutil.copy(sys.argv[1], sys.argv[2])"
    cmd = f'"{sys.executable}" -c "{script}" {{rgb_in}} {{rgb_out}}'
    code, _ = run(capsys, "reproject", "--input", frames_dir, "--output", tmp_path / "o", "--inpaint-cmd", cmd)
    assert code == 0
    assert len(list((tmp_path / "o" / "filled").glob("*.png"))) == 3


def test_reproject_usage(tmp_path, capsys):
    assert main(["reproject", "--input", str(tmp_path), "--output", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit):
        main(["reproject", "--input", ".", "--output", "o", "--fill", "nearest", "--inpaint-cmd", "x"])


# -- manifest -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pools(aligned, tmp_path_factory):
    root = tmp_path_factory.mktemp("pools")
    for d in aligned.iterdir():
        source = "robot" if d.name.startswith("robot") else "human"
        shutil.copytree(d, root / source / d.name)
    return root


def test_manifest_defaults(pools, tmp_path, capsys):
    code, report = run(capsys, "manifest", "--robot", pools / "robot", "--human", pools / "human",
                       "--out", tmp_path / "m.jsonl")
    assert code == 0
    assert report[0]["batches"] == 20000
    assert (report[0]["robot_per_batch"], report[0]["human_per_batch"]) == (85, 171)
    with open(tmp_path / "m.jsonl") as fh:
        header = json.loads(fh.readline())
        first = json.loads(fh.readline())
        rest = sum(1 for _ in fh)
    assert header["n_batches"] == 20000 and rest == 19999
    assert [s[0] for s in first["samples"]].count("robot") == 85


def test_manifest_reruns_are_identical(pools, tmp_path):
    args = ["manifest", "--robot", str(pools / "robot"), "--human", str(pools / "human"), "--steps", "300",
            "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_manifest_errors(pools, tmp_path):
    out = str(tmp_path / "m")
    assert main(["manifest", "--robot", str(pools / "robot"), "--human", str(tmp_path / "none"),
                 "--ratio", "0:1", "--out", out]) == 1
    assert main(["manifest", "--robot", str(pools / "robot"), "--ratio", "x:y", "--out", out]) == 1
    # a human episode in the robot pool
    assert main(["manifest", "--robot", str(pools / "human"), "--human", str(pools / "human"), "--out", out]) == 1
    assert main(["manifest", "--robot", str(pools / "robot"), "--batch", "0", "--out", out]) == 2


# -- validate -------------------------------------------------------------------------------

def test_validate_fresh_episode(aligned, capsys):
    code, report = run(capsys, "validate", "--episode", aligned / "human_a")
    assert code == 0 and report[0]["ok"]


def test_validate_corrupted_bin(aligned, tmp_path, capsys):
    ep = tmp_path / "ep"
    shutil.copytree(aligned / "robot_a", ep)
    blob = bytearray((ep / ACTIONS_FILE).read_bytes())
    rows, cols = read_episode(ep).actions.shape
    header = len(blob) - rows * cols * 8
    offset = header + (7 * cols + 12) * 8
    blob[offset:offset + 8] = struct.pack("<d", 3.0)
    (ep / ACTIONS_FILE).write_bytes(bytes(blob))
    code, report = run(capsys, "validate", "--episode", ep)
    assert code == 1
    assert any("step 7" in issue for issue in report[0]["issues"])


def test_validate_unreadable(aligned, tmp_path, capsys):
    ep = tmp_path / "ep"
    shutil.copytree(aligned / "robot_a", ep)
    (ep / "episode.json").unlink()
    assert run(capsys, "validate", "--episode", ep)[0] == 2
    assert run(capsys, "validate", "--episode", tmp_path / "missing")[0] == 2


# -- synth and entry point ------------------------------------------------------------------

def test_synth_then_align(tmp_path, capsys):
    code, report = run(capsys, "synth", "--output", tmp_path / "c", "--human", 1, "--robot", 1)
    assert code == 0 and {r["recording"] for r in report} == {"human_000", "robot_000"}
    assert main(["align", "--input", str(tmp_path / "c"), "--output", str(tmp_path / "e")]) == 0


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "egoalign.cli", "validate", "--episode", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
