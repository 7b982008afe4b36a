import filecmp

import pytest

from autolabel.cli import main
from autolabel.evaluation import load_detections


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert main(["gen-synthetic", "--seed", "4", "--vehicles", "6", "--buildings", "1",
                 "--width", "320", "--height", "320", "--out", str(d)]) == 0
    return d


FAST = ["--set", "slic.k=200", "--set", "classify.epochs=100", "--set", "classify.tau=0.6"]


def test_gen_synthetic_outputs(scene_dir):
    for name in ("vis.ppm", "dsm.dsm", "gt.txt", "detections.txt"):
        assert (scene_dir / name).exists()


def test_stagewise_commands(scene_dir, tmp_path):
    vis, dsm = str(scene_dir / "vis.ppm"), str(scene_dir / "dsm.dsm")
    assert main(["fuse", "--vis", vis, "--dsm", dsm, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "fused.ppm").exists()
    assert main(["segment", "--vis", vis, "--dsm", dsm, "--out", str(tmp_path), *FAST]) == 0
    assert (tmp_path / "superpixels.csv").read_text().startswith("id,x,y,L,a,b,height,size\n")
    assert main(["candidates", "--vis", vis, "--dsm", dsm, "--out", str(tmp_path), *FAST]) == 0
    cands = load_detections(tmp_path / "candidates.txt")
    assert cands["scene"]
    assert main(["classify-train", "--seed", "4", "--out", str(tmp_path), *FAST]) == 0
    assert main(["select", "--vis", vis, "--candidates", str(tmp_path / "candidates.txt"),
                 "--model", str(tmp_path / "model.json"), "--out", str(tmp_path), *FAST]) == 0
    sel = load_detections(tmp_path / "selected.txt")
    assert all(b.score >= 0.6 for b in sel.get("scene", []))
    scores = tmp_path / "scores.txt"
    scores.write_text("".join(f"scene:{i} {0.9 if i % 2 else 0.1}\n" for i in range(len(cands["scene"]))))
    assert main(["select", "--vis", vis, "--candidates", str(tmp_path / "candidates.txt"),
                 "--scores", str(scores), "--out", str(tmp_path / "ext"), *FAST]) == 0
    assert len(load_detections(tmp_path / "ext" / "selected.txt").get("scene", [])) == len(cands["scene"]) // 2


def test_evaluate_and_pr_curve(scene_dir, tmp_path, capsys):
    args = ["--detections", str(scene_dir / "detections.txt"), "--gt", str(scene_dir / "gt.txt"),
            "--out", str(tmp_path)]
    assert main(["evaluate", *args]) == 0
    assert "P=1.0000" in capsys.readouterr().out
    assert main(["pr-curve", *args]) == 0
    assert (tmp_path / "pr.csv").read_text().startswith("threshold,precision,recall\n")


def run_args(scene_dir, out, mode="ms-aft"):
    return ["run", "--mode", mode, "--seed", "4", "--vis", str(scene_dir / "vis.ppm"),
            "--dsm", str(scene_dir / "dsm.dsm"), "--gt", str(scene_dir / "gt.txt"),
            "--detections", str(scene_dir / "detections.txt"), "--out", str(out), *FAST]


def test_run_is_byte_deterministic(scene_dir, tmp_path):
    assert main(run_args(scene_dir, tmp_path / "a")) == 0
    assert main(run_args(scene_dir, tmp_path / "b")) == 0
    names = ["labels.txt", "metrics.csv", "pr.csv", "training_set.txt", "summary.json"]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert match == names and not mismatch and not errors


def test_config_file_and_global_flag_position(scene_dir, tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[pipeline]\nmode = finetune-only\n")
    argv = ["--config", str(ini), "run", "--vis", str(scene_dir / "vis.ppm"),
            "--detections", str(scene_dir / "detections.txt"), "--out", str(tmp_path / "o")]
    assert main(argv) == 0
    assert (tmp_path / "o" / "labels.txt").exists()


def test_resolution_study_command(scene_dir, tmp_path):
    argv = ["resolution-study", "--vis", str(scene_dir / "vis.ppm"), "--dsm", str(scene_dir / "dsm.dsm"),
            "--gt", str(scene_dir / "gt.txt"), "--factors", "1,2", "--out", str(tmp_path), *FAST]
    assert main(argv) == 0
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "factor,precision,recall,f1" and len(lines) == 3


@pytest.mark.parametrize("argv,code", [
    (["run", "--mode", "finetune-only", "--vis", "missing.ppm"], 2),
    (["run", "--vis", "missing.ppm", "--dsm", "missing.dsm"], 2),
    (["evaluate", "--detections", "missing.txt", "--gt", "missing.txt"], 2),
    (["run", "--vis", "x", "--dsm", "y", "--set", "no.such_key=1"], 3),
    (["run", "--vis", "x", "--dsm", "y", "--set", "classify.tau=7"], 3),
    (["run", "--vis", "x", "--config", "/does/not/exist.ini"], 3),
])
def test_exit_codes(tmp_path, argv, code):
    assert main([*argv, "--out", str(tmp_path)]) == code


def test_misaligned_rasters_are_input_errors(scene_dir, tmp_path):
    main(["gen-synthetic", "--width", "200", "--height", "200", "--vehicles", "1", "--buildings", "0",
          "--out", str(tmp_path)])
    argv = ["fuse", "--vis", str(scene_dir / "vis.ppm"), "--dsm", str(tmp_path / "dsm.dsm"), "--out", str(tmp_path)]
    assert main(argv) == 2


def test_help_exits_cleanly():
    with pytest.raises(SystemExit) as ei:
        main(["--help"])
    assert ei.value.code == 0
