import numpy as np
import pytest

from usta.cli import main
from usta.raster import read_change_map, read_image, read_scalar_map, write_change_map, write_image
from usta.raster import ChangeMap, RasterImage
from usta.synth import gen_scene

TINY = "crop = 32\nstride = 32\nscale = 16\nepochs_teacher = 1\nepochs_student = 1\nbatch_size = 4\nlr = 0.001\nseed = 3\n"


@pytest.fixture
def scene(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--seed", "2", "--h", "64", "--w", "64"]) == 0
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    s = tmp_path / "s"
    return {"x1": str(s / "x1.ppm"), "x2": str(s / "x2.ppm"), "ref": str(s / "ref.pgm"), "cfg": str(cfg), "dir": tmp_path}


def test_synth_matches_generator(scene):
    x1, _, ref = gen_scene(64, 64, 0.1, 0.05, 2)
    assert np.array_equal(read_change_map(scene["ref"]).data, ref.data)
    assert np.max(np.abs(read_image(scene["x1"]).data - x1.data)) <= 0.5 / 255 + 1e-12


def test_eval_perfect_prediction(scene, capsys):
    assert main(["eval", "--pred", scene["ref"], "--ref", scene["ref"]]) == 0
    assert capsys.readouterr().out.strip() == "100.0,100.0,100.0"


def test_eval_row(tmp_path, capsys):
    write_change_map(ChangeMap(np.array([[1, 1, 0, 0]], dtype=np.uint8)), tmp_path / "p.pgm")
    write_change_map(ChangeMap(np.array([[1, 0, 1, 0]], dtype=np.uint8)), tmp_path / "r.pgm")
    assert main(["eval", "--pred", str(tmp_path / "p.pgm"), "--ref", str(tmp_path / "r.pgm")]) == 0
    assert capsys.readouterr().out.strip() == "50.0,50.0,50.0"


def test_baseline_on_identical_images_is_black(scene, capsys):
    out = scene["dir"] / "b"
    assert main(["baseline", "--method", "cva", "--x1", scene["x1"], "--x2", scene["x1"], "--out", str(out)]) == 0
    assert "threshold" in capsys.readouterr().out
    assert not read_change_map(out / "cva_map.pgm").data.any()
    assert read_scalar_map(out / "cva_di.ustaf").data.shape == (64, 64)


@pytest.mark.parametrize("method", ["diff", "ratio", "pca", "mad", "irmad"])
def test_baseline_methods(scene, method):
    out = scene["dir"] / method
    assert main(["baseline", "--method", method, "--x1", scene["x1"], "--x2", scene["x2"], "--out", str(out)]) == 0
    assert (out / f"{method}_map.pgm").exists()


def test_predetect_outputs(scene):
    out = scene["dir"] / "pd"
    assert main(["predetect", "--x1", scene["x1"], "--x2", scene["x2"], "--cfg", scene["cfg"], "--out", str(out)]) == 0
    raw, gated = read_scalar_map(out / "pc1.ustaf").data, read_scalar_map(out / "pc1s.ustaf").data
    assert np.all((gated == 0) | (gated == raw.astype(np.float32)))
    assert read_change_map(out / "cm1.pgm").data.shape == (64, 64)


RUN_FILES = [
    "cm1.pgm", "pc1s.ustaf", "cm2.pgm", "pc2s.ustaf", "teacher_di.ustaf", "student_di.ustaf",
    "change_map.pgm", "teacher.ckpt", "student.ckpt", "train_log.txt",
]


def test_run_twice_is_byte_identical(scene):
    outs = [scene["dir"] / "r1", scene["dir"] / "r2"]
    for out in outs:
        assert main(["run", "--x1", scene["x1"], "--x2", scene["x2"], "--cfg", scene["cfg"], "--out", str(out)]) == 0
    for name in RUN_FILES:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    assert (outs[0] / "train_log.txt").read_text().splitlines()[0] == "stage epoch loss"


def test_sweep_csv(scene, capsys):
    args = ["sweep", "--param", "beta", "--values", "0,1", "--x1", scene["x1"], "--x2", scene["x2"],
            "--ref", scene["ref"], "--cfg", scene["cfg"], "--seeds", "0,1"]
    assert main(args) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "beta,seed,f1"
    assert [tuple(line.split(",")[:2]) for line in lines[1:]] == [("0.0", "0"), ("0.0", "1"), ("1.0", "0"), ("1.0", "1")]
    assert all(0 <= float(line.split(",")[2]) <= 1 for line in lines[1:])


def test_sweep_parallel_matches_serial(scene, capsys):
    base = ["sweep", "--param", "w", "--values", "3,5", "--x1", scene["x1"], "--x2", scene["x2"],
            "--ref", scene["ref"], "--cfg", scene["cfg"]]
    assert main(base) == 0
    serial = capsys.readouterr().out
    assert main(base + ["--jobs", "2"]) == 0
    assert capsys.readouterr().out == serial


def test_ablate_branch(scene, capsys):
    args = ["ablate-branch", "--mode", "single", "double", "--x1", scene["x1"], "--x2", scene["x2"],
            "--ref", scene["ref"], "--cfg", scene["cfg"]]
    assert main(args) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "mode,seed,f1" and [l.split(",")[0] for l in lines[1:]] == ["single", "double"]


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["eval", "--pred", "a.pgm"],
    ["baseline", "--method", "sobel", "--x1", "a", "--x2", "b", "--out", "c"],
    ["synth", "--out", "x", "--seed", "one"],
    ["eval", "--pred", "a", "--ref", "b", "--colour"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_sweep_bad_values_exit_1(scene):
    args = ["sweep", "--param", "w", "--values", "3,x", "--x1", scene["x1"], "--x2", scene["x2"],
            "--ref", scene["ref"], "--cfg", scene["cfg"]]
    assert main(args) == 1


def test_data_errors_exit_2(scene, tmp_path, capsys):
    assert main(["eval", "--pred", str(tmp_path / "missing.pgm"), "--ref", scene["ref"]]) == 2
    (tmp_path / "junk.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    assert main(["eval", "--pred", str(tmp_path / "junk.pgm"), "--ref", scene["ref"]]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("bta = 0.6\n")
    assert main(["predetect", "--x1", scene["x1"], "--x2", scene["x2"], "--cfg", str(bad), "--out", str(tmp_path / "o")]) == 2
    write_image(RasterImage(np.zeros((32, 48, 3))), tmp_path / "odd.ppm")
    assert main(["baseline", "--method", "cva", "--x1", scene["x1"], "--x2", str(tmp_path / "odd.ppm"), "--out", str(tmp_path / "o")]) == 2
    assert main(["synth", "--out", str(tmp_path / "o"), "--seed", "1", "--h", "60"]) == 2
    assert "usta:" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "ablate-branch" in capsys.readouterr().out
