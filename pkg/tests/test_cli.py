import csv

import pytest

from graspfield.cli import RUN_MANIFEST_MAGIC, build_parser, main
from graspfield.datagen import gen_scene, load_scene_record
from graspfield.io_formats import load_ply, save_scene


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def tiny_dataset(workdir):
    out = workdir / "data"
    code = main(["gen-data", "--out", str(out), "--n-scenes", "1",
                 "--workers", "1", "--max-grasps-per-class", "2"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def tiny_model(workdir, tiny_dataset):
    out = workdir / "run"
    code = main(["train", "--dataset", str(tiny_dataset), "--out", str(out),
                 "--epochs", "1", "--occ-batch", "128"])
    assert code == 0
    return out / "model.ckpt"


def _manifest(out_dir):
    lines = (out_dir / "run-manifest.txt").read_text().splitlines()
    assert lines[0] == RUN_MANIFEST_MAGIC
    pairs = {}
    for line in lines[1:]:
        key, _, value = line.partition(" = ")
        pairs[key] = value
    return pairs


def test_gen_data_outputs(tiny_dataset):
    assert (tiny_dataset / "manifest.txt").exists()
    record = load_scene_record(tiny_dataset / "scene_00000.bin")
    assert len(record.occ_points) > 0
    pairs = _manifest(tiny_dataset)
    assert pairs["command"] == "gen-data"
    assert pairs["n_scenes"] == "1"            # flag value echoed back
    assert pairs["scene_kind"] == "packed"     # default echoed back


def test_train_outputs(tiny_model):
    run_dir = tiny_model.parent
    assert tiny_model.exists()
    with open(run_dir / "loss.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert float(rows[0]["loss_total"]) > 0.0
    pairs = _manifest(run_dir)
    assert pairs["command"] == "train"
    assert pairs["dataset_scenes"] == "1"


def test_detect_from_record(workdir, tiny_dataset, tiny_model):
    out = workdir / "det"
    code = main(["detect", "--checkpoint", str(tiny_model),
                 "--record", str(tiny_dataset / "scene_00000.bin"),
                 "--out", str(out), "--local-image-size", "16",
                 "--budget-points", "30", "--max-grasps", "5"])
    assert code == 0
    with open(out / "candidates.csv", newline="") as fh:
        header = fh.readline().strip().split(",")
    assert header[-2:] == ["width", "quality"]
    cloud = load_ply(str(out / "cloud.ply"))
    assert cloud.points.shape[1] == 3
    pairs = _manifest(out)
    assert pairs["command"] == "detect"
    assert int(pairs["n_candidates"]) >= 0


def test_detect_from_scene_file(workdir, tiny_model):
    scene_path = workdir / "scene.txt"
    save_scene(str(scene_path), gen_scene(3, 0, "packed"))
    out = workdir / "det_scene"
    code = main(["detect", "--checkpoint", str(tiny_model),
                 "--scene", str(scene_path), "--out", str(out),
                 "--local-image-size", "16", "--budget-points", "30",
                 "--max-grasps", "5"])
    assert code == 0
    assert (out / "candidates.csv").exists()


def test_evaluate_oracle(workdir, capsys):
    out = workdir / "eval"
    code = main(["evaluate", "--oracle", "--out", str(out),
                 "--eval-seeds", "7", "--eval-rounds", "1"])
    assert code == 0
    with open(out / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert float(rows[0]["gsr_mean"]) == 100.0
    assert float(rows[0]["dr_mean"]) == 100.0
    with open(out / "rounds.csv", newline="") as fh:
        attempts = list(csv.DictReader(fh))
    assert all(a["success"] == "1" for a in attempts)
    assert _manifest(out)["detector"] == "oracle"
    assert "GSR 100.00" in capsys.readouterr().out


def test_config_file_and_flag_precedence(workdir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_scenes = 5\nseed = 21\n")
    out = workdir / "prec"
    code = main(["gen-data", "--out", str(out), "--config", str(cfg),
                 "--n-scenes", "1", "--workers", "1",
                 "--max-grasps-per-class", "2"])
    assert code == 0
    pairs = _manifest(out)
    assert pairs["n_scenes"] == "1"   # flag beats file
    assert pairs["seed"] == "21"      # file beats default


def test_exit_code_2_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("mystery_key = 1\n")
    assert main(["gen-data", "--out", str(tmp_path / "x"),
                 "--config", str(bad)]) == 2
    assert main(["gen-data", "--out", str(tmp_path / "x"),
                 "--n-scenes", "lots"]) == 2
    assert main(["gen-data", "--out", str(tmp_path / "x"),
                 "--scene-kind", "mystery"]) == 2
    assert main(["evaluate", "--out", str(tmp_path / "x")]) == 2
    assert "config error" in capsys.readouterr().err


def test_exit_code_3_io_errors(tmp_path, capsys):
    assert main(["train", "--dataset", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "x")]) == 3
    assert main(["detect", "--checkpoint", str(tmp_path / "no.ckpt"),
                 "--scene", str(tmp_path / "no.txt"),
                 "--out", str(tmp_path / "x")]) == 3
    assert "i/o error" in capsys.readouterr().err


def test_exit_code_4_contract_errors(tmp_path, tiny_dataset, tiny_model, capsys):
    # RunConfig allows any >= 1 image size; the detector requires >= 8
    assert main(["detect", "--checkpoint", str(tiny_model),
                 "--record", str(tiny_dataset / "scene_00000.bin"),
                 "--out", str(tmp_path / "x"),
                 "--local-image-size", "4"]) == 4
    assert "contract violation" in capsys.readouterr().err


def test_argparse_rejects_unknown_subcommand():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_detect_requires_one_input_source(tiny_model, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["detect", "--checkpoint", str(tiny_model),
              "--out", str(tmp_path / "x")])
    assert info.value.code == 2


def test_every_config_key_has_a_flag():
    parser = build_parser()
    helps = {}
    for action in parser._subparsers._group_actions[0].choices.values():
        helps[action.prog] = action.format_help()
    from graspfield.config import describe_keys
    for key, _, _ in describe_keys():
        flag = "--" + key.replace("_", "-")
        for text in helps.values():
            assert flag in text
