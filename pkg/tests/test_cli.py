import json
import sys

import numpy as np
import pytest

from sketch2statue.cli import build_parser, main
from sketch2statue.geometry import OrthoCamera, icosphere, rasterize
from sketch2statue.sketch import load_gray, save_gray

COMMANDS = ["gen-data", "sketchify", "train", "eval", "infer", "reconstruct"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def files_under(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = root / "ds"
    assert main(["gen-data", "--out", str(ds), "--placeholders", "3", "--views", "4",
                 "--resolution", "16", "--subdivisions", "1", "--workers", "1"]) == 0
    cfg = root / "train.json"
    cfg.write_text(json.dumps({
        "schema_version": 1,
        "train": {"profile": "desk", "batch_size": 4, "warmup_samples": 4, "max_steps": 4,
                  "checkpoint_every": 2,
                  "net": {"latent_dim": 16, "base_channels": 4, "max_channels": 8}}}))
    assert main(["train", "--dataset", str(ds), "--out", str(root / "run"), "--config", str(cfg),
                 "--train-statues", "0,1", "--test-statues", "2", "--seed", "3"]) == 0
    return root, ds, cfg, root / "run" / "checkpoints" / "step_0000004.pt"


def test_gen_data_counts_and_idempotence(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--out", tmp_path, "--placeholders", 2, "--views", 8,
                       "--resolution", 16, "--subdivisions", 0, "--workers", 1)
    assert code == 0
    views = [p for p in tmp_path.glob("statue_*/view_*")]
    assert len(views) == 16 and all(len(list(v.iterdir())) == 5 for v in views)
    assert json.loads(out)["samples"] == 16
    code, out, _ = run(capsys, "gen-data", "--out", tmp_path, "--placeholders", 2, "--views", 8,
                       "--resolution", 16, "--subdivisions", 0, "--workers", 1)
    assert code == 0 and json.loads(out)["files_written"] == 0


def test_gen_data_config_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schema_version": 1, "gen_data": {
        "meshes": ["placeholder:0"], "views": 3, "resolution": 16,
        "placeholder_subdivisions": 0, "out": str(tmp_path / "a")}}))
    assert run(capsys, "gen-data", "--config", cfg, "--views", 2, "--workers", 1)[0] == 0
    meta = json.loads((tmp_path / "a" / "metadata.json").read_text())
    assert meta["views"] == 2 and meta["resolution"] == 16


def test_gen_data_byte_identical(tmp_path, capsys):
    args = ["--placeholders", 2, "--views", 2, "--resolution", 16, "--subdivisions", 0,
            "--workers", 1, "--seed", 4]
    run(capsys, "gen-data", "--out", tmp_path / "a", *args)
    run(capsys, "gen-data", "--out", tmp_path / "b", *args)
    names = files_under(tmp_path / "a")
    assert names == files_under(tmp_path / "b")
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_gen_data_missing_mesh(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--out", tmp_path / "o", "--mesh", tmp_path / "x.obj",
                       "--mesh", tmp_path / "y.ply")
    assert code == 3
    msg = json.loads(err)
    assert msg["error"] == "DataError" and "x.obj" in msg["message"] and "y.ply" in msg["message"]


def test_sketchify_rendered_sphere(tmp_path, capsys):
    s = rasterize(icosphere(3), OrthoCamera(resolution=64))
    save_gray(s.gray, tmp_path / "sphere.png")
    code, out, _ = run(capsys, "sketchify", "--input", tmp_path / "sphere.png",
                       "--output", tmp_path / "sk.png", "--method", "canny")
    assert code == 0 and json.loads(out)["blank"] is False
    assert (load_gray(tmp_path / "sk.png") < 1).any()


def test_sketchify_bad_parameter(tmp_path, capsys):
    save_gray(np.ones((8, 8)), tmp_path / "w.png")
    code, _, err = run(capsys, "sketchify", "--input", tmp_path / "w.png", "--output",
                       tmp_path / "o.png", "--method", "laplacian", "--low", 0.1)
    assert code == 2 and "InvalidInputError" in err


def test_sketchify_external_failure(tmp_path, capsys):
    save_gray(np.ones((8, 8)), tmp_path / "w.png")
    cmd = f"{sys.executable} -c 'import sys; sys.exit(5)' {{in}} {{out}}"
    code, _, err = run(capsys, "sketchify", "--input", tmp_path / "w.png", "--output",
                       tmp_path / "o.png", "--external", cmd)
    assert code == 4 and json.loads(err)["error"] == "ExternalToolError"


def test_train_log_identical(trained, tmp_path):
    root, ds, cfg, _ = trained
    assert main(["train", "--dataset", str(ds), "--out", str(tmp_path), "--config", str(cfg),
                 "--train-statues", "0,1", "--test-statues", "2", "--seed", "3"]) == 0
    assert (tmp_path / "metrics.jsonl").read_bytes() == (root / "run" / "metrics.jsonl").read_bytes()


def test_eval_held_out_and_refusal(trained, tmp_path, capsys):
    _, ds, _, ck = trained
    code, out, _ = run(capsys, "eval", "--checkpoint", ck, "--dataset", ds, "--out",
                       tmp_path / "m.json")
    assert code == 0 and json.loads(out)["statues"] == [2]
    assert json.loads((tmp_path / "m.json").read_text())["statues"] == [2]
    code, _, err = run(capsys, "eval", "--checkpoint", ck, "--dataset", ds, "--statues", "0")
    assert code == 2 and json.loads(err)["error"] == "DisjointnessError"
    assert run(capsys, "eval", "--checkpoint", ck, "--dataset", ds, "--statues", "0",
               "--allow-train")[0] == 0


def test_infer_blank_sketch(trained, tmp_path, capsys):
    _, _, _, ck = trained
    save_gray(np.ones((20, 30)), tmp_path / "blank.png")
    code, out, _ = run(capsys, "infer", "--checkpoint", ck, "--sketch", tmp_path / "blank.png",
                       "--out", tmp_path / "o", "--panel")
    assert code == 0
    for f in json.loads(out)["files"]:
        assert (tmp_path / "o" / f).is_file()


def test_reconstruct_writes_ply(trained, tmp_path, capsys):
    _, ds, _, ck = trained
    code, out, _ = run(capsys, "reconstruct", "--checkpoint", ck, "--sketch",
                       ds / "statue_2" / "view_0" / "sketch.png", "--out", tmp_path / "c.ply",
                       "--threshold", 0.0, "--panel", tmp_path / "p.png")
    res = json.loads(out)
    assert code == 0 and res["points"] == 16 * 16 and (tmp_path / "c.ply").is_file()
    assert (tmp_path / "p.png").is_file()


def test_reconstruct_empty_mask_status(trained, tmp_path, capsys):
    _, ds, _, ck = trained
    with pytest.warns(RuntimeWarning):
        code, out, _ = run(capsys, "reconstruct", "--checkpoint", ck, "--sketch",
                           ds / "statue_2" / "view_0" / "sketch.png", "--out",
                           tmp_path / "c.ply", "--threshold", 1.0)
    assert code == 0 and json.loads(out)["status"] == "empty_mask"
    assert not (tmp_path / "c.ply").exists()


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schema_version": 7}))
    code, _, err = run(capsys, "gen-data", "--config", cfg, "--out", tmp_path)
    assert code == 2 and "schema_version" in err
    cfg.write_text(json.dumps({"schema_version": 1, "train": {"net": {"widht": 3}}}))
    code, _, err = run(capsys, "gen-data", "--config", cfg, "--out", tmp_path)
    assert code == 2 and "widht" in err


def test_missing_checkpoint_is_data_error(tmp_path, capsys):
    save_gray(np.ones((8, 8)), tmp_path / "w.png")
    code, _, err = run(capsys, "infer", "--checkpoint", tmp_path / "none.pt", "--sketch",
                       tmp_path / "w.png", "--out", tmp_path / "o")
    assert code == 3 and json.loads(err)["error"] == "CheckpointError"


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["train"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["no-such-command"])
    assert e.value.code == 2


@pytest.mark.parametrize("command", COMMANDS)
def test_help_lists_every_flag(command, capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command").choices[command]
    with pytest.raises(SystemExit):
        main([command, "--help"])
    text = capsys.readouterr().out
    flags = [s for a in sub._actions for s in a.option_strings]
    assert "--seed" in flags and "--config" in flags
    for flag in flags:
        assert flag in text
    for a in sub._actions:
        assert a.help, f"{command} {a.option_strings} has no help text"
