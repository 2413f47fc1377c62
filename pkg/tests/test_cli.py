import csv
import json

import pytest

from clutterqa.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(d / "ds"), "--n-series", "6", "--split", "4,1,1",
                 "--difficulty", "easy", "--questions-per-type", "3"]) == 0
    assert main(["demo", "--data", str(d / "ds"), "--out", str(d / "demos.jsonl"), "--limit", "12"]) == 0
    return d


def test_gen_and_demo_outputs(workdir):
    manifest = json.loads((workdir / "ds" / "manifest.json").read_text())
    assert manifest["split_sizes"] == {"train": 4, "eval": 1, "test": 1}
    lines = (workdir / "demos.jsonl").read_text().splitlines()
    assert len({json.loads(l)["demo"] for l in lines}) == 12


def test_train_eval_ablate_render(workdir):
    d = workdir
    assert main(["train", "--data", str(d / "ds"), "--demos", str(d / "demos.jsonl"), "--out", str(d / "m"),
                 "--epochs", "3", "--hidden", "8"]) == 0
    rows = list(csv.reader(open(d / "m" / "loss.csv")))
    assert rows[0] == ["epoch", "total", "loss_x", "loss_y", "loss_o"] and len(rows) == 4
    assert (d / "m" / "loss.png").exists()

    assert main(["eval", "--data", str(d / "ds"), "--out", str(d / "ev"), "--policy", "learned",
                 "--checkpoint", str(d / "m" / "checkpoint.json"), "--max-steps", "2"]) == 0
    rows = list(csv.DictReader(open(d / "ev" / "metrics.csv")))
    assert [r["qtype"] for r in rows][:3] == ["EXISTENCE", "COUNTING", "SPATIAL"]
    assert len((d / "ev" / "episodes.jsonl").read_text().splitlines()) == 9

    assert main(["ablate", "--data", str(d / "ds"), "--out", str(d / "ab"), "--steps", "0,2"]) == 0
    assert [r[0] for r in csv.reader(open(d / "ab" / "ablation.csv"))] == ["max_steps", "0", "2"]
    assert main(["render", "--data", str(d / "ds"), "--out", str(d / "fr"), "--series", "0",
                 "--question", "1"]) == 0
    assert sorted(p.name for p in (d / "fr").iterdir())[0] == "frame_00.svg"


def test_config_file_and_flag_precedence(workdir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gen": {"n_series": 3, "split": [1, 1, 1], "questions_per_type": 2,
                                       "seed": 9}}))
    assert main(["--config", str(cfg), "gen", "--out", str(tmp_path / "a"), "--seed", "4"]) == 0
    conf = json.loads((tmp_path / "a" / "manifest.json").read_text())["config"]
    assert (conf["n_series"], conf["seed"], conf["questions_per_type"]) == (3, 4, 2)


@pytest.mark.parametrize("argv", [
    ["eval", "--data", "/nonexistent", "--out", "x"],
    ["eval", "--data", "{ds}", "--out", "{tmp}/e", "--policy", "learned"],
    ["eval", "--data", "{ds}", "--out", "{tmp}/e", "--policy", "learned", "--checkpoint", "{tmp}/none.json"],
    ["train", "--data", "{ds}", "--demos", "{tmp}/missing.jsonl", "--out", "{tmp}/m"],
    ["render", "--data", "{ds}", "--out", "{tmp}/r", "--series", "99"],
    ["gen", "--out", "{tmp}/g", "--n-series", "5", "--split", "4,1,1"],
    ["--config", "{tmp}/absent.json", "gen", "--out", "{tmp}/g"],
])
def test_failed_preconditions_exit_nonzero(workdir, tmp_path, argv, capsys):
    argv = [a.format(ds=workdir / "ds", tmp=tmp_path) for a in argv]
    assert main(argv) != 0
    assert "error" in capsys.readouterr().err


def test_bad_config_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"gen": {"colour": 1}}')
    assert main(["--config", str(cfg), "gen", "--out", str(tmp_path / "g")]) == 2
    cfg.write_text("not json")
    assert main(["--config", str(cfg), "gen", "--out", str(tmp_path / "g")]) == 2
