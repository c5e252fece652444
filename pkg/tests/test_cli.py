import json
import subprocess
import sys

import pytest

from geezocr.cli import load_run, main
from geezocr.data import load_dataset

CHAR_MODEL = ["--conv-channels", "2,4", "--fc-units", "8,8"]
WORD_MODEL = ["--block-channels", "2,3,4,4", "--lstm-hidden", "3", "--lstm-layers", "1"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def char_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("char")
    assert run("synth", "--out", out, "--classes", 3, "--per-class", 2, "--styles", 2) == 0
    return out


@pytest.fixture(scope="module")
def word_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("word")
    assert run("synth", "--out", out, "--kind", "word", "--classes", 4, "--per-class", 8, "--styles", 2, "--vocab", 3) == 0
    return out


def train_char(data, out, *extra):
    return run("train-char", "--data", data, "--out", out, "--epochs", 1, "--batch-size", 4, *CHAR_MODEL, *extra)


def test_synth_writes_a_loadable_dataset(char_data):
    samples = load_dataset(char_data)
    assert len(samples) == 3 * 2
    assert (char_data / "charset.txt").read_text(encoding="utf-8").count("\n") == 3
    assert "seed=42" in (char_data / "config.txt").read_text()


def test_train_char_run_directory(char_data, tmp_path, capsys):
    out = tmp_path / "run"
    assert train_char(char_data, out) == 0
    assert "train accuracy" in capsys.readouterr().out
    for name in ("config.txt", "model.json", "charset.txt", "checkpoint.gzoc", "log.jsonl", "metrics.json"):
        assert (out / name).is_file(), name
    echo = (out / "config.txt").read_text().splitlines()
    assert "seed=42" in echo and "epochs=1" in echo and "conv_channels=2,4" in echo
    assert echo == sorted(echo)
    log = [json.loads(line) for line in (out / "log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1]
    model, _, _, codec = load_run(out)
    assert model.kind == "char" and len(codec) == 3


def test_evaluate_and_predict_char(char_data, tmp_path, capsys):
    out = tmp_path / "run"
    train_char(char_data, out)
    before = (out / "checkpoint.gzoc").read_bytes()
    capsys.readouterr()
    assert run("evaluate", "--run", out, "--data", char_data, "--output", tmp_path / "m.json") == 0
    printed = capsys.readouterr().out
    assert printed == (tmp_path / "m.json").read_text()
    doc = json.loads(printed)
    assert list(doc) == ["cer", "ned", "word_accuracy", "skipped", "confusion"]
    assert len(doc["confusion"]) == 3
    assert (out / "checkpoint.gzoc").read_bytes() == before
    image = sorted(char_data.glob("images/*.pgm"))[0]
    assert run("predict", "--run", out, image) == 0
    path, label = capsys.readouterr().out.rstrip("\n").split("\t")
    assert path == str(image) and len(label) == 1


def test_metrics_are_byte_identical_across_runs(char_data, tmp_path):
    for name in ("a", "b"):
        assert train_char(char_data, tmp_path / name, "--augment", "true") == 0
    for f in ("metrics.json", "checkpoint.gzoc"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert train_char(char_data, tmp_path / "c", "--seed", 7) == 0
    assert (tmp_path / "c" / "checkpoint.gzoc").read_bytes() != (tmp_path / "a" / "checkpoint.gzoc").read_bytes()


def test_config_file_and_flag_precedence(char_data, tmp_path):
    cfg = tmp_path / "settings.txt"
    cfg.write_text("# tiny run\nepochs = 2\nbatch-size=3\nseed=5\n")
    out = tmp_path / "run"
    assert train_char(char_data, out, "--config", cfg, "--seed", 9) == 0
    echo = (out / "config.txt").read_text().splitlines()
    # --epochs 1 on the command line beats the file; batch size comes from the file
    assert "epochs=1" in echo and "batch_size=4" in echo and "seed=9" in echo
    out2 = tmp_path / "run2"
    assert run("train-char", "--config", cfg, "--data", char_data, "--out", out2, *CHAR_MODEL) == 0
    echo = (out2 / "config.txt").read_text().splitlines()
    assert "epochs=2" in echo and "batch_size=3" in echo and "seed=5" in echo


def test_bad_config_key_is_a_usage_error(char_data, tmp_path, capsys):
    cfg = tmp_path / "settings.txt"
    cfg.write_text("learning_speed=3\n")
    assert train_char(char_data, tmp_path / "run", "--config", cfg) == 2
    assert "learning_speed" in capsys.readouterr().err


def test_class_count_mismatch_fails(char_data, tmp_path, capsys):
    assert train_char(char_data, tmp_path / "run", "--num-classes", 5) == 1
    assert "--num-classes 5" in capsys.readouterr().err
    assert not (tmp_path / "run" / "checkpoint.gzoc").exists()


def test_unknown_flag_and_missing_run_fail(char_data, tmp_path, capsys):
    assert run("train-char", "--data", char_data, "--out", tmp_path, "--bogus") != 0
    assert run("evaluate", "--run", tmp_path / "nope", "--data", char_data) == 1
    assert "not a run directory" in capsys.readouterr().err
    assert run("frobnicate") != 0


def test_word_pipeline(word_data, tmp_path, capsys):
    out = tmp_path / "word"
    argv = ["train-word", "--data", word_data, "--out", out, "--epochs", 1, "--batch-size", 4, *WORD_MODEL]
    assert run(*argv) == 0
    assert json.loads((out / "model.json").read_text())["kind"] == "word"
    capsys.readouterr()
    assert run("evaluate", "--run", out, "--data", word_data, "--decoder", "beam", "--beam-width", 3) == 0
    doc = json.loads(capsys.readouterr().out)
    # characters plus the alignment gap
    assert len(doc["confusion"]) == 5 and doc["cer"] >= 0
    image = sorted(word_data.glob("images/*.pgm"))[0]
    assert run("predict", "--run", out, image, "--decoder", "beam") == 0
    assert capsys.readouterr().out.startswith(str(image) + "\t")


def test_meta_train_from_pretrained_run(word_data, tmp_path, capsys):
    init = tmp_path / "init"
    assert run("train-word", "--data", word_data, "--out", init, "--epochs", 1, *WORD_MODEL) == 0
    out = tmp_path / "meta"
    argv = ["meta-train", "--data", word_data, "--out", out, "--init", init,
            "--num-tasks", 2, "--task-size", 4, "--meta-batch", 1, "--epochs", 1]
    assert run(*argv) == 0
    assert "adaptation lowered query CER" in capsys.readouterr().out
    rows = json.loads((out / "adaptation.json").read_text())
    assert len(rows) == 2 and set(rows[0]) == {"style_id", "cer_before", "cer_after"}
    assert len((out / "log.jsonl").read_text().splitlines()) == 1
    bad = argv + ["--task-size", 99]
    assert run(*bad) == 1
    assert "fewer than task_size" in capsys.readouterr().err


def test_module_entry_point_prints_help():
    res = subprocess.run([sys.executable, "-m", "geezocr", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "train-char", "train-word", "meta-train", "evaluate", "predict"):
        assert cmd in res.stdout
