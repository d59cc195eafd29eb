"""End-to-end tests for the command-line interface."""

from __future__ import annotations

import pytest

from seqcls.cli import (
    EXIT_CONFIG,
    EXIT_GRADCHECK,
    EXIT_IO,
    EXIT_OK,
    main,
    make_train_config,
    parse_config_file,
)
from seqcls.data import read_labels, read_mmf
from seqcls.errors import ConfigError
from seqcls.fusion import read_scores

SMALL_GEN = ["--classes", "3", "--videos-per-class", "5", "--frames", "6",
             "--signal-frames", "2", "--modalities", "m:4", "--seed", "7"]
SMALL_TRAIN = ["--epochs", "2", "--batch-size", "4", "--lr", "0.05",
               "--satt-heads", "2", "--quiet"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Generated dataset plus one trained model, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data, run = root / "data", root / "run"
    assert main(["synthgen", "--out", str(data)] + SMALL_GEN) == EXIT_OK
    assert main(["train", "--train", str(data / "train.mmf"), "--val", str(data / "val.mmf"),
                 "--out", str(run)] + SMALL_TRAIN) == EXIT_OK
    return {"root": root, "data": data, "run": run}


class TestSynthgen:
    def test_writes_all_four_files(self, workspace, capsys):
        data = workspace["data"]
        for name in ("train.mmf", "val.mmf", "train_labels.csv", "val_labels.csv"):
            assert (data / name).exists(), name
        assert len(read_mmf(data / "train.mmf")) == 12
        assert len(read_mmf(data / "val.mmf")) == 3
        labels = read_labels(data / "val_labels.csv")
        assert set(labels.values()) == {0, 1, 2}

    def test_defaults_announce_counts(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert main(["synthgen", "--out", str(out)] + SMALL_GEN) == EXIT_OK
        assert "12 train and 3 val" in capsys.readouterr().out

    def test_bad_modality_spec_exits_config(self, tmp_path, capsys):
        code = main(["synthgen", "--out", str(tmp_path / "x"), "--modalities", "rgb16"])
        assert code == EXIT_CONFIG
        assert "error:" in capsys.readouterr().err


class TestTrainCommand:
    def test_writes_checkpoint_metrics_scores(self, workspace):
        run = workspace["run"]
        for name in ("checkpoint.ckpt", "metrics.txt", "scores.csv"):
            assert (run / name).exists(), name
        text = (run / "metrics.txt").read_text()
        assert text.startswith("model=satt\nclasses=3\nepochs=2\n")
        assert "wall" not in text
        table = read_scores(run / "scores.csv")
        assert len(table.rows) == 3

    def test_progress_and_summary_lines(self, workspace, tmp_path, capsys):
        data = workspace["data"]
        args = ["train", "--train", str(data / "train.mmf"), "--val", str(data / "val.mmf"),
                "--out", str(tmp_path / "run"), "--epochs", "1", "--batch-size", "4",
                "--satt-heads", "2"]
        assert main(args) == EXIT_OK
        out = capsys.readouterr().out
        assert "epoch 0:" in out
        assert "best epoch" in out

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        """Identical flags reproduce metrics and scores down to the byte."""
        data, run = workspace["data"], workspace["run"]
        again = tmp_path / "again"
        args = ["train", "--train", str(data / "train.mmf"), "--val", str(data / "val.mmf"),
                "--out", str(again)] + SMALL_TRAIN
        assert main(args) == EXIT_OK
        for name in ("metrics.txt", "scores.csv", "checkpoint.ckpt"):
            assert (again / name).read_bytes() == (run / name).read_bytes(), name

    def test_missing_train_file_exits_io(self, workspace, tmp_path, capsys):
        data = workspace["data"]
        code = main(["train", "--train", str(tmp_path / "absent.mmf"),
                     "--val", str(data / "val.mmf"), "--out", str(tmp_path / "r"), "--quiet"])
        assert code == EXIT_IO

    def test_bad_flag_value_exits_config(self, workspace, tmp_path):
        data = workspace["data"]
        code = main(["train", "--train", str(data / "train.mmf"),
                     "--val", str(data / "val.mmf"), "--out", str(tmp_path / "r"),
                     "--lr", "fast", "--quiet"])
        assert code == EXIT_CONFIG


class TestConfigFile:
    def test_file_overrides_defaults_and_flags_override_file(self, tmp_path):
        cfg_path = tmp_path / "train.cfg"
        cfg_path.write_text("# comment\nlr = 0.5\nepochs = 7  # trailing comment\n")
        values = parse_config_file(cfg_path)
        assert values == {"lr": "0.5", "epochs": "7"}
        cfg = make_train_config(values, {"lr": "0.25"})
        assert cfg.lr == 0.25  # flag wins
        assert cfg.epochs == 7  # file wins over default
        assert cfg.batch_size == 16  # default survives

    def test_unknown_key_names_file_and_line(self, tmp_path):
        cfg_path = tmp_path / "train.cfg"
        cfg_path.write_text("lr = 0.1\nwarmup = 5\n")
        with pytest.raises(ConfigError, match=r"train.cfg:2"):
            parse_config_file(cfg_path)

    def test_malformed_line_rejected(self, tmp_path):
        cfg_path = tmp_path / "train.cfg"
        cfg_path.write_text("just words\n")
        with pytest.raises(ConfigError):
            parse_config_file(cfg_path)

    def test_type_coercion_failure_rejected(self):
        with pytest.raises(ConfigError):
            make_train_config({"epochs": "many"}, {})

    def test_config_file_drives_training(self, workspace, tmp_path, capsys):
        data = workspace["data"]
        cfg_path = tmp_path / "train.cfg"
        cfg_path.write_text("epochs = 1\nbatch_size = 4\nsatt_heads = 2\n")
        code = main(["train", "--train", str(data / "train.mmf"),
                     "--val", str(data / "val.mmf"), "--out", str(tmp_path / "run"),
                     "--config", str(cfg_path), "--quiet"])
        assert code == EXIT_OK
        assert "epochs=1" in (tmp_path / "run" / "metrics.txt").read_text()


class TestEvalCommand:
    def test_scores_match_training_output(self, workspace, tmp_path, capsys):
        data, run = workspace["data"], workspace["run"]
        out = tmp_path / "eval_scores.csv"
        code = main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"),
                     "--data", str(data / "val.mmf"), "--out", str(out)])
        assert code == EXIT_OK
        assert "top1=" in capsys.readouterr().out
        assert out.read_bytes() == (run / "scores.csv").read_bytes()

    def test_threaded_eval_is_byte_identical(self, workspace, tmp_path):
        data, run = workspace["data"], workspace["run"]
        single, pooled = tmp_path / "t1.csv", tmp_path / "t4.csv"
        base = ["eval", "--checkpoint", str(run / "checkpoint.ckpt"),
                "--data", str(data / "val.mmf")]
        assert main(base + ["--out", str(single), "--threads", "1"]) == EXIT_OK
        assert main(base + ["--out", str(pooled), "--threads", "4"]) == EXIT_OK
        assert single.read_bytes() == pooled.read_bytes()

    def test_missing_checkpoint_exits_io(self, workspace, tmp_path):
        data = workspace["data"]
        code = main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                     "--data", str(data / "val.mmf")])
        assert code == EXIT_IO

    def test_bad_thread_count_exits_config(self, workspace):
        data, run = workspace["data"], workspace["run"]
        code = main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"),
                     "--data", str(data / "val.mmf"), "--threads", "0"])
        assert code == EXIT_CONFIG


class TestFuseCommand:
    def test_self_fusion_reproduces_the_file(self, workspace, tmp_path, capsys):
        """Uniformly fusing a table with itself writes identical bytes."""
        run = workspace["run"]
        out = tmp_path / "fused.csv"
        scores = str(run / "scores.csv")
        code = main(["fuse", "--scores", scores, scores, "--out", str(out)])
        assert code == EXIT_OK
        assert out.read_bytes() == (run / "scores.csv").read_bytes()

    def test_weighted_fusion_with_labels_reports_accuracy(self, workspace, tmp_path, capsys):
        data, run = workspace["data"], workspace["run"]
        out = tmp_path / "fused.csv"
        scores = str(run / "scores.csv")
        code = main(["fuse", "--scores", scores, scores, "--weights", "0.7,0.3",
                     "--out", str(out), "--labels", str(data / "val_labels.csv")])
        assert code == EXIT_OK
        assert "top1=" in capsys.readouterr().out

    def test_bad_weights_exit_config(self, workspace, tmp_path):
        scores = str(workspace["run"] / "scores.csv")
        out = str(tmp_path / "f.csv")
        assert main(["fuse", "--scores", scores, scores, "--weights", "a,b",
                     "--out", out]) == EXIT_CONFIG
        assert main(["fuse", "--scores", scores, scores, "--weights", "0.9,0.9",
                     "--out", out]) == EXIT_CONFIG

    def test_unreadable_scores_exit_io(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("no header\n")
        assert main(["fuse", "--scores", str(bad), "--out",
                     str(tmp_path / "f.csv")]) == EXIT_IO


class TestGradcheckCommand:
    def test_single_case_passes(self, capsys):
        assert main(["gradcheck", "--op", "softmax_sharp", "--seeds", "0,1"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "softmax_sharp" in out
        assert "2/2 case-runs passed" in out

    def test_unknown_case_exits_config(self, capsys):
        assert main(["gradcheck", "--op", "not_an_op"]) == EXIT_CONFIG

    def test_impossible_tolerance_exits_gradcheck(self, capsys):
        """A zero tolerance cannot be met, so the command signals failure."""
        code = main(["gradcheck", "--op", "mul", "--seeds", "0", "--tol", "0"])
        assert code == EXIT_GRADCHECK


class TestArgparse:
    def test_no_arguments_is_usage_error(self, capsys):
        assert main([]) == 2

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 2
