"""End-to-end command tests, run in process through cli.main."""

import csv
import importlib
from pathlib import Path

import numpy as np
import pytest

from tunet.cli import main
from tunet.config import TRAIN_FIELDS, resolve
from tunet.data import load_manifest, load_samples, split
from tunet.losses import f1_scores
from tunet.model import forward, load_checkpoint
from tunet.postprocess import load_thresholds, predict_labels

train_module = importlib.import_module("tunet.train")

FAST_FLAGS = ["--levels", "2", "--base-width", "4", "--max-epochs", "2",
              "--batch-size", "4", "--patience", "10", "--augment", "false",
              "--seed", "0"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def dir_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(Path(path).iterdir())}


def truth_matrix(manifest):
    truth = np.zeros((len(manifest.ids), manifest.n_classes), dtype=np.float32)
    for i, sid in enumerate(manifest.ids):
        for c in manifest.labels[sid]:
            truth[i, c] = 1.0
    return truth


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "set"
    assert main(["synth", "--out", str(path), "--n", "12", "--classes", "2",
                 "--side", "16", "--seed", "0"]) == 0
    return path


@pytest.fixture(scope="module")
def run_dir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--data", str(dataset), "--out", str(out)] + FAST_FLAGS)
    assert code == 0
    return out


class TestSynth:
    def test_writes_tensors_and_csvs(self, dataset):
        names = {p.name for p in dataset.iterdir()}
        assert "labels.csv" in names and "manifest.csv" in names
        assert sum(n.endswith(".tunt") for n in names) == 12
        assert len(read_rows(dataset / "labels.csv")) == 13  # header + N

    def test_same_seed_bit_identical(self, dataset, tmp_path):
        twin = tmp_path / "twin"
        assert main(["synth", "--out", str(twin), "--n", "12", "--classes", "2",
                     "--side", "16", "--seed", "0"]) == 0
        assert dir_bytes(twin) == dir_bytes(dataset)


class TestStats:
    def test_writes_three_reports(self, dataset, tmp_path):
        assert main(["stats", "--data", str(dataset), "--out", str(tmp_path)]) == 0
        freq = read_rows(tmp_path / "freq.csv")
        hist = read_rows(tmp_path / "hist.csv")
        cooc = read_rows(tmp_path / "cooc.csv")
        manifest = load_manifest(dataset)
        for row in freq[1:]:
            c = int(row[0])
            assert int(row[1]) == sum(c in manifest.labels[s] for s in manifest.ids)
        assert sum(int(r[1]) for r in hist[1:]) == 12
        assert len(cooc) == manifest.n_classes  # headerless square matrix

    def test_malformed_labels_exit_2(self, dataset, tmp_path, capsys):
        broken = tmp_path / "broken"
        broken.mkdir()
        for name in ("manifest.csv", "labels.csv"):
            broken.joinpath(name).write_bytes((dataset / name).read_bytes())
        with open(broken / "labels.csv", "a") as fh:
            fh.write("s999999\n")  # one column only
        assert main(["stats", "--data", str(broken)]) == 2
        assert "line" in capsys.readouterr().err


class TestTrain:
    def test_writes_five_files(self, run_dir):
        for name in ("best.tunc", "last.tunc", "trainlog.csv",
                     "thresholds.csv", "metrics.csv"):
            assert (run_dir / name).exists(), name

    def test_metrics_match_recompute(self, dataset, run_dir):
        params, config = load_checkpoint(run_dir / "best.tunc")
        thresholds = load_thresholds(run_dir / "thresholds.csv")
        manifest = load_manifest(dataset)
        by_id = {s.id: s for s in load_samples(dataset, manifest)}
        _, val_ids = split(manifest.ids, 0.1, rng_seed=0)
        images = np.stack([by_id[i].image for i in val_ids])
        out = forward(params, config, images, training=False)
        pred = predict_labels(out.cls_probs.data, thresholds)
        truth = np.stack([
            np.isin(np.arange(manifest.n_classes),
                    list(manifest.labels[i])).astype(np.float32)
            for i in val_ids])
        report = f1_scores(pred, truth)
        macro_row = [r for r in read_rows(run_dir / "metrics.csv")
                     if r[0] == "macro"][0]
        assert float(macro_row[3]) == pytest.approx(report.macro_f1, abs=1e-12)

    def test_rerun_byte_identical_outputs(self, dataset, run_dir, tmp_path):
        out2 = tmp_path / "rerun"
        assert main(["train", "--data", str(dataset), "--out", str(out2)]
                    + FAST_FLAGS) == 0
        for name in ("best.tunc", "best.cfg", "last.tunc",
                     "thresholds.csv", "metrics.csv"):
            assert (out2 / name).read_bytes() == (run_dir / name).read_bytes(), name
        first = [r[:-1] for r in read_rows(run_dir / "trainlog.csv")]
        second = [r[:-1] for r in read_rows(out2 / "trainlog.csv")]
        assert first == second  # identical apart from the wall-time column

    def test_alpha_zero_equals_pure_classification(self, dataset, tmp_path,
                                                   monkeypatch):
        plain = tmp_path / "plain"
        assert main(["train", "--data", str(dataset), "--out", str(plain),
                     "--alpha", "0"] + FAST_FLAGS) == 0
        from tunet.autograd import Tensor
        monkeypatch.setattr(train_module, "dice_loss",
                            lambda *a, **k: Tensor(0.0))
        patched = tmp_path / "patched"
        assert main(["train", "--data", str(dataset), "--out", str(patched),
                     "--alpha", "0"] + FAST_FLAGS) == 0
        cols = [(r[1], r[2]) for r in read_rows(plain / "trainlog.csv")[1:]]
        cols2 = [(r[1], r[2]) for r in read_rows(patched / "trainlog.csv")[1:]]
        assert cols == cols2

    def test_flag_beats_config_file_end_to_end(self, dataset, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# trainer settings\ninitial_lr = 0.005\nmax_epochs = 1\n")
        out = tmp_path / "flagged"
        assert main(["train", "--data", str(dataset), "--out", str(out),
                     "--config", str(cfg), "--initial-lr", "0.01",
                     "--levels", "2", "--base-width", "4", "--batch-size", "4",
                     "--augment", "false"]) == 0
        log = read_rows(out / "trainlog.csv")
        assert len(log) == 2  # max_epochs from file still applies
        assert float(log[1][4]) == pytest.approx(0.01)  # lr from flag, epoch 0 = peak

    def test_config_file_beats_default(self, dataset, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("initial_lr = 0.005\nmax_epochs = 1\nlevels = 2\n"
                       "base_width = 4\nbatch_size = 4\naugment = false\n")
        out = tmp_path / "filed"
        assert main(["train", "--data", str(dataset), "--out", str(out),
                     "--config", str(cfg)]) == 0
        log = read_rows(out / "trainlog.csv")
        assert float(log[1][4]) == pytest.approx(0.005)

    def test_unknown_config_key_exit_1(self, dataset, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("learning_rate_fast = 1\n")
        assert main(["train", "--data", str(dataset), "--out",
                     str(tmp_path / "x"), "--config", str(cfg)]) == 1
        assert "learning_rate_fast" in capsys.readouterr().err

    def test_bad_config_value_exit_1(self, dataset, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("max_epochs = soon\n")
        assert main(["train", "--data", str(dataset), "--out",
                     str(tmp_path / "x"), "--config", str(cfg)]) == 1
        assert "max_epochs" in capsys.readouterr().err

    def test_missing_dataset_exit_2(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nowhere"),
                     "--out", str(tmp_path / "x")] + FAST_FLAGS) == 2


class TestConfigPrecedence:
    @pytest.mark.parametrize("field", TRAIN_FIELDS, ids=lambda f: f.name)
    def test_flag_over_file_over_default(self, field):
        if field.kind is bool:
            file_value, flag_value = (not field.default), field.default
        else:
            file_value = field.kind(field.default + 1)
            flag_value = field.kind(field.default + 2)
        flags_off = {f.name: None for f in TRAIN_FIELDS}

        resolved = resolve(TRAIN_FIELDS, {}, flags_off)
        assert resolved[field.name] == field.default
        resolved = resolve(TRAIN_FIELDS, {field.name: file_value}, flags_off)
        assert resolved[field.name] == file_value
        flags_on = dict(flags_off, **{field.name: flag_value})
        resolved = resolve(TRAIN_FIELDS, {field.name: file_value}, flags_on)
        assert resolved[field.name] == flag_value


class TestLRFind:
    def test_prints_float_and_writes_curve(self, dataset, tmp_path, capsys):
        curve_path = tmp_path / "curve.csv"
        code = main(["lr-find", "--data", str(dataset), "--out", str(curve_path),
                     "--sweep-min", "1e-4", "--sweep-max", "0.5", "--steps", "20",
                     "--levels", "2", "--base-width", "4", "--batch-size", "4",
                     "--augment", "false"])
        assert code == 0
        suggested = float(capsys.readouterr().out.strip())  # single parseable float
        assert 1e-4 <= suggested <= 0.5
        rows = read_rows(curve_path)
        assert rows[0] == ["lr", "smoothed_loss"]
        lrs = [float(r[0]) for r in rows[1:]]
        assert all(a < b for a, b in zip(lrs, lrs[1:]))
        assert all(np.isfinite(float(r[1])) for r in rows[1:])


class TestPredict:
    def test_row_count_and_format(self, dataset, run_dir, tmp_path):
        out = tmp_path / "pred.csv"
        assert main(["predict", "--checkpoint", str(run_dir / "best.tunc"),
                     "--data", str(dataset),
                     "--thresholds", str(run_dir / "thresholds.csv"),
                     "--out", str(out)]) == 0
        rows = read_rows(out)
        manifest = load_manifest(dataset)
        assert rows[0] == ["Id", "Predicted"]
        assert len(rows) == len(manifest.ids) + 1
        assert [r[0] for r in rows[1:]] == manifest.ids
        for r in rows[1:]:
            assert all(tok.isdigit() for tok in r[1].split())  # "" splits to []

    def test_force_argmax_fills_every_row(self, dataset, run_dir, tmp_path):
        out = tmp_path / "pred.csv"
        assert main(["predict", "--checkpoint", str(run_dir / "best.tunc"),
                     "--data", str(dataset),
                     "--thresholds", str(run_dir / "thresholds.csv"),
                     "--out", str(out), "--force-argmax"]) == 0
        for r in read_rows(out)[1:]:
            assert len(r[1].split()) >= 1

    def test_threshold_count_mismatch_exit_2(self, dataset, run_dir, tmp_path,
                                             capsys):
        bad = tmp_path / "thresholds.csv"
        bad.write_text("class,threshold\n0,0.5\n1,0.5\n2,0.5\n")
        assert main(["predict", "--checkpoint", str(run_dir / "best.tunc"),
                     "--data", str(dataset), "--thresholds", str(bad),
                     "--out", str(tmp_path / "p.csv")]) == 2
        err = capsys.readouterr().err
        assert "3" in err and "2" in err

    def test_incompatible_dataset_exit_2(self, run_dir, tmp_path, capsys):
        other = tmp_path / "other"
        assert main(["synth", "--out", str(other), "--n", "6", "--classes", "3",
                     "--side", "16", "--seed", "1"]) == 0
        assert main(["predict", "--checkpoint", str(run_dir / "best.tunc"),
                     "--data", str(other),
                     "--thresholds", str(run_dir / "thresholds.csv"),
                     "--out", str(tmp_path / "p.csv")]) == 2
        err = capsys.readouterr().err
        assert "2" in err and "3" in err  # names both class counts


class TestEval:
    @pytest.fixture(scope="class")
    @staticmethod
    def report_dir(dataset, run_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("report")
        code = main(["eval", "--checkpoint", str(run_dir / "best.tunc"),
                     "--data", str(dataset),
                     "--thresholds", str(run_dir / "thresholds.csv"),
                     "--out", str(out)])
        assert code == 0
        return out

    def test_dice_report_in_unit_interval(self, report_dir, dataset):
        rows = read_rows(report_dir / "dice.csv")
        manifest = load_manifest(dataset)
        assert rows[0] == ["class", "dice"]
        assert len(rows) == manifest.n_classes + 2  # header + classes + mean
        assert rows[-1][0] == "mean"
        for r in rows[1:]:
            assert 0.0 <= float(r[1]) <= 1.0

    def test_metrics_match_predict_output(self, dataset, run_dir, report_dir,
                                          tmp_path):
        pred_csv = tmp_path / "pred.csv"
        assert main(["predict", "--checkpoint", str(run_dir / "best.tunc"),
                     "--data", str(dataset),
                     "--thresholds", str(run_dir / "thresholds.csv"),
                     "--out", str(pred_csv)]) == 0
        manifest = load_manifest(dataset)
        pred = np.zeros((len(manifest.ids), manifest.n_classes), dtype=np.float32)
        for i, row in enumerate(read_rows(pred_csv)[1:]):
            for tok in row[1].split():
                pred[i, int(tok)] = 1.0
        report = f1_scores(pred, truth_matrix(manifest))
        macro_row = [r for r in read_rows(report_dir / "metrics.csv")
                     if r[0] == "macro"][0]
        assert float(macro_row[3]) == pytest.approx(report.macro_f1, abs=1e-12)

    def test_ground_truth_predictions_score_one(self, dataset):
        truth = truth_matrix(load_manifest(dataset))
        assert f1_scores(truth, truth).macro_f1 == pytest.approx(1.0)


class TestUsageErrors:
    def test_no_subcommand_exits_1(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 1

    def test_unknown_flag_exits_1(self):
        with pytest.raises(SystemExit) as err:
            main(["synth", "--out", "x", "--n", "1", "--frobnicate"])
        assert err.value.code == 1

    def test_bad_flag_value_exits_1(self):
        with pytest.raises(SystemExit) as err:
            main(["train", "--data", "x", "--out", "y", "--max-epochs", "soon"])
        assert err.value.code == 1

    def test_bad_bool_flag_value_exits_1(self):
        with pytest.raises(SystemExit) as err:
            main(["train", "--data", "x", "--out", "y", "--augment", "maybe"])
        assert err.value.code == 1
