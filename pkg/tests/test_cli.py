import numpy as np
import pytest

from arfc import cli, gmea
from arfc.data import load_pgm, read_manifest
from arfc.metrics import EvalReport
from arfc.tensorio import load_tensor


@pytest.fixture
def dataset(tmp_path):
    assert cli.main(["--workdir", str(tmp_path), "gen-data", "--out", "data", "--count", "4", "--test-count", "1",
                     "--size", "64", "--seed", "1"]) == 0
    return tmp_path


@pytest.fixture
def trained(dataset):
    (dataset / "run.cfg").write_text("stage_channels = 4, 8, 12, 16, 20\nbatch_size = 3\nseed = 3\n")
    code = cli.main(["--workdir", str(dataset), "train", "--data", "data", "--config", "run.cfg",
                     "--out", "run", "--epochs", "2"])
    assert code == 0
    return dataset


def test_gen_data_layout(dataset):
    root = dataset / "data"
    assert [s for _, s in read_manifest(root)] == ["train", "train", "train", "test"]
    assert load_pgm(root / "images" / "000.pgm").shape == (64, 64)


def test_eval_of_ground_truth_is_perfect(dataset, capsys):
    code = cli.main(["--workdir", str(dataset), "eval", "--predictions", "data/masks", "--data", "data",
                     "--split", "train", "--out", "report.csv"])
    assert code == 0
    report = EvalReport.from_csv((dataset / "report.csv").read_text())
    assert (report.iou, report.pd, report.fa_e6) == (1.0, 1.0, 0.0)
    assert "iou" in capsys.readouterr().out


def test_train_infer_eval_roc(trained):
    w = str(trained)
    assert (trained / "run" / "loss.csv").read_text().count("\n") == 3
    assert cli.main(["--workdir", w, "infer", "--checkpoint", "run/checkpoint", "--image", "data/images/003.pgm",
                     "--saliency-out", "sal.arfc", "--mask-out", "mask.pgm"]) == 0
    sal = load_tensor(trained / "sal.arfc")
    assert sal.shape == (1, 1, 64, 64) and 0 <= sal.min() and sal.max() <= 1
    np.testing.assert_array_equal(load_pgm(trained / "mask.pgm") > 0, sal[0, 0] > 0.5)
    assert cli.main(["--workdir", w, "eval", "--checkpoint", "run/checkpoint", "--data", "data",
                     "--out", "r.csv"]) == 0
    assert cli.main(["--workdir", w, "roc", "--checkpoint", "run/checkpoint", "--data", "data",
                     "--steps", "3", "--out", "roc.csv"]) == 0
    rows = (trained / "roc.csv").read_text().splitlines()
    assert len(rows) == 1 + 5
    assert rows[1] == "1.0,0.0,0.0" and rows[-1] == "0.0,1.0,1.0"


@pytest.mark.parametrize("argv,code", [
    ([], 1),
    (["train", "--data", "x"], 1),
    (["gen-data", "--out", "d", "--count", "3", "--test-count", "9"], 1),
    (["eval", "--predictions", "p", "--data", "missing", "--out", "r.csv"], 2),
    (["infer", "--checkpoint", "nowhere", "--image", "x.pgm", "--saliency-out", "s", "--mask-out", "m"], 2),
])
def test_exit_codes(tmp_path, argv, code):
    assert cli.main(["--workdir", str(tmp_path)] + argv) == code


def test_unknown_config_key_is_a_usage_error(dataset, capsys):
    (dataset / "bad.cfg").write_text("learning_rat = 0.1\n")
    assert cli.main(["--workdir", str(dataset), "train", "--data", "data", "--config", "bad.cfg",
                     "--out", "run"]) == 1
    assert "learning_rat" in capsys.readouterr().err


def test_corrupt_image_is_a_data_error(dataset):
    (dataset / "data" / "images" / "003.pgm").write_bytes(b"P2\n")
    assert cli.main(["--workdir", str(dataset), "eval", "--predictions", "data/images", "--data", "data",
                     "--out", "r.csv"]) == 2


def test_thread_limit_must_be_positive(tmp_path, monkeypatch):
    monkeypatch.setenv("ARFC_THREADS", "0")
    assert cli.main(["--workdir", str(tmp_path), "selftest"]) == 1


def test_selftest_passes_and_catches_a_mutation(monkeypatch, capsys):
    assert cli.main(["selftest"]) == 0
    monkeypatch.setattr(gmea, "shuffle_permutation", lambda c, g: list(range(c)))
    assert cli.main(["selftest"]) == 3
    assert "channel_shuffle" in capsys.readouterr().out


def test_gradcheck_subset():
    assert cli.main(["gradcheck", "--only", "conv2d", "soft_iou_loss"]) == 0
