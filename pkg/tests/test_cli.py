import json

import numpy as np
import pytest

from handgm import io
from handgm.cli import main
from handgm.pool import init_uniform_pool


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def record(out):
    return json.loads(out.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def clean_run(tmp_path_factory):
    """Full pipeline on 50 clean samples, shared by several tests."""
    root = tmp_path_factory.mktemp("clean")
    (root / "synth.cfg").write_text("n_samples = 50\np_drop = 0\np_distract = 0\nsigma_jit = 0\nseed = 3\n")
    steps = [
        ["synth", "--config", root / "synth.cfg", "--out", root / "data"],
        ["cluster", "--data", root / "data", "--clusters", 4, "--out", root / "km.gmkm"],
        ["init", "--data", root / "data", "--clusters", root / "km.gmkm", "--radius", 12, "--out", root / "pool.gmpk"],
        ["train", "--data", root / "data", "--pool", root / "pool.gmpk", "--clusters", root / "km.gmkm",
         "--lr", "1e-4", "--epochs", 1, "--out", root / "trained.gmpk", "--loss-history", root / "loss.csv"],
        ["infer", "--data", root / "data", "--pool", root / "trained.gmpk", "--clusters", root / "km.gmkm",
         "--out", root / "preds.jsonl"],
    ]
    for argv in steps:
        assert main([str(a) for a in argv]) == 0, argv
    return root


class TestPipeline:
    def test_clean_pck_is_perfect(self, clean_run, capsys):
        code, out, _ = run(capsys, "eval", "--pred", clean_run / "preds.jsonl", "--truth", clean_run / "data")
        assert code == 0
        rep = record(out)["reports"]["mixture"]
        assert rep["pck"][-1] == 1.0 and rep["n_samples"] == 50

    def test_baseline_column(self, clean_run, capsys):
        code, out, _ = run(capsys, "eval", "--pred", clean_run / "preds.jsonl", "--truth", clean_run / "data",
                           "--baseline", "unary-argmax")
        assert code == 0
        assert out.splitlines()[0].split() == ["sigma", "mixture", "unary"]
        assert set(record(out)["reports"]) == {"mixture", "unary"}

    def test_artifacts(self, clean_run):
        assert io.read_pool(clean_run / "trained.gmpk").n_models == 4
        assert (clean_run / "loss.csv").read_text().startswith("epoch,mean_loss\n0,")
        assert len(io.read_predictions(clean_run / "preds.jsonl")) == 50

    def test_rerun_is_identical(self, clean_run, tmp_path, capsys):
        argv = ["infer", "--data", clean_run / "data", "--pool", clean_run / "trained.gmpk",
                "--clusters", clean_run / "km.gmkm", "--out", tmp_path / "again.jsonl"]
        assert run(capsys, *argv)[0] == 0
        assert (tmp_path / "again.jsonl").read_bytes() == (clean_run / "preds.jsonl").read_bytes()


@pytest.fixture
def tiny(tmp_path, capsys):
    assert run(capsys, "synth", "--n-samples", 4, "--grid", "8x8", "--out", tmp_path / "data")[0] == 0
    return tmp_path


class TestErrors:
    def test_missing_file(self, tiny, capsys):
        code, _, err = run(capsys, "eval", "--pred", tiny / "nope.jsonl", "--truth", tiny / "data")
        assert code != 0 and "nope.jsonl" in err

    def test_missing_required(self, capsys):
        code, _, err = run(capsys, "cluster", "--clusters", 2)
        assert code != 0 and "--data" in err

    def test_model_count_mismatch(self, tiny, capsys):
        assert run(capsys, "cluster", "--data", tiny / "data", "--clusters", 2, "--out", tiny / "km.gmkm")[0] == 0
        assert run(capsys, "init", "--data", tiny / "data", "--radius", 2, "--out", tiny / "p.gmpk")[0] == 0
        code, _, err = run(capsys, "infer", "--data", tiny / "data", "--pool", tiny / "p.gmpk",
                           "--clusters", tiny / "km.gmkm", "--out", tiny / "preds.jsonl")
        assert code != 0 and "1 models" in err and "2 clusters" in err
        assert not (tiny / "preds.jsonl").exists()

    def test_pool_edges_checked(self, tiny, capsys):
        from handgm.skeleton import SkeletonTree
        io.write_pool(tiny / "p.gmpk", init_uniform_pool(SkeletonTree(2, ((0, 1),)), 1, 1))
        code, _, err = run(capsys, "infer", "--data", tiny / "data", "--pool", tiny / "p.gmpk",
                           "--out", tiny / "x.jsonl")
        assert code != 0 and "edges" in err

    def test_pool_too_large_for_heatmaps(self, tiny, capsys):
        from handgm.skeleton import build_default_hand_tree
        io.write_pool(tiny / "p.gmpk", init_uniform_pool(build_default_hand_tree(), 1, 9))
        code, _, err = run(capsys, "infer", "--data", tiny / "data", "--pool", tiny / "p.gmpk",
                           "--out", tiny / "x.jsonl")
        assert code != 0 and "8x8" in err

    def test_truncated_heatmap(self, tiny, capsys):
        hm = next((tiny / "data" / "heatmaps").iterdir())
        hm.write_bytes(hm.read_bytes()[:100])
        code, _, err = run(capsys, "cluster", "--data", tiny / "data", "--clusters", 2, "--out", tiny / "km.gmkm")
        assert code != 0 and "truncated" in err and "byte offset" in err
        assert not (tiny / "km.gmkm").exists()

    def test_prediction_missing_sample(self, tiny, capsys):
        (tiny / "p.jsonl").write_text(json.dumps({"sample_id": "other", "keypoints": [[0, 0]] * 21}) + "\n")
        code, _, err = run(capsys, "eval", "--pred", tiny / "p.jsonl", "--truth", tiny / "data")
        assert code != 0 and "no prediction" in err

    def test_unknown_config_key(self, tiny, capsys):
        (tiny / "c.cfg").write_text("bogus = 1\n")
        code, _, err = run(capsys, "synth", "--config", tiny / "c.cfg", "--out", tiny / "d2")
        assert code != 0 and "bogus" in err


class TestConfigPrecedence:
    def test_flag_beats_config(self, tmp_path, capsys):
        (tmp_path / "c.cfg").write_text("n_samples = 7\ngrid = 8x8\n")
        code, out, _ = run(capsys, "synth", "--config", tmp_path / "c.cfg", "--n-samples", 3, "--out", tmp_path / "d")
        assert code == 0 and "wrote 3 samples" in out
        assert io.read_dataset(tmp_path / "d")[0].unaries.shape == (21, 8, 8)


def test_synth_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "synth", "--n-samples", 3, "--grid", "8x8", "--seed", 5, "--out", tmp_path / name)[0] == 0
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_train_no_rotation_and_eval_thresholds(tiny, capsys):
    assert run(capsys, "init", "--data", tiny / "data", "--radius", 2, "--no-rotation", "--out", tiny / "p.gmpk")[0] == 0
    code, out, _ = run(capsys, "train", "--data", tiny / "data", "--pool", tiny / "p.gmpk", "--no-rotation",
                       "--epochs", 2, "--batch-size", 2, "--out", tiny / "t.gmpk")
    assert code == 0 and out.splitlines()[0] == "epoch,mean_loss" and len(out.splitlines()) == 3
    assert run(capsys, "infer", "--data", tiny / "data", "--pool", tiny / "t.gmpk", "--no-rotation",
               "--out", tiny / "preds.jsonl")[0] == 0
    code, out, _ = run(capsys, "eval", "--pred", tiny / "preds.jsonl", "--truth", tiny / "data",
                       "--thresholds", 0.1, 0.2)
    assert code == 0 and record(out)["reports"]["mixture"]["thresholds"] == [0.1, 0.2]
    np.testing.assert_array_less(-1e-12, record(out)["reports"]["mixture"]["pck"])
