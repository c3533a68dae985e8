"""CLI command tests: composition, validation, determinism, error JSON."""

import json

import numpy as np
import pytest

from posestream.cli import main
from posestream.convnet import init_net, load_checkpoint, NetSpec
from posestream.fusion import read_scores
from posestream.tensorize import read_tensor_cache

FAST = [
    "--conv1-channels", "4", "--conv2-channels", "6", "--hidden", "16",
    "--epochs", "2", "--batch-size", "8", "--learning-rate", "0.05",
]


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    out = json.loads(captured.out.strip().splitlines()[-1]) if captured.out.strip() else {}
    err = json.loads(captured.err.strip().splitlines()[-1]) if captured.err.strip() else {}
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One tiny synth -> preprocess -> train -> eval pipeline, shared."""
    root = tmp_path_factory.mktemp("pipeline")
    argv_synth = [
        "synth", "--out", str(root / "train.jsonl"),
        "--videos-per-class", "6", "--frames", "16", "--noise-sigma", "0.5", "--seed", "1",
    ]
    assert main(argv_synth) == 0
    assert main([
        "synth", "--out", str(root / "test.jsonl"),
        "--videos-per-class", "3", "--frames", "16", "--noise-sigma", "0.5", "--seed", "2",
    ]) == 0
    assert main([
        "preprocess", "--annotations", str(root / "train.jsonl"),
        "--cache", str(root / "train.cache"), "--seed", "0",
        "--report", str(root / "prep.json"),
    ]) == 0
    assert main([
        "train", "--cache", str(root / "train.cache"),
        "--checkpoint", str(root / "net.ckpt"), "--trace", str(root / "trace.csv"),
        "--seed", "0", *FAST,
    ]) == 0
    assert main([
        "preprocess", "--annotations", str(root / "test.jsonl"),
        "--cache", str(root / "test.cache"), "--seed", "0",
    ]) == 0
    assert main([
        "eval", "--cache", str(root / "test.cache"), "--checkpoint", str(root / "net.ckpt"),
        "--scores", str(root / "scores.csv"), "--labels", str(root / "labels.csv"),
        "--report", str(root / "eval.json"), "--seed", "0",
    ]) == 0
    return root


class TestSynth:
    def test_deterministic_output(self, tmp_path, capsys):
        args = ["synth", "--out", None, "--videos-per-class", "2", "--frames", "8",
                "--dropout", "0.1", "--seed", "9"]
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        args[2] = str(a)
        assert main(args) == 0
        args[2] = str(b)
        assert main(args) == 0
        capsys.readouterr()
        assert a.read_bytes() == b.read_bytes()

    def test_bad_class_is_json_error(self, tmp_path, capsys):
        code, _, err = run(
            capsys, "synth", "--out", str(tmp_path / "x.jsonl"), "--classes", "moonwalk"
        )
        assert code == 1
        assert err["error"] == "ValueError"
        assert "moonwalk" in err["message"]


class TestPreprocess:
    def test_report_contents(self, workdir):
        report = json.loads((workdir / "prep.json").read_text())
        assert report["videos"] == 24
        assert report["tensor_shape"] == [15, 58, 3]
        assert report["rejected"] == []
        assert "config_hash" in report and "seed" in report
        assert (workdir / "train.cache").exists()
        assert (workdir / "train.seq.jsonl").exists()

    def test_malformed_records_listed_with_line_numbers(self, tmp_path, capsys):
        good = '{"video": "ok", "label": 0, "n": 15, "frames": [%s]}' % ",".join(
            ["[%s]" % ",".join("[1.0,%d,1]" % j for j in range(15))] * 3
        )
        bad_n = good.replace('"n": 15', '"n": 14').replace('"ok"', '"badn"')
        lines = [good, "this is not json", bad_n, good.replace('"ok"', '"ok2"')]
        ann = tmp_path / "ann.jsonl"
        ann.write_text("\n".join(lines) + "\n")
        code, out, _ = run(
            capsys, "preprocess", "--annotations", str(ann),
            "--cache", str(tmp_path / "c.cache"), "--report", str(tmp_path / "r.json"),
        )
        # Bad lines are reported with their numbers; the valid records run.
        assert code == 0
        assert out["videos"] == 2
        assert [r["line"] for r in out["rejected"]] == [2, 3]
        assert "invalid JSON" in out["rejected"][0]["error"]

    def test_wrong_n_rejected_with_line_number(self, tmp_path, capsys):
        frames15 = ",".join(["[%s]" % ",".join("[1.0,%d,1]" % j for j in range(15))] * 3)
        frames14 = ",".join(["[%s]" % ",".join("[1.0,%d,1]" % j for j in range(14))] * 3)
        ann = tmp_path / "ann.jsonl"
        ann.write_text(
            '{"video": "a", "label": 0, "n": 15, "frames": [%s]}\n' % frames15
            + '{"video": "b", "label": 0, "n": 14, "frames": [%s]}\n' % frames14
            + '{"video": "c", "label": 1, "n": 15, "frames": [%s]}\n' % frames15
        )
        code, out, _ = run(
            capsys, "preprocess", "--annotations", str(ann), "--cache", str(tmp_path / "c.cache"),
        )
        assert code == 0
        assert out["videos"] == 2
        assert out["rejected"] == [{"line": 2, "error": "record has n=14, expected n=15"}]

    def test_no_valid_records_is_error(self, tmp_path, capsys):
        ann = tmp_path / "ann.jsonl"
        ann.write_text('{"video": "a", "n": 2, "frames": [[[0,0,1],[0,0,1]]]}\n')
        code, _, err = run(
            capsys, "preprocess", "--annotations", str(ann), "--cache", str(tmp_path / "c.cache"),
        )
        assert code == 1
        assert "no valid records" in err["message"]

    def test_zero_interpolation_report(self, tmp_path, capsys):
        assert main([
            "synth", "--out", str(tmp_path / "clean.jsonl"),
            "--videos-per-class", "2", "--frames", "8", "--noise-sigma", "0", "--seed", "3",
        ]) == 0
        code, out, _ = run(
            capsys, "preprocess", "--annotations", str(tmp_path / "clean.jsonl"),
            "--cache", str(tmp_path / "clean.cache"),
        )
        assert code == 0
        assert out["fills"]["temporal"] == 0
        assert out["fills"]["spatial"] == 0
        assert out["fills"]["synthetic"] == 0


class TestTrain:
    def test_zero_epochs_equals_initialization(self, workdir, tmp_path, capsys):
        code, _, _ = run(
            capsys, "train", "--cache", str(workdir / "train.cache"),
            "--checkpoint", str(tmp_path / "init.ckpt"), "--seed", "5",
            "--epochs", "0", "--conv1-channels", "4", "--conv2-channels", "6", "--hidden", "16",
        )
        assert code == 0
        net, _ = load_checkpoint(tmp_path / "init.ckpt")
        cache = read_tensor_cache(workdir / "train.cache")
        fresh = init_net(
            (cache.k, cache.width, 3), num_classes=4, seed=5,
            arch=NetSpec(conv1_channels=4, conv2_channels=6, hidden=16),
        )
        for name, param in fresh.parameters().items():
            np.testing.assert_array_equal(net.parameters()[name], param)

    def test_trace_rerun_identical(self, workdir, tmp_path, capsys):
        argv = [
            "train", "--cache", str(workdir / "train.cache"),
            "--checkpoint", str(tmp_path / "n.ckpt"),
            "--trace", str(tmp_path / "t.csv"), "--seed", "0", *FAST,
        ]
        traces = []
        for _ in range(2):
            assert main(argv) == 0
            traces.append((tmp_path / "t.csv").read_bytes())
        capsys.readouterr()
        assert traces[0] == traces[1]

    def test_missing_cache_is_json_error(self, tmp_path, capsys):
        code, _, err = run(
            capsys, "train", "--cache", str(tmp_path / "nope.cache"),
            "--checkpoint", str(tmp_path / "n.ckpt"),
        )
        assert code == 1
        assert err["error"] == "FileNotFoundError"


class TestEval:
    def test_scores_are_probabilities(self, workdir):
        scores = read_scores(workdir / "scores.csv", stream="pose")
        assert scores.kind == "probabilities"
        for vec in scores.scores.values():
            assert abs(vec.sum() - 1.0) < 1e-6

    def test_report_and_labels(self, workdir):
        report = json.loads((workdir / "eval.json").read_text())
        assert 0.0 <= report["accuracy"] <= 1.0
        assert len(report["per_class_accuracy"]) == 4
        labels_text = (workdir / "labels.csv").read_text()
        assert labels_text.splitlines()[1] == "video,label"

    def test_converged_train_set_eval_matches_trace(self, tmp_path, capsys):
        # Evaluate the training cache of a run trained to convergence: the
        # reported accuracy must equal the final trace accuracy.
        assert main([
            "synth", "--out", str(tmp_path / "t.jsonl"), "--videos-per-class", "40",
            "--frames", "24", "--noise-sigma", "0.5", "--seed", "17",
        ]) == 0
        assert main([
            "preprocess", "--annotations", str(tmp_path / "t.jsonl"),
            "--cache", str(tmp_path / "t.cache"), "--seed", "0",
        ]) == 0
        assert main([
            "train", "--cache", str(tmp_path / "t.cache"),
            "--checkpoint", str(tmp_path / "t.ckpt"), "--trace", str(tmp_path / "t.trace"),
            "--seed", "0", "--conv1-channels", "6", "--conv2-channels", "8",
            "--hidden", "32", "--epochs", "25", "--batch-size", "16",
            "--learning-rate", "0.07",
        ]) == 0
        code, out, _ = run(
            capsys, "eval", "--cache", str(tmp_path / "t.cache"),
            "--checkpoint", str(tmp_path / "t.ckpt"), "--scores", str(tmp_path / "t.csv"),
        )
        assert code == 0
        final_trace_accuracy = float(
            (tmp_path / "t.trace").read_text().splitlines()[-1].split(",")[2]
        )
        assert final_trace_accuracy == 1.0, "run did not converge; cross-check needs convergence"
        assert out["accuracy"] == final_trace_accuracy

    def test_shape_mismatch_is_error(self, workdir, tmp_path, capsys):
        # Train a checkpoint on a different tensor width (penn profile).
        assert main([
            "synth", "--out", str(tmp_path / "p.jsonl"), "--profile", "penn",
            "--videos-per-class", "2", "--frames", "16", "--seed", "4",
        ]) == 0
        assert main([
            "preprocess", "--annotations", str(tmp_path / "p.jsonl"),
            "--cache", str(tmp_path / "p.cache"), "--profile", "penn",
        ]) == 0
        code, _, err = run(
            capsys, "eval", "--cache", str(tmp_path / "p.cache"),
            "--checkpoint", str(workdir / "net.ckpt"), "--scores", str(tmp_path / "s.csv"),
        )
        assert code == 1
        assert "checkpoint expects" in err["message"]


class TestFuse:
    def write_streams(self, tmp_path):
        # pose is right everywhere except video v2; spatial fixes v2.
        (tmp_path / "pose.csv").write_text(
            "video,class_0,class_1\nv0,0.9,0.1\nv1,0.2,0.8\nv2,0.6,0.4\n"
        )
        (tmp_path / "spatial.csv").write_text(
            "video,class_0,class_1\nv0,0.7,0.3\nv1,0.3,0.7\nv2,0.1,0.9\n"
        )
        (tmp_path / "labels.csv").write_text("video,label\nv0,0\nv1,1\nv2,1\n")

    def test_single_stream_unit_weight_matches_solo(self, workdir, tmp_path, capsys):
        code, out, _ = run(
            capsys, "fuse", "--pose-scores", str(workdir / "scores.csv"),
            "--labels", str(workdir / "labels.csv"),
            "--fused-scores", str(tmp_path / "fused.csv"),
            "--weights", "1,0,0",
        )
        assert code == 0
        eval_report = json.loads((workdir / "eval.json").read_text())
        assert out["accuracy"]["pose"] == eval_report["accuracy"]
        assert out["fused_accuracy"] == eval_report["accuracy"]

    def test_weights_echoed_in_outputs(self, tmp_path, capsys):
        self.write_streams(tmp_path)
        code, out, _ = run(
            capsys, "fuse", "--pose-scores", str(tmp_path / "pose.csv"),
            "--spatial-scores", str(tmp_path / "spatial.csv"),
            "--labels", str(tmp_path / "labels.csv"),
            "--fused-scores", str(tmp_path / "fused.csv"),
            "--report", str(tmp_path / "fuse.json"),
        )
        assert code == 0
        assert out["weights"] == [1.0, 1.0, 1.0]
        header = (tmp_path / "fused.csv").read_text().splitlines()[0]
        assert "weights=1,1,1" in header
        report = json.loads((tmp_path / "fuse.json").read_text())
        assert report["weights"] == [1.0, 1.0, 1.0]

    def test_subset_table(self, tmp_path, capsys):
        self.write_streams(tmp_path)
        code, out, _ = run(
            capsys, "fuse", "--pose-scores", str(tmp_path / "pose.csv"),
            "--spatial-scores", str(tmp_path / "spatial.csv"),
            "--labels", str(tmp_path / "labels.csv"),
            "--fused-scores", str(tmp_path / "fused.csv"),
        )
        assert code == 0
        table = out["accuracy"]
        assert set(table) == {"pose", "spatial", "pose+spatial"}
        assert table["pose+spatial"] >= max(table["pose"], table["spatial"])

    def test_needs_labels(self, tmp_path, capsys):
        self.write_streams(tmp_path)
        code, _, err = run(
            capsys, "fuse", "--pose-scores", str(tmp_path / "pose.csv"),
            "--fused-scores", str(tmp_path / "fused.csv"),
        )
        assert code == 1
        assert "labels" in err["message"]


class TestWeightsSearch:
    def test_grid_search_report(self, tmp_path, capsys):
        TestFuse().write_streams(tmp_path)
        code, out, _ = run(
            capsys, "weights-search", "--pose-scores", str(tmp_path / "pose.csv"),
            "--spatial-scores", str(tmp_path / "spatial.csv"),
            "--labels", str(tmp_path / "labels.csv"), "--grid", "0,1",
        )
        assert code == 0
        assert out["best_accuracy"] == 1.0
        assert len(out["candidates"]) == 3  # (0,1), (1,0), (1,1); temporal axis fixed at 0


class TestDeterminism:
    def test_pipeline_rerun_byte_identical_scores(self, tmp_path, capsys):
        """Same config + seed twice: score CSVs must match byte for byte."""
        ann = tmp_path / "ann.jsonl"
        assert main([
            "synth", "--out", str(ann), "--videos-per-class", "4",
            "--frames", "16", "--noise-sigma", "1", "--dropout", "0.1", "--seed", "11",
        ]) == 0
        d = tmp_path / "run"
        d.mkdir()
        outputs = []
        for _ in range(2):  # literally the same config, rerun in place
            assert main([
                "preprocess", "--annotations", str(ann), "--cache", str(d / "c.cache"),
                "--seed", "7",
            ]) == 0
            assert main([
                "train", "--cache", str(d / "c.cache"), "--checkpoint", str(d / "n.ckpt"),
                "--seed", "7", *FAST,
            ]) == 0
            assert main([
                "eval", "--cache", str(d / "c.cache"), "--checkpoint", str(d / "n.ckpt"),
                "--scores", str(d / "s.csv"), "--seed", "7",
            ]) == 0
            outputs.append((d / "s.csv").read_bytes())
        capsys.readouterr()
        assert outputs[0] == outputs[1]


class TestUsageErrors:
    def test_unknown_command_exits_2_with_json(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "UsageError"

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.yaml"
        cfg_file.write_text("k: 15\nseed: 3\nsampling: center\n")
        assert main([
            "synth", "--out", str(tmp_path / "a.jsonl"), "--videos-per-class", "2",
            "--frames", "12", "--seed", "3",
        ]) == 0
        code, out, _ = run(
            capsys, "preprocess", "--config", str(cfg_file),
            "--annotations", str(tmp_path / "a.jsonl"),
            "--cache", str(tmp_path / "a.cache"), "--seed", "9",
        )
        assert code == 0
        assert out["seed"] == 9  # flag beats file

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.yaml"
        cfg_file.write_text("snippets: 15\n")
        code, _, err = run(
            capsys, "preprocess", "--config", str(cfg_file),
            "--annotations", "x", "--cache", "y",
        )
        assert code == 1
        assert "unknown config keys" in err["message"]
