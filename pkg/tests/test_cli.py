import csv
import json

import numpy as np
import pytest

from affectnn import cli, dataio, synth

TINY_CONFIG = {
    "cnn": {"input_height": 22, "input_width": 22, "conv_filters": [2, 2, 2],
            "kernel_size": 3, "fc_units": 6, "activation": "tanh"},
    "rnn": {"hidden_sizes": [5], "window": 4, "activation": "tanh"},
    "optim": {"epochs": 1, "batch_size": 16},
    "synth": {"train_sequences": 2, "dev_sequences": 1, "length": 20,
              "image_size": 24, "out_size": 22, "noise_sigma": 30.0,
              "gap_fraction": 0.1},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny end-to-end run of every subcommand, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    data = root / "data"
    assert cli.main(["synth", "--out", str(data), "--seed", "5",
                     "--config", str(config)]) == 0
    common = ["--config", str(config), "--seed", "5"]
    assert cli.main(["train-cnn",
                     "--manifest", str(data / "manifest_train.csv"),
                     "--template", str(data / "template.json"),
                     "--out-model", str(root / "cnn.bin"),
                     "--history", str(root / "cnn_history.csv"),
                     *common]) == 0
    for split in ("train", "dev"):
        assert cli.main(["extract", "--model", str(root / "cnn.bin"),
                         "--manifest", str(data / f"manifest_{split}.csv"),
                         "--template", str(data / "template.json"),
                         "--out", str(root / f"features_{split}")]) == 0
    assert cli.main(["train-rnn",
                     "--features", str(root / "features_train"),
                     "--dev-features", str(root / "features_dev"),
                     "--out-model", str(root / "rnn.bin"),
                     "--history", str(root / "rnn_history.csv"),
                     *common]) == 0
    assert cli.main(["eval", "--cnn-model", str(root / "cnn.bin"),
                     "--rnn-model", str(root / "rnn.bin"),
                     "--manifest", str(data / "manifest_dev.csv"),
                     "--template", str(data / "template.json"),
                     "--out", str(root / "eval")]) == 0
    return root


def test_synth_outputs_exist(workspace):
    data = workspace / "data"
    assert (data / "manifest_train.csv").exists()
    assert (data / "manifest_dev.csv").exists()
    assert (data / "template.json").exists()
    ds = dataio.load_manifest(data / "manifest_train.csv")
    assert ds.sequence_ids == ["train000", "train001"]
    assert len(ds) == 40


def test_synth_deterministic(tmp_path):
    cfg = synth.SynthConfig(train_sequences=1, dev_sequences=1, length=8,
                            image_size=16, out_size=16, seed=9)
    a, b = tmp_path / "a", tmp_path / "b"
    synth.generate(cfg, a)
    synth.generate(cfg, b)
    for rel in ["manifest_train.csv", "manifest_dev.csv", "template.json",
                "frames/train000/f00003.pgm"]:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_synth_gap_count():
    assert len(synth.gap_indices(200, 0.1)) == 20
    assert synth.gap_indices(200, 0.0) == set()


def test_synth_blob_intensity_monotone_in_valence():
    rng = np.random.default_rng(0)
    bright = synth.render_frame(1.0, 32, 0.0, rng)
    dark = synth.render_frame(-1.0, 32, 0.0, rng)
    assert bright.mean() > dark.mean()


def test_feature_files_shape(workspace):
    files = sorted((workspace / "features_train").glob("*.aff"))
    assert len(files) == 2
    tl = dataio.read_features(files[0])
    assert len(tl) == 20
    assert tl.features.shape == (20, 6)
    assert tl.mask.sum() == 2  # gap_fraction 0.1 of 20 frames


def test_extract_deterministic(workspace):
    data = workspace / "data"
    out2 = workspace / "features_again"
    assert cli.main(["extract", "--model", str(workspace / "cnn.bin"),
                     "--manifest", str(data / "manifest_train.csv"),
                     "--template", str(data / "template.json"),
                     "--out", str(out2)]) == 0
    for f in sorted((workspace / "features_train").glob("*.aff")):
        assert f.read_bytes() == (out2 / f.name).read_bytes()


def test_eval_outputs(workspace):
    out = workspace / "eval"
    with open(out / "timeline.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20  # one per dev frame
    assert set(rows[0]) == {"sequence_id", "frame_index", "gold", "pred_cnn",
                            "pred_cnn_rnn", "interpolated"}
    assert sum(int(r["interpolated"]) for r in rows) == 2
    doc = json.loads((out / "report_cnn.json").read_text())
    assert doc["pooled"]["n"] == 20
    assert (out / "report_cnn_rnn.csv").exists()


def test_history_csv_columns(workspace):
    lines = (workspace / "cnn_history.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,rmse,cc,ccc,seconds"
    assert len(lines) == 2  # 1 epoch


def test_missing_manifest_exits_2(workspace):
    code = cli.main(["train-cnn", "--manifest", "/nonexistent/m.csv",
                     "--template", str(workspace / "data" / "template.json"),
                     "--out-model", str(workspace / "x.bin")])
    assert code == 2


def test_rnn_window_longer_than_sequence_exits_2(workspace, tmp_path):
    config = tmp_path / "config.json"
    doc = dict(TINY_CONFIG)
    doc["rnn"] = {"hidden_sizes": [5], "window": 100}
    config.write_text(json.dumps(doc))
    code = cli.main(["train-rnn", "--features",
                     str(workspace / "features_train"),
                     "--out-model", str(tmp_path / "rnn.bin"),
                     "--config", str(config)])
    assert code == 2


def test_sweep_runs_and_is_resumable(workspace, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(
        {"rnn": {"hidden_sizes": [4], "activation": "tanh"},
         "optim": {"epochs": 1, "batch_size": 16}}))
    results = tmp_path / "results.csv"
    args = ["sweep", "--axis", "window", "--values", "[2, 3]",
            "--out", str(results), "--config", str(config), "--seed", "1",
            "--features", str(workspace / "features_train"),
            "--dev-features", str(workspace / "features_dev")]
    assert cli.main(args) == 0
    with open(results, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert all(r["status"] == "OK" for r in rows)
    assert all(r["ccc"] != "" for r in rows)
    # second invocation skips everything and appends nothing
    assert cli.main(args) == 0
    with open(results, newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_sweep_marks_failures_and_continues(workspace, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(
        {"rnn": {"hidden_sizes": [4]}, "optim": {"epochs": 1}}))
    results = tmp_path / "results.csv"
    # window 999 exceeds every sequence; window 2 is fine
    assert cli.main(["sweep", "--axis", "window", "--values", "[999, 2]",
                     "--out", str(results), "--config", str(config),
                     "--features", str(workspace / "features_train"),
                     "--dev-features", str(workspace / "features_dev")]) == 0
    with open(results, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["status"].startswith("FAILED")
    assert rows[1]["status"] == "OK"


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["train-cnn"])  # missing required arguments
    assert exc.value.code == 2
