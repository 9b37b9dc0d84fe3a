import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from actionseg.cli import main
from actionseg.config import PipelineConfig, load_config
from actionseg.errors import ConfigError
from actionseg.features import extract_video_features
from actionseg.frame_io import load_labels, load_sequence
from actionseg.gmm import load_model
from actionseg.segmenter import ModelBank, segment_video


SYNTH_SPEC = {
    "frame_size": [32, 32],
    "instance_length_range": [18, 24],
    "noise_sigma": 1.0,
    "n_train_per_action": 2,
    "n_test_sequences": 1,
    "instances_per_test": 3,
    "folds": 1,
    "actions": [
        {"name": "right", "pattern": "translate", "velocity": [1.0, 0.0],
         "texture_seed": 1, "group": 1, "param_jitter": 0.15},
        {"name": "updown", "pattern": "oscillate", "velocity": [0.0, 1.0],
         "amplitude": 1.5, "period": 8.0, "texture_seed": 2, "group": 2,
         "param_jitter": 0.15},
    ],
}

CONFIG_TEXT = """\
# desk-scale settings
tau = 30.0
window_frames = 8
n_components = 2
seed = 0
hs_iters = 60
"""


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture()
def cache_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ACTIONSEG_CACHE_DIR", str(tmp_path / "cache"))
    return tmp_path


@pytest.fixture()
def synth_dataset(cache_env):
    root = cache_env
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(SYNTH_SPEC))
    out = root / "data"
    assert main(["synth", "--spec", str(spec_path), "--seed", "5", "--out", str(out)]) == 0
    cfg_path = root / "cfg.toml"
    cfg_path.write_text(CONFIG_TEXT)
    return root, out, cfg_path


class TestSynthCommand:
    def test_layout_and_manifest(self, synth_dataset):
        root, out, _ = synth_dataset
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["actions"] == ["right", "updown"]
        assert len(manifest["folds"]) == 1
        assert len(manifest["train"]) == 4  # 2 actions x 2 instances
        assert len(manifest["test"]) == 1
        train_dirs = sorted(p.name for p in (out / "fold_0" / "train").iterdir() if p.is_dir())
        assert train_dirs == ["right_0", "right_1", "updown_0", "updown_1"]
        seq = load_sequence(out / "fold_0" / "train" / "right_0")
        assert 18 <= len(seq) <= 24
        labels = load_labels(out / "fold_0" / "test" / "seq_0.labels.csv")
        test_seq = load_sequence(out / "fold_0" / "test" / "seq_0")
        assert len(labels) == len(test_seq)

    def test_same_seed_identical_tree(self, synth_dataset, cache_env):
        root, out, _ = synth_dataset
        spec_path = root / "spec.json"
        out2 = root / "data2"
        assert main(["synth", "--spec", str(spec_path), "--seed", "5", "--out", str(out2)]) == 0
        assert tree_digest(out) == tree_digest(out2)

    def test_different_seed_differs(self, synth_dataset):
        root, out, _ = synth_dataset
        out3 = root / "data3"
        assert main(["synth", "--spec", str(root / "spec.json"), "--seed", "6",
                     "--out", str(out3)]) == 0
        assert tree_digest(out) != tree_digest(out3)

    def test_missing_spec_is_data_error(self, cache_env, capsys):
        code = main(["synth", "--spec", str(cache_env / "nope.json"), "--out",
                     str(cache_env / "x")])
        assert code == 2
        assert "no such spec" in capsys.readouterr().err


class TestTrainCommand:
    def test_train_writes_model_per_action(self, synth_dataset):
        root, out, cfg = synth_dataset
        models = root / "models"
        code = main([
            "train", "--config", str(cfg),
            "--manifest", str(out / "manifest.json"), "--out", str(models),
        ])
        assert code == 0
        files = sorted(p.name for p in models.glob("*.json"))
        assert files == ["right.json", "updown.json"]
        model = load_model(models / "right.json")
        assert model.action == "right"
        assert model.n_components == 2
        assert model.meta["tau"] == 30.0

    def test_rerun_byte_identical(self, synth_dataset):
        root, out, cfg = synth_dataset
        m1, m2 = root / "m1", root / "m2"
        args = ["train", "--config", str(cfg), "--manifest", str(out / "manifest.json")]
        assert main(args + ["--out", str(m1)]) == 0
        assert main(args + ["--out", str(m2)]) == 0
        assert tree_digest(m1) == tree_digest(m2)

    def test_cache_populated_and_reused(self, synth_dataset, cache_env):
        root, out, cfg = synth_dataset
        cache = cache_env / "cache"
        assert main(["train", "--config", str(cfg),
                     "--manifest", str(out / "manifest.json"),
                     "--out", str(root / "m")]) == 0
        feats = list(cache.glob("*.feat"))
        assert feats
        stamps = {p: p.stat().st_mtime_ns for p in feats}
        assert main(["train", "--config", str(cfg),
                     "--manifest", str(out / "manifest.json"),
                     "--out", str(root / "m_again")]) == 0
        assert {p: p.stat().st_mtime_ns for p in feats} == stamps

    def test_per_scenario_trains_model_per_pair(self, synth_dataset):
        root, out, cfg = synth_dataset
        manifest = json.loads((out / "manifest.json").read_text())
        for i, entry in enumerate(manifest["train"]):
            entry["scenario"] = f"s{i % 2}"
        (out / "scenario_manifest.json").write_text(json.dumps(manifest))
        models = root / "scenario_models"
        code = main([
            "train", "--config", str(cfg), "--per-scenario",
            "--manifest", str(out / "scenario_manifest.json"), "--out", str(models),
        ])
        assert code == 0
        files = sorted(p.name for p in models.glob("*.json"))
        assert files == [
            "right__s0.json", "right__s1.json", "updown__s0.json", "updown__s1.json",
        ]

    def test_unknown_config_key_is_usage_error(self, synth_dataset, capsys):
        root, out, _ = synth_dataset
        bad = root / "bad.toml"
        bad.write_text("taau = 40\n")
        code = main(["train", "--config", str(bad),
                     "--manifest", str(out / "manifest.json"),
                     "--out", str(root / "m")])
        assert code == 1
        assert "unknown config key" in capsys.readouterr().err


class TestSegmentCommand:
    def test_cli_matches_library_segmentation(self, synth_dataset):
        root, out, cfg_path = synth_dataset
        models = root / "models"
        main(["train", "--config", str(cfg_path),
              "--manifest", str(out / "manifest.json"), "--out", str(models)])
        video = out / "fold_0" / "test" / "seq_0"
        seg_csv = root / "seg.csv"
        code = main(["segment", "--config", str(cfg_path), "--models", str(models),
                     "--video", str(video), "--out", str(seg_csv)])
        assert code == 0

        cfg = load_config(cfg_path)
        bank = ModelBank([load_model(p) for p in sorted(models.glob("*.json"))])
        seq = load_sequence(video)
        feats = extract_video_features(seq, cfg.extraction_config())
        seg = segment_video(feats, bank, cfg.retained_window(), n_frames=len(seq))
        got = load_labels(seg_csv, bank.action_names)
        assert got.labels.tolist() == seg.frame_labels.tolist()

    def test_single_action_video_single_row(self, synth_dataset):
        root, out, cfg_path = synth_dataset
        models = root / "models"
        main(["train", "--config", str(cfg_path),
              "--manifest", str(out / "manifest.json"), "--out", str(models)])
        video = out / "fold_0" / "train" / "right_0"
        seg_csv = root / "one.csv"
        assert main(["segment", "--config", str(cfg_path), "--models", str(models),
                     "--video", str(video), "--out", str(seg_csv)]) == 0
        rows = seg_csv.read_text().strip().splitlines()
        assert rows[0] == "start_frame,end_frame,action"
        assert len(rows) == 2
        assert rows[1].endswith(",right")

    def test_video_shorter_than_window_is_data_error(self, synth_dataset, capsys):
        root, out, cfg_path = synth_dataset
        models = root / "models"
        main(["train", "--config", str(cfg_path),
              "--manifest", str(out / "manifest.json"), "--out", str(models)])
        long_cfg = root / "long.toml"
        long_cfg.write_text(CONFIG_TEXT.replace("window_frames = 8", "window_frames = 200"))
        code = main(["segment", "--config", str(long_cfg), "--models", str(models),
                     "--video", str(out / "fold_0" / "train" / "right_0"),
                     "--out", str(root / "x.csv")])
        assert code == 2
        assert "too short" in capsys.readouterr().err

    def test_scores_dump(self, synth_dataset):
        root, out, cfg_path = synth_dataset
        models = root / "models"
        main(["train", "--config", str(cfg_path),
              "--manifest", str(out / "manifest.json"), "--out", str(models)])
        scores_path = root / "scores.json"
        assert main(["segment", "--config", str(cfg_path), "--models", str(models),
                     "--video", str(out / "fold_0" / "test" / "seq_0"),
                     "--out", str(root / "s.csv"),
                     "--scores-out", str(scores_path)]) == 0
        dump = json.loads(scores_path.read_text())
        assert dump["actions"] == ["right", "updown"]
        assert len(dump["fused"]) == len(dump["retained_frames"])

    def test_missing_models_dir_is_data_error(self, synth_dataset, capsys):
        root, out, cfg_path = synth_dataset
        code = main(["segment", "--config", str(cfg_path),
                     "--models", str(root / "nomodels"),
                     "--video", str(out / "fold_0" / "train" / "right_0"),
                     "--out", str(root / "x.csv")])
        assert code == 2


class TestEvalCommand:
    def test_fold_manifest_reports_mean_and_std(self, cache_env, capsys):
        root = cache_env
        spec = dict(SYNTH_SPEC, folds=2)
        (root / "spec.json").write_text(json.dumps(spec))
        out = root / "data"
        assert main(["synth", "--spec", str(root / "spec.json"), "--seed", "3",
                     "--out", str(out)]) == 0
        cfg = root / "cfg.toml"
        cfg.write_text(CONFIG_TEXT)
        report_path = root / "report.json"
        code = main(["eval", "--config", str(cfg),
                     "--manifest", str(out / "manifest.json"),
                     "--out", str(report_path)])
        assert code == 0
        report = json.loads(report_path.read_text())
        assert len(report["folds"]) == 2
        accs = [f["frame_accuracy"] for f in report["folds"]]
        assert report["mean_accuracy"] == pytest.approx(np.mean(accs))
        assert report["stddev_accuracy"] == pytest.approx(np.std(accs, ddof=1))
        assert report["actions"] == ["right", "updown"]

    def test_pretrained_models_on_test_manifest(self, synth_dataset):
        root, out, cfg_path = synth_dataset
        models = root / "models"
        main(["train", "--config", str(cfg_path),
              "--manifest", str(out / "manifest.json"), "--out", str(models)])
        report_path = root / "report.json"
        seg_dir = root / "per_video"
        code = main(["eval", "--config", str(cfg_path), "--models", str(models),
                     "--manifest", str(out / "manifest.json"),
                     "--out", str(report_path), "--dump-segments", str(seg_dir)])
        assert code == 0
        report = json.loads(report_path.read_text())
        assert len(report["folds"]) == 1
        assert report["stddev_accuracy"] is None
        assert list(seg_dir.glob("*_segments.csv"))

    def test_perfect_fixture_scores_100(self, synth_dataset):
        # train on one action and evaluate on one of its own training clips
        root, out, cfg_path = synth_dataset
        manifest = json.loads((out / "manifest.json").read_text())
        solo = {
            "actions": ["right"],
            "train": [e for e in manifest["train"] if e["action"] == "right"],
            "test": [
                {"video": e["video"], "labels": e["labels"]}
                for e in manifest["train"] if e["action"] == "right"
            ],
        }
        (out / "solo.json").write_text(json.dumps(solo))
        models = root / "solo_models"
        assert main(["train", "--config", str(cfg_path),
                     "--manifest", str(out / "solo.json"), "--out", str(models)]) == 0
        report_path = root / "solo_report.json"
        assert main(["eval", "--config", str(cfg_path), "--models", str(models),
                     "--manifest", str(out / "solo.json"),
                     "--out", str(report_path)]) == 0
        assert json.loads(report_path.read_text())["mean_accuracy"] == 100.0

    def test_missing_models_without_folds_is_config_error(self, synth_dataset, capsys):
        root, out, cfg_path = synth_dataset
        manifest = json.loads((out / "manifest.json").read_text())
        del manifest["folds"]
        (out / "flat.json").write_text(json.dumps(manifest))
        code = main(["eval", "--config", str(cfg_path),
                     "--manifest", str(out / "flat.json"),
                     "--out", str(root / "r.json")])
        assert code == 1
        assert "--models" in capsys.readouterr().err

    def test_missing_manifest_is_data_error(self, synth_dataset):
        root, _, cfg_path = synth_dataset
        code = main(["eval", "--config", str(cfg_path),
                     "--manifest", str(root / "missing.json"),
                     "--out", str(root / "r.json")])
        assert code == 2


class TestConfig:
    def test_defaults_match_reference_protocol(self):
        cfg = PipelineConfig()
        assert cfg.tau == 40.0
        assert cfg.frame_stride == 2
        assert cfg.window_frames == 25
        assert cfg.n_components == 1024
        assert cfg.retained_window() == 13

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('tau = 35.5\nper_scenario = true\nseed = 9  # comment\n')
        cfg = load_config(path, {"seed": 11})
        assert cfg.tau == 35.5
        assert cfg.per_scenario is True
        assert cfg.seed == 11

    def test_string_values(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('tau = "oops"\n')
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("bogus = 1\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            load_config(path)

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig(tau=-1.0)
        with pytest.raises(ConfigError):
            PipelineConfig(frame_stride=0)
        with pytest.raises(ConfigError):
            PipelineConfig(window_frames=0)

    def test_retained_window_rounds_up(self):
        assert PipelineConfig(window_frames=25, frame_stride=2).retained_window() == 13
        assert PipelineConfig(window_frames=24, frame_stride=2).retained_window() == 12
        assert PipelineConfig(window_frames=25, frame_stride=3).retained_window() == 9


class TestUsage:
    def test_no_command_is_usage_error(self):
        assert main([]) == 1

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0

    def test_unknown_flag(self):
        assert main(["train", "--bogus"]) == 1
