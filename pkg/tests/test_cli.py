"""Command line behavior: exit codes, option precedence, artifact layout."""

import csv
import json
import os

import numpy as np
import pytest

from smilefusion.cli import SEED_ENV_VAR, main
from smilefusion.data import (
    load_landmark_file,
    save_landmark_file,
    write_manifest,
)
from smilefusion.dmarker import DMARKER_FEATURE_NAMES, read_dmarker_csv
from smilefusion.fusion import FUSION_KINDS, extra_parameter_count

# keeps every training invocation in this file around a tenth of a second
MICRO = [
    "--spatial-dim", "8", "--embed-dim", "12", "--blocks", "1", "--heads", "2",
    "--seq-len", "4", "--width", "8", "--batch-size", "8", "--seed", "3",
]


@pytest.fixture(autouse=True)
def _no_ambient_seed(monkeypatch):
    # the env fallback must only fire when a test asks for it
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    rc = main(["synth", "--out", str(out), "--subjects", "4",
               "--clips-per-subject", "4", "--seed", "9"])
    assert rc == 0
    return str(out / "manifest.csv")


@pytest.fixture(scope="module")
def trained(tmp_path_factory, cli_corpus):
    out = tmp_path_factory.mktemp("cli_train")
    rc = main(["train", "--manifest", cli_corpus, "--out", str(out),
               "--epochs", "2"] + MICRO)
    assert rc == 0
    return str(out)


def _tagged_json(out: str, prefix: str) -> dict:
    for line in out.splitlines():
        if line.startswith(prefix + " "):
            return json.loads(line[len(prefix) + 1:])
    raise AssertionError(f"no {prefix!r} line in:\n{out}")


# -- exit codes -------------------------------------------------------------------


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "smilefusion" in capsys.readouterr().out


def test_subcommand_help_exits_zero(capsys):
    assert main(["train", "--help"]) == 0
    assert "--fusion" in capsys.readouterr().out


def test_missing_subcommand_is_usage_error():
    assert main([]) == 1


def test_unknown_flag_is_usage_error():
    assert main(["synth", "--bogus", "1"]) == 1


def test_missing_required_option(capsys):
    rc = main(["extract", "--out", "x.csv"])
    assert rc == 1
    assert "--manifest is required" in capsys.readouterr().err


def test_nonexistent_manifest_is_usage_error(tmp_path):
    rc = main(["extract", "--manifest", str(tmp_path / "nope.csv"),
               "--out", str(tmp_path / "x.csv")])
    assert rc == 1


def test_unknown_fusion_lists_valid_kinds(capsys, cli_corpus, tmp_path):
    rc = main(["train", "--manifest", cli_corpus, "--out", str(tmp_path),
               "--fusion", "bogus"])
    assert rc == 1
    err = capsys.readouterr().err
    assert "unknown fusion kind" in err
    assert "hadamard" in err


def test_flat_video_is_a_compute_error(capsys, tmp_path):
    # identical frames carry no motion, so descriptor extraction cannot
    # segment any phase; that is a data-content failure, not a usage one
    frame = np.zeros((11, 3))
    frame[:, 0] = np.linspace(-1.0, 1.0, 11)
    frame[:, 1] = np.linspace(0.3, -0.8, 11)
    points = np.repeat(frame[None], 6, axis=0)
    video = tmp_path / "flat.json"
    save_landmark_file(video, points, fps=30.0, subject_id="s000", label=0)
    manifest = tmp_path / "manifest.csv"
    write_manifest(manifest, [("flat.json", "s000", 0, 30.0)])

    rc = main(["extract", "--manifest", str(manifest),
               "--out", str(tmp_path / "d.csv")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


# -- synth ------------------------------------------------------------------------


def test_synth_corpus_layout(capsys, cli_corpus):
    root = os.path.dirname(cli_corpus)
    assert os.path.exists(os.path.join(root, "config.json"))
    rows = open(cli_corpus).read().strip().splitlines()
    assert len(rows) == 1 + 16
    first = rows[1].split(",")[0]
    seq = load_landmark_file(os.path.join(root, first))
    assert seq.points.shape[1:] == (11, 3)


def test_synth_echoes_counts(capsys, tmp_path):
    rc = main(["synth", "--out", str(tmp_path / "c"), "--subjects", "2",
               "--clips-per-subject", "3", "--seed", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "videos 6" in out
    cfg = _tagged_json(out, "config")
    assert cfg["subjects"] == 2 and cfg["seed"] == 1
    assert cfg["command"] == "synth"


def test_synth_no_pose_jitter_flag(capsys, tmp_path):
    rc = main(["synth", "--out", str(tmp_path / "c"), "--subjects", "2",
               "--clips-per-subject", "2", "--seed", "1", "--no-pose-jitter"])
    assert rc == 0
    cfg = _tagged_json(capsys.readouterr().out, "config")
    assert cfg["pose_jitter"] is False


# -- extract ----------------------------------------------------------------------


def test_extract_round_trip(capsys, cli_corpus, tmp_path):
    out = tmp_path / "markers.csv"
    rc = main(["extract", "--manifest", cli_corpus, "--out", str(out)])
    assert rc == 0
    assert "descriptors 16" in capsys.readouterr().out
    subjects, labels, matrix = read_dmarker_csv(out)
    assert len(subjects) == 16
    assert subjects[0] == "s000"
    assert set(labels.tolist()) == {0, 1}
    assert matrix.shape == (16, len(DMARKER_FEATURE_NAMES))
    assert np.all(np.isfinite(matrix))


# -- train / eval -----------------------------------------------------------------


def test_train_writes_all_artifacts(capsys, trained):
    for name in ("config.json", "train_log.csv", "checkpoint.json", "summary.json"):
        assert os.path.exists(os.path.join(trained, name)), name
    with open(os.path.join(trained, "summary.json")) as fh:
        summary = json.load(fh)
    assert summary["videos"] == 16
    assert summary["parameters"] > 0
    assert 0.0 <= summary["train_accuracy"] <= 1.0
    with open(os.path.join(trained, "train_log.csv")) as fh:
        log = list(csv.DictReader(fh))
    assert [int(r["epoch"]) for r in log] == [0, 1]


def test_train_echo_matches_summary_file(capsys, cli_corpus, tmp_path):
    out = tmp_path / "run"
    rc = main(["train", "--manifest", cli_corpus, "--out", str(out),
               "--epochs", "1"] + MICRO)
    assert rc == 0
    echoed = _tagged_json(capsys.readouterr().out, "summary")
    with open(out / "summary.json") as fh:
        assert echoed == json.load(fh)


def test_train_is_deterministic(capsys, cli_corpus, tmp_path):
    args = ["train", "--manifest", cli_corpus, "--epochs", "2"] + MICRO
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("checkpoint.json", "train_log.csv"):
        a = open(tmp_path / "a" / name, "rb").read()
        b = open(tmp_path / "b" / name, "rb").read()
        assert a == b, name
    # summaries match except for the embedded output path
    summaries = []
    for run in ("a", "b"):
        with open(tmp_path / run / "summary.json") as fh:
            payload = json.load(fh)
        payload.pop("checkpoint")
        summaries.append(payload)
    assert summaries[0] == summaries[1]


def test_eval_checkpoint(capsys, cli_corpus, trained, tmp_path):
    metrics_path = tmp_path / "metrics.json"
    rc = main(["eval", "--manifest", cli_corpus,
               "--checkpoint", os.path.join(trained, "checkpoint.json"),
               "--out", str(metrics_path)])
    assert rc == 0
    metrics = _tagged_json(capsys.readouterr().out, "metrics")
    assert metrics["count"] == 16
    assert metrics["video_only"] is False
    assert 0.0 <= metrics["accuracy"] <= 1.0
    with open(metrics_path) as fh:
        assert json.load(fh) == metrics
    # the train summary was computed on the same videos with the same weights
    with open(os.path.join(trained, "summary.json")) as fh:
        summary = json.load(fh)
    assert metrics["accuracy"] == summary["train_accuracy"]


def test_eval_video_only(capsys, cli_corpus, trained):
    rc = main(["eval", "--manifest", cli_corpus,
               "--checkpoint", os.path.join(trained, "checkpoint.json"),
               "--video-only"])
    assert rc == 0
    metrics = _tagged_json(capsys.readouterr().out, "metrics")
    assert metrics["video_only"] is True


def test_strict_checkpoint_refuses_video_only(capsys, cli_corpus, tmp_path):
    out = tmp_path / "strict"
    rc = main(["train", "--manifest", cli_corpus, "--out", str(out),
               "--epochs", "1", "--inference-mode", "strict"] + MICRO)
    assert rc == 0
    rc = main(["eval", "--manifest", cli_corpus,
               "--checkpoint", str(out / "checkpoint.json"), "--video-only"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# -- option precedence ------------------------------------------------------------


def _config_echo_without_running(capsys, tmp_path, extra):
    """Run train against a manifest that does not exist: the resolved config
    is echoed before any data is touched, then the command fails cleanly."""
    rc = main(["train", "--manifest", str(tmp_path / "missing.csv"),
               "--out", str(tmp_path / "out")] + extra)
    assert rc == 1
    return _tagged_json(capsys.readouterr().out, "config")


def test_flags_override_config_file(capsys, tmp_path):
    cfg_path = tmp_path / "opts.json"
    cfg_path.write_text(json.dumps({"epochs": 7, "lr": 0.001, "fusion": "additive"}))
    cfg = _config_echo_without_running(
        capsys, tmp_path, ["--config", str(cfg_path), "--epochs", "3"])
    assert cfg["epochs"] == 3          # flag beats file
    assert cfg["lr"] == 0.001          # file beats default (5e-4)
    assert cfg["fusion"] == "additive"


def test_preset_sits_below_file_and_flags(capsys, tmp_path):
    cfg_path = tmp_path / "opts.json"
    cfg_path.write_text(json.dumps({"lr": 0.002}))
    cfg = _config_echo_without_running(
        capsys, tmp_path,
        ["--preset", "paper-body", "--config", str(cfg_path), "--heads", "8"])
    assert cfg["optimizer"] == "adam"   # preset beats default
    assert cfg["weight_decay"] == 0.0
    assert cfg["seq_len"] == 64
    assert cfg["lr"] == 0.002           # file beats preset (1e-4)
    assert cfg["heads"] == 8            # flag on top


def test_unknown_preset(capsys, tmp_path):
    rc = main(["train", "--manifest", "m.csv", "--out", str(tmp_path),
               "--preset", "bogus"])
    assert rc == 1
    assert "unknown preset" in capsys.readouterr().err


def test_unknown_config_key(capsys, tmp_path):
    cfg_path = tmp_path / "opts.json"
    cfg_path.write_text(json.dumps({"bogus": 1}))
    rc = main(["train", "--manifest", "m.csv", "--out", str(tmp_path / "o"),
               "--config", str(cfg_path)])
    assert rc == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_config_must_be_json_object(capsys, tmp_path):
    cfg_path = tmp_path / "opts.json"
    cfg_path.write_text("[1, 2]")
    rc = main(["synth", "--out", str(tmp_path / "o"), "--config", str(cfg_path)])
    assert rc == 1
    assert "JSON object" in capsys.readouterr().err


def test_config_must_parse(capsys, tmp_path):
    cfg_path = tmp_path / "opts.json"
    cfg_path.write_text("{nope")
    rc = main(["synth", "--out", str(tmp_path / "o"), "--config", str(cfg_path)])
    assert rc == 1
    assert "not valid JSON" in capsys.readouterr().err


def test_seed_env_fallback(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV_VAR, "123")
    rc = main(["synth", "--out", str(tmp_path / "a"), "--subjects", "2",
               "--clips-per-subject", "2"])
    assert rc == 0
    assert _tagged_json(capsys.readouterr().out, "config")["seed"] == 123


def test_explicit_seed_beats_env(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV_VAR, "123")
    rc = main(["synth", "--out", str(tmp_path / "a"), "--subjects", "2",
               "--clips-per-subject", "2", "--seed", "5"])
    assert rc == 0
    assert _tagged_json(capsys.readouterr().out, "config")["seed"] == 5


def test_non_integer_env_seed(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV_VAR, "abc")
    rc = main(["synth", "--out", str(tmp_path / "a")])
    assert rc == 1
    assert SEED_ENV_VAR in capsys.readouterr().err


# -- crossval / fusion-bench ------------------------------------------------------


def test_crossval_artifacts(capsys, cli_corpus, tmp_path):
    out = tmp_path / "cv"
    rc = main(["crossval", "--manifest", cli_corpus, "--out", str(out),
               "--folds", "2", "--epochs", "2"] + MICRO)
    assert rc == 0
    assert "mean_accuracy" in capsys.readouterr().out
    with open(out / "crossval.json") as fh:
        report = json.load(fh)
    assert report["config"]["n_folds"] == 2
    assert len(report["folds"]) == 2
    held_out = [s for fold in report["folds"] for s in fold["test_subjects"]]
    assert sorted(held_out) == ["s000", "s001", "s002", "s003"]
    for fold in report["folds"]:
        assert not set(fold["train_subjects"]) & set(fold["test_subjects"])
    accs = [fold["accuracy"] for fold in report["folds"]]
    assert report["mean_accuracy"] == pytest.approx(np.mean(accs))
    assert os.path.exists(out / "fold0_train.csv")
    assert os.path.exists(out / "fold1_train.csv")


def test_fusion_bench_covers_every_kind(capsys, cli_corpus, tmp_path):
    out = tmp_path / "fb"
    rc = main(["fusion-bench", "--manifest", cli_corpus, "--out", str(out),
               "--folds", "2", "--epochs", "1"] + MICRO)
    assert rc == 0
    with open(out / "fusion_bench.json") as fh:
        payload = json.load(fh)
    assert payload["fold_plan_hash"]
    kinds = [row["kind"] for row in payload["results"]]
    assert kinds == list(FUSION_KINDS)
    for row in payload["results"]:
        assert row["extra_parameters"] == extra_parameter_count(row["kind"], 8, 2)
        assert 0.0 <= row["mean_accuracy"] <= 1.0


# -- grad-check -------------------------------------------------------------------


def test_grad_check_ops_group(capsys):
    rc = main(["grad-check", "--seeds", "1", "--groups", "ops"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "pass" in out and "worst" in out
    assert "FAIL" not in out


def test_grad_check_unreachable_tolerance(capsys):
    rc = main(["grad-check", "--seeds", "1", "--groups", "ops",
               "--tolerance", "1e-15"])
    assert rc == 2
    assert "FAIL" in capsys.readouterr().out


def test_grad_check_unknown_group(capsys):
    rc = main(["grad-check", "--groups", "bogus"])
    assert rc == 1
    assert "unknown grad-check groups" in capsys.readouterr().err


# -- export-embeddings ------------------------------------------------------------


def _read_embedding_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_export_embeddings(capsys, cli_corpus, trained, tmp_path):
    out = tmp_path / "emb.csv"
    rc = main(["export-embeddings", "--manifest", cli_corpus,
               "--checkpoint", os.path.join(trained, "checkpoint.json"),
               "--out", str(out)])
    assert rc == 0
    header, rows = _read_embedding_csv(out)
    assert header[:2] == ["subject_id", "label"]
    assert header[2:] == [f"e{i:03d}" for i in range(8)]   # fused width
    assert len(rows) == 16
    matrix = np.array([[float(v) for v in row[2:]] for row in rows])
    assert np.all(np.isfinite(matrix))


def test_export_baseline_projection_differs(cli_corpus, trained, tmp_path):
    fused, raw = tmp_path / "f.csv", tmp_path / "r.csv"
    ckpt = os.path.join(trained, "checkpoint.json")
    assert main(["export-embeddings", "--manifest", cli_corpus,
                 "--checkpoint", ckpt, "--out", str(fused)]) == 0
    assert main(["export-embeddings", "--manifest", cli_corpus,
                 "--checkpoint", ckpt, "--out", str(raw), "--baseline"]) == 0
    _, rows_f = _read_embedding_csv(fused)
    _, rows_r = _read_embedding_csv(raw)
    a = np.array([[float(v) for v in row[2:]] for row in rows_f])
    b = np.array([[float(v) for v in row[2:]] for row in rows_r])
    assert a.shape == b.shape
    assert not np.allclose(a, b)      # markers actually entered the fused one


def test_export_requires_checkpoint(capsys, cli_corpus, tmp_path):
    rc = main(["export-embeddings", "--manifest", cli_corpus,
               "--out", str(tmp_path / "e.csv")])
    assert rc == 1
    assert "--checkpoint is required" in capsys.readouterr().err
