"""CLI contract tests: exit codes, config merging, artifact layout.

One tiny corpus + training run is shared module-wide; the train step uses
full-size features, so it is kept to a couple of optimizer steps.
"""

import json

import pytest

from sense_siamese.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cache").mkdir()
    code = main([
        "synth",
        "--out-dir", str(root / "data"),
        "--n-pos", "4", "--n-neg", "4",
        "--preset", "easy", "--seed", "11",
    ])
    assert code == 0
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    run_dir = workdir / "run"
    code = main([
        "train",
        "--manifest", str(workdir / "data" / "manifest.json"),
        "--out-dir", str(run_dir),
        "--cache-dir", str(workdir / "cache"),
        "--split", "0.5,0.25,0.25",
        "--batch-size", "4",
        "--max-epochs", "1",
        "--epoch-combos", "8",
        "--seed", "3",
    ])
    assert code == 0
    return run_dir


def test_no_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_synth_writes_manifest_wavs_and_config_echo(workdir):
    data = workdir / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    assert len(manifest) == 8
    assert sorted({e["label"] for e in manifest}) == ["neg", "pos"]
    wavs = list((data / "wavs").glob("*.wav"))
    assert len(wavs) == 16  # audio + geophone per record
    echo = json.loads((data / "synth_config.json").read_text())
    assert echo["preset"] == "easy"
    assert echo["params"]["snr_db"] == 18.0


def test_config_file_merging_and_flag_precedence(tmp_path):
    cfg = tmp_path / "opts.json"
    cfg.write_text(json.dumps({"n_pos": 3, "n_neg": 1, "seed": 5}))
    code = main([
        "synth",
        "--config", str(cfg),
        "--out-dir", str(tmp_path / "d"),
        "--n-pos", "2",  # flag beats config file
    ])
    assert code == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    labels = [e["label"] for e in manifest]
    assert labels.count("pos") == 2
    assert labels.count("neg") == 1


def test_unknown_config_key_fails_cleanly(tmp_path, capsys):
    cfg = tmp_path / "opts.json"
    cfg.write_text(json.dumps({"n_positives": 3}))
    code = main(["synth", "--config", str(cfg), "--out-dir", str(tmp_path / "d")])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ConfigError:")
    assert "n_positives" in err


def test_features_warms_cache_and_reports(workdir, capsys):
    code = main([
        "features",
        "--manifest", str(workdir / "data" / "manifest.json"),
        "--cache-dir", str(workdir / "cache"),
        "--threads", "1",
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "8 records" in out
    assert "(8, 999, 50)" in out
    assert list((workdir / "cache").glob("*.lmsp"))


def test_cache_env_var_wins(workdir, capsys, monkeypatch):
    env_cache = workdir / "env_cache"
    monkeypatch.setenv("SENSE_SIAMESE_CACHE", str(env_cache))
    code = main(["features", "--manifest", str(workdir / "data" / "manifest.json")])
    assert code == 0
    assert str(env_cache) in capsys.readouterr().out
    assert list(env_cache.glob("*.lmsp"))


def test_train_writes_run_artifacts(trained):
    assert (trained / "checkpoint.ssck").exists()
    assert (trained / "metrics.csv").exists()
    config = json.loads((trained / "config.json").read_text())
    assert config["config"]["batch_size"] == 4
    assert config["n_train_records"] == 4


def test_eval_writes_report_and_sweep(workdir, trained, capsys):
    out_dir = workdir / "eval"
    code = main([
        "eval",
        "--checkpoint", str(trained / "checkpoint.ssck"),
        "--manifest", str(workdir / "data" / "manifest.json"),
        "--out-dir", str(out_dir),
        "--cache-dir", str(workdir / "cache"),
        "--records", "test",
        "--split", "0.5,0.25,0.25",
        "--sweep", "0.1:0.9:5",
    ])
    assert code == 0
    report = json.loads((out_dir / "report.json").read_text())
    assert report["split"] == "test"
    assert report["n_records"] == 2
    assert report["n_combos"] == 4
    assert 0.0 <= report["accuracy"] <= 1.0
    assert (out_dir / "histogram.csv").exists()
    sweep_lines = (out_dir / "sweep.csv").read_text().strip().splitlines()
    assert len(sweep_lines) == 6
    echo = json.loads((out_dir / "eval_config.json").read_text())
    assert echo["seed"] == 3  # inherited from the checkpoint


def test_infer_emits_json_verdict(workdir, trained, capsys):
    manifest = json.loads((workdir / "data" / "manifest.json").read_text())
    first_pos = next(e for e in manifest if e["label"] == "pos")
    data = workdir / "data"
    code = main([
        "infer",
        "--checkpoint", str(trained / "checkpoint.ssck"),
        "--audio", str(data / first_pos["audio"]),
        "--geophone", str(data / first_pos["geophone"]),
        "--anchors", str(data / "manifest.json"),
        "--k", "3",
        "--cache-dir", str(workdir / "cache"),
    ])
    assert code == 0
    verdict = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert isinstance(verdict["movement"], bool)
    assert verdict["k"] == 3
    assert len(verdict["distances"]) == 3
    assert verdict["threshold"] == 0.5


def test_missing_manifest_is_a_runtime_error(tmp_path, capsys):
    code = main([
        "train",
        "--manifest", str(tmp_path / "nope.json"),
        "--out-dir", str(tmp_path / "run"),
    ])
    assert code == 1
    assert capsys.readouterr().err.startswith("error: FormatError:")


def test_bad_threads_value(tmp_path, capsys):
    code = main([
        "features", "--manifest", str(tmp_path / "x.json"), "--threads", "0",
    ])
    assert code == 1
    assert "threads" in capsys.readouterr().err


def test_ablate_batch_mode_tiny(workdir):
    out_dir = workdir / "ablate"
    code = main([
        "ablate",
        "--manifest", str(workdir / "data" / "manifest.json"),
        "--out-dir", str(out_dir),
        "--cache-dir", str(workdir / "cache"),
        "--mode", "batch",
        "--split", "0.5,0.25,0.25",
        "--batch-sizes", "4",
        "--epochs", "3",
        "--epoch-combos", "4",
        "--seed", "3",
    ])
    assert code == 0
    report = json.loads((out_dir / "ablation_batch.json").read_text())
    assert report["epochs"] == 3
    assert "4" in report["runs"]
    assert len(report["runs"]["4"]["train_losses"]) == 3
