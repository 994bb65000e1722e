import json

import pytest

from ldrk import cli
from ldrk import io as lio
from ldrk.ctrl import _Game

SMALL = {
    "build-redunet": {"kind": "redunet", "seed": 0, "data": {"D": 6, "dims": [1, 1], "samples": 12, "test_samples": 6}, "redunet": {"num_layers": 5}},
    "spectral-build": {
        "kind": "spectral",
        "seed": 0,
        "data": {"kind": "shift-orbit", "T": 8, "bands": [[1], [3]], "samples": 4, "test_samples": 2, "noise": 0.0},
        "redunet": {"num_layers": 4},
    },
    "bench-spectral": {"kind": "bench", "seed": 0, "spectral": {"bench_T": [16, 32], "bench_samples": 2, "bench_reps": 2}},
    "attention-profile": {"kind": "attention-profile", "seed": 0, "attention": {"d": 4, "n": 8, "heads": 2}},
    "ctrl-train": {
        "kind": "ctrl",
        "seed": 0,
        "data": {"D": 10, "dims": [1, 1], "samples": 20, "test_samples": 0, "noise": 0.0},
        "ctrl": {"d": 4, "rounds": 3},
    },
    "ctrl-incremental": {
        "kind": "ctrl-incremental",
        "seed": 0,
        "data": {"D": 10, "dims": [1, 1, 1], "samples": 20, "test_samples": 0, "noise": 0.0},
        "ctrl": {"d": 4, "rounds": 3},
    },
}

EXPECTED_FILES = {
    "build-redunet": {"model.json", "trace.csv", "metrics.csv"},
    "spectral-build": {"model.json", "trace.csv", "metrics.csv"},
    "bench-spectral": {"bench.csv", "metrics.csv"},
    "attention-profile": {"profile.csv", "metrics.csv"},
    "ctrl-train": {"state.json", "history.csv", "metrics.csv"},
    "ctrl-incremental": {"state.json", "state_stage1.json", "history.csv", "history_stage1.csv", "metrics.csv"},
}


def config_file(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def metrics(run_dir):
    _, rows = lio.read_csv(run_dir / "metrics.csv")
    return {name: float(value) for name, value in rows}


class TestSubcommands:
    @pytest.mark.parametrize("command", list(SMALL))
    def test_runs_and_writes_outputs(self, tmp_path, command):
        out = tmp_path / "run"
        code = cli.main([command, "--config", config_file(tmp_path, SMALL[command]), "--out", str(out)])
        assert code == cli.EXIT_OK
        manifest = lio.load_json(out / "manifest.json")
        assert manifest["exit_code"] == 0 and manifest["threads"] == 1 and manifest["command"] == command
        assert EXPECTED_FILES[command] <= set(manifest["files"])
        assert manifest["config"]["seed"] == 0 and len(manifest["config_hash"]) == 64

    def test_gen_data_round_trips(self, tmp_path):
        out = tmp_path / "data"
        doc = SMALL["build-redunet"]
        assert cli.main(["gen-data", "--config", config_file(tmp_path, doc), "--out", str(out), "--binary"]) == 0
        Xc, pc = lio.load_dataset(out / "train.csv")
        Xb, pb = lio.load_dataset(out / "train.bin")
        assert Xc.shape == (6, 24) and (Xc == Xb).all() and (pc.labels == pb.labels).all()

    def test_eval_matches_build(self, tmp_path):
        cfg = config_file(tmp_path, SMALL["build-redunet"])
        assert cli.main(["build-redunet", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
        assert cli.main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
        model = str(tmp_path / "b" / "model.json")
        assert cli.main(["eval", "--config", cfg, "--model", model, "--out", str(tmp_path / "e")]) == 0
        assert cli.main(["eval", "--model", model, "--data", str(tmp_path / "d" / "test.csv"), "--out", str(tmp_path / "f")]) == 0
        built, from_cfg, from_file = metrics(tmp_path / "b"), metrics(tmp_path / "e"), metrics(tmp_path / "f")
        assert from_cfg["eval_accuracy"] == built["test_accuracy"] == from_file["eval_accuracy"]
        header, rows = lio.read_csv(tmp_path / "e" / "predictions.csv")
        assert header == ["sample_id", "class", "predicted"] and len(rows) == 12

    def test_attention_alias(self, tmp_path):
        cfg = config_file(tmp_path, SMALL["attention-profile"])
        assert cli.main(["attention-bridge", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        assert lio.load_json(tmp_path / "a" / "manifest.json")["command"] == "attention-profile"

    def test_seed_override_changes_hash(self, tmp_path):
        cfg = config_file(tmp_path, SMALL["attention-profile"])
        cli.main(["attention-profile", "--config", cfg, "--out", str(tmp_path / "a")])
        cli.main(["attention-profile", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "b")])
        a, b = (lio.load_json(tmp_path / x / "manifest.json") for x in "ab")
        assert b["config"]["seed"] == 5 and a["config_hash"] != b["config_hash"]


class TestOutputDirectory:
    def test_env_root_and_hash_name(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LDRK_OUT_DIR", str(tmp_path / "root"))
        cfg = config_file(tmp_path, SMALL["attention-profile"])
        assert cli.main(["attention-profile", "--config", cfg]) == 0
        (run,) = (tmp_path / "root").iterdir()
        manifest = lio.load_json(run / "manifest.json")
        assert run.name == f"attention-profile-{manifest['config_hash'][:10]}"


class TestExitCodes:
    def test_unknown_config_key(self, tmp_path, capsys):
        bad = {**SMALL["ctrl-train"], "ctrl": {"foo": 1}}
        assert cli.main(["ctrl-train", "--config", config_file(tmp_path, bad)]) == cli.EXIT_USAGE
        assert "ctrl.foo: unknown key" in capsys.readouterr().err

    def test_kind_mismatch(self, tmp_path):
        assert cli.main(["ctrl-train", "--config", config_file(tmp_path, SMALL["build-redunet"])]) == cli.EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["ctrl-train", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_USAGE

    def test_bad_threads(self, tmp_path):
        cfg = config_file(tmp_path, SMALL["attention-profile"])
        assert cli.main(["attention-profile", "--config", cfg, "--threads", "0"]) == cli.EXIT_USAGE

    def test_bad_flag_and_subcommand(self):
        for argv in (["ctrl-train", "--bogus"], ["frobnicate"], []):
            with pytest.raises(SystemExit) as info:
                cli.main(argv)
            assert info.value.code == cli.EXIT_USAGE

    def test_divergence_exit_two(self, tmp_path, monkeypatch):
        calls = {"n": 0}
        original = _Game.utility

        def flaky(self, *args, **kwargs):
            calls["n"] += 1
            return float("nan") if calls["n"] > 10 else original(self, *args, **kwargs)

        monkeypatch.setattr(_Game, "utility", flaky)
        doc = {**SMALL["ctrl-train"], "ctrl": {"d": 4, "rounds": 20}}
        out = tmp_path / "run"
        assert cli.main(["ctrl-train", "--config", config_file(tmp_path, doc), "--out", str(out)]) == cli.EXIT_DIVERGED
        manifest = lio.load_json(out / "manifest.json")
        assert manifest["exit_code"] == 2 and manifest["error"]
        assert "last_good_state.json" in manifest["files"]
        lio.state_from_dict(lio.load_json(out / "last_good_state.json"))


class TestReport:
    def test_table(self, tmp_path, capsys):
        cfg = config_file(tmp_path, SMALL["build-redunet"])
        cli.main(["build-redunet", "--config", cfg, "--out", str(tmp_path / "b")])
        capsys.readouterr()
        assert cli.main(["report", str(tmp_path / "b")]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("run: build-redunet")
        assert lines[1].split() == ["metric", "value"]
        names = [line.split()[0] for line in lines[3:]]
        assert names == list(metrics(tmp_path / "b"))

    def test_missing_run(self, tmp_path):
        assert cli.main(["report", str(tmp_path)]) == cli.EXIT_USAGE
