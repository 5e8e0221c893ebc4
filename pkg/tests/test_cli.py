"""Command-line interface: subcommand outputs, exit codes, config
precedence, locking."""

import json

import pytest

from scalegnn.cli import DirectoryLock, main, read_config_file

GEN = ["gen", "--nodes", "200", "--classes", "3", "--p-in", "0.12",
       "--p-out", "0.01", "--feature-dim", "10", "--separation", "2.0",
       "--seed", "5"]


@pytest.fixture()
def bundle(tmp_path):
    out = tmp_path / "bundle"
    assert main(GEN + ["--out", str(out)]) == 0
    return out


class TestGen:
    def test_writes_bundle_and_resolved_config(self, bundle):
        for f in ("manifest.json", "edges.bin", "features.bin", "labels.bin",
                  "splits.bin", "resolved_config.json"):
            assert (bundle / f).exists()
        assert not (bundle / ".lock").exists()
        resolved = json.loads((bundle / "resolved_config.json").read_text())
        assert resolved["command"] == "gen"
        assert resolved["options"]["nodes"] == 200

    def test_deterministic_across_runs(self, tmp_path):
        main(GEN + ["--out", str(tmp_path / "a")])
        main(GEN + ["--out", str(tmp_path / "b")])
        for f in ("edges.bin", "features.bin", "labels.bin", "splits.bin"):
            assert (tmp_path / "a" / f).read_bytes() == \
                   (tmp_path / "b" / f).read_bytes()

    def test_missing_out_is_usage_error(self):
        assert main(GEN) == 2


class TestPrecompute:
    def test_writes_hop_cache(self, bundle):
        rc = main(["precompute", "--bundle", str(bundle), "--k", "2",
                   "--norm", "sym"])
        assert rc == 0
        for l in range(3):
            assert (bundle / "hops" / "sym_2" / f"x_{l}.bin").exists()


class TestTrain:
    def test_sgc_writes_one_trial_record(self, bundle, tmp_path):
        out = tmp_path / "run"
        rc = main(["train", "--method", "sgc", "--bundle", str(bundle),
                   "--out", str(out), "--hp", "epochs=5", "--allow-custom"])
        assert rc == 0
        rows = (out / "trials.jsonl").read_text().splitlines()
        assert len(rows) == 1
        rec = json.loads(rows[0])
        assert rec["method"] == "sgc" and 0.0 <= rec["val_acc"] <= 1.0
        assert (out / "resolved_config.json").exists()
        assert list((out / "curves").glob("sgc_*.csv"))
        assert not (out / ".lock").exists()

    def test_engcn_stage_curve_segments(self, bundle, tmp_path):
        out = tmp_path / "run"
        rc = main(["train", "--method", "engcn", "--bundle", str(bundle),
                   "--out", str(out), "--stages", "2", "--hp", "epochs=3",
                   "--hp", "hidden_dim=16", "--hp", "batch_size=64",
                   "--allow-custom"])
        assert rc == 0
        lines = (out / "stage_curves.csv").read_text().splitlines()
        assert lines[0] == "stage,epoch,loss,val_acc"
        stages = {line.split(",")[0] for line in lines[1:]}
        assert stages == {"0", "1", "2"}  # --stages 2 -> 2+1 segments
        assert len(lines) - 1 == 3 * 3

    def test_unknown_method_exits_2(self, bundle, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["train", "--method", "gat", "--bundle", str(bundle),
                  "--out", str(tmp_path / "x")])
        assert err.value.code == 2

    def test_unknown_hp_key_exits_2(self, bundle, tmp_path):
        rc = main(["train", "--method", "sgc", "--bundle", str(bundle),
                   "--out", str(tmp_path / "x"), "--hp", "bogus=1"])
        assert rc == 2

    def test_value_outside_candidates_exits_2(self, bundle, tmp_path):
        rc = main(["train", "--method", "sgc", "--bundle", str(bundle),
                   "--out", str(tmp_path / "x"), "--hp", "epochs=7"])
        assert rc == 2

    def test_allow_custom_lifts_domain_check(self, bundle, tmp_path):
        rc = main(["train", "--method", "sgc", "--bundle", str(bundle),
                   "--out", str(tmp_path / "x"), "--hp", "epochs=7",
                   "--allow-custom"])
        assert rc == 0

    def test_locked_directory_exits_1(self, bundle, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        (out / ".lock").write_text("123")
        rc = main(["train", "--method", "sgc", "--bundle", str(bundle),
                   "--out", str(out), "--hp", "epochs=20"])
        assert rc == 1

    def test_corrupt_bundle_exits_1(self, bundle, tmp_path):
        blob = bytearray((bundle / "labels.bin").read_bytes())
        blob[20] ^= 0x01
        (bundle / "labels.bin").write_bytes(bytes(blob))
        rc = main(["train", "--method", "sgc", "--bundle", str(bundle),
                   "--out", str(tmp_path / "x"), "--hp", "epochs=20"])
        assert rc == 1


class TestConfigFile:
    def test_parse_flat_key_value(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# a comment\nmethod = sgc\nepochs = 20\n"
                       "autoscale = true\nname = mini  # trailing\n")
        parsed = read_config_file(cfg)
        assert parsed == {"method": "sgc", "epochs": 20, "autoscale": True,
                          "name": "mini"}

    def test_flag_overrides_file(self, bundle, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("method = sgc\nepochs = 20\n")
        out = tmp_path / "run"
        rc = main(["train", "--config", str(cfg), "--bundle", str(bundle),
                   "--out", str(out), "--hp", "epochs=30"])
        assert rc == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["resolved_hyperparameters"]["epochs"] == 30

    def test_file_fills_missing_method(self, bundle, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("method = sgc\nepochs = 20\n")
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--bundle", str(bundle),
                     "--out", str(out)]) == 0
        rec = json.loads((out / "trials.jsonl").read_text())
        assert rec["method"] == "sgc"

    def test_malformed_line_exits_2(self, bundle, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("method sgc\n")
        rc = main(["train", "--config", str(cfg), "--bundle", str(bundle),
                   "--out", str(tmp_path / "x")])
        assert rc == 2


class TestHpsearch:
    def test_trial_count_and_outputs(self, bundle, tmp_path):
        out = tmp_path / "search"
        rc = main(["hpsearch", "--method", "lp", "--bundle", str(bundle),
                   "--out", str(out), "--axes", "alpha,num_propagations",
                   "--hp", "epochs=5", "--allow-custom"])
        assert rc == 0
        log = json.loads((out / "search_log.json").read_text())
        assert log["trial_count"] == 4 + 3  # sum over axes, not product
        assert log["complete"] is True
        assert len((out / "trials.jsonl").read_text().splitlines()) == 7

    def test_budget_flags_incomplete(self, bundle, tmp_path):
        out = tmp_path / "search"
        rc = main(["hpsearch", "--method", "sgc", "--bundle", str(bundle),
                   "--out", str(out), "--axes", "learning_rate,hidden_dim",
                   "--budget", "2", "--hp", "epochs=5", "--allow-custom"])
        assert rc == 0
        log = json.loads((out / "search_log.json").read_text())
        assert log["complete"] is False
        assert log["trial_count"] <= 2

    def test_unknown_axis_exits_2(self, bundle, tmp_path):
        rc = main(["hpsearch", "--method", "sgc", "--bundle", str(bundle),
                   "--out", str(tmp_path / "x"), "--axes", "nope"])
        assert rc == 2


class TestBenchAndReport:
    def test_bench_report_schema(self, bundle, tmp_path):
        out = tmp_path / "bench"
        rc = main(["bench", "--bundle", str(bundle), "--out", str(out),
                   "--methods", "sgc,saint-node", "--epochs", "2",
                   "--hp", "hidden_dim=16", "--hp", "batch_size=64"])
        assert rc == 0
        report = json.loads((out / "bench_report.json").read_text())
        assert report["schema_version"] == 1
        assert [r["method"] for r in report["rows"]] == ["sgc", "saint-node"]
        assert report["rows"][0]["activation_bytes"] == 0

    def test_report_aggregates(self, bundle, tmp_path):
        t1, t2 = tmp_path / "t1", tmp_path / "t2"
        for out, seed in ((t1, "0"), (t2, "1")):
            main(["train", "--method", "sgc", "--bundle", str(bundle),
                  "--out", str(out), "--seed", seed, "--hp", "epochs=5",
                  "--allow-custom"])
        out = tmp_path / "agg"
        rc = main(["report", str(t1 / "trials.jsonl"),
                   str(t2 / "trials.jsonl"), "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["rows"][0]["trials"] == 2

    def test_report_without_inputs_exits_2(self):
        assert main(["report"]) == 2


class TestLock:
    def test_lock_released_on_error(self, tmp_path):
        target = tmp_path / "d"
        try:
            with DirectoryLock(target):
                assert (target / ".lock").exists()
                raise RuntimeError("boom")
        except RuntimeError:
            pass
        assert not (target / ".lock").exists()

    def test_lock_excludes_second_holder(self, tmp_path):
        with DirectoryLock(tmp_path):
            with pytest.raises(RuntimeError, match="locked"):
                DirectoryLock(tmp_path).__enter__()
