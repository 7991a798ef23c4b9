import csv
import json

import pytest

from fairneg.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_OK, compare_reports, parse_grid, relative_improvement, run)
from fairneg.config import ConfigError, load_config

SYNTH = ["--set", "synth.users=80", "--set", "synth.items=40", "--set", "synth.density=0.15",
         "--set", "synth.feedback_share=0.8,0.2", "--set", "synth.labels=Sci-Fi,Horror"]
FAST = ["--set", "train.epochs=3", "--set", "model.dim=8", "--set", "train.batch_size=128"]


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.setenv("FAIRNEG_OUT_ROOT", str(tmp_path))
    assert run(["synth", *SYNTH, "--out", "raw"]) == EXIT_OK
    prep = ["--set", f"data.ratings={tmp_path}/raw/ratings.dat", "--set", f"data.attributes={tmp_path}/raw/items.csv",
            "--set", "data.groups=Sci-Fi,Horror"]
    assert run(["prepare", *prep, "--out", "prep"]) == EXIT_OK
    return tmp_path


def train(ws, name, *extra):
    return run(["train", "--set", f"data.prepared={ws}/prep", *FAST, *extra, "--out", f"runs/{name}"])


class TestConfig:
    def test_file_and_override_precedence(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[sampler]\nbeta = 0.3\nstrategy = nncf\n[train]\ngamma = 0.05\n")
        cfg = load_config(ini, ["sampler.beta=0.7"])
        assert cfg["sampler.beta"] == 0.7 and cfg["sampler.strategy"] == "nncf" and cfg["train.gamma"] == 0.05
        assert cfg.train_config().sampler.beta == 0.7

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            load_config(None, ["sampler.bta=0.3"])

    def test_type_check(self):
        with pytest.raises(ConfigError):
            load_config(None, ["train.epochs=many"])

    def test_digest_ignores_paths(self):
        a = load_config(None, ["data.prepared=/x"]).digest()
        assert a == load_config(None, ["data.prepared=/y"]).digest()
        assert a != load_config(None, ["sampler.beta=0.4"]).digest()


class TestExitCodes:
    def test_beta_rejected_before_work(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FAIRNEG_OUT_ROOT", str(tmp_path))
        assert run(["train", "--set", "sampler.beta=1.5", "--out", "r"]) == EXIT_CONFIG
        assert not (tmp_path / "r").exists()

    def test_missing_attribute_file(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("FAIRNEG_OUT_ROOT", str(tmp_path))
        (tmp_path / "r.dat").write_text("1::1::5::0\n")
        code = run(["prepare", "--set", f"data.ratings={tmp_path}/r.dat", "--set", f"data.attributes={tmp_path}/no.csv",
                    "--set", "data.groups=a", "--out", "p"])
        assert code == EXIT_DATA
        assert "no.csv" in capsys.readouterr().err

    def test_missing_prepared(self, tmp_path):
        assert run(["train", "--set", f"data.prepared={tmp_path}/nothing", "--out", str(tmp_path / "r")]) == EXIT_DATA

    def test_required_keys(self, tmp_path):
        assert run(["prepare", "--out", str(tmp_path / "p")]) == EXIT_CONFIG


class TestPipeline:
    def test_train_artifacts(self, workspace):
        assert train(workspace, "fn", "--set", "sampler.strategy=fairneg") == EXIT_OK
        run_dir = workspace / "runs/fn"
        manifest = json.loads((run_dir / "run_manifest.json").read_text())
        header, cols = (run_dir / "epoch_log.csv").read_text().splitlines()[:2]
        assert header == f"# config_hash={manifest['config_hash']} data_hash={manifest['data_hash']}"
        assert {"p_0", "p_1", "recall_disp_loss", "gbce_0", "grad_norm_neg_1"} <= set(cols.split(","))
        assert manifest["config"]["sampler.beta"] == 0.5 and "wall_clock_seconds" in manifest

        assert run(["evaluate", str(run_dir)]) == EXIT_OK
        assert sorted(p.name for p in run_dir.glob("report_k*.json")) == ["report_k20.json", "report_k30.json"]
        rep = json.loads((run_dir / "report_k20.json").read_text())
        assert {"recall_disp", "recall_min", "recall_avg", "ndcg", "precision", "recall"} <= set(rep)
        assert rep["data_hash"] == manifest["data_hash"]

    def test_uns_logs_frozen_p(self, workspace):
        assert train(workspace, "uns", "--set", "sampler.strategy=uns") == EXIT_OK
        rows = list(csv.DictReader((workspace / "runs/uns/epoch_log.csv").read_text().splitlines()[1:]))
        assert len({(r["p_0"], r["p_1"]) for r in rows}) == 1

    def test_determinism_byte_identical(self, workspace):
        for name in ("a", "b"):
            assert train(workspace, name, "--seed", "7") == EXIT_OK
            assert run(["evaluate", str(workspace / f"runs/{name}")]) == EXIT_OK
        for f in ("epoch_log.csv", "checkpoint.json", "report_k20.json", "report_k20.csv", "report_k30.csv"):
            assert (workspace / f"runs/a/{f}").read_bytes() == (workspace / f"runs/b/{f}").read_bytes(), f

    def test_evaluate_refuses_hash_mismatch(self, workspace):
        assert train(workspace, "x") == EXIT_OK
        test_file = workspace / "prep/test.tsv"
        lines = test_file.read_text().splitlines()
        test_file.write_text("\n".join(lines[:-1]) + "\n")
        assert run(["evaluate", str(workspace / "runs/x")]) == EXIT_DATA

    def test_compare(self, workspace):
        for name, strat in (("u", "uns"), ("f", "fairneg")):
            assert train(workspace, name, "--set", f"sampler.strategy={strat}") == EXIT_OK
            assert run(["evaluate", str(workspace / f"runs/{name}")]) == EXIT_OK
        assert run(["compare", str(workspace / "runs/u"), str(workspace / "runs/f"), "--out", "cmp"]) == EXIT_OK
        lines = (workspace / "cmp/comparison_k20.csv").read_text().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert [ln.split(",")[0] for ln in lines[1:]] == ["method", "UNS", "FairNeg", "RI"]

    def test_compare_rejects_other_split(self, workspace):
        assert train(workspace, "u", "--set", "sampler.strategy=uns") == EXIT_OK
        assert run(["evaluate", str(workspace / "runs/u")]) == EXIT_OK
        assert run(["prepare", "--set", f"data.ratings={workspace}/raw/ratings.dat",
                    "--set", f"data.attributes={workspace}/raw/items.csv", "--set", "data.groups=Sci-Fi,Horror",
                    "--seed", "5", "--out", "prep2"]) == EXIT_OK
        assert run(["train", "--set", f"data.prepared={workspace}/prep2", *FAST, "--out", "runs/f2"]) == EXIT_OK
        assert run(["evaluate", str(workspace / "runs/f2")]) == EXIT_OK
        assert run(["compare", str(workspace / "runs/u"), str(workspace / "runs/f2")]) == EXIT_DATA

    def test_sweep_marks_failed_points(self, workspace):
        code = run(["sweep", "--set", f"data.prepared={workspace}/prep", *FAST, "--set", "train.epochs=1",
                    "--grid", "sampler.beta=0.5,1.5", "--out", "sw"])
        assert code == EXIT_OK
        rows = list(csv.DictReader((workspace / "sw/summary.csv").open()))
        assert [r["status"] for r in rows][0] == "ok"
        assert rows[1]["status"].startswith("failed")
        assert rows[0]["Recall-Disp@20"] and rows[0]["F1@30"]


class TestCompareMath:
    def test_ri_disp(self):
        assert f"{100 * relative_improvement('Recall-Disp', 0.3179, 0.0287):.2f}%" == "90.97%"

    def test_ri_recall(self):
        assert f"{100 * relative_improvement('R', 0.4622, 0.4734):.2f}%" == "2.42%"

    def test_self_comparison(self):
        rep = {"recall_disp": 0.3, "recall_min": 0.2, "recall_avg": 0.3, "ndcg": 0.1, "precision": 0.05,
               "recall": 0.4, "f1": 0.09}
        table = compare_reports([("UNS", rep), ("FairNeg", rep)], 20, "UNS", "FairNeg")
        assert table.splitlines()[-1] == "RI," + ",".join(["0.00%"] * 7)


class TestGrid:
    def test_gamma_grid(self):
        key, values = parse_grid("train.gamma=0:0.2:0.05")
        assert key == "train.gamma" and values == [0.0, 0.05, 0.1, 0.15, 0.2]

    def test_beta_grid(self):
        assert parse_grid("sampler.beta=0.1:0.9:0.2")[1] == [0.1, 0.3, 0.5, 0.7, 0.9]

    @pytest.mark.parametrize("spec", ["sampler.beta=", "sampler.beta=0.9:0.1:0.2", "train.gamma=0:1:0"])
    def test_empty_grid(self, spec):
        with pytest.raises(ConfigError):
            parse_grid(spec)

    def test_only_gamma_and_beta(self):
        with pytest.raises(ConfigError):
            parse_grid("model.dim=8,16")
