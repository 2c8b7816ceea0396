import json
import shutil
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from calexp.cli import main
from calexp.data import synth_two_class, write_csv

STUB = str(Path(__file__).with_name("scorer_stub.py"))
FAST = ["--n-trees", "5", "--max-depth", "4"]


@pytest.fixture(scope="module")
def csv_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "d.csv"
    write_csv(synth_two_class(120, seed=2), path, "y")
    return path


def run(*args):
    return main([str(a) for a in args])


class TestCli:
    def test_explain_and_render(self, csv_path, tmp_path, capsys):
        out = tmp_path / "e.json"
        assert run("explain", "--data", csv_path, "--label-col", "y", "--instance", 0, "--out", out, *FAST) == 0
        doc = json.loads(out.read_text())
        assert doc["schema"] == "ce/1" and doc["mode"] == "factual"
        assert "P(y=1)" in capsys.readouterr().out
        svg = tmp_path / "e.svg"
        assert run("render", "--in", out, "--kind", "uncertainty", "--out", svg) == 0
        root = ET.fromstring(svg.read_bytes())
        assert root.get("data-kind") == "uncertainty"

    def test_counterfactual_to_stdout(self, csv_path, capsys):
        assert run("counterfactual", "--data", csv_path, "--label-col", "y", "--instance", 3,
                   "--max-rules", 4, *FAST) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["mode"] == "counterfactual"
        assert len(doc["rules"]) <= 4

    def test_evaluate(self, csv_path, tmp_path):
        out = tmp_path / "r.csv"
        assert run("evaluate", "--data", csv_path, "--label-col", "y", "--folds", 2, "--repeats", 2,
                   "--out", out, *FAST) == 0
        lines = out.read_text().splitlines()
        assert lines[1] == "dataset,model,setup,metric,mean,std"
        assert len(lines) == 2 + 12

    def test_calibrate(self, csv_path, capsys):
        assert run("calibrate", "--data", csv_path, "--label-col", "y", "--instances", "0,5", *FAST) == 0
        rows = json.loads(capsys.readouterr().out)
        assert [r["index"] for r in rows] == [0, 5]
        assert all(r["p0"] <= r["p"] <= r["p1"] for r in rows)

    def test_train_then_reuse(self, csv_path, tmp_path, capsys):
        model = tmp_path / "m.json"
        assert run("train", "--data", csv_path, "--label-col", "y", "--model", "tree", "--out", model) == 0
        assert json.loads(model.read_text())["kind"] == "tree"
        assert run("explain", "--data", csv_path, "--label-col", "y", "--instance", 1,
                   "--model-file", model) == 0
        assert json.loads(capsys.readouterr().out.split("\n", 1)[1])["provenance"]["model"].startswith("tree:")

    def test_bench(self, csv_path, capsys):
        assert run("bench", "--data", csv_path, "--label-col", "y", "--n-instances", 2, *FAST) == 0
        assert capsys.readouterr().out.splitlines()[0] == "dataset,model,mode,n_instances,seconds"

    def test_external_scorer(self, csv_path, capsys):
        spec = f"{sys.executable} {STUB} sigmoid"
        assert run("explain", "--data", csv_path, "--label-col", "y", "--instance", 0,
                   "--scorer", spec, "--discretizer", "binary-median") == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["provenance"]["model"] == "external"

    def test_runtime_errors_exit_1(self, csv_path, tmp_path, capsys):
        assert run("explain", "--data", tmp_path / "missing.csv", "--instance", 0) == 1
        assert run("explain", "--data", csv_path, "--label-col", "nope", "--instance", 0) == 1
        assert run("explain", "--data", csv_path, "--label-col", "y", "--instance", 999, *FAST) == 1
        assert "error:" in capsys.readouterr().err

    def test_usage_error_exit_2(self):
        with pytest.raises(SystemExit) as err:
            run("explain", "--instance", "x")
        assert err.value.code == 2

    @pytest.mark.skipif(shutil.which("calexp") is None, reason="console script not installed")
    def test_console_script(self, csv_path):
        res = subprocess.run(["calexp", "explain", "--data", str(csv_path), "--label-col", "y",
                              "--instance", "0", *FAST], capture_output=True, text=True, timeout=120)
        assert res.returncode == 0
        assert json.loads(res.stdout)["schema"] == "ce/1"
