import csv
import json

import numpy as np
import pytest

from semforge.cli import (
    EXIT_IO,
    EXIT_OK,
    EXIT_VALIDATION,
    InputFormatError,
    main,
    read_assignment,
    read_matrix,
)


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--p", "6", "--n", "250", "--seed", "11"]) == EXIT_OK
    return out


def inputs(d):
    return ["--y", str(d / "Y.tsv"), "--x", str(d / "X.tsv"), "--assign", str(d / "assign.json")]


def read_tsv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh, delimiter="\t"))


class TestReaders:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("a,b\n1,2.5\n-3,4e-2\n")
        names, M = read_matrix(p)
        assert names == ("a", "b")
        np.testing.assert_array_equal(M, [[1, 2.5], [-3, 0.04]])

    @pytest.mark.parametrize(
        "text, where",
        [("a\tb\n1\t2\n3\n", "line 3"), ("a\tb\n1\tz\n", "line 2, column 2"), ("a\ta\n1\t2\n", "line 1, column 2"), ("", "line 1")],
    )
    def test_malformed_location(self, tmp_path, text, where):
        p = tmp_path / "m.tsv"
        p.write_text(text)
        with pytest.raises(InputFormatError, match=where):
            read_matrix(p)

    def test_assignment_json_error_location(self, tmp_path):
        p = tmp_path / "a.json"
        p.write_text('{"y0": ["x0"],\n "y1": [x1]}')
        with pytest.raises(InputFormatError, match="line 2, column 9"):
            read_assignment(p, ("y0", "y1"), ("x0", "x1"))

    def test_assignment_by_name(self, tmp_path):
        p = tmp_path / "a.json"
        p.write_text(json.dumps({"b": ["u"], "a": ["w", "v"]}))
        ea = read_assignment(p, ("a", "b"), ("u", "v", "w"))
        assert ea.sets == ((2, 1), (0,))


class TestFit:
    def test_happy_path(self, sim_dir, tmp_path):
        out = tmp_path / "fit"
        assert main(["fit", *inputs(sim_dir), "--out", str(out)]) == EXIT_OK
        rows = read_tsv(out / "edges.tsv")
        assert rows[0] == ["source", "target", "effect"]
        truth = {tuple(r[:2]) for r in read_tsv(sim_dir / "truth_edges.tsv")[1:]}
        found = {tuple(r[:2]) for r in rows[1:]}
        assert truth <= found
        rep = json.loads((out / "report.json").read_text())
        assert rep["config"]["fit"]["folds"] == 5
        assert set(rep["taus"]) == {f"g{k}" for k in range(6)}
        assert len(rep["equations"]) == 6

    def test_overlap_is_validation_error(self, sim_dir, tmp_path, capsys):
        a = json.loads((sim_dir / "assign.json").read_text())
        a["g1"] = ["m1", "m0"]
        bad = tmp_path / "a.json"
        bad.write_text(json.dumps(a))
        args = ["fit", "--y", str(sim_dir / "Y.tsv"), "--x", str(sim_dir / "X.tsv"), "--assign", str(bad)]
        assert main([*args, "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
        assert "index 0" in capsys.readouterr().err

    def test_missing_file(self, sim_dir, tmp_path):
        args = ["fit", "--y", str(tmp_path / "nope.tsv"), "--x", str(sim_dir / "X.tsv"), "--assign", str(sim_dir / "assign.json")]
        assert main([*args, "--out", str(tmp_path / "o")]) == EXIT_IO

    def test_malformed_matrix(self, sim_dir, tmp_path, capsys):
        bad = tmp_path / "Y.tsv"
        bad.write_text("g0\tg1\n1\t2\n1\n")
        args = ["fit", "--y", str(bad), "--x", str(sim_dir / "X.tsv"), "--assign", str(sim_dir / "assign.json")]
        assert main([*args, "--out", str(tmp_path / "o")]) == EXIT_IO
        assert "line 3" in capsys.readouterr().err

    def test_threads_env_fallback(self, sim_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("SEMFORGE_THREADS", "2")
        assert main(["fit", *inputs(sim_dir), "--out", str(tmp_path / "a")]) == EXIT_OK
        monkeypatch.delenv("SEMFORGE_THREADS")
        assert main(["fit", *inputs(sim_dir), "--out", str(tmp_path / "b"), "--threads", "1"]) == EXIT_OK
        assert (tmp_path / "a" / "edges.tsv").read_bytes() == (tmp_path / "b" / "edges.tsv").read_bytes()


class TestBootstrap:
    def test_byte_identical(self, sim_dir, tmp_path):
        for name in ("a", "b"):
            assert main(["bootstrap", *inputs(sim_dir), "--out", str(tmp_path / name), "--boot-b", "2", "--seed", "5"]) == 0
        for f in ("edges.tsv", "report.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_threshold(self, sim_dir, tmp_path):
        out = tmp_path / "t"
        assert main(["bootstrap", *inputs(sim_dir), "--out", str(out), "--boot-b", "5", "--boot-threshold", "0.8"]) == 0
        rows = read_tsv(out / "edges.tsv")
        assert rows[0] == ["source", "target", "effect", "frequency", "B"]
        assert all(float(r[3]) >= 0.8 for r in rows[1:])
        keys = [(-float(r[3]), r[0], r[1]) for r in rows[1:]]
        assert keys == sorted(keys)
        rep = json.loads((out / "report.json").read_text())
        assert rep["skipped"] == 0 and rep["requested"] == 5


class TestSimulateAndBench:
    def test_simulate_bundle(self, sim_dir):
        for f in ("Y.tsv", "X.tsv", "assign.json", "truth_edges.tsv", "truth.json"):
            assert (sim_dir / f).exists()
        names, Y = read_matrix(sim_dir / "Y.tsv")
        assert Y.shape == (250, 6) and names[0] == "g0"

    def test_bench_outputs(self, tmp_path):
        out = tmp_path / "bench"
        args = ["bench", "--out", str(out), "--p", "6", "--n", "60,120", "--replicates", "2", "--strategies", "ridge,alasso"]
        assert main([*args, "--no-timing"]) == EXIT_OK
        with open(out / "metrics.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 2 * 2
        assert list(rows[0]) == ["topology", "density", "ee_count", "n", "strategy", "replicate", "power", "fdr", "fit_seconds"]
        with open(out / "summary.csv", newline="") as fh:
            summ = list(csv.DictReader(fh))
        for s in summ:
            vals = [float(r["power"]) for r in rows if r["n"] == s["n"] and r["strategy"] == s["strategy"]]
            assert abs(float(s["power_mean"]) - np.mean(vals)) < 1e-12
        first = (out / "metrics.csv").read_bytes()
        assert main([*args, "--no-timing"]) == EXIT_OK
        assert (out / "metrics.csv").read_bytes() == first

    def test_bad_parameter(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--p", "1"]) == EXIT_VALIDATION
