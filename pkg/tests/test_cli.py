import csv
import io
import json

import pytest

from disttrack.cli import EXIT_IO, EXIT_USAGE, main


def parse_csv(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


@pytest.fixture
def zipf_csv(tmp_path):
    p = tmp_path / "zipf.csv"
    assert main(["gen-zipf", "--n", "5000", "--seed", "3", "--out", str(p)]) == 0
    return p


@pytest.fixture
def rows_csv(tmp_path):
    p = tmp_path / "rows.csv"
    assert main(["gen-matrix", "--n", "1500", "--dim", "6", "--rank", "2", "--out", str(p)]) == 0
    return p


class TestGenerate:
    def test_gen_zipf_stdout(self, capsys):
        assert main(["gen-zipf", "--n", "10", "--seed", "1"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 10 and all(len(ln.split(",")) == 2 for ln in lines)

    def test_gen_matrix_file(self, rows_csv):
        lines = rows_csv.read_text().splitlines()
        assert len(lines) == 1500 and len(lines[0].split(",")) == 6


class TestRun:
    def test_run_hh(self, zipf_csv, capsys):
        argv = ["run-hh", "--protocol", "p2", "--eps", "1e-3", "--sites", "50", "--phi", "0.05",
                "--input", str(zipf_csv), "--seed", "7"]
        assert main(argv) == 0
        out = capsys.readouterr().out
        assert out.startswith("# config ")
        cfg = json.loads(out.splitlines()[0][len("# config "):])
        assert cfg["seed"] == 7 and cfg["m"] == 50 and cfg["protocol"] == "p2"
        (row,) = parse_csv(out)
        assert {"recall", "precision", "err", "msg"} <= set(row)
        assert row["n"] == "5000"

    def test_run_matrix(self, rows_csv, capsys):
        assert main(["run-matrix", "--protocol", "mp3wor", "--eps", "0.1", "--sites", "50",
                     "--input", str(rows_csv)]) == 0
        (row,) = parse_csv(capsys.readouterr().out)
        assert {"err", "msg"} <= set(row)

    def test_generated_stream_and_json(self, tmp_path, capsys):
        js = tmp_path / "s.json"
        assert main(["run-hh", "--protocol", "p1", "--eps", "0.01", "--n", "3000", "--json", str(js)]) == 0
        head = capsys.readouterr().out.splitlines()[0]
        assert '"generated"' in head
        summary = json.loads(js.read_text())
        assert summary["msg"] > 0 and "wall_time" not in summary

    def test_byte_identical(self, zipf_csv, tmp_path):
        outs = []
        for k in range(2):
            p = tmp_path / f"o{k}.csv"
            assert main(["run-hh", "--protocol", "p3", "--eps", "0.05", "--input", str(zipf_csv),
                         "--seed", "2", "--query-every", "1000", "--out", str(p)]) == 0
            outs.append(p.read_bytes())
        assert outs[0] == outs[1]


class TestSweep:
    def test_one_row_per_value(self, rows_csv, capsys):
        values = "5e-3,1e-2,5e-2,1e-1,5e-1"
        assert main(["sweep", "--axis", "eps", "--values", values, "--protocol", "mp2", "--sites", "5",
                     "--input", str(rows_csv)]) == 0
        rows = parse_csv(capsys.readouterr().out)
        assert [float(r["eps"]) for r in rows] == [float(v) for v in values.split(",")]

    def test_sweep_sites(self, zipf_csv, capsys):
        assert main(["sweep", "--axis", "m", "--values", "5,10", "--protocol", "p2", "--eps", "0.01",
                     "--input", str(zipf_csv), "--repetitions", "2"]) == 0
        rows = parse_csv(capsys.readouterr().out)
        assert [r["m"] for r in rows] == ["5", "5", "10", "10"]
        assert len({r["seed"] for r in rows}) == 4


class TestOracle:
    def test_elements(self, zipf_csv, capsys):
        assert main(["oracle", "--input", str(zipf_csv), "--phi", "0.05"]) == 0
        rows = parse_csv(capsys.readouterr().out)
        assert rows[0]["element"] == "1"
        assert all(float(r["share"]) >= 0.05 for r in rows)

    def test_rows(self, rows_csv, capsys):
        assert main(["oracle", "--input", str(rows_csv), "--rows"]) == 0
        (row,) = parse_csv(capsys.readouterr().out)
        assert row["n"] == "1500" and row["d"] == "6"


class TestErrors:
    @pytest.mark.parametrize(
        "argv",
        [
            ["run-hh", "--protocol", "p2", "--eps", "1.5"],
            ["run-hh", "--protocol", "p2", "--sites", "0"],
            ["run-hh", "--protocol", "p9"],
            ["run-hh", "--protocol", "p2", "--bogus"],
            ["sweep", "--axis", "eps", "--values", "a,b", "--protocol", "p2"],
            ["sweep", "--axis", "eps", "--values", "0.1,2", "--protocol", "p2"],
        ],
    )
    def test_validation(self, argv, capsys):
        assert main(argv) == EXIT_USAGE
        assert "error" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["run-hh", "--protocol", "p2", "--input", str(tmp_path / "nope.csv")]) == EXIT_IO
        assert "nope.csv" in capsys.readouterr().err

    def test_bad_content(self, tmp_path, capsys):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3,x\n")
        assert main(["run-matrix", "--protocol", "mp2", "--input", str(p)]) == EXIT_USAGE
        assert "bad.csv:2" in capsys.readouterr().err

    def test_wrong_stream_type(self, rows_csv, capsys):
        assert main(["run-hh", "--protocol", "p2", "--input", str(rows_csv)]) == EXIT_USAGE


class TestOutputDir:
    def test_env_default(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("DISTTRACK_OUT_DIR", str(tmp_path / "out"))
        assert main(["run-hh", "--protocol", "p2", "--eps", "0.05", "--n", "2000"]) == 0
        assert capsys.readouterr().out == ""
        assert (tmp_path / "out" / "run-hh.csv").read_text().startswith("# config")
