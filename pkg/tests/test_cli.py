"""Command-line interface: subcommands, exit codes, output files."""

import json

import pytest

from washdetect.cli import EXIT_FATAL, EXIT_FLAGGED, EXIT_OK, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic regulated trio plus one wash-heavy exchange, via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    meta = {
        "R1": {"regulatory_class": "regulated"},
        "R2": {"regulatory_class": "regulated"},
        "R3": {"regulatory_class": "regulated"},
        "U1": {"regulatory_class": "tier2"},
    }
    (root / "meta.json").write_text(json.dumps(meta))
    tapes = []
    for ex, seed, n, wash in [
        ("R1", 1, 150_000, 0.0),
        ("R2", 2, 100_000, 0.0),
        ("R3", 3, 80_000, 0.0),
        ("U1", 4, 100_000, 0.8),
    ]:
        path = root / f"{ex.lower()}.csv"
        code = main(
            [
                "synth",
                "--seed",
                str(seed),
                "--n",
                str(n),
                "--wash",
                str(wash),
                "--exchange-id",
                ex,
                "--profile",
                "stable-panel",
                "--out-file",
                str(path),
            ]
        )
        assert code == EXIT_OK
        tapes.append(str(path))
    return root, tapes


class TestSynth:
    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        argv = ["synth", "--wash", "0.7", "--seed", "7", "--n", "20000"]
        assert main(argv + ["--out-file", str(a)]) == EXIT_OK
        assert main(argv + ["--out-file", str(b)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    def test_full_wash_warns_but_writes(self, tmp_path, capsys):
        path = tmp_path / "w.csv"
        code = main(["synth", "--wash", "1.0", "--seed", "1", "--n", "5000", "--out-file", str(path)])
        assert code == EXIT_OK
        assert path.exists()
        assert "no_authentic_flow" in capsys.readouterr().err

    def test_labels_flag(self, tmp_path):
        path = tmp_path / "l.csv"
        main(["synth", "--wash", "0.5", "--seed", "2", "--n", "2000", "--labels", "--out-file", str(path)])
        assert path.read_text().splitlines()[0].endswith(",label")


class TestIndividualTests:
    def test_benford_passes_regulated(self, workspace, capsys):
        root, tapes = workspace
        assert main(["benford", tapes[0]]) == EXIT_OK
        assert "PASS" in capsys.readouterr().out

    def test_benford_fails_wash(self, workspace, capsys):
        root, tapes = workspace
        main(["benford", tapes[3]])
        assert "FAIL" in capsys.readouterr().out

    def test_cluster(self, workspace, capsys):
        root, tapes = workspace
        assert main(["cluster", tapes[0], "--step", "500"]) == EXIT_OK
        assert "clustering present" in capsys.readouterr().out

    def test_tail(self, workspace, capsys):
        root, tapes = workspace
        assert main(["tail", tapes[0]]) == EXIT_OK
        assert "Pareto-Levy" in capsys.readouterr().out

    def test_roundness(self, workspace, capsys):
        root, tapes = workspace
        code = main(["roundness", *tapes, "--meta", str(root / "meta.json")])
        assert code == EXIT_OK
        assert "DIFFERS" in capsys.readouterr().out

    def test_fisher(self, workspace, capsys):
        root, tapes = workspace
        assert main(["fisher", tapes[3]]) == EXIT_OK
        assert "REJECT" in capsys.readouterr().out

    def test_benford_unrounded_validation_mode(self, workspace, capsys):
        root, tapes = workspace
        assert main(["benford", tapes[0], "--unrounded-only"]) == EXIT_OK
        assert "PASS" in capsys.readouterr().out

    def test_ingest_check_reports_rejects(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text(
            "exchange,pair,timestamp_ms,price,amount\n"
            "X,BTC/USD,1,1.0,0.5\n"
            "X,BTC/USD,2,1.0,0.123456789\n"
        )
        code = main(["ingest-check", str(bad), "--out", str(tmp_path / "rep")])
        assert code == EXIT_FLAGGED
        assert "1 rejected" in capsys.readouterr().out
        report = (tmp_path / "rep" / "rejected_bad.csv").read_text()
        assert "precision overflow" in report


class TestReport:
    def test_full_report(self, workspace, tmp_path):
        root, tapes = workspace
        out = tmp_path / "out"
        code = main(["report", *tapes, "--meta", str(root / "meta.json"), "--out", str(out)])
        assert code == EXIT_OK
        rep = json.loads((out / "report.json").read_text())
        u1 = next(e for e in rep["exchanges"] if e["exchange_id"] == "U1")
        assert all(p["fisher"]["reject"] for p in u1["pairs"])
        assert u1["wash_aggregate"]["wash_percent"] == pytest.approx(80, abs=10)
        assert (out / "report_tests.csv").exists()
        assert (out / "wash_estimates.csv").exists()

    def test_report_deterministic(self, workspace, tmp_path):
        root, tapes = workspace
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        argv = ["report", *tapes, "--meta", str(root / "meta.json")]
        main(argv + ["--out", str(out1)])
        main(argv + ["--out", str(out2)])
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_no_wash_without_regulated(self, workspace, tmp_path):
        root, tapes = workspace
        code = main(["report", tapes[3], "--no-wash", "--out", str(tmp_path / "o")])
        assert code == EXIT_OK

    def test_wash_without_regulated_is_fatal(self, workspace, capsys):
        root, tapes = workspace
        code = main(["report", tapes[3]])
        assert code == EXIT_FATAL
        assert "--no-wash" in capsys.readouterr().err

    def test_empty_input_is_fatal(self, tmp_path, capsys):
        empty = tmp_path / "empty.csv"
        empty.write_text("exchange,pair,timestamp_ms,price,amount\n")
        code = main(["report", str(empty), "--no-wash"])
        assert code == EXIT_FATAL
        assert "no trades ingested" in capsys.readouterr().err

    def test_small_group_flagged_exit_2(self, tmp_path):
        path = tmp_path / "tiny.csv"
        rows = ["exchange,pair,timestamp_ms,price,amount"]
        rows += [f"X,BTC/USD,{i},1.0,0.0{213 + i}" for i in range(30)]
        path.write_text("\n".join(rows) + "\n")
        code = main(["report", str(path), "--no-wash"])
        assert code == EXIT_FLAGGED


class TestBenchmarkModelFlow:
    def test_fit_then_estimate_with_model_file(self, workspace, tmp_path, capsys):
        root, tapes = workspace
        model_path = tmp_path / "model.json"
        code = main(
            ["fit-benchmark", *tapes[:3], "--meta", str(root / "meta.json"), "--out-model", str(model_path)]
        )
        assert code == EXIT_OK
        assert "BTC/USD" in json.loads(model_path.read_text())
        capsys.readouterr()
        code = main(
            ["estimate-wash", tapes[3], "--model", str(model_path), "--out", str(tmp_path / "w")]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "U1 BTC/USD: wash" in out
        rows = (tmp_path / "w" / "wash_estimates.csv").read_text().splitlines()
        assert rows[0].startswith("exchange,pair,wash_volume,wash_percent,bootstrap_sd")


class TestPlotData:
    def test_benford_csv_has_nine_rows(self, workspace, tmp_path):
        root, tapes = workspace
        out = tmp_path / "plots"
        assert main(["plot-data", tapes[0], "--which", "benford", "--out", str(out)]) == EXIT_OK
        lines = (out / "benford_R1_BTC-USD.csv").read_text().strip().splitlines()
        assert len(lines) == 10

    def test_sizes_csv_highlights_round_bins(self, workspace, tmp_path):
        root, tapes = workspace
        out = tmp_path / "plots"
        code = main(
            ["plot-data", tapes[0], "--which", "sizes", "--range", "1:1200", "--out", str(out)]
        )
        assert code == EXIT_OK
        lines = (out / "sizes_R1_BTC-USD.csv").read_text().strip().splitlines()
        assert lines[0] == "size_base_units,count,is_round_bin"
        marked = [l for l in lines[1:] if l.endswith(",1")]
        assert [int(l.split(",")[0]) for l in marked] == [500, 1000]

    def test_tail_csv_fitted_columns_match_exponents(self, workspace, tmp_path):
        root, tapes = workspace
        out = tmp_path / "plots"
        assert main(["plot-data", tapes[0], "--which", "tail", "--out", str(out)]) == EXIT_OK
        lines = (out / "tail_R1_BTC-USD.csv").read_text().strip().splitlines()
        assert lines[0] == "log10_size,log10_density,fitted_ols,fitted_hill"
        import numpy as np

        data = np.array([[float(v) for v in l.split(",")] for l in lines[1:]])
        # fitted columns are straight lines in log10 with the reported slopes
        ols_slope = np.polyfit(data[:, 0], data[:, 2], 1)[0]
        hill_slope = np.polyfit(data[:, 0], data[:, 3], 1)[0]
        assert ols_slope == pytest.approx(hill_slope, abs=1.0)
        assert -2.0 > ols_slope > -4.0


class TestRank:
    def test_improvement(self, capsys):
        assert main(["rank", "--volume", "1e9", "--wash-percent", "70"]) == EXIT_OK
        assert "23 positions" in capsys.readouterr().out

    def test_with_reported_rank(self, capsys):
        main(["rank", "--volume", "1e9", "--wash-percent", "70", "--rank", "40"])
        assert "63" in capsys.readouterr().out
