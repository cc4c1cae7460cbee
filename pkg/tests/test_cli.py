from __future__ import annotations

import json
from pathlib import Path

import pytest

from qfclt.cli import main


def run(argv):
    return main(argv)


def write_config(tmp_path: Path, payload: dict) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


class TestThetaCheckCommand:
    def test_byte_identical_reruns(self, tmp_path):
        out1, out2 = tmp_path / "one", tmp_path / "two"
        for out in (out1, out2):
            code = run(["theta-check", "--random", "8", "--seed", "7",
                        "--out", str(out), "--no-figures"])
            assert code == 0
        a = (out1 / "theta_check.csv").read_bytes()
        b = (out2 / "theta_check.csv").read_bytes()
        assert a == b

    def test_different_seed_changes_output(self, tmp_path):
        run(["theta-check", "--random", "4", "--seed", "7",
             "--out", str(tmp_path / "a"), "--no-figures"])
        run(["theta-check", "--random", "4", "--seed", "8",
             "--out", str(tmp_path / "b"), "--no-figures"])
        assert ((tmp_path / "a" / "theta_check.csv").read_bytes()
                != (tmp_path / "b" / "theta_check.csv").read_bytes())


class TestValidation:
    def test_deltan_missing_covariance_names_key(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "distribution": {"kind": "rademacher", "dimension": 5},
            "q_form": {"kind": "identity", "dimension": 5},
            "n_grid": [16],
        })
        code = run(["deltan", "--config", cfg, "--out", str(tmp_path / "out")])
        assert code == 2
        assert "covariance" in capsys.readouterr().err

    def test_unknown_suite_name(self, tmp_path):
        assert run(["suite", "nonsense", "--out", str(tmp_path / "out")]) == 2

    def test_missing_config_file(self, tmp_path):
        code = run(["deltan", "--config", str(tmp_path / "nope.json"),
                    "--out", str(tmp_path / "out")])
        assert code == 2

    def test_unreachable_budget_exits_3(self, tmp_path, capsys):
        # a one-dimensional chi-square tail decays too slowly for 1e-6
        cfg = write_config(tmp_path, {
            "q_form": {"kind": "identity", "dimension": 1},
            "covariance": {"kind": "identity", "dimension": 1},
            "x_grid": [1.0],
        })
        code = run(["gauss-cdf", "--config", cfg, "--out", str(tmp_path / "out"),
                    "--tol", "1e-6"])
        assert code == 3
        assert "budget" in capsys.readouterr().err


class TestRateFitCommand:
    def test_passthrough_slope(self, tmp_path, capsys):
        csv = tmp_path / "delta.csv"
        rows = ["# comment", "N,estimate"]
        rows += [f"{n},{7.0 / n}" for n in (16, 32, 64, 128)]
        csv.write_text("\n".join(rows), encoding="utf-8")
        cfg = write_config(tmp_path, {"input": str(csv)})
        code = run(["rate-fit", "--config", cfg, "--out", str(tmp_path / "out"),
                    "--no-figures"])
        assert code == 0
        assert "-1.0000" in capsys.readouterr().out
        table = (tmp_path / "out" / "rate_fit.csv").read_text()
        assert table.splitlines()[0].startswith("# qfclt-version:")


class TestReportOutputs:
    def test_gauss_cdf_files_and_headers(self, tmp_path):
        cfg = write_config(tmp_path, {
            "q_form": {"kind": "identity", "dimension": 2},
            "covariance": {"kind": "identity", "dimension": 2},
            "x_grid": [0.5, 1.0, 2.0, 4.0],
        })
        out = tmp_path / "out"
        code = run(["gauss-cdf", "--config", cfg, "--out", str(out),
                    "--tol", "1e-3"])
        assert code == 0
        table = out / "gauss_cdf.csv"
        lines = table.read_text().splitlines()
        assert lines[0] == "# qfclt-version: 0.1.0"
        assert any(line.startswith("# config-hash:") for line in lines[:4])
        assert any(line.startswith("# seed:") for line in lines[:4])
        assert (out / "gauss_cdf.plotdata.csv").exists()
        assert (out / "gauss_cdf.png").exists()

    def test_minima_command(self, tmp_path):
        cfg = write_config(tmp_path, {
            "lattice": {"basis": [[2.0, 0.0], [0.0, 0.5]]},
        })
        out = tmp_path / "out"
        assert run(["minima", "--config", cfg, "--out", str(out),
                    "--no-figures"]) == 0
        body = (out / "minima.csv").read_text()
        assert "0.5" in body and "exact-enumeration" in body


class TestThreadStability:
    def test_worker_count_does_not_change_bytes(self, tmp_path):
        cfg = write_config(tmp_path, {
            "q_form": {"kind": "identity", "dimension": 3},
            "radii": [2.0, 3.0],
            "shifts_count": 8,
        })
        blobs = []
        for threads, name in ((1, "one"), (3, "three")):
            out = tmp_path / name
            assert run(["lattice-count", "--config", cfg, "--out", str(out),
                        "--threads", str(threads), "--no-figures"]) == 0
            blobs.append((out / "lattice_count.csv").read_bytes())
        assert blobs[0] == blobs[1]


class TestSuite:
    def test_identities_pass_and_rerun_identical(self, tmp_path):
        out1, out2 = tmp_path / "one", tmp_path / "two"
        for out in (out1, out2):
            assert run(["suite", "identities", "--seed", "3",
                        "--out", str(out)]) == 0
        a = (out1 / "suite_identities.csv").read_bytes()
        assert a == (out2 / "suite_identities.csv").read_bytes()
        assert b"PASS" in a
