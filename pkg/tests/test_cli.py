import json

import numpy as np
import pytest
from click.testing import CliRunner

from armlab.cli import main


@pytest.fixture
def runner():
    return CliRunner()


class TestExponentsCommand:
    def test_q2_table_contains_universal_beta(self, runner):
        res = runner.invoke(main, ["exponents", "--q", "2", "--jmax", "2",
                                   "--format", "csv"])
        assert res.exit_code == 0
        rows = {tuple(line.split(",")[:2]): line.split(",")
                for line in res.output.strip().splitlines()[1:]}
        assert float(rows[("boundary_beta_even", "1")][4]) == 1.0

    def test_kappa6_collapse_values(self, runner):
        res = runner.invoke(main, ["exponents", "--kappa", "6", "--jmax", "3",
                                   "--format", "json"])
        assert res.exit_code == 0
        rows = [json.loads(line) for line in res.output.strip().splitlines()]
        for r in rows:
            if r["family"].startswith("boundary"):
                L = r["arms"]
                assert abs(r["value"] - L * (L + 1) / 6.0) < 1e-12

    def test_conflicting_parameters_usage_error(self, runner):
        res = runner.invoke(main, ["exponents", "--kappa", "6", "--q", "2"])
        assert res.exit_code == 2

    def test_out_of_range_kappa_exit_code(self, runner):
        res = runner.invoke(main, ["exponents", "--kappa", "9"])
        assert res.exit_code == 2


class TestSleArmprobCommand:
    def test_small_run_and_fit_schema(self, runner, tmp_path):
        out = tmp_path / "series.jsonl"
        res = runner.invoke(main, [
            "sle-armprob", "--kappa", "6", "--family", "alpha-odd", "--j", "1",
            "--eps", "0.4,0.2,0.1", "--replicas", "150", "--seed", "5",
            "--horizon", "20", "--fit", "--out", str(out)])
        assert res.exit_code == 0, res.output
        lines = [json.loads(x) for x in out.read_text().splitlines()]
        assert len(lines) == 4
        for row in lines[:3]:
            assert row["schema"] == "armlab-sle-armprob/1"
            assert "config_hash" in row and "p_hat_filtered" in row
        assert lines[3]["schema"] == "armlab-fit/1"
        assert "z" in lines[3] and "theory" in lines[3]

    def test_byte_identical_reruns(self, runner, tmp_path):
        args = ["sle-armprob", "--kappa", "6", "--family", "beta-even",
                "--j", "1", "--eps", "0.3,0.15", "--replicas", "120",
                "--seed", "9", "--horizon", "15"]
        out1 = runner.invoke(main, args).output
        out2 = runner.invoke(main, args).output
        assert out1 == out2

    def test_geometry_usage_error_names_inequality(self, runner):
        res = runner.invoke(main, [
            "sle-armprob", "--kappa", "6", "--family", "alpha-odd",
            "--eps", "2.0", "--x", "1.0", "--replicas", "10"])
        assert res.exit_code == 2
        assert "eps <= x" in res.output

    def test_two_point_grid_fit_error(self, runner):
        res = runner.invoke(main, [
            "sle-armprob", "--kappa", "6", "--family", "alpha-odd",
            "--eps", "0.4,0.2", "--replicas", "60", "--seed", "2",
            "--horizon", "10", "--fit"])
        assert res.exit_code == 3

    def test_bad_kappa_usage(self, runner):
        res = runner.invoke(main, [
            "sle-armprob", "--kappa", "9", "--family", "alpha-odd",
            "--eps", "0.2", "--replicas", "10"])
        assert res.exit_code == 2


class TestFkArmprobCommand:
    def test_small_run(self, runner):
        res = runner.invoke(main, [
            "fk-armprob", "--q", "2", "--pattern", "01", "--n", "4",
            "--N", "6,8", "--samples", "30", "--burn-in", "20", "--gap", "2",
            "--seed", "4"])
        assert res.exit_code == 0, res.output
        rows = [json.loads(x) for x in res.output.strip().splitlines()]
        assert all(r["schema"] == "armlab-fk-armprob/1" for r in rows)
        assert [r["N"] for r in rows] == [6, 8]

    def test_malformed_pattern_usage_error(self, runner):
        res = runner.invoke(main, [
            "fk-armprob", "--q", "2", "--pattern", "012", "--n", "4",
            "--N", "8"])
        assert res.exit_code == 2

    def test_n_smaller_than_2j_rejected(self, runner):
        res = runner.invoke(main, [
            "fk-armprob", "--q", "2", "--pattern", "0101", "--n", "4",
            "--N", "16"])
        assert res.exit_code == 2
        assert "n >= 2j" in res.output

    def test_deterministic(self, runner):
        args = ["fk-armprob", "--q", "2", "--pattern", "01", "--n", "4",
                "--N", "6", "--samples", "20", "--burn-in", "10", "--gap",
                "2", "--seed", "11"]
        assert runner.invoke(main, args).output == \
            runner.invoke(main, args).output


class TestTraceAndSampleCommands:
    def test_zero_driving_straight_line(self, runner):
        res = runner.invoke(main, ["sle-trace", "--zero-driving", "--dt",
                                   "0.01", "--T", "0.25", "--points", "8"])
        assert res.exit_code == 0
        lines = res.output.strip().splitlines()[1:]
        for line in lines:
            t, re, im = (float(x) for x in line.split(","))
            assert re == pytest.approx(0.0, abs=1e-12)
            assert im == pytest.approx(2 * np.sqrt(t), abs=1e-9)

    def test_fk_sample_p_one_all_open(self, runner):
        res = runner.invoke(main, ["fk-sample", "--q", "2", "--m", "3",
                                   "--p", "1.0", "--sweeps", "3", "--seed",
                                   "1"])
        assert res.exit_code == 0
        d = json.loads(res.output)
        h = np.unpackbits(np.frombuffer(bytes.fromhex(d["h_bits"]), np.uint8))
        assert h[: (d["nx"] - 1) * d["ny"]].all()

    def test_snapshot_round_trip_bit_exact(self, runner, tmp_path):
        out = tmp_path / "cfg.json"
        res = runner.invoke(main, ["fk-sample", "--q", "2", "--m", "4",
                                   "--kind", "semi", "--bc", "01",
                                   "--sweeps", "10", "--seed", "3", "--out",
                                   str(out)])
        assert res.exit_code == 0
        from armlab.fk import EdgeConfig

        d = json.loads(out.read_text())
        cfg = EdgeConfig.from_json_dict(d)
        d2 = cfg.to_json_dict()
        for key in ("h_bits", "v_bits", "q", "p", "bc", "nx", "ny"):
            assert d2[key] == d[key]

    def test_unwritable_path_io_error(self, runner):
        res = runner.invoke(main, ["sle-trace", "--zero-driving", "--dt",
                                   "0.01", "--T", "0.1", "--out",
                                   "/nonexistent-dir/trace.csv"])
        assert res.exit_code == 4
