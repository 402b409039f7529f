# test_runner.py
import csv
import io
import json
import math

import pytest

from lidarkit import output, runner
from lidarkit.config import load_config
from lidarkit.errors import ConvergenceError, ValidityError
from lidarkit.models import McRow, SignalRow
from lidarkit.single_scatter import single_scatter_return


def header_and_rows(text: str):
    comments = [line for line in text.splitlines() if line.startswith("#")]
    body = [line for line in text.splitlines() if not line.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    return comments, rows


# ---- modes ----


class TestModes:
    def test_single(self, config_dict, write_config):
        cfg = load_config(write_config(config_dict))
        result = runner.run(cfg)
        rows = result.signal.analytic
        assert [r.t for r in rows] == [20.0, 50.0, 100.0]
        assert rows[1].i1 == single_scatter_return(50.0, cfg.geometry, cfg.medium)
        assert rows[0].i21 is None
        assert result.signal.montecarlo == []
        assert result.tally is None
        assert result.summary.seed is None
        assert result.summary.rows == 3

    def test_double(self, config_dict, write_config):
        config_dict["mode"] = "double"
        result = runner.run(load_config(write_config(config_dict)))
        for row in result.signal.analytic:
            assert row.i21 > 0.0
            assert row.i21_error <= 1e-6 * row.i21 + 1e-30
            assert row.smallness_ok
            assert not row.d0_empty
            assert row.i22_bound > 0.0
            assert row.i23_bound > 0.0

    def test_double_empty_d0(self, config_dict, write_config):
        # eps * t / 2 <= rho0 at t = 1.5
        config_dict.update(mode="double", geometry={"rho0": 0.1, "epsilon": 0.1}, time_grid={"times": [1.5, 50.0]})
        result = runner.run(load_config(write_config(config_dict)))
        first = result.signal.analytic[0]
        assert first.d0_empty
        assert first.i21 == 0.0
        assert first.i23_bound is None

    def test_mc(self, config_dict, write_config):
        config_dict["mode"] = "mc"
        result = runner.run(load_config(write_config(config_dict)))
        assert result.signal.analytic == []
        rows = result.signal.montecarlo
        assert len(rows) == 3
        for row in rows:
            assert row.bin_lo < row.t < row.bin_hi
            total = row.rate["1"] + row.rate["2"] + row.rate["3+"]
            assert row.rate["total"] == pytest.approx(total, rel=1e-12)
        assert result.summary.seed == 7
        assert result.summary.histories == 2000

    def test_validate(self, config_dict, write_config):
        config_dict["mode"] = "validate"
        config_dict["montecarlo"]["histories"] = 20_000
        result = runner.run(load_config(write_config(config_dict)))
        assert len(result.signal.validation) == 3
        assert all(r.i1_bin is not None for r in result.signal.analytic)
        assert set(result.summary.chi2) == {"1", "2"}
        assert result.summary.chi2["1"]["dof"] <= 3.0
        graded = any(r.graded_order1 or r.graded_order2 for r in result.signal.validation)
        assert result.summary.passed == (graded and all(r.ok for r in result.signal.validation))


# ---- regime checks ----


class TestRegime:
    def test_violations_reported(self, config_dict, write_config, caplog):
        config_dict["time_grid"] = {"times": [1.0, 50.0]}
        with caplog.at_level("WARNING", logger="lidarkit.runner"):
            result = runner.run(load_config(write_config(config_dict)))
        assert len(result.summary.violations) == 1
        assert "far field" in result.summary.violations[0]
        assert "t=1" in caplog.text
        assert not result.signal.analytic[0].far_field_ok

    def test_strict_raises_before_computing(self, config_dict, write_config, monkeypatch):
        config_dict["time_grid"] = {"times": [1.0, 50.0]}
        cfg = load_config(write_config(config_dict))
        monkeypatch.setattr(runner, "analytic_rows", lambda cfg: pytest.fail("computed in strict mode"))
        with pytest.raises(ValidityError) as info:
            runner.run(cfg, strict=True)
        assert len(info.value.violations) == 1

    def test_smallness_violation(self, config_dict, write_config):
        config_dict.update(mode="double", diagnostics={"smallness_threshold": 1e-9})
        violations = runner.regime_violations(load_config(write_config(config_dict)))
        assert len(violations) == 3
        assert all("smallness" in v for v in violations)

    def test_convergence_error_names_time(self, config_dict, write_config):
        config_dict.update(mode="double", quadrature={"rel_tol": 1e-12, "max_subdivisions": 1})
        with pytest.raises(ConvergenceError) as info:
            runner.run(load_config(write_config(config_dict)))
        assert any("t = 20" in note for note in info.value.__notes__)


# ---- validation arithmetic ----


def _signal_row(**kw) -> SignalRow:
    base = dict(t=50.0, far_field_ok=True, far_field_margin=25.0, i1=1e-3, i1_bin=1e-3)
    base.update(kw)
    return SignalRow(**base)


def _mc_row(rate1, se1, rate_d0, se_d0, outside=0.0, se_out=0.0, count=1000) -> McRow:
    rate = {"1": rate1, "2": rate_d0 + outside, "3+": 0.0, "2:D0": rate_d0, "2:outside": outside}
    rate["total"] = rate1 + rate["2"]
    stderr = {"1": se1, "2": se_d0, "3+": 0.0, "2:D0": se_d0, "2:outside": se_out, "total": se1}
    return McRow(t=50.0, bin_lo=45.0, bin_hi=55.0, rate=rate, stderr=stderr, count={c: count for c in rate})


class TestValidationRows:
    def test_pass(self):
        (row,) = runner.validation_rows([_signal_row(i21=1e-5)], [_mc_row(1.01e-3, 1e-5, 1.0e-5, 1e-7)])
        assert row.z_order1 == pytest.approx(1.0)
        assert row.z_order2 == pytest.approx(0.0)
        assert row.ok

    def test_order_one_fails(self):
        (row,) = runner.validation_rows([_signal_row(i21=1e-5)], [_mc_row(1.05e-3, 1e-5, 1e-5, 1e-7)])
        assert row.z_order1 == pytest.approx(5.0)
        assert not row.ok

    def test_order_two_relative_tolerance(self):
        # z = 4 but only 4% off
        (row,) = runner.validation_rows([_signal_row(i21=1e-5)], [_mc_row(1e-3, 1e-5, 1.04e-5, 1e-7)])
        assert row.z_order2 == pytest.approx(4.0)
        assert row.rel_diff_order2 == pytest.approx(0.04)
        assert row.ok

    def test_remainder_against_bounds(self):
        analytic = [_signal_row(i21=1e-5, i22_bound=1e-7, i23_bound=1e-7)]
        ok, = runner.validation_rows(analytic, [_mc_row(1e-3, 1e-5, 1e-5, 1e-7, outside=2.5e-7, se_out=1e-7)])
        bad, = runner.validation_rows(analytic, [_mc_row(1e-3, 1e-5, 1e-5, 1e-7, outside=6e-7, se_out=1e-7)])
        assert ok.remainder_bound == pytest.approx(2e-7)
        assert ok.remainder_ok and ok.ok
        assert not bad.remainder_ok and not bad.ok

    def test_zero_stderr(self):
        (row,) = runner.validation_rows([_signal_row(i21=0.0)], [_mc_row(1e-3, 0.0, 0.0, 0.0)])
        assert row.z_order1 == 0.0
        assert row.z_order2 == 0.0
        assert row.rel_diff_order2 == 0.0

    def test_sparse_bin_is_not_graded(self):
        analytic = [_signal_row(i21=1e-5), _signal_row(i21=1e-5)]
        mc = [_mc_row(1e-3, 1e-5, 1e-5, 1e-7), _mc_row(0.0, 0.0, 0.0, 0.0, count=0)]
        dense, sparse = runner.validation_rows(analytic, mc)
        assert dense.graded_order1 and dense.graded_order2
        assert not sparse.graded_order1 and not sparse.graded_order2
        assert sparse.z_order1 is None and sparse.z_order2 is None
        assert sparse.ok
        chi2 = runner.chi_square([dense, sparse])
        assert chi2["1"]["dof"] == 1.0

    def test_grading_threshold(self):
        below, = runner.validation_rows([_signal_row(i21=1e-5)], [_mc_row(2e-3, 1e-5, 1e-5, 1e-7, count=99)])
        at, = runner.validation_rows([_signal_row(i21=1e-5)], [_mc_row(2e-3, 1e-5, 1e-5, 1e-7, count=100)])
        assert below.ok
        assert at.graded_order1 and not at.ok


def test_chi_square_skips_infinite():
    rows = runner.validation_rows(
        [_signal_row(i21=1e-5), _signal_row(i21=1e-5)],
        [_mc_row(1.01e-3, 1e-5, 1e-5, 1e-7), _mc_row(1.02e-3, 0.0, 1e-5, 1e-7)],
    )
    chi2 = runner.chi_square(rows)
    assert chi2["1"]["chi2"] == pytest.approx(1.0)
    assert chi2["1"]["dof"] == 1.0
    assert 0.0 < chi2["1"]["p_value"] < 1.0
    assert chi2["2"]["dof"] == 2.0


# ---- output ----


class TestOutput:
    def test_csv_header_contract(self, config_dict, write_config):
        config_dict["mode"] = "mc"
        result = runner.run(load_config(write_config(config_dict)))
        comments, rows = header_and_rows(output.render(result.signal, result.summary))
        assert comments[0] == f"# contract: {runner.CONTRACT}"
        assert "# mode: mc" in comments
        assert "# seed: 7" in comments
        assert "# histories: 2000" in comments
        described = [c.split(":")[0][len("# column "):] for c in comments if c.startswith("# column ")]
        assert described == list(output.columns_for("mc"))
        assert len(rows) == 3
        assert "rate_2_d0" in rows[0]

    def test_repeat_runs_byte_identical(self, config_dict, write_config):
        config_dict["mode"] = "mc"
        cfg = load_config(write_config(config_dict))
        a = runner.run(cfg)
        b = runner.run(cfg)
        assert output.render(a.signal, a.summary) == output.render(b.signal, b.summary)

    def test_workers_do_not_change_output(self, config_dict, write_config):
        config_dict["mode"] = "mc"
        cfg = load_config(write_config(config_dict))
        a = runner.run(cfg, workers=1)
        b = runner.run(cfg, workers=2)
        assert output.render(a.signal, a.summary) == output.render(b.signal, b.summary)

    def test_single_columns(self, config_dict, write_config):
        result = runner.run(load_config(write_config(config_dict)))
        _, rows = header_and_rows(output.render(result.signal, result.summary))
        assert list(rows[0]) == ["t", "i1", "far_field_ok", "far_field_margin"]
        assert float(rows[0]["i1"]) == result.signal.analytic[0].i1
        assert rows[0]["far_field_ok"] == "1"

    def test_json(self, config_dict, write_config):
        config_dict["mode"] = "double"
        result = runner.run(load_config(write_config(config_dict)))
        data = json.loads(output.render(result.signal, result.summary, "json"))
        assert data["mode"] == "double"
        assert len(data["analytic"]) == 3

    def test_write_outputs(self, tmp_path, config_dict, write_config):
        result = runner.run(load_config(write_config(config_dict)))
        out = tmp_path / "sub" / "signal.csv"
        summary_file = output.write_outputs(result.signal, result.summary, out)
        assert summary_file == tmp_path / "sub" / "signal.csv.summary.json"
        summary = json.loads(summary_file.read_text())
        assert summary["contract"] == runner.CONTRACT
        assert summary["rows"] == 3
        assert set(summary["versions"]) == {"lidarkit", "numpy", "scipy", "pydantic"}

    @pytest.mark.parametrize(
        ("value", "text"),
        [(None, ""), (True, "1"), (False, "0"), (3, "3"), (0.1, "0.10000000000000001"), (math.nan, "nan")],
    )
    def test_format_value(self, value, text):
        assert output.format_value(value) == text
