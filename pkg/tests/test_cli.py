import json

import numpy as np
import pytest

from miqcqp.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, build_parser, main
from miqcqp.io import SolveReport, format_matpower
from miqcqp.ucopf import PowerCase


def _two_bus(pd):
    f = lambda v: np.array(v, dtype=float)
    return PowerCase(100.0, np.array([1, 2]), np.array([3, 1]), f([0.0, pd]), f([0.0, 0.1]),
                     f([0.0, 0.0]), f([0.0, 0.0]), f([0.95, 0.95]), f([1.05, 1.05]),
                     np.array([0]), np.array([1]), f([0.01]), f([0.1]), f([0.0]), f([0.0]),
                     f([0.0]), f([0.0]), np.array([0, 1]), f([0.1, 0.1]), f([1.0, 0.6]),
                     f([-0.5, -0.5]), f([0.5, 0.5]), f([0.01, 0.02]), f([10.0, 12.0]),
                     f([5.0, 5.0]), name="twobus")


def _uc_text():
    rec = {"ramp_up": 60, "ramp_down": 60, "startup_power": 60, "shutdown_power": 60,
           "min_up": 1, "min_down": 1, "startup_cost": 3.0}
    return json.dumps({"format": "miqcqp-uc/1", "case": "twobus", "load_profile": [1.0, 0.8],
                       "generators": {"0": rec, "1": rec}})


@pytest.fixture
def files(tmp_path):
    def make(pd):
        case, uc = tmp_path / "twobus.m", tmp_path / "twobus.json"
        case.write_text(format_matpower(_two_bus(pd)))
        uc.write_text(_uc_text())
        return str(case), str(uc)
    return make


class TestSolve:
    def test_report_written(self, files, tmp_path, capsys):
        case, uc = files(0.5)
        out = tmp_path / "rep.json"
        rc = main(["solve", "--case", case, "--uc", uc, "--periods", "2", "--seed", "4",
                   "--report", str(out)])
        assert rc == EXIT_OK
        rep = SolveReport.from_json(out.read_text())
        assert rep.status in ("optimal", "gap_met") and rep.misdp_gap <= 0.02
        assert rep.instance == "twobus-T2"
        assert rep.settings["seed"] == 4 and rep.settings["run_local"] == 1.5
        assert "status" in capsys.readouterr().out

    def test_infeasible(self, files):
        case, uc = files(3.0)
        assert main(["solve", "--case", case, "--uc", uc, "--periods", "1"]) == EXIT_INFEASIBLE

    def test_variation_label(self, files, tmp_path):
        case, uc = files(0.5)
        out = tmp_path / "rep.json"
        main(["solve", "--case", case, "--uc", uc, "--periods", "1", "--variation", "noise2",
              "--seed", "7", "--report", str(out)])
        rep = SolveReport.from_json(out.read_text())
        assert rep.instance == "twobus-T1-noise2"
        assert rep.settings["variation_detail"]


class TestOtherCommands:
    def test_decompose_case118(self, capsys):
        assert main(["decompose", "--case", "case118"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "per-period max block size: 11" in out

    def test_oracle(self, capsys):
        assert main(["oracle", "--seed", "3", "--count", "2"]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert [ln.split()[1] for ln in lines] == ["3", "4"]

    def test_relax(self, files, capsys):
        case, uc = files(0.5)
        assert main(["relax", "--case", case, "--uc", uc, "--periods", "1"]) == EXIT_OK
        assert "bound" in capsys.readouterr().out

    def test_relax_full_resource_limit(self, capsys):
        rc = main(["relax", "--sparsity", "off", "--case", "case118", "--periods", "24"])
        assert rc == EXIT_ERROR
        assert "resource limit" in capsys.readouterr().err


class TestErrors:
    def test_missing_case(self, capsys):
        assert main(["solve", "--case", "/nonexistent/case.m"]) == EXIT_ERROR
        assert "no such file" in capsys.readouterr().err

    def test_malformed_case(self, tmp_path, capsys):
        bad = tmp_path / "bad.m"
        bad.write_text("mpc.baseMVA = 100;\n")
        assert main(["decompose", "--case", str(bad), "--uc", "uc6"]) == EXIT_ERROR
        assert "missing" in capsys.readouterr().err

    def test_uc_required_for_unbundled(self, files, capsys):
        case, _ = files(0.5)
        assert main(["decompose", "--case", case]) == EXIT_ERROR
        assert "--uc" in capsys.readouterr().err

    def test_bad_flag(self):
        assert main(["solve", "--case", "case6ww", "--sparsity", "maybe"]) == EXIT_ERROR

    def test_no_command(self):
        assert main([]) == EXIT_ERROR


def test_parser_defaults():
    args = build_parser().parse_args(["solve", "--case", "case6ww"])
    assert (args.tol, args.timelimit, args.run_local, args.sparsity) == (0.02, 3600.0, 1.5, "on")
    assert (args.variation, args.gamma, args.uc, args.report) == ("none", 1.0, None, None)
