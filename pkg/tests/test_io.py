import json
import math
import re
from dataclasses import fields
from importlib.resources import files

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import load_bundled
from miqcqp.bnb import BnbSettings, gap, solve_bnb
from miqcqp.generators import random_tiny_miqcqp
from miqcqp.io import (REPORT_VERSION, FormatError, SolveReport, format_matpower,
                       parse_matpower, parse_uc_json)
from miqcqp.ucopf import CaseError


def _text(name):
    return files("miqcqp.data").joinpath(name).read_text()


def _uc_doc():
    return json.loads(_text("uc6.json"))


def _assert_cases_equal(a, b):
    for f in fields(a):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if isinstance(va, np.ndarray):
            np.testing.assert_allclose(vb, va, rtol=1e-12, atol=0.0)
        else:
            assert va == vb


class TestMatpower:
    @pytest.mark.parametrize("name,sizes", [("case6ww", (6, 3, 11)),
                                            ("case24_ieee_rts", (24, 33, 38)),
                                            ("case118", (118, 54, 186))])
    def test_bundled_sizes(self, name, sizes):
        case, _ = load_bundled(name)
        assert (case.n_bus, case.n_gen, case.n_branch) == sizes
        assert case.name == name

    def test_per_unit(self):
        case, _ = load_bundled("case6ww")
        assert case.base_mva == 100.0
        assert case.pd[3] == pytest.approx(0.7)
        assert case.c2[0] == 0.00533

    def test_piecewise_cost(self):
        text = _text("case6ww.m").replace("\t2\t0\t0\t3\t0.00533", "\t1\t0\t0\t3\t0.00533")
        with pytest.raises(FormatError, match="unsupported cost"):
            parse_matpower(text)

    @staticmethod
    def _cubic(lead):
        # rewrite every cost row as a degree-three polynomial
        text = _text("case6ww.m")
        text = re.sub(r"\t2\t0\t0\t3\t", "\t2\t0\t0\t4\t0\t", text)
        return text.replace("\t4\t0\t0.00533", f"\t4\t{lead}\t0.00533")

    def test_cubic_cost(self):
        with pytest.raises(FormatError, match="degree"):
            parse_matpower(self._cubic(1.0))

    def test_leading_zero_high_degree(self):
        case = parse_matpower(self._cubic(0))
        assert case.c2[0] == 0.00533 and case.c0[2] == 240.0

    def test_empty_file(self):
        with pytest.raises(FormatError, match="missing"):
            parse_matpower("")

    def test_missing_array(self):
        text = _text("case6ww.m")
        start = text.index("mpc.gencost")
        with pytest.raises(FormatError, match="gencost"):
            parse_matpower(text[:start])

    def test_malformed_row(self):
        text = _text("case6ww.m").replace("0.00533", "0.00x33")
        with pytest.raises(FormatError, match="malformed"):
            parse_matpower(text)

    def test_ragged_rows(self):
        text = _text("case6ww.m").replace("\t2\t0\t0\t3\t0.00533\t11.669\t213.1;",
                                          "\t2\t0\t0\t3\t0.00533\t11.669;")
        with pytest.raises(FormatError):
            parse_matpower(text)

    def test_unknown_bus(self):
        case, _ = load_bundled("case6ww")
        text = format_matpower(case).replace("mpc.gen = [\n\t1\t", "mpc.gen = [\n\t99\t")
        with pytest.raises(CaseError):
            parse_matpower(text)

    def test_comments_ignored(self):
        text = "% header\n" + _text("case6ww.m").replace("mpc.baseMVA = 100;",
                                                         "mpc.baseMVA = 100; % MVA")
        assert parse_matpower(text).base_mva == 100.0

    @pytest.mark.parametrize("name", ["case6ww", "case24_ieee_rts", "case118"])
    def test_round_trip(self, name):
        case, _ = load_bundled(name)
        _assert_cases_equal(case, parse_matpower(format_matpower(case)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_round_trip_perturbed(self, seed):
        case, _ = load_bundled("case6ww")
        rng = np.random.default_rng(seed)
        kw = {f.name: getattr(case, f.name) for f in fields(case)}
        for k in ("pd", "qd", "r", "x", "b", "rate", "pmax", "qmax", "c1", "c2"):
            kw[k] = kw[k] * rng.uniform(0.5, 2.0, kw[k].shape)
        kw["shift"] = rng.uniform(-0.3, 0.3, case.n_branch)
        pert = type(case)(**kw)
        _assert_cases_equal(pert, parse_matpower(format_matpower(pert)))


class TestUcJson:
    def test_bundled(self):
        case, uc = load_bundled("case6ww", "uc6")
        assert uc.n_gen == 3
        assert uc.load_profile.size == 24
        assert np.all(uc.min_up >= 1)

    def test_defaults(self):
        case, _ = load_bundled("case6ww")
        doc = _uc_doc()
        for rec in doc["generators"].values():
            rec.pop("initial_status", None)
            rec.pop("initial_output", None)
        uc = parse_uc_json(json.dumps(doc), case)
        np.testing.assert_array_equal(uc.init_status, 1)
        np.testing.assert_allclose(uc.init_output, case.pmin)

    def test_min_up_zero(self):
        case, _ = load_bundled("case6ww")
        doc = _uc_doc()
        doc["generators"]["0"]["min_up"] = 0
        with pytest.raises(CaseError):
            parse_uc_json(json.dumps(doc), case)

    def test_count_mismatch(self):
        case, _ = load_bundled("case6ww")
        doc = _uc_doc()
        del doc["generators"]["2"]
        with pytest.raises(CaseError, match="2 generator records"):
            parse_uc_json(json.dumps(doc), case)

    @pytest.mark.parametrize("mutate", [
        lambda d: d.update(format="other"),
        lambda d: d.update(generators=[]),
        lambda d: d["generators"]["0"].pop("ramp_up"),
        lambda d: d["generators"]["0"].update(ramp_up="fast"),
        lambda d: d["generators"]["0"].update(ramp_up=True),
        lambda d: d["generators"]["0"].update(min_down=1.5),
        lambda d: d["generators"].update({"x": d["generators"].pop("0")}),
        lambda d: d.update(load_profile=[]),
    ])
    def test_schema_violations(self, mutate):
        case, _ = load_bundled("case6ww")
        doc = _uc_doc()
        mutate(doc)
        with pytest.raises(FormatError):
            parse_uc_json(json.dumps(doc), case)

    def test_out_of_range_key(self):
        case, _ = load_bundled("case6ww")
        doc = _uc_doc()
        doc["generators"]["7"] = doc["generators"].pop("0")
        with pytest.raises(CaseError):
            parse_uc_json(json.dumps(doc), case)

    def test_invalid_json(self):
        case, _ = load_bundled("case6ww")
        with pytest.raises(FormatError):
            parse_uc_json("{", case)


class TestReport:
    @pytest.fixture(scope="class")
    @classmethod
    def bnb_report(cls):
        return solve_bnb(random_tiny_miqcqp(2), settings=BnbSettings(mip_terminate=False))

    def test_round_trip(self, bnb_report):
        rep = SolveReport.from_bnb("tiny-2", {"seed": 2, "variation": "none"}, bnb_report)
        back = SolveReport.from_json(rep.to_json())
        assert back == rep
        assert back.version == REPORT_VERSION
        assert 0.0 <= back.ls_share <= 1.0

    def test_gaps_recomputable(self, bnb_report):
        rep = SolveReport.from_json(SolveReport.from_bnb("t", {}, bnb_report).to_json())
        assert rep.misdp_gap == gap(rep.ub_misdp, rep.lb)
        assert rep.miqcqp_gap == gap(rep.ub_miqcqp, rep.lb)
        _, lb, ub, uq = rep.history[-1]
        assert (lb, ub, uq) == (rep.lb, rep.ub_misdp, rep.ub_miqcqp)

    def test_infinities_encoded(self, bnb_report):
        rep = SolveReport.from_bnb("t", {}, bnb_report)
        rep.ub_miqcqp = math.inf
        rep.miqcqp_gap = math.inf
        text = rep.to_json()
        assert "Infinity" not in text
        assert SolveReport.from_json(text).ub_miqcqp == math.inf

    def test_version_checked(self, bnb_report):
        doc = json.loads(SolveReport.from_bnb("t", {}, bnb_report).to_json())
        doc["version"] = 99
        with pytest.raises(FormatError):
            SolveReport.from_json(json.dumps(doc))
