import networkx as nx
import numpy as np
import pytest
from scipy.optimize import linprog

from miqcqp.model import Assignment, evaluate, is_feasible
from miqcqp.sparsity import build_cs_graph
from miqcqp.ucopf import (CaseError, PowerCase, UcData, apply_variation, build_admittance,
                          build_opf_matrices, build_ucopf_instance, injections, make_inputs,
                          period_block_stats, stack_voltage, voltage_graph_edges)


def _case(r=0.0, x=0.1, b=0.0, rate=0.0, gs=(0.0, 0.0), bs=(0.0, 0.0), n_gen=1, vmin=0.9,
          vmax=1.1, pd=(0.0, 0.0), qd=(0.0, 0.0)):
    g = np.arange(n_gen)
    f = lambda v: np.array(v, dtype=float)
    return PowerCase(100.0, np.array([1, 2]), np.array([3, 1]), f(pd), f(qd), f(gs), f(bs),
                     np.full(2, vmin), np.full(2, vmax), np.array([0]), np.array([1]),
                     f([r]), f([x]), f([b]), f([0.0]), f([0.0]), f([rate]),
                     g.astype(np.int64), np.zeros(n_gen), np.ones(n_gen),
                     np.full(n_gen, -0.5), np.full(n_gen, 0.5), np.full(n_gen, 0.01),
                     np.full(n_gen, 10.0), np.full(n_gen, 1.0))


def _uc(n_gen=1, **kw):
    base = dict(ramp_up=0.4, ramp_down=0.2, startup_power=0.5, shutdown_power=0.5, min_up=2,
                min_down=2, startup_cost=5.0, init_status=1, init_output=0.0)
    base.update(kw)
    return UcData(*(np.full(n_gen, base[k], dtype=float if k not in ("min_up", "min_down",
                                                                         "init_status") else int)
                    for k in ("ramp_up", "ramp_down", "startup_power", "shutdown_power",
                              "min_up", "min_down", "startup_cost", "init_status",
                              "init_output")))


class TestAdmittance:
    def test_two_bus_series(self):
        Y = build_admittance(_case()).Y.toarray()
        np.testing.assert_allclose(Y, [[-10j, 10j], [10j, -10j]], atol=1e-12)

    def test_charging_shunt(self):
        adm = build_admittance(_case(b=0.2))
        np.testing.assert_allclose(adm.ysh[0], [0.1j, 0.1j], atol=1e-12)

    def test_isolated_bus(self):
        case = PowerCase(100.0, np.array([1, 2, 3]), np.array([3, 1, 1]), np.zeros(3),
                         np.zeros(3), np.array([0.0, 0.0, 0.3]), np.array([0.0, 0.0, 0.2]),
                         np.full(3, 0.9), np.full(3, 1.1), np.array([0]), np.array([1]),
                         np.array([0.0]), np.array([0.1]), np.zeros(1), np.zeros(1),
                         np.zeros(1), np.zeros(1), np.array([0]), np.zeros(1), np.ones(1),
                         -np.ones(1), np.ones(1), np.zeros(1), np.zeros(1), np.zeros(1))
        Y = build_admittance(case).Y.toarray()
        np.testing.assert_allclose(Y[2], [0, 0, 0.3 + 0.2j])
        np.testing.assert_allclose(Y[:, 2], [0, 0, 0.3 + 0.2j])

    def test_zero_impedance_rejected(self):
        with pytest.raises(CaseError):
            _case(r=0.0, x=0.0)

    def test_tap_matches_matpower(self):
        case = _case(r=0.01, x=0.1, b=0.04)
        case = PowerCase(**{**case.__dict__, "tap": np.array([0.95]),
                            "shift": np.array([0.1])})
        adm = build_admittance(case)
        ys = 1 / (0.01 + 0.1j)
        t = 0.95 * np.exp(0.1j)
        Y = adm.Y.toarray()
        assert Y[0, 0] == pytest.approx((ys + 0.02j) / abs(t) ** 2)
        assert Y[0, 1] == pytest.approx(-ys / np.conj(t))
        assert Y[1, 0] == pytest.approx(-ys / t)
        assert Y[1, 1] == pytest.approx(ys + 0.02j)


class TestOpfMatrices:
    def test_m_has_two_unit_diagonals(self, case6):
        case, _ = case6
        mats = build_opf_matrices(case, build_admittance(case))
        for i, M in enumerate(mats.M):
            d = M.toarray()
            assert np.count_nonzero(d) == 2
            assert d[i, i] == d[case.n_bus + i, case.n_bus + i] == 1.0

    def test_flat_voltage_zero_injection(self):
        case = _case()
        mats = build_opf_matrices(case, build_admittance(case))
        X = stack_voltage(np.ones(2, dtype=complex))
        assert X @ mats.EG[0] @ X == pytest.approx(0.0, abs=1e-12)

    def test_symmetry(self, case6):
        case, _ = case6
        mats = build_opf_matrices(case, build_admittance(case))
        every = mats.EG + mats.EGbar + mats.M + [m for p in mats.EB + mats.EBbar for m in p]
        for S in every:
            assert np.abs((S - S.T).toarray()).max() <= 1e-12

    def test_branch_matrices_local(self, case6):
        case, _ = case6
        mats = build_opf_matrices(case, build_admittance(case))
        nb = case.n_bus
        for l in range(case.n_branch):
            ends = {int(case.br_from[l]), int(case.br_to[l])}
            for S in mats.EB[l] + mats.EBbar[l]:
                touched = {int(k) % nb for k in S.nonzero()[0]}
                assert touched <= ends

    def test_embedding_matches_complex(self, case6):
        case, _ = case6
        adm = build_admittance(case)
        mats = build_opf_matrices(case, adm)
        rng = np.random.default_rng(0)
        for _ in range(10):
            V = rng.uniform(0.9, 1.1, case.n_bus) * np.exp(1j * rng.uniform(-0.3, 0.3, case.n_bus))
            X = stack_voltage(V)
            S = injections(case, adm, V)
            for i in range(case.n_bus):
                assert X @ mats.EG[i] @ X == pytest.approx(S[i].real, abs=1e-9)
                assert X @ mats.EGbar[i] @ X == pytest.approx(S[i].imag, abs=1e-9)
                assert X @ mats.M[i] @ X == pytest.approx(abs(V[i]) ** 2, abs=1e-12)
            Vf, Vt = V[case.br_from], V[case.br_to]
            If = adm.yff * Vf + adm.yft * Vt
            It = adm.ytf * Vf + adm.ytt * Vt
            for l in range(case.n_branch):
                sf, st_ = Vf[l] * np.conj(If[l]), Vt[l] * np.conj(It[l])
                assert X @ mats.EB[l][0] @ X == pytest.approx(sf.real, abs=1e-9)
                assert X @ mats.EBbar[l][1] @ X == pytest.approx(st_.imag, abs=1e-9)


class TestInstance:
    def test_case6_counts(self, case6):
        case, uc = case6
        model = build_ucopf_instance(case, uc, 4)
        assert model.instance.n_int == 36
        assert model.layout.X(1).size == 12

    def test_single_period_only_initial_rows(self, case6):
        case, uc = case6
        model = build_ucopf_instance(case, uc, 1)
        inst = model.instance
        for name in ("ramp_up", "ramp_down"):
            for r in model.families[name][1]:
                con = inst.lin_constraints[r]
                assert len(con.lin_x) == 1  # no previous-period output
        assert len(model.families["logic"][1]) == case.n_gen

    def test_flat_start_all_zero_feasible(self):
        case = _case(vmin=0.0, rate=1.0)
        model = build_ucopf_instance(case, _uc(init_status=0), 3)
        inst = model.instance
        assert is_feasible(inst, Assignment(np.zeros(inst.n_cont), np.zeros(inst.n_int)))

    def test_periods_isomorphic(self, case6):
        case, uc = case6
        inst = build_ucopf_instance(case, uc, 3).instance
        lay = build_ucopf_instance(case, uc, 3).layout
        g = build_cs_graph(inst)
        full = nx.Graph(list(g.edges))
        views = []
        for t in (1, 2, 3):
            lo, hi = lay._base(t), lay._base(t) + lay.per_period
            sub = nx.Graph()
            sub.add_nodes_from(range(lay.per_period))
            sub.add_edges_from((a - lo, b - lo) for a, b in full.edges
                               if lo <= a < hi and lo <= b < hi)
            views.append(sub)
        assert nx.utils.edges_equal(views[0].edges, views[1].edges)
        assert nx.utils.edges_equal(views[0].edges, views[2].edges)

    def test_uc_mismatch(self, case6):
        case, _ = case6
        with pytest.raises(CaseError):
            build_ucopf_instance(case, _uc(n_gen=1), 2)

    def test_voltage_edges_symmetric_pattern(self, case6):
        case, _ = case6
        edges = voltage_graph_edges(case)
        nb = case.n_bus
        assert all(0 <= a < b < 2 * nb for a, b in edges)

    def test_block_stats(self, case6):
        case, uc = case6
        st = period_block_stats(case, uc)
        assert 5 <= st.n_blocks <= 20 and st.max_block <= 8
        assert sum(st.histogram.values()) == st.n_blocks


class TestVariations:
    def _inputs(self, case6, T=2):
        case, uc = case6
        return make_inputs(case, uc, T)

    def test_gamma_one_identity(self, case6):
        a = self._inputs(case6)
        b = apply_variation(a, "gamma", gamma=1.0)
        np.testing.assert_array_equal(a.pmin, b.pmin)
        np.testing.assert_array_equal(a.pmax, b.pmax)

    def test_gamma_two(self, case6):
        a = self._inputs(case6)
        a = a.__class__(**{**a.__dict__, "pmin": np.array([0.4]), "pmax": np.array([1.0])})
        b = apply_variation(a, "gamma", gamma=2.0)
        np.testing.assert_allclose(b.pmin, [0.2])
        np.testing.assert_allclose(b.pmax, [2.0])

    def test_gamma_below_one(self, case6):
        with pytest.raises(ValueError):
            apply_variation(self._inputs(case6), "gamma", gamma=0.5)

    @pytest.mark.parametrize("seed", [0, 7])
    def test_noise_zero_identity(self, case6, seed):
        a = self._inputs(case6)
        b = apply_variation(a, "noise", level=0.0, seed=seed)
        np.testing.assert_array_equal(a.pd, b.pd)
        np.testing.assert_array_equal(a.qmax, b.qmax)

    def test_noise_mean_level(self, case118):
        case, uc = case118
        a = make_inputs(case, uc, 24)
        b = apply_variation(a, "noise", level=0.04, seed=3)
        mask = a.pd != 0
        eps = b.pd[mask] / a.pd[mask] - 1.0
        assert np.all(np.abs(eps) <= 0.08 + 1e-12)
        assert np.mean(np.abs(eps)) == pytest.approx(0.04, abs=0.005)

    def test_noise_seeded(self, case6):
        a = self._inputs(case6)
        b1 = apply_variation(a, "noise", level=0.02, seed=5)
        b2 = apply_variation(a, "noise", level=0.02, seed=5)
        np.testing.assert_array_equal(b1.pd, b2.pd)

    def test_initial_zero(self, case6):
        b = apply_variation(self._inputs(case6), "initial_zero")
        assert not b.uc.init_status.any() and not b.uc.init_output.any()

    def test_unknown_kind(self, case6):
        with pytest.raises(ValueError):
            apply_variation(self._inputs(case6), "wind")

    def test_profile_too_short(self, case6):
        case, uc = case6
        with pytest.raises(CaseError):
            make_inputs(case, uc, 25)


@pytest.fixture(scope="module")
def model():
    # two buses with one unit each, a lossless line rated 0.24 and four periods
    case = _case(x=1.0, rate=0.24, n_gen=2)
    case = PowerCase(**{**case.__dict__, "gen_bus": np.array([0, 1])})
    return build_ucopf_instance(case, _uc(n_gen=2), 4)


class TestFamilies:
    """Each family is needed: a point violating only that family exists."""

    T = 4

    def _point(self, model, V=None, v0=(1, 1, 1, 1), P0=None, Q0=None, pf_shift=0.0,
               qf_shift=0.0):
        case, lay, T = model.inputs.case, model.layout, self.T
        adm = build_admittance(case)
        V = np.ones(2, dtype=complex) if V is None else np.asarray(V, dtype=complex)
        S = injections(case, adm, V)
        x = np.zeros(model.instance.n_cont)
        y = np.zeros(model.instance.n_int)
        X = stack_voltage(V)
        mats = model.matrices
        prev = int(model.inputs.uc.init_status[0])
        for t in range(1, T + 1):
            x[lay.X(t)] = X
            on = int(v0[t - 1])
            y[lay.v(t, 0)] = on
            y[lay.y(t, 0)] = int(on and not prev)
            y[lay.z(t, 0)] = int(prev and not on)
            prev = on
            y[lay.v(t, 1)] = 1
            x[lay.pg(t, 0)] = max(S[0].real, 0.0) if P0 is None else P0[t - 1]
            x[lay.qg(t, 0)] = max(S[0].imag, 0.0) if Q0 is None else Q0[t - 1]
            x[lay.pg(t, 1)] = max(S[1].real, 0.0)
            x[lay.qg(t, 1)] = max(S[1].imag, 0.0)
            for e in (0, 1):
                x[lay.pf(t, 0, e)] = X @ mats.EB[0][e] @ X
                x[lay.qf(t, 0, e)] = X @ mats.EBbar[0][e] @ X
            x[lay.pf(t, 0, 0)] += pf_shift
            x[lay.qf(t, 0, 0)] += qf_shift
        return Assignment(x, y)

    def _violations(self, model, point):
        inst = model.instance
        out = {}
        for name, (kind, rows) in model.families.items():
            worst = 0.0
            for r in rows:
                if kind == "quad":
                    con = inst.quad_constraints[r]
                    g = evaluate(con.form, point) - con.rhs
                else:
                    con = inst.lin_constraints[r]
                    g = sum(v * point.x[j] for j, v in con.lin_x.items()) \
                        + sum(v * point.y[k] for k, v in con.lin_y.items()) - con.rhs
                worst = max(worst, max(g, 0.0) if con.sense == "<=" else
                            max(-g, 0.0) if con.sense == ">=" else abs(g))
            out[name] = worst
        lb, ub = inst.cont_lb, inst.cont_ub
        out["bounds"] = float(max(np.max(lb - point.x), np.max(point.x - ub), 0.0))
        return out

    def _only(self, model, point, family):
        v = self._violations(model, point)
        bad = {k for k, val in v.items() if val > 1e-6}
        assert bad == {family}, v

    def test_base_feasible(self, model):
        assert is_feasible(model.instance, self._point(model))
        off = self._point(model, v0=(0, 0, 0, 0))
        assert is_feasible(model.instance, off)

    def test_fifteen_families(self, model):
        assert len(model.families) == 15

    def test_logic(self, model):
        p = self._point(model, v0=(1, 0, 0, 0))
        p.y[model.layout.z(2, 0)] = 0
        self._only(model, p, "logic")

    def test_ramp_up(self, model):
        self._only(model, self._point(model, P0=(0, 0.5, 0.5, 0.5)), "ramp_up")

    def test_ramp_down(self, model):
        self._only(model, self._point(model, P0=(0.3, 0, 0, 0)), "ramp_down")

    def test_min_up(self, model):
        self._only(model, self._point(model, v0=(0, 0, 1, 0)), "min_up")

    def test_min_down(self, model):
        self._only(model, self._point(model, v0=(0, 1, 1, 1)), "min_down")

    def test_p_limits(self, model):
        self._only(model, self._point(model, v0=(0, 0, 0, 0), P0=(0.1,) * 4), "p_limits")

    def test_q_limits(self, model):
        self._only(model, self._point(model, v0=(0, 0, 0, 0), Q0=(0.1,) * 4), "q_limits")

    def test_balance_p(self, model):
        V = [1.0, np.exp(0.05j)]
        p = self._point(model, V=V)
        lay = model.layout
        for t in range(1, self.T + 1):
            p.x[lay.pg(t, 1)] = 0.0
        self._only(model, p, "balance_p")

    def test_balance_q(self, model):
        p = self._point(model, V=[0.95, 1.05])
        lay = model.layout
        for t in range(1, self.T + 1):
            p.x[lay.qg(t, 1)] = 0.0
        self._only(model, p, "balance_q")

    def test_voltage(self, model):
        self._only(model, self._point(model, V=[0.85, 0.85]), "voltage")

    def test_flow_p(self, model):
        self._only(model, self._point(model, pf_shift=0.1), "flow_p")

    def test_flow_q(self, model):
        self._only(model, self._point(model, qf_shift=0.1), "flow_q")

    def test_flow_limit(self, model):
        self._only(model, self._point(model, V=[1.1, 0.9 * np.exp(0.1j)]), "flow_limit")

    @pytest.mark.parametrize("cut", ["cut_on", "cut_off"])
    def test_cuts_implied_by_commitment_rows(self, model, cut):
        # the valid cuts follow from logic, min_up and min_down even over [0, 1] binaries:
        # no point violating only a cut exists, so they are checked by LP instead
        inst = model.instance
        m = inst.n_int
        rows = [inst.lin_constraints[r] for name in ("logic", "min_up", "min_down")
                for r in model.families[name][1]]
        A_ub, b_ub, A_eq, b_eq = [], [], [], []
        for con in rows:
            a = np.zeros(m)
            for k, v in con.lin_y.items():
                a[k] += v
            if con.sense == "==":
                A_eq.append(a); b_eq.append(con.rhs)
            elif con.sense == "<=":
                A_ub.append(a); b_ub.append(con.rhs)
            else:
                A_ub.append(-a); b_ub.append(-con.rhs)
        for r in model.families[cut][1]:
            con = inst.lin_constraints[r]
            c = np.zeros(m)
            for k, v in con.lin_y.items():
                c[k] -= v
            res = linprog(c, A_ub=np.array(A_ub), b_ub=b_ub, A_eq=np.array(A_eq), b_eq=b_eq,
                          bounds=[(0, 1)] * m, method="highs")
            assert res.status == 0 and -res.fun <= con.rhs + 1e-9
