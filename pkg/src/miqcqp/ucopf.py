"""Unit commitment with AC power-flow constraints as an MIQCQP.

Voltages use rectangular coordinates ``X = (Re V, Im V)`` of length ``2|N|``
per period.  Every power-flow quantity is a quadratic form ``X' E X`` whose
real symmetric matrix is a block embedding of a complex admittance row.
Periods are numbered ``1..T``; index 0 is the initial condition taken from
the UC data.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .model import LinConstraint, MiqcqpInstance, QuadConstraint, QuadraticForm
from .relax import build_decomposed_sdp
from .sparsity import build_cs_graph, decompose


class CaseError(ValueError):
    """A power case or its UC data is inconsistent."""


@dataclass(frozen=True)
class PowerCase:
    """A MATPOWER-style network in per-unit.

    Bus quantities are indexed by position; ``bus_ids`` keeps the external
    numbering.  ``br_from``/``br_to``/``gen_bus`` hold positions.  Costs are
    the MATPOWER polynomial ``c2 P^2 + c1 P + c0`` with ``P`` in MW.
    """

    base_mva: float
    bus_ids: np.ndarray
    bus_type: np.ndarray
    pd: np.ndarray
    qd: np.ndarray
    gs: np.ndarray
    bs: np.ndarray
    vmin: np.ndarray
    vmax: np.ndarray
    br_from: np.ndarray
    br_to: np.ndarray
    r: np.ndarray
    x: np.ndarray
    b: np.ndarray
    tap: np.ndarray
    shift: np.ndarray
    rate: np.ndarray
    gen_bus: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    c2: np.ndarray
    c1: np.ndarray
    c0: np.ndarray
    name: str = "case"

    def __post_init__(self):
        if not self.base_mva > 0:
            raise CaseError("base_mva must be positive")
        nb = self.n_bus
        for a in (self.br_from, self.br_to, self.gen_bus):
            if a.size and (a.min() < 0 or a.max() >= nb):
                raise CaseError("branch or generator refers to an unknown bus")
        if np.any(self.r ** 2 + self.x ** 2 <= 0):
            raise CaseError("zero-impedance branch")
        if np.any(self.vmin > self.vmax):
            raise CaseError("vmin exceeds vmax")

    @property
    def n_bus(self) -> int:
        return int(self.bus_ids.size)

    @property
    def n_branch(self) -> int:
        return int(self.br_from.size)

    @property
    def n_gen(self) -> int:
        return int(self.gen_bus.size)

    @property
    def ref_bus(self) -> int:
        ref = np.nonzero(self.bus_type == 3)[0]
        return int(ref[0]) if ref.size else 0


@dataclass(frozen=True)
class UcData:
    """Per-generator commitment data in per-unit and periods.

    ``load_profile`` scales the case demand period by period.
    """

    ramp_up: np.ndarray
    ramp_down: np.ndarray
    startup_power: np.ndarray
    shutdown_power: np.ndarray
    min_up: np.ndarray
    min_down: np.ndarray
    startup_cost: np.ndarray
    init_status: np.ndarray
    init_output: np.ndarray
    load_profile: np.ndarray = field(default_factory=lambda: np.ones(24))

    def __post_init__(self):
        if np.any(self.min_up < 1) or np.any(self.min_down < 1):
            raise CaseError("minimum up and down times must be at least one period")
        for name in ("ramp_up", "ramp_down", "startup_power", "shutdown_power", "init_output"):
            if np.any(getattr(self, name) < 0):
                raise CaseError(f"{name} must be non-negative")
        if not np.all(np.isin(self.init_status, (0, 1))):
            raise CaseError("initial status must be 0 or 1")

    @property
    def n_gen(self) -> int:
        return int(self.ramp_up.size)


@dataclass(frozen=True)
class OpfMatrices:
    """Real ``2|N| x 2|N|`` embeddings; branch lists are indexed by branch then end."""

    EG: list
    EGbar: list
    EB: list
    EBbar: list
    M: list


@dataclass(frozen=True)
class Admittance:
    """Bus admittance matrix and per-branch two-port blocks.

    ``ysh[l, 0]`` and ``ysh[l, 1]`` are the shunt values at the from and to
    ends of branch ``l``; ``yff, yft, ytf, ytt`` are the branch-end entries.
    """

    Y: sp.csr_matrix
    ysh: np.ndarray
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray


def build_admittance(case: PowerCase) -> Admittance:
    """Pi-model bus admittance with MATPOWER tap and phase-shift conventions."""
    nb = case.n_bus
    ys = 1.0 / (case.r + 1j * case.x)
    tap = np.where(case.tap == 0, 1.0, case.tap) * np.exp(1j * case.shift)
    half = 0.5j * case.b
    ytt = ys + half
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    f, t = case.br_from, case.br_to
    rows = np.concatenate([f, f, t, t])
    cols = np.concatenate([f, t, f, t])
    vals = np.concatenate([yff, yft, ytf, ytt])
    Y = sp.coo_matrix((vals, (rows, cols)), shape=(nb, nb)).tocsr()
    Y = Y + sp.diags((case.gs + 1j * case.bs).astype(complex))
    ysh = np.stack([half / (tap * np.conj(tap)), half], axis=1)
    return Admittance(Y.tocsr(), ysh, yff, yft, ytf, ytt)


def _embed(A: sp.spmatrix, sign: float, imag_first: bool) -> sp.csr_matrix:
    At = A.T
    S, D = A + At, A - At
    if not imag_first:
        # 1/2 [[Re(A+A'), Im(A'-A)], [Im(A-A'), Re(A+A')]]
        blocks = [[S.real, -D.imag], [D.imag, S.real]]
    else:
        # -1/2 [[Im(A+A'), Re(A-A')], [Re(A'-A), Im(A+A')]]
        blocks = [[S.imag, D.real], [-D.real, S.imag]]
    return (sign * 0.5 * sp.bmat(blocks)).tocsr()


def _row_matrix(nb: int, i: int, cols, vals) -> sp.csr_matrix:
    return sp.csr_matrix((np.asarray(vals, complex), (np.full(len(cols), i), np.asarray(cols))),
                         shape=(nb, nb))


def build_opf_matrices(case: PowerCase, adm: Admittance) -> OpfMatrices:
    """Injection, flow and voltage-magnitude matrices for every bus and branch end."""
    nb = case.n_bus
    Y = adm.Y.tocsr()
    EG, EGbar, M = [], [], []
    for i in range(nb):
        lo, hi = Y.indptr[i], Y.indptr[i + 1]
        YG = _row_matrix(nb, i, Y.indices[lo:hi], Y.data[lo:hi])
        EG.append(_embed(YG, 1.0, False))
        EGbar.append(_embed(YG, -1.0, True))
        M.append(sp.csr_matrix(([1.0, 1.0], ([i, nb + i], [i, nb + i])), shape=(2 * nb, 2 * nb)))
    EB, EBbar = [], []
    for l in range(case.n_branch):
        f, t = int(case.br_from[l]), int(case.br_to[l])
        pair = []
        for i, j, yii, yij in ((f, t, adm.yff[l], adm.yft[l]), (t, f, adm.ytt[l], adm.ytf[l])):
            YB = _row_matrix(nb, i, [i, j], [yii, yij])
            pair.append((_embed(YB, 1.0, False), _embed(YB, -1.0, True)))
        EB.append((pair[0][0], pair[1][0]))
        EBbar.append((pair[0][1], pair[1][1]))
    return OpfMatrices(EG, EGbar, EB, EBbar, M)


def injections(case: PowerCase, adm: Admittance, V: np.ndarray) -> np.ndarray:
    """Complex power injections ``V * conj(Y V)`` computed directly."""
    return V * np.conj(adm.Y @ V)


def stack_voltage(V: np.ndarray) -> np.ndarray:
    return np.concatenate([V.real, V.imag])


# ---------------------------------------------------------------------------
# instance inputs and variations


@dataclass(frozen=True)
class UcopfInputs:
    """Per-period data consumed by :func:`build_from_inputs`.

    Demands and reactive limits are ``(rows, T)`` arrays so that noise can
    vary across periods.
    """

    case: PowerCase
    uc: UcData
    T: int
    pd: np.ndarray
    qd: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    variation: dict = field(default_factory=dict)


def make_inputs(case: PowerCase, uc: UcData, T: int) -> UcopfInputs:
    """Base demand scaled by the first ``T`` points of the load profile."""
    if T < 1:
        raise CaseError("at least one period is required")
    if uc.n_gen != case.n_gen:
        raise CaseError(f"UC data covers {uc.n_gen} generators, case has {case.n_gen}")
    prof = np.asarray(uc.load_profile, dtype=float)
    if prof.size < T:
        raise CaseError(f"load profile has {prof.size} points, {T} periods requested")
    prof = prof[:T]
    return UcopfInputs(case, uc, T, np.outer(case.pd, prof), np.outer(case.qd, prof),
                       case.pmin.copy(), case.pmax.copy(),
                       np.repeat(case.qmin[:, None], T, axis=1),
                       np.repeat(case.qmax[:, None], T, axis=1))


def apply_variation(inputs: UcopfInputs, kind: str, level: float = 0.0, seed: int = 0,
                    gamma: float = 1.0) -> UcopfInputs:
    """Return modified inputs for ``kind`` in ``initial_zero``, ``noise`` or ``gamma``.

    ``noise`` multiplies each bus demand, and the reactive limits of the
    generators at that bus, by ``1 + eps`` with ``eps`` uniform on
    ``[-2 level, 2 level]`` drawn independently per bus and period, so the
    mean of ``|eps|`` is ``level``.  ``gamma`` maps ``(Pmin, Pmax)`` to
    ``(Pmin / gamma, gamma Pmax)``.
    """
    var = dict(inputs.variation)
    if kind == "initial_zero":
        uc = replace(inputs.uc, init_status=np.zeros_like(inputs.uc.init_status),
                     init_output=np.zeros_like(inputs.uc.init_output))
        var["initial_zero"] = True
        return replace(inputs, uc=uc, variation=var)
    if kind == "noise":
        if level < 0:
            raise ValueError("noise level must be non-negative")
        rng = np.random.default_rng(seed)
        eps = rng.uniform(-2.0 * level, 2.0 * level, size=inputs.pd.shape)
        g = 1.0 + eps
        gb = g[inputs.case.gen_bus]
        var["noise"] = {"level": level, "seed": seed}
        return replace(inputs, pd=inputs.pd * g, qd=inputs.qd * g, qmin=inputs.qmin * gb,
                       qmax=inputs.qmax * gb, variation=var)
    if kind == "gamma":
        if gamma < 1:
            raise ValueError("gamma must be at least 1")
        var["gamma"] = gamma
        return replace(inputs, pmin=inputs.pmin / gamma, pmax=inputs.pmax * gamma, variation=var)
    raise ValueError(f"unknown variation {kind!r}")


# ---------------------------------------------------------------------------
# the MIQCQP


@dataclass(frozen=True)
class UcopfLayout:
    """Variable positions.  Continuous variables are grouped by period."""

    T: int
    n_bus: int
    n_gen: int
    n_branch: int
    per_period: int

    def _base(self, t: int) -> int:
        return (t - 1) * self.per_period

    def X(self, t: int) -> np.ndarray:
        return self._base(t) + np.arange(2 * self.n_bus)

    def pg(self, t: int, g: int) -> int:
        return self._base(t) + 2 * self.n_bus + g

    def qg(self, t: int, g: int) -> int:
        return self._base(t) + 2 * self.n_bus + self.n_gen + g

    def pf(self, t: int, l: int, end: int) -> int:
        return self._base(t) + 2 * self.n_bus + 2 * self.n_gen + 2 * l + end

    def qf(self, t: int, l: int, end: int) -> int:
        return self._base(t) + 2 * self.n_bus + 2 * self.n_gen + 2 * self.n_branch + 2 * l + end

    def v(self, t: int, g: int) -> int:
        return (t - 1) * 3 * self.n_gen + g

    def y(self, t: int, g: int) -> int:
        return (t - 1) * 3 * self.n_gen + self.n_gen + g

    def z(self, t: int, g: int) -> int:
        return (t - 1) * 3 * self.n_gen + 2 * self.n_gen + g


@dataclass(frozen=True)
class UcopfModel:
    instance: MiqcqpInstance
    layout: UcopfLayout
    inputs: UcopfInputs
    matrices: OpfMatrices
    families: dict  # constraint family -> (kind, row indices) with kind "quad" or "lin"


def _quad_dict(S: sp.spmatrix, idx: np.ndarray) -> dict:
    C = sp.triu(S).tocoo()
    out = {}
    for a, b, v in zip(C.row, C.col, C.data):
        if v != 0.0:
            key = (int(idx[a]), int(idx[b]))
            out[key] = out.get(key, 0.0) + float(v)
    return out


def build_ucopf_instance(case: PowerCase, uc: UcData, T: int,
                         inputs: UcopfInputs | None = None) -> UcopfModel:
    """Assemble the UC-OPF MIQCQP.

    Constraint families (keys of ``UcopfModel.families``): ``logic``,
    ``ramp_up``, ``ramp_down``, ``min_up``, ``min_down``, ``balance_p``,
    ``balance_q``, ``p_limits``, ``q_limits``, ``voltage``, ``flow_p``,
    ``flow_q``, ``flow_limit``, ``cut_on``, ``cut_off``.  Bus aggregation of
    generator output is written directly into the balance rows.
    """
    if inputs is None:
        inputs = make_inputs(case, uc, T)
    case, uc, T = inputs.case, inputs.uc, inputs.T
    if uc.n_gen != case.n_gen:
        raise CaseError(f"UC data covers {uc.n_gen} generators, case has {case.n_gen}")
    nb, ng, nl = case.n_bus, case.n_gen, case.n_branch
    adm = build_admittance(case)
    mats = build_opf_matrices(case, adm)
    per = 2 * nb + 2 * ng + 4 * nl
    lay = UcopfLayout(T, nb, ng, nl, per)
    n_cont, n_int = per * T, 3 * ng * T
    lb, ub = np.full(n_cont, -np.inf), np.full(n_cont, np.inf)
    rate = np.where(case.rate > 0, case.rate, np.inf)
    # no angle reference: fixing Im V at one bus would leave the lifted
    # relaxation without a strictly feasible point
    for t in range(1, T + 1):
        X = lay.X(t)
        lb[X[:nb]], ub[X[:nb]] = -case.vmax, case.vmax
        lb[X[nb:]], ub[X[nb:]] = -case.vmax, case.vmax
        for g in range(ng):
            lb[lay.pg(t, g)] = min(0.0, inputs.pmin[g])
            ub[lay.pg(t, g)] = max(0.0, inputs.pmax[g])
            lb[lay.qg(t, g)] = min(0.0, inputs.qmin[g, t - 1])
            ub[lay.qg(t, g)] = max(0.0, inputs.qmax[g, t - 1])
        for l in range(nl):
            for e in (0, 1):
                for k in (lay.pf(t, l, e), lay.qf(t, l, e)):
                    lb[k], ub[k] = -rate[l], rate[l]

    quad: list[QuadConstraint] = []
    lin: list[LinConstraint] = []
    fam: dict[str, tuple[str, list[int]]] = {}

    def add_lin(name, lx, ly, sense, rhs):
        fam.setdefault(name, ("lin", []))[1].append(len(lin))
        lin.append(LinConstraint(lx, ly, sense, rhs))

    def add_quad(name, form, sense, rhs):
        fam.setdefault(name, ("quad", []))[1].append(len(quad))
        quad.append(QuadConstraint(form, sense, rhs))

    v0 = uc.init_status.astype(float)
    p0 = uc.init_output.astype(float)
    gens_at = [np.nonzero(case.gen_bus == i)[0] for i in range(nb)]

    for t in range(1, T + 1):
        X = lay.X(t)
        for g in range(ng):
            v, y, z = lay.v(t, g), lay.y(t, g), lay.z(t, g)
            pg, qg = lay.pg(t, g), lay.qg(t, g)
            # commitment logic v_{t-1} - v_t + y_t - z_t = 0
            ly = {v: -1.0, y: 1.0, z: -1.0}
            rhs = 0.0
            if t > 1:
                ly[lay.v(t - 1, g)] = 1.0
            else:
                rhs = -v0[g]
            add_lin("logic", {}, ly, "==", rhs)
            # ramps
            if t > 1:
                add_lin("ramp_up", {pg: 1.0, lay.pg(t - 1, g): -1.0},
                        {lay.v(t - 1, g): -uc.ramp_up[g], y: -uc.startup_power[g]}, "<=", 0.0)
                add_lin("ramp_down", {lay.pg(t - 1, g): 1.0, pg: -1.0},
                        {v: -uc.ramp_down[g], z: -uc.shutdown_power[g]}, "<=", 0.0)
            else:
                add_lin("ramp_up", {pg: 1.0}, {y: -uc.startup_power[g]}, "<=",
                        p0[g] + uc.ramp_up[g] * v0[g])
                add_lin("ramp_down", {pg: -1.0}, {v: -uc.ramp_down[g], z: -uc.shutdown_power[g]},
                        "<=", -p0[g])
            # minimum up and down times, sums truncated at k >= 1
            ks = range(max(1, t - int(uc.min_up[g]) + 1), t + 1)
            ly = {}
            for k in ks:
                ly[lay.y(k, g)] = ly.get(lay.y(k, g), 0.0) + 1.0
            ly[v] = ly.get(v, 0.0) - 1.0
            add_lin("min_up", {}, ly, "<=", 0.0)
            ks = range(max(1, t - int(uc.min_down[g]) + 1), t + 1)
            ly = {v: 1.0}
            for k in ks:
                ly[lay.z(k, g)] = ly.get(lay.z(k, g), 0.0) + 1.0
            add_lin("min_down", {}, ly, "<=", 1.0)
            # output limits scaled by status
            add_lin("p_limits", {pg: 1.0}, {v: -inputs.pmax[g]}, "<=", 0.0)
            add_lin("p_limits", {pg: 1.0}, {v: -inputs.pmin[g]}, ">=", 0.0)
            add_lin("q_limits", {qg: 1.0}, {v: -inputs.qmax[g, t - 1]}, "<=", 0.0)
            add_lin("q_limits", {qg: 1.0}, {v: -inputs.qmin[g, t - 1]}, ">=", 0.0)
            # valid cuts
            prev = {lay.v(t - 1, g): -1.0} if t > 1 else {}
            c_on = {y: 1.0, z: 1.0, v: -1.0, **prev}
            add_lin("cut_on", {}, c_on, "<=", v0[g] if t == 1 else 0.0)
            prev = {lay.v(t - 1, g): 1.0} if t > 1 else {}
            c_off = {y: 1.0, z: 1.0, v: 1.0, **prev}
            add_lin("cut_off", {}, c_off, "<=", 2.0 - (v0[g] if t == 1 else 0.0))
        for i in range(nb):
            # sum_{k in H_i} P^G_k - P^L_i >= X' E^G_i X
            lx = {lay.pg(t, int(g)): -1.0 for g in gens_at[i]}
            add_quad("balance_p", QuadraticForm(_quad_dict(mats.EG[i], X), lx), "<=",
                     -inputs.pd[i, t - 1])
            lx = {lay.qg(t, int(g)): -1.0 for g in gens_at[i]}
            add_quad("balance_q", QuadraticForm(_quad_dict(mats.EGbar[i], X), lx), "<=",
                     -inputs.qd[i, t - 1])
            form = QuadraticForm(_quad_dict(mats.M[i], X))
            if case.vmin[i] == case.vmax[i]:
                add_quad("voltage", form, "==", float(case.vmax[i]) ** 2)
            else:
                add_quad("voltage", form, ">=", float(case.vmin[i]) ** 2)
                add_quad("voltage", form, "<=", float(case.vmax[i]) ** 2)
        for l in range(nl):
            for e in (0, 1):
                pf, qf = lay.pf(t, l, e), lay.qf(t, l, e)
                add_quad("flow_p", QuadraticForm(_quad_dict(mats.EB[l][e], X), {pf: -1.0}),
                         "==", 0.0)
                add_quad("flow_q", QuadraticForm(_quad_dict(mats.EBbar[l][e], X), {qf: -1.0}),
                         "==", 0.0)
                if np.isfinite(rate[l]):
                    add_quad("flow_limit", QuadraticForm({(pf, pf): 1.0, (qf, qf): 1.0}),
                             "<=", float(rate[l]) ** 2)

    # objective: MATPOWER costs are per MW, so convert p.u. output
    base = case.base_mva
    oq, ox, oy = {}, {}, {}
    for t in range(1, T + 1):
        for g in range(ng):
            pg = lay.pg(t, g)
            if case.c2[g]:
                oq[(pg, pg)] = case.c2[g] * base ** 2
            if case.c1[g]:
                ox[pg] = case.c1[g] * base
            oy[lay.v(t, g)] = case.c0[g]
            if uc.startup_cost[g]:
                oy[lay.y(t, g)] = uc.startup_cost[g]
    objective = QuadraticForm(oq, ox, oy)

    names_c = [""] * n_cont
    for t in range(1, T + 1):
        for a, k in enumerate(lay.X(t)):
            part = "e" if a < nb else "f"
            names_c[k] = f"{part}[{case.bus_ids[a % nb]},{t}]"
        for g in range(ng):
            names_c[lay.pg(t, g)] = f"Pg[{g},{t}]"
            names_c[lay.qg(t, g)] = f"Qg[{g},{t}]"
        for l in range(nl):
            for e in (0, 1):
                names_c[lay.pf(t, l, e)] = f"Pf[{l},{'ft'[e]},{t}]"
                names_c[lay.qf(t, l, e)] = f"Qf[{l},{'ft'[e]},{t}]"
    names_i = [""] * n_int
    for t in range(1, T + 1):
        for g in range(ng):
            names_i[lay.v(t, g)] = f"v[{g},{t}]"
            names_i[lay.y(t, g)] = f"y[{g},{t}]"
            names_i[lay.z(t, g)] = f"z[{g},{t}]"
    inst = MiqcqpInstance(n_cont, n_int, lb, ub, np.zeros(n_int), np.ones(n_int), objective,
                          tuple(quad), tuple(lin), tuple(names_c), tuple(names_i))
    return UcopfModel(inst, lay, inputs, mats, fam)


def voltage_graph_edges(case: PowerCase, mats: OpfMatrices | None = None) -> list[tuple[int, int]]:
    """Edges of the per-period correlative-sparsity graph on the ``2|N|`` voltage coordinates."""
    if mats is None:
        mats = build_opf_matrices(case, build_admittance(case))
    edges = set()
    for S in list(mats.EG) + list(mats.EGbar) + [m for pair in mats.EB for m in pair] \
            + [m for pair in mats.EBbar for m in pair]:
        C = sp.triu(S, k=1).tocoo()
        for a, b, v in zip(C.row, C.col, C.data):
            if v != 0.0:
                edges.add((int(a), int(b)))
    return sorted(edges)


@dataclass(frozen=True)
class BlockStats:
    """Moment blocks of the decomposed relaxation of one period."""

    n_blocks: int
    max_block: int
    histogram: dict
    n_soc: int


def period_block_stats(case: PowerCase, uc: UcData, homogeneous=False) -> BlockStats:
    """Count the moment blocks of a single-period decomposed relaxation.

    Clique blocks and the 2x2 epigraph blocks of cost-only variables are
    counted; the second-order-cone blocks that encode branch limits are
    reported separately in ``n_soc``.
    """
    inst = build_ucopf_instance(case, uc, 1).instance
    prob = build_decomposed_sdp(inst, decompose(build_cs_graph(inst)), homogeneous=homogeneous)
    sizes = [n for n, lab in zip(prob.block_sizes, prob.block_labels)
             if lab.startswith(("clique", "epigraph"))]
    n_soc = sum(lab.startswith("soc") for lab in prob.block_labels)
    return BlockStats(len(sizes), max(sizes, default=0), dict(sorted(Counter(sizes).items())),
                      n_soc)
