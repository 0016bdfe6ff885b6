"""Primal-dual interior-point method for block-diagonal SDPs.

The method works on the homogeneous self-dual embedding of the standard form
``min c'x, Ax = b, x in K`` with ``K`` a product of a nonnegative orthant and
PSD blocks.  Search directions use Nesterov-Todd scaling and a Mehrotra
predictor-corrector; the Schur complement ``A W A'`` is assembled by
``kernels.SchurPlan``.
"""
from __future__ import annotations


import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernels import SchurPlan
from .problem import ConicSolution, SdpProblem, SolverSettings
from .standard import StandardForm, compile_problem




class _Scaling:
    """Nesterov-Todd scaling point of the current iterate."""

    def __init__(self, sf: StandardForm, x: np.ndarray, s: np.ndarray):
        nl = sf.n_lp
        xl, sl = x[:nl], s[:nl]
        self.w = np.sqrt(xl / sl)
        self.lam_lp = np.sqrt(xl * sl)
        self.R, self.Rinv, self.W, self.lam = [], [], [], []
        for g in sf.groups:
            X, S = g.view(x), g.view(s)
            Lx = np.linalg.cholesky(X)
            Ls = np.linalg.cholesky(S)
            U, sig, Vt = np.linalg.svd(np.swapaxes(Ls, 1, 2) @ Lx)
            isq = 1.0 / np.sqrt(sig)
            R = (Lx @ np.swapaxes(Vt, 1, 2)) * isq[:, None, :]
            Rinv = isq[:, :, None] * (np.swapaxes(U, 1, 2) @ np.swapaxes(Ls, 1, 2))
            self.R.append(R)
            self.Rinv.append(Rinv)
            self.W.append(R @ np.swapaxes(R, 1, 2))
            self.lam.append(sig)
        self.sf = sf

    def apply_W(self, z: np.ndarray) -> np.ndarray:
        out = np.empty_like(z)
        nl = self.sf.n_lp
        out[:nl] = self.w * self.w * z[:nl]
        for g, W in zip(self.sf.groups, self.W):
            g.view(out)[:] = W @ g.view(z) @ W
        return out

    def R_apply(self, xi_lp, xi_blocks) -> np.ndarray:
        """Map a scaled-space direction back: ``w * xi`` and ``R xi R'``."""
        out = np.empty(self.sf.N)
        out[:self.sf.n_lp] = self.w * xi_lp
        for g, R, xi in zip(self.sf.groups, self.R, xi_blocks):
            g.view(out)[:] = R @ xi @ np.swapaxes(R, 1, 2)
        return out

    def scaled_x(self, dx):
        lp = dx[:self.sf.n_lp] / self.w
        blocks = [Ri @ g.view(dx) @ np.swapaxes(Ri, 1, 2)
                  for g, Ri in zip(self.sf.groups, self.Rinv)]
        return lp, blocks

    def scaled_s(self, ds):
        lp = ds[:self.sf.n_lp] * self.w
        blocks = [np.swapaxes(R, 1, 2) @ g.view(ds) @ R for g, R in zip(self.sf.groups, self.R)]
        return lp, blocks


NEAR_FACTOR = 100.0  # tolerance multiple accepted for a stalled solve


def _sym(B):
    return 0.5 * (B + np.swapaxes(B, -1, -2))


def _jordan(a_blocks, b_blocks):
    return [_sym(a @ b) for a, b in zip(a_blocks, b_blocks)]


def _max_step(lam_lp, lam_blocks, d_lp, d_blocks) -> float:
    """Largest alpha with ``lam + alpha d`` in the cone (scaled space, lam diagonal)."""
    alpha = np.inf
    if lam_lp.size:
        ratio = d_lp / lam_lp
        mn = ratio.min()
        if mn < 0:
            alpha = min(alpha, -1.0 / mn)
    for lam, d in zip(lam_blocks, d_blocks):
        isq = 1.0 / np.sqrt(lam)
        G = isq[:, :, None] * d * isq[:, None, :]
        mn = np.linalg.eigvalsh(_sym(G))[:, 0].min()
        if mn < 0:
            alpha = min(alpha, -1.0 / mn)
    return alpha


class _Factor:
    def __init__(self, M, reg0=1e-10):
        self.dense = isinstance(M, np.ndarray)
        m = M.shape[0]
        scale = max(1.0, float(np.max(np.abs(M.diagonal()))) if m else 1.0)
        reg = 0.0
        self.kind = None
        for attempt in range(9):
            try:
                if self.dense:
                    Mr = M + reg * np.eye(m)
                    self.f = la.cho_factor(Mr, lower=True, check_finite=False)
                    self.kind = "chol"
                else:
                    self.f = spla.splu((M + reg * sp.eye(m, format="csc")).tocsc())
                    self.kind = "lu"
                break
            except (la.LinAlgError, RuntimeError, ValueError):
                reg = reg0 * scale if reg == 0.0 else reg * 100.0
        if self.kind is None:
            raise la.LinAlgError("Schur complement could not be factored")

    def solve(self, r):
        if self.kind == "chol":
            return la.cho_solve(self.f, r, check_finite=False)
        return self.f.solve(r)


def solve(problem: SdpProblem, settings: SolverSettings | None = None,
          backend: str | None = None) -> ConicSolution:
    """Solve ``problem``; see :class:`ConicSolution` for the result fields."""
    settings = settings or SolverSettings()
    errs = problem.validate()
    if errs:
        raise ValueError("malformed SDP problem: " + "; ".join(errs))
    sf = compile_problem(problem)
    if sf.infeasible_rows:
        return _empty_solution(problem, "primal_infeasible")
    plan = SchurPlan(sf, backend=backend)
    return _hsde(problem, sf, plan, settings)


def _empty_solution(problem, status, iterations=0):
    return ConicSolution(status, np.nan, [np.full((n, n), np.nan) for n in problem.block_sizes],
                         np.full(problem.n_scalars, np.nan), np.full(problem.n_rows, np.nan),
                         np.inf, iterations)


def _hsde(problem: SdpProblem, sf: StandardForm, plan: SchurPlan,
          settings: SolverSettings) -> ConicSolution:
    A, b, c = sf.A, sf.b, sf.c
    AT = A.T.tocsr()
    m, N = sf.m, sf.N
    e = sf.unit()
    nu = sf.nu + 1
    x = (1.0 + np.abs(b).max(initial=0.0)) * e
    s = e.copy()
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0
    bnorm = 1.0 + np.abs(b).max(initial=0.0)
    cnorm = 1.0 + np.abs(c).max(initial=0.0)
    row_scale = sf.row_scale
    cs = sf.c_scale
    trace, history = [], []
    status = "iteration_limit"
    best = None  # (score, iteration, state) of the most accurate iterate
    it = 0
    pobj = dobj = np.nan
    pres = dres = gap = np.inf

    def residuals(x, y, s, tau, kappa):
        rp = A @ x - b * tau
        rd = AT @ y + s - c * tau
        rg = c @ x - b @ y + kappa
        return rp, rd, rg

    for it in range(1, settings.max_iterations + 1):
        rp, rd, rg = residuals(x, y, s, tau, kappa)
        # convergence in original units
        pobj = cs * (c @ x) / tau + sf.obj_const
        dobj = cs * (b @ y) / tau + sf.obj_const
        pres = np.abs(rp / row_scale).max(initial=0.0) / tau / (1.0 + np.abs(b / row_scale).max(initial=0.0))
        dres = np.abs(rd).max(initial=0.0) / tau / cnorm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        mu = (x @ s + tau * kappa) / nu
        if settings.trace:
            trace.append(f"{it:4d} pobj={pobj:+.9e} dobj={dobj:+.9e} gap={gap:.2e} "
                         f"pres={pres:.2e} dres={dres:.2e} tau={tau:.2e} kappa={kappa:.2e}")
        history.append((pobj, dobj, pres, dres))
        if not (np.isfinite(mu) and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            status = "numerical_failure"
            break
        if pres <= settings.feas_tol and dres <= settings.feas_tol and gap <= settings.rel_gap_tol:
            status = "optimal"
            break
        score = max(pres / settings.feas_tol, dres / settings.feas_tol, gap / settings.rel_gap_tol)
        if best is None or score < best[0]:
            best = (score, it, (x, y, s, tau, kappa, pobj, dobj, pres, dres, gap))
        elif it - best[1] >= settings.stall_iterations and best[0] <= NEAR_FACTOR:
            # degenerate problems can stall short of full accuracy
            status = "near_optimal"
            break
        by = b @ y
        cx = c @ x
        if by > 0:
            if np.abs(AT @ y + s).max(initial=0.0) / by <= settings.feas_tol * cnorm \
                    and tau <= 1e-3 * kappa:
                status = "primal_infeasible"
                break
        if cx < 0:
            if np.abs(A @ x).max(initial=0.0) / -cx <= settings.feas_tol * bnorm \
                    and tau <= 1e-3 * kappa:
                status = "dual_infeasible"
                break
        if mu < 1e-14 * (1.0 + abs(x @ s)) and it > 5 and tau < 1e-12:
            status = "numerical_failure"
            break

        try:
            sc = _Scaling(sf, x, s)
            M = plan.assemble(sc.w * sc.w, sc.W)
            fac = _Factor(M)
        except (np.linalg.LinAlgError, la.LinAlgError):
            status = "numerical_failure"
            break
        Wc = sc.apply_W(c)
        AWc = A @ Wc
        q = fac.solve(AWc + b)
        cWc = c @ Wc

        den = AWc @ q - cWc - b @ q - kappa / tau

        def solve_newton(rp_, rd_, rg_, Rxi, dk):
            Wrd = sc.apply_W(rd_)
            p = fac.solve(rp_ - A @ Rxi + A @ Wrd)
            num = rg_ - dk / tau - c @ Rxi + Wc @ rd_ - AWc @ p + b @ p
            dtau = num / den
            dy = p + dtau * q
            ds = rd_ - AT @ dy + c * dtau
            dx = Rxi - sc.apply_W(ds)
            dkap = (dk - kappa * dtau) / tau
            return dx, dy, ds, dtau, dkap

        def direction(eta, D_lp, D_blocks, dk):
            rp_, rd_, rg_ = -eta * rp, -eta * rd, -eta * rg
            xi_lp = D_lp / sc.lam_lp
            xi_blocks = [2.0 * D / (lam[:, :, None] + lam[:, None, :])
                         for D, lam in zip(D_blocks, sc.lam)]
            Rxi = sc.R_apply(xi_lp, xi_blocks)
            d = solve_newton(rp_, rd_, rg_, Rxi, dk)
            zero = np.zeros(N)
            err = np.inf
            for _ in range(settings.refine_steps):
                dx, dy, ds, dtau, dkap = d
                e1 = rp_ - (A @ dx - b * dtau)
                e3 = rg_ - (c @ dx - b @ dy + dkap)
                e = max(np.abs(e1).max(initial=0.0), abs(e3))
                if e <= 1e-14 * (1.0 + np.abs(rp_).max(initial=0.0)) or e > 0.5 * err:
                    break
                err = e
                corr = solve_newton(e1, zero, e3, zero, 0.0)
                d = tuple(u + v for u, v in zip(d, corr))
            return d

        def step_length(dx, ds, dtau, dkap):
            xl, xb = sc.scaled_x(dx)
            sl, sb = sc.scaled_s(ds)
            a = min(_max_step(sc.lam_lp, sc.lam, xl, xb), _max_step(sc.lam_lp, sc.lam, sl, sb))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kappa / dkap)
            return a, (xl, xb), (sl, sb)

        # predictor
        lam2_lp = sc.lam_lp ** 2
        lam2_blocks = [np.einsum("ki,ij->kij", lam ** 2, np.eye(lam.shape[1])) for lam in sc.lam]
        dx_a, dy_a, ds_a, dtau_a, dkap_a = direction(
            1.0, -lam2_lp, [-L for L in lam2_blocks], -tau * kappa)
        a_aff, (xl, xb), (sl, sb) = step_length(dx_a, ds_a, dtau_a, dkap_a)
        a_aff = min(1.0, a_aff)
        sigma = (1.0 - a_aff) ** 3
        # corrector
        D_lp = sigma * mu - lam2_lp - xl * sl
        eyes = [np.broadcast_to(np.eye(lam.shape[1]), (lam.shape[0],) + (lam.shape[1],) * 2)
                for lam in sc.lam]
        D_blocks = [sigma * mu * I - L - J for I, L, J in zip(eyes, lam2_blocks, _jordan(xb, sb))]
        dk = sigma * mu - tau * kappa - dtau_a * dkap_a
        dx, dy, ds, dtau, dkap = direction(1.0 - sigma, D_lp, D_blocks, dk)
        a_max, _, _ = step_length(dx, ds, dtau, dkap)
        alpha = min(1.0, settings.step_fraction * a_max)

        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkap
        for g in sf.groups:
            g.view(x)[:] = _sym(g.view(x))
            g.view(s)[:] = _sym(g.view(s))
    else:
        it = settings.max_iterations

    if status in ("near_optimal", "iteration_limit", "numerical_failure") and best is not None \
            and best[0] <= NEAR_FACTOR:
        status = "near_optimal"
        x, y, s, tau, kappa, pobj, dobj, pres, dres, gap = best[2]
    finite = np.isfinite(tau) and tau > 0 and np.all(np.isfinite(x)) and np.all(np.isfinite(y))
    if status in ("primal_infeasible", "dual_infeasible") or not finite:
        sol = _empty_solution(problem, status if finite or status != "optimal"
                              else "numerical_failure", it)
        sol.trace, sol.history = trace, history
        return sol

    xs, ys = x / tau, y / tau
    blocks = sf.blocks_of(xs)
    scalars = sf.scalars_of(xs)
    y_orig = ys * cs
    duals = np.zeros(problem.n_rows)
    kept = sf.row_map >= 0
    duals[kept] = y_orig[sf.row_map[kept]] * row_scale[sf.row_map[kept]]
    return ConicSolution(status, float(pobj), blocks, scalars, duals, float(gap), it,
                         dual_objective=float(dobj), primal_residual=float(pres),
                         dual_residual=float(dres), std_x=xs,
                         std_y=y_orig * row_scale, trace=trace, history=history)


def check_solution(problem: SdpProblem, solution: ConicSolution, tol: float = 1e-6) -> list[str]:
    """Re-verify a solution from scratch; an empty list certifies it.

    Checks block positive semidefiniteness (minimum eigenvalue at least
    ``-1e-8 (1 + trace)``), original-row residuals relative to
    ``1 + max |rhs|``, scalar bounds, dual slack semidefiniteness and the
    relative duality gap.
    """
    out = []
    if any(not np.all(np.isfinite(B)) for B in solution.block_values):
        return ["non-finite block values"]
    for i, B in enumerate(solution.block_values):
        ev = np.linalg.eigvalsh(0.5 * (B + B.T))
        if ev[0] < -1e-8 * (1.0 + abs(np.trace(B))):
            out.append(f"block {i} not PSD (min eigenvalue {ev[0]:.3e})")
    x = solution.scalar_values
    lo_v = np.maximum(problem.scalar_lb - x, 0.0)
    hi_v = np.maximum(x - problem.scalar_ub, 0.0)
    if np.max(np.concatenate([lo_v, hi_v, [0.0]])) > tol:
        out.append("scalar bound violated")
    # row residuals in problem units
    act = problem.scalar_coef @ x
    vals = np.array([B[r, c] for B, r, c in
                     zip((solution.block_values[b] for b in problem.bt_block),
                         problem.bt_r, problem.bt_c)])
    if vals.size:
        act = act + np.bincount(problem.bt_row, problem.bt_val * vals, minlength=problem.n_rows)
    diff = act - problem.row_rhs
    sense = np.array(problem.row_sense)
    viol = np.where(sense == "<=", np.maximum(diff, 0.0),
                    np.where(sense == ">=", np.maximum(-diff, 0.0), np.abs(diff)))
    denom = 1.0 + np.abs(problem.row_rhs).max(initial=0.0)
    if viol.size and viol.max() / denom > tol:
        out.append(f"row residual {viol.max():.3e} exceeds tolerance")
    # objective recomputation
    obj = problem.obj_const + problem.obj_scalar @ x
    for b, r, c, v in zip(problem.ob_block, problem.ob_r, problem.ob_c, problem.ob_val):
        obj += v * solution.block_values[b][r, c]
    if abs(obj - solution.objective) > tol * (1.0 + abs(obj)):
        out.append(f"objective mismatch ({obj:.9g} vs reported {solution.objective:.9g})")
    # dual side
    if solution.std_y is not None:
        sf = compile_problem(problem, equilibrate=False)
        y = solution.std_y
        cfull = sf.c * sf.c_scale
        S = cfull - sf.A.T @ y
        cn = 1.0 + np.abs(cfull).max(initial=0.0)
        if sf.n_lp and S[:sf.n_lp].min() < -tol * cn:
            out.append(f"dual slack negative ({S[:sf.n_lp].min():.3e})")
        for g in sf.groups:
            ev = np.linalg.eigvalsh(_sym(g.view(S)))
            if ev.size and ev[:, 0].min() < -tol * cn:
                out.append(f"dual slack block not PSD ({ev[:, 0].min():.3e})")
        dual_obj = sf.b @ y + sf.obj_const
        gap = abs(obj - dual_obj) / (1.0 + abs(obj))
        if gap > tol:
            out.append(f"duality gap {gap:.3e} exceeds tolerance")
    else:
        out.append("solution carries no dual vector")
    return out
