"""Seeded random instance families used by tests, benchmarks and the CLI."""
from __future__ import annotations

import numpy as np

from .model import LinConstraint, MiqcqpInstance, QuadConstraint, QuadraticForm


def _random_edges(rng, n, density):
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
    # a random spanning path keeps the CS graph connected
    perm = rng.permutation(n)
    edges = {tuple(sorted((int(perm[i]), int(perm[i + 1])))) for i in range(n - 1)}
    budget = int(np.floor(density * len(pairs)))
    rest = [p for p in pairs if p not in edges]
    rng.shuffle(rest)
    while len(edges) < budget and rest:
        edges.add(rest.pop())
    return sorted(edges)


def _form_on(rng, n, edges, diag_scale=1.0, lin_scale=1.0, n_int=0, int_scale=0.0):
    quad = {e: float(rng.normal()) for e in edges if rng.random() < 0.8}
    for j in range(n):
        if rng.random() < 0.6:
            quad[(j, j)] = float(diag_scale * rng.normal())
    lin_x = {j: float(lin_scale * rng.normal()) for j in range(n) if rng.random() < 0.7}
    lin_y = {k: float(int_scale * rng.normal()) for k in range(n_int) if rng.random() < 0.7}
    return QuadraticForm(quad, lin_x, lin_y)


def random_sparse_qcqp(seed: int, n: int | None = None, density: float = 0.4,
                       n_constraints: int | None = None) -> MiqcqpInstance:
    """Bounded, feasible, connected-CS-graph QCQP without integers."""
    rng = np.random.default_rng(seed)
    n = int(n if n is not None else rng.integers(4, 9))
    edges = _random_edges(rng, n, density)
    lb = -rng.uniform(0.5, 2.0, n)
    ub = rng.uniform(0.5, 2.0, n)
    x0 = rng.uniform(lb, ub)
    obj = _form_on(rng, n, edges)
    cons = []
    for _ in range(int(n_constraints if n_constraints is not None else rng.integers(1, 4))):
        f = _form_on(rng, n, edges, lin_scale=0.5)
        val = _value(f, x0, np.zeros(0))
        cons.append(QuadConstraint(f, "<=", val + float(rng.uniform(0.1, 1.0))))
    return MiqcqpInstance(n, 0, lb, ub, np.zeros(0), np.zeros(0), obj, tuple(cons), ())


def random_tiny_miqcqp(seed: int, n_cont: int | None = None,
                       n_int: int | None = None) -> MiqcqpInstance:
    """Feasible MIQCQP with <= 4 continuous variables and <= 6 binaries.

    Binaries act as on/off switches on continuous variables and carry a fixed
    cost; a cardinality row couples them.
    """
    rng = np.random.default_rng(seed)
    n = int(n_cont if n_cont is not None else rng.integers(2, 5))
    m = int(n_int if n_int is not None else rng.integers(1, 7))
    edges = _random_edges(rng, n, 0.5)
    lb = np.zeros(n)
    ub = rng.uniform(1.0, 2.0, n)
    y0 = (rng.random(m) < 0.6).astype(float)
    if not y0.any():
        y0[0] = 1.0
    x0 = rng.uniform(lb, ub)
    switch = {j: int(rng.integers(0, m)) for j in range(n) if rng.random() < 0.7}
    for j, k in switch.items():
        if y0[k] == 0.0:
            x0[j] = 0.0
    obj = _form_on(rng, n, edges, n_int=m, int_scale=1.0)
    cons = []
    for _ in range(int(rng.integers(1, 3))):
        f = _form_on(rng, n, edges, lin_scale=0.5, n_int=m, int_scale=0.5)
        cons.append(QuadConstraint(f, "<=", _value(f, x0, y0) + float(rng.uniform(0.05, 0.5))))
    lins = [LinConstraint({j: 1.0}, {k: -float(ub[j])}, "<=", 0.0) for j, k in switch.items()]
    need = int(rng.integers(1, int(y0.sum()) + 1))
    lins.append(LinConstraint({}, {k: 1.0 for k in range(m)}, ">=", float(need)))
    return MiqcqpInstance(n, m, lb, ub, np.zeros(m), np.ones(m), obj, tuple(cons), tuple(lins))


def _value(form, x, y):
    from .model import Assignment, evaluate
    return evaluate(form, Assignment(x, y))


def six_var_form() -> QuadraticForm:
    """The six-variable sparse polynomial used to illustrate chordal extension.

    f = x1 x4 + x2 x5 - x1 x2 - x4 x5 + x0 (-x0 + x1 + x2 - x3 + x4 + x5)
    """
    terms = {(1, 4): 1.0, (2, 5): 1.0, (1, 2): -1.0, (4, 5): -1.0, (0, 0): -1.0,
             (0, 1): 1.0, (0, 2): 1.0, (0, 3): -1.0, (0, 4): 1.0, (0, 5): 1.0}
    return QuadraticForm.from_monomials(terms)


def six_var_instance() -> MiqcqpInstance:
    return MiqcqpInstance(6, 0, -np.ones(6), np.ones(6), np.zeros(0), np.zeros(0),
                          six_var_form(), (), ())
