"""Readers and writers: MATPOWER case text, UC JSON and solve reports.

UC JSON schema (``format: "miqcqp-uc/1"``)::

    {
      "format": "miqcqp-uc/1",
      "case": "case6ww",
      "provenance": "...",
      "load_profile": [24 demand multipliers],
      "generators": {
        "0": {"ramp_up": MW, "ramp_down": MW, "startup_power": MW,
              "shutdown_power": MW, "min_up": periods, "min_down": periods,
              "startup_cost": cost, "initial_status": 0|1, "initial_output": MW},
        ...
      }
    }

Generator records are keyed by their zero-based row in ``mpc.gen``.  The two
initial-condition fields are optional and default to ``1`` and ``Pmin``.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .ucopf import CaseError, PowerCase, UcData

REPORT_VERSION = 1
UC_FORMAT = "miqcqp-uc/1"


class FormatError(ValueError):
    """Input text does not follow the expected format."""


_ARRAY = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _matrix(body: str, name: str) -> np.ndarray:
    rows = []
    for chunk in re.split(r"[;\n]", body):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            rows.append([float(tok) for tok in re.split(r"[\s,]+", chunk) if tok])
        except ValueError as exc:
            raise FormatError(f"malformed row in mpc.{name}: {chunk!r}") from exc
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise FormatError(f"rows of mpc.{name} have different lengths")
    return np.array(rows)


def parse_matpower(text: str, name: str = "case") -> PowerCase:
    """Parse the ``baseMVA``/``bus``/``gen``/``branch``/``gencost`` subset of a MATPOWER case.

    Demands, shunts, limits and ratings are converted to per-unit.  Out-of-service
    generators and branches are dropped.  Only polynomial costs of degree at
    most two are accepted.
    """
    clean = _strip_comments(text)
    arrays = {m.group(1): _matrix(m.group(2), m.group(1)) for m in _ARRAY.finditer(clean)}
    scalars = {m.group(1): float(m.group(2)) for m in _SCALAR.finditer(clean)}
    m = re.search(r"function\s+mpc\s*=\s*(\w+)", clean)
    if m:
        name = m.group(1)
    if "baseMVA" not in scalars:
        raise FormatError("missing mpc.baseMVA")
    for key in ("bus", "gen", "branch", "gencost"):
        if key not in arrays:
            raise FormatError(f"missing array mpc.{key}")
    base = scalars["baseMVA"]
    bus, gen, br, cost = arrays["bus"], arrays["gen"], arrays["branch"], arrays["gencost"]
    if bus.shape[1] < 13 or gen.shape[1] < 10 or br.shape[1] < 11:
        raise FormatError("bus, gen or branch array has too few columns")
    if cost.shape[0] != gen.shape[0]:
        raise FormatError("mpc.gencost must have one row per generator")
    ids = bus[:, 0].astype(int)
    pos = {int(b): i for i, b in enumerate(ids)}

    def where(col):
        try:
            return np.array([pos[int(b)] for b in col], dtype=int)
        except KeyError as exc:
            raise CaseError(f"reference to unknown bus {exc.args[0]}") from None

    on_g = gen[:, 7] > 0
    on_b = br[:, 10] > 0
    gen, cost, br = gen[on_g], cost[on_g], br[on_b]
    c2, c1, c0 = np.zeros(len(gen)), np.zeros(len(gen)), np.zeros(len(gen))
    for g, row in enumerate(cost):
        if int(row[0]) != 2:
            raise FormatError("unsupported cost model (only polynomial costs)")
        n = int(row[3])
        coef = row[4:4 + n]
        if n > 3:
            if np.any(coef[:n - 3] != 0):
                raise FormatError("polynomial costs above degree two are not supported")
            coef = coef[n - 3:]
        coef = np.concatenate([np.zeros(3 - coef.size), coef])
        c2[g], c1[g], c0[g] = coef
    return PowerCase(
        base_mva=base, bus_ids=ids, bus_type=bus[:, 1].astype(int),
        pd=bus[:, 2] / base, qd=bus[:, 3] / base, gs=bus[:, 4] / base, bs=bus[:, 5] / base,
        vmin=bus[:, 12].copy(), vmax=bus[:, 11].copy(),
        br_from=where(br[:, 0]), br_to=where(br[:, 1]), r=br[:, 2].copy(), x=br[:, 3].copy(),
        b=br[:, 4].copy(), tap=br[:, 8].copy(), shift=np.deg2rad(br[:, 9]),
        rate=br[:, 5] / base, gen_bus=where(gen[:, 0]),
        pmin=gen[:, 9] / base, pmax=gen[:, 8] / base, qmin=gen[:, 4] / base,
        qmax=gen[:, 3] / base, c2=c2, c1=c1, c0=c0, name=name)


def format_matpower(case: PowerCase) -> str:
    """Write ``case`` as MATPOWER text; :func:`parse_matpower` reads it back exactly."""
    base = case.base_mva
    f = repr

    def rows(data):
        return "\n".join("\t" + "\t".join(f(float(v)) if isinstance(v, float) else str(v)
                                          for v in r) + ";" for r in data)

    bus = [(int(case.bus_ids[i]), int(case.bus_type[i]), case.pd[i] * base, case.qd[i] * base,
            case.gs[i] * base, case.bs[i] * base, 1, 1.0, 0.0, 0.0, 1,
            float(case.vmax[i]), float(case.vmin[i])) for i in range(case.n_bus)]
    gen = [(int(case.bus_ids[case.gen_bus[g]]), 0.0, 0.0, case.qmax[g] * base,
            case.qmin[g] * base, 1.0, base, 1, case.pmax[g] * base, case.pmin[g] * base)
           for g in range(case.n_gen)]
    br = [(int(case.bus_ids[case.br_from[l]]), int(case.bus_ids[case.br_to[l]]),
           float(case.r[l]), float(case.x[l]), float(case.b[l]), case.rate[l] * base,
           case.rate[l] * base, case.rate[l] * base, float(case.tap[l]),
           float(np.rad2deg(case.shift[l])), 1, -360.0, 360.0) for l in range(case.n_branch)]
    cost = [(2, 0.0, 0.0, 3, float(case.c2[g]), float(case.c1[g]), float(case.c0[g]))
            for g in range(case.n_gen)]
    return (f"function mpc = {case.name}\nmpc.version = '2';\nmpc.baseMVA = {f(float(base))};\n"
            f"mpc.bus = [\n{rows(bus)}\n];\nmpc.gen = [\n{rows(gen)}\n];\n"
            f"mpc.branch = [\n{rows(br)}\n];\nmpc.gencost = [\n{rows(cost)}\n];\n")


_UC_FIELDS = ("ramp_up", "ramp_down", "startup_power", "shutdown_power", "min_up",
              "min_down", "startup_cost")


def parse_uc_json(text: str, case: PowerCase) -> UcData:
    """Validate UC JSON against ``case`` and convert MW fields to per-unit."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != UC_FORMAT:
        raise FormatError(f"expected a JSON object with format {UC_FORMAT!r}")
    gens = doc.get("generators")
    if not isinstance(gens, dict):
        raise FormatError("'generators' must be an object keyed by generator index")
    if len(gens) != case.n_gen:
        raise CaseError(f"UC data has {len(gens)} generator records, case has {case.n_gen}")
    base = case.base_mva
    cols = {k: np.zeros(case.n_gen) for k in _UC_FIELDS + ("initial_status", "initial_output")}
    for key, rec in gens.items():
        try:
            g = int(key)
        except ValueError:
            raise FormatError(f"generator key {key!r} is not an integer") from None
        if not 0 <= g < case.n_gen:
            raise CaseError(f"generator record {g} out of range")
        if not isinstance(rec, dict):
            raise FormatError(f"generator record {g} must be an object")
        for k in _UC_FIELDS:
            if k not in rec:
                raise FormatError(f"generator record {g} lacks {k!r}")
            val = rec[k]
            if not isinstance(val, (int, float)) or isinstance(val, bool) or not math.isfinite(val):
                raise FormatError(f"generator record {g}: {k!r} must be a finite number")
            cols[k][g] = float(val)
        for k in ("min_up", "min_down"):
            if cols[k][g] != int(cols[k][g]):
                raise FormatError(f"generator record {g}: {k!r} must be an integer")
        cols["initial_status"][g] = float(rec.get("initial_status", 1))
        cols["initial_output"][g] = float(rec.get("initial_output", case.pmin[g] * base))
    prof = doc.get("load_profile", [1.0] * 24)
    if not isinstance(prof, list) or not prof or not all(isinstance(p, (int, float)) for p in prof):
        raise FormatError("'load_profile' must be a non-empty list of numbers")
    return UcData(
        ramp_up=cols["ramp_up"] / base, ramp_down=cols["ramp_down"] / base,
        startup_power=cols["startup_power"] / base, shutdown_power=cols["shutdown_power"] / base,
        min_up=cols["min_up"].astype(int), min_down=cols["min_down"].astype(int),
        startup_cost=cols["startup_cost"], init_status=cols["initial_status"].astype(int),
        init_output=cols["initial_output"] / base, load_profile=np.array(prof, dtype=float))


# ---------------------------------------------------------------------------
# reports


@dataclass
class SolveReport:
    """Summary of one branch-and-bound run, serialisable to JSON."""

    instance: str
    settings: dict
    status: str
    misdp_gap: float
    miqcqp_gap: float
    ub_misdp: float
    ub_miqcqp: float
    lb: float
    time_s: float
    ls_share: float
    iterations: int
    ub_jumps: int
    nodes: int
    n_local: int
    n_blocks: int
    max_block: int
    history: list = field(default_factory=list)
    best_y: list | None = None
    version: int = REPORT_VERSION

    @classmethod
    def from_bnb(cls, label: str, settings: dict, report) -> "SolveReport":
        best = report.best_miqcqp
        return cls(instance=label, settings=settings, status=report.status,
                   misdp_gap=report.misdp_gap, miqcqp_gap=report.miqcqp_gap,
                   ub_misdp=report.ub_misdp, ub_miqcqp=report.ub_miqcqp, lb=report.lb,
                   time_s=report.time_s, ls_share=report.ls_share,
                   iterations=report.iterations, ub_jumps=report.ub_jumps, nodes=report.nodes,
                   n_local=report.n_local, n_blocks=report.n_blocks,
                   max_block=report.max_block,
                   history=[list(h) for h in report.history],
                   best_y=None if best is None else [int(round(v)) for v in best.y])

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.__dict__), indent=2, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "SolveReport":
        doc = json.loads(text)
        if doc.get("version") != REPORT_VERSION:
            raise FormatError(f"unsupported report version {doc.get('version')!r}")
        for k in ("misdp_gap", "miqcqp_gap", "ub_misdp", "ub_miqcqp", "lb"):
            doc[k] = _number(doc[k])
        doc["history"] = [[_number(v) for v in h] for h in doc["history"]]
        return cls(**doc)


def _jsonable(obj):
    # JSON has no infinities; encode them as strings
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, (np.floating, np.integer)):
        return _jsonable(obj.item())
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _number(v):
    return float(v) if isinstance(v, str) else v
