"""Regenerate the shipped UC JSON files from the MATPOWER cases.

The records follow simple deterministic rules rather than any published
table; see the ``provenance`` field written into each file.
"""
import json
from importlib.resources import files

import numpy as np

from miqcqp.io import UC_FORMAT, parse_matpower

# hourly load as a fraction of the case demand (IEEE RTS winter weekday shape)
PROFILE = [0.67, 0.63, 0.60, 0.59, 0.59, 0.60, 0.74, 0.86, 0.95, 0.96, 0.96, 0.95,
           0.95, 0.95, 0.93, 0.94, 0.99, 1.00, 1.00, 0.96, 0.91, 0.83, 0.73, 0.63]

PROVENANCE = (
    "Synthesised for this repository; not the original benchmark UC tables. "
    "ramp_up = ramp_down = max(0.3 Pmax, Pmin); startup_power = shutdown_power = "
    "max(Pmin, 0.5 Pmax); min_up = min_down = 2, 3 or 4 periods for Pmax below 100 MW, "
    "below 300 MW, or above; startup_cost = max(c0, 10 c1); initial output shares the "
    "first-period demand in proportion to Pmax, clipped to [Pmin, Pmax]. "
    "load_profile is an hourly shape applied to the case demand.")


def uc_document(case_name: str) -> dict:
    case = parse_matpower(files("miqcqp.data").joinpath(case_name + ".m").read_text())
    base = case.base_mva
    pmin, pmax = case.pmin * base, case.pmax * base
    demand = case.pd.sum() * base * PROFILE[0]
    share = pmax / pmax.sum() * demand * 1.05
    init = np.clip(share, pmin, pmax)
    gens = {}
    for g in range(case.n_gen):
        t_min = 2 if pmax[g] < 100 else 3 if pmax[g] < 300 else 4
        gens[str(g)] = {
            "ramp_up": round(float(max(0.3 * pmax[g], pmin[g])), 4),
            "ramp_down": round(float(max(0.3 * pmax[g], pmin[g])), 4),
            "startup_power": round(float(max(pmin[g], 0.5 * pmax[g])), 4),
            "shutdown_power": round(float(max(pmin[g], 0.5 * pmax[g])), 4),
            "min_up": t_min,
            "min_down": t_min,
            "startup_cost": round(float(max(case.c0[g], 10.0 * case.c1[g])), 4),
            "initial_status": 1,
            "initial_output": round(float(init[g]), 4),
        }
    return {"format": UC_FORMAT, "case": case_name, "provenance": PROVENANCE,
            "load_profile": PROFILE, "generators": gens}


if __name__ == "__main__":
    out = files("miqcqp.data")
    for case_name, fname in (("case6ww", "uc6.json"), ("case24_ieee_rts", "uc24.json"),
                             ("case118", "uc118.json")):
        with open(out.joinpath(fname), "w") as fh:
            json.dump(uc_document(case_name), fh, indent=1)
            fh.write("\n")
