"""Post-fault constraint curve g(x1, y) = 0 and its fold for several source voltages.

For each E the high and low voltage branches are sampled up to the fold
angle; the fault-on CCT is listed alongside so the shift of the fold can be
read against the clearing time.

    python scripts/constraint_surface.py --values 0.9,1.0,1.1 --out results
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from dae_cct.cct import find_cct_event
from dae_cct.model import smib_scenario, smib_singular_locus, smib_voltage_branches
from dae_cct.simulator import fmt


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--values", default="0.9,1.0,1.1", help="comma-separated E values")
    ap.add_argument("--points", type=int, default=60)
    ap.add_argument("--out", default="results")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve, folds = out / "constraint_surface_vs_E.csv", out / "fold_vs_E.csv"
    with open(curve, "w", newline="") as fc, open(folds, "w", newline="") as ff:
        wc = csv.writer(fc, lineterminator="\n")
        wf = csv.writer(ff, lineterminator="\n")
        wc.writerow(["E", "x1", "y_high", "y_low"])
        wf.writerow(["E", "x1_fold", "y_fold", "t_cct"])
        for E in (float(v) for v in args.values.split(",")):
            sc = smib_scenario(E=E)
            x1s, ys = smib_singular_locus(sc.params)
            for x1 in np.linspace(-x1s, x1s, args.points):
                br = smib_voltage_branches(sc.params, x1)
                if br is None:  # rounding at the fold ends
                    br = (ys, ys)
                hi, lo = br
                wc.writerow([fmt(E), fmt(x1), fmt(hi), fmt(lo)])
            wf.writerow([fmt(E), fmt(x1s), fmt(ys), fmt(find_cct_event(sc, verify=False).t_cct)])
    print(curve)
    print(folds)


if __name__ == "__main__":
    main()
