"""CCT and its analytic slope over a parameter grid, with first-order predictions.

Writes one CSV per parameter: the computed curve plus, for every grid point,
the tangent-line prediction at the next point and its error.

    python scripts/cct_vs_parameter.py --param E --grid 0.9:1.2:0.05 --out results
"""
import argparse
import csv
from pathlib import Path

from dae_cct.cct import sweep
from dae_cct.config import grid
from dae_cct.model import smib_scenario
from dae_cct.simulator import fmt

DEFAULT_GRIDS = {"E": "0.9:1.2:0.05", "Pm": "0.4:0.6:0.05"}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--param", action="append", help="parameter name (repeatable; default E and Pm)")
    ap.add_argument("--grid", help="start:stop:step (default depends on parameter)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.param or ["E", "Pm"]:
        spec = args.grid or DEFAULT_GRIDS.get(name)
        if spec is None:
            ap.error(f"--grid required for {name}")
        start, stop, step = (float(v) for v in spec.split(":"))
        rows = sweep(smib_scenario(), name, grid(start, stop, step), jobs=args.jobs)
        path = out / f"cct_vs_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([name, "t_cct", "dcct_dp", "next_value", "tangent_prediction", "prediction_error", "error"])
            for a, b in zip(rows, rows[1:] + [None]):
                pred = err = ""
                if b is not None and not a.error and not b.error:
                    pred = a.t_cct + a.dcct_dp * (b.param_value - a.param_value)
                    err = fmt(b.t_cct - pred)
                    pred = fmt(pred)
                w.writerow([fmt(a.param_value), fmt(a.t_cct) if not a.error else "",
                            fmt(a.dcct_dp) if not a.error else "",
                            fmt(b.param_value) if b else "", pred, err, a.error])
        print(path)


if __name__ == "__main__":
    main()
