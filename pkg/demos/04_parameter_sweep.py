#!/usr/bin/env python3
"""Mapping the stability region with a parameter sweep.

Grids the gain for a rate-mismatch-only link, runs randomized initial
histories per grid point, and compares the empirical classification
tallies against the analytic verdicts; then reproduces the certified
gain-versus-queue-weight table. CSVs land in demos/output/.

Run:  python demos/04_parameter_sweep.py
"""

import json
from pathlib import Path

import numpy as np

import rcpfluid as rf

HERE = Path(__file__).parent
OUT = HERE / "output"
OUT.mkdir(exist_ok=True)

print("=" * 72)
print("Gain sweep on a rate-mismatch-only link (10 trials per point)")
print("=" * 72)

spec = rf.load_sweep_spec(HERE.parent / "scenarios" / "sweep_gain_rate_mismatch.json")
result = rf.run_sweep(spec, workers=1)
csv_path = OUT / "gain_sweep.csv"
csv_path.write_text(result.to_csv())

print(f"\n{'a':>6} {'lhs':>9} {'certified':>10} {'conv':>5} {'osc':>4} "
      f"{'blow':>5} {'settle (s)':>11}")
for p in result.points:
    r = p.report
    settle = f"{p.mean_settling_time:11.1f}" if p.mean_settling_time else " " * 11
    print(f"{p.axis_values['a']:6.2f} {r.theorem_lhs:9.4f} "
          f"{str(r.theorem_ok).lower():>10} {p.tallies['converged']:5d} "
          f"{p.tallies['oscillating']:4d} {p.tallies['blowup']:5d} {settle}")
print(f"\nfull CSV: {csv_path}")
print("Every certified point converged on every randomized start, and")
print("settling slows as the gain shrinks (the update term scales with a).")

print("\n" + "=" * 72)
print("Certified gain across queue weights (the design artifact)")
print("=" * 72)

with open(HERE.parent / "scenarios" / "sweep_gain_rate_mismatch.json") as fh:
    base = json.load(fh)["base"]
base["links"][0]["a"] = 0.04
base["sim"]["horizon"] = 700.0
design = rf.parse_sweep_spec({
    "base": base,
    "axes": [{"target": "b",
              "values": [0.0] + [float(v) for v in np.geomspace(1e-3, 10.0, 20)]}],
    "per_point_trials": 2,
})
result = rf.run_sweep(design, workers=1)
(OUT / "design_sweep.csv").write_text(result.to_csv())

print(f"\n{'b':>10} {'certified a_max':>16}")
for p in result.points:
    b = p.axis_values["b"]
    a_max = (rf.RATE_MISMATCH_GAIN_BOUND if b == 0.0
             else p.report.gain_bound_queue)
    tag = "  <- rate mismatch only" if b == 0.0 else ""
    print(f"{b:10.4g} {a_max:16.5f}{tag}")
print(f"\nfull CSV: {OUT / 'design_sweep.csv'}")
print("The b = 0 column certifies a < 1/2 outright; any positive queue")
print("weight certifies strictly less, collapsing toward zero on both ends.")

print("\nDeterminism: rerunning the design sweep with 4 workers...")
again = rf.run_sweep(design, workers=4)
print("byte-identical CSV:", again.to_csv() == result.to_csv())
