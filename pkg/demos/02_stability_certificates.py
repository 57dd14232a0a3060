#!/usr/bin/env python3
"""Global-stability certificates and the design comparison.

Builds the single-bottleneck reduction for a link with and without
queue feedback, computes the certificate constants (envelope width w
and the extremal secant slopes), evaluates the general condition and
the closed-form gain bounds, and iterates the perturbation-envelope
recursion whose contraction factor the condition controls.

Run:  python demos/02_stability_certificates.py
"""

import numpy as np

import rcpfluid as rf


def report_for(gain_a, queue_weight):
    link = rf.LinkParams(capacity=1.0, gain_a=gain_a,
                         queue_weight=queue_weight, variance=1.0)
    routes = [rf.RouteSpec("r0", ("L",), {"L": 0.25}, {"L": 0.25}),
              rf.RouteSpec("r1", ("L",), {"L": 0.75}, {"L": 0.75})]
    sys = rf.reduce_single_link(link, routes)
    eq = rf.equilibrium_of(sys)
    consts = rf.stability_constants(sys, eq)
    return sys, eq, consts, rf.global_stability_check(sys, eq, consts)


print("=" * 72)
print("Certificate for rate mismatch only (b = 0, a = 0.4)")
print("=" * 72)
sys_b, eq_b, c_b, rep_b = report_for(0.4, 0.0)
print(rf.render_report(rep_b))
print(f"constants: w = {c_b.w:.6f}, secant slopes f1 = {c_b.f1:.4f}, "
      f"f2 = {c_b.f2:.4f}")
print("With b = 0 the condition collapses to a^2/(1-a)^2 < 1, i.e. a < 1/2,")
print("independent of capacity and of every delay in the network.\n")

print("=" * 72)
print("Certificate with queue feedback (b = 2, a = 0.05)")
print("=" * 72)
sys_a, eq_a, c_a, rep_a = report_for(0.05, 2.0)
print(rf.render_report(rep_a))
print(f"constants: w = {c_a.w:.6f}, f1 = {c_a.f1:.6f}, f2 = {c_a.f2:.6f}")

print("\nEnvelope recursion (worst-case excursions, per round):")
it = rf.envelope_iteration(sys_a, eq_a, c_a, max_rounds=6)
print(f"{'round':>5} {'below (u_check)':>16} {'above (u_hat)':>14}")
for k, (uh, uc) in enumerate(zip(it.u_hats, it.u_checks)):
    print(f"{k:5d} {uc:16.3e} {uh:14.3e}")
print(f"contraction factor gamma = {it.gamma:.6f} "
      f"(= certificate lhs {rep_a.theorem_lhs:.6f} once the cap is inactive)")

print("\n" + "=" * 72)
print("The design comparison: certified gain vs queue weight")
print("=" * 72)
print(f"\n{'b':>10} {'certified a_max':>16}")
print(f"{0.0:10.4f} {rf.RATE_MISMATCH_GAIN_BOUND:16.4f}   (rate mismatch only)")
for b in np.geomspace(1e-3, 10.0, 9):
    print(f"{b:10.4f} {rf.gain_bound_with_queue(float(b), 1.0):16.4f}")
print("\nEvery b > 0 certifies less gain than b = 0, and the certified gain")
print("vanishes as b -> 0+: turning queue feedback down does not smoothly")
print("recover the no-queue bound, which favors running on rate mismatch")
print("alone. Local thresholds for comparison: pi/4 with queue feedback,")
print("pi/2 without; both far above the global bounds.")
