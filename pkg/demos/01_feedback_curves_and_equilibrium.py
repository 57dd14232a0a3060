#!/usr/bin/env python3
"""Feedback curves and equilibrium operating points.

Walks through the two feedback shapes the rate controller can run with:
rate mismatch alone (f(y) = C - y) and rate mismatch plus a mean-queue
term with its pole at the link capacity. Solves the equilibrium both in
closed form and by bisection, and checks the queue-slope identity that
ties the queue model to the equilibrium balance.

Run:  python demos/01_feedback_curves_and_equilibrium.py
"""

import numpy as np

import rcpfluid as rf

C = 1.0          # link capacity, packets/s
B = 2.0          # queue-feedback weight
SIGMA2 = 1.0     # traffic variability (1 = Poisson)

print("=" * 72)
print("Feedback curves")
print("=" * 72)

plain = rf.RateMismatchCurve(C)
queued = rf.QueueFeedbackCurve(C, B, SIGMA2)

print(f"\n{'y':>6} {'C - y':>10} {'with queue term':>16}")
for y in (0.0, 0.2, 0.38, 0.6, 0.8, 0.95):
    print(f"{y:6.2f} {plain(y):10.4f} {queued(y):16.4f}")
print("\nThe queue term drags the curve down and sends it to -inf at the")
print("capacity pole, so with queue feedback the operating point sits")
print("strictly below capacity.")

print("\n" + "=" * 72)
print("Equilibria")
print("=" * 72)

eq_plain = rf.solve_equilibrium_bisect(plain, 2 * C)
print(f"\nrate mismatch only : y_bar = {eq_plain.y_bar:.10f}  (= capacity)")

eq_closed = rf.equilibrium_with_queue(C, B, SIGMA2)
eq_bisect = rf.solve_equilibrium_bisect(queued, C * (1 - 1e-9))
print(f"with queue feedback: y_bar = {eq_closed.y_bar:.10f}  (closed form)")
print(f"                     y_bar = {eq_bisect.y_bar:.10f}  (bisection)")
print(f"     closed-vs-bisect gap : {abs(eq_closed.y_bar - eq_bisect.y_bar):.2e}")
print(f"     balance residual     : {eq_closed.residual:.2e}")

print("\nEquilibrium utilization as the queue weight grows:")
print(f"{'b':>8} {'y_bar / C':>10}")
for b in (0.01, 0.1, 0.5, 2.0, 10.0, 100.0):
    print(f"{b:8.2f} {rf.equilibrium_with_queue(C, b, SIGMA2).y_bar / C:10.4f}")

print("\n" + "=" * 72)
print("Queue-slope identity")
print("=" * 72)
p_slope, ident = rf.queue_slope_identity(C, B, SIGMA2)
print(f"\nanalytic p'(y_bar)      : {p_slope:.10f}")
print(f"identity 1/(b * y_bar)  : {ident:.10f}")

link = rf.LinkParams(capacity=C, gain_a=0.1, queue_weight=B, variance=SIGMA2)
s = 1e-7 * C
fd = (rf.mean_queue_size(eq_closed.y_bar + s, link)
      - rf.mean_queue_size(eq_closed.y_bar - s, link)) / (2 * s)
print(f"central finite diff     : {fd:.10f}")

print("\nA custom tabulated curve works through the same machinery:")
ys = np.linspace(0.0, 2.0, 101)
cubic = rf.TabulatedCurve(ys, 1.0 - ys ** 3)
eq_cubic = rf.solve_equilibrium_bisect(cubic, 2.0 * (1 - 1e-9))
print(f"f(y) = 1 - y^3 tabulated: y_bar = {eq_cubic.y_bar:.10f}")
