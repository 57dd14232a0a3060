"""Shared builders for the test suite."""

import math
from pathlib import Path

import numpy as np

import rcpfluid as rf

REPO_ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = REPO_ROOT / "scenarios"

# canonical rate-mismatch-only setup: C=1, a=0.4, one route, RTT 1 s
CASE_B = dict(capacity=1.0, gain_a=0.4)

# canonical queue-feedback setup: C=1, a=0.05, b=2, sigma2=1, RTTs (0.5, 1.5)
CASE_A = dict(capacity=1.0, gain_a=0.05, queue_weight=2.0, variance=1.0)

# 50-digit-arithmetic reference values for the queue-feedback setup
Y_BAR_A = 0.38196601125010515          # (3 - sqrt 5) / 2
W_A = 0.020103474276321324
F1_A = 3.6180339887498949
F2_A = 3.7060568905308919
LHS_A = 0.0054190974549510183
A_MAX_B2 = 1.0 / 11.0                  # certified gain bound at b=2, sigma2=1
A_MAX_B01 = 0.10056040392403998        # certified gain bound at b=0.1, sigma2=1


def route(rid="r0", rtt=1.0, link="L", split=0.5):
    fwd = rtt * split
    return rf.RouteSpec(rid, (link,), {link: fwd}, {link: rtt - fwd})


def single_link_network(rtts=(1.0,), link="L", **params):
    lp = rf.LinkParams(**params)
    routes = tuple(route(f"r{i}", rtt, link) for i, rtt in enumerate(rtts))
    return rf.NetworkModel(links={link: lp}, routes=routes)


def case_b_system(gain_a=0.4, capacity=1.0, rtts=(1.0,)):
    link = rf.LinkParams(capacity=capacity, gain_a=gain_a)
    return rf.reduce_single_link(link, [route(f"r{i}", t) for i, t in enumerate(rtts)])


def case_a_system(gain_a=0.05, capacity=1.0, queue_weight=2.0, variance=1.0,
                  rtts=(0.5, 1.5)):
    link = rf.LinkParams(capacity=capacity, gain_a=gain_a,
                         queue_weight=queue_weight, variance=variance)
    return rf.reduce_single_link(link, [route(f"r{i}", t) for i, t in enumerate(rtts)])


def pipeline(sys):
    """system -> (equilibrium, constants, report)"""
    eq = rf.equilibrium_of(sys)
    consts = rf.stability_constants(sys, eq)
    return eq, consts, rf.global_stability_check(sys, eq, consts)


class CertifiedScenario:
    """One random certified single-link scenario for the acceptance batch."""

    def __init__(self, link, rtts, system, eq, consts, target_lhs, history):
        self.link = link
        self.rtts = rtts
        self.system = system
        self.eq = eq
        self.consts = consts
        self.target_lhs = target_lhs
        self.history = history

    @property
    def with_queue(self):
        return self.link.queue_weight > 0

    def network(self):
        routes = tuple(route(f"r{i}", t) for i, t in enumerate(self.rtts))
        return rf.NetworkModel(links={"L": self.link}, routes=routes)


def random_certified_scenario(rng):
    """Draw a CertifiedScenario.

    1-8 routes with iid log-uniform [0.1, 10] s round trips, random
    capacity, queue feedback on half the draws, and the gain solved so
    the certificate's left side hits a uniform (0.005, 0.9) target. The
    constant initial history is drawn from [0.1, 2] x R_bar, clamped
    into the certified envelope when queue feedback is active.
    """
    n = int(rng.integers(1, 9))
    delays = tuple(float(v) for v in
                   np.exp(rng.uniform(math.log(0.1), math.log(10.0), n)))
    capacity = float(np.exp(rng.uniform(math.log(0.5), math.log(50.0))))
    with_queue = bool(rng.integers(0, 2))
    target = float(rng.uniform(0.005, 0.9))

    def routes():
        return [route(f"r{i}", d) for i, d in enumerate(delays)]

    if not with_queue:
        s = math.sqrt(target)
        a = s / (1.0 + s)  # inverts lhs = a^2/(1-a)^2
        link = rf.LinkParams(capacity=capacity, gain_a=a)
    else:
        b = float(np.exp(rng.uniform(math.log(1e-2), math.log(10.0))))
        sigma2 = float(rng.uniform(0.25, 4.0))
        eq0 = rf.equilibrium_with_queue(capacity, b, sigma2)
        a_hi = (1.0 - eq0.y_bar / capacity) * (1.0 - 1e-9)

        def lhs_of(a):
            link = rf.LinkParams(capacity=capacity, gain_a=a,
                                 queue_weight=b, variance=sigma2)
            sys = rf.reduce_single_link(link, routes())
            eq = rf.equilibrium_of(sys)
            return rf.global_stability_lhs(sys, eq,
                                           rf.stability_constants(sys, eq))

        lo, hi = 1e-12, a_hi
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if lhs_of(mid) < target:
                lo = mid
            else:
                hi = mid
        a = 0.5 * (lo + hi)
        link = rf.LinkParams(capacity=capacity, gain_a=a,
                             queue_weight=b, variance=sigma2)

    sys = rf.reduce_single_link(link, routes())
    eq = rf.equilibrium_of(sys)
    consts = rf.stability_constants(sys, eq)
    hi = 2.0 * eq.R_bar
    if with_queue:
        hi = min(hi, 0.98 * (eq.y_bar + consts.w) / eq.n_routes)
    hist = float(rng.uniform(0.1 * eq.R_bar, hi))
    return CertifiedScenario(link=link, rtts=delays, system=sys, eq=eq,
                             consts=consts, target_lhs=target, history=hist)


def certified_horizon(sys, eq):
    """Horizon generous enough for a certified run to settle: the linear
    decay rate kappa*ybar*|f'(ybar)| padded by a conservative factor."""
    G = sys.kappa * eq.y_bar * abs(float(sys.f.derivative(eq.y_bar)))
    tmax = max(sys.delays)
    return max(25.0 * tmax, 30.0 / G + 25.0 * tmax)
