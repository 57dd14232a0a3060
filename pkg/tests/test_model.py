"""Model-core behavior: queue model, flow aggregation, rate derivative,
projection, and the single-bottleneck reduction."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import rcpfluid as rf

from _support import CASE_B, case_a_system, case_b_system, route, \
    single_link_network

RNG = np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# mean queue size
# ---------------------------------------------------------------------------

class TestMeanQueueSize:
    LINK = rf.LinkParams(capacity=1.0, gain_a=0.1, variance=1.0)

    def test_zero_arrival(self):
        assert rf.mean_queue_size(0.0, self.LINK) == 0.0

    def test_half_load(self):
        assert rf.mean_queue_size(0.5, self.LINK) == pytest.approx(0.5, abs=1e-15)

    def test_high_load(self):
        # 0.8 / (2 * 0.2)
        assert rf.mean_queue_size(0.8, self.LINK) == pytest.approx(2.0, rel=1e-14)

    def test_pole_rejected(self):
        with pytest.raises(rf.DomainError):
            rf.mean_queue_size(1.0, self.LINK)
        with pytest.raises(rf.DomainError):
            rf.mean_queue_size(1.5, self.LINK)

    def test_negative_rejected(self):
        with pytest.raises(rf.DomainError):
            rf.mean_queue_size(-0.1, self.LINK)


# ---------------------------------------------------------------------------
# flow rate (harmonic aggregation)
# ---------------------------------------------------------------------------

class TestFlowRate:
    def test_single_link_identity(self):
        assert rf.flow_rate([5.0]) == 5.0

    def test_two_links(self):
        # 1 / (1/2 + 1/3)
        assert rf.flow_rate([2.0, 3.0]) == pytest.approx(1.2, rel=1e-15)

    def test_symmetry(self):
        r = 3.7
        assert rf.flow_rate([r] * 4) == pytest.approx(r / 4, rel=1e-15)

    def test_nonpositive_rejected(self):
        with pytest.raises(rf.DomainError):
            rf.flow_rate([2.0, 0.0])
        with pytest.raises(rf.DomainError):
            rf.flow_rate([])

    @given(st.lists(st.floats(min_value=1e-6, max_value=1e6), min_size=1,
                    max_size=10))
    def test_never_above_minimum(self, rates):
        x = rf.flow_rate(rates)
        assert x <= min(rates) * (1 + 1e-12)
        if len(rates) > 1:
            assert x < min(rates)


# ---------------------------------------------------------------------------
# weighted mean RTT
# ---------------------------------------------------------------------------

class TestWeightedMeanRtt:
    def test_equal_weights(self):
        for c in (0.3, 1.0, 42.0):
            assert rf.weighted_mean_rtt([c, c], [2.0, 4.0]) == pytest.approx(3.0)

    def test_weighted(self):
        assert rf.weighted_mean_rtt([1.0, 3.0], [2.0, 4.0]) == pytest.approx(3.5)

    def test_singleton(self):
        assert rf.weighted_mean_rtt([1.0], [7.0]) == 7.0

    def test_errors(self):
        with pytest.raises(rf.DomainError):
            rf.weighted_mean_rtt([], [])
        with pytest.raises(rf.DomainError):
            rf.weighted_mean_rtt([0.0], [1.0])
        with pytest.raises(rf.DomainError):
            rf.weighted_mean_rtt([1.0, 1.0], [1.0])


# ---------------------------------------------------------------------------
# aggregate arrival
# ---------------------------------------------------------------------------

class TestAggregateArrival:
    def test_constant_history_single_route(self):
        net = single_link_network(rtts=(1.0,), **CASE_B)
        y = rf.aggregate_arrival(net, "L", lambda lid, t: 0.7, t=5.0)
        assert y == pytest.approx(0.7, rel=1e-15)

    def test_constant_history_n_routes(self):
        net = single_link_network(rtts=(0.5, 1.0, 2.0), **CASE_B)
        y = rf.aggregate_arrival(net, "L", lambda lid, t: 0.7, t=5.0)
        assert y == pytest.approx(3 * 0.7, rel=1e-15)

    def test_two_link_route_composes_flow_rate(self):
        l1 = rf.LinkParams(capacity=10.0, gain_a=0.1)
        l2 = rf.LinkParams(capacity=10.0, gain_a=0.1)
        r = rf.RouteSpec("r0", ("L1", "L2"),
                         {"L1": 0.1, "L2": 0.2}, {"L1": 0.3, "L2": 0.2})
        net = rf.NetworkModel(links={"L1": l1, "L2": l2}, routes=(r,))
        rates = {"L1": 2.0, "L2": 3.0}
        y = rf.aggregate_arrival(net, "L1", lambda lid, t: rates[lid], t=1.0)
        assert y == pytest.approx(1.2, rel=1e-15)

    def test_history_underflow(self):
        net = single_link_network(rtts=(1.0,), **CASE_B)
        hist = rf.GridHistory(np.linspace(-0.5, 0.0, 6), {"L": np.full(6, 0.5)})
        with pytest.raises(rf.HistoryUnderflow):
            rf.aggregate_arrival(net, "L", hist, t=0.0)  # needs t-1


# ---------------------------------------------------------------------------
# rate derivative
# ---------------------------------------------------------------------------

class TestRcpRhs:
    def test_equilibrium_is_fixed_point(self):
        net = single_link_network(rtts=(1.0,), **CASE_B)
        # b = 0: equilibrium arrival equals capacity
        assert rf.rcp_rhs(net, "L", rate=0.3, aggregate=1.0, mean_rtt=1.0) == 0.0

    def test_rate_mismatch_only_value(self):
        net = single_link_network(rtts=(1.0,), **CASE_B)
        got = rf.rcp_rhs(net, "L", rate=0.5, aggregate=0.5, mean_rtt=1.0)
        assert got == pytest.approx(0.4 * 0.5 * 0.5, rel=1e-15)  # = 0.1

    def test_queue_feedback_value(self):
        net = single_link_network(rtts=(1.0,), capacity=1.0, gain_a=0.1,
                                  queue_weight=2.0, variance=1.0)
        got = rf.rcp_rhs(net, "L", rate=0.2, aggregate=0.5, mean_rtt=1.0)
        # 0.1*0.2*(1 - 0.5 - 2*0.5) = -0.01
        assert got == pytest.approx(-0.01, rel=1e-14)

    def test_above_capacity_legal_without_queue(self):
        net = single_link_network(rtts=(1.0,), **CASE_B)
        got = rf.rcp_rhs(net, "L", rate=0.5, aggregate=1.5, mean_rtt=1.0)
        assert got < 0

    def test_above_capacity_rejected_with_queue(self):
        net = single_link_network(rtts=(1.0,), capacity=1.0, gain_a=0.1,
                                  queue_weight=2.0)
        with pytest.raises(rf.DomainError):
            rf.rcp_rhs(net, "L", rate=0.5, aggregate=1.0, mean_rtt=1.0)

    def test_disabled_queue_feedback_removes_term(self):
        lp = rf.LinkParams(capacity=1.0, gain_a=0.1, queue_weight=2.0)
        net = rf.NetworkModel(links={"L": lp}, routes=(route(),),
                              queue_feedback_enabled=False)
        got = rf.rcp_rhs(net, "L", rate=0.5, aggregate=1.5, mean_rtt=1.0)
        assert got == pytest.approx(0.1 * 0.5 * (1 - 1.5), rel=1e-14)

    def test_sign_matches_feedback(self):
        net = single_link_network(rtts=(1.0,), capacity=1.0, gain_a=0.3,
                                  queue_weight=1.5, variance=0.8)
        link = net.links["L"]
        for _ in range(200):
            y = float(RNG.uniform(0.0, 0.999))
            r = float(RNG.uniform(1e-6, 3.0))
            fb = 1.0 - y - 1.5 * rf.mean_queue_size(y, link)
            d = rf.rcp_rhs(net, "L", rate=r, aggregate=y, mean_rtt=0.7)
            assert d * math.copysign(1.0, fb) >= 0.0

    def test_preconditions(self):
        net = single_link_network(rtts=(1.0,), **CASE_B)
        with pytest.raises(rf.DomainError):
            rf.rcp_rhs(net, "L", rate=0.0, aggregate=0.5, mean_rtt=1.0)
        with pytest.raises(rf.DomainError):
            rf.rcp_rhs(net, "L", rate=0.5, aggregate=0.5, mean_rtt=0.0)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

class TestProjection:
    def test_clamps_negative_push_at_nonpositive_state(self):
        assert rf.positivity_projection(-1.0, -0.5) == 0.0
        assert rf.positivity_projection(-1.0, 0.0) == 0.0

    def test_passthrough(self):
        assert rf.positivity_projection(-1.0, 0.5) == -1.0
        assert rf.positivity_projection(1.0, -0.5) == 1.0

    @given(st.floats(allow_nan=False, allow_infinity=False, width=32),
           st.floats(allow_nan=False, allow_infinity=False, width=32))
    def test_definition(self, v, w):
        u = rf.positivity_projection(v, w)
        assert u == (0.0 if (v < 0 and w <= 0) else v)


# ---------------------------------------------------------------------------
# bottleneck system
# ---------------------------------------------------------------------------

class TestBottleneckRhs:
    def test_zero_at_equilibrium(self):
        sys = case_b_system()
        assert rf.bottleneck_rhs(sys, 1.0, [1.0]) == 0.0

    def test_case_b_value(self):
        sys = case_b_system()  # kappa = 0.4
        assert sys.kappa == pytest.approx(0.4)
        got = rf.bottleneck_rhs(sys, 0.5, [0.5])
        assert got == pytest.approx(0.1, rel=1e-14)

    def test_projection_at_zero_rate(self):
        sys = case_b_system()
        assert rf.bottleneck_rhs(sys, 0.0, [1.5]) == 0.0  # f < 0, R = 0

    def test_domain_violation(self):
        sys = case_a_system()
        with pytest.raises(rf.DomainError):
            rf.bottleneck_rhs(sys, 0.5, [0.5, 0.6])  # sums past the pole

    def test_wrong_arity(self):
        sys = case_a_system()
        with pytest.raises(rf.DomainError):
            rf.bottleneck_rhs(sys, 0.5, [0.1])

    def test_matches_rcp_rhs_without_queue(self):
        # b = 0 mapping: kappa*R*(C - y) == a*R/(C*T) * (C - y)
        for _ in range(100):
            C = float(RNG.uniform(0.5, 20.0))
            a = float(RNG.uniform(0.05, 1.5))
            T = float(RNG.uniform(0.2, 5.0))
            net = single_link_network(rtts=(T,), capacity=C, gain_a=a)
            sys = rf.reduce_network(net)
            R = float(RNG.uniform(1e-3, 2 * C))
            y = float(RNG.uniform(0.0, 3 * C))
            lhs = rf.bottleneck_rhs(sys, R, [y])
            rhs = rf.rcp_rhs(net, "L", rate=R, aggregate=y, mean_rtt=T)
            rhs = rf.positivity_projection(rhs, R)
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


class TestReduction:
    def test_case_b_mapping(self):
        sys = case_b_system(gain_a=0.4, capacity=1.0, rtts=(1.0,))
        assert sys.kappa == pytest.approx(0.4, rel=1e-15)
        assert isinstance(sys.f, rf.RateMismatchCurve)
        assert sys.f(0.0) == 1.0 and sys.f.root == 1.0
        assert math.isinf(sys.f_domain_upper)

    def test_case_a_mapping(self):
        sys = case_a_system()
        assert sys.kappa == pytest.approx(0.05, rel=1e-15)
        assert sys.t_bar == pytest.approx(1.0, rel=1e-15)
        assert rf.equilibrium_of(sys).y_bar == pytest.approx(
            (3 - math.sqrt(5)) / 2, abs=1e-14)
        assert sys.f_domain_upper == 1.0

    def test_multi_link_route_rejected(self):
        link = rf.LinkParams(**CASE_B)
        r = rf.RouteSpec("r0", ("L", "M"), {"L": 0.1, "M": 0.1},
                         {"L": 0.1, "M": 0.1})
        with pytest.raises(rf.TopologyError):
            rf.reduce_single_link(link, [r])

    def test_queue_flag_off_drops_queue_term(self):
        lp = rf.LinkParams(capacity=2.0, gain_a=0.1, queue_weight=3.0)
        net = rf.NetworkModel(links={"L": lp}, routes=(route(),),
                              queue_feedback_enabled=False)
        sys = rf.reduce_network(net)
        assert isinstance(sys.f, rf.RateMismatchCurve)

    @pytest.mark.parametrize("curve", [
        rf.RateMismatchCurve(1.7),
        rf.QueueFeedbackCurve(1.7, 2.3, 0.9),
    ])
    def test_curves_strictly_decreasing(self, curve):
        hi = 1.7 if math.isfinite(curve.domain_upper) else 40.0
        for _ in range(1000):
            u, v = sorted(RNG.uniform(0.0, hi * (1 - 1e-9), 2))
            if u == v:
                continue
            assert curve(u) > curve(v)


class TestTabulatedCurve:
    def test_basic(self):
        ys = np.linspace(0.0, 2.0, 41)
        f = rf.TabulatedCurve(ys, 1.0 - ys ** 3)
        assert float(f(0.0)) == pytest.approx(1.0)
        assert float(f(1.0)) == pytest.approx(0.0, abs=1e-12)
        assert f.domain_upper == 2.0
        eq = rf.solve_equilibrium_bisect(f, 2.0 * (1 - 1e-9))
        assert eq.y_bar == pytest.approx(1.0, abs=1e-9)

    def test_rejects_non_monotone(self):
        with pytest.raises(rf.ValidationError):
            rf.TabulatedCurve([0.0, 1.0, 2.0], [1.0, 1.1, -1.0])


# ---------------------------------------------------------------------------
# structural validation
# ---------------------------------------------------------------------------

class TestValidation:
    def test_link_params(self):
        with pytest.raises(rf.ValidationError):
            rf.LinkParams(capacity=0.0, gain_a=0.1)
        with pytest.raises(rf.ValidationError):
            rf.LinkParams(capacity=1.0, gain_a=0.0)
        with pytest.raises(rf.ValidationError):
            rf.LinkParams(capacity=1.0, gain_a=0.1, queue_weight=-1.0)
        with pytest.raises(rf.ValidationError):
            rf.LinkParams(capacity=1.0, gain_a=0.1, variance=0.0)

    def test_route_round_trip_consistency(self):
        with pytest.raises(rf.ValidationError, match="round trip"):
            rf.RouteSpec("r0", ("L", "M"), {"L": 0.1, "M": 0.3},
                         {"L": 0.1, "M": 0.2})

    def test_route_needs_positive_rtt(self):
        with pytest.raises(rf.ValidationError):
            rf.RouteSpec("r0", ("L",), {"L": 0.0}, {"L": 0.0})

    def test_network_reference_check(self):
        lp = rf.LinkParams(**CASE_B)
        r = rf.RouteSpec("r0", ("X",), {"X": 0.5}, {"X": 0.5})
        with pytest.raises(rf.ValidationError, match="unknown link"):
            rf.NetworkModel(links={"L": lp}, routes=(r,))

    def test_network_unused_link(self):
        lp = rf.LinkParams(**CASE_B)
        with pytest.raises(rf.ValidationError, match="no route"):
            rf.NetworkModel(links={"L": lp, "M": lp}, routes=(route(),))

    def test_bottleneck_system_invariants(self):
        with pytest.raises(rf.ValidationError):
            rf.BottleneckSystem(kappa=0.0, delays=(1.0,),
                                f=rf.RateMismatchCurve(1.0))
        with pytest.raises(rf.ValidationError):
            rf.BottleneckSystem(kappa=0.1, delays=(),
                                f=rf.RateMismatchCurve(1.0))
        with pytest.raises(rf.ValidationError):
            rf.BottleneckSystem(kappa=0.1, delays=(0.0,),
                                f=rf.RateMismatchCurve(1.0))
