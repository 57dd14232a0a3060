"""Core fluid model of RCP rate control.

Pure evaluation of the delayed rate dynamics: the per-link rate update,
the aggregate arrival at a link, the harmonic route flow rate, the
traffic-weighted mean round-trip time, the mean queue size, and the
positivity projection. Also houses the single-bottleneck reduction used
by the stability analysis: one scalar rate driven through a strictly
decreasing feedback curve ``f`` with a multiset of heterogeneous delays.

Units: rates in packets/s, delays in seconds, queue sizes in packets.
All objects are immutable after construction and safe to share between
concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DomainError, TopologyError, ValidationError

__all__ = [
    "LinkParams",
    "RouteSpec",
    "NetworkModel",
    "BottleneckSystem",
    "RateMismatchCurve",
    "QueueFeedbackCurve",
    "TabulatedCurve",
    "mean_queue_size",
    "flow_rate",
    "weighted_mean_rtt",
    "aggregate_arrival",
    "rcp_rhs",
    "positivity_projection",
    "bottleneck_rhs",
    "reduce_single_link",
    "reduce_network",
]

# Round trips of one route measured at different links may disagree by at
# most this much (seconds) before the spec is rejected.
RTT_CONSISTENCY_TOL = 1e-12


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkParams:
    """Protocol and traffic parameters of one RCP-controlled link.

    Parameters
    ----------
    capacity : float
        Link capacity C in packets/s, > 0.
    gain_a : float
        Dimensionless rate-update gain a, > 0.
    queue_weight : float
        Dimensionless queue-feedback weight b, >= 0. Zero removes the
        queue term from the dynamics entirely.
    variance : float
        Traffic variability sigma^2 of the queue model, > 0
        (1 for Poisson traffic).
    """

    capacity: float
    gain_a: float
    queue_weight: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValidationError(f"capacity must be > 0, got {self.capacity}")
        if not self.gain_a > 0:
            raise ValidationError(f"gain_a must be > 0, got {self.gain_a}")
        if self.queue_weight < 0:
            raise ValidationError(
                f"queue_weight must be >= 0, got {self.queue_weight}")
        if not self.variance > 0:
            raise ValidationError(f"variance must be > 0, got {self.variance}")


@dataclass(frozen=True)
class RouteSpec:
    """One route: the ordered links it traverses and its propagation delays.

    ``forward_delay[j]`` is the delay from the source to link j,
    ``return_delay[j]`` the delay from link j back to the source. Their
    sum is the route round trip and must be the same at every link of
    the route (delays are propagation only; queueing delay is ignored).
    """

    route_id: str
    links: tuple
    forward_delay: Mapping[str, float]
    return_delay: Mapping[str, float]

    def __post_init__(self):
        if not self.links:
            raise ValidationError(f"route {self.route_id}: links must be non-empty")
        if len(set(self.links)) != len(self.links):
            raise ValidationError(f"route {self.route_id}: duplicate link")
        for j in self.links:
            if j not in self.forward_delay:
                raise ValidationError(
                    f"route {self.route_id}: missing forward_delay[{j}]")
            if j not in self.return_delay:
                raise ValidationError(
                    f"route {self.route_id}: missing return_delay[{j}]")
            if self.forward_delay[j] < 0 or self.return_delay[j] < 0:
                raise ValidationError(
                    f"route {self.route_id}: negative delay at link {j}")
        rtts = [self.forward_delay[j] + self.return_delay[j] for j in self.links]
        if max(rtts) - min(rtts) > RTT_CONSISTENCY_TOL:
            raise ValidationError(
                f"route {self.route_id}: round trip differs across links "
                f"(spread {max(rtts) - min(rtts):.3e} s)")
        if not rtts[0] > 0:
            raise ValidationError(f"route {self.route_id}: round trip must be > 0")

    @property
    def round_trip(self) -> float:
        j = self.links[0]
        return self.forward_delay[j] + self.return_delay[j]


@dataclass(frozen=True)
class NetworkModel:
    """A set of RCP links and the routes crossing them."""

    links: Mapping[str, LinkParams]
    routes: tuple
    queue_feedback_enabled: bool = True

    def __post_init__(self):
        if not self.links:
            raise ValidationError("network has no links")
        if not self.routes:
            raise ValidationError("network has no routes")
        used = set()
        for r in self.routes:
            for j in r.links:
                if j not in self.links:
                    raise ValidationError(
                        f"route {r.route_id} references unknown link {j}")
                used.add(j)
        unused = set(self.links) - used
        if unused:
            raise ValidationError(f"links on no route: {sorted(unused)}")

    def routes_through(self, link_id: str):
        return tuple(r for r in self.routes if link_id in r.links)

    def effective_queue_weight(self, link_id: str) -> float:
        b = self.links[link_id].queue_weight
        return b if self.queue_feedback_enabled else 0.0

    @property
    def max_rtt(self) -> float:
        return max(r.round_trip for r in self.routes)


# ---------------------------------------------------------------------------
# feedback curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateMismatchCurve:
    """Feedback f(y) = C - y: capacity minus aggregate arrival.

    Strictly decreasing and linear, defined for all y; the root is C.
    """

    capacity: float

    def __call__(self, y):
        return self.capacity - y

    def derivative(self, y):
        return -1.0 if np.isscalar(y) else np.full_like(np.asarray(y, float), -1.0)

    @property
    def domain_upper(self) -> float:
        return math.inf

    @property
    def root(self) -> float:
        return self.capacity

    concave = True


@dataclass(frozen=True)
class QueueFeedbackCurve:
    """Feedback f(y) = C - y - b*C*sigma^2*y / (2*(C - y)).

    Rate mismatch plus weighted mean queue size; strictly decreasing and
    concave on [0, C), diverging to -inf at the capacity pole.
    """

    capacity: float
    queue_weight: float
    variance: float = 1.0

    def __post_init__(self):
        if not self.queue_weight > 0:
            raise ValidationError("queue_weight must be > 0 for this curve")

    def __call__(self, y):
        C = self.capacity
        return C - y - self.queue_weight * C * self.variance * y / (2.0 * (C - y))

    def derivative(self, y):
        C = self.capacity
        k = self.queue_weight * C * C * self.variance / 2.0
        return -1.0 - k / (C - y) ** 2

    @property
    def domain_upper(self) -> float:
        return self.capacity

    @property
    def root(self) -> float:
        # smaller root of 2(C-y)^2 = b C sigma^2 y, written to avoid the
        # cancellation in the textbook quadratic formula
        q = self.queue_weight * self.variance
        return 4.0 * self.capacity / (4.0 + q + math.sqrt(q * (q + 8.0)))

    concave = True


class TabulatedCurve:
    """Monotone-decreasing feedback curve interpolated from samples.

    Extension point for probing the stability machinery with feedback
    shapes other than the RCP ones. Uses a monotone C1 (PCHIP) fit, so
    strict decrease of the samples carries over to the interpolant.
    """

    def __init__(self, y_samples: Sequence[float], f_samples: Sequence[float]):
        y = np.asarray(y_samples, float)
        f = np.asarray(f_samples, float)
        if y.ndim != 1 or y.size < 3:
            raise ValidationError("need at least 3 samples")
        if not np.all(np.diff(y) > 0):
            raise ValidationError("y_samples must be strictly increasing")
        if not np.all(np.diff(f) < 0):
            raise ValidationError("f_samples must be strictly decreasing")
        if not (f[0] > 0 and f[-1] < 0):
            raise ValidationError("samples must straddle the root (f>0 to f<0)")
        from scipy.interpolate import PchipInterpolator

        self._interp = PchipInterpolator(y, f, extrapolate=False)
        self._deriv = self._interp.derivative()
        self._upper = float(y[-1])

    def __call__(self, y):
        return self._interp(y)

    def derivative(self, y):
        return self._deriv(y)

    @property
    def domain_upper(self) -> float:
        return self._upper

    concave = False  # unknown in general; forces the numeric constant path


@dataclass(frozen=True)
class BottleneckSystem:
    """Single-bottleneck abstraction: dR/dt = kappa * R * (f(y))+ with
    y(t) = sum_r R(t - tau_r) over a multiset of positive delays.

    ``f`` is any strictly decreasing continuously differentiable curve
    with f(0) > 0 and a root ybar > 0 (see the curve classes above).
    """

    kappa: float
    delays: tuple
    f: object
    f_domain_upper: float = field(default=None)  # defaults to f.domain_upper

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValidationError(f"kappa must be > 0, got {self.kappa}")
        if not self.delays:
            raise ValidationError("delays must be non-empty")
        if any(not d > 0 for d in self.delays):
            raise ValidationError("every delay must be > 0")
        if self.f_domain_upper is None:
            object.__setattr__(self, "f_domain_upper",
                               getattr(self.f, "domain_upper", math.inf))
        f0 = float(self.f(0.0))
        if not f0 > 0:
            raise ValidationError(f"f(0) must be > 0, got {f0}")
        root = getattr(self.f, "root", None)
        if root is not None and abs(float(self.f(root))) > 1e-10 * f0:
            raise ValidationError("declared root of f is not a root")

    @property
    def n_routes(self) -> int:
        return len(self.delays)

    @property
    def t_bar(self) -> float:
        return sum(self.delays) / len(self.delays)

    @property
    def tau_max(self) -> float:
        return max(self.delays)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def mean_queue_size(y: float, link: LinkParams) -> float:
    """Mean queue size p(y) = y*sigma^2 / (2*(C - y)) in packets.

    Valid for 0 <= y < C; the model has a pole at the capacity.
    """
    if y < 0:
        raise DomainError(f"arrival rate must be >= 0, got {y}")
    if y >= link.capacity:
        raise DomainError(
            f"arrival rate {y} at or above capacity {link.capacity}: "
            "queue model pole")
    return y * link.variance / (2.0 * (link.capacity - y))


def flow_rate(rates_along_route: Sequence[float]) -> float:
    """Rate of a flow crossing several links: the harmonic aggregation
    (sum_j 1/R_j)^-1, never above the smallest per-link rate."""
    if not len(rates_along_route):
        raise DomainError("empty rate list")
    acc = 0.0
    for r in rates_along_route:
        if not r > 0:
            raise DomainError(f"per-link rates must be > 0, got {r}")
        acc += 1.0 / r
    return 1.0 / acc


def weighted_mean_rtt(flow_rates: Sequence[float],
                      round_trips: Sequence[float]) -> float:
    """Traffic-weighted mean round trip: sum(x_r * T_r) / sum(x_r)."""
    if len(flow_rates) == 0 or len(flow_rates) != len(round_trips):
        raise DomainError("flow_rates and round_trips must be equal-length, non-empty")
    num = 0.0
    den = 0.0
    for x, T in zip(flow_rates, round_trips):
        if not x > 0:
            raise DomainError(f"flow rates must be > 0, got {x}")
        if not T > 0:
            raise DomainError(f"round trips must be > 0, got {T}")
        num += x * T
        den += x
    return num / den


def aggregate_arrival(model: NetworkModel, link_id: str,
                      history: Callable[[str, float], float],
                      t: float) -> float:
    """Aggregate traffic arriving at a link at time t.

    Sums, over the routes through the link, the route flow rate emitted
    one forward delay earlier; each flow rate is in turn the harmonic
    aggregation of the rates the route's links advertised one return
    delay before that.

    Parameters
    ----------
    history : callable
        ``history(link_id, s)`` returning the advertised rate R_k(s);
        expected to raise HistoryUnderflow when s precedes its storage.
    """
    if link_id not in model.links:
        raise ValidationError(f"unknown link {link_id}")
    total = 0.0
    for r in model.routes_through(link_id):
        emit = t - r.forward_delay[link_id]
        rates = [history(k, emit - r.return_delay[k]) for k in r.links]
        total += flow_rate(rates)
    return total


def rcp_rhs(model: NetworkModel, link_id: str, rate: float,
            aggregate: float, mean_rtt: float) -> float:
    """Time derivative of a link's advertised rate.

    dR/dt = (a*R / (C*T_bar)) * (C - y - b*C*p(y)); the queue term is
    structurally absent when the link's effective queue weight is zero,
    in which case arrivals at or above capacity are legal.
    """
    link = model.links[link_id]
    if not rate > 0:
        raise DomainError(f"rate must be > 0, got {rate}")
    if not mean_rtt > 0:
        raise DomainError(f"mean RTT must be > 0, got {mean_rtt}")
    b = model.effective_queue_weight(link_id)
    feedback = link.capacity - aggregate
    if b > 0:
        feedback -= b * link.capacity * mean_queue_size(aggregate, link)
    return link.gain_a * rate / (link.capacity * mean_rtt) * feedback


def positivity_projection(v: float, w: float) -> float:
    """Derivative projection keeping the state nonnegative: returns 0
    when v < 0 and w <= 0, otherwise v."""
    if v < 0 and w <= 0:
        return 0.0
    return v


def bottleneck_rhs(sys: BottleneckSystem, rate: float,
                   delayed_rates: Sequence[float]) -> float:
    """Rate derivative of the single-bottleneck system for the given
    delayed-rate samples (one per delay, in order)."""
    if len(delayed_rates) != len(sys.delays):
        raise DomainError(
            f"need {len(sys.delays)} delayed rates, got {len(delayed_rates)}")
    y = float(np.sum(delayed_rates)) if len(delayed_rates) > 4 else sum(delayed_rates)
    if y >= sys.f_domain_upper:
        raise DomainError(
            f"aggregate {y} at or above the feedback domain bound "
            f"{sys.f_domain_upper}")
    return positivity_projection(sys.kappa * rate * float(sys.f(y)), rate)


def reduce_single_link(link: LinkParams, routes: Sequence[RouteSpec],
                       queue_feedback_enabled: bool = True) -> BottleneckSystem:
    """Reduce a one-link network to its bottleneck abstraction.

    kappa = a / (C * T_bar) with T_bar the arithmetic mean of the route
    round trips; the delay multiset is the round trips themselves; the
    feedback curve carries the queue term iff the queue weight is
    positive and enabled.
    """
    if not routes:
        raise TopologyError("need at least one route")
    for r in routes:
        if len(r.links) != 1:
            raise TopologyError(
                f"route {r.route_id} crosses {len(r.links)} links; "
                "the reduction applies to single-link routes only")
    delays = tuple(r.round_trip for r in routes)
    t_bar = sum(delays) / len(delays)
    kappa = link.gain_a / (link.capacity * t_bar)
    b = link.queue_weight if queue_feedback_enabled else 0.0
    if b > 0:
        f = QueueFeedbackCurve(link.capacity, b, link.variance)
    else:
        f = RateMismatchCurve(link.capacity)
    return BottleneckSystem(kappa=kappa, delays=delays, f=f)


def reduce_network(model: NetworkModel) -> BottleneckSystem:
    """Reduce a single-link NetworkModel to its bottleneck abstraction."""
    if len(model.links) != 1:
        raise TopologyError(
            f"reduction needs exactly one link, network has {len(model.links)}")
    (link_id, link), = model.links.items()
    return reduce_single_link(link, model.routes,
                              queue_feedback_enabled=model.queue_feedback_enabled)
