"""Fixed-step integration of the delayed rate dynamics.

Classical 4-stage Runge-Kutta on the non-delayed state; delayed rate
samples are read from a uniform-grid history buffer with linear
interpolation. The step bound h <= tau_min/20 keeps every stage lookup
inside recorded history and the interpolation error below the
integrator error at the tolerances checked by step halving.

Each trace is classified after the run: blow-up (aggregate reached the
queue-model pole) takes precedence over sustained oscillation, which
takes precedence over convergence to a known equilibrium; anything else
is undetermined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.signal import find_peaks

from .equilibrium import EquilibriumPoint, equilibrium_of
from .errors import ConfigError, HistoryUnderflow
from .model import (BottleneckSystem, NetworkModel, QueueFeedbackCurve,
                    RateMismatchCurve)

__all__ = [
    "ConstantHistory",
    "TableHistory",
    "SimConfig",
    "Classification",
    "OscillationStats",
    "SimTrace",
    "GridHistory",
    "simulate",
    "detect_convergence",
    "detect_oscillation",
    "step_refinement_check",
]

#: smallest admissible rate, relative to link capacity
RATE_FLOOR_REL = 1e-12

#: delays must span at least this many steps
MIN_STEPS_PER_DELAY = 20


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantHistory:
    """Pre-simulation history: one constant positive rate per link (or a
    single value for a bottleneck system)."""

    values: Union[float, Mapping[str, float]]

    def value_grid(self, key, t_grid):
        v = self.values[key] if isinstance(self.values, Mapping) else self.values
        v = float(v)
        if not v > 0:
            raise ConfigError(f"initial history for {key!r} must be > 0, got {v}")
        return np.full(len(t_grid), v)


@dataclass(frozen=True)
class TableHistory:
    """Pre-simulation history as piecewise-linear tables of (t, rate)
    points with t in [-depth, 0]; values beyond a table's ends extend
    its endpoints."""

    points: Union[Sequence, Mapping[str, Sequence]]

    def value_grid(self, key, t_grid):
        pts = self.points[key] if isinstance(self.points, Mapping) else self.points
        ts = np.asarray([p[0] for p in pts], float)
        vs = np.asarray([p[1] for p in pts], float)
        if len(ts) == 0 or np.any(np.diff(ts) <= 0):
            raise ConfigError(f"history table for {key!r} must have increasing times")
        if np.any(vs <= 0):
            raise ConfigError(f"initial history for {key!r} must be > 0 everywhere")
        return np.interp(t_grid, ts, vs)


@dataclass(frozen=True)
class SimConfig:
    """Integration settings.

    ``step_h`` defaults to (smallest positive delay)/20 and ``horizon``
    to 50x the largest round trip; ``convergence_window`` to 10x the
    largest round trip. ``tbar_mode`` selects whether the per-link mean
    RTT is re-weighted by current traffic each step ("time-varying") or
    held at its equilibrium value, the plain mean of the route round
    trips ("frozen").
    """

    initial_history: object
    step_h: Optional[float] = None
    horizon: Optional[float] = None
    convergence_tol: float = 1e-3
    convergence_window: Optional[float] = None
    blowup_margin_delta: float = 1e-6
    tbar_mode: str = "time-varying"

    def __post_init__(self):
        if self.tbar_mode not in ("time-varying", "frozen"):
            raise ConfigError(f"unknown tbar_mode {self.tbar_mode!r}")
        if self.step_h is not None and not self.step_h > 0:
            raise ConfigError(f"step_h must be > 0, got {self.step_h}")
        if self.horizon is not None and not self.horizon > 0:
            raise ConfigError(f"horizon must be > 0, got {self.horizon}")
        if not self.convergence_tol > 0:
            raise ConfigError("convergence_tol must be > 0")


@dataclass(frozen=True)
class Classification:
    """Outcome of a run: kind is one of 'converged', 'oscillating',
    'blowup', 'undetermined', with the matching detail field set."""

    kind: str
    settling_time: Optional[float] = None
    amplitude: Optional[float] = None
    period_estimate: Optional[float] = None
    t_fail: Optional[float] = None


@dataclass(frozen=True)
class OscillationStats:
    amplitude: float
    period_estimate: Optional[float]
    sustained: bool


@dataclass
class SimTrace:
    """Uniform-grid record of a run.

    ``rates`` and ``aggregates`` have one column per link id,
    ``flows`` one per route id (for a bottleneck system the "flows" are
    the per-delay arrival contributions R(t - tau_r)).
    """

    times: np.ndarray
    link_ids: tuple
    rates: np.ndarray
    aggregates: np.ndarray
    route_ids: tuple
    flows: np.ndarray
    step_h: float
    horizon: float
    max_rtt: float
    classification: Classification = None
    equilibrium: Optional[EquilibriumPoint] = None

    def rate(self, link_id):
        return self.rates[:, self.link_ids.index(link_id)]

    def aggregate(self, link_id):
        return self.aggregates[:, self.link_ids.index(link_id)]

    def flow(self, route_id):
        return self.flows[:, self.route_ids.index(route_id)]


class GridHistory:
    """Rate history on a uniform grid, for the aggregate-arrival
    operation and tests: linearly interpolates and raises
    HistoryUnderflow for times before its first sample."""

    def __init__(self, times, values_by_link):
        self.times = np.asarray(times, float)
        self.values = {k: np.asarray(v, float) for k, v in values_by_link.items()}

    def __call__(self, link_id, t):
        ts = self.times
        if t < ts[0] - 1e-12:
            raise HistoryUnderflow(
                f"need {link_id} at t={t} but history starts at {ts[0]}")
        return float(np.interp(t, ts, self.values[link_id]))


# ---------------------------------------------------------------------------
# lookup precomputation
# ---------------------------------------------------------------------------

_STAGE_OFFSETS = (0.0, 0.5, 1.0)


def _stage_taps(lag, h):
    """(shift, frac) per RK stage for one delayed lookup: the value at
    stage time t_n + c*h - lag is hist[off+n+shift] + frac * (next - it)."""
    taps = []
    for c in _STAGE_OFFSETS:
        g = c - lag / h
        i = math.floor(g)
        taps.append((i, g - i))
    return taps


def _resolve_grid(step_h, horizon, used_lags, max_rtt):
    positive = [l for l in used_lags if l > 0]
    if not positive:
        raise ConfigError("no positive delays in the model")
    lag_min = min(positive)
    h = step_h if step_h is not None else lag_min / MIN_STEPS_PER_DELAY
    if h > lag_min / MIN_STEPS_PER_DELAY * (1 + 1e-12):
        raise ConfigError(
            f"step {h} exceeds smallest positive delay/{MIN_STEPS_PER_DELAY} "
            f"= {lag_min / MIN_STEPS_PER_DELAY}")
    for lag in used_lags:
        if lag < h * (1 - 1e-12) and lag != 0.0:
            raise ConfigError(f"delay {lag} shorter than one step {h}")
    T = horizon if horizon is not None else 50.0 * max_rtt
    if T < 20.0 * max_rtt * (1 - 1e-12):
        raise ConfigError(f"horizon {T} below 20x max RTT {20 * max_rtt}")
    n_steps = int(math.ceil(T / h - 1e-6))
    return h, n_steps


# ---------------------------------------------------------------------------
# bottleneck integrator
# ---------------------------------------------------------------------------

def _feval_scalar(f):
    # specialize the two RCP curves to keep the inner loop cheap
    if isinstance(f, RateMismatchCurve):
        C = f.capacity
        return lambda y: C - y
    if isinstance(f, QueueFeedbackCurve):
        C = f.capacity
        k = 0.5 * f.queue_weight * C * f.variance
        return lambda y: C - y - k * y / (C - y)
    return lambda y: float(f(y))


def _simulate_bottleneck(sys: BottleneckSystem, cfg: SimConfig,
                         n_steps_override=None):
    delays = sys.delays
    max_rtt = max(delays)
    h, n_steps = _resolve_grid(cfg.step_h, cfg.horizon, delays, max_rtt)
    if n_steps_override is not None:
        n_steps = n_steps_override
    kappa = sys.kappa
    feval = _feval_scalar(sys.f)
    scale = getattr(sys.f, "capacity", None) or float(sys.f(0.0))
    floor = RATE_FLOOR_REL * scale
    blow_limit = math.inf
    if math.isfinite(sys.f_domain_upper):
        blow_limit = sys.f_domain_upper * (1.0 - cfg.blowup_margin_delta)

    depth_steps = int(math.ceil(max_rtt / h)) + 2
    t_grid = (np.arange(depth_steps + 1) - depth_steps) * h
    hist = list(cfg.initial_history.value_grid("rate", t_grid))
    hist.extend([0.0] * (n_steps + 1))  # +1: zero-weight reads at the end
    off = depth_steps

    taps = [_stage_taps(tau, h) for tau in delays]
    stage_taps = [tuple((taps[r][c][0], taps[r][c][1]) for r in range(len(delays)))
                  for c in range(3)]
    taps0 = stage_taps[0]

    times = np.empty(n_steps + 1)
    rates = np.empty(n_steps + 1)
    aggs = np.empty(n_steps + 1)
    flows = np.empty((n_steps + 1, len(delays)))

    half = 0.5 * h
    sixth = h / 6.0
    R = hist[off]
    blow_t = None
    n_rec = 0
    for n in range(n_steps):
        base = off + n
        # per-delay contributions at the step start, recorded as flows
        y0 = 0.0
        for r, (i, fr) in enumerate(taps0):
            a = hist[base + i]
            v = a + fr * (hist[base + i + 1] - a)
            flows[n, r] = v
            y0 += v
        times[n] = n * h
        rates[n] = R
        aggs[n] = y0
        n_rec = n + 1
        if y0 >= blow_limit:
            blow_t = n * h
            break
        y1 = 0.0
        for i, fr in stage_taps[1]:
            a = hist[base + i]
            y1 += a + fr * (hist[base + i + 1] - a)
        y2 = 0.0
        for i, fr in stage_taps[2]:
            a = hist[base + i]
            y2 += a + fr * (hist[base + i + 1] - a)
        if y1 >= blow_limit or y2 >= blow_limit:
            blow_t = n * h + (half if y1 >= blow_limit else h)
            break

        f0 = feval(y0)
        f1 = feval(y1)
        f2 = feval(y2)
        k1 = kappa * R * f0
        if k1 < 0.0 and R <= 0.0:
            k1 = 0.0
        R2 = R + half * k1
        k2 = kappa * R2 * f1
        if k2 < 0.0 and R2 <= 0.0:
            k2 = 0.0
        R3 = R + half * k2
        k3 = kappa * R3 * f1
        if k3 < 0.0 and R3 <= 0.0:
            k3 = 0.0
        R4 = R + h * k3
        k4 = kappa * R4 * f2
        if k4 < 0.0 and R4 <= 0.0:
            k4 = 0.0
        R = R + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        if R < floor:
            R = floor
        hist[base + 1] = R

    if blow_t is None:
        # closing sample at the final grid time
        base = off + n_steps
        y0 = 0.0
        for r, (i, fr) in enumerate(taps0):
            a = hist[base + i]
            v = a + fr * (hist[base + i + 1] - a)
            flows[n_steps, r] = v
            y0 += v
        times[n_steps] = n_steps * h
        rates[n_steps] = R
        aggs[n_steps] = y0
        n_rec = n_steps + 1
        if y0 >= blow_limit:
            blow_t = n_steps * h

    eq = equilibrium_of(sys)
    trace = SimTrace(
        times=times[:n_rec], link_ids=("link",),
        rates=rates[:n_rec].reshape(-1, 1),
        aggregates=aggs[:n_rec].reshape(-1, 1),
        route_ids=tuple(f"tap{r}" for r in range(len(delays))),
        flows=flows[:n_rec], step_h=h, horizon=n_steps * h, max_rtt=max_rtt,
        equilibrium=eq)
    trace.classification = _classify(trace, cfg, blow_t)
    return trace


# ---------------------------------------------------------------------------
# network integrator
# ---------------------------------------------------------------------------

def _simulate_network(model: NetworkModel, cfg: SimConfig,
                      n_steps_override=None):
    link_ids = list(model.links)
    idx = {j: l for l, j in enumerate(link_ids)}
    routes = list(model.routes)
    route_ids = [r.route_id for r in routes]
    time_varying = cfg.tbar_mode == "time-varying"

    # used lags: arrival terms need T_rj + T_kr; traffic-weighted RTTs
    # additionally need the bare return delays
    y_lags, x_lags = [], []
    for r in routes:
        for j in r.links:
            for k in r.links:
                y_lags.append(r.forward_delay[j] + r.return_delay[k])
        for k in r.links:
            x_lags.append(r.return_delay[k])
    used = list(y_lags) + (list(x_lags) if time_varying else [])
    if any(l == 0.0 for l in y_lags):
        raise ConfigError("a route has zero forward+return delay to some link")
    if time_varying and any(l == 0.0 for l in x_lags):
        raise ConfigError(
            "time-varying RTT weighting needs every return delay > 0")
    max_rtt = model.max_rtt
    h, n_steps = _resolve_grid(cfg.step_h, cfg.horizon, used, max_rtt)
    if n_steps_override is not None:
        n_steps = n_steps_override

    # per-link static data
    L = len(link_ids)
    caps = [model.links[j].capacity for j in link_ids]
    gains = [model.links[j].gain_a for j in link_ids]
    b_eff = [model.effective_queue_weight(j) for j in link_ids]
    qfac = [0.5 * b_eff[l] * caps[l] * model.links[link_ids[l]].variance
            for l in range(L)]
    floors = [RATE_FLOOR_REL * c for c in caps]
    delta = cfg.blowup_margin_delta
    blow_limits = [caps[l] * (1.0 - delta) if b_eff[l] > 0 else math.inf
                   for l in range(L)]

    # arrival structure: per link, per route through it, the (link index,
    # taps) of each hop plus the taps for the route's own flow record
    arrival = []   # [link][route] -> list[(k_idx, taps3)]
    tbar_frozen = []
    rtts_at = []   # [link] -> route round trips
    for j in link_ids:
        rs = model.routes_through(j)
        if not rs:
            raise ConfigError(f"link {j} has no routes")
        per_route = []
        for r in rs:
            hops = []
            for k in r.links:
                lag = r.forward_delay[j] + r.return_delay[k]
                hops.append((idx[k], _stage_taps(lag, h)))
            per_route.append(hops)
        arrival.append(per_route)
        rtts = [r.round_trip for r in rs]
        rtts_at.append(rtts)
        tbar_frozen.append(sum(rtts) / len(rtts))
    # flow structure: per route, the hop taps at lag = return delay
    flow_taps = [[(idx[k], _stage_taps(r.return_delay[k], h)) for k in r.links]
                 for r in routes]
    # links of each route by index, for per-link route lookup in T_bar
    routes_thru_idx = [[ri for ri, r in enumerate(routes) if j in r.links]
                       for j in link_ids]

    depth = max(used) if used else max_rtt
    depth_steps = int(math.ceil(max(depth, max_rtt) / h)) + 2
    t_grid = (np.arange(depth_steps + 1) - depth_steps) * h
    hist = []
    for j in link_ids:
        g = cfg.initial_history.value_grid(j, t_grid)
        hist.append(list(g) + [0.0] * (n_steps + 1))  # +1: zero-weight end reads
    off = depth_steps

    def lookup(l, base, tap):
        i, fr = tap
        col = hist[l]
        a = col[base + i]
        return a + fr * (col[base + i + 1] - a)

    def stage_arrivals(base, c):
        ys = []
        for l in range(L):
            y = 0.0
            for hops in arrival[l]:
                inv = 0.0
                for (k, taps3) in hops:
                    inv += 1.0 / lookup(k, base, taps3[c])
                y += 1.0 / inv
            ys.append(y)
        return ys

    def stage_flows(base, c):
        xs = []
        for hops in flow_taps:
            inv = 0.0
            for (k, taps3) in hops:
                inv += 1.0 / lookup(k, base, taps3[c])
            xs.append(1.0 / inv)
        return xs

    def stage_tbars(base, c, xs):
        if not time_varying:
            return tbar_frozen
        tb = []
        for l in range(L):
            num = den = 0.0
            for pos, ri in enumerate(routes_thru_idx[l]):
                x = xs[ri]
                num += x * rtts_at[l][pos]
                den += x
            tb.append(num / den)
        return tb

    def derivs(R, ys, tbars):
        ks = []
        for l in range(L):
            fb = caps[l] - ys[l]
            if qfac[l] > 0.0:
                fb -= qfac[l] * ys[l] / (caps[l] - ys[l])
            v = gains[l] * R[l] / (caps[l] * tbars[l]) * fb
            if v < 0.0 and R[l] <= 0.0:
                v = 0.0
            ks.append(v)
        return ks

    times = np.empty(n_steps + 1)
    rates = np.empty((n_steps + 1, L))
    aggs = np.empty((n_steps + 1, L))
    flows = np.empty((n_steps + 1, len(routes)))

    R = [hist[l][off] for l in range(L)]
    blow_t = None
    n_rec = 0
    for n in range(n_steps):
        base = off + n
        y0 = stage_arrivals(base, 0)
        x0 = stage_flows(base, 0)
        times[n] = n * h
        rates[n] = R
        aggs[n] = y0
        flows[n] = x0
        n_rec = n + 1
        if any(y0[l] >= blow_limits[l] for l in range(L)):
            blow_t = n * h
            break
        y1 = stage_arrivals(base, 1)
        y2 = stage_arrivals(base, 2)
        bad1 = any(y1[l] >= blow_limits[l] for l in range(L))
        if bad1 or any(y2[l] >= blow_limits[l] for l in range(L)):
            blow_t = n * h + (0.5 * h if bad1 else h)
            break
        tb0 = stage_tbars(base, 0, x0)
        if time_varying:
            tb1 = stage_tbars(base, 1, stage_flows(base, 1))
            tb2 = stage_tbars(base, 2, stage_flows(base, 2))
        else:
            tb1 = tb2 = tb0

        k1 = derivs(R, y0, tb0)
        R2 = [R[l] + 0.5 * h * k1[l] for l in range(L)]
        k2 = derivs(R2, y1, tb1)
        R3 = [R[l] + 0.5 * h * k2[l] for l in range(L)]
        k3 = derivs(R3, y1, tb1)
        R4 = [R[l] + h * k3[l] for l in range(L)]
        k4 = derivs(R4, y2, tb2)
        for l in range(L):
            v = R[l] + h / 6.0 * (k1[l] + 2.0 * (k2[l] + k3[l]) + k4[l])
            if v < floors[l]:
                v = floors[l]
            R[l] = v
            hist[l][base + 1] = v

    if blow_t is None:
        base = off + n_steps
        y0 = stage_arrivals(base, 0)
        x0 = stage_flows(base, 0)
        times[n_steps] = n_steps * h
        rates[n_steps] = R
        aggs[n_steps] = y0
        flows[n_steps] = x0
        n_rec = n_steps + 1
        if any(y0[l] >= blow_limits[l] for l in range(L)):
            blow_t = n_steps * h

    eq = None
    if L == 1:
        from .model import reduce_network
        eq = equilibrium_of(reduce_network(model))
    trace = SimTrace(
        times=times[:n_rec], link_ids=tuple(link_ids),
        rates=rates[:n_rec], aggregates=aggs[:n_rec],
        route_ids=tuple(route_ids), flows=flows[:n_rec],
        step_h=h, horizon=n_steps * h, max_rtt=max_rtt, equilibrium=eq)
    trace.classification = _classify(trace, cfg, blow_t)
    return trace


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def simulate(model, cfg: SimConfig) -> SimTrace:
    """Integrate a NetworkModel or BottleneckSystem and classify the run."""
    if isinstance(model, BottleneckSystem):
        return _simulate_bottleneck(model, cfg)
    if isinstance(model, NetworkModel):
        return _simulate_network(model, cfg)
    raise TypeError(f"cannot simulate {type(model).__name__}")


def detect_convergence(trace: SimTrace, eq: EquilibriumPoint, tol: float,
                       window: float):
    """Earliest grid time after which every aggregate stays within
    tol (relative) of its equilibrium through the end of the run, with
    at least ``window`` seconds of margin; None if there is none."""
    y_bar = eq.y_bar
    rel = np.max(np.abs(trace.aggregates - y_bar), axis=1) / y_bar
    bad = np.nonzero(rel >= tol)[0]
    if len(bad) == 0:
        t_star = float(trace.times[0])
    elif bad[-1] + 1 >= len(trace.times):
        return None
    else:
        t_star = float(trace.times[bad[-1] + 1])
    if trace.times[-1] - t_star < window * (1 - 1e-12):
        return None
    return t_star


def detect_oscillation(trace: SimTrace, tol: float = 1e-3) -> OscillationStats:
    """Peak analysis of the aggregates over the final 30% of the run.

    Sustained means the peak-to-peak amplitude exceeds 10*tol of the
    reference level (the known equilibrium, else the window mean) and
    the last full cycle kept at least 95% of the previous one's
    amplitude.
    """
    if trace.horizon < 20.0 * trace.max_rtt * (1 - 1e-12):
        raise ConfigError("oscillation detection needs horizon >= 20x max RTT")
    i0 = int(np.searchsorted(trace.times, 0.7 * trace.times[-1]))
    t = trace.times[i0:]
    amp_best, period_best, any_sustained = 0.0, None, False
    for col in range(trace.aggregates.shape[1]):
        y = trace.aggregates[i0:, col]
        ptp = float(np.max(y) - np.min(y))
        ref = trace.equilibrium.y_bar if trace.equilibrium else float(np.mean(y))
        peaks = find_peaks(y)[0]
        period = float(np.mean(np.diff(t[peaks]))) if len(peaks) >= 2 else None
        sustained = False
        if ptp > 10.0 * tol * ref and len(peaks) >= 3:
            amps = [y[peaks[i]] - np.min(y[peaks[i]:peaks[i + 1] + 1])
                    for i in range(len(peaks) - 1)]
            sustained = amps[-1] >= 0.95 * amps[-2]
        if ptp > amp_best:
            amp_best, period_best = ptp, period
        any_sustained = any_sustained or sustained
    return OscillationStats(amplitude=amp_best, period_estimate=period_best,
                            sustained=any_sustained)


def _classify(trace: SimTrace, cfg: SimConfig, blow_t) -> Classification:
    if blow_t is not None:
        return Classification(kind="blowup", t_fail=blow_t)
    osc = detect_oscillation(trace, cfg.convergence_tol)
    if osc.sustained:
        return Classification(kind="oscillating", amplitude=osc.amplitude,
                              period_estimate=osc.period_estimate)
    if trace.equilibrium is not None:
        window = (cfg.convergence_window if cfg.convergence_window is not None
                  else 10.0 * trace.max_rtt)
        t_star = detect_convergence(trace, trace.equilibrium,
                                    cfg.convergence_tol, window)
        if t_star is not None:
            return Classification(kind="converged", settling_time=t_star)
    return Classification(kind="undetermined")


def step_refinement_check(model, cfg: SimConfig) -> float:
    """Max relative trajectory deviation between the configured step and
    the halved step, on the coarse grid, normalized by the equilibrium
    rate (per-link mean rate when no equilibrium is known)."""
    coarse = simulate(model, cfg)
    n1 = len(coarse.times) - 1
    fine_cfg = replace(cfg, step_h=coarse.step_h / 2.0,
                       horizon=coarse.horizon)
    if isinstance(model, BottleneckSystem):
        fine = _simulate_bottleneck(model, fine_cfg, n_steps_override=2 * n1)
    else:
        fine = _simulate_network(model, fine_cfg, n_steps_override=2 * n1)
    n = min(len(coarse.times), (len(fine.times) + 1) // 2)
    diff = np.abs(coarse.rates[:n] - fine.rates[0:2 * n:2])
    if coarse.equilibrium is not None:
        ref = np.full(coarse.rates.shape[1], coarse.equilibrium.R_bar)
    else:
        ref = np.mean(coarse.rates[:n], axis=0)
    return float(np.max(diff / ref))
