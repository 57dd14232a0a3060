"""Scenario files, stability reports, and parameter sweeps.

Scenario files are strict JSON: unknown keys are rejected and every
validation message names the offending field path. A sweep grids one or
two scenario parameters, runs a batch of randomized-initial-history
simulations per grid point, and writes one CSV row per point combining
the analytic verdicts with the empirical classification tallies.
Sweep output is deterministic: trial seeds derive from (scenario seed,
point index, trial index), so the CSV bytes do not depend on the
worker count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .equilibrium import equilibrium_of, stability_constants
from .errors import (DomainError, GainTooLarge, ParseError, RcpError,
                     ValidationError)
from .model import LinkParams, NetworkModel, RouteSpec, reduce_network
from .sim import ConstantHistory, SimConfig, simulate
from .stability import StabilityReport, global_stability_check

__all__ = [
    "Scenario",
    "SweepAxis",
    "SweepSpec",
    "SweepPoint",
    "SweepResult",
    "load_scenario",
    "parse_scenario",
    "load_sweep_spec",
    "parse_sweep_spec",
    "run_check",
    "render_report",
    "run_sweep",
    "trace_csv",
    "SWEEP_COLUMNS",
]

AXIS_TARGETS = ("a", "b", "sigma2", "max-delay-scale", "N-routes")

SWEEP_COLUMNS = ("kTf0", "theorem_lhs", "theorem_ok", "caseA_amax", "caseA_ok",
                 "caseB_ok", "local_pi4", "local_pi2", "n_converged",
                 "n_oscillating", "n_blowup", "n_undetermined",
                 "mean_settling_time")


@dataclass(frozen=True)
class Scenario:
    label: str
    network: NetworkModel
    sim: SimConfig
    seed: int


@dataclass(frozen=True)
class SweepAxis:
    target: str
    values: tuple

    def __post_init__(self):
        if self.target not in AXIS_TARGETS:
            raise ValidationError(
                f"axis target must be one of {AXIS_TARGETS}, got {self.target!r}")
        if not self.values:
            raise ValidationError("axis values must be non-empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValidationError("axis values must be strictly increasing")


@dataclass(frozen=True)
class SweepSpec:
    base: Scenario
    axes: tuple
    per_point_trials: int = 1
    wide_history: bool = False

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 2:
            raise ValidationError("need 1 or 2 sweep axes")
        if self.per_point_trials < 1:
            raise ValidationError("per_point_trials must be >= 1")


@dataclass
class SweepPoint:
    axis_values: dict
    report: Optional[StabilityReport]
    tallies: dict
    mean_settling_time: Optional[float]
    errors: list = field(default_factory=list)


@dataclass
class SweepResult:
    axes: tuple
    points: list

    def to_csv(self) -> str:
        header = [ax.target for ax in self.axes] + list(SWEEP_COLUMNS)
        lines = [",".join(header)]
        for p in self.points:
            row = [_fmt(p.axis_values[ax.target]) for ax in self.axes]
            row += _report_cells(p.report)
            row += [str(p.tallies[k]) for k in
                    ("converged", "oscillating", "blowup", "undetermined")]
            row.append(_fmt(p.mean_settling_time)
                       if p.mean_settling_time is not None else "")
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# strict JSON parsing
# ---------------------------------------------------------------------------

def _expect_keys(obj, where, required, optional=()):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise ValidationError(f"{where}: missing keys {sorted(missing)}")


def _number(obj, where, allow_none=False):
    if obj is None and allow_none:
        return None
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ValidationError(f"{where}: expected a number, got {obj!r}")
    v = float(obj)
    if not math.isfinite(v):
        raise ValidationError(f"{where}: must be finite, got {v}")
    return v


def _string(obj, where):
    if not isinstance(obj, str):
        raise ValidationError(f"{where}: expected a string, got {obj!r}")
    return obj


def load_scenario(path) -> Scenario:
    """Read and validate a scenario JSON file."""
    return parse_scenario(_load_json(path), where=str(path))


def parse_scenario(doc, where="scenario") -> Scenario:
    _expect_keys(doc, where, ("label", "links", "routes", "sim", "seed"))
    label = _string(doc["label"], f"{where}.label")
    if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool):
        raise ValidationError(f"{where}.seed: expected an integer")

    links = {}
    if not isinstance(doc["links"], list) or not doc["links"]:
        raise ValidationError(f"{where}.links: expected a non-empty array")
    for i, l in enumerate(doc["links"]):
        lw = f"{where}.links[{i}]"
        _expect_keys(l, lw, ("id", "capacity", "a", "b", "sigma2"))
        lid = _string(l["id"], f"{lw}.id")
        if lid in links:
            raise ValidationError(f"{lw}.id: duplicate link id {lid!r}")
        try:
            links[lid] = LinkParams(capacity=_number(l["capacity"], f"{lw}.capacity"),
                                    gain_a=_number(l["a"], f"{lw}.a"),
                                    queue_weight=_number(l["b"], f"{lw}.b"),
                                    variance=_number(l["sigma2"], f"{lw}.sigma2"))
        except ValidationError as e:
            raise ValidationError(f"{lw}: {e}") from None

    routes = []
    if not isinstance(doc["routes"], list) or not doc["routes"]:
        raise ValidationError(f"{where}.routes: expected a non-empty array")
    for i, r in enumerate(doc["routes"]):
        rw = f"{where}.routes[{i}]"
        _expect_keys(r, rw, ("id", "hops"))
        rid = _string(r["id"], f"{rw}.id")
        if not isinstance(r["hops"], list) or not r["hops"]:
            raise ValidationError(f"{rw}.hops: expected a non-empty array")
        hop_links, fwd, ret = [], {}, {}
        for k, hpd in enumerate(r["hops"]):
            hw = f"{rw}.hops[{k}]"
            _expect_keys(hpd, hw, ("link", "forward_delay", "return_delay"))
            link = _string(hpd["link"], f"{hw}.link")
            hop_links.append(link)
            fwd[link] = _number(hpd["forward_delay"], f"{hw}.forward_delay")
            ret[link] = _number(hpd["return_delay"], f"{hw}.return_delay")
        try:
            routes.append(RouteSpec(route_id=rid, links=tuple(hop_links),
                                    forward_delay=fwd, return_delay=ret))
        except ValidationError as e:
            raise ValidationError(f"{rw}: {e}") from None

    try:
        network = NetworkModel(links=links, routes=tuple(routes))
    except ValidationError as e:
        raise ValidationError(f"{where}: {e}") from None

    sw = f"{where}.sim"
    sim_doc = doc["sim"]
    _expect_keys(sim_doc, sw, ("history",),
                 optional=("step", "horizon", "tol", "tbar_mode"))
    hw = f"{sw}.history"
    _expect_keys(sim_doc["history"], hw, ("kind", "values"))
    kind = _string(sim_doc["history"]["kind"], f"{hw}.kind")
    if kind != "constant":
        raise ValidationError(f"{hw}.kind: only 'constant' is supported in files")
    values = sim_doc["history"]["values"]
    if not isinstance(values, dict) or set(values) != set(links):
        raise ValidationError(
            f"{hw}.values: need one entry per link id {sorted(links)}")
    hist_values = {}
    for lid, v in values.items():
        hist_values[lid] = _number(v, f"{hw}.values[{lid}]")
        if not hist_values[lid] > 0:
            raise ValidationError(f"{hw}.values[{lid}]: must be > 0")

    tbar_mode = sim_doc.get("tbar_mode", "time-varying")
    if tbar_mode not in ("time-varying", "frozen"):
        raise ValidationError(
            f"{sw}.tbar_mode: expected 'time-varying' or 'frozen', got {tbar_mode!r}")
    tol = _number(sim_doc.get("tol", 1e-3), f"{sw}.tol")
    if not tol > 0:
        raise ValidationError(f"{sw}.tol: must be > 0")
    sim = SimConfig(
        initial_history=ConstantHistory(values=hist_values),
        step_h=_number(sim_doc.get("step"), f"{sw}.step", allow_none=True),
        horizon=_number(sim_doc.get("horizon"), f"{sw}.horizon", allow_none=True),
        convergence_tol=tol, tbar_mode=tbar_mode)
    return Scenario(label=label, network=network, sim=sim, seed=doc["seed"])


def load_sweep_spec(path) -> SweepSpec:
    """Read and validate a sweep-spec JSON file."""
    return parse_sweep_spec(_load_json(path), where=str(path))


def parse_sweep_spec(doc, where="sweep") -> SweepSpec:
    _expect_keys(doc, where, ("base", "axes", "per_point_trials"),
                 optional=("wide_history",))
    base = parse_scenario(doc["base"], where=f"{where}.base")
    if not isinstance(doc["axes"], list):
        raise ValidationError(f"{where}.axes: expected an array")
    axes = []
    for i, ax in enumerate(doc["axes"]):
        aw = f"{where}.axes[{i}]"
        _expect_keys(ax, aw, ("target", "values"))
        target = _string(ax["target"], f"{aw}.target")
        vals = ax["values"]
        if isinstance(vals, dict):
            _expect_keys(vals, f"{aw}.values", ("min", "max", "count"),
                         optional=("scale",))
            lo = _number(vals["min"], f"{aw}.values.min")
            hi = _number(vals["max"], f"{aw}.values.max")
            count = vals["count"]
            if not isinstance(count, int) or count < 2:
                raise ValidationError(f"{aw}.values.count: need an integer >= 2")
            scale = vals.get("scale", "linear")
            if scale == "linear":
                seq = np.linspace(lo, hi, count)
            elif scale == "log":
                if lo <= 0:
                    raise ValidationError(f"{aw}.values.min: log scale needs > 0")
                seq = np.geomspace(lo, hi, count)
            else:
                raise ValidationError(f"{aw}.values.scale: 'linear' or 'log'")
            values = tuple(float(v) for v in seq)
        elif isinstance(vals, list):
            values = tuple(_number(v, f"{aw}.values[{j}]")
                           for j, v in enumerate(vals))
        else:
            raise ValidationError(f"{aw}.values: expected an array or range object")
        try:
            axes.append(SweepAxis(target=target, values=values))
        except ValidationError as e:
            raise ValidationError(f"{aw}: {e}") from None
    trials = doc["per_point_trials"]
    if not isinstance(trials, int) or isinstance(trials, bool):
        raise ValidationError(f"{where}.per_point_trials: expected an integer")
    wide = doc.get("wide_history", False)
    if not isinstance(wide, bool):
        raise ValidationError(f"{where}.wide_history: expected a boolean")
    try:
        return SweepSpec(base=base, axes=tuple(axes), per_point_trials=trials,
                         wide_history=wide)
    except ValidationError as e:
        raise ValidationError(f"{where}: {e}") from None


def _load_json(path):
    try:
        with open(path, "r") as fh:
            return json.load(fh)
    except OSError as e:
        raise ParseError(f"{path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}") from None


# ---------------------------------------------------------------------------
# single-scenario analysis
# ---------------------------------------------------------------------------

def analyze_scenario(scenario: Scenario):
    """Analytic pipeline for a single-bottleneck scenario: returns
    (system, equilibrium, constants, report); None for multi-link.

    The constants slot is None when the perturbation envelope does not
    exist for the scenario's gain; the report still carries the
    closed-form bounds, with the certificate's left side at +inf.
    """
    if len(scenario.network.links) != 1:
        return None
    sys = reduce_network(scenario.network)
    eq = equilibrium_of(sys)
    try:
        consts = stability_constants(sys, eq)
    except (GainTooLarge, DomainError):
        consts = None
    return sys, eq, consts, global_stability_check(sys, eq, consts)


def run_check(scenario: Scenario, out=None) -> Optional[StabilityReport]:
    """Print and return the stability report of a scenario.

    Multi-link scenarios get a notice instead: the analytic conditions
    are single-bottleneck results, so only simulation applies there.
    """
    emit = out.write if out is not None else lambda s: print(s, end="")
    if len(scenario.network.links) != 1:
        emit(f"scenario: {scenario.label}\n")
        emit("multi-link scenario: the analytic stability conditions cover a\n"
             "single bottleneck only; use `simulate` / `sweep` to study this\n"
             "network empirically.\n")
        return None
    _, _, _, report = analyze_scenario(scenario)
    emit(render_report(report, label=scenario.label))
    return report


def render_report(report: StabilityReport, label="") -> str:
    def verdict(ok):
        return "satisfied" if ok else "violated "

    lines = []
    if label:
        lines.append(f"scenario: {label}")
    lines.append(f"gain a                  : {_fmtg(report.gain_a)}")
    lines.append(f"queue weight b          : {_fmtg(report.queue_weight)}")
    lines.append(f"small-gain kTf0         : {report.ktf0:.6g}   "
                 f"[{verdict(report.ktf0 < 1)} margin {report.margins['ktf0']:.6g}]")
    lines.append(f"global condition lhs    : {report.theorem_lhs:.6g}   "
                 f"[{verdict(report.theorem_ok)} margin {report.margins['theorem']:.6g}]")
    if report.gain_bound_queue is not None:
        lines.append(f"alpha limit             : {report.alpha_limit:.6g}")
        lines.append(f"certified a bound (b>0) : {report.gain_bound_queue:.6g}   "
                     f"[{verdict(report.queue_bound_ok)} "
                     f"margin {report.margins['queue_bound']:.6g}]")
    if report.rate_mismatch_ok is not None:
        lines.append(f"a < 1/2 (b = 0)         : "
                     f"[{verdict(report.rate_mismatch_ok)} "
                     f"margin {report.margins['rate_mismatch']:.6g}]")
    if report.local_pi4_ok is not None:
        lines.append(f"local a < pi/4          : "
                     f"[{verdict(report.local_pi4_ok)} "
                     f"margin {report.margins['local_pi4']:.6g}]")
    if report.local_pi2_ok is not None:
        lines.append(f"local a < pi/2 (b = 0)  : "
                     f"[{verdict(report.local_pi2_ok)} "
                     f"margin {report.margins['local_pi2']:.6g}]")
    return "\n".join(lines) + "\n"


def _fmtg(v):
    return "n/a" if v is None else f"{v:.6g}"


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _apply_axis(scenario: Scenario, target: str, value) -> Scenario:
    net = scenario.network
    if target in ("a", "b", "sigma2"):
        fieldname = {"a": "gain_a", "b": "queue_weight", "sigma2": "variance"}[target]
        links = {lid: replace(lp, **{fieldname: value})
                 for lid, lp in net.links.items()}
        net = NetworkModel(links=links, routes=net.routes,
                           queue_feedback_enabled=net.queue_feedback_enabled)
    elif target == "max-delay-scale":
        routes = tuple(
            RouteSpec(route_id=r.route_id, links=r.links,
                      forward_delay={k: v * value for k, v in r.forward_delay.items()},
                      return_delay={k: v * value for k, v in r.return_delay.items()})
            for r in net.routes)
        net = NetworkModel(links=net.links, routes=routes,
                           queue_feedback_enabled=net.queue_feedback_enabled)
    elif target == "N-routes":
        n = int(value)
        if n < 1 or n != value:
            raise ValidationError(f"N-routes values must be positive integers")
        base = net.routes
        routes = tuple(
            replace(base[i % len(base)],
                    route_id=f"{base[i % len(base)].route_id}#{i}")
            for i in range(n))
        net = NetworkModel(links=net.links, routes=routes,
                           queue_feedback_enabled=net.queue_feedback_enabled)
    else:
        raise ValidationError(f"unknown axis target {target!r}")
    return replace(scenario, network=net)


def _reference_rates(scenario: Scenario, analysis):
    """Per-link reference rate R_bar for history perturbation."""
    net = scenario.network
    refs = {}
    for lid in net.links:
        n_j = len(net.routes_through(lid))
        if analysis is not None:
            refs[lid] = analysis[1].R_bar
        else:
            refs[lid] = net.links[lid].capacity / n_j
    return refs


def _history_bounds(scenario: Scenario, analysis, wide: bool):
    """Per-link (lo, hi) for the constant random initial history.

    The draw is uniform in [0.1, 2] x R_bar ([0.01, 10] in wide mode);
    for links with active queue feedback the upper end is clamped into
    the certified envelope (0.98 of (ybar+w)/N when the constants are
    known, just under the capacity pole otherwise) so certified-stable
    grid points cannot start beyond the feedback curve's domain.
    """
    lo_f, hi_f = (0.01, 10.0) if wide else (0.1, 2.0)
    net = scenario.network
    refs = _reference_rates(scenario, analysis)
    bounds = {}
    for lid in net.links:
        lo = lo_f * refs[lid]
        hi = hi_f * refs[lid]
        if net.effective_queue_weight(lid) > 0:
            n_j = len(net.routes_through(lid))
            if analysis is not None and analysis[2] is not None:
                _, eq, consts, _ = analysis
                hi = min(hi, 0.98 * (eq.y_bar + consts.w) / n_j)
            else:
                hi = min(hi, 0.95 * net.links[lid].capacity / n_j)
        bounds[lid] = (lo, max(lo * 1.000001, hi))
    return bounds


def _run_trial(args):
    scenario, bounds, point_idx, trial_idx = args
    rng = np.random.default_rng((scenario.seed & 0x7FFFFFFF, point_idx, trial_idx))
    values = {lid: float(rng.uniform(lo, hi))
              for lid, (lo, hi) in sorted(bounds.items())}
    cfg = replace(scenario.sim, initial_history=ConstantHistory(values=values))
    try:
        trace = simulate(scenario.network, cfg)
        c = trace.classification
        return point_idx, trial_idx, c.kind, c.settling_time, None
    except RcpError as e:
        return point_idx, trial_idx, "error", None, f"{type(e).__name__}: {e}"


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Execute a sweep; deterministic for any worker count."""
    grids = [ax.values for ax in spec.axes]
    if len(grids) == 1:
        combos = [(v,) for v in grids[0]]
    else:
        combos = [(u, v) for u in grids[0] for v in grids[1]]

    points, jobs = [], []
    for p_idx, combo in enumerate(combos):
        scen = spec.base
        analysis = None
        err = None
        try:
            for ax, v in zip(spec.axes, combo):
                scen = _apply_axis(scen, ax.target, v)
            try:
                analysis = analyze_scenario(scen)
            except RcpError as e:
                err = f"analysis: {type(e).__name__}: {e}"
            bounds = _history_bounds(scen, analysis, spec.wide_history)
            for t_idx in range(spec.per_point_trials):
                jobs.append((scen, bounds, p_idx, t_idx))
        except RcpError as e:
            err = f"point setup: {type(e).__name__}: {e}"
        point = SweepPoint(
            axis_values={ax.target: v for ax, v in zip(spec.axes, combo)},
            report=analysis[3] if analysis is not None else None,
            tallies={"converged": 0, "oscillating": 0, "blowup": 0,
                     "undetermined": 0},
            mean_settling_time=None)
        if err:
            point.errors.append(err)
        points.append(point)

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_trial, jobs, chunksize=1))
    else:
        outcomes = [_run_trial(j) for j in jobs]

    settling = {i: [] for i in range(len(points))}
    for p_idx, t_idx, kind, settle, err in sorted(outcomes,
                                                  key=lambda o: (o[0], o[1])):
        point = points[p_idx]
        if kind == "error":
            point.tallies["undetermined"] += 1
            point.errors.append(f"trial {t_idx}: {err}")
            continue
        point.tallies[kind] += 1
        if kind == "converged" and settle is not None:
            settling[p_idx].append(settle)
    for i, p in enumerate(points):
        if settling[i]:
            p.mean_settling_time = sum(settling[i]) / len(settling[i])
    return SweepResult(axes=spec.axes, points=points)


# ---------------------------------------------------------------------------
# CSV rendering
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _bool_cell(v) -> str:
    return "" if v is None else ("true" if v else "false")


def _report_cells(report: Optional[StabilityReport]):
    if report is None:
        return [""] * 8
    return [
        _fmt(report.ktf0),
        _fmt(report.theorem_lhs),
        _bool_cell(report.theorem_ok),
        _fmt(report.gain_bound_queue) if report.gain_bound_queue is not None else "",
        _bool_cell(report.queue_bound_ok),
        _bool_cell(report.rate_mismatch_ok),
        _bool_cell(report.local_pi4_ok),
        _bool_cell(report.local_pi2_ok),
    ]


def trace_csv(trace) -> str:
    """Trace CSV: t, then R per link, y per link, x per route; floats at
    17 significant digits."""
    header = (["t"] + [f"R_{j}" for j in trace.link_ids]
              + [f"y_{j}" for j in trace.link_ids]
              + [f"x_{r}" for r in trace.route_ids])
    lines = [",".join(header)]
    for i in range(len(trace.times)):
        cells = [_fmt(trace.times[i])]
        cells += [_fmt(v) for v in trace.rates[i]]
        cells += [_fmt(v) for v in trace.aggregates[i]]
        cells += [_fmt(v) for v in trace.flows[i]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
