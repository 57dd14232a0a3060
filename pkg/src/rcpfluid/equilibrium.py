"""Equilibrium operating points and the stability constants.

Solves f(ybar) = 0 for the bottleneck feedback curves (closed form for
the queue-feedback quadratic, bisection in general) and computes the
three constants the global-stability condition is built from:

    w  : width of the upper perturbation envelope,
         w = g * ybar / (1 - g) with g = kappa * T_bar * f(0)
    f1 : extremal secant slope of f below equilibrium,
         max over u in (0, ybar] of f(ybar - u) / u
    f2 : extremal secant slope of f above equilibrium,
         max over u in (0, w] of -f(ybar + u) / u

For concave curves both maxima have closed forms (f1 = -f'(ybar),
f2 = -f(ybar + w)/w); the numeric path keeps an independent grid search
so the closed forms can be cross-checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BracketError, DomainError, GainTooLarge
from .model import BottleneckSystem, QueueFeedbackCurve, RateMismatchCurve

__all__ = [
    "EquilibriumPoint",
    "StabilityConstants",
    "equilibrium_with_queue",
    "solve_equilibrium_bisect",
    "equilibrium_of",
    "queue_slope_identity",
    "stability_constants",
]

#: residual bound for accepting a solved equilibrium, relative to f(0)
RESIDUAL_RTOL = 1e-10

#: grid size for the numeric secant-slope maximization
SECANT_GRID = 10_000

#: absolute golden-section window below which refinement stops
SECANT_XTOL = 1e-10


@dataclass(frozen=True)
class EquilibriumPoint:
    """Solved operating point of a bottleneck system.

    ``n_routes`` and ``t_bar`` describe the delay multiset the point is
    used with; solvers called outside a system context default them to
    a single route and an unknown mean delay.
    """

    y_bar: float
    R_bar: float
    n_routes: int
    t_bar: float
    residual: float


@dataclass(frozen=True)
class StabilityConstants:
    """Constants of the global-stability condition (see module docstring).

    ``ktf0`` is the small-gain product kappa * T_bar * f(0); construction
    requires ktf0 < 1.
    """

    w: float
    f1: float
    f2: float
    ktf0: float


def equilibrium_with_queue(capacity: float, queue_weight: float,
                           variance: float, n_routes: int = 1,
                           t_bar: float = math.nan) -> EquilibriumPoint:
    """Equilibrium of the queue-feedback curve, in closed form.

    The balance C - y = b*C*p(y) reduces to 2*(C - y)^2 = b*C*sigma^2*y,
    whose unique root in (0, C) is returned. Written with the
    cancellation-free discriminant q*(q+8), q = b*sigma^2, so the result
    is accurate to a few ulp across the whole parameter range.
    """
    if not (capacity > 0 and queue_weight > 0 and variance > 0):
        raise DomainError("need capacity > 0, queue_weight > 0, variance > 0")
    q = queue_weight * variance
    y_bar = 4.0 * capacity / (4.0 + q + math.sqrt(q * (q + 8.0)))
    f = QueueFeedbackCurve(capacity, queue_weight, variance)
    return _checked_point(f, y_bar, n_routes, t_bar)


def solve_equilibrium_bisect(f, bracket_hi: float, n_routes: int = 1,
                             t_bar: float = math.nan) -> EquilibriumPoint:
    """Equilibrium of an arbitrary strictly decreasing curve by bisection.

    Requires f(0) > 0 and f(bracket_hi) < 0; converges to an absolute
    tolerance of 1e-12 * bracket_hi.
    """
    f0 = float(f(0.0))
    if not f0 > 0:
        raise DomainError(f"f(0) must be > 0, got {f0}")
    if not float(f(bracket_hi)) < 0:
        raise BracketError(
            f"f({bracket_hi}) = {float(f(bracket_hi))} is not negative")
    lo, hi = 0.0, float(bracket_hi)
    # promised tolerance is 1e-12 * bracket_hi; iterating to float
    # resolution keeps the residual invariant for steep curves too
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if float(f(mid)) > 0.0:
            lo = mid
        else:
            hi = mid
    y_bar = 0.5 * (lo + hi)
    return _checked_point(f, y_bar, n_routes, t_bar)


def equilibrium_of(sys: BottleneckSystem) -> EquilibriumPoint:
    """Equilibrium of a bottleneck system, with the route count and mean
    delay filled in from the system."""
    f = sys.f
    if isinstance(f, QueueFeedbackCurve):
        return equilibrium_with_queue(f.capacity, f.queue_weight, f.variance,
                                      n_routes=sys.n_routes, t_bar=sys.t_bar)
    if isinstance(f, RateMismatchCurve):
        return _checked_point(f, f.capacity, sys.n_routes, sys.t_bar)
    hi = _find_bracket(f, sys.f_domain_upper)
    return solve_equilibrium_bisect(f, hi, n_routes=sys.n_routes,
                                    t_bar=sys.t_bar)


def queue_slope_identity(capacity: float, queue_weight: float,
                         variance: float):
    """Slope of the mean-queue curve at equilibrium, both ways.

    Returns ``(p_slope, identity)`` where p_slope is the analytic
    derivative C*sigma^2 / (2*(C - ybar)^2) and identity is
    1 / (b * ybar); the equilibrium balance makes them equal.
    """
    if not queue_weight > 0:
        raise DomainError("queue slope identity needs queue_weight > 0")
    eq = equilibrium_with_queue(capacity, queue_weight, variance)
    p_slope = capacity * variance / (2.0 * (capacity - eq.y_bar) ** 2)
    return p_slope, 1.0 / (queue_weight * eq.y_bar)


def stability_constants(sys: BottleneckSystem, eq: EquilibriumPoint,
                        mode: str = "auto") -> StabilityConstants:
    """Compute (w, f1, f2, ktf0) for a system at its equilibrium.

    mode "closed-form" uses the concave-curve formulas; "numeric" runs
    the dense-grid secant maximization (10^4 points plus golden-section
    refinement, with the u->0 derivative limit taken by central finite
    difference as an extra candidate); "auto" picks closed-form for
    curves known concave.
    """
    f = sys.f
    t_bar = sys.t_bar
    f0 = float(f(0.0))
    ktf0 = sys.kappa * t_bar * f0
    if ktf0 >= 1.0:
        raise GainTooLarge(
            f"kappa*T_bar*f(0) = {ktf0} >= 1: no perturbation envelope")
    y_bar = eq.y_bar
    w = ktf0 * y_bar / (1.0 - ktf0)
    if y_bar + w >= sys.f_domain_upper:
        raise DomainError(
            f"envelope top y_bar + w = {y_bar + w} reaches the feedback "
            f"domain bound {sys.f_domain_upper}")

    if mode == "auto":
        mode = "closed-form" if getattr(f, "concave", False) else "numeric"
    if mode == "closed-form":
        if not getattr(f, "concave", False):
            raise DomainError("closed-form constants require a concave curve")
        f1 = -float(f.derivative(y_bar))
        f2 = -float(f(y_bar + w)) / w
    elif mode == "numeric":
        limit = _secant_limit(f, y_bar)
        f1 = max(_max_on_grid(lambda u: f(y_bar - u) / u, y_bar), limit)
        f2 = max(_max_on_grid(lambda u: -f(y_bar + u) / u, w), limit)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not (f1 > 0 and f2 > 0):
        raise DomainError(f"secant slopes must be positive, got {f1}, {f2}")
    return StabilityConstants(w=w, f1=f1, f2=f2, ktf0=ktf0)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _checked_point(f, y_bar, n_routes, t_bar):
    residual = float(f(y_bar))
    if abs(residual) > RESIDUAL_RTOL * float(f(0.0)):
        raise DomainError(
            f"equilibrium residual {residual} too large for y_bar={y_bar}")
    if not y_bar > 0:
        raise DomainError(f"equilibrium must be > 0, got {y_bar}")
    return EquilibriumPoint(y_bar=y_bar, R_bar=y_bar / n_routes,
                            n_routes=n_routes, t_bar=t_bar,
                            residual=residual)


def _find_bracket(f, domain_upper):
    """Upper bracket with f < 0: just below a finite domain bound, or by
    geometric search when the domain is unbounded."""
    if math.isfinite(domain_upper):
        hi = domain_upper * (1.0 - 1e-9)
        if float(f(hi)) < 0:
            return hi
        raise BracketError("curve not negative below its domain bound")
    hi = 1.0
    for _ in range(200):
        if float(f(hi)) < 0:
            return hi
        hi *= 2.0
    raise BracketError("no sign change found up to 2^200")


def _secant_limit(f, y_bar):
    """u->0 limit of both secant slopes: -f'(y_bar) by central finite
    difference with step 1e-6 * y_bar."""
    s = 1e-6 * y_bar
    return (float(f(y_bar - s)) - float(f(y_bar + s))) / (2.0 * s)


def _max_on_grid(g, upper):
    """Max of g over (0, upper]: dense grid then golden-section around
    the best grid point."""
    u = np.linspace(0.0, upper, SECANT_GRID + 1)[1:]
    vals = np.asarray(g(u), float)
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo = u[i - 1] if i > 0 else 0.5 * u[0]
    hi = u[i + 1] if i + 1 < len(u) else upper
    refined = _golden_max(lambda x: float(g(x)), float(lo), float(hi))
    return max(best, refined)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(fn, lo, hi, xtol=SECANT_XTOL, max_iter=200):
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a <= xtol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(d)
    return max(fc, fd)
