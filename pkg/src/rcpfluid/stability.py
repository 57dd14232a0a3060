"""Stability conditions for the bottleneck rate dynamics.

Evaluates the delay-independent global-stability certificate

    L = kappa^2 * T_bar^2 * ybar * (ybar + w) * f1 * f2 / (1 - ktf0) < 1

together with its closed-form specializations: the capacity- and
delay-free gain bound for RCP with queue feedback, the plain a < 1/2
bound for rate-mismatch-only RCP, and the quoted local thresholds
a < pi/4 (any queue weight) and a < pi/2 (no queue feedback). Also
iterates the worst-case perturbation-envelope recursion whose
contraction factor underlies the certificate.

All inequalities are strict; boundary values fail their condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .equilibrium import EquilibriumPoint, StabilityConstants
from .errors import DomainError, NonContractive
from .model import BottleneckSystem, QueueFeedbackCurve, RateMismatchCurve

__all__ = [
    "StabilityReport",
    "EnvelopeIteration",
    "global_stability_lhs",
    "global_stability_check",
    "envelope_ratio_limit",
    "gain_bound_with_queue",
    "RATE_MISMATCH_GAIN_BOUND",
    "stable_without_queue",
    "local_stability_check",
    "envelope_iteration",
]

#: sufficient gain bound for rate-mismatch-only RCP (queue weight zero)
RATE_MISMATCH_GAIN_BOUND = 0.5

LOCAL_PI4 = math.pi / 4.0
LOCAL_PI2 = math.pi / 2.0


@dataclass(frozen=True)
class StabilityReport:
    """All condition values, verdicts, and margins for one system.

    Fields tied to the RCP parametrization (gain_a and the closed-form
    bounds) are None when the feedback curve does not expose capacity /
    queue-weight parameters. ``margins`` maps condition name to
    threshold minus value, so positive means satisfied.
    """

    ktf0: float
    theorem_lhs: float
    theorem_ok: bool
    gain_a: Optional[float] = None
    queue_weight: Optional[float] = None
    alpha_limit: Optional[float] = None
    gain_bound_queue: Optional[float] = None
    queue_bound_ok: Optional[bool] = None
    rate_mismatch_ok: Optional[bool] = None
    local_pi4_ok: Optional[bool] = None
    local_pi2_ok: Optional[bool] = None
    margins: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EnvelopeIteration:
    """Trace of the perturbation-envelope recursion.

    ``u_checks[k]`` bounds the excursion below equilibrium entering
    round k (per-route units), ``u_hats[k]`` the implied excursion above
    it; ``gamma`` is the largest round-on-round ratio of the lower
    envelope once past the capped first round.
    """

    u_hats: tuple
    u_checks: tuple
    gamma: float
    contractive: bool


def global_stability_lhs(sys: BottleneckSystem, eq: EquilibriumPoint,
                         consts: StabilityConstants) -> float:
    """Left-hand side of the global-stability condition."""
    kT = sys.kappa * sys.t_bar
    return (kT * kT * eq.y_bar * (eq.y_bar + consts.w) * consts.f1 * consts.f2
            / (1.0 - consts.ktf0))


def global_stability_check(sys: BottleneckSystem, eq: EquilibriumPoint,
                           consts: Optional[StabilityConstants]) -> StabilityReport:
    """Full stability report for a bottleneck system.

    Always evaluates the general certificate; when the feedback curve is
    one of the RCP curves, also fills in the closed-form gain bounds and
    the local thresholds for the recovered protocol gain a = kappa*C*T_bar.

    ``consts`` may be None when they do not exist (small-gain product at
    or above one, or the perturbation envelope reaches the feedback
    curve's pole); the certificate's left side is +inf then and the
    verdict is false, but the closed-form columns remain meaningful.
    """
    if consts is not None:
        ktf0 = consts.ktf0
        lhs = global_stability_lhs(sys, eq, consts)
    else:
        ktf0 = sys.kappa * sys.t_bar * float(sys.f(0.0))
        lhs = math.inf
    ok = ktf0 < 1.0 and lhs < 1.0
    margins = {"ktf0": 1.0 - ktf0, "theorem": 1.0 - lhs}

    gain_a = queue_weight = None
    alpha_limit = a_max = queue_ok = mismatch_ok = pi4 = pi2 = None
    f = sys.f
    if isinstance(f, (QueueFeedbackCurve, RateMismatchCurve)):
        gain_a = sys.kappa * f.capacity * sys.t_bar
        if isinstance(f, QueueFeedbackCurve):
            queue_weight = f.queue_weight
            alpha_limit = envelope_ratio_limit(f.queue_weight, f.variance)
            a_max = gain_bound_with_queue(f.queue_weight, f.variance)
            queue_ok = gain_a < a_max
            margins["queue_bound"] = a_max - gain_a
        else:
            queue_weight = 0.0
            mismatch_ok = stable_without_queue(gain_a)
            margins["rate_mismatch"] = RATE_MISMATCH_GAIN_BOUND - gain_a
        pi4, pi2 = local_stability_check(gain_a, queue_weight)
        margins["local_pi4"] = LOCAL_PI4 - gain_a
        if pi2 is not None:
            margins["local_pi2"] = LOCAL_PI2 - gain_a

    return StabilityReport(
        ktf0=ktf0, theorem_lhs=lhs, theorem_ok=ok,
        gain_a=gain_a, queue_weight=queue_weight,
        alpha_limit=alpha_limit, gain_bound_queue=a_max,
        queue_bound_ok=queue_ok, rate_mismatch_ok=mismatch_ok,
        local_pi4_ok=pi4, local_pi2_ok=pi2, margins=margins)


def envelope_ratio_limit(queue_weight: float, variance: float) -> float:
    """Largest admissible ratio of envelope width to equilibrium backlog
    capacity, min(1/2, 2 / (b*sigma^2 * (6 + sqrt(2b)*sigma + b*sigma^2)))."""
    if not queue_weight > 0:
        raise DomainError("queue-feedback bound needs queue_weight > 0")
    if not variance > 0:
        raise DomainError("variance must be > 0")
    sigma = math.sqrt(variance)
    q = queue_weight * variance
    return min(0.5, 2.0 / (q * (6.0 + math.sqrt(2.0 * queue_weight) * sigma + q)))


def gain_bound_with_queue(queue_weight: float, variance: float) -> float:
    """Certified gain bound for RCP with queue feedback.

    Any gain a below the returned value is globally stable for every
    capacity and delay set; the bound depends only on the queue weight
    and traffic variance.
    """
    alpha = envelope_ratio_limit(queue_weight, variance)
    sigma = math.sqrt(variance)
    m = max(math.sqrt(2.0 * queue_weight) * sigma, queue_weight * variance)
    return alpha * m / (2.0 + alpha * m)


def stable_without_queue(gain_a: float) -> bool:
    """Sufficient global-stability verdict for rate-mismatch-only RCP:
    true iff a < 1/2 (strict)."""
    if not gain_a > 0:
        raise DomainError(f"gain must be > 0, got {gain_a}")
    return gain_a < RATE_MISMATCH_GAIN_BOUND


def local_stability_check(gain_a: float, queue_weight: float):
    """Quoted local-stability thresholds.

    Returns ``(pi4_ok, pi2_ok)``: a < pi/4 holds for any queue weight;
    the looser a < pi/2 applies only without queue feedback and is None
    otherwise.
    """
    if not gain_a > 0:
        raise DomainError(f"gain must be > 0, got {gain_a}")
    if queue_weight < 0:
        raise DomainError(f"queue weight must be >= 0, got {queue_weight}")
    pi4 = gain_a < LOCAL_PI4
    pi2 = gain_a < LOCAL_PI2 if queue_weight == 0 else None
    return pi4, pi2


def envelope_iteration(sys: BottleneckSystem, eq: EquilibriumPoint,
                       consts: StabilityConstants, u_check_0: float = None,
                       max_rounds: int = 24) -> EnvelopeIteration:
    """Iterate the worst-case perturbation-envelope recursion.

    Starting from a bound ``u_check_0`` on the per-route excursion below
    equilibrium (defaults to R_bar, the largest possible), each round
    maps it through the extremal secant slopes:

        u_hat   = kappa * T_bar * ybar * f1 * u_check / (1 - ktf0)
        v_hat   = min(u_hat, w / N)          # the envelope cap
        u_check = kappa * T_bar * (ybar + w) * f2 * v_hat

    Once the cap is inactive every round contracts by exactly the
    certificate's left-hand side; ``gamma`` reports the largest ratio
    past the first (capped) round. Raises NonContractive if gamma >= 1
    while the certificate holds, which would mean a bug.
    """
    if max_rounds < 2:
        raise ValueError("need at least 2 rounds to measure contraction")
    r_bar = eq.R_bar
    if u_check_0 is None:
        u_check_0 = r_bar
    if not 0.0 < u_check_0 <= r_bar:
        raise DomainError(
            f"u_check_0 must lie in (0, R_bar={r_bar}], got {u_check_0}")
    kT = sys.kappa * sys.t_bar
    y_bar = eq.y_bar
    cap = consts.w / eq.n_routes
    up_gain = kT * y_bar * consts.f1 / (1.0 - consts.ktf0)
    down_gain = kT * (y_bar + consts.w) * consts.f2

    u_checks = [u_check_0]
    u_hats = []
    for _ in range(max_rounds):
        u_hat = up_gain * u_checks[-1]
        u_hats.append(u_hat)
        u_checks.append(down_gain * min(u_hat, cap))

    ratios = [u_checks[k + 1] / u_checks[k] for k in range(1, max_rounds)]
    gamma = max(ratios)
    lhs = global_stability_lhs(sys, eq, consts)
    contractive = gamma < 1.0
    if not contractive and consts.ktf0 < 1.0 and lhs < 1.0:
        raise NonContractive(
            f"gamma = {gamma} >= 1 although the certificate holds (lhs={lhs})")
    return EnvelopeIteration(u_hats=tuple(u_hats), u_checks=tuple(u_checks),
                             gamma=gamma, contractive=contractive)
