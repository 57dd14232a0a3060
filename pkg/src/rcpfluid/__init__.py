"""rcpfluid: fluid-model analysis of RCP explicit-feedback rate control.

Numerically integrates the delayed nonlinear rate dynamics over networks
with heterogeneous delays, solves for equilibria, evaluates a global
stability certificate and its closed-form specializations with and
without queue feedback, and sweeps parameter space to map stability
regions against the analytic bounds.
"""

from .errors import (BracketError, ConfigError, DomainError, GainTooLarge,
                     HistoryUnderflow, NonContractive, ParseError, RcpError,
                     TopologyError, ValidationError)
from .model import (BottleneckSystem, LinkParams, NetworkModel,
                    QueueFeedbackCurve, RateMismatchCurve, RouteSpec,
                    TabulatedCurve, aggregate_arrival, bottleneck_rhs,
                    flow_rate, mean_queue_size, positivity_projection,
                    rcp_rhs, reduce_network, reduce_single_link,
                    weighted_mean_rtt)
from .equilibrium import (EquilibriumPoint, StabilityConstants,
                          equilibrium_of, equilibrium_with_queue,
                          queue_slope_identity, solve_equilibrium_bisect,
                          stability_constants)
from .stability import (RATE_MISMATCH_GAIN_BOUND, EnvelopeIteration,
                        StabilityReport, envelope_iteration,
                        envelope_ratio_limit, gain_bound_with_queue,
                        global_stability_check, global_stability_lhs,
                        local_stability_check, stable_without_queue)
from .sim import (Classification, ConstantHistory, GridHistory,
                  OscillationStats, SimConfig, SimTrace, TableHistory,
                  detect_convergence, detect_oscillation, simulate,
                  step_refinement_check)
from .harness import (Scenario, SweepAxis, SweepPoint, SweepResult, SweepSpec,
                      analyze_scenario, load_scenario, load_sweep_spec,
                      parse_scenario, parse_sweep_spec, render_report,
                      run_check, run_sweep, trace_csv)

__version__ = "0.1.0"
