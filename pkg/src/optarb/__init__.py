"""Optimal relative arbitrage in volatility-stabilized markets.

Simulation of the market through time-changed squared Bessel processes,
Monte Carlo estimation of the optimal arbitrage quantity with Bessel
bridge terminal refinement, an Euler instability baseline with the
boundary-hitting certificate, and a backward-SDE consistency solver.
"""

from .bessel import (
    BridgeSpec,
    SquaredBesselSpec,
    besq_exact_transition,
    besq_increment_sum_of_squares,
    besq_literal_single_sum,
    bessel_bridge_path,
    brownian_bridge_path,
)
from .bsde import BsdeConfig, BsdeSolution, driver_f, solve_bsde, solve_reflected
from .clock import (
    BatchClock,
    ClockMap,
    TerminalBatch,
    advance_clock,
    clock_roundtrip_times,
    interp_state_at,
    interpolate_bridge,
    interpolate_linear,
    run_until_horizon,
    simulate_terminal,
)
from .errors import (
    BudgetExceeded,
    ConfigError,
    DomainError,
    NonMonotoneLadderWarning,
    OptArbError,
    RegressionIllConditioned,
    SingularMatrix,
)
from .estimator import (
    MeshAxis,
    UPath,
    USurface,
    estimate_u,
    estimate_u_general,
    payoff_kappa1,
    sweep_surface,
    sweep_time,
)
from .euler import (
    DiagnosticReport,
    HitReport,
    auxiliary_boundary_experiment,
    euler_vsm_paths,
)
from .params import (
    Interpolation,
    MarketParams,
    PathBatch,
    Scheme,
    SimConfig,
    UEstimate,
    VsmParams,
    market_price_of_risk,
    validate_vsm,
)
from .streams import substream

__version__ = "0.1.0"

__all__ = [
    "BatchClock",
    "BridgeSpec",
    "BsdeConfig",
    "BsdeSolution",
    "BudgetExceeded",
    "ClockMap",
    "ConfigError",
    "DiagnosticReport",
    "DomainError",
    "HitReport",
    "Interpolation",
    "MarketParams",
    "MeshAxis",
    "NonMonotoneLadderWarning",
    "OptArbError",
    "PathBatch",
    "RegressionIllConditioned",
    "Scheme",
    "SimConfig",
    "SingularMatrix",
    "SquaredBesselSpec",
    "TerminalBatch",
    "UEstimate",
    "UPath",
    "USurface",
    "VsmParams",
    "advance_clock",
    "auxiliary_boundary_experiment",
    "besq_exact_transition",
    "besq_increment_sum_of_squares",
    "besq_literal_single_sum",
    "bessel_bridge_path",
    "brownian_bridge_path",
    "clock_roundtrip_times",
    "driver_f",
    "estimate_u",
    "estimate_u_general",
    "euler_vsm_paths",
    "interp_state_at",
    "interpolate_bridge",
    "interpolate_linear",
    "market_price_of_risk",
    "payoff_kappa1",
    "run_until_horizon",
    "simulate_terminal",
    "solve_bsde",
    "solve_reflected",
    "substream",
    "sweep_surface",
    "sweep_time",
    "validate_vsm",
]
