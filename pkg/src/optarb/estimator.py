"""Monte Carlo estimation of the optimal relative-arbitrage quantity.

For kappa = 1 the quantity rerun from state x at time s is

    u(T-s, x) = [x_1 ... x_n / (x_1 + ... + x_n)]
                * E[ (X_1(T) + ... + X_n(T)) / (X_1(T) ... X_n(T)) ],

estimated by averaging over fresh simulated paths started at x. For a
general zeta in [0, 1] (kappa = (1+zeta)/2) the payoff carries the power
(1+zeta)/2 on the products and a pathwise exponential correction

    exp( - integral_t^T (1 - zeta^2) X(r) sum_j 1/(8 X_j(r)) dr ),

approximated by the trapezoid rule on the reconstructed calendar grid.
All products and powers are composed in log space, so the estimate at zero
remaining time cancels algebraically to exactly 1 with zero variance, and
large-n products cannot overflow.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .clock import interp_state_at, run_until_horizon, simulate_terminal
from .errors import BudgetExceeded, DomainError
from .params import Interpolation, SimConfig, UEstimate, VsmParams
from .streams import DOMAIN_SURFACE, DOMAIN_TIME_SWEEP, substream

__all__ = [
    "payoff_kappa1",
    "estimate_u",
    "estimate_u_general",
    "sweep_time",
    "sweep_surface",
    "MeshAxis",
    "USurface",
    "UPath",
]


def _check_state(x, n: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or (n is not None and x.shape[0] != n):
        raise DomainError(f"state must be a 1-d vector of length {n}, got shape {x.shape}")
    if not np.all((x > 0.0) & np.isfinite(x)):
        raise DomainError(f"state must be strictly positive and finite, got {x}")
    return x


def payoff_kappa1(x_terminal) -> float:
    """(x_1 + ... + x_n) / (x_1 ... x_n), with the product taken in log space."""
    x = _check_state(x_terminal)
    return float(np.exp(np.log(x.sum()) - np.log(x).sum()))


def _terminal_states(
    vsm: VsmParams,
    start: float,
    x_s: np.ndarray,
    cfg: SimConfig,
    rng: np.random.Generator,
    integrand=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate X(T) for every path plus the integrand trapezoid up to T.

    The main simulation and the bridge interpolation consume independent
    child streams of ``rng``, so switching the interpolation scheme leaves
    the simulated paths untouched (matched-seed comparisons stay paired).
    """
    main_rng, bridge_rng = rng.spawn(2)
    term = simulate_terminal(vsm, start, x_s, cfg, main_rng, integrand=integrand)
    if term.at_start:
        x_T = np.tile(x_s, (cfg.n_paths, 1))
        return x_T, np.zeros(cfg.n_paths)
    T = cfg.horizon
    if cfg.interpolation is Interpolation.LINEAR:
        lam = (term.theta_right - T) / (term.theta_right - term.theta_left)
        x_T = lam[:, None] * term.y_left + (1.0 - lam[:, None]) * term.y_right
    else:
        from .bessel import bridge_square_at

        P, n = term.y_left.shape
        width = term.theta_right - term.theta_left
        q = bridge_square_at(
            np.sqrt(term.y_left).ravel(),
            np.sqrt(term.y_right).ravel(),
            np.repeat(T - term.theta_left, n),
            np.repeat(width, n),
            float(cfg.bridge_step),
            vsm.bessel_dim,
            bridge_rng,
        )
        x_T = q.reshape(P, n)
    integral = term.integral_left
    if integrand is not None:
        g_left = integrand(term.y_left)
        g_T = integrand(x_T)
        integral = integral + (T - term.theta_left) * 0.5 * (g_left + g_T)
    return x_T, integral


def _estimate_from_logs(log_pref: float, log_terms: np.ndarray, t_remaining: float,
                        x_s: np.ndarray) -> UEstimate:
    u_k = np.exp(log_pref + log_terms)
    mean = float(np.mean(u_k))
    se = float(np.std(u_k, ddof=1) / math.sqrt(u_k.size))
    return UEstimate(mean=mean, std_error=se, n_paths=u_k.size,
                     t_remaining=t_remaining, state=tuple(x_s))


def estimate_u(
    vsm: VsmParams, s: float, x_s, cfg: SimConfig, rng: np.random.Generator
) -> UEstimate:
    """Estimate u(T-s, x_s) for the kappa = 1 market by fresh resimulation.

    Paths are restarted from the given state, so the estimate is the
    Markov conditional expectation; the standard error is the sample
    standard deviation of the per-path terms over sqrt(n_paths). At
    s = T the prefactor and payoff cancel in log space and the estimate
    is exactly 1 with zero variance.
    """
    if vsm.kappa != 1.0:
        raise DomainError(f"estimate_u is the kappa=1 closed form, got kappa={vsm.kappa}")
    x_s = _check_state(x_s, vsm.n)
    x_T, _ = _terminal_states(vsm, s, x_s, cfg, rng)
    log_pref = np.log(x_s).sum() - np.log(x_s.sum())
    log_pay = np.log(x_T.sum(axis=1)) - np.log(x_T).sum(axis=1)
    return _estimate_from_logs(log_pref, log_pay, cfg.horizon - s, x_s)


def estimate_u_general(
    vsm: VsmParams, s: float, x_s, cfg: SimConfig, rng: np.random.Generator
) -> UEstimate:
    """Estimate u(T-s, x_s) for a general zeta in [0, 1].

    Uses squared Bessel transitions of dimension m = 2*(1+zeta) (the exact
    noncentral chi-square sampler when m is not an integer) and applies the
    pathwise exponential correction; its time integral is accumulated by
    the trapezoid rule on the reconstructed calendar grid, including the
    partial final cell up to T. At zeta = 1 the correction coefficient
    vanishes and the estimator reduces to :func:`estimate_u`.
    """
    if not (0.0 <= vsm.zeta <= 1.0):
        raise DomainError(f"zeta must lie in [0, 1], got {vsm.zeta}")
    x_s = _check_state(x_s, vsm.n)
    c = (1.0 + vsm.zeta) / 2.0
    coeff = 1.0 - vsm.zeta**2
    integrand = None
    if coeff != 0.0:

        def integrand(y):  # (..., n) -> (...)
            return (coeff / 8.0) * y.sum(axis=-1) * (1.0 / y).sum(axis=-1)

    x_T, integral = _terminal_states(vsm, s, x_s, cfg, rng, integrand=integrand)
    log_pref = c * np.log(x_s).sum() - np.log(x_s.sum())
    log_terms = np.log(x_T.sum(axis=1)) - c * np.log(x_T).sum(axis=1) - integral
    return _estimate_from_logs(log_pref, log_terms, cfg.horizon - s, x_s)


def _estimator_for(vsm: VsmParams):
    return estimate_u if vsm.kappa == 1.0 else estimate_u_general


@dataclass(frozen=True)
class UPath:
    """Arbitrage quantity along one driving trajectory.

    The final entry sits at zero remaining time and must equal 1 exactly;
    the constructor enforces it.
    """

    times: np.ndarray
    states: np.ndarray
    estimates: tuple[UEstimate, ...]

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "estimates", tuple(self.estimates))
        last = self.estimates[-1]
        if last.t_remaining == 0.0 and (last.mean != 1.0 or last.std_error != 0.0):
            raise DomainError("estimate at zero remaining time must be exactly 1 with no variance")

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.estimates])

    @property
    def std_errors(self) -> np.ndarray:
        return np.array([e.std_error for e in self.estimates])


def sweep_time(
    vsm: VsmParams,
    cfg: SimConfig,
    driving_seed: Optional[int] = None,
    n_sweep: Optional[int] = None,
) -> UPath:
    """Estimate u(T - t_s, X(t_s)) along one simulated driving trajectory.

    One driving path of the market is simulated over [0, T]; at each
    calendar grid time its state is read off the clock reconstruction and
    a fresh inner Monte Carlo estimate is run from that state, each from
    its own derived stream. ``n_sweep`` decouples the number of evaluation
    times from the simulation mesh count (default: cfg.n_steps); 0 gives
    the single entry u(T, x0).
    """
    if driving_seed is None:
        driving_seed = cfg.seed
    if n_sweep is None:
        n_sweep = cfg.n_steps
    if n_sweep < 0:
        raise DomainError(f"n_sweep must be >= 0, got {n_sweep}")
    drive_cfg = replace(cfg, n_paths=2)
    y_paths, clock = run_until_horizon(
        vsm, 0.0, vsm.x0_array, drive_cfg, substream(driving_seed, DOMAIN_TIME_SWEEP, 0)
    )
    stop = int(clock.stop_idx[0])
    theta = clock.theta[0, : stop + 1]
    y_path = y_paths[0, : stop + 1]

    times = np.linspace(0.0, cfg.horizon, n_sweep + 1) if n_sweep else np.zeros(1)
    estimator = _estimator_for(vsm)
    states = np.empty((times.size, vsm.n))
    estimates = []
    for s_idx, t in enumerate(times):
        state = interp_state_at(theta, y_path, min(float(t), cfg.horizon))
        states[s_idx] = state
        est = estimator(vsm, float(t), state, cfg, substream(cfg.seed, DOMAIN_TIME_SWEEP, 1 + s_idx))
        estimates.append(est)
    return UPath(times=times, states=states, estimates=tuple(estimates))


@dataclass(frozen=True)
class MeshAxis:
    """One axis of a rectangular evaluation mesh: ``cells`` points on [lo, hi]."""

    lo: float
    hi: float
    cells: int

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise DomainError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.cells < 1:
            raise DomainError(f"cells must be >= 1, got {self.cells}")

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.cells)


@dataclass(frozen=True)
class USurface:
    """u(T, x) on a rectangular (x1, x2) mesh with the other coordinates fixed.

    Failed nodes (budget or overflow) carry NaN estimates; they are
    reported, never hidden.
    """

    axis1: MeshAxis
    axis2: MeshAxis
    fixed_coords: tuple[float, ...]
    values: tuple[tuple[UEstimate, ...], ...]
    cfg: SimConfig

    def means(self) -> np.ndarray:
        return np.array([[e.mean for e in row] for row in self.values])

    def std_errors(self) -> np.ndarray:
        return np.array([[e.std_error for e in row] for row in self.values])

    @property
    def n_failed(self) -> int:
        return sum(1 for row in self.values for e in row if not math.isfinite(e.mean))


def surface_node_stream(seed: int, flat_index: int) -> np.random.Generator:
    """The stream a surface node draws from; exposed so single-node runs can be replayed."""
    return substream(seed, DOMAIN_SURFACE, flat_index)


def sweep_surface(
    vsm: VsmParams,
    axis1: MeshAxis,
    axis2: MeshAxis,
    fixed_coords,
    cfg: SimConfig,
    n_threads: int = 1,
) -> USurface:
    """Estimate u(T, x) at every mesh node with independent derived streams.

    Node (i, j) evaluates the state (p1[i], p2[j], *fixed_coords) using the
    stream derived from (seed, flat index), so the surface is deterministic
    for a fixed config at any thread count. Nodes whose simulation exceeds
    the step budget or overflows are recorded as NaN estimates.
    """
    fixed_coords = () if fixed_coords is None else tuple(float(v) for v in np.atleast_1d(fixed_coords))
    if 2 + len(fixed_coords) != vsm.n:
        raise DomainError(
            f"mesh covers 2 coordinates and fixed_coords {len(fixed_coords)}, but n={vsm.n}"
        )
    p1, p2 = axis1.points(), axis2.points()
    estimator = _estimator_for(vsm)
    T = cfg.horizon

    def node(flat: int) -> UEstimate:
        i, j = divmod(flat, axis2.cells)
        state = np.array((p1[i], p2[j]) + fixed_coords)
        try:
            return estimator(vsm, 0.0, state, cfg, surface_node_stream(cfg.seed, flat))
        except (BudgetExceeded, FloatingPointError, OverflowError):
            return UEstimate(float("nan"), float("nan"), cfg.n_paths, T, tuple(state))

    total = axis1.cells * axis2.cells
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            flat_values = list(pool.map(node, range(total)))
    else:
        flat_values = [node(flat) for flat in range(total)]
    rows = tuple(
        tuple(flat_values[i * axis2.cells + j] for j in range(axis2.cells))
        for i in range(axis1.cells)
    )
    return USurface(axis1=axis1, axis2=axis2, fixed_coords=fixed_coords, values=rows, cfg=cfg)
