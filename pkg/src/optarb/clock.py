"""The stochastic clock and reconstruction of capitalization paths.

Capitalizations in a volatility-stabilized market become independent
squared Bessel processes of dimension m = 4*kappa once run on the internal
time scale t = Lambda(calendar), where Lambda(t) = integral of X(s)/4 ds.
The simulation therefore advances a uniform internal mesh t_k = s + k*dt
and maps it back to calendar times theta_k with the left-endpoint rule

    theta_{k+1} = theta_k + 4 * dt / Y(t_k),      theta_0 = s,

where Y = sum_i Y_i is the total time-changed capital. The mesh is
extended until theta_{N-1} <= T <= theta_N; the calendar-time state X(T)
is then interpolated inside the final cell, either linearly or with a
Bessel bridge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bessel import bridge_square_at
from .errors import BudgetExceeded, DomainError
from .params import Interpolation, Scheme, SimConfig, VsmParams

# Multiplier of the naive step budget guarding the mesh-extension loop.
MAX_STEP_MULTIPLIER = 100

# A run whose expected crossing requirement exceeds this multiple of the
# naive budget is treated as hopeless and fails fast at the naive cap.
FEASIBILITY_RATIO = 50

# Tail allowance over the expected requirement for feasible runs; the
# crossing-step distribution is heavy-tailed, but stragglers are cheap
# once the active set has compressed.
TAIL_MULTIPLIER = 200

# Target element count of one simulation chunk (cache / overhead tradeoff).
_CHUNK_TARGET = 1 << 19


def expected_crossing_steps(cfg: SimConfig, y_start: float, n: int, dim: float) -> int:
    """Mean internal mesh steps until the clock reaches the horizon.

    The total capital grows linearly in internal time at rate n*m, so the
    internal time needed to accumulate calendar T is about
    y_start * (exp(n*m*T/4) - 1) / (n*m).
    """
    growth = n * dim
    expo = min(growth * cfg.horizon / 4.0, 700.0)
    t_star = y_start * math.expm1(expo) / growth
    return max(1, math.ceil(t_star / cfg.dt))


def step_cap(cfg: SimConfig, y_start: float, n: int, dim: float) -> int:
    """Hard cap on internal mesh steps before the run fails loudly.

    The naive budget is horizon/dt scaled up for small initial capital;
    when the expected crossing requirement is within FEASIBILITY_RATIO of
    it, the cap allows TAIL_MULTIPLIER times the expectation (straggler
    paths are heavy-tailed but cost little). Runs whose expectation is
    beyond the feasibility ratio fail fast at the naive cap instead of
    looping for hours. ``cfg.max_steps`` overrides everything.
    """
    if cfg.max_steps is not None:
        return int(cfg.max_steps)
    naive = math.ceil(cfg.horizon / cfg.dt * max(1.0, 4.0 / y_start))
    expected = expected_crossing_steps(cfg, y_start, n, dim)
    if expected <= FEASIBILITY_RATIO * naive:
        return max(MAX_STEP_MULTIPLIER * naive, TAIL_MULTIPLIER * expected)
    return MAX_STEP_MULTIPLIER * naive


def resolve_scheme(scheme: Scheme, dim: float) -> Scheme:
    """AUTO picks the sum-of-squares recursion for integer dimension."""
    if scheme is Scheme.AUTO:
        return Scheme.SUM_OF_SQUARES if dim == int(dim) else Scheme.EXACT_TRANSITION
    if scheme is Scheme.SUM_OF_SQUARES and dim != int(dim):
        raise DomainError(f"sum-of-squares scheme needs integer dimension, got m={dim}")
    return scheme


@dataclass(frozen=True)
class ClockMap:
    """The per-path monotone mapping between internal and calendar time.

    ``theta_grid[k]`` realizes the inverse clock at the internal mesh point
    ``t_grid[k]``; ``y_totals[k]`` is the total capital Y(t_k) consumed by
    the increment theta_{k+1} - theta_k = 4*dt/Y(t_k), so it is one entry
    shorter than the grids.
    """

    t_grid: np.ndarray
    theta_grid: np.ndarray
    y_totals: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        th = np.asarray(self.theta_grid, dtype=float)
        y = np.asarray(self.y_totals, dtype=float)
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "theta_grid", th)
        object.__setattr__(self, "y_totals", y)
        if t.shape != th.shape or y.shape[0] != t.shape[0] - 1:
            raise DomainError("grid lengths inconsistent: need len(y_totals) == len(t_grid) - 1")
        if th[0] != t[0]:
            raise DomainError("theta_0 must equal the start time")
        if np.any(np.diff(th) <= 0.0):
            raise DomainError("theta grid must be strictly increasing")
        if np.any(y <= 0.0):
            raise DomainError("total capital must be strictly positive")

    @classmethod
    def start(cls, s: float) -> "ClockMap":
        return cls(np.array([s]), np.array([s]), np.empty(0))

    @property
    def n_cells(self) -> int:
        return self.theta_grid.shape[0] - 1


def advance_clock(clock: ClockMap, y_total: float, dt: float) -> ClockMap:
    """Append theta_{k+1} = theta_k + 4*dt/y_total; returns a new ClockMap."""
    if not (y_total > 0.0):
        raise DomainError(f"total capital must be strictly positive, got {y_total}")
    if not (dt > 0.0):
        raise DomainError(f"dt must be positive, got {dt}")
    return ClockMap(
        np.append(clock.t_grid, clock.t_grid[-1] + dt),
        np.append(clock.theta_grid, clock.theta_grid[-1] + 4.0 * dt / y_total),
        np.append(clock.y_totals, y_total),
    )


@dataclass(frozen=True)
class BatchClock:
    """Clock mappings of a whole path batch on a shared internal mesh.

    ``stop_idx[p]`` is the first index with theta >= horizon for path p;
    entries beyond it belong to the lockstep simulation overrun and are
    trimmed by :meth:`path`. ``truncated`` marks a batch cut off by the
    step cap instead of the horizon.
    """

    t_grid: np.ndarray
    theta: np.ndarray
    y_totals: np.ndarray
    stop_idx: np.ndarray
    truncated: bool = False

    def path(self, p: int) -> ClockMap:
        k = int(self.stop_idx[p])
        return ClockMap(self.t_grid[: k + 1], self.theta[p, : k + 1], self.y_totals[p, :k])


def run_until_horizon(
    vsm: VsmParams,
    start: float,
    x_s,
    cfg: SimConfig,
    rng: np.random.Generator,
    on_budget: str = "raise",
) -> tuple[np.ndarray, BatchClock]:
    """Simulate time-changed capitalizations until the clock passes the horizon.

    Returns ``(y_paths, clock)`` where ``y_paths[p, k]`` holds the n
    coordinate values Y_i(t_k) of path p (all strictly positive by
    construction) and ``clock`` the batch clock mapping. Stops once every
    path satisfies theta_k >= cfg.horizon; raises BudgetExceeded beyond the
    step cap unless ``on_budget="truncate"``.
    """
    if on_budget not in ("raise", "truncate"):
        raise DomainError(f"on_budget must be 'raise' or 'truncate', got {on_budget}")
    x_s = np.asarray(x_s, dtype=float)
    if x_s.shape != (vsm.n,) or np.any(x_s <= 0.0):
        raise DomainError(f"state must be a strictly positive {vsm.n}-vector, got {x_s}")
    T = cfg.horizon
    if start > T:
        raise DomainError(f"start time {start} lies beyond the horizon {T}")
    P, n, dt = cfg.n_paths, vsm.n, cfg.dt
    m = vsm.bessel_dim
    scheme = resolve_scheme(cfg.scheme, m)

    theta_rows = [np.full(P, float(start))]
    y_rows = [np.tile(x_s, (P, 1))]
    stop_idx = np.zeros(P, dtype=int)
    if start == T:
        clock = BatchClock(np.array([start]), np.column_stack(theta_rows), np.empty((P, 0)), stop_idx)
        return np.stack(y_rows, axis=1), clock

    cap = step_cap(cfg, float(x_s.sum()), n, m)
    crossed = np.zeros(P, dtype=bool)
    truncated = False
    if scheme is Scheme.SUM_OF_SQUARES:
        mi = int(m)
        w = np.zeros((P, n, mi))
        shift = np.zeros((n, mi))
        shift[:, 0] = np.sqrt(x_s)
    q = y_rows[0].copy()
    k = 0
    while True:
        k += 1
        if k > cap:
            if on_budget == "raise":
                raise BudgetExceeded(
                    f"clock did not reach T={T} within {cap} mesh steps "
                    f"(theta range [{theta_rows[-1].min():.4g}, {theta_rows[-1].max():.4g}])"
                )
            truncated = True
            k -= 1
            break
        theta_next = theta_rows[-1] + 4.0 * dt / q.sum(axis=1)
        if scheme is Scheme.SUM_OF_SQUARES:
            w += rng.standard_normal((P, n, mi)) * math.sqrt(dt)
            q = ((shift[None, :, :] + w) ** 2).sum(axis=2)
        else:
            q = dt * rng.noncentral_chisquare(m, q / dt)
        theta_rows.append(theta_next)
        y_rows.append(q.copy())
        newly = ~crossed & (theta_next >= T)
        stop_idx[newly] = k
        crossed |= newly
        if crossed.all():
            break
    stop_idx[~crossed] = k
    theta = np.column_stack(theta_rows)
    y_paths = np.stack(y_rows, axis=1)
    t_grid = start + dt * np.arange(k + 1)
    y_totals = y_paths[:, :-1, :].sum(axis=2)
    return y_paths, BatchClock(t_grid, theta, y_totals, stop_idx, truncated=truncated)


@dataclass(frozen=True)
class TerminalBatch:
    """Per-path final-cell brackets produced by the streaming simulation.

    For each path, [theta_left, theta_right] is the calendar cell with
    theta_left <= T <= theta_right and y_left/y_right the coordinate values
    at its ends. ``integral_left`` carries the trapezoid integral of the
    requested integrand over [start, theta_left] (zeros when no integrand
    was requested). ``at_start`` marks the degenerate zero-horizon case in
    which no cell exists and the state is the start state itself.
    """

    theta_left: np.ndarray
    theta_right: np.ndarray
    y_left: np.ndarray
    y_right: np.ndarray
    integral_left: np.ndarray
    steps_used: int
    at_start: bool = False


def simulate_terminal(
    vsm: VsmParams,
    start: float,
    x_s,
    cfg: SimConfig,
    rng: np.random.Generator,
    integrand: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    n_paths: Optional[int] = None,
) -> TerminalBatch:
    """Memory-light batch run keeping only the final-cell brackets.

    Identical dynamics to :func:`run_until_horizon` but paths retire from
    the working set once they cross the horizon, draws are chunked, and
    only the bracketing values plus the running integrand trapezoid are
    kept. This is the estimator workhorse. ``n_paths`` overrides the
    configured batch size (used by paired single-path comparisons).
    """
    x_s = np.asarray(x_s, dtype=float)
    if x_s.shape != (vsm.n,) or np.any(x_s <= 0.0):
        raise DomainError(f"state must be a strictly positive {vsm.n}-vector, got {x_s}")
    T = cfg.horizon
    if start > T:
        raise DomainError(f"start time {start} lies beyond the horizon {T}")
    P, n, dt = (n_paths or cfg.n_paths), vsm.n, cfg.dt
    m = vsm.bessel_dim
    scheme = resolve_scheme(cfg.scheme, m)

    if start == T:
        zeros = np.zeros(P)
        return TerminalBatch(zeros, zeros, np.tile(x_s, (P, 1)), np.tile(x_s, (P, 1)), zeros, 0, at_start=True)

    cap = step_cap(cfg, float(x_s.sum()), n, m)
    sqrt_dt = math.sqrt(dt)
    mi = int(m) if scheme is Scheme.SUM_OF_SQUARES else 0

    theta_left = np.empty(P)
    theta_right = np.empty(P)
    y_left = np.empty((P, n))
    y_right = np.empty((P, n))
    integral_left = np.zeros(P)

    active = np.arange(P)
    theta = np.full(P, float(start))
    y_prev = np.tile(x_s, (P, 1))
    integ = np.zeros(P)
    if scheme is Scheme.SUM_OF_SQUARES:
        w = np.zeros((P, n, mi))
        shift = np.zeros((n, mi))
        shift[:, 0] = np.sqrt(x_s)
    g_prev = integrand(y_prev) if integrand is not None else None

    steps = 0
    while active.size:
        a = active.size
        per_step = max(a * n * max(mi, 1), 1)
        chunk = max(1, min(_CHUNK_TARGET // per_step, cap - steps, 4096))
        # time-last layout keeps the per-path cumulative sums contiguous
        if scheme is Scheme.SUM_OF_SQUARES:
            dw = rng.standard_normal((a, n, mi, chunk))
            dw *= sqrt_dt
            w_new = np.cumsum(dw, axis=3, out=dw)
            w_new += (w + shift[None, :, :])[:, :, :, None]  # shifted accumulator
            y_chunk = np.einsum("anmc,anmc->anc", w_new, w_new)
        else:
            y_chunk = np.empty((a, n, chunk))
            q = y_prev
            for c in range(chunk):
                q = dt * rng.noncentral_chisquare(m, q / dt)
                y_chunk[:, :, c] = q
        ytot = y_chunk.sum(axis=1)
        ytot_left = np.concatenate([y_prev.sum(axis=1)[:, None], ytot[:, :-1]], axis=1)
        dtheta = 4.0 * dt / ytot_left
        theta_chunk = theta[:, None] + np.cumsum(dtheta, axis=1)

        if integrand is not None:
            g_chunk = integrand(np.moveaxis(y_chunk, 1, 2))
            g_left = np.concatenate([g_prev[:, None], g_chunk[:, :-1]], axis=1)
            inc = dtheta * 0.5 * (g_left + g_chunk)
            cum_inc = np.cumsum(inc, axis=1)

        crossed = theta_chunk >= T
        has = crossed.any(axis=1)
        if has.any():
            rows = np.flatnonzero(has)
            j = np.argmax(crossed[rows], axis=1)
            orig = active[rows]
            theta_left[orig] = np.where(j > 0, theta_chunk[rows, j - 1], theta[rows])
            theta_right[orig] = theta_chunk[rows, j]
            prev_rows = y_prev[rows]
            jm = np.maximum(j - 1, 0)
            y_left[orig] = np.where((j > 0)[:, None], y_chunk[rows, :, jm], prev_rows)
            y_right[orig] = y_chunk[rows, :, j]
            if integrand is not None:
                integral_left[orig] = integ[rows] + cum_inc[rows, j] - inc[rows, j]

        steps += chunk
        keep = ~has
        if steps >= cap and keep.any():
            raise BudgetExceeded(
                f"clock did not reach T={T} within {cap} mesh steps for "
                f"{int(keep.sum())} of {P} paths"
            )
        active = active[keep]
        theta = theta_chunk[keep, -1]
        y_prev = y_chunk[keep, :, -1]
        if scheme is Scheme.SUM_OF_SQUARES:
            w = w_new[keep, :, :, -1] - shift[None, :, :]  # carry without the shift
        if integrand is not None:
            integ = integ[keep] + cum_inc[keep, -1]
            g_prev = g_chunk[keep, -1]
    return TerminalBatch(theta_left, theta_right, y_left, y_right, integral_left, steps)


def interpolate_linear(clock: ClockMap, y_path: np.ndarray, target: float) -> np.ndarray:
    """Linear interpolation of the state at calendar time ``target`` in the last cell.

    X_i(T) = [(theta_N - T) Y_i(t_{N-1}) + (T - theta_{N-1}) Y_i(t_N)] / (theta_N - theta_{N-1}),
    a convex combination of strictly positive values.
    """
    if clock.n_cells < 1:
        raise DomainError("clock has no cell to interpolate in")
    y_path = np.asarray(y_path, dtype=float)
    th_l, th_r = clock.theta_grid[-2], clock.theta_grid[-1]
    if not (th_l <= target <= th_r):
        raise DomainError(f"target {target} outside the last cell [{th_l}, {th_r}]")
    lam = (th_r - target) / (th_r - th_l)
    return lam * y_path[-2] + (1.0 - lam) * y_path[-1]


def interpolate_bridge(
    clock: ClockMap,
    y_path: np.ndarray,
    target: float,
    vsm: VsmParams,
    bridge_step: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Bessel-bridge interpolation of the state at ``target`` in the last cell.

    Each coordinate is bridged from sqrt(Y_i(t_{N-1})) to sqrt(Y_i(t_N))
    over the calendar cell with dimension m = 4*kappa and step
    ``bridge_step``; the returned value is R(target)^2, strictly positive,
    equal to the stored grid values exactly at the cell ends.
    """
    if clock.n_cells < 1:
        raise DomainError("clock has no cell to interpolate in")
    y_path = np.asarray(y_path, dtype=float)
    th_l, th_r = clock.theta_grid[-2], clock.theta_grid[-1]
    if not (th_l <= target <= th_r):
        raise DomainError(f"target {target} outside the last cell [{th_l}, {th_r}]")
    duration = th_r - th_l
    if bridge_step > duration:
        raise DomainError(f"bridge_step {bridge_step} wider than the cell {duration}")
    if target == th_l:
        return y_path[-2].copy()
    if target == th_r:
        return y_path[-1].copy()
    a = np.sqrt(y_path[-2])
    b = np.sqrt(y_path[-1])
    t_eval = np.full(vsm.n, target - th_l)
    dur = np.full(vsm.n, duration)
    return bridge_square_at(a, b, t_eval, dur, bridge_step, vsm.bessel_dim, rng)


def interp_state_at(theta_grid: np.ndarray, y_path: np.ndarray, t: float) -> np.ndarray:
    """State at an arbitrary calendar time inside the simulated clock range."""
    theta_grid = np.asarray(theta_grid, dtype=float)
    if not (theta_grid[0] <= t <= theta_grid[-1]):
        raise DomainError(f"time {t} outside the simulated range [{theta_grid[0]}, {theta_grid[-1]}]")
    r = int(np.searchsorted(theta_grid, t, side="left"))
    if r == 0:
        return np.asarray(y_path[0], dtype=float).copy()
    lam = (theta_grid[r] - t) / (theta_grid[r] - theta_grid[r - 1])
    return lam * y_path[r - 1] + (1.0 - lam) * y_path[r]


def clock_roundtrip_times(theta_grid: np.ndarray, y_total_grid: np.ndarray) -> np.ndarray:
    """Apply the forward clock Lambda(t) = integral X/4 by trapezoid quadrature.

    Given the reconstructed calendar grid theta_k and the total capital at
    every grid point, returns s + Lambda_hat(theta_j), which should recover
    the uniform internal mesh t_j up to the discretization error of the
    left-endpoint clock stepping.
    """
    theta_grid = np.asarray(theta_grid, dtype=float)
    y_total_grid = np.asarray(y_total_grid, dtype=float)
    if theta_grid.shape != y_total_grid.shape:
        raise DomainError("theta grid and total-capital grid must align")
    inc = np.diff(theta_grid) * 0.125 * (y_total_grid[:-1] + y_total_grid[1:])
    return theta_grid[0] + np.concatenate([[0.0], np.cumsum(inc)])
