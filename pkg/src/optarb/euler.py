"""Direct Euler discretization baselines.

The raw Euler scheme on the capitalization SDE serves as the instability
baseline: its Gaussian increments can push a coordinate to or below zero,
which the structurally nonnegative Bessel representation cannot. Failures
are data here. A path fails at the first step where any coordinate drops
to the positivity floor or below; failed paths are frozen at their last
recorded state (the dynamics are never repaired or clamped) and the report
carries the failure times.

The auxiliary process

    d zeta_i = zeta_i dt + sqrt(zeta_i * (zeta_1 + ... + zeta_n)) dW_i

may genuinely hit the boundary of the positive orthant in finite time; the
fraction of absorbed paths certifies that the arbitrage quantity is
nontrivial. Its Euler experiment uses an absorbing boundary: a path is
frozen once it touches the floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError
from .params import PathBatch, SimConfig, VsmParams
from .streams import DOMAIN_EULER, path_stream_keys, substream

# Default positivity floor: a coordinate at or below this counts as zero.
EPS_POSITIVITY = 1e-12


@dataclass(frozen=True)
class DiagnosticReport:
    """Positivity bookkeeping of an Euler run."""

    eps_floor: float
    n_paths: int
    n_failed: int
    first_hit_times: np.ndarray  # NaN where a path never failed

    @property
    def failure_fraction(self) -> float:
        return self.n_failed / self.n_paths


@dataclass(frozen=True)
class HitReport:
    """Boundary-hitting summary of the auxiliary-process experiment."""

    fraction_hit: float
    hit_times: np.ndarray  # NaN where a path never hit
    hit_mask: np.ndarray

    def ci99(self) -> tuple[float, float]:
        """Normal-approximation 99% confidence interval for the hit fraction."""
        p = self.fraction_hit
        n = self.hit_mask.size
        half = 2.5758293035489004 * math.sqrt(max(p * (1.0 - p), 0.0) / n)
        return max(p - half, 0.0), min(p + half, 1.0)


def euler_vsm_paths(
    vsm: VsmParams,
    cfg: SimConfig,
    rng: Optional[np.random.Generator] = None,
    eps_floor: float = EPS_POSITIVITY,
    per_path_streams: bool = True,
) -> tuple[PathBatch, DiagnosticReport]:
    """Euler-Maruyama discretization of the VSM capitalization SDE.

    X_i(t_{k+1}) = X_i + kappa * X * dt + sqrt(X_i * X) * dW_i on the
    uniform calendar grid. With ``per_path_streams`` each path consumes its
    own (seed, path) stream, so a Bessel run built on the same keys starts
    from identical Gaussian draws and failure comparisons are paired;
    passing an explicit ``rng`` instead draws the whole batch from it.
    """
    x0 = vsm.x0_array
    if np.any(x0 <= 0.0):
        raise DomainError("initial capitalizations must be strictly positive")
    P, n = cfg.n_paths, vsm.n
    K = cfg.n_steps
    dt = cfg.dt
    keys = path_stream_keys(cfg.seed, P, DOMAIN_EULER)
    if per_path_streams and rng is None:
        draws = np.empty((P, K, n))
        for p in range(P):
            draws[p] = substream(cfg.seed, DOMAIN_EULER, p).standard_normal((K, n))
    else:
        if rng is None:
            raise DomainError("either per_path_streams or an explicit rng is required")
        draws = rng.standard_normal((P, K, n))
    draws *= math.sqrt(dt)

    values = np.empty((P, K + 1, n))
    values[:, 0] = x0
    x = np.tile(x0, (P, 1))
    alive = np.ones(P, dtype=bool)
    hit_time = np.full(P, np.nan)
    for k in range(K):
        xs = x.sum(axis=1)
        x_next = x + vsm.kappa * xs[:, None] * dt + np.sqrt(np.maximum(x, 0.0) * xs[:, None]) * draws[:, k]
        failed_now = alive & (x_next <= eps_floor).any(axis=1)
        hit_time[failed_now] = (k + 1) * dt
        alive &= ~failed_now
        x = np.where(alive[:, None], x_next, x)
        values[:, k + 1] = x
    report = DiagnosticReport(
        eps_floor=eps_floor,
        n_paths=P,
        n_failed=int(np.sum(~np.isnan(hit_time))),
        first_hit_times=hit_time,
    )
    batch = PathBatch(
        start_time=0.0,
        times=dt * np.arange(K + 1),
        values=values,
        seed=cfg.seed,
        stream_keys=keys,
    )
    return batch, report


def bessel_failure_report(
    vsm: VsmParams,
    cfg: SimConfig,
    eps_floor: float = EPS_POSITIVITY,
) -> tuple[DiagnosticReport, int]:
    """Positivity failures of the Bessel method under the Euler pairing streams.

    Path p consumes the same (seed, path) stream as path p of
    :func:`euler_vsm_paths`, making the comparison paired draw for draw.
    Squared Bessel values are sums of squares, so the failure count is
    structurally zero; the run exists to demonstrate exactly that under
    matched budgets. Returns the report plus the number of paths whose
    clock did not reach the horizon within the step cap (counted, not
    hidden; positivity holds on whatever range was simulated).
    """
    from .clock import simulate_terminal
    from .errors import BudgetExceeded

    truncated = 0
    hit_time = np.full(cfg.n_paths, np.nan)
    for p in range(cfg.n_paths):
        rng = substream(cfg.seed, DOMAIN_EULER, p)
        try:
            term = simulate_terminal(vsm, 0.0, vsm.x0_array, cfg, rng, n_paths=1)
        except BudgetExceeded:
            truncated += 1
            continue
        # sum-of-squares values cannot be negative; record a hit if one ever is
        if not term.at_start and (
            (term.y_left <= eps_floor).any() or (term.y_right <= eps_floor).any()
        ):
            hit_time[p] = 0.0
    report = DiagnosticReport(
        eps_floor=eps_floor,
        n_paths=cfg.n_paths,
        n_failed=int(np.sum(~np.isnan(hit_time))),
        first_hit_times=hit_time,
    )
    return report, truncated


def auxiliary_boundary_experiment(
    n: int,
    x0,
    horizon: float,
    dt: float,
    n_paths: int,
    rng: np.random.Generator,
    eps_floor: float = EPS_POSITIVITY,
    record_paths: int = 0,
) -> tuple[HitReport, Optional[tuple[np.ndarray, np.ndarray]]]:
    """Boundary-hitting experiment for the auxiliary process.

    Simulates the zeta SDE by Euler with absorption at the positivity
    floor and returns the hit fraction with per-path hit times. With
    ``record_paths`` > 0 the first so many trajectories are also returned
    as ``(times, values)`` for plotting hit and surviving paths.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,) or np.any(x0 <= 0.0):
        raise DomainError(f"x0 must be a strictly positive {n}-vector, got {x0}")
    if not (horizon > 0.0 and dt > 0.0 and dt <= horizon):
        raise DomainError(f"need 0 < dt <= horizon, got dt={dt}, horizon={horizon}")
    K = int(round(horizon / dt))
    z = np.tile(x0, (n_paths, 1))
    alive = np.ones(n_paths, dtype=bool)
    hit_time = np.full(n_paths, np.nan)
    rec = None
    if record_paths > 0:
        rec = np.empty((min(record_paths, n_paths), K + 1, n))
        rec[:, 0] = x0
    sqrt_dt = math.sqrt(dt)
    for k in range(K):
        zs = z.sum(axis=1)
        dw = rng.standard_normal((n_paths, n)) * sqrt_dt
        z_next = z + z * dt + np.sqrt(np.maximum(z, 0.0) * zs[:, None]) * dw
        hit_now = alive & (z_next <= eps_floor).any(axis=1)
        hit_time[hit_now] = (k + 1) * dt
        alive &= ~hit_now
        # absorbing boundary: once hit, the path is frozen
        z = np.where(alive[:, None], z_next, z)
        if rec is not None:
            rec[:, k + 1] = z[: rec.shape[0]]
    mask = ~np.isnan(hit_time)
    report = HitReport(fraction_hit=float(mask.mean()), hit_times=hit_time, hit_mask=mask)
    if rec is None:
        return report, None
    return report, (dt * np.arange(K + 1), rec)
