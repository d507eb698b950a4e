"""Backward-SDE solver for the arbitrage Cauchy problem (desk scale).

The quantity u(T-t, X_t), paired with Z_t = (s' grad u)(T-t, X_t),
satisfies along the market paths

    dY_t = f(X_t, Z_t) dt + Z_t' dW_t,        Y_T = 1,
    f(x, z) = b(x)' (s(x)')^{-1} z - (1' s(x) z) / (x_1 + ... + x_n),

derived by substituting the Cauchy equation into the Ito expansion of u.
The driver therefore enters the backward conditional-expectation recursion
with a minus sign (DRIVER_SIGN): Y_j = E_j[Y_{j+1}] - f(X_j, Z_j) dt.

A word of caution on what the recursion converges to. The terminal data is
the constant 1 and f vanishes at z = 0, so the pair (Y, Z) = (1, 0) solves
the same equation; the semilinear problem behind this market admits
multiple nonnegative solutions, and the plain backward recursion locks
onto that trivial fixed point. The minimal solution (the arbitrage
quantity, strictly below 1 for n >= 2) is a strict local martingale under
the implied measure change and is invisible to conditional-expectation
regression; the Monte Carlo estimator targets it directly. The solver is
kept as an independent check of the backward machinery itself (driver
algebra, regression pipeline, penalization bookkeeping): its value is the
trivial-solution benchmark, reproduced without blow-up.

Forward paths come from the positivity-safe time-changed Bessel engine,
never the raw Euler scheme. Driving Brownian increments are recovered at
the fine clock resolution (left-endpoint implied increments, asymptotically
exact) and aggregated into calendar buckets; the Z regression uses the
control-variate target (Y - E[Y | X]) dW / dt, which removes the dominant
noise term and keeps the driver feedback stable.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clock import run_until_horizon
from .errors import DomainError, NonMonotoneLadderWarning, RegressionIllConditioned
from .params import MarketParams, Scheme, SimConfig, VsmParams
from .streams import DOMAIN_BSDE, substream

__all__ = ["BsdeConfig", "BsdeSolution", "driver_f", "solve_bsde", "solve_reflected"]

# The driver of the backward recursion: Y_j = E_j[Y_{j+1}] + DRIVER_SIGN * f * dt.
# Fixed by the Ito expansion (dY = +f dt + Z'dW forward in time).
DRIVER_SIGN = -1.0

# Condition ceiling of the standardized regression design matrix.
REGRESSION_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class BsdeConfig:
    """Configuration of the backward regression solver.

    ``penalization`` is the nondecreasing lambda ladder used by
    :func:`solve_reflected`; ``bessel_dt`` the internal mesh step of the
    forward clock simulation (defaults to a quarter of the calendar step).
    """

    n_time_steps: int = 25
    n_paths: int = 4000
    basis: str = "log_poly"
    degree: int = 2
    penalization: tuple[float, ...] = (0.0, 1.0, 10.0, 100.0)
    seed: int = 0
    bessel_dt: Optional[float] = None

    def __post_init__(self):
        if self.n_time_steps < 1:
            raise DomainError(f"n_time_steps must be >= 1, got {self.n_time_steps}")
        if self.n_paths < 2:
            raise DomainError(f"n_paths must be >= 2, got {self.n_paths}")
        if self.basis not in ("log_poly", "poly"):
            raise DomainError(f"basis must be 'log_poly' or 'poly', got {self.basis!r}")
        if self.degree < 1:
            raise DomainError(f"degree must be >= 1, got {self.degree}")
        lam = tuple(float(v) for v in self.penalization)
        if any(v < 0 for v in lam) or any(b < a for a, b in zip(lam, lam[1:])):
            raise DomainError(f"penalization ladder must be nonnegative nondecreasing, got {lam}")
        object.__setattr__(self, "penalization", lam)


@dataclass(frozen=True)
class BsdeSolution:
    """Backward-scheme output.

    ``k_trace`` is the cumulative mean reflection push on the calendar
    grid, nondecreasing with K_0 = 0; ``complementarity`` the residual
    |sum_j E[Y_j dK_j]|, which must vanish when the obstacle never binds.
    ``ladder`` lists (lambda, y0, std_error) triples for penalized runs
    (empty for the unreflected solver).
    """

    y0: float
    std_error: float
    y_coeffs: tuple[np.ndarray, ...]
    z_coeffs: tuple[np.ndarray, ...]
    k_trace: np.ndarray
    complementarity: float
    ladder: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        k = np.asarray(self.k_trace, dtype=float)
        object.__setattr__(self, "k_trace", k)
        if k.size and (k[0] != 0.0 or np.any(np.diff(k) < -1e-15)):
            raise DomainError("k_trace must be nondecreasing with K_0 = 0")


def driver_f(market, x, z):
    """Evaluate f(x, z) = b'(s')^{-1} z - (1' s z)/sum(x); linear in z.

    Accepts a VsmParams (fast diagonal formulas) or a generic MarketParams,
    and broadcasts over rows when ``x`` and ``z`` are (P, n) arrays.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
        z = z[None, :]
    if np.any(x <= 0.0):
        raise DomainError("driver needs strictly positive states")
    if isinstance(market, VsmParams):
        xs = x.sum(axis=1)
        s_diag = np.sqrt(x * xs[:, None])
        val = market.kappa * xs * (z / s_diag).sum(axis=1) - (s_diag * z).sum(axis=1) / xs
    elif isinstance(market, MarketParams):
        from .params import market_price_of_risk  # noqa: F401  (shares the SingularMatrix contract)

        vals = []
        for xi, zi in zip(x, z):
            s = np.asarray(market.diffusion(xi), dtype=float)
            b = np.asarray(market.drift(xi), dtype=float)
            cond = np.linalg.cond(s)
            if not np.isfinite(cond) or cond > 1e12:
                from .errors import SingularMatrix

                raise SingularMatrix(f"diffusion condition {cond:.3e} at state {xi}")
            vals.append(b @ np.linalg.solve(s.T, zi) - (s @ zi).sum() / xi.sum())
        val = np.asarray(vals)
    else:
        raise DomainError(f"market must be VsmParams or MarketParams, got {type(market)!r}")
    return float(val[0]) if squeeze else val


def _basis_matrix(states: np.ndarray, basis: str, degree: int) -> np.ndarray:
    """Standardized monomial design matrix with intercept.

    Coordinates are (log) x_1..x_n plus the (log) total; for n = 1 the
    total duplicates the single coordinate and is dropped. Columns are
    centered and scaled on the fitting set; exactly constant columns are
    removed. Raises RegressionIllConditioned above the condition ceiling.
    """
    n = states.shape[1]
    if basis == "log_poly":
        coords = [np.log(states[:, i]) for i in range(n)]
        # the log of the total is not an affine image of the coordinate logs
        if n > 1:
            coords.append(np.log(states.sum(axis=1)))
    else:
        # the raw total is exactly collinear with the coordinates; skip it
        coords = [states[:, i] for i in range(n)]
    cols = []
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(len(coords)), deg):
            col = np.ones(states.shape[0])
            for idx in combo:
                col = col * coords[idx]
            cols.append(col)
    mat = np.column_stack(cols)
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)
    keep = std > 1e-14
    mat = (mat[:, keep] - mean[keep]) / std[keep]
    design = np.column_stack([np.ones(states.shape[0]), mat])
    cond = np.linalg.cond(design)
    if not np.isfinite(cond) or cond > REGRESSION_CONDITION_LIMIT:
        raise RegressionIllConditioned(
            f"regression design condition {cond:.3e} exceeds {REGRESSION_CONDITION_LIMIT:.0e}"
        )
    return design


def _regress(design: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return design @ coef, coef


def _forward_paths(vsm: VsmParams, horizon: float, x0: np.ndarray, cfg: BsdeConfig):
    """Simulate forward paths and recover calendar states plus BM increments.

    Returns X of shape (P, J+1, n) on the uniform calendar grid and the
    bucketed driving increments dW of shape (P, J, n). Increments are
    implied cell by cell at the clock resolution with the left-endpoint
    drift and diffusion, clipped at the horizon, and summed into the
    calendar bucket owning the cell's left endpoint.
    """
    J = cfg.n_time_steps
    delta = horizon / J
    bessel_dt = cfg.bessel_dt if cfg.bessel_dt is not None else delta / 4.0
    sim = SimConfig(
        horizon=horizon,
        n_steps=max(1, int(round(horizon / bessel_dt))),
        n_paths=cfg.n_paths,
        seed=cfg.seed,
        scheme=Scheme.AUTO,
    )
    rng = substream(cfg.seed, DOMAIN_BSDE, 0)
    y_paths, clock = run_until_horizon(vsm, 0.0, x0, sim, rng)
    TH = clock.theta
    P, n = cfg.n_paths, vsm.n
    K = TH.shape[1] - 1
    dt_cells = np.diff(TH, axis=1)
    frac = np.clip((horizon - TH[:, :-1]) / dt_cells, 0.0, 1.0)
    x_left = y_paths[:, :-1]
    xs_left = x_left.sum(axis=2)
    dw_cell = (
        (y_paths[:, 1:] - x_left) * frac[:, :, None]
        - vsm.kappa * xs_left[:, :, None] * (dt_cells * frac)[:, :, None]
    ) / np.sqrt(x_left * xs_left[:, :, None])

    tgrid = np.linspace(0.0, horizon, J + 1)
    X = np.empty((P, J + 1, n))
    dW = np.empty((P, J, n))
    left = TH[:, :-1]
    for p in range(P):
        starts = np.searchsorted(left[p], tgrid[:-1], side="left")
        lengths = np.diff(starts, append=K)
        seg = np.add.reduceat(dw_cell[p], np.minimum(starts, K - 1), axis=0)
        seg[lengths == 0] = 0.0
        dW[p] = seg
        idx = np.clip(np.searchsorted(TH[p], tgrid, side="left"), 1, K)
        lam = (TH[p, idx] - tgrid) / (TH[p, idx] - TH[p, idx - 1])
        lam = np.clip(lam, 0.0, 1.0)
        X[p] = lam[:, None] * y_paths[p, idx - 1] + (1.0 - lam[:, None]) * y_paths[p, idx]
    X[:, 0] = x0
    return X, dW


def _backward(
    vsm: VsmParams,
    X: np.ndarray,
    dW: np.ndarray,
    delta: float,
    cfg: BsdeConfig,
    lam: float,
):
    """One backward sweep; returns (y0, se, y_coeffs, z_coeffs, k_increments, compl)."""
    P, J1, n = X.shape
    J = J1 - 1
    y = np.ones(P)
    y_coeffs: list[np.ndarray] = []
    z_coeffs: list[np.ndarray] = []
    k_inc = np.zeros(J)
    compl = 0.0
    for j in range(J - 1, -1, -1):
        if j == 0:
            resid = y - y.mean()
            z0 = (resid[:, None] * dW[:, 0]).mean(axis=0) / delta
            y_star = y.mean() + DRIVER_SIGN * driver_f(vsm, X[0, 0], z0) * delta
            se = float(y.std(ddof=1) / math.sqrt(P))
            if lam > 0.0 and y_star < 0.0:
                y_new = y_star / (1.0 + lam * delta)
                k_inc[0] = lam * delta * max(-y_new, 0.0)
                compl += y_new * k_inc[0]
                y_star = y_new
            return float(y_star), se, tuple(reversed(y_coeffs)), tuple(reversed(z_coeffs)), k_inc, abs(compl)
        design = _basis_matrix(X[:, j], cfg.basis, cfg.degree)
        c_fit, c_coef = _regress(design, y)
        resid = y - c_fit
        z = np.empty((P, n))
        zc = np.empty((design.shape[1], n))
        for i in range(n):
            z[:, i], zc[:, i] = _regress(design, resid * dW[:, j, i] / delta)
        y_star = c_fit + DRIVER_SIGN * driver_f(vsm, X[:, j], z) * delta
        if lam > 0.0:
            neg = y_star < 0.0
            y_new = np.where(neg, y_star / (1.0 + lam * delta), y_star)
            dk = lam * delta * np.maximum(-y_new, 0.0)
            k_inc[j] = float(dk.mean())
            compl += float((y_new * dk).mean())
            y = y_new
        else:
            y = y_star
        y_coeffs.append(c_coef)
        z_coeffs.append(zc)


def solve_bsde(vsm: VsmParams, horizon: float, x0, cfg: BsdeConfig) -> BsdeSolution:
    """Backward regression solve on Bessel-engine forward paths.

    Terminal condition is the constant 1 at calendar time ``horizon``; each
    step regresses the one-step conditional expectation and the martingale
    increment, then applies the driver with DRIVER_SIGN. Desk scale only
    (n <= 3). See the module docstring for what the returned value means.
    """
    if vsm.n > 3:
        raise DomainError(f"backward solver is desk scale, n <= 3 required, got n={vsm.n}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (vsm.n,) or np.any(x0 <= 0.0):
        raise DomainError(f"x0 must be a strictly positive {vsm.n}-vector")
    if not (horizon > 0.0):
        raise DomainError(f"horizon must be positive, got {horizon}")
    X, dW = _forward_paths(vsm, horizon, x0, cfg)
    delta = horizon / cfg.n_time_steps
    y0, se, yc, zc, k_inc, compl = _backward(vsm, X, dW, delta, cfg, lam=0.0)
    k_trace = np.concatenate([[0.0], np.cumsum(k_inc)])
    return BsdeSolution(y0=y0, std_error=se, y_coeffs=yc, z_coeffs=zc,
                        k_trace=k_trace, complementarity=compl)


def solve_reflected(vsm: VsmParams, horizon: float, x0, cfg: BsdeConfig) -> BsdeSolution:
    """Penalized solve of the reflected problem with obstacle S = 0.

    For each lambda in the ladder the driver gains lambda * (Y)^- (applied
    implicitly, so large lambda stays stable) on the same forward paths;
    the reported solution is the largest-lambda run and ``ladder`` records
    every (lambda, y0). Emits NonMonotoneLadderWarning when the y0 sequence
    decreases by more than twice its standard error (diagnostic only).
    """
    if vsm.n > 3:
        raise DomainError(f"backward solver is desk scale, n <= 3 required, got n={vsm.n}")
    if not cfg.penalization:
        raise DomainError("penalization ladder must not be empty")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (vsm.n,) or np.any(x0 <= 0.0):
        raise DomainError(f"x0 must be a strictly positive {vsm.n}-vector")
    X, dW = _forward_paths(vsm, horizon, x0, cfg)
    delta = horizon / cfg.n_time_steps
    ladder = []
    final = None
    for lam in cfg.penalization:
        y0, se, yc, zc, k_inc, compl = _backward(vsm, X, dW, delta, cfg, lam=lam)
        ladder.append((lam, y0, se))
        final = (y0, se, yc, zc, k_inc, compl)
    values = [v for _, v, _ in ladder]
    ses = final[1]
    drops = [a - b for a, b in zip(values, values[1:]) if a - b > 2.0 * ses]
    if drops:
        warnings.warn(
            f"penalized y0 ladder decreased by up to {max(drops):.3e}",
            NonMonotoneLadderWarning,
            stacklevel=2,
        )
    y0, se, yc, zc, k_inc, compl = final
    k_trace = np.concatenate([[0.0], np.cumsum(k_inc)])
    return BsdeSolution(y0=y0, std_error=se, y_coeffs=yc, z_coeffs=zc,
                        k_trace=k_trace, complementarity=compl, ladder=tuple(ladder))
