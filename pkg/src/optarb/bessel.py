"""Squared Bessel processes and Bessel bridges.

A squared Bessel process of dimension m started at x solves

    dQ_t = m dt + 2 sqrt(Q_t) dW_t,    Q_0 = x >= 0.

Two samplers are provided. The sum-of-squares recursion embeds the start
in the first of m accumulated Brownian coordinates,

    Q_t = (sqrt(x) + W^1_t)^2 + (W^2_t)^2 + ... + (W^m_t)^2,

which is nonnegative by construction and requires integer m. The exact
transition sampler draws Q_{t+dt} | Q_t = q from its noncentral
chi-square law, dt * chi2'(m, q/dt), and supports any real m > 0.

Bessel bridges are built from scalar Brownian bridges as

    R_b(t) = (H^1_t^2 + ... + H^m_t^2)^(1/2),

with the endpoint vectors placed on the first coordinate axis
(a*e1 -> b*e1). Endpoint pinning is exact, not approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .params import Scheme

__all__ = [
    "SquaredBesselSpec",
    "BridgeSpec",
    "besq_increment_sum_of_squares",
    "besq_exact_transition",
    "besq_literal_single_sum",
    "brownian_bridge_path",
    "bessel_bridge_path",
]


def _check_integer_dim(m: float) -> int:
    if m <= 0 or m != int(m):
        raise DomainError(
            f"the sum-of-squares construction needs a positive integer dimension, got m={m}"
        )
    return int(m)


@dataclass(frozen=True)
class SquaredBesselSpec:
    """Dimension, start value and propagation scheme of one squared Bessel process."""

    dim: float
    start: float
    scheme: Scheme = Scheme.SUM_OF_SQUARES

    def __post_init__(self):
        if not (self.dim > 0.0 and math.isfinite(self.dim)):
            raise DomainError(f"dimension must be positive, got m={self.dim}")
        if not (self.start >= 0.0 and math.isfinite(self.start)):
            raise DomainError(f"start must be nonnegative, got x={self.start}")


@dataclass(frozen=True)
class BridgeSpec:
    """A Bessel bridge from a > 0 to b > 0 over ``duration`` sampled with ``step``."""

    dim: float
    start: float
    end: float
    duration: float
    step: float

    def __post_init__(self):
        if not (self.dim > 0.0):
            raise DomainError(f"dimension must be positive, got m={self.dim}")
        if not (self.start > 0.0 and self.end > 0.0):
            raise DomainError(
                f"bridge endpoints must be strictly positive, got a={self.start}, b={self.end}"
            )
        if not (self.duration > 0.0):
            raise DomainError(f"duration must be positive, got {self.duration}")
        if not (0.0 < self.step <= self.duration):
            raise DomainError(f"step must lie in (0, duration={self.duration}], got {self.step}")


def besq_increment_sum_of_squares(
    spec: SquaredBesselSpec, prev_w: np.ndarray, dw: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Advance the sum-of-squares construction by one Brownian increment.

    ``prev_w`` holds the accumulated Brownian values of the m coordinates
    (last axis); ``dw`` the Gaussian increments for this step. Returns the
    new squared Bessel value(s) and the updated accumulator. Vectorized
    over any leading axes.
    """
    m = _check_integer_dim(spec.dim)
    prev_w = np.asarray(prev_w, dtype=float)
    dw = np.asarray(dw, dtype=float)
    if prev_w.shape[-1] != m or dw.shape[-1] != m:
        raise DomainError(f"need m={m} Brownian coordinates, got {prev_w.shape[-1]}")
    new_w = prev_w + dw
    shifted = new_w.copy()
    shifted[..., 0] += math.sqrt(spec.start)
    new_q = np.einsum("...j,...j->...", shifted, shifted)
    return new_q, new_w


def besq_exact_transition(spec: SquaredBesselSpec, q, dt: float, rng: np.random.Generator):
    """Draw Q_{t+dt} | Q_t = q exactly from dt * noncentral-chi2(m, q/dt).

    The transition's mean is q + m*dt and its variance 2*m*dt^2 + 4*dt*q.
    Works for any real dimension m > 0 and vectorizes over ``q``.
    """
    if not (dt > 0.0):
        raise DomainError(f"dt must be positive, got {dt}")
    q = np.asarray(q, dtype=float)
    if np.any(q < 0.0):
        raise DomainError("squared Bessel states must be nonnegative")
    return dt * rng.noncentral_chisquare(spec.dim, q / dt, size=q.shape if q.shape else None)


def besq_literal_single_sum(start: float, w_sum) -> np.ndarray:
    """Comparison-only variant adding the square of a single Brownian sum.

    This is the literal one-accumulator recursion Q_k = Q_0 + (sum dW)^2.
    Its mean grows like start + t instead of start + m*t, so it does not
    reproduce the m-dimensional squared Bessel law; it is exposed only so
    the discrepancy can be demonstrated. Do not use it in estimators.
    """
    if start < 0.0:
        raise DomainError(f"start must be nonnegative, got {start}")
    w_sum = np.asarray(w_sum, dtype=float)
    return start + w_sum**2


def brownian_bridge_path(
    a: float, b: float, duration: float, step: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample a scalar Brownian bridge from a to b on {0, step, ..., duration}.

    A final partial step is used when ``step`` does not divide ``duration``.
    Returns ``(times, values)`` with values[0] == a and values[-1] == b
    exactly. Interior points follow the sequential conditional law

        H(t+d) | H(t)=h, H(T)=b  ~  N(h + (b-h) d/tau, d (tau-d)/tau),

    where tau is the time remaining to the right endpoint.
    """
    if not (duration > 0.0):
        raise DomainError(f"duration must be positive, got {duration}")
    if not (0.0 < step <= duration):
        raise DomainError(f"step={step} must lie in (0, duration={duration}]")
    n_full = int(duration / step)
    times = [k * step for k in range(n_full + 1)]
    if times[-1] < duration:
        times.append(duration)
    else:
        times[-1] = duration
    times = np.asarray(times)
    values = np.empty_like(times)
    values[0] = a
    h = float(a)
    for k in range(1, len(times)):
        if k == len(times) - 1:
            values[k] = b  # exact pin
            break
        d = times[k] - times[k - 1]
        tau = duration - times[k - 1]
        mean = h + (b - h) * d / tau
        var = d * (tau - d) / tau
        h = mean + math.sqrt(var) * rng.standard_normal()
        values[k] = h
    return times, values


def bessel_bridge_path(
    spec: BridgeSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample a Bessel bridge path as the norm of m scalar Brownian bridges.

    The first coordinate bridges a -> b, the remaining m-1 bridge 0 -> 0,
    so R(0) = a and R(duration) = b exactly on every path.
    """
    m = _check_integer_dim(spec.dim)
    times, h1 = brownian_bridge_path(spec.start, spec.end, spec.duration, spec.step, rng)
    sq = h1**2
    for _ in range(m - 1):
        _, h = brownian_bridge_path(0.0, 0.0, spec.duration, spec.step, rng)
        sq = sq + h**2
    values = np.sqrt(sq)
    values[0] = spec.start
    values[-1] = spec.end
    return times, values


def bridge_square_at(
    a: np.ndarray,
    b: np.ndarray,
    t_eval: np.ndarray,
    duration: np.ndarray,
    step: float,
    m: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Squared Bessel-bridge values at one interior time, vectorized over paths.

    Each row bridges a[p]*e1 -> b[p]*e1 over duration[p] and is advanced by
    conditional Gaussian steps of size ``step`` (clipped per path so the
    evaluation time lies on the grid) until t_eval[p]. Returns R(t_eval)^2.
    Used by the batched terminal interpolation, where per-path durations
    differ; steps wider than a path's duration degenerate gracefully to a
    single conditional draw.
    """
    m = _check_integer_dim(m)
    a = np.asarray(a, dtype=float).ravel()
    P = a.size
    b = np.asarray(b, dtype=float).ravel()
    t_eval = np.asarray(t_eval, dtype=float).ravel()
    duration = np.asarray(duration, dtype=float).ravel()
    if np.any((t_eval < 0) | (t_eval > duration)):
        raise DomainError("evaluation time must lie inside the bridge interval")

    h = np.zeros((P, m))
    h[:, 0] = a
    target = np.zeros((P, m))
    target[:, 0] = b
    t_cur = np.zeros(P)
    tau = duration.copy()
    at_end = t_eval >= duration
    while True:
        remaining = t_eval - t_cur
        active = remaining > 0.0
        if not active.any():
            break
        d = np.where(active, np.minimum(step, remaining), 0.0)
        frac = np.divide(d, tau, out=np.zeros_like(d), where=tau > 0)
        mean = h + (target - h) * frac[:, None]
        var = np.maximum(d * (tau - d), 0.0)
        sd = np.sqrt(np.divide(var, tau, out=np.zeros_like(var), where=tau > 0))
        noise = rng.standard_normal((P, m))
        h = np.where(active[:, None], mean + sd[:, None] * noise, h)
        t_cur = t_cur + d
        tau = tau - d
    q = (h**2).sum(axis=1)
    # paths evaluated exactly at an endpoint are pinned, not sampled
    q[at_end] = b[at_end] ** 2
    q[t_eval == 0.0] = a[t_eval == 0.0] ** 2
    return q
