"""Stochastic clock, horizon stopping, and terminal interpolation."""

import numpy as np
import pytest

from optarb import (
    BudgetExceeded,
    ClockMap,
    DomainError,
    Interpolation,
    Scheme,
    SimConfig,
    VsmParams,
    advance_clock,
    clock_roundtrip_times,
    interp_state_at,
    interpolate_bridge,
    interpolate_linear,
    run_until_horizon,
    simulate_terminal,
    substream,
)

VSM = VsmParams(n=2, kappa=1.0, x0=(1.0, 1.0))


def _cfg(**kw):
    base = dict(horizon=1.0, n_steps=100, n_paths=50, seed=7)
    base.update(kw)
    return SimConfig(**base)


class TestAdvanceClock:
    def test_constant_total_closed_form(self):
        clock = ClockMap.start(0.0)
        for _ in range(5):
            clock = advance_clock(clock, 8.0, 0.01)
        np.testing.assert_allclose(clock.theta_grid, 0.005 * np.arange(6))
        np.testing.assert_allclose(clock.t_grid, 0.01 * np.arange(6))

    def test_two_step_arithmetic(self):
        clock = ClockMap.start(0.0)
        clock = advance_clock(clock, 4.0, 0.01)
        clock = advance_clock(clock, 8.0, 0.01)
        np.testing.assert_allclose(clock.theta_grid, [0.0, 0.01, 0.015])
        np.testing.assert_allclose(clock.y_totals, [4.0, 8.0])

    def test_zero_total_rejected(self):
        with pytest.raises(DomainError):
            advance_clock(ClockMap.start(0.0), 0.0, 0.01)

    def test_clockmap_invariants_enforced(self):
        with pytest.raises(DomainError, match="increasing"):
            ClockMap(np.array([0.0, 0.01]), np.array([0.0, 0.0]), np.array([4.0]))
        with pytest.raises(DomainError, match="positive"):
            ClockMap(np.array([0.0, 0.01]), np.array([0.0, 0.01]), np.array([-1.0]))


class TestRunUntilHorizon:
    def test_zero_remaining_horizon(self):
        cfg = _cfg()
        y, clock = run_until_horizon(VSM, 1.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 0))
        assert y.shape == (cfg.n_paths, 1, 2)
        assert clock.theta.shape == (cfg.n_paths, 1)
        assert (clock.stop_idx == 0).all()

    def test_bracket_contains_horizon_on_every_path(self):
        cfg = _cfg()
        y, clock = run_until_horizon(VSM, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 1))
        rows = np.arange(cfg.n_paths)
        stop = clock.stop_idx
        assert (stop >= 1).all()
        assert (clock.theta[rows, stop] >= 1.0).all()
        assert (clock.theta[rows, stop - 1] <= 1.0).all()
        assert (y > 0.0).all()

    def test_left_endpoint_increment_rule(self):
        cfg = _cfg(n_paths=3)
        y, clock = run_until_horizon(VSM, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 2))
        cm = clock.path(0)
        expected = 4.0 * cfg.dt / cm.y_totals
        np.testing.assert_allclose(np.diff(cm.theta_grid), expected)
        np.testing.assert_allclose(cm.y_totals, y[0, : cm.n_cells].sum(axis=1))

    def test_roundtrip_forward_clock(self):
        # trapezoid Lambda over the reconstructed grid recovers the uniform mesh
        cfg = _cfg(n_paths=200)
        y, clock = run_until_horizon(VSM, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 3))
        tol = 5 * cfg.dt
        ok = 0
        for p in range(cfg.n_paths):
            k = clock.stop_idx[p]
            ytot = y[p, : k + 1].sum(axis=1)
            recovered = clock_roundtrip_times(clock.theta[p, : k + 1], ytot)
            target = clock.t_grid[: k + 1]
            ok += np.max(np.abs(recovered - target)) <= tol
        assert ok >= 0.99 * cfg.n_paths

    def test_budget_cap_raises(self):
        cfg = _cfg(max_steps=5)
        with pytest.raises(BudgetExceeded, match="5"):
            run_until_horizon(VSM, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 4))

    def test_budget_truncate_mode(self):
        cfg = _cfg(max_steps=5)
        y, clock = run_until_horizon(
            VSM, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 4), on_budget="truncate"
        )
        assert clock.truncated
        assert y.shape[1] == 6

    def test_nonpositive_state_rejected(self):
        with pytest.raises(DomainError):
            run_until_horizon(VSM, 0.0, np.array([1.0, 0.0]), _cfg(), substream(7, 8, 5))


class TestSimulateTerminal:
    def test_matches_contract_and_is_deterministic(self):
        cfg = _cfg(n_paths=300)
        t1 = simulate_terminal(VSM, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 6))
        t2 = simulate_terminal(VSM, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 6))
        np.testing.assert_array_equal(t1.y_left, t2.y_left)
        np.testing.assert_array_equal(t1.theta_right, t2.theta_right)
        assert (t1.theta_left <= 1.0).all() and (t1.theta_right >= 1.0).all()
        assert (t1.y_left > 0).all() and (t1.y_right > 0).all()

    def test_constant_integrand_accumulates_cell_widths_exactly(self):
        # trapezoid of a constant integrand over [start, theta_left] must give
        # exactly c * (theta_left - start), whatever the paths did
        cfg = _cfg(n_paths=50)
        c = 3.7
        term = simulate_terminal(
            VSM, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 7),
            integrand=lambda y: np.full(y.shape[:-1], c),
        )
        np.testing.assert_allclose(term.integral_left, c * term.theta_left, rtol=1e-12)

    def test_streaming_integral_agrees_with_storage_statistically(self):
        # same trapezoid computed from fully stored paths, independent draws
        cfg = _cfg(n_paths=400)

        def g(y):
            return y.sum(axis=-1) * (1.0 / y).sum(axis=-1) / 8.0

        term = simulate_terminal(
            VSM, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 7), integrand=g
        )
        y, clock = run_until_horizon(VSM, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 17))
        stored = np.empty(cfg.n_paths)
        for p in range(cfg.n_paths):
            k = clock.stop_idx[p]
            th = clock.theta[p, : k + 1]
            gv = g(y[p, : k + 1])
            stored[p] = np.sum(np.diff(th[:k]) * 0.5 * (gv[: k - 1] + gv[1:k])) if k > 1 else 0.0
        se = np.hypot(
            term.integral_left.std(ddof=1), stored.std(ddof=1)
        ) / np.sqrt(cfg.n_paths)
        assert abs(term.integral_left.mean() - stored.mean()) < 3 * se

    def test_exact_transition_scheme(self):
        vsm = VsmParams.from_zeta(2, 0.3, (1.0, 1.0))  # m = 2.6
        cfg = _cfg(n_paths=100, n_steps=20, scheme=Scheme.EXACT_TRANSITION)
        term = simulate_terminal(vsm, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 8))
        assert (term.theta_right >= 1.0).all()
        assert (term.y_left > 0).all()

    def test_sum_of_squares_rejected_for_fractional_dim(self):
        vsm = VsmParams.from_zeta(2, 0.3, (1.0, 1.0))
        cfg = _cfg(scheme=Scheme.SUM_OF_SQUARES)
        with pytest.raises(DomainError, match="integer"):
            simulate_terminal(vsm, 0.0, np.array([1.0, 1.0]), cfg, substream(7, 8, 9))


class TestInterpolation:
    def _small_clock(self):
        clock = ClockMap.start(0.0)
        clock = advance_clock(clock, 4.0, 0.01)
        clock = advance_clock(clock, 8.0, 0.01)
        y_path = np.array([[1.0, 3.0], [2.0, 2.0], [2.0, 4.0]])
        return clock, y_path  # last cell [0.01, 0.015]

    def test_linear_left_endpoint_exact(self):
        clock, y = self._small_clock()
        np.testing.assert_array_equal(interpolate_linear(clock, y, 0.01), y[-2])

    def test_linear_right_endpoint_exact(self):
        clock, y = self._small_clock()
        np.testing.assert_array_equal(interpolate_linear(clock, y, 0.015), y[-1])

    def test_linear_midpoint_convex(self):
        clock, y = self._small_clock()
        np.testing.assert_allclose(interpolate_linear(clock, y, 0.0125), [2.0, 3.0])

    def test_linear_outside_cell_rejected(self):
        clock, y = self._small_clock()
        with pytest.raises(DomainError, match="outside"):
            interpolate_linear(clock, y, 0.005)

    def test_bridge_left_endpoint_exact(self):
        clock, y = self._small_clock()
        got = interpolate_bridge(clock, y, 0.01, VSM, 1e-4, substream(7, 8, 10))
        np.testing.assert_array_equal(got, y[-2])

    def test_bridge_interior_positive(self):
        clock, y = self._small_clock()
        got = interpolate_bridge(clock, y, 0.0125, VSM, 1e-4, substream(7, 8, 11))
        assert got.shape == (2,) and (got > 0).all()

    def test_bridge_step_too_coarse_rejected(self):
        clock, y = self._small_clock()
        with pytest.raises(DomainError, match="wider"):
            interpolate_bridge(clock, y, 0.0125, VSM, 0.02, substream(7, 8, 12))

    def test_interp_state_at_grid_points(self):
        clock, y = self._small_clock()
        np.testing.assert_array_equal(interp_state_at(clock.theta_grid, y, 0.0), y[0])
        np.testing.assert_array_equal(interp_state_at(clock.theta_grid, y, 0.015), y[2])
        np.testing.assert_allclose(interp_state_at(clock.theta_grid, y, 0.005), [1.5, 2.5])
