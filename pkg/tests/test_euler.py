"""Euler instability baseline and the boundary-hitting certificate."""

import numpy as np
import pytest

from optarb import (
    DomainError,
    SimConfig,
    VsmParams,
    auxiliary_boundary_experiment,
    euler_vsm_paths,
    substream,
)
from optarb.euler import bessel_failure_report
from optarb.streams import DOMAIN_EULER


class _ZeroRng:
    def standard_normal(self, size=None):
        return 0.0 if size is None else np.zeros(size)


VSM2 = VsmParams(n=2, kappa=1.0, x0=(1.0, 1.0))


def _cfg(**kw):
    base = dict(horizon=1.0, n_steps=100, n_paths=1000, seed=13)
    base.update(kw)
    return SimConfig(**base)


class TestEulerVsm:
    def test_zero_noise_closed_form(self):
        # symmetric start: X = 2 X_i, so X_i(k+1) = X_i(k) (1 + 2 dt)
        cfg = _cfg(n_paths=3, n_steps=10)
        batch, report = euler_vsm_paths(VSM2, cfg, rng=_ZeroRng(), per_path_streams=False)
        expected = (1.0 + 2.0 * cfg.dt) ** np.arange(11)
        np.testing.assert_allclose(batch.values[0, :, 0], expected, rtol=1e-12)
        assert report.n_failed == 0

    def test_two_stock_failures_exceed_bessel(self):
        cfg = _cfg()
        _, euler_report = euler_vsm_paths(VSM2, cfg)
        bessel_report, truncated = bessel_failure_report(VSM2, cfg)
        assert bessel_report.failure_fraction == 0.0  # structural positivity
        assert truncated == 0
        assert euler_report.failure_fraction > bessel_report.failure_fraction

    def test_eight_stocks_fail_more_than_two(self):
        cfg = _cfg()
        _, rep2 = euler_vsm_paths(VSM2, cfg)
        vsm8 = VsmParams(n=8, kappa=1.0, x0=tuple([1.0] * 8))
        _, rep8 = euler_vsm_paths(vsm8, cfg)
        assert rep8.failure_fraction > rep2.failure_fraction

    def test_paired_streams_match_draw_for_draw(self):
        # euler path p and the bessel comparison path p read the same stream
        cfg = _cfg(n_paths=4)
        a = substream(cfg.seed, DOMAIN_EULER, 2).standard_normal(8)
        b = substream(cfg.seed, DOMAIN_EULER, 2).standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_failed_paths_frozen_and_batch_stays_positive(self):
        cfg = _cfg(n_paths=2000, seed=5)
        batch, report = euler_vsm_paths(VSM2, cfg)
        assert report.n_failed > 0
        assert (batch.values > 0.0).all()
        failed = ~np.isnan(report.first_hit_times)
        p = int(np.flatnonzero(failed)[0])
        k_hit = int(round(report.first_hit_times[p] / cfg.dt))
        # frozen after the failure step, at the last pre-failure state
        tail = batch.values[p, k_hit:]
        np.testing.assert_array_equal(tail, np.tile(tail[0], (tail.shape[0], 1)))

    def test_hit_fraction_monotone_in_floor(self):
        cfg = _cfg(n_paths=500)
        _, loose = euler_vsm_paths(VSM2, cfg, eps_floor=1e-2)
        _, tight = euler_vsm_paths(VSM2, cfg, eps_floor=1e-12)
        assert loose.failure_fraction >= tight.failure_fraction


class TestBoundaryExperiment:
    def test_zero_noise_never_hits(self):
        report, _ = auxiliary_boundary_experiment(2, (1.0, 1.0), 1.0, 0.01, 50, _ZeroRng())
        assert report.fraction_hit == 0.0

    def test_single_step_cannot_cross_from_unit_start(self):
        report, _ = auxiliary_boundary_experiment(
            2, (1.0, 1.0), 0.001, 0.001, 2000, substream(13, 4, 0)
        )
        assert report.fraction_hit == 0.0

    def test_hits_with_confidence_away_from_zero(self):
        report, _ = auxiliary_boundary_experiment(
            2, (1.0, 1.0), 1.0, 1e-3, 2000, substream(13, 4, 1)
        )
        lo, hi = report.ci99()
        assert lo > 0.0

    def test_absorbed_paths_frozen(self):
        report, recorded = auxiliary_boundary_experiment(
            2, (1.0, 1.0), 1.0, 1e-3, 200, substream(13, 4, 2), record_paths=200
        )
        times, values = recorded
        hit_ids = np.flatnonzero(report.hit_mask)
        assert hit_ids.size > 0
        p = int(hit_ids[0])
        k_hit = int(round(report.hit_times[p] / 1e-3))
        tail = values[p, k_hit:]
        np.testing.assert_array_equal(tail, np.tile(tail[0], (tail.shape[0], 1)))

    def test_invalid_inputs_rejected(self):
        with pytest.raises(DomainError):
            auxiliary_boundary_experiment(2, (1.0, -1.0), 1.0, 1e-3, 10, substream(0, 0))
        with pytest.raises(DomainError):
            auxiliary_boundary_experiment(2, (1.0, 1.0), 1.0, 2.0, 10, substream(0, 0))
