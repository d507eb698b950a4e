"""Parameter types, validation, and the market price of risk."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optarb import (
    DomainError,
    Interpolation,
    MarketParams,
    PathBatch,
    SimConfig,
    SingularMatrix,
    UEstimate,
    VsmParams,
    market_price_of_risk,
    validate_vsm,
)


class TestVsmParams:
    def test_paper_example_m_equals_4(self):
        p = validate_vsm(VsmParams(n=2, kappa=1.0, x0=(1.0, 1.0)))
        assert p.bessel_dim == 4.0
        assert p.zeta == 1.0

    def test_kappa_below_range_rejected(self):
        with pytest.raises(DomainError, match="kappa"):
            validate_vsm(VsmParams(n=2, kappa=0.4, x0=(1.0, 1.0)))

    def test_single_stock_rejected(self):
        with pytest.raises(DomainError, match="n"):
            validate_vsm(VsmParams(n=1, kappa=1.0, x0=(1.0,)))

    def test_inconsistent_bessel_dim_rejected(self):
        bad = VsmParams(n=2, kappa=1.0, x0=(1.0, 1.0), bessel_dim=3.0)
        with pytest.raises(DomainError, match="bessel_dim"):
            validate_vsm(bad)

    def test_nonpositive_x0_rejected(self):
        with pytest.raises(DomainError, match="positive"):
            validate_vsm(VsmParams(n=2, kappa=1.0, x0=(1.0, 0.0)))

    def test_from_zeta_roundtrip(self):
        p = VsmParams.from_zeta(2, 0.5, (1.0, 2.0))
        assert p.kappa == 0.75
        assert p.zeta == 0.5

    @given(st.floats(min_value=0.5, max_value=1.0, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_dimension_identity_bit_for_bit(self, kappa):
        # m = 4*kappa and m = 2*(1+zeta) must agree exactly, not approximately
        p = VsmParams(n=2, kappa=kappa, x0=(1.0, 1.0))
        assert p.bessel_dim == 4.0 * kappa
        assert p.bessel_dim == 2.0 * (1.0 + p.zeta)
        validate_vsm(p)


class TestMarketPriceOfRisk:
    def test_identity_diffusion(self):
        mkt = MarketParams(n=2, drift=lambda x: np.array([1.0, 0.0]), diffusion=lambda x: np.eye(2))
        theta = market_price_of_risk(mkt, (1.0, 1.0))
        np.testing.assert_allclose(theta, [1.0, 0.0])

    @pytest.mark.parametrize(
        "x", [(1.0, 1.0), (2.0, 5.0), (0.3, 7.1), (4.0, 4.0, 4.0)]
    )
    def test_vsm_residual_vanishes(self, x):
        # derived check: sigma(x) theta must reproduce beta(x) by direct multiplication
        n = len(x)
        vsm = VsmParams(n=n, kappa=1.0, x0=tuple(x))
        mkt = MarketParams.from_vsm(vsm)
        xa = np.asarray(x)
        theta = market_price_of_risk(mkt, xa)
        sigma = mkt.diffusion(xa) / xa[:, None]
        beta = mkt.drift(xa) / xa
        assert np.max(np.abs(sigma @ theta - beta)) < 1e-12

    def test_zero_row_is_singular(self):
        s = np.array([[1.0, 0.0], [0.0, 0.0]])
        mkt = MarketParams(n=2, drift=lambda x: np.ones(2), diffusion=lambda x: s)
        with pytest.raises(SingularMatrix):
            market_price_of_risk(mkt, (1.0, 1.0))

    def test_nonpositive_state_rejected(self):
        mkt = MarketParams.from_vsm(VsmParams(n=2, kappa=1.0, x0=(1.0, 1.0)))
        with pytest.raises(DomainError):
            market_price_of_risk(mkt, (1.0, -1.0))


class TestSimConfig:
    def test_dt(self):
        assert SimConfig(horizon=1.0, n_steps=100, n_paths=10, seed=1).dt == 0.01

    def test_single_path_rejected(self):
        with pytest.raises(DomainError, match="n_paths"):
            SimConfig(horizon=1.0, n_steps=10, n_paths=1, seed=1)

    def test_bridge_step_coarser_than_dt_rejected(self):
        with pytest.raises(DomainError, match="bridge_step"):
            SimConfig(
                horizon=1.0,
                n_steps=100,
                n_paths=10,
                seed=1,
                interpolation=Interpolation.BESSEL_BRIDGE,
                bridge_step=0.02,
            )

    def test_bridge_needs_step(self):
        with pytest.raises(DomainError, match="bridge_step"):
            SimConfig(
                horizon=1.0,
                n_steps=100,
                n_paths=10,
                seed=1,
                interpolation=Interpolation.BESSEL_BRIDGE,
            )


class TestPathBatch:
    def _mk(self, values):
        times = np.arange(values.shape[1], dtype=float)
        keys = tuple((0, p) for p in range(values.shape[0]))
        return PathBatch(start_time=0.0, times=times, values=values, seed=0, stream_keys=keys)

    def test_accepts_positive(self):
        batch = self._mk(np.full((3, 4, 2), 0.5))
        assert batch.n_paths == 3 and batch.n == 2

    def test_rejects_nonpositive_instead_of_clamping(self):
        values = np.full((3, 4, 2), 0.5)
        values[1, 2, 0] = 0.0
        with pytest.raises(DomainError, match="positive"):
            self._mk(values)

    def test_rejects_start_time_mismatch(self):
        with pytest.raises(DomainError, match="start_time"):
            PathBatch(
                start_time=1.0,
                times=np.array([0.0, 1.0]),
                values=np.full((1, 2, 1), 1.0),
                seed=0,
                stream_keys=((0, 0),),
            )


class TestUEstimate:
    def test_negative_mean_rejected(self):
        with pytest.raises(DomainError):
            UEstimate(mean=-0.1, std_error=0.0, n_paths=2, t_remaining=1.0, state=(1.0,))

    def test_nan_marks_failure(self):
        e = UEstimate(mean=float("nan"), std_error=float("nan"), n_paths=2, t_remaining=1.0, state=(1.0,))
        assert e.failed
