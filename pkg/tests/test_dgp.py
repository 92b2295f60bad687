import time

import numpy as np
import pytest

from tarmatest.dgp import (
    LINEAR_DGPS,
    NAMED_DGPS,
    ArmaSpec,
    LocalAltSpec,
    RngStream,
    TarmaSpec,
    TimeSeries,
    simulate_arma,
    simulate_local_alternative,
    simulate_named_dgp,
    simulate_tarma,
)
from tarmatest.errors import ValidationError


class TestArmaSpec:
    def test_orders_and_zeta(self):
        s = ArmaSpec([0.1, 0.5, -0.2], [0.3], 2.0)
        assert (s.p, s.q) == (2, 1)
        np.testing.assert_array_equal(s.zeta, [0.1, 0.5, -0.2, 0.3])
        assert ArmaSpec.from_zeta(s.zeta, 2, 1, 2.0) == s

    @pytest.mark.parametrize(
        "phi, theta",
        [
            ([0.0, 1.0], []),  # unit root
            ([0.0, 1.2], []),
            ([0.0], [1.0]),  # non-invertible
            ([0.0, 0.5], [0.5]),  # common root
        ],
    )
    def test_invalid_specs(self, phi, theta):
        with pytest.raises(ValidationError):
            ArmaSpec(phi, theta).validate()

    def test_nonpositive_variance(self):
        with pytest.raises(ValidationError):
            ArmaSpec([0.0], [], 0.0).validate()

    def test_ar21_roots_pass(self):
        # 1 - 0.75 z + 0.125 z^2 has roots 2 and 4
        np.testing.assert_allclose(sorted(np.roots([0.125, -0.75, 1.0]).real), [2.0, 4.0])
        LINEAR_DGPS["AR2.1"].validate()

    def test_dict_round_trip(self):
        s = ArmaSpec([1.0, 0.76], [-0.6], 0.1)
        assert ArmaSpec.from_dict(s.to_dict()) == s


class TestTimeSeries:
    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            TimeSeries([1.0, np.nan])
        with pytest.raises(ValidationError):
            TimeSeries([])

    def test_array_protocol(self):
        ts = TimeSeries([1.0, 2.0])
        assert ts.n == 2
        np.testing.assert_array_equal(np.asarray(ts), [1.0, 2.0])


class TestSimulateArma:
    def test_white_noise_identity(self):
        e = np.array([0.3, -1.2, 2.0])
        x = simulate_arma(ArmaSpec([0.0]), 3, 0, innovations=e)
        np.testing.assert_array_equal(x.values, e)

    def test_ar1_hand_recursion(self):
        x = simulate_arma(ArmaSpec([0.0, 0.5]), 3, 0, innovations=np.ones(3))
        np.testing.assert_allclose(x.values, [1.0, 1.5, 1.75])

    def test_burn_in_discarded(self):
        e = np.arange(1.0, 6.0)
        full = simulate_arma(ArmaSpec([0.0, 0.5]), 5, 0, innovations=e).values
        tail = simulate_arma(ArmaSpec([0.0, 0.5]), 3, 2, innovations=e).values
        np.testing.assert_array_equal(tail, full[2:])

    def test_lag_one_autocorrelation(self):
        phi, theta = 0.3, 0.4
        x = simulate_arma(ArmaSpec([0.0, phi], [theta]), 100_000, 200, RngStream(2024)).values
        x = x - x.mean()
        rho1 = np.dot(x[1:], x[:-1]) / np.dot(x, x)
        expected = (phi - theta) * (1 - phi * theta) / (1 + theta**2 - 2 * phi * theta)
        assert abs(rho1 - expected) < 0.01

    def test_reproducible(self):
        s = ArmaSpec([0.2, 0.3], [0.2])
        a = simulate_arma(s, 500, 100, RngStream(9, 4)).values
        b = simulate_arma(s, 500, 100, RngStream(9, 4)).values
        c = simulate_arma(s, 500, 100, RngStream(9, 5)).values
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_substreams_differ(self):
        g0 = RngStream(1, 1).generator(0).standard_normal(5)
        g1 = RngStream(1, 1).generator(1).standard_normal(5)
        assert not np.array_equal(g0, g1)

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValidationError):
            simulate_arma(ArmaSpec([0.0, 1.5]), 10, 0, RngStream(1))

    def test_million_draws_fast(self):
        s = ArmaSpec([0.0, 0.3], [0.2])
        simulate_arma(s, 10, 0, RngStream(1))
        start = time.perf_counter()
        x = simulate_arma(s, 1_000_000, 200, RngStream(1))
        assert time.perf_counter() - start < 1.0
        assert x.n == 1_000_000


class TestSimulateTarma:
    def test_zero_psi_collapses_to_arma(self):
        base = ArmaSpec([0.1, 0.4], [-0.3])
        for psi_ma in (False, True):
            psi = np.zeros(3 if psi_ma else 2)
            t = simulate_tarma(TarmaSpec(base, psi, 0.0, 1, psi_ma), 300, 50, RngStream(3, 1)).values
            a = simulate_arma(base, 300, 50, RngStream(3, 1)).values
            np.testing.assert_array_equal(t, a)

    def test_hand_recursion(self):
        spec = TarmaSpec(ArmaSpec([0.0]), [1.0], r=0.0, d=1)
        x = simulate_tarma(spec, 2, 0, innovations=[1.0, -1.0]).values
        np.testing.assert_array_equal(x, [1.0, -1.0])

    def test_threshold_active_in_both_regimes(self):
        base = ArmaSpec([-0.5, -0.2], [-0.4])
        x = simulate_tarma(TarmaSpec(base, [0.7, 1.0], 0.0, 1), 500, 200, RngStream(12)).values
        frac = np.mean(x[:-1] <= 0)
        assert 0 < frac < 1

    def test_psi_length_checked(self):
        with pytest.raises(ValidationError):
            TarmaSpec(ArmaSpec([0.0, 0.3]), [0.1, 0.2, 0.3]).validate()

    def test_lower_regime_must_be_stationary(self):
        with pytest.raises(ValidationError):
            TarmaSpec(ArmaSpec([0.0, 0.5]), [0.0, 0.7]).validate()


class TestLocalAlternative:
    def test_zero_h_collapses(self):
        base = ArmaSpec([0.0, 0.3], [0.2])
        la = LocalAltSpec(base, np.zeros(3), 0.0, 1, 200)
        a = simulate_local_alternative(la, 50, RngStream(5)).values
        b = simulate_arma(base, 200, 50, RngStream(5)).values
        np.testing.assert_array_equal(a, b)

    def test_scaling(self):
        base = ArmaSpec([0.0, 0.3], [0.2])
        la = LocalAltSpec(base, [1.0, 1.0, 1.0], 0.0, 1, 100)
        assert la.as_tarma().psi[0] == pytest.approx(0.1)
        big = LocalAltSpec(base, [2.0, 0.0, 0.0], 0.0, 1, 10_000)
        assert big.as_tarma().psi[0] == 2.0 / np.sqrt(10_000)

    def test_h_length_checked(self):
        with pytest.raises(ValidationError):
            LocalAltSpec(ArmaSpec([0.0, 0.3], [0.2]), [1.0], 0.0, 1, 100).validate()


class TestNamedDgps:
    def test_registry(self):
        assert len(NAMED_DGPS) == 16
        with pytest.raises(ValidationError):
            simulate_named_dgp("NOPE", 10, 0, RngStream(1))

    def test_logistic_map(self):
        x = simulate_named_dgp("NLAR", 3, 0, x0=0.5).values
        np.testing.assert_array_equal(x, [1.0, 0.0, 0.0])

    def test_ma2_hand_recursion(self):
        x = simulate_named_dgp("MA2", 3, 0, innovations=[1.0, 0.0, 0.0]).values
        np.testing.assert_allclose(x, [1.0, 0.7, -0.125])

    @pytest.mark.parametrize("name", NAMED_DGPS)
    def test_finite_and_reproducible(self, name):
        a = simulate_named_dgp(name, 10_000, 200, RngStream(77, 1)).values
        b = simulate_named_dgp(name, 10_000, 200, RngStream(77, 1)).values
        assert np.all(np.isfinite(a))
        np.testing.assert_array_equal(a, b)

    def test_nlar_initial_value_in_unit_interval(self):
        x = simulate_named_dgp("NLAR", 50, 0, RngStream(3)).values
        assert np.all((x >= 0) & (x <= 1))
