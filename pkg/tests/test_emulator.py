import numpy as np
import pytest

from tallyopt.emulator import cost_of, sample_tally, sample_tally_array, simulate_converter, simulate_moderator
from tallyopt.errors import ConfigError
from tallyopt.problems import ConverterPoint, ModeratorPoint, converter_truth, moderator_truth
from tallyopt.rng import derive_rng


class TestSampleTally:
    def test_vanishing_noise(self, rng):
        assert sample_tally(10.0, 1e-12, rng) == pytest.approx(10.0, abs=1e-9)

    def test_zero_tally(self, rng):
        assert sample_tally(0.0, 0.5, rng) == 0.0

    def test_zero_tally_consumes_a_draw(self):
        a, b = np.random.default_rng(3), np.random.default_rng(3)
        sample_tally(0.0, 0.1, a)
        b.standard_normal()
        assert a.random() == b.random()

    @pytest.mark.parametrize("u", [0.0, -0.1, 1.0, 2.0])
    def test_bad_uncertainty(self, rng, u):
        with pytest.raises(ConfigError):
            sample_tally(1.0, u, rng)

    def test_floor_keeps_estimates_positive(self):
        z = np.array([-50.0, -5.0, 0.0])
        out = sample_tally_array(np.ones(3), 0.5, z)
        assert out[0] == 1e-6 and out[1] == 1e-6 and out[2] == 1.0

    def test_statistics(self):
        rng = derive_rng(0, "noise-test")
        draws = np.array([sample_tally(1.0, 0.05, rng) for _ in range(100_000)])
        assert abs(draws.mean() - 1.0) <= 5e-4
        assert 0.049 <= draws.std(ddof=1) <= 0.051

    def test_array_matches_scalar(self):
        t = np.linspace(0.5, 3, 50)
        scalar = [sample_tally(ti, 0.1, np.random.default_rng(i)) for i, ti in enumerate(t)]
        z = np.array([np.random.default_rng(i).standard_normal() for i in range(50)])
        np.testing.assert_array_equal(sample_tally_array(t, 0.1, z), scalar)


class TestCost:
    def test_reference_point(self):
        assert cost_of(0.01) == 1.0

    def test_quadratic_law(self):
        assert cost_of(0.10) == pytest.approx(0.01, rel=1e-15)
        assert cost_of(0.002) == pytest.approx(25.0, rel=1e-15)

    def test_monotone(self):
        us = np.linspace(0.002, 0.5, 40)
        assert np.all(np.diff([cost_of(u) for u in us]) < 0)


class TestSimulateModerator:
    p = ModeratorPoint(0.045, 1.5)

    def test_vanishing_noise(self):
        ev = simulate_moderator(self.p, 1e-12, derive_rng(0, "m"))
        truth = moderator_truth(self.p)
        assert ev.values.f1 == pytest.approx(truth.f1, rel=1e-9)
        assert ev.values.f2 == pytest.approx(truth.f2, rel=1e-9)

    def test_deterministic(self):
        a = simulate_moderator(self.p, 0.05, derive_rng(7, "m"))
        b = simulate_moderator(self.p, 0.05, derive_rng(7, "m"))
        assert a == b

    def test_relative_std_per_tally(self):
        rng = derive_rng(11, "moderator-stats")
        truth = moderator_truth(self.p)
        vals = np.array([[e.values.f1, e.values.f2] for e in
                         (simulate_moderator(self.p, 0.10, rng) for _ in range(10_000))])
        rel = vals.std(axis=0, ddof=1) / np.array([truth.f1, truth.f2])
        assert 0.098 <= rel[0] <= 0.102
        assert 0.0588 <= rel[1] <= 0.0612

    def test_cost(self):
        assert simulate_moderator(self.p, 0.05, derive_rng(0, "m")).cost_units == cost_of(0.05)


class TestSimulateConverter:
    p = ConverterPoint(1, 0, 1.0, 0.6)

    def test_vanishing_noise(self):
        ev = simulate_converter(self.p, 1e-12, derive_rng(0, "c"))
        truth = converter_truth(self.p)
        assert ev.values.f1 == pytest.approx(truth.f1, rel=1e-9)
        assert ev.values.f2 == pytest.approx(truth.f2, rel=1e-9)

    def test_twice_the_moderator_cost(self):
        for u in (0.05, 0.01, 0.002):
            assert simulate_converter(self.p, u, derive_rng(0, "c")).cost_units == 2 * cost_of(u)

    def test_deterministic(self):
        a = simulate_converter(self.p, 0.05, derive_rng(3, "c"))
        b = simulate_converter(self.p, 0.05, derive_rng(3, "c"))
        assert a == b

    def test_cosine_stays_in_unit_interval(self):
        rng = derive_rng(5, "c")
        for _ in range(500):
            assert 0.0 <= simulate_converter(self.p, 0.5, rng).values.f2 <= 1.0
