import numpy as np
import pytest

from perfmix.cdf import BoundPair, SteppedCDF, invert, repair_envelopes
from perfmix.errors import NumericalDegeneracyError


def linear_scan(values, u):
    for k, v in enumerate(values, start=1):
        if v >= u:
            return k
    return len(values)


def test_inversion_takes_the_infimum_at_equality():
    assert invert(SteppedCDF([0.5, 1.0]), 0.5) == 1
    assert invert(SteppedCDF([0.5, 1.0]), 0.5000001) == 2


def test_point_mass_inverts_to_its_label():
    for u in (1e-12, 0.3, 1 - 1e-12):
        assert invert(SteppedCDF([1.0]), u) == 1
        assert SteppedCDF.point_mass(3, 5).invert(u) == 3


def test_inversion_matches_linear_scan(rng):
    for _ in range(2000):
        size = int(rng.integers(1, 8))
        w = rng.exponential(size=size) * (rng.random(size) < 0.7)
        w[rng.integers(size)] += 0.1
        F = SteppedCDF.from_weights(w)
        u = rng.random()
        assert invert(F, u) == linear_scan(F.values, u)


def test_log_weights_are_shift_invariant(rng):
    lw = rng.normal(size=6) * 50
    a = SteppedCDF.from_log_weights(lw)
    b = SteppedCDF.from_log_weights(lw + 1234.5)
    assert np.allclose(a.values, b.values, atol=1e-15, rtol=0)
    assert a.is_valid()


def test_degenerate_weights_raise():
    with pytest.raises(NumericalDegeneracyError):
        SteppedCDF.from_log_weights([-np.inf, -np.inf])
    with pytest.raises(NumericalDegeneracyError):
        SteppedCDF.from_weights([0.0, 0.0])


def test_validity_checks_monotonicity_and_terminal_value():
    assert SteppedCDF([0.2, 0.7, 1.0]).is_valid()
    assert not SteppedCDF([0.7, 0.2, 1.0]).is_valid()
    assert not SteppedCDF([0.2, 0.9]).is_valid()
    assert SteppedCDF([0.3, 1.0]).padded(4).values.tolist() == [0.3, 1.0, 1.0, 1.0]


def test_repair_only_loosens_and_restores_validity(rng):
    for _ in range(500):
        p = rng.integers(2, 7)
        lower_raw = np.append(rng.random(p - 1), 1.0)
        upper_raw = np.append(rng.random(p - 1), 1.0)
        pair = repair_envelopes(lower_raw, upper_raw)
        assert pair.is_valid()
        assert np.all(pair.lower.values <= np.clip(lower_raw, 0, 1) + 1e-15)
        assert np.all(pair.upper.values >= np.clip(upper_raw, 0, 1) - 1e-15)


def test_bound_pair_inversion_sandwiches_every_inner_cdf(rng):
    for _ in range(500):
        p = 4
        inner = [np.sort(np.append(rng.random(p - 1), 1.0)) for _ in range(5)]
        lower = np.minimum.reduce(inner)
        upper = np.maximum.reduce(inner)
        pair = BoundPair(SteppedCDF(lower), SteppedCDF(upper))
        u = rng.random()
        low, high = pair.invert(u)
        for F in inner:
            assert low <= invert(SteppedCDF(F), u) <= high
