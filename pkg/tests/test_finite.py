import math

import numpy as np
import pytest
from scipy import stats

from perfmix import Dataset, FiniteMixtureSpec, FiniteMixtureState, RandomLedger
from perfmix.errors import InvalidArgumentError, InvariantViolationError
from perfmix.finite import (
    AllocationSummary,
    beta_from_exponentials,
    gibbs_sweep_finite,
    initial_state,
    lambda_conditional,
    log_component_density,
    mu_conditional,
    summary_arrays,
    z_full_conditional,
)
from perfmix.harness import oracle_exact_posterior


def test_component_density_examples():
    assert log_component_density(0.0, 0.0, 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert log_component_density(3.0, 1.0, 2.0) == log_component_density(-1.0, 1.0, 2.0)
    assert log_component_density(2.19, 2.19, 20.0) == pytest.approx(0.5 * math.log(20 / (2 * math.pi)))


def test_component_density_rejects_bad_input():
    with pytest.raises(InvalidArgumentError):
        log_component_density(np.nan, 0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        log_component_density(0.0, 0.0, 0.0)


def state(z, pi, mu, lam):
    return FiniteMixtureState(np.asarray(z), np.asarray(pi, float), np.asarray(mu, float), np.asarray(lam, float))


def test_allocation_conditional_examples():
    data = Dataset([2.19])
    one = z_full_conditional(0, state([1], [1.0], [0.0], [1.0]), data)
    assert one.values.tolist() == [1.0]
    sym = z_full_conditional(0, state([1], [0.5, 0.5], [1.0, 1.0], [2.0, 2.0]), data)
    assert sym.values == pytest.approx([0.5, 1.0], abs=1e-15)
    lam = np.array([1 / 0.9, 1 / 0.5])
    mu = np.array([2.19, 2.73])
    cdf = z_full_conditional(0, state([1], [0.8, 0.2], mu, lam), data)
    w = np.array([0.8, 0.2]) * np.sqrt(lam) * np.exp(-0.5 * lam * (2.19 - mu) ** 2)
    assert cdf[1] == pytest.approx(w[0] / w.sum(), abs=1e-14)


def test_allocation_conditional_ignores_other_allocations(rng):
    data = Dataset(rng.normal(size=5))
    a = z_full_conditional(2, state([1, 1, 1, 1, 1], [0.3, 0.7], [0, 1], [1, 2]), data)
    b = z_full_conditional(2, state([2, 2, 1, 2, 2], [0.3, 0.7], [0, 1], [1, 2]), data)
    assert a == b and a.is_valid()


def test_allocation_conditional_is_stable_for_large_precisions():
    cdf = z_full_conditional(0, state([1], [0.5, 0.5], [0.0, 10.0], [1e4, 1e4]), Dataset([9.0]))
    assert cdf.is_valid() and cdf[1] < 1e-100


def test_state_invariants_are_enforced():
    spec = FiniteMixtureSpec(p=2, mu_bounds=[(0, 1), (0, 1)], lambda_known=[1.0, 1.0])
    with pytest.raises(InvariantViolationError):
        state([1], [0.6, 0.6], [0.5, 0.5], [1, 1]).validate(spec)
    with pytest.raises(InvariantViolationError):
        state([1], [0.5, 0.5], [0.5, 1.5], [1, 1]).validate(spec)
    state([1], [0.5, 0.5], [0.5, 0.5], [1, 1]).validate(spec)


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        FiniteMixtureSpec(p=0)
    with pytest.raises(InvalidArgumentError):
        FiniteMixtureSpec(p=2, tau=[1.0, -1.0])
    with pytest.raises(InvalidArgumentError):
        FiniteMixtureSpec(p=2, mu_bounds=[(1, 0), (0, 1)], lambda_known=[1, 1])
    with pytest.raises(InvalidArgumentError):
        FiniteMixtureSpec(p=2, mu_bounds=[(0, 1), (0, 1)])


def test_incremental_summary_equals_recomputation(rng):
    y = rng.normal(size=40) * 3
    z = rng.integers(1, 4, size=40)
    summary = AllocationSummary(y, z, 3)
    for _ in range(300):
        i, label = int(rng.integers(40)), int(rng.integers(1, 4))
        summary.move(i, label)
        fresh = AllocationSummary(y, summary.z, 3)
        for got, want in zip(summary.as_tuple(), fresh.as_tuple()):
            assert np.array_equal(got, want)
    counts, means, ss = summary_arrays(y, summary.z, 3)
    assert np.array_equal(counts, summary.counts)
    assert np.allclose(means, summary.means) and np.allclose(ss, summary.ss)


def test_empty_component_conditionals_reduce_to_the_prior():
    spec = FiniteMixtureSpec(p=2, eta=3.0, zeta=2.0, xi=[1.0, -1.0], tau=[2.0, 0.5])
    counts, means, ss = np.array([0, 4]), np.array([0.0, 1.2]), np.array([0.0, 0.7])
    assert lambda_conditional(counts, means, ss, 0, spec) == (1.5, 1.0)
    assert mu_conditional(counts, means, 0, spec) == (1.0, 4.0)


def test_monotone_weight_draw_properties(rng):
    n = 5
    e = rng.exponential(size=n + 2)
    values = [beta_from_exponentials(k, n, e) for k in range(n + 1)]
    assert values[-1] == pytest.approx(e[: n + 1].sum() / e.sum()) and values[-1] < 1
    for _ in range(300):
        n = int(rng.integers(0, 21))
        e = rng.exponential(size=n + 2)
        values = [beta_from_exponentials(k, n, e) for k in range(n + 1)]
        assert all(a <= b for a, b in zip(values, values[1:]))
    with pytest.raises(InvalidArgumentError):
        beta_from_exponentials(4, 3, np.ones(5))


def test_monotone_weight_draw_has_the_beta_law(rng):
    n, n1 = 6, 2
    draws = np.array([beta_from_exponentials(n1, n, e) for e in rng.exponential(size=(100_000, n + 2))])
    assert stats.kstest(draws, stats.beta(n1 + 1, n - n1 + 1).cdf).pvalue > 0.01


def test_sweep_is_deterministic_given_the_ledger(two_component):
    data, spec = two_component
    ledger = RandomLedger(12).at_epoch(3)
    start = initial_state(data, spec)
    a = gibbs_sweep_finite(start, data, spec, ledger, -5)
    b = gibbs_sweep_finite(start, data, spec, ledger, -5)
    assert a == b
    a.validate(spec)


def test_sweeps_leave_the_exact_posterior_invariant(two_component):
    data, spec = two_component
    sweeps = 100_000
    ledger = RandomLedger(99).at_epoch(17)
    current = initial_state(data, spec)
    pi = np.empty(sweeps)
    codes = np.empty(sweeps, dtype=int)
    for r, t in enumerate(range(-sweeps + 1, 1)):
        current = gibbs_sweep_finite(current, data, spec, ledger, t)
        pi[r] = current.pi[0]
        codes[r] = int(((current.z - 1) * 2 ** np.arange(data.n)).sum())
    exact = oracle_exact_posterior(data, spec)
    # batch means for the Monte Carlo standard error of a correlated chain
    batches = pi.reshape(100, -1).mean(axis=1)
    se = batches.std(ddof=1) / math.sqrt(len(batches))
    assert abs(pi.mean() - exact.pi[0].mean()) < 3 * se
    empirical = np.bincount(codes, minlength=2 ** data.n) / sweeps
    exact_codes = ((exact.allocations - 1) * 2 ** np.arange(data.n)).sum(axis=1)
    target = np.zeros(2 ** data.n)
    target[exact_codes] = exact.weights
    assert 0.5 * np.abs(empirical - target).sum() < 0.02
