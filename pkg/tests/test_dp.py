import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from perfmix import Dataset, DPMixtureSpec, DPState, RandomLedger
from perfmix.errors import InvalidArgumentError, InvariantViolationError
from perfmix.dp import (
    StarSummary,
    _c_log_weights,
    _slot_stats,
    all_partitions,
    alpha_draw,
    aux_draw,
    bell_number,
    c_full_conditional,
    c_full_conditional_aux,
    dp_gibbs_sweep,
    draw_from_base,
    initial_dp_state,
    is_canonical,
    kernel_dp,
    partition_from_configuration,
    posterior_params,
    relabel,
    slot_loglik,
    theta_star_draw,
    z_full_conditional_dp,
)
from perfmix.cdf import SteppedCDF
from perfmix.ledger import Kind

CONJUGATE = DPMixtureSpec(M=3, eta=4.0, zeta=2.0, mu0=0.0, psi=4.0, alpha=1.5)


def dp_state(z, s, mu_star, lam_star, alpha=1.0, c=None):
    c = s if c is None else c
    return DPState(np.asarray(z), np.asarray(c), np.asarray(s), np.asarray(mu_star, float),
                   np.asarray(lam_star, float), alpha)


def sequential_labels(theta):
    """First-appearance labels built slot by slot."""
    labels = []
    for j, value in enumerate(theta):
        match = [labels[m] for m in range(j) if theta[m] == value]
        labels.append(match[0] if match else max(labels, default=0) + 1)
    return labels


def test_allocation_conditional_examples():
    data = Dataset([2.19])
    assert z_full_conditional_dp(0, dp_state([1], [1], [0.0], [1.0]), data).values.tolist() == [1.0]
    same = z_full_conditional_dp(0, dp_state([1], [1, 1, 1], [0.5], [2.0]), data)
    assert same.values == pytest.approx([1 / 3, 2 / 3, 1.0], abs=1e-15)
    cdf = z_full_conditional_dp(0, dp_state([1], [1, 2], [2.19, 2.73], [20.0, 20.0]), data)
    w = np.exp(-10.0 * (2.19 - np.array([2.19, 2.73])) ** 2)
    assert cdf[1] == pytest.approx(w[0] / w.sum(), abs=1e-14)


def test_configuration_conditional_without_data_is_the_prior_predictive():
    data = Dataset([0.5, 0.7])
    st = dp_state([2, 2], [1, 1, 2], [0.0, 1.0], [1.0, 2.0], alpha=1.5)
    pmf = c_full_conditional(0, st, data, CONJUGATE).pmf()
    assert pmf == pytest.approx(np.array([1.0, 1.0, 1.5]) / 3.5, abs=1e-14)
    assert len(pmf) == 3
    pmf2 = c_full_conditional(2, st, data, CONJUGATE).pmf()
    assert len(pmf2) == 2


def test_configuration_conditional_two_slot_hand_evaluation(dp_toy):
    data, spec = dp_toy
    free = replace(spec, mu_bounds=None)
    st = dp_state([1, 1, 2], [1, 2], [2.19, 2.73], [20.0, 20.0], alpha=1.0)
    y0 = data.y[:2]
    n, ybar = 2, y0.mean()
    ss = float(((y0 - ybar) ** 2).sum())
    lam = 20.0
    occupied = n / 2 * math.log(lam / (2 * math.pi)) - lam / 2 * (n * (2.73 - ybar) ** 2 + ss)
    denom = n * spec.psi + 1
    new = (n / 2 * math.log(lam / (2 * math.pi)) - 0.5 * math.log(denom)
           - lam / 2 * (ss + n * (ybar - spec.mu0) ** 2 / denom))
    cdf = c_full_conditional(0, st, data, free)
    assert cdf[1] == pytest.approx(1 / (1 + math.exp(new - occupied)), rel=1e-12)


def test_configuration_weights_are_scale_invariant():
    data = Dataset([0.3, -0.4, 1.1])
    st = dp_state([1, 2, 3], [1, 1, 2], [0.1, 2.3], [2.0, 3.0], alpha=1.5)
    stats_ = _slot_stats(st.z, data.y, 3)
    theta = {1: (0.1, 2.0), 2: (2.3, 3.0)}
    _, lw = _c_log_weights(0, list(st.s), theta, stats_, 0.4)
    a = SteppedCDF.from_log_weights(lw)
    b = SteppedCDF.from_log_weights(lw + math.log(2.0))
    assert np.allclose(a.values, b.values, atol=1e-15, rtol=0)


def test_auxiliary_weight_identities():
    data = Dataset([0.3, -0.4, 1.1])
    st = dp_state([2, 3, 3], [1, 1, 2], [0.1, 2.3], [2.0, 3.0], alpha=1.5)
    # slot 1 holds no data: the new-value weight is alpha whatever the candidate
    a = c_full_conditional_aux(0, st, (7.0, 0.1), data, CONJUGATE)
    assert a.pmf() == pytest.approx(np.array([1.0, 1.0, 1.5]) / 3.5, abs=1e-14)
    # candidate equal to an existing value of multiplicity one
    st2 = dp_state([1, 1, 3], [1, 2, 3], [0.1, 2.3, -1.0], [2.0, 3.0, 1.0], alpha=1.5)
    b = c_full_conditional_aux(0, st2, (2.3, 3.0), data, CONJUGATE).pmf()
    assert b[-1] / b[0] == pytest.approx(1.5, rel=1e-10)


def test_auxiliary_scheme_matches_the_conjugate_chain():
    data = Dataset([0.3, -0.4, 1.1, 2.5, 2.2])
    wide = replace(CONJUGATE, mu_bounds=(-60.0, 60.0), lambda_bounds=(1e-8, 1e4))
    sweeps = 40_000
    ledger = RandomLedger(8).at_epoch(16)
    counts = {}
    for name, spec in (("conjugate", CONJUGATE), ("auxiliary", wide)):
        current = initial_dp_state(data, spec)
        ks = np.empty(sweeps, dtype=int)
        for r, t in enumerate(range(-sweeps + 1, 1)):
            current = kernel_dp(current.z, current.s, data, spec, ledger, t)
            ks[r] = current.k
        counts[name] = np.bincount(ks - 1, minlength=3)[:3] / sweeps
    assert 0.5 * np.abs(counts["conjugate"] - counts["auxiliary"]).sum() < 0.02


def test_auxiliary_draws():
    st = dp_state([1, 2, 2], [1, 2, 2], [0.4, 1.7], [2.0, 3.0])
    ledger = RandomLedger(4)
    assert aux_draw(0, st, CONJUGATE, ledger, 0) == (0.4, 2.0)
    truncated = replace(CONJUGATE, mu_bounds=(-0.5, 0.5), lambda_bounds=(0.5, 2.0))
    for j in range(200):
        mu, lam = aux_draw(1, st, truncated, RandomLedger(j), 0)
        assert -0.5 <= mu <= 0.5 and 0.5 <= lam <= 2.0


def test_untruncated_base_precisions_have_the_prior_moments():
    ledger = RandomLedger(17)
    lam = np.array([draw_from_base(CONJUGATE, ledger.stream(0, Kind.AUX, r))[1] for r in range(100_000)])
    shape, rate = CONJUGATE.eta / 2, CONJUGATE.zeta / 2
    assert abs(lam.mean() - shape / rate) < 3 * math.sqrt(shape) / rate / math.sqrt(lam.size)
    assert lam.var() == pytest.approx(shape / rate**2, rel=0.05)


def test_distinct_value_draws():
    data = Dataset([1.0, 3.0])
    ledger = RandomLedger(6)
    # label 2 holds no data: identical to a base-measure draw from the same stream
    got = theta_star_draw(2, [1, 1], [1, 2], data, CONJUGATE, ledger, 0)
    assert got == draw_from_base(CONJUGATE, ledger.stream(0, Kind.THETA_STAR, 2))
    assert got == theta_star_draw(2, [1, 1], [1, 2], data, CONJUGATE, ledger, 0)
    _, _, mean, _ = posterior_params(1, 4.2, 0.0, replace(CONJUGATE, psi=1e12))
    assert mean == pytest.approx(4.2, abs=1e-9)


def test_relabel_examples():
    theta = np.array([1.0, 2.0])
    table = {(1, 1): (1, 1), (1, 2): (1, 2), (2, 1): (1, 1), (2, 2): (1, 2)}
    for c, s in table.items():
        assert partition_from_configuration(c) == s
        tied = np.array([1.0, 1.0]) if s == (1, 1) else theta
        got, k, star = relabel(c, tied)
        assert tuple(got.tolist()) == s and k == len(star)
    s, k, star = relabel(None, np.full(5, 0.3))
    assert s.tolist() == [1] * 5 and k == 1 and star.tolist() == [0.3]
    with pytest.raises(InvariantViolationError):
        relabel((1, 1), theta)


def test_relabel_matches_sequential_construction(rng):
    M = 6
    for _ in range(300):
        c = [int(rng.integers(1, j + 2)) if j < M - 1 else int(rng.integers(1, M + 1)) for j in range(M)]
        c = [min(v, M) for v in c]
        try:
            groups = partition_from_configuration(c)
        except InvariantViolationError:
            continue
        values = rng.normal(size=M)
        theta = np.array([values[g - 1] for g in groups])
        s, k, star = relabel(c, theta)
        assert s.tolist() == sequential_labels(theta.tolist())
        assert is_canonical(s) and s[0] == 1 and k == s.max()
        assert np.array_equal(star[s - 1], theta)


def test_relabel_depends_only_on_the_tie_pattern(rng):
    for _ in range(300):
        M = int(rng.integers(1, 9))
        base = [int(v) for v in rng.integers(0, M, size=M)]
        values = rng.normal(size=M)
        theta = np.array([values[g] for g in base])
        permutation = rng.permutation(M)
        permuted_labels = np.array([values[permutation[g]] for g in base])
        assert np.array_equal(relabel(None, theta)[0], relabel(None, permuted_labels)[0])


def test_shared_configuration_gives_shared_labels(rng):
    """Two compatible slot-value vectors under one configuration relabel identically."""
    M = 5
    for s_target in all_partitions(M)[:40]:
        for c in _configurations_reaching(s_target, M, rng):
            values_a, values_b = rng.normal(size=M), 10 + rng.normal(size=M)
            first = np.array([values_a[g - 1] for g in s_target])
            second = np.array([values_b[g - 1] for g in s_target])
            assert np.array_equal(relabel(c, first)[0], relabel(c, second)[0])


def _configurations_reaching(target, M, rng, tries=50):
    found = []
    for _ in range(tries):
        c = [int(rng.integers(1, M + 1)) for _ in range(M)]
        try:
            if partition_from_configuration(c) == tuple(target):
                found.append(c)
        except InvariantViolationError:
            pass
    return found


def test_partition_enumeration_counts():
    for M in range(1, 7):
        assert len(all_partitions(M)) == bell_number(M)
        assert all(is_canonical(s) for s in all_partitions(M))


def test_alpha_draws():
    fixed = DPMixtureSpec(M=3, alpha=0.7)
    assert alpha_draw(2, fixed, RandomLedger(1), 0) == 0.7
    galaxy10 = DPMixtureSpec(M=10, eta=4, zeta=1, mu0=20, psi=33.3, alpha_prior=(10, 0.5),
                             alpha_bounds=(0.08, 35.5))
    for seed in range(300):
        a = alpha_draw(int(seed % 10) + 1, galaxy10, RandomLedger(seed), 0)
        assert 0.08 <= a <= 35.5


def test_alpha_without_data_influence_is_the_truncated_prior():
    spec = DPMixtureSpec(M=1, alpha_prior=(3.0, 0.5), alpha_bounds=(1.0, 12.0))
    draws = np.array([alpha_draw(1, spec, RandomLedger(seed), 0) for seed in range(20_000)])
    prior = stats.gamma(3.0, scale=2.0)
    lo, hi = prior.cdf(1.0), prior.cdf(12.0)
    assert stats.kstest(draws, lambda x: (prior.cdf(x) - lo) / (hi - lo)).pvalue > 0.01


def test_alpha_draw_without_bounds_is_finite():
    spec = DPMixtureSpec(M=4, alpha_prior=(2.0, 1.0))
    assert np.isfinite(alpha_draw(2, spec, RandomLedger(3), 0))


def test_star_summary_matches_recomputation(rng):
    y = rng.normal(size=30)
    for _ in range(100):
        M = 4
        z = rng.integers(1, M + 1, size=30)
        s = np.array(all_partitions(M)[int(rng.integers(bell_number(M)))])
        summary = StarSummary.compute(z, s, y, CONJUGATE)
        labels = s[z - 1]
        for ell in range(1, s.max() + 1):
            members = y[labels == ell]
            n = members.size
            assert summary.n[ell - 1] == n
            ybar = members.mean() if n else 0.0
            ss = float(((members - ybar) ** 2).sum()) if n else 0.0
            want = posterior_params(n, ybar, ss, CONJUGATE)
            got = (summary.eta[ell - 1], summary.zeta[ell - 1], summary.mu0[ell - 1], summary.psi[ell - 1])
            assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


def test_state_validation_and_spec_checks():
    with pytest.raises(InvariantViolationError):
        dp_state([1], [1, 3], [0.0, 1.0], [1.0, 1.0]).validate()
    with pytest.raises(InvariantViolationError):
        dp_state([1], [1, 2], [0.0], [1.0]).validate()
    spec = DPMixtureSpec(M=2, mu_bounds=(0, 1), lambda_known=1.0)
    with pytest.raises(InvariantViolationError):
        dp_state([1], [1, 2], [0.5, 2.0], [1.0, 1.0]).validate(spec)
    with pytest.raises(InvalidArgumentError):
        DPMixtureSpec(M=0)
    with pytest.raises(InvalidArgumentError):
        DPMixtureSpec(M=2, mu_bounds=(0, 1))


def test_slot_likelihood_is_the_product_of_normal_densities(rng):
    y = rng.normal(size=4)
    got = slot_loglik(0.3, 2.0, 4, y.mean(), float(((y - y.mean()) ** 2).sum()))
    assert got == pytest.approx(stats.norm(0.3, 1 / math.sqrt(2.0)).logpdf(y).sum(), rel=1e-12)


def test_frozen_allocations_give_a_configuration_only_sweep(rng):
    data = Dataset(rng.normal(size=4))
    spec = DPMixtureSpec(M=4, eta=2, zeta=2, psi=3, alpha=1.0)
    current = DPState(np.arange(1, 5), np.ones(4), np.arange(1, 5), rng.normal(size=4), np.ones(4), 1.0)
    ledger = RandomLedger(2).at_epoch(5)
    for t in range(-31, 1):
        current = dp_gibbs_sweep(current, data, spec, ledger, t, freeze_z=True)
        assert current.z.tolist() == [1, 2, 3, 4]
        current.validate()


def test_transition_is_deterministic(dp_toy):
    data, spec = dp_toy
    ledger = RandomLedger(5).at_epoch(2)
    start = initial_dp_state(data, spec)
    a = kernel_dp(start.z, start.s, data, spec, ledger, -2)
    b = kernel_dp(start.z, start.s, data, spec, ledger, -2)
    assert a == b
    a.validate(spec)
