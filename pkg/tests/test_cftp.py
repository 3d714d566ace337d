import itertools

import numpy as np
import pytest

from perfmix import Dataset, DPMixtureSpec, FiniteMixtureSpec, RandomLedger
from perfmix.bounding import DPBounder, KnownBounder, TwoComponentBounder
from perfmix.cftp import (
    FORWARD_SEED_FLAG,
    _DPBounding,
    _KnownBounding,
    _TwoComponentBounding,
    forward_gibbs,
    run_cftp_dp,
    run_cftp_known,
    run_cftp_two_component,
)
from perfmix.dp import all_partitions, kernel_dp
from perfmix.errors import InvalidArgumentError, NoCoalescenceError
from perfmix.finite import kernel_finite
from perfmix.harness import SampleSet, compare_distributions, oracle_exact_posterior


def test_one_observation_one_component():
    spec = FiniteMixtureSpec(p=1, mu_bounds=[(-1, 1)], lambda_known=[1.0])
    sample = run_cftp_known(Dataset([0.2]), spec, seed=3, optimizer="exact")
    assert sample.record.epoch == 1 and sample.record.steps_to_zero == 1
    assert sample.state.z.tolist() == [1] and sample.state.pi.tolist() == [1.0]


def test_one_slot_coalesces_at_once():
    spec = DPMixtureSpec(M=1, alpha=1.0, mu_bounds=(0.0, 5.0), lambda_known=2.0)
    sample = run_cftp_dp(Dataset([1.0, 2.0, 3.0]), spec, seed=4)
    assert sample.record.epoch == 1 and sample.record.t_star == -1
    assert sample.state.k == 1


@pytest.mark.parametrize("driver", ["known", "two", "dp"])
def test_same_seed_gives_the_same_sample(driver, two_component, dp_toy):
    if driver == "dp":
        data, spec = dp_toy
        run = lambda: run_cftp_dp(data, spec, seed=11)
    else:
        data, spec = two_component
        run = (lambda: run_cftp_known(data, spec, seed=11, optimizer="exact")) if driver == "known" else (
            lambda: run_cftp_two_component(data, spec, seed=11))
    a, b = run(), run()
    assert a.state == b.state and a.record == b.record


def test_forward_completion_runs_to_time_zero(two_component, dp_toy):
    for data, spec, run in ((*two_component, run_cftp_two_component), (*dp_toy, run_cftp_dp)):
        for seed in range(30):
            sample = run(data, spec, seed=seed, trace=True)
            rec = sample.record
            assert rec.t_star < 0
            assert rec.forward_steps == rec.steps_to_zero == max(1, -rec.t_star)
            assert rec.backward_steps == 2**rec.epoch
            # the emitted state is the t = 0 image of the coalesced state, not the state at t*
            last = sample.trace["history"][-1]
            assert last[1] == rec.t_star


def test_exact_sets_never_grow_within_an_epoch(dp_toy):
    data, spec = dp_toy
    for seed in range(20):
        history = run_cftp_dp(data, spec, seed=seed, trace=True).trace["history"]
        final_epoch = history[-1][0]
        sizes = [h[3] for h in history if h[0] == final_epoch and h[2] == "set"]
        assert all(b <= a for a, b in zip(sizes, sizes[1:]))


def _check_sandwich(bounding, chains, transition, key_of, seed, epoch):
    """Every exact chain stays inside the bounding chains' state box at every time."""
    ledger = RandomLedger(seed).at_epoch(epoch)
    bounding.reset()
    keys = list(chains)
    for t in range(-(2**epoch) + 1, 1):
        _, enumerate_keys = bounding.step(ledger, t)
        keys = [key_of(transition(k, ledger, t)) for k in keys]
        box = set(enumerate_keys())
        assert all(k in box for k in keys), f"chain escaped the bounds at t={t}"


def test_two_component_bounding_chains_sandwich_every_chain(two_component):
    data, spec = two_component
    bounder = TwoComponentBounder(data, spec, "corner")
    starts = list(itertools.product((1, 2), repeat=data.n))
    step = lambda key, ledger, t: kernel_finite(np.array(key), data, spec, ledger, t)
    key_of = lambda state: tuple(state.z.tolist())
    for seed in range(40):
        _check_sandwich(_TwoComponentBounding(bounder, data.n), starts, step, key_of, seed, 5)


def test_generic_bounding_chains_sandwich_every_chain():
    data = Dataset([0.1, 1.9, 3.2])
    spec = FiniteMixtureSpec(p=3, xi=[0, 2, 3], tau=[1, 1, 1], gamma=[1, 2, 1],
                             mu_bounds=[(-1, 1), (1, 2.5), (2, 4)], lambda_known=[1.0, 2.0, 1.5])
    bounder = KnownBounder(data, spec, "exact")
    starts = list(itertools.product((1, 2, 3), repeat=data.n))
    step = lambda key, ledger, t: kernel_finite(np.array(key), data, spec, ledger, t)
    key_of = lambda state: tuple(state.z.tolist())
    for seed in range(20):
        _check_sandwich(_KnownBounding(bounder, data.n), starts, step, key_of, seed, 4)


def test_dp_bounding_chains_sandwich_every_chain(dp_toy):
    data, spec = dp_toy
    bounder = DPBounder(data, spec)
    starts = [(z, s) for z in itertools.product((1, 2), repeat=data.n) for s in all_partitions(2)]
    step = lambda key, ledger, t: kernel_dp(np.array(key[0]), np.array(key[1]), data, spec, ledger, t)
    key_of = lambda state: (tuple(state.z.tolist()), tuple(state.s.tolist()))
    for seed in range(10):
        _check_sandwich(_DPBounding(bounder), starts, step, key_of, seed, 4)


def test_dp_bounding_chains_sandwich_with_unknown_precisions():
    data = Dataset([0.3, 2.8, 3.1])
    spec = DPMixtureSpec(M=3, eta=3, zeta=2, mu0=1.5, psi=2.0, alpha_prior=(2.0, 2.0), alpha_bounds=(0.2, 4.0),
                         mu_bounds=(-1.0, 4.0), lambda_bounds=(0.3, 6.0))
    bounder = DPBounder(data, spec)
    starts = [(z, s) for z in itertools.product((1, 2, 3), repeat=data.n) for s in all_partitions(3)]
    step = lambda key, ledger, t: kernel_dp(np.array(key[0]), np.array(key[1]), data, spec, ledger, t)
    key_of = lambda state: (tuple(state.z.tolist()), tuple(state.s.tolist()))
    for seed in range(5):
        _check_sandwich(_DPBounding(bounder), starts, step, key_of, seed, 3)


def test_epoch_cap_and_mode_are_enforced(two_component):
    data, spec = two_component
    with pytest.raises(NoCoalescenceError):
        run_cftp_two_component(data, spec, seed=0, mode="bounds", epoch_cap=3)
    with pytest.raises(InvalidArgumentError):
        run_cftp_two_component(data, spec, seed=0, mode="fast")
    with pytest.raises(InvalidArgumentError):
        run_cftp_two_component(data, spec, seed=0, epoch_cap=0)
    three = FiniteMixtureSpec(p=3, mu_bounds=[(0, 1)] * 3, lambda_known=[1, 1, 1])
    with pytest.raises(InvalidArgumentError):
        run_cftp_two_component(data, three, seed=0)


@pytest.mark.parametrize("name", ["two_component", "dp_toy"])
def test_every_seeded_run_coalesces_by_epoch_14(name, request):
    data, spec = request.getfixturevalue(name)
    run = run_cftp_two_component if name == "two_component" else run_cftp_dp
    epochs = [run(data, spec, seed=seed, epoch_cap=14).record.epoch for seed in range(1000)]
    assert max(epochs) <= 14


def test_generic_driver_matches_the_exact_posterior(two_component):
    data, spec = two_component
    bounder = KnownBounder(data, spec, "exact")
    samples = [run_cftp_known(data, spec, seed=seed, bounder=bounder) for seed in range(100_000)]
    drawn = SampleSet.from_perfect(samples)
    exact = oracle_exact_posterior(data, spec)
    for name, column, ref in (("pi", 0, exact.pi[0]), ("mu", 0, exact.mu[0]), ("mu", 1, exact.mu[1])):
        tv = compare_distributions(drawn.marginal(name, column), ref, "tv", 0.02)
        assert tv.passed, f"{name}_{column + 1}: TV {tv.value:.4f}"


def test_forward_draws(dp_toy):
    data, spec = dp_toy
    sample = run_cftp_dp(data, spec, seed=5)
    draws = forward_gibbs(sample, data, spec, 50)
    assert len(draws) == 50 and forward_gibbs(sample, data, spec, 0) == []
    assert draws == forward_gibbs(sample, data, spec, 50)
    for state in draws:
        state.validate(spec)
    with pytest.raises(InvalidArgumentError):
        forward_gibbs(sample, data, spec, -1)
    flagged = type(sample)(sample.kind, sample.state, sample.record, FORWARD_SEED_FLAG)
    with pytest.raises(InvalidArgumentError):
        forward_gibbs(flagged, data, spec, 3)
